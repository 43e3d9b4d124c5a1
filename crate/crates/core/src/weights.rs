//! Positive weights on `[0, 1)` with exact `L^t` cube averages.
//!
//! Two representations are supported. A tabulated weight is piecewise
//! constant on the finest cells of some depth. A power weight `x^alpha` keeps
//! every moment analytic: `⨍_Q x^(alpha t)` is evaluated from the
//! antiderivative, never by sampling, because characteristic suprema of
//! power weights are attained on cubes touching the singularity at 0.

use crate::dyadic::{exp2i, pairwise_sum, CellSet, CubeTree, DyadicCube, DyadicGrid};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Weight {
    /// Piecewise constant on the `2^depth` finest cells.
    Tabulated { depth: u32, values: Vec<f64> },
    /// `w(x) = x^alpha`.
    Power { alpha: f64 },
}

impl Weight {
    /// `w ≡ 1`, represented as `x^0` so it is exact on every grid.
    pub fn unit() -> Self {
        Weight::Power { alpha: 0.0 }
    }

    pub fn power(alpha: f64) -> Result<Self> {
        if !alpha.is_finite() || alpha <= -1.0 {
            return Err(Error::DivergentMoment { alpha, t: 1.0 });
        }
        Ok(Weight::Power { alpha })
    }

    pub fn tabulated(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::Parse(format!(
                "tabulated weight needs 2^L values with L >= 1, got {n}"
            )));
        }
        if let Some((cell, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::NonPositiveWeight { cell, value });
        }
        Ok(Weight::Tabulated {
            depth: n.trailing_zeros(),
            values,
        })
    }

    /// Parses the weight file format: one strictly positive decimal per
    /// line, exactly `2^L` lines. Blank lines and `#` comments are ignored.
    pub fn from_text(text: &str, expected_depth: Option<u32>) -> Result<Self> {
        let values = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .enumerate()
            .map(|(i, l)| {
                l.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(depth) = expected_depth {
            if values.len() != 1usize << depth {
                return Err(Error::WrongLength {
                    expected: 1 << depth,
                    actual: values.len(),
                });
            }
        }
        Weight::tabulated(values)
    }

    pub fn to_text(&self, depth: u32) -> Result<String> {
        let mut out = String::new();
        for v in self.cell_means(depth, 1.0)? {
            out.push_str(&format!("{v}\n"));
        }
        Ok(out)
    }

    pub fn is_power(&self) -> bool {
        matches!(self, Weight::Power { .. })
    }

    /// Finest depth at which the weight is exactly representable, if any.
    pub fn native_depth(&self) -> Option<u32> {
        match self {
            Weight::Tabulated { depth, .. } => Some(*depth),
            Weight::Power { .. } => None,
        }
    }

    /// Rejects `t = 0` and, for power weights, `alpha t <= -1`.
    pub fn check_moment(&self, t: f64) -> Result<()> {
        if t == 0.0 || !t.is_finite() {
            return Err(Error::ZeroExponent);
        }
        if let Weight::Power { alpha } = *self {
            if alpha * t <= -1.0 {
                return Err(Error::DivergentMoment { alpha, t });
            }
        }
        Ok(())
    }

    fn check_grid(&self, depth: u32) -> Result<()> {
        match self {
            Weight::Tabulated { depth: d, .. } if *d > depth => Err(Error::DepthMismatch {
                weight: *d,
                grid: depth,
            }),
            _ => Ok(()),
        }
    }

    /// `⨍_Q w^t`.
    pub fn moment_mean(&self, q: DyadicCube, t: f64) -> Result<f64> {
        self.check_moment(t)?;
        match self {
            Weight::Power { alpha } => Ok(power_cube_mean(alpha * t, q)),
            Weight::Tabulated { depth, values } => {
                if q.level > *depth {
                    let cell = q.ancestor(*depth).index as usize;
                    return Ok(values[cell].powf(t));
                }
                let r = q.cell_range(*depth);
                let n = r.len();
                let powered: Vec<f64> = values[r].iter().map(|v| v.powf(t)).collect();
                Ok(pairwise_sum(&powered) * exp2i(-(n.trailing_zeros() as i32)))
            }
        }
    }

    /// `⨍_Q w`.
    pub fn average(&self, q: DyadicCube) -> Result<f64> {
        self.moment_mean(q, 1.0)
    }

    /// `(⨍_Q w^t)^(1/t)` for `t > 0`.
    pub fn lp_average(&self, q: DyadicCube, t: f64) -> Result<f64> {
        if t <= 0.0 {
            return Err(Error::OutOfRange {
                what: "moment exponent",
                value: t,
                range: "(0, inf)",
            });
        }
        Ok(self.moment_mean(q, t)?.powf(1.0 / t))
    }

    /// Pointwise `w^s`.
    pub fn pow(&self, s: f64) -> Result<Weight> {
        match self {
            Weight::Power { alpha } => Weight::power(alpha * s),
            Weight::Tabulated { values, .. } => {
                Weight::tabulated(values.iter().map(|v| v.powf(s)).collect())
            }
        }
    }

    /// The dual weight `w^(1 - p')`, with `p' = p / (p - 1)`.
    pub fn dual(&self, p: f64) -> Result<Weight> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(Error::OutOfRange {
                what: "p",
                value: p,
                range: "(1, inf)",
            });
        }
        if p == 2.0 {
            return self.pow(-1.0);
        }
        self.pow(1.0 - conjugate(p))
    }

    /// Average of `w^t` over each finest cell of a grid of the given depth.
    pub fn cell_means(&self, depth: u32, t: f64) -> Result<Vec<f64>> {
        self.check_moment(t)?;
        self.check_grid(depth)?;
        let n = 1usize << depth;
        match self {
            Weight::Power { alpha } => Ok((0..n)
                .map(|i| power_cube_mean(alpha * t, DyadicCube::new(depth, i as u64)))
                .collect()),
            Weight::Tabulated { depth: d, values } => {
                let rep = 1usize << (depth - d);
                Ok((0..n).map(|i| values[i / rep].powf(t)).collect())
            }
        }
    }

    /// `∫_c w^t` for each finest cell `c`.
    pub fn cell_masses(&self, depth: u32, t: f64) -> Result<Vec<f64>> {
        let h = exp2i(-(depth as i32));
        Ok(self.cell_means(depth, t)?.into_iter().map(|m| m * h).collect())
    }

    /// `⨍_Q w^t` for every cube of the grid.
    pub fn moment_tree(&self, grid: DyadicGrid, t: f64) -> Result<CubeTree> {
        self.check_moment(t)?;
        self.check_grid(grid.depth())?;
        match self {
            Weight::Power { alpha } => {
                let e = alpha * t;
                Ok(CubeTree::from_fn(grid.depth(), |q| power_cube_mean(e, q)))
            }
            Weight::Tabulated { .. } => {
                let leaves = self.cell_means(grid.depth(), t)?;
                Ok(CubeTree::sums(grid.depth(), leaves).into_means())
            }
        }
    }

    /// `w(E) = ∫_E w`.
    pub fn measure(&self, e: &CellSet) -> Result<f64> {
        let masses = self.cell_masses(e.grid().depth(), 1.0)?;
        let masked: Vec<f64> = masses
            .iter()
            .enumerate()
            .map(|(i, &m)| if e.contains(i) { m } else { 0.0 })
            .collect();
        Ok(pairwise_sum(&masked))
    }

    /// Tabulates the weight by its exact cell averages at `depth`.
    pub fn tabulate(&self, depth: u32) -> Result<Weight> {
        Weight::tabulated(self.cell_means(depth, 1.0)?)
    }
}

/// Hölder conjugate `p / (p - 1)`.
pub fn conjugate(p: f64) -> f64 {
    p / (p - 1.0)
}

/// `⨍_Q x^e` for `Q = [i h, (i+1) h)`, `h = 2^-k`, assuming `e > -1`.
///
/// Equals `h^e ((i+1)^s - i^s) / s` with `s = e + 1`; the difference is
/// formed as `i^s expm1(s ln1p(1/i))` to avoid cancellation on cubes far
/// from the origin.
fn power_cube_mean(e: f64, q: DyadicCube) -> f64 {
    if e == 0.0 {
        return 1.0;
    }
    let s = e + 1.0;
    let i = q.index as f64;
    let diff = if q.index == 0 {
        1.0
    } else {
        i.powf(s) * (s * (1.0 / i).ln_1p()).exp_m1()
    };
    (-(q.level as f64) * e).exp2() * diff / s
}
