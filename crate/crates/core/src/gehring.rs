//! Quantitative Gehring lemma: the sharp reverse Hölder self-improvement
//! `⨍_Q w^(q+ε) <= 2 [w]_{RH_q}^(q+ε) (⨍_Q w)^(q+ε)` for
//! `0 < ε <= q / (4 [w^q]_{A_∞} - 1)`, the subset comparison that follows
//! from it, and an empirical search for the largest admissible `ε`.
//!
//! The dimensional constant `2^(d+1)` is 4 on the line. All characteristics
//! are dyadic and global over the grid; each inequality is then evaluated
//! cube by cube with averages intrinsic to that cube.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::characteristics::{a_infty_fw, rh_constant};
use crate::dyadic::{pairwise_sum, CellSet, CubeTree, DyadicCube, DyadicGrid};
use crate::error::{Error, Result};
use crate::weights::Weight;
use crate::InequalityCheck;

/// `2^(d+1)` for `d = 1`.
pub const TAU: f64 = 4.0;

/// `θ = (q + ε - 1) / (q - 1)`.
pub fn theta(q0_star: f64, epsilon: f64) -> f64 {
    (q0_star + epsilon - 1.0) / (q0_star - 1.0)
}

/// Hölder conjugate of `θ`, i.e. `(q + ε - 1) / ε`.
pub fn theta_conj(q0_star: f64, epsilon: f64) -> f64 {
    (q0_star + epsilon - 1.0) / epsilon
}

/// `ε / (q (q + ε - 1))`, which equals `1 / (θ' q)`.
pub fn gamma(q0_star: f64, epsilon: f64) -> f64 {
    epsilon / (q0_star * (q0_star + epsilon - 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GehringProfile {
    pub q0_star: f64,
    pub epsilon: f64,
    pub theta: f64,
    pub theta_conj: f64,
    pub epsilon_max: f64,
}

impl GehringProfile {
    pub fn new(q0_star: f64, epsilon: f64, epsilon_max: f64) -> Result<Self> {
        crate::ensure_range("q0*", q0_star, q0_star > 1.0 && q0_star.is_finite(), "(1, inf)")?;
        if !(epsilon > 0.0 && epsilon <= epsilon_max) {
            return Err(Error::EpsilonOutOfRange {
                epsilon,
                max: epsilon_max,
            });
        }
        Ok(GehringProfile {
            q0_star,
            epsilon,
            theta: theta(q0_star, epsilon),
            theta_conj: theta_conj(q0_star, epsilon),
            epsilon_max,
        })
    }
}

/// `q / (4 [w^q]_{A_∞} - 1)`.
pub fn epsilon_max_formula(q0_star: f64, a_infty_pow: f64) -> f64 {
    q0_star / (TAU * a_infty_pow - 1.0)
}

/// Upper end of the admissible `ε` range for `w` at grid resolution.
pub fn epsilon_range(w: &Weight, q0_star: f64, grid: DyadicGrid) -> Result<f64> {
    let a = a_infty_fw(&w.pow(q0_star)?, grid)?.value;
    Ok(epsilon_max_formula(q0_star, a))
}

/// Precomputed characteristics and cell data for the Gehring checks on
/// one weight.
#[derive(Debug, Clone)]
pub struct SharpReverseHolder {
    weight: Weight,
    grid: DyadicGrid,
    q0_star: f64,
    rh: f64,
    a_infty_pow: f64,
    epsilon_max: f64,
    averages: CubeTree,
    cell_mass: Vec<f64>,
    cell_mass_pow: Vec<f64>,
}

impl SharpReverseHolder {
    pub fn new(w: &Weight, q0_star: f64, grid: DyadicGrid) -> Result<Self> {
        let rh = rh_constant(w, q0_star, grid)?.value;
        let a_infty_pow = a_infty_fw(&w.pow(q0_star)?, grid)?.value;
        Ok(SharpReverseHolder {
            weight: w.clone(),
            grid,
            q0_star,
            rh,
            a_infty_pow,
            epsilon_max: epsilon_max_formula(q0_star, a_infty_pow),
            averages: w.moment_tree(grid, 1.0)?,
            cell_mass: w.cell_masses(grid.depth(), 1.0)?,
            cell_mass_pow: w.cell_masses(grid.depth(), q0_star)?,
        })
    }

    pub fn rh(&self) -> f64 {
        self.rh
    }

    pub fn a_infty_pow(&self) -> f64 {
        self.a_infty_pow
    }

    pub fn epsilon_max(&self) -> f64 {
        self.epsilon_max
    }

    pub fn profile(&self, epsilon: f64) -> Result<GehringProfile> {
        GehringProfile::new(self.q0_star, epsilon, self.epsilon_max)
    }

    /// `ε_max j / n` for `j = 1..=n`.
    pub fn epsilon_grid(&self, n: usize) -> Vec<f64> {
        (1..=n)
            .map(|j| {
                if j == n {
                    self.epsilon_max
                } else {
                    self.epsilon_max * j as f64 / n as f64
                }
            })
            .collect()
    }

    fn sharp_rh_check(&self, epsilon: f64, q: DyadicCube, high: f64) -> InequalityCheck {
        let e = self.q0_star + epsilon;
        let rhs = 2.0 * self.rh.powf(e) * self.averages.get(q).powf(e);
        InequalityCheck::new(high, rhs)
    }

    /// `⨍_Q w^(q+ε)` against `2 [w]_{RH_q}^(q+ε) (⨍_Q w)^(q+ε)`.
    pub fn verify_sharp_rh(&self, epsilon: f64, q: DyadicCube) -> Result<InequalityCheck> {
        self.profile(epsilon)?;
        self.grid.check(q)?;
        let high = self.weight.moment_mean(q, self.q0_star + epsilon)?;
        Ok(self.sharp_rh_check(epsilon, q, high))
    }

    /// The sharp reverse Hölder check on every cube of the grid.
    pub fn scan_sharp_rh(&self, epsilon: f64) -> Result<Vec<(DyadicCube, InequalityCheck)>> {
        self.profile(epsilon)?;
        let high = self.weight.moment_tree(self.grid, self.q0_star + epsilon)?;
        Ok(self
            .grid
            .cubes()
            .map(|q| (q, self.sharp_rh_check(epsilon, q, high.get(q))))
            .collect())
    }

    fn masked_sum(values: &[f64], q: DyadicCube, depth: u32, e: &CellSet) -> f64 {
        let r = q.cell_range(depth);
        let masked: Vec<f64> = r.clone().map(|c| if e.contains(c) { values[c] } else { 0.0 }).collect();
        pairwise_sum(&masked)
    }

    /// `w^q(E)/w^q(Q)` against `2^(1/θ) [w]_{RH_q}^((q+ε)/θ) (w(E)/w(Q))^(1/θ')`.
    pub fn verify_subset_bound(
        &self,
        epsilon: f64,
        q: DyadicCube,
        e: &CellSet,
    ) -> Result<InequalityCheck> {
        let prof = self.profile(epsilon)?;
        self.grid.check(q)?;
        if !e.within(q) {
            return Err(Error::NotContained(q));
        }
        let depth = self.grid.depth();
        let whole = CellSet::from_cube(self.grid, q);
        let lhs = Self::masked_sum(&self.cell_mass_pow, q, depth, e)
            / Self::masked_sum(&self.cell_mass_pow, q, depth, &whole);
        let frac = Self::masked_sum(&self.cell_mass, q, depth, e)
            / Self::masked_sum(&self.cell_mass, q, depth, &whole);
        let rhs = 2f64.powf(1.0 / prof.theta)
            * self.rh.powf((self.q0_star + epsilon) / prof.theta)
            * frac.powf(1.0 / prof.theta_conj);
        Ok(InequalityCheck::new(lhs, rhs))
    }
}

impl SharpReverseHolder {
    /// [`Self::verify_subset_bound`] on `count` seeded random pairs: a cube
    /// `Q` of uniform level and position, and `E ⊆ Q` keeping each cell with
    /// a probability drawn uniformly per sample.
    pub fn random_subset_checks(
        &self,
        epsilon: f64,
        count: usize,
        seed: u64,
    ) -> Result<Vec<(DyadicCube, InequalityCheck)>> {
        let depth = self.grid.depth();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let level = rng.gen_range(0..=depth);
                let q = DyadicCube::new(level, rng.gen_range(0..1u64 << level));
                let density: f64 = rng.gen();
                let mut e = CellSet::empty(self.grid);
                for c in q.cell_range(depth) {
                    if rng.gen::<f64>() < density {
                        e.insert(c);
                    }
                }
                Ok((q, self.verify_subset_bound(epsilon, q, &e)?))
            })
            .collect()
    }
}

/// Largest `ε` found by [`max_epsilon_empirical`] and what it compares to.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EmpiricalEpsilon {
    pub p: f64,
    pub factor: f64,
    pub epsilon: f64,
    /// The search hit its upper end without failing.
    pub capped: bool,
    pub cap: f64,
    pub rh: f64,
    /// `1 / [w]_{RH_p}^p`, the scale of the conjectured range.
    pub conjectured_scale: f64,
    /// `ε [w]_{RH_p}^p`, the constant implied if `ε` followed that scale.
    pub implied_constant: f64,
    /// `p / (4 [w^p]_{A_∞} - 1)`.
    pub proven_range: f64,
}

/// Upper end of the `ε` search when no moment diverges.
pub const EPSILON_SEARCH_CAP: f64 = 64.0;
const SEARCH_RELATIVE_PRECISION: f64 = 1e-4;

/// Binary search for the largest `ε` with
/// `⨍_Q w^(p+ε) <= factor [w]_{RH_p}^(p+ε) (⨍_Q w)^(p+ε)` on every dyadic
/// cube of the grid. The search domain stops short of the exponent at which
/// a power weight's moment diverges.
pub fn max_epsilon_empirical(
    w: &Weight,
    p: f64,
    grid: DyadicGrid,
    factor: f64,
) -> Result<EmpiricalEpsilon> {
    crate::ensure_range("factor", factor, factor >= 1.0, "[1, inf)")?;
    let rh = rh_constant(w, p, grid)?.value;
    let averages = w.moment_tree(grid, 1.0)?;
    let cap = match *w {
        Weight::Power { alpha } if alpha < 0.0 => {
            ((-1.0 / alpha - p) * (1.0 - 1e-9)).min(EPSILON_SEARCH_CAP)
        }
        _ => EPSILON_SEARCH_CAP,
    };
    let holds = |eps: f64| -> Result<bool> {
        let e = p + eps;
        let high = w.moment_tree(grid, e)?;
        let scale = factor * rh.powf(e);
        Ok(grid
            .cubes()
            .all(|q| high.get(q) <= scale * averages.get(q).powf(e)))
    };
    let (epsilon, capped) = if holds(cap)? {
        (cap, true)
    } else {
        let (mut lo, mut hi) = (0.0f64, cap);
        for _ in 0..200 {
            if lo > 0.0 && hi - lo <= SEARCH_RELATIVE_PRECISION * hi {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if holds(mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (lo, false)
    };
    let proven_range = epsilon_range(w, p, grid)?;
    let rh_p = rh.powf(p);
    Ok(EmpiricalEpsilon {
        p,
        factor,
        epsilon,
        capped,
        cap,
        rh,
        conjectured_scale: 1.0 / rh_p,
        implied_constant: epsilon * rh_p,
        proven_range,
    })
}
