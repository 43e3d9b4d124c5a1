//! Dyadic model operators on simple functions: the martingale square
//! function, unweighted `L^p0` and weighted dyadic maximal functions, and
//! exact weak and strong `L^p(w)` norms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::characteristics::ap_constant;
use crate::dyadic::{pairwise_sum, CubeTree, DyadicCube, DyadicGrid};
use crate::error::{Error, Result};
use crate::sparse::{check_len, lp_average_tree};
use crate::weights::Weight;

/// A function constant on each finest cell of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SimpleFunction {
    grid: DyadicGrid,
    values: Vec<f64>,
}

impl SimpleFunction {
    pub fn new(grid: DyadicGrid, values: Vec<f64>) -> Result<Self> {
        check_len(grid, &values)?;
        Ok(SimpleFunction { grid, values })
    }

    pub fn constant(grid: DyadicGrid, c: f64) -> Self {
        SimpleFunction {
            grid,
            values: vec![c; grid.cells()],
        }
    }

    pub fn indicator(grid: DyadicGrid, q: DyadicCube) -> Result<Self> {
        grid.check(q)?;
        let mut values = vec![0.0; grid.cells()];
        values[q.cell_range(grid.depth())].fill(1.0);
        Ok(SimpleFunction { grid, values })
    }

    /// `1_{left half} - 1_{right half}` of `q`.
    pub fn haar(grid: DyadicGrid, q: DyadicCube) -> Result<Self> {
        let (a, b) = grid.children(q)?;
        let mut values = vec![0.0; grid.cells()];
        values[a.cell_range(grid.depth())].fill(1.0);
        values[b.cell_range(grid.depth())].fill(-1.0);
        Ok(SimpleFunction { grid, values })
    }

    pub fn grid(&self) -> DyadicGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// `∫ |f|^2 dx`.
    pub fn l2_squared(&self) -> f64 {
        let h = self.grid.cell_measure();
        pairwise_sum(&self.values.iter().map(|v| v * v * h).collect::<Vec<_>>())
    }

    /// `∫ f dx`.
    pub fn mean(&self) -> f64 {
        let h = self.grid.cell_measure();
        pairwise_sum(&self.values.iter().map(|v| v * h).collect::<Vec<_>>())
    }
}

/// Signed averages `⟨f⟩_Q` on every cube.
pub fn average_tree(f: &SimpleFunction) -> CubeTree {
    CubeTree::sums(f.grid.depth(), f.values.clone()).into_means()
}

/// `Sf(x) = (Σ_{Q ∋ x, level >= 1} |⟨f⟩_Q - ⟨f⟩_{parent(Q)}|^2)^(1/2)`.
pub fn dyadic_square_function(f: &SimpleFunction) -> SimpleFunction {
    let avg = average_tree(f);
    let depth = f.grid.depth();
    let mut acc = vec![0.0f64];
    for k in 1..=depth {
        let row = avg.level(k);
        let up = avg.level(k - 1);
        acc = (0..row.len())
            .map(|i| {
                let d = row[i] - up[i / 2];
                acc[i / 2] + d * d
            })
            .collect();
    }
    SimpleFunction {
        grid: f.grid,
        values: acc.into_iter().map(f64::sqrt).collect(),
    }
}

/// `sup_λ λ μ({|h| >= λ})^(1/p)` over the distinct values `λ` of `|h|`,
/// with `μ` given by per-cell masses.
pub fn weak_norm_with_masses(values: &[f64], masses: &[f64], p: f64) -> (f64, f64) {
    let mut order: Vec<usize> = (0..values.len()).filter(|&i| values[i] != 0.0).collect();
    order.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()).then(a.cmp(&b)));
    let mut best = (0.0, 0.0);
    let mut mass = 0.0;
    let mut i = 0;
    while i < order.len() {
        let lambda = values[order[i]].abs();
        while i < order.len() && values[order[i]].abs() == lambda {
            mass += masses[order[i]];
            i += 1;
        }
        let v = lambda * mass.powf(1.0 / p);
        if v > best.0 {
            best = (v, lambda);
        }
    }
    best
}

fn ensure_p(p: f64) -> Result<()> {
    crate::ensure_range("p", p, p > 0.0 && p.is_finite(), "(0, inf)")
}

/// Exact `‖h‖_{L^{p,∞}(w)}` by level-set enumeration.
pub fn weak_lp_norm(h: &SimpleFunction, w: &Weight, p: f64) -> Result<f64> {
    ensure_p(p)?;
    let m = w.cell_masses(h.grid.depth(), 1.0)?;
    Ok(weak_norm_with_masses(&h.values, &m, p).0)
}

/// `(Σ_c |h_c|^p w(c))^(1/p)`.
pub fn strong_lp_norm(h: &SimpleFunction, w: &Weight, p: f64) -> Result<f64> {
    ensure_p(p)?;
    let m = w.cell_masses(h.grid.depth(), 1.0)?;
    Ok(strong_norm_with_masses(&h.values, &m, p))
}

pub fn strong_norm_with_masses(values: &[f64], masses: &[f64], p: f64) -> f64 {
    let terms: Vec<f64> = values
        .iter()
        .zip(masses)
        .map(|(v, m)| v.abs().powf(p) * m)
        .collect();
    pairwise_sum(&terms).powf(1.0 / p)
}

/// Per-cell supremum of a cube tree over the cubes containing the cell,
/// restricted to cubes for which `admissible` holds (0 where none does).
pub fn maximal_from_tree<F>(tree: &CubeTree, admissible: F) -> Vec<f64>
where
    F: Fn(DyadicCube) -> bool,
{
    let depth = tree.depth();
    let root = if admissible(DyadicCube::ROOT) {
        tree.get(DyadicCube::ROOT)
    } else {
        0.0
    };
    let mut acc = vec![root];
    for k in 1..=depth {
        let row = tree.level(k);
        acc = (0..row.len())
            .map(|i| {
                let q = DyadicCube::new(k, i as u64);
                if admissible(q) {
                    acc[i / 2].max(row[i])
                } else {
                    acc[i / 2]
                }
            })
            .collect();
    }
    acc
}

/// Marks a cube collection for use with [`maximal_from_tree`].
pub fn cube_mask(grid: DyadicGrid, cubes: &[DyadicCube]) -> Vec<Vec<bool>> {
    let mut mask: Vec<Vec<bool>> = (0..=grid.depth()).map(|k| vec![false; 1 << k]).collect();
    for q in cubes {
        mask[q.level as usize][q.index as usize] = true;
    }
    mask
}

/// `M_{p0} f(x) = sup_{Q ∋ x} ⟨|f|⟩_{p0,Q}`, optionally over a cube
/// collection only.
pub fn maximal_p0(
    f: &SimpleFunction,
    p0: f64,
    restriction: Option<&[DyadicCube]>,
) -> Result<SimpleFunction> {
    crate::ensure_range("p0", p0, p0 >= 1.0 && p0.is_finite(), "[1, inf)")?;
    let tree = lp_average_tree(f.grid, &f.values, p0, None)?;
    let values = match restriction {
        None => maximal_from_tree(&tree, |_| true),
        Some(cubes) => {
            for &q in cubes {
                f.grid.check(q)?;
            }
            let mask = cube_mask(f.grid, cubes);
            maximal_from_tree(&tree, |q| mask[q.level as usize][q.index as usize])
        }
    };
    Ok(SimpleFunction {
        grid: f.grid,
        values,
    })
}

/// `M_w g(x) = sup_{Q ∋ x} w(Q)^(-1) ∫_Q |g| w`.
pub fn maximal_weighted(g: &SimpleFunction, w: &Weight) -> Result<SimpleFunction> {
    let depth = g.grid.depth();
    let m = w.cell_masses(depth, 1.0)?;
    let gm: Vec<f64> = g.values.iter().zip(&m).map(|(v, m)| v.abs() * m).collect();
    let num = CubeTree::sums(depth, gm);
    let den = CubeTree::sums(depth, m);
    let ratio = num.map(|q, v| v / den.get(q));
    Ok(SimpleFunction {
        grid: g.grid,
        values: maximal_from_tree(&ratio, |_| true),
    })
}

/// A labelled test function.
#[derive(Debug, Clone)]
pub struct TestFunction {
    pub id: String,
    pub f: SimpleFunction,
}

/// Finest level of Haar atoms and cube indicators in the default corpus.
pub const CORPUS_MAX_LEVEL: u32 = 6;
/// Number of seeded random functions in the default corpus.
pub const CORPUS_RANDOM: usize = 64;

/// Haar atoms and cube indicators up to level 6, then 64 seeded random
/// functions with values uniform in `[-1, 1)`.
pub fn default_corpus(grid: DyadicGrid, seed: u64) -> Vec<TestFunction> {
    let depth = grid.depth();
    let mut out = Vec::new();
    for level in 0..=CORPUS_MAX_LEVEL.min(depth.saturating_sub(1)) {
        for index in 0..1u64 << level {
            let q = DyadicCube::new(level, index);
            out.push(TestFunction {
                id: format!("haar-{level}-{index}"),
                f: SimpleFunction::haar(grid, q).expect("level below depth"),
            });
        }
    }
    for level in 0..=CORPUS_MAX_LEVEL.min(depth) {
        for index in 0..1u64 << level {
            let q = DyadicCube::new(level, index);
            out.push(TestFunction {
                id: format!("ind-{level}-{index}"),
                f: SimpleFunction::indicator(grid, q).expect("cube in grid"),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in 0..CORPUS_RANDOM {
        let values = (0..grid.cells()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        out.push(TestFunction {
            id: format!("rand-{k}"),
            f: SimpleFunction { grid, values },
        });
    }
    out
}

/// Per-function row of an operator-norm estimate.
#[derive(Debug, Clone, Serialize)]
pub struct NormRow {
    pub id: String,
    pub strong: f64,
    pub weak: f64,
    pub ratio: f64,
}

/// `max_f ‖Sf‖_{L^{p,∞}(w)} / ‖f‖_{L^p(w)}` over the corpus, with the
/// per-function rows. Functions of zero norm are skipped.
pub fn empirical_weak_operator_norm(
    w: &Weight,
    p: f64,
    corpus: &[TestFunction],
) -> Result<(f64, Vec<NormRow>)> {
    ensure_p(p)?;
    if corpus.is_empty() {
        return Err(Error::OutOfRange {
            what: "corpus size",
            value: 0.0,
            range: "[1, inf)",
        });
    }
    let depth = corpus[0].f.grid.depth();
    let m = w.cell_masses(depth, 1.0)?;
    let rows: Vec<NormRow> = corpus
        .par_iter()
        .map(|t| {
            let strong = strong_norm_with_masses(&t.f.values, &m, p);
            let sf = dyadic_square_function(&t.f);
            let weak = weak_norm_with_masses(&sf.values, &m, p).0;
            let ratio = if strong > 0.0 { weak / strong } else { 0.0 };
            NormRow {
                id: t.id.clone(),
                strong,
                weak,
                ratio,
            }
        })
        .collect();
    let best = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok((best, rows))
}

/// `max_f ‖M_{p0} f‖_{L^{2,∞}(w)} / ([w]_{A_{2/p0}}^{1/2} ‖f‖_{L^2(w)})`.
pub fn maximal_weak_constant(
    w: &Weight,
    p0: f64,
    grid: DyadicGrid,
    corpus: &[TestFunction],
) -> Result<f64> {
    let a = ap_constant(w, 2.0 / p0, grid)?.value;
    let m = w.cell_masses(grid.depth(), 1.0)?;
    let ratios: Vec<f64> = corpus
        .par_iter()
        .map(|t| -> Result<f64> {
            let strong = strong_norm_with_masses(&t.f.values, &m, 2.0);
            if strong == 0.0 {
                return Ok(0.0);
            }
            let mf = maximal_p0(&t.f, p0, None)?;
            Ok(weak_norm_with_masses(&mf.values, &m, 2.0).0 / (a.sqrt() * strong))
        })
        .collect::<Result<_>>()?;
    Ok(ratios.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid(depth: u32) -> DyadicGrid {
        DyadicGrid::new(depth).unwrap()
    }

    fn random(grid: DyadicGrid, rng: &mut ChaCha8Rng) -> SimpleFunction {
        let v = (0..grid.cells()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        SimpleFunction::new(grid, v).unwrap()
    }

    fn random_weight(depth: u32, rng: &mut ChaCha8Rng) -> Weight {
        Weight::tabulated((0..1 << depth).map(|_| rng.gen_range(-2.0f64..2.0).exp()).collect()).unwrap()
    }

    #[test]
    fn square_function_examples() {
        let g = grid(5);
        let s = dyadic_square_function(&SimpleFunction::constant(g, 3.0));
        assert!(s.values().iter().all(|&v| v == 0.0));
        let s = dyadic_square_function(&SimpleFunction::haar(g, DyadicCube::ROOT).unwrap());
        assert!(s.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn square_function_matches_direct_sum() {
        let g = grid(6);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = random(g, &mut rng);
        let s = dyadic_square_function(&f);
        for cell in [0usize, 17, 63] {
            let mut acc = 0.0;
            for k in 1..=6 {
                let q = DyadicCube::new(6, cell as u64).ancestor(k);
                let p = q.parent().unwrap();
                let mean = |c: DyadicCube| {
                    let r = c.cell_range(6);
                    let n = r.len() as f64;
                    f.values()[r].iter().sum::<f64>() / n
                };
                acc += (mean(q) - mean(p)).powi(2);
            }
            assert_relative_eq!(s.values()[cell], acc.sqrt(), max_relative = 1e-12);
        }
    }

    #[test]
    fn plancherel() {
        let g = grid(12);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let f = random(g, &mut rng);
            let lhs = dyadic_square_function(&f).l2_squared() + f.mean().powi(2);
            assert_relative_eq!(lhs, f.l2_squared(), max_relative = 1e-10);
        }
    }

    #[test]
    fn weak_and_strong_examples() {
        let g = grid(3);
        let u = Weight::unit();
        let one = SimpleFunction::constant(g, 1.0);
        assert_eq!(weak_lp_norm(&one, &u, 2.0).unwrap(), 1.0);
        assert_eq!(strong_lp_norm(&one, &u, 2.0).unwrap(), 1.0);
        assert_eq!(weak_lp_norm(&SimpleFunction::constant(g, 0.0), &u, 2.0).unwrap(), 0.0);
        let h = SimpleFunction::new(g, vec![1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]).unwrap();
        assert_relative_eq!(weak_lp_norm(&h, &u, 2.0).unwrap(), 2f64.sqrt(), max_relative = 1e-15);
        let h = SimpleFunction::new(g, vec![2.0, 2.0, 2.0, 2.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_relative_eq!(strong_lp_norm(&h, &u, 2.0).unwrap(), 2f64.sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn weak_below_strong_random() {
        let g = grid(6);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..1000 {
            let h = random(g, &mut rng);
            let w = random_weight(4, &mut rng);
            let p = rng.gen_range(0.5..4.0);
            let weak = weak_lp_norm(&h, &w, p).unwrap();
            let strong = strong_lp_norm(&h, &w, p).unwrap();
            assert!(weak <= strong * (1.0 + 1e-12), "{weak} {strong}");
        }
    }

    #[test]
    fn weak_norm_matches_lambda_scan() {
        // Oracle: sample λ densely just below each value and take the sup of
        // λ μ(|h| > λ)^{1/p}.
        let g = grid(4);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let u = Weight::unit();
        for _ in 0..50 {
            let h = random(g, &mut rng);
            let exact = weak_lp_norm(&h, &u, 2.0).unwrap();
            let mut best = 0.0f64;
            for &v in h.values() {
                let lambda = v.abs() * (1.0 - 1e-12);
                let count = h.values().iter().filter(|x| x.abs() > lambda).count();
                best = best.max(lambda * (count as f64 / 16.0).sqrt());
            }
            assert_relative_eq!(exact, best, max_relative = 1e-10);
        }
    }

    #[test]
    fn maximal_examples() {
        let g = grid(2);
        let m = maximal_p0(&SimpleFunction::constant(g, 1.0), 1.0, None).unwrap();
        assert!(m.values().iter().all(|&v| v == 1.0));
        let f = SimpleFunction::new(g, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let m = maximal_p0(&f, 1.0, None).unwrap();
        assert_eq!(m.values(), &[1.0, 0.5, 0.25, 0.25]);
        let m = maximal_p0(&f, 1.0, Some(&[])).unwrap();
        assert!(m.values().iter().all(|&v| v == 0.0));
        let m = maximal_p0(&f, 1.0, Some(&[DyadicCube::new(1, 0)])).unwrap();
        assert_eq!(m.values(), &[0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn maximal_p0_dominates_and_is_monotone() {
        let g = grid(6);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let f = random(g, &mut rng);
        let m1 = maximal_p0(&f, 1.0, None).unwrap();
        let m2 = maximal_p0(&f, 1.5, None).unwrap();
        for i in 0..g.cells() {
            assert!(m1.values()[i] >= f.values()[i].abs() * (1.0 - 1e-12));
            assert!(m2.values()[i] >= m1.values()[i] * (1.0 - 1e-12));
        }
    }

    #[test]
    fn weighted_maximal_examples() {
        let g = grid(5);
        let w = Weight::power(0.3).unwrap();
        let m = maximal_weighted(&SimpleFunction::constant(g, 1.0), &w).unwrap();
        assert!(m.values().iter().all(|&v| (v - 1.0).abs() < 1e-14));
        let q = DyadicCube::new(2, 1);
        let m = maximal_weighted(&SimpleFunction::indicator(g, q).unwrap(), &w).unwrap();
        for c in q.cell_range(5) {
            assert!(m.values()[c] >= 1.0 - 1e-14);
        }
    }

    #[test]
    fn weighted_maximal_weak_11() {
        let g = grid(6);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..1000 {
            let gf = random(g, &mut rng);
            let w = random_weight(6, &mut rng);
            let mg = maximal_weighted(&gf, &w).unwrap();
            let lhs = weak_lp_norm(&mg, &w, 1.0).unwrap();
            let rhs = strong_lp_norm(&gf, &w, 1.0).unwrap();
            assert!(lhs <= rhs * (1.0 + 1e-12), "{lhs} {rhs}");
        }
    }

    #[test]
    fn corpus_shape_and_unit_weight_norm() {
        let g = grid(8);
        let corpus = default_corpus(g, 0);
        assert_eq!(corpus.len(), 127 + 127 + 64);
        let (best, rows) = empirical_weak_operator_norm(&Weight::unit(), 2.0, &corpus).unwrap();
        assert!(best <= 1.0 + 1e-12, "{best}");
        assert_eq!(rows.len(), corpus.len());
        let consts = vec![TestFunction {
            id: "c".into(),
            f: SimpleFunction::constant(g, 2.0),
        }];
        assert_eq!(empirical_weak_operator_norm(&Weight::unit(), 2.0, &consts).unwrap().0, 0.0);
        assert!(empirical_weak_operator_norm(&Weight::unit(), 2.0, &[]).is_err());
    }

    #[test]
    fn maximal_constant_bounded_on_power_sweep() {
        let g = grid(10);
        let corpus = default_corpus(g, 0);
        for alpha in [-0.375, -0.25, -0.125, 0.0, 0.125, 0.25, 0.375] {
            let w = Weight::power(alpha).unwrap();
            for p0 in [1.0, 1.25, 1.5] {
                // x^alpha is in A_r only for alpha < r - 1.
                if alpha >= 2.0 / p0 - 1.0 {
                    assert!(matches!(
                        maximal_weak_constant(&w, p0, g, &corpus),
                        Err(Error::DivergentMoment { .. })
                    ));
                    continue;
                }
                let c = maximal_weak_constant(&w, p0, g, &corpus).unwrap();
                assert!(c > 0.0 && c <= 8.0, "alpha {alpha} p0 {p0}: {c}");
            }
        }
    }
}
