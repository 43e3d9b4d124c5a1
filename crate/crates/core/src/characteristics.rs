//! Dyadic Muckenhoupt, reverse Hölder and Fujii–Wilson characteristics.
//!
//! Every supremum here runs over the dyadic cubes of the grid only, so the
//! values are *dyadic* characteristics at resolution `L`. They are
//! nondecreasing in `L`. The `A_∞` characteristic is the Fujii–Wilson
//! quantity `sup_Q w(Q)^-1 ∫_Q M_Q(w 1_Q)` where `M_Q` is the dyadic maximal
//! function over subcubes of `Q` down to the finest level, integrated
//! exactly cell by cell.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::dyadic::{CubeTree, DyadicCube, DyadicGrid};
use crate::error::Result;
use crate::weights::{conjugate, Weight};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Characteristic {
    pub value: f64,
    pub argmax: DyadicCube,
}

impl Characteristic {
    fn from_tree(tree: &CubeTree) -> Self {
        let (value, argmax) = tree.argmax();
        Characteristic { value, argmax }
    }
}

/// Per-cube `A_p` products `(⨍_Q w)(⨍_Q w^(1-p'))^(p-1)`.
pub fn ap_tree(w: &Weight, p: f64, grid: DyadicGrid) -> Result<CubeTree> {
    let avg = w.moment_tree(grid, 1.0)?;
    let dual = w.moment_tree(grid, 1.0 - conjugate(p))?;
    Ok(avg.map(|q, a| a * dual.get(q).powf(p - 1.0)))
}

/// `[w]_{A_p}` over dyadic cubes.
pub fn ap_constant(w: &Weight, p: f64, grid: DyadicGrid) -> Result<Characteristic> {
    crate::ensure_range("p", p, p > 1.0 && p.is_finite(), "(1, inf)")?;
    Ok(Characteristic::from_tree(&ap_tree(w, p, grid)?))
}

/// Per-cube reverse Hölder ratios `(⨍_Q w^q)^(1/q) / ⨍_Q w`.
pub fn rh_tree(w: &Weight, q: f64, grid: DyadicGrid) -> Result<CubeTree> {
    let avg = w.moment_tree(grid, 1.0)?;
    let high = w.moment_tree(grid, q)?;
    Ok(high.map(|c, m| m.powf(1.0 / q) / avg.get(c)))
}

/// `[w]_{RH_q}` over dyadic cubes.
pub fn rh_constant(w: &Weight, q: f64, grid: DyadicGrid) -> Result<Characteristic> {
    crate::ensure_range("q", q, q > 1.0 && q.is_finite(), "(1, inf)")?;
    Ok(Characteristic::from_tree(&rh_tree(w, q, grid)?))
}

/// Per-cube Fujii–Wilson ratios `w(Q)^-1 ∫_Q M_Q(w 1_Q)`.
pub fn fw_tree(w: &Weight, grid: DyadicGrid) -> Result<CubeTree> {
    let avg = w.moment_tree(grid, 1.0)?;
    let depth = grid.depth();
    Ok(CubeTree::from_fn(depth, |q| {
        let cells = 1u64 << (depth - q.level);
        local_maximal_sum(&avg, q, 0.0, depth) / (cells as f64 * avg.get(q))
    }))
}

/// `Σ_{c ⊆ q} max(running, max_{c ⊆ R ⊆ q} ⨍_R w)` over finest cells `c`.
fn local_maximal_sum(avg: &CubeTree, q: DyadicCube, running: f64, depth: u32) -> f64 {
    let m = running.max(avg.get(q));
    if q.level == depth {
        return m;
    }
    let (a, b) = q.split();
    local_maximal_sum(avg, a, m, depth) + local_maximal_sum(avg, b, m, depth)
}

/// `[w]_{A_∞}` in the Fujii–Wilson form.
pub fn a_infty_fw(w: &Weight, grid: DyadicGrid) -> Result<Characteristic> {
    Ok(Characteristic::from_tree(&fw_tree(w, grid)?))
}

#[derive(Debug, Clone, Serialize)]
pub struct CharacteristicReport {
    #[serde(rename = "L")]
    pub depth: u32,
    pub ap: BTreeMap<String, f64>,
    pub rh: BTreeMap<String, f64>,
    pub a_infty: f64,
    pub argmax: BTreeMap<String, DyadicCube>,
}

/// Computes `[w]_{A_p}` for each `p`, `[w]_{RH_q}` for each `q`, and `[w]_{A_∞}`.
pub fn characteristic_report(
    w: &Weight,
    grid: DyadicGrid,
    ps: &[f64],
    qs: &[f64],
) -> Result<CharacteristicReport> {
    let mut ap = BTreeMap::new();
    let mut rh = BTreeMap::new();
    let mut argmax = BTreeMap::new();
    for &p in ps {
        let c = ap_constant(w, p, grid)?;
        ap.insert(p.to_string(), c.value);
        argmax.insert(format!("A_{p}"), c.argmax);
    }
    for &q in qs {
        let c = rh_constant(w, q, grid)?;
        rh.insert(q.to_string(), c.value);
        argmax.insert(format!("RH_{q}"), c.argmax);
    }
    let fw = a_infty_fw(w, grid)?;
    argmax.insert("A_infty".into(), fw.argmax);
    Ok(CharacteristicReport {
        depth: grid.depth(),
        ap,
        rh,
        a_infty: fw.value,
        argmax,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DualityReport {
    /// `[w^(1-p')]_{A_p'}`.
    pub dual_characteristic: f64,
    /// `[w]_{A_p}^(p'-1)`.
    pub powered_characteristic: f64,
    pub relative_error: f64,
}

/// Both sides of `[w^(1-p')]_{A_p'} = [w]_{A_p}^(p'-1)`, computed independently.
pub fn check_duality(w: &Weight, p: f64, grid: DyadicGrid) -> Result<DualityReport> {
    let pp = conjugate(p);
    let lhs = ap_constant(&w.dual(p)?, pp, grid)?.value;
    let rhs = ap_constant(w, p, grid)?.value.powf(pp - 1.0);
    Ok(DualityReport {
        dual_characteristic: lhs,
        powered_characteristic: rhs,
        relative_error: (lhs - rhs).abs() / rhs,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct FactorizationReport {
    /// `[w]_{A_q}^s`.
    pub ap_pow: f64,
    /// `[w]_{RH_s}^s`.
    pub rh_pow: f64,
    /// `[w^s]_{A_{s(q-1)+1}}`.
    pub power_characteristic: f64,
    pub lower_violation: bool,
    pub upper_violation: bool,
}

/// Relative slack used when flagging violations of identities that hold
/// exactly per cube.
pub const EXACT_SLACK: f64 = 1e-12;

/// `max{[w]_{A_q}^s, [w]_{RH_s}^s} <= [w^s]_{A_{s(q-1)+1}} <= [w]_{A_q}^s [w]_{RH_s}^s`.
pub fn check_factorization(
    w: &Weight,
    q: f64,
    s: f64,
    grid: DyadicGrid,
) -> Result<FactorizationReport> {
    crate::ensure_range("s", s, s > 1.0 && s.is_finite(), "(1, inf)")?;
    let ap_pow = ap_constant(w, q, grid)?.value.powf(s);
    let rh_pow = rh_constant(w, s, grid)?.value.powf(s);
    let power_characteristic = ap_constant(&w.pow(s)?, s * (q - 1.0) + 1.0, grid)?.value;
    let tol = 1.0 + EXACT_SLACK;
    Ok(FactorizationReport {
        ap_pow,
        rh_pow,
        power_characteristic,
        lower_violation: ap_pow.max(rh_pow) > power_characteristic * tol,
        upper_violation: power_characteristic > ap_pow * rh_pow * tol,
    })
}

/// Ordering violations beyond this factor are flagged.
pub const KS_SLACK: f64 = 4.0;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct KsReport {
    /// `[w^q]_{A_∞}^(1/q) / [w]_{A_∞}`.
    pub lower: f64,
    /// `[w]_{RH_q}`.
    pub middle: f64,
    /// `[w]_{A_∞}^(1/q)`.
    pub upper: f64,
    pub lower_violation: bool,
    pub upper_violation: bool,
}

/// The chain `[w^q]_{A_∞}^(1/q) / [w]_{A_∞} <= [w]_{RH_q} <= [w]_{A_∞}^(1/q)`
/// with dyadic characteristics, flagged only beyond a factor [`KS_SLACK`].
pub fn check_ks_relation(w: &Weight, q0_star: f64, grid: DyadicGrid) -> Result<KsReport> {
    let a = a_infty_fw(w, grid)?.value;
    let a_pow = a_infty_fw(&w.pow(q0_star)?, grid)?.value;
    let middle = rh_constant(w, q0_star, grid)?.value;
    let lower = a_pow.powf(1.0 / q0_star) / a;
    let upper = a.powf(1.0 / q0_star);
    Ok(KsReport {
        lower,
        middle,
        upper,
        lower_violation: lower > KS_SLACK * middle,
        upper_violation: middle > KS_SLACK * upper,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(depth: u32) -> DyadicGrid {
        DyadicGrid::new(depth).unwrap()
    }

    fn random_weight(seed: u64, depth: u32) -> Weight {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Weight::tabulated((0..1 << depth).map(|_| rng.gen_range(-2.0f64..2.0).exp()).collect()).unwrap()
    }

    /// Brute force over every dyadic cube with direct cell-range sums.
    fn brute_ap(values: &[f64], p: f64) -> f64 {
        let depth = values.len().trailing_zeros();
        let pp = p / (p - 1.0);
        let mut best: f64 = 0.0;
        for q in grid(depth).cubes() {
            let r = q.cell_range(depth);
            let n = r.len() as f64;
            let a: f64 = values[r.clone()].iter().sum::<f64>() / n;
            let b: f64 = values[r].iter().map(|v| v.powf(1.0 - pp)).sum::<f64>() / n;
            best = best.max(a * b.powf(p - 1.0));
        }
        best
    }

    #[test]
    fn unit_weight_characteristics_are_one() {
        let g = grid(8);
        let w = Weight::unit();
        assert_eq!(ap_constant(&w, 2.0, g).unwrap().value, 1.0);
        assert_eq!(rh_constant(&w, 2.0, g).unwrap().value, 1.0);
        assert_eq!(a_infty_fw(&w, g).unwrap().value, 1.0);
        let t = Weight::tabulated(vec![1.0; 4]).unwrap();
        assert_eq!(a_infty_fw(&t, grid(2)).unwrap().value, 1.0);
    }

    #[test]
    fn power_ap_matches_closed_form() {
        let g = grid(16);
        for i in -7..=7 {
            let alpha = i as f64 / 8.0;
            let w = Weight::power(alpha).unwrap();
            let c = ap_constant(&w, 2.0, g).unwrap();
            assert_relative_eq!(c.value, 1.0 / (1.0 - alpha * alpha), max_relative = 1e-9);
        }
        let c = ap_constant(&Weight::power(0.5).unwrap(), 2.0, g).unwrap();
        assert_relative_eq!(c.value, 4.0 / 3.0, max_relative = 1e-12);
        // Every cube [0, 2^-k) attains the supremum up to rounding.
        assert_eq!(c.argmax.index, 0);
    }

    #[test]
    fn power_rh_matches_closed_form() {
        let g = grid(16);
        let c = rh_constant(&Weight::power(0.5).unwrap(), 2.0, g).unwrap();
        assert_relative_eq!(c.value, 1.5 / 2f64.sqrt(), max_relative = 1e-12);
        let c = rh_constant(&Weight::power(-0.25).unwrap(), 2.0, g).unwrap();
        assert_relative_eq!(c.value, 0.75 / 0.5f64.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn tabulated_ap_matches_brute_force() {
        let w = random_weight(11, 7);
        let Weight::Tabulated { values, .. } = &w else { unreachable!() };
        for &p in &[1.5, 2.0, 3.0] {
            let c = ap_constant(&w, p, grid(7)).unwrap();
            assert_relative_eq!(c.value, brute_ap(values, p), max_relative = 1e-12);
        }
    }

    #[test]
    fn fw_small_example_by_hand() {
        // w = (1, 3) at L = 1: root average 2; M on cell 0 is max(2, 1) = 2,
        // on cell 1 max(2, 3) = 3, so ∫M = (2 + 3)/2 = 2.5 and w(Q) = 2.
        let w = Weight::tabulated(vec![1.0, 3.0]).unwrap();
        let c = a_infty_fw(&w, grid(1)).unwrap();
        assert_relative_eq!(c.value, 1.25, max_relative = 1e-15);
        assert_eq!(c.argmax, DyadicCube::ROOT);
    }

    #[test]
    fn fw_bounded_by_ap_for_power_weight() {
        let g = grid(14);
        let w = Weight::power(0.5).unwrap();
        let fw = a_infty_fw(&w, g).unwrap().value;
        let a2 = ap_constant(&w, 2.0, g).unwrap().value;
        assert!(fw >= 1.0 && fw <= a2, "fw {fw} a2 {a2}");
    }

    #[test]
    fn monotone_refinement() {
        let w = Weight::power(-0.3).unwrap();
        let mut last = [0.0; 3];
        for depth in 2..12 {
            let g = grid(depth);
            let now = [
                ap_constant(&w, 2.0, g).unwrap().value,
                rh_constant(&w, 2.0, g).unwrap().value,
                a_infty_fw(&w, g).unwrap().value,
            ];
            for (a, b) in now.iter().zip(&last) {
                assert!(a >= b);
            }
            last = now;
        }
    }

    #[test]
    fn scale_invariance() {
        let w = random_weight(5, 6);
        let g = grid(6);
        let scaled = |c: f64| match &w {
            Weight::Tabulated { values, .. } => Weight::tabulated(values.iter().map(|v| v * c).collect()).unwrap(),
            _ => unreachable!(),
        };
        let base = characteristic_report(&w, g, &[1.5, 3.0], &[2.0]).unwrap();
        // A_∞ only involves averages of w itself, so a power-of-two factor is exact.
        let exact = characteristic_report(&scaled(8.0), g, &[1.5, 3.0], &[2.0]).unwrap();
        assert_eq!(base.a_infty, exact.a_infty);
        for c in [3.7, 0.01, 8.0] {
            let other = characteristic_report(&scaled(c), g, &[1.5, 3.0], &[2.0]).unwrap();
            for (k, v) in &base.ap {
                assert_relative_eq!(*v, other.ap[k], max_relative = 1e-12);
            }
            assert_relative_eq!(base.rh["2"], other.rh["2"], max_relative = 1e-12);
            assert_relative_eq!(base.a_infty, other.a_infty, max_relative = 1e-12);
        }
    }

    #[test]
    fn duality_examples() {
        let r = check_duality(&Weight::unit(), 3.0, grid(6)).unwrap();
        assert_eq!((r.dual_characteristic, r.powered_characteristic), (1.0, 1.0));
        let r = check_duality(&Weight::power(0.5).unwrap(), 2.0, grid(14)).unwrap();
        assert_relative_eq!(r.dual_characteristic, 4.0 / 3.0, max_relative = 1e-12);
        assert_relative_eq!(r.powered_characteristic, 4.0 / 3.0, max_relative = 1e-12);
        let r = check_duality(&random_weight(1, 8), 1.5, grid(8)).unwrap();
        assert!(r.relative_error < 1e-9);
    }

    #[test]
    fn factorization_examples() {
        let r = check_factorization(&Weight::unit(), 2.0, 2.0, grid(6)).unwrap();
        assert_eq!((r.ap_pow, r.rh_pow, r.power_characteristic), (1.0, 1.0, 1.0));
        assert!(!r.lower_violation && !r.upper_violation);
        for (w, q) in [(Weight::power(0.25).unwrap(), 2.0), (Weight::power(-0.125).unwrap(), 3.0)] {
            let r = check_factorization(&w, q, 2.0, grid(14)).unwrap();
            assert!(!r.lower_violation && !r.upper_violation, "{r:?}");
            assert!(r.ap_pow.max(r.rh_pow) <= r.power_characteristic * (1.0 + EXACT_SLACK));
        }
    }

    #[test]
    fn ks_examples() {
        let r = check_ks_relation(&Weight::unit(), 2.0, grid(6)).unwrap();
        assert_eq!((r.lower, r.middle, r.upper), (1.0, 1.0, 1.0));
        for alpha in [0.5, -0.25] {
            let r = check_ks_relation(&Weight::power(alpha).unwrap(), 2.0, grid(12)).unwrap();
            assert!(!r.lower_violation && !r.upper_violation, "{r:?}");
        }
    }

    #[test]
    fn divergent_dual_is_reported() {
        assert!(ap_constant(&Weight::power(1.0).unwrap(), 2.0, grid(4)).is_err());
        assert!(rh_constant(&Weight::power(-0.6).unwrap(), 2.0, grid(4)).is_err());
    }
}
