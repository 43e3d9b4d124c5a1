//! Seeded weight corpus and the canonical traced instance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dyadic::{CellSet, DyadicGrid};
use crate::error::Result;
use crate::sparse::{build_sparse_cz, ExponentProfile, SparseFamily};
use crate::tracer::{trace_proof, PigeonholeTrace, ProofContext};
use crate::weights::Weight;

pub const CORPUS_SEED: u64 = 0x5eed;
pub const POWER_EXPONENTS: [f64; 6] = [-0.375, -0.25, -0.125, 0.125, 0.25, 0.375];
pub const TABULATED_COUNT: usize = 20;
pub const TABULATED_DEPTH: u32 = 6;
/// Tabulated values are `exp(U(-SPREAD, SPREAD))`.
pub const TABULATED_SPREAD: f64 = 1.5;
/// Stopping ratio of the Calderón–Zygmund family in the canonical instance.
pub const CZ_RATIO: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightEntry {
    pub id: String,
    pub weight: Weight,
}

/// `count` weights with `2^depth` values `exp(U(-spread, spread))`.
pub fn random_tabulated(depth: u32, count: usize, spread: f64, seed: u64) -> Vec<Weight> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let values = (0..1usize << depth).map(|_| rng.gen_range(-spread..spread).exp()).collect();
            Weight::tabulated(values).expect("positive values")
        })
        .collect()
}

/// Unit weight, the power sweep and [`TABULATED_COUNT`] seeded tabulated
/// weights of depth [`TABULATED_DEPTH`], usable on any grid of at least
/// that depth.
pub fn default_weight_corpus(seed: u64) -> Vec<WeightEntry> {
    let mut out = vec![WeightEntry {
        id: "unit".into(),
        weight: Weight::unit(),
    }];
    out.extend(POWER_EXPONENTS.iter().map(|&a| WeightEntry {
        id: format!("power{a}"),
        weight: Weight::power(a).expect("admissible exponent"),
    }));
    out.extend(
        random_tabulated(TABULATED_DEPTH, TABULATED_COUNT, TABULATED_SPREAD, seed)
            .into_iter()
            .enumerate()
            .map(|(k, weight)| WeightEntry {
                id: format!("tab{k}"),
                weight,
            }),
    );
    out
}

/// `f = 1 + x` at cell midpoints.
pub fn canonical_f(grid: DyadicGrid) -> Vec<f64> {
    let n = grid.cells() as f64;
    (0..grid.cells()).map(|i| 1.0 + (i as f64 + 0.5) / n).collect()
}

/// `G = [0, 3/4)`.
pub fn canonical_g(grid: DyadicGrid) -> CellSet {
    let n = grid.cells();
    CellSet::from_ranges(grid, &[(0, 3 * n / 4)]).expect("valid range")
}

/// Context, Calderón–Zygmund family of `fσ` and test set of the canonical
/// instance.
pub fn canonical_instance(
    w: &Weight,
    profile: ExponentProfile,
    grid: DyadicGrid,
) -> Result<(ProofContext, SparseFamily, CellSet)> {
    let ctx = ProofContext::new(&canonical_f(grid), w, profile, grid)?;
    let family = build_sparse_cz(&ctx.f_sigma_cells(), grid, CZ_RATIO)?;
    Ok((ctx, family, canonical_g(grid)))
}

pub fn trace_canonical(
    w: &Weight,
    profile: ExponentProfile,
    grid: DyadicGrid,
    epsilon: Option<f64>,
) -> Result<PigeonholeTrace> {
    let (ctx, family, g) = canonical_instance(w, profile, grid)?;
    trace_proof(&ctx, &family, &g, epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_shape_and_determinism() {
        let a = default_weight_corpus(CORPUS_SEED);
        assert_eq!(a.len(), 1 + POWER_EXPONENTS.len() + TABULATED_COUNT);
        assert_eq!(a, default_weight_corpus(CORPUS_SEED));
        assert_ne!(a, default_weight_corpus(CORPUS_SEED + 1));
        for e in &a[7..] {
            let Weight::Tabulated { depth, values } = &e.weight else {
                panic!("{}", e.id)
            };
            assert_eq!(*depth, TABULATED_DEPTH);
            assert!(values.iter().all(|v| v.ln().abs() < TABULATED_SPREAD));
        }
    }

    #[test]
    fn canonical_trace_unit() {
        let g = DyadicGrid::new(8).unwrap();
        let p = ExponentProfile::new(1.0, 4.0).unwrap();
        let t = trace_canonical(&Weight::unit(), p, g, None).unwrap();
        assert!(t.passes(1e-12));
        assert!(t.main.c0.is_finite() && t.main.c0 > 0.0);
    }
}
