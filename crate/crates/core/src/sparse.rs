//! Sparse families of dyadic cubes and the quadratic sparse form
//! `Σ_Q ⟨f⟩_{p0,Q}^2 ⟨g⟩_{q0*,Q} |Q|`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize, Serializer};

use crate::dyadic::{exp2i, pairwise_sum, CellSet, CubeTree, DyadicCube, DyadicGrid};
use crate::error::{Error, Result};
use crate::weights::{conjugate, Weight};

/// Restricted-range exponents `p0 < 2 < q0` and the target exponent `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentProfile {
    pub p0: f64,
    #[serde(serialize_with = "serialize_extended")]
    pub q0: f64,
    pub p: f64,
}

/// Writes `inf` as the string `"inf"` so JSON stays valid.
pub(crate) fn serialize_extended<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
    } else {
        s.serialize_f64(*v)
    }
}

impl ExponentProfile {
    pub fn new(p0: f64, q0: f64) -> Result<Self> {
        Self::with_target(p0, q0, 2.0)
    }

    pub fn with_target(p0: f64, q0: f64, p: f64) -> Result<Self> {
        crate::ensure_range("p0", p0, (1.0..2.0).contains(&p0), "[1, 2)")?;
        crate::ensure_range("q0", q0, q0 > 2.0, "(2, inf]")?;
        crate::ensure_range("p", p, p > p0 && p < q0, "(p0, q0)")?;
        Ok(ExponentProfile { p0, q0, p })
    }

    /// `(q0/2)'`, equal to 1 when `q0 = ∞`.
    pub fn q0_star(&self) -> f64 {
        if self.q0.is_infinite() {
            1.0
        } else {
            conjugate(self.q0 / 2.0)
        }
    }

    /// `p0 / (2 - p0)`.
    pub fn phi_p0(&self) -> f64 {
        self.p0 / (2.0 - self.p0)
    }

    /// The Muckenhoupt index `2/p0` of the good-set estimate.
    pub fn ap_index(&self) -> f64 {
        2.0 / self.p0
    }
}

/// `(⨍_Q |v|^t w^t)^(1/t)` for every cube, with `v` constant on the finest
/// cells. Without a weight this is the plain `L^t` average of `v`.
pub fn lp_average_tree(
    grid: DyadicGrid,
    values: &[f64],
    t: f64,
    weight: Option<&Weight>,
) -> Result<CubeTree> {
    check_len(grid, values)?;
    let depth = grid.depth();
    let leaves: Vec<f64> = match weight {
        Some(w) => {
            let m = w.cell_means(depth, t)?;
            values.iter().zip(m).map(|(v, m)| v.abs().powf(t) * m).collect()
        }
        None => values.iter().map(|v| v.abs().powf(t)).collect(),
    };
    let inv = 1.0 / t;
    Ok(CubeTree::sums(depth, leaves)
        .into_means()
        .map(|_, m| m.powf(inv)))
}

pub(crate) fn check_len(grid: DyadicGrid, values: &[f64]) -> Result<()> {
    if values.len() != grid.cells() {
        return Err(Error::WrongLength {
            expected: grid.cells(),
            actual: values.len(),
        });
    }
    Ok(())
}

/// A collection of cubes, each with a witness set `E_Q ⊆ Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFamily {
    grid: DyadicGrid,
    cubes: Vec<DyadicCube>,
    witnesses: Vec<CellSet>,
}

/// Outcome of [`verify_sparsity`]; the first violation found, in family
/// order, is reported.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum SparsityVerdict {
    Pass,
    NotContained { cube: DyadicCube },
    TooSmall { cube: DyadicCube, witness: usize, total: usize },
    Overlap { first: DyadicCube, second: DyadicCube, cell: usize },
}

impl SparsityVerdict {
    pub fn passes(&self) -> bool {
        matches!(self, SparsityVerdict::Pass)
    }
}

#[derive(Serialize, Deserialize)]
struct FamilyEntry {
    level: u32,
    index: u64,
    witness: Vec<(usize, usize)>,
}

impl SparseFamily {
    /// Assembles a family without checking sparsity.
    pub fn new(grid: DyadicGrid, entries: Vec<(DyadicCube, CellSet)>) -> Result<Self> {
        let mut cubes = Vec::with_capacity(entries.len());
        let mut witnesses = Vec::with_capacity(entries.len());
        for (q, e) in entries {
            grid.check(q)?;
            if e.grid() != grid {
                return Err(Error::DepthMismatch {
                    weight: e.grid().depth(),
                    grid: grid.depth(),
                });
            }
            cubes.push(q);
            witnesses.push(e);
        }
        Ok(SparseFamily {
            grid,
            cubes,
            witnesses,
        })
    }

    /// Cubes with empty witnesses, for evaluating forms over arbitrary
    /// collections such as the full tree.
    pub fn from_cubes(grid: DyadicGrid, cubes: Vec<DyadicCube>) -> Result<Self> {
        let e = CellSet::empty(grid);
        Self::new(grid, cubes.into_iter().map(|q| (q, e.clone())).collect())
    }

    pub fn grid(&self) -> DyadicGrid {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    pub fn cubes(&self) -> &[DyadicCube] {
        &self.cubes
    }

    pub fn witnesses(&self) -> &[CellSet] {
        &self.witnesses
    }

    pub fn iter(&self) -> impl Iterator<Item = (DyadicCube, &CellSet)> {
        self.cubes.iter().copied().zip(self.witnesses.iter())
    }

    pub fn to_json(&self) -> String {
        let entries: Vec<FamilyEntry> = self
            .iter()
            .map(|(q, e)| FamilyEntry {
                level: q.level,
                index: q.index,
                witness: e.ranges(),
            })
            .collect();
        serde_json::to_string_pretty(&entries).expect("family serializes")
    }

    pub fn from_json(text: &str, grid: DyadicGrid) -> Result<Self> {
        let entries: Vec<FamilyEntry> =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let mut out = Vec::with_capacity(entries.len());
        for e in entries {
            let q = DyadicCube::new(e.level, e.index);
            grid.check(q)?;
            out.push((q, CellSet::from_ranges(grid, &e.witness)?));
        }
        Self::new(grid, out)
    }
}

/// Checks `E_Q ⊆ Q`, `|E_Q| > |Q|/2` and pairwise disjointness, all in
/// exact cell counts.
pub fn verify_sparsity(s: &SparseFamily) -> SparsityVerdict {
    let depth = s.grid.depth();
    let mut owner: Vec<Option<usize>> = vec![None; s.grid.cells()];
    for (k, (q, e)) in s.iter().enumerate() {
        if !e.within(q) {
            return SparsityVerdict::NotContained { cube: q };
        }
        let total = q.cell_range(depth).len();
        let witness = e.count();
        if 2 * witness <= total {
            return SparsityVerdict::TooSmall {
                cube: q,
                witness,
                total,
            };
        }
        for c in e.iter() {
            if let Some(j) = owner[c] {
                return SparsityVerdict::Overlap {
                    first: s.cubes[j],
                    second: q,
                    cell: c,
                };
            }
            owner[c] = Some(k);
        }
    }
    SparsityVerdict::Pass
}

fn sorted(mut entries: Vec<(DyadicCube, CellSet)>) -> Vec<(DyadicCube, CellSet)> {
    entries.sort_by_key(|(q, _)| *q);
    entries
}

/// Random sparse family. Each cube of level `<= max_level` is a candidate
/// with probability `density`. Candidates are processed from the finest
/// level up: a candidate is kept if more than half of its cells are still
/// unclaimed, and then claims the smallest such majority. Finally every kept
/// cube with no kept ancestor absorbs the rest of its unclaimed cells.
pub fn build_sparse_random(
    grid: DyadicGrid,
    max_level: u32,
    density: f64,
    seed: u64,
) -> Result<SparseFamily> {
    crate::ensure_range("density", density, density > 0.0 && density <= 1.0, "(0, 1]")?;
    if max_level > grid.depth() {
        return Err(Error::LevelOverflow {
            level: max_level,
            depth: grid.depth(),
        });
    }
    let depth = grid.depth();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut candidates = Vec::new();
    for level in 0..=max_level {
        for index in 0..1u64 << level {
            if rng.gen::<f64>() < density {
                candidates.push(DyadicCube::new(level, index));
            }
        }
    }
    let mut claimed = CellSet::empty(grid);
    let mut kept: Vec<(DyadicCube, CellSet)> = Vec::new();
    for &q in candidates.iter().rev() {
        let range = q.cell_range(depth);
        let total = range.len();
        let free = total - claimed.count_in(q);
        if 2 * free <= total {
            continue;
        }
        let need = total / 2 + 1;
        let mut e = CellSet::empty(grid);
        let picked: Vec<usize> = range.filter(|&c| !claimed.contains(c)).take(need).collect();
        for c in picked {
            e.insert(c);
            claimed.insert(c);
        }
        kept.push((q, e));
    }
    let tops: Vec<usize> = (0..kept.len())
        .filter(|&i| !kept.iter().any(|(p, _)| p.strictly_contains(&kept[i].0)))
        .collect();
    for i in tops {
        let q = kept[i].0;
        for c in q.cell_range(depth) {
            if !claimed.contains(c) {
                kept[i].1.insert(c);
                claimed.insert(c);
            }
        }
    }
    SparseFamily::new(grid, sorted(kept))
}

/// Calderón–Zygmund stopping family of a nonnegative `f`. Starting from the
/// root, the stopping children of a stopping cube `P` are the maximal dyadic
/// subcubes with `⟨f⟩ > ratio ⟨f⟩_P`. The witness of `P` is `P` minus its
/// stopping children; the result is verified before it is returned.
pub fn build_sparse_cz(f: &[f64], grid: DyadicGrid, ratio: f64) -> Result<SparseFamily> {
    check_len(grid, f)?;
    crate::ensure_range("ratio", ratio, ratio > 1.0, "(1, inf)")?;
    if let Some(&v) = f.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::OutOfRange {
            what: "f",
            value: v,
            range: "[0, inf)",
        });
    }
    let depth = grid.depth();
    let avg = CubeTree::sums(depth, f.to_vec()).into_means();
    if avg.get(DyadicCube::ROOT) == 0.0 {
        return Err(Error::ZeroFunction);
    }
    let mut entries = Vec::new();
    let mut queue = vec![DyadicCube::ROOT];
    while let Some(p) = queue.pop() {
        let threshold = ratio * avg.get(p);
        let mut witness = CellSet::from_cube(grid, p);
        let mut stack = Vec::new();
        if p.level < depth {
            let (a, b) = p.split();
            stack.extend([b, a]);
        }
        while let Some(q) = stack.pop() {
            if avg.get(q) > threshold {
                witness.remove_range(q.cell_range(depth));
                queue.push(q);
            } else if q.level < depth {
                let (a, b) = q.split();
                stack.extend([b, a]);
            }
        }
        let total = p.cell_range(depth).len();
        let count = witness.count();
        if 2 * count <= total {
            return Err(Error::SparsityViolation {
                cube: p,
                witness: count,
                total,
            });
        }
        entries.push((p, witness));
    }
    SparseFamily::new(grid, sorted(entries))
}

/// `Σ_{Q} ⟨|f|⟩_{p0,Q}^2 ⟨|g|⟩_{q0*,Q} |Q|` over the given cubes. With a
/// weight, `g` is replaced by `g w`.
pub fn sparse_form(
    f: &[f64],
    g: &[f64],
    profile: &ExponentProfile,
    cubes: &[DyadicCube],
    weight: Option<&Weight>,
) -> Result<f64> {
    let n = f.len();
    if !n.is_power_of_two() || n < 2 {
        return Err(Error::WrongLength {
            expected: n.next_power_of_two().max(2),
            actual: n,
        });
    }
    let grid = DyadicGrid::new(n.trailing_zeros())?;
    check_len(grid, g)?;
    let fa = lp_average_tree(grid, f, profile.p0, None)?;
    let ga = lp_average_tree(grid, g, profile.q0_star(), weight)?;
    sparse_form_trees(&fa, &ga, grid, cubes)
}

/// The sparse form from precomputed average trees.
pub fn sparse_form_trees(
    f_avg: &CubeTree,
    g_avg: &CubeTree,
    grid: DyadicGrid,
    cubes: &[DyadicCube],
) -> Result<f64> {
    let mut terms = Vec::with_capacity(cubes.len());
    for &q in cubes {
        grid.check(q)?;
        let a = f_avg.get(q);
        terms.push(a * a * g_avg.get(q) * exp2i(-(q.level as i32)));
    }
    Ok(pairwise_sum(&terms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig, Strategy};

    fn grid(depth: u32) -> DyadicGrid {
        DyadicGrid::new(depth).unwrap()
    }

    fn p14() -> ExponentProfile {
        ExponentProfile::new(1.0, 4.0).unwrap()
    }

    #[test]
    fn profile_derived_values() {
        let p = p14();
        assert_eq!(p.q0_star(), 2.0);
        assert_eq!(p.phi_p0(), 1.0);
        let p = ExponentProfile::new(1.5, f64::INFINITY).unwrap();
        assert_eq!(p.q0_star(), 1.0);
        assert_eq!(p.phi_p0(), 3.0);
        assert!(ExponentProfile::new(2.0, 4.0).is_err());
        assert!(ExponentProfile::new(1.0, 2.0).is_err());
        assert!(ExponentProfile::new(0.5, 4.0).is_err());
        let json = serde_json::to_string(&ExponentProfile::new(1.0, f64::INFINITY).unwrap()).unwrap();
        assert!(json.contains("\"inf\""));
    }

    #[test]
    fn random_family_examples() {
        let g = grid(6);
        let s = build_sparse_random(g, 0, 1.0, 1).unwrap();
        assert_eq!(s.cubes(), &[DyadicCube::ROOT]);
        assert_eq!(s.witnesses()[0], CellSet::full(g));

        let a = build_sparse_random(grid(10), 10, 0.5, 7).unwrap();
        let b = build_sparse_random(grid(10), 10, 0.5, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.len() > 10);
        assert_eq!(verify_sparsity(&a), SparsityVerdict::Pass);
    }

    #[test]
    fn cz_family_examples() {
        let g = grid(3);
        let s = build_sparse_cz(&[1.0; 8], g, 2.0).unwrap();
        assert_eq!(s.cubes(), &[DyadicCube::ROOT]);

        let mut f = vec![0.0; 8];
        f[0] = 1.0;
        let s = build_sparse_cz(&f, g, 2.0).unwrap();
        // Averages along the chain are 1/8, 1/4, 1/2, 1; a child must
        // strictly exceed twice its stopping parent.
        assert_eq!(s.cubes(), &[DyadicCube::ROOT, DyadicCube::new(2, 0)]);
        assert_eq!(s.witnesses()[0].count(), 6);
        assert_eq!(s.witnesses()[1].count(), 2);

        assert_eq!(build_sparse_cz(&[0.0; 8], g, 2.0), Err(Error::ZeroFunction));
        assert!(matches!(
            build_sparse_cz(&f, g, 1.0),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn cz_family_random_functions_verify() {
        let g = grid(10);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let f: Vec<f64> = (0..g.cells()).map(|_| rng.gen::<f64>().powi(6)).collect();
            let s = build_sparse_cz(&f, g, 2.0).unwrap();
            assert!(verify_sparsity(&s).passes());
        }
    }

    #[test]
    fn verifier_cases() {
        let g = grid(3);
        let root = DyadicCube::ROOT;
        let s = SparseFamily::new(g, vec![(root, CellSet::full(g))]).unwrap();
        assert!(verify_sparsity(&s).passes());

        let q = DyadicCube::new(1, 0);
        let s = SparseFamily::new(
            g,
            vec![
                (root, CellSet::from_ranges(g, &[(0, 1), (3, 8)]).unwrap()),
                (q, CellSet::from_ranges(g, &[(0, 4)]).unwrap()),
            ],
        )
        .unwrap();
        assert_eq!(
            verify_sparsity(&s),
            SparsityVerdict::Overlap {
                first: root,
                second: q,
                cell: 0
            }
        );

        let s = SparseFamily::new(g, vec![(root, CellSet::from_ranges(g, &[(0, 4)]).unwrap())]).unwrap();
        assert_eq!(
            verify_sparsity(&s),
            SparsityVerdict::TooSmall {
                cube: root,
                witness: 4,
                total: 8
            }
        );

        let s = SparseFamily::new(g, vec![(q, CellSet::from_ranges(g, &[(2, 7)]).unwrap())]).unwrap();
        assert_eq!(verify_sparsity(&s), SparsityVerdict::NotContained { cube: q });
    }

    #[test]
    fn sparse_form_examples() {
        let p = p14();
        let root = [DyadicCube::ROOT];
        assert_eq!(sparse_form(&[1.0; 8], &[1.0; 8], &p, &root, None).unwrap(), 1.0);
        assert_eq!(sparse_form(&[2.0; 8], &[3.0; 8], &p, &root, None).unwrap(), 12.0);
        let all: Vec<DyadicCube> = grid(3).cubes().collect();
        assert_eq!(all.len(), 15);
        // Each cube contributes |Q|, so level k adds 1 and there are 4 levels.
        assert_eq!(sparse_form(&[1.0; 8], &[1.0; 8], &p, &all, None).unwrap(), 4.0);
        let direct: f64 = all.iter().map(|q| q.side()).sum();
        assert_eq!(sparse_form(&[1.0; 8], &[1.0; 8], &p, &all, None).unwrap(), direct);
    }

    #[test]
    fn sparse_form_with_weight() {
        let p = p14();
        let w = Weight::power(0.5).unwrap();
        let v = sparse_form(&[1.0; 4], &[1.0; 4], &p, &[DyadicCube::ROOT], Some(&w)).unwrap();
        // ⟨x^{1/2}⟩_{2,[0,1)} = (1/2)^{1/2}
        assert!((v - 0.5f64.sqrt()).abs() < 1e-15);
        let div = Weight::power(-0.6).unwrap();
        assert!(sparse_form(&[1.0; 4], &[1.0; 4], &p, &[DyadicCube::ROOT], Some(&div)).is_err());
    }

    #[test]
    fn json_round_trip() {
        let g = grid(8);
        let s = build_sparse_random(g, 6, 0.4, 11).unwrap();
        let back = SparseFamily::from_json(&s.to_json(), g).unwrap();
        assert_eq!(s, back);
        assert!(SparseFamily::from_json("[{\"level\": 9, \"index\": 0, \"witness\": []}]", g).is_err());
    }

    fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..10.0, n)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn form_monotone_and_homogeneous(
            f in vec_strategy(32),
            g in vec_strategy(32),
            bump in vec_strategy(32),
            seed in 0u64..1000,
            c in 0.125f64..8.0,
        ) {
            let p = ExponentProfile::new(1.25, 6.0).unwrap();
            let fam = build_sparse_random(grid(5), 5, 0.5, seed).unwrap();
            let cubes = fam.cubes();
            let base = sparse_form(&f, &g, &p, cubes, None).unwrap();

            let f2: Vec<f64> = f.iter().zip(&bump).map(|(a, b)| a + b).collect();
            let g2: Vec<f64> = g.iter().zip(&bump).map(|(a, b)| a + b).collect();
            prop_assert!(sparse_form(&f2, &g, &p, cubes, None).unwrap() >= base * (1.0 - 1e-12));
            prop_assert!(sparse_form(&f, &g2, &p, cubes, None).unwrap() >= base * (1.0 - 1e-12));
            let mut more = cubes.to_vec();
            more.push(DyadicCube::new(5, 3));
            prop_assert!(sparse_form(&f, &g, &p, &more, None).unwrap() >= base * (1.0 - 1e-12));

            // With p0 = 1 and q0* = 2, power-of-two scalings are exact in
            // floating point.
            let exact = p14();
            let b14 = sparse_form(&f, &g, &exact, cubes, None).unwrap();
            let fs: Vec<f64> = f.iter().map(|v| v * 4.0).collect();
            let gs: Vec<f64> = g.iter().map(|v| v * 8.0).collect();
            prop_assert_eq!(sparse_form(&fs, &g, &exact, cubes, None).unwrap(), 16.0 * b14);
            prop_assert_eq!(sparse_form(&f, &gs, &exact, cubes, None).unwrap(), 8.0 * b14);
            let gc: Vec<f64> = g.iter().map(|v| v * c).collect();
            let got = sparse_form(&f, &gc, &p, cubes, None).unwrap();
            prop_assert!((got - c * base).abs() <= 1e-12 * c * base.max(1e-300));
            let fc: Vec<f64> = f.iter().map(|v| v * c).collect();
            let got = sparse_form(&fc, &g, &p, cubes, None).unwrap();
            prop_assert!((got - c * c * base).abs() <= 1e-12 * c * c * base.max(1e-300));
        }

        #[test]
        fn built_families_are_sparse_and_pack(seed in 0u64..5000, density in 0.05f64..1.0, max_level in 0u32..=8) {
            let g = grid(8);
            let fam = build_sparse_random(g, max_level, density, seed).unwrap();
            prop_assert!(verify_sparsity(&fam).passes());
            for &q0 in fam.cubes() {
                let packed: usize = fam
                    .iter()
                    .filter(|(q, _)| q0.contains(q))
                    .map(|(_, e)| e.count())
                    .sum();
                prop_assert!(packed <= q0.cell_range(8).len());
            }
        }
    }
}
