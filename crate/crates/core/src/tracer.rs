//! Mechanical trace of the pigeonhole argument for the weak-type `L²(w)`
//! estimate, in the case `p = 2` with `σ = w⁻¹`.
//!
//! Given `f`, a weight, a sparse family `A` and a set `G`, the tracer builds
//! the good set `G'`, sorts the cubes of `A` meeting `G'` into bins
//! `A_{r,s}` by the sizes of `⟨fσ⟩_{p0,Q}` and `⟨1_{G'}⟩^w_Q`, peels each bin
//! into maximal layers, and evaluates every inequality of the argument with
//! explicit constants. Bin widths are dyadic, so each bound records the power
//! of two it concedes.

use std::collections::{BTreeMap, HashMap, HashSet};

use rayon::prelude::*;
use serde::Serialize;

use crate::characteristics::{a_infty_fw, ap_constant, rh_constant};
use crate::dyadic::{exp2i, pairwise_sum, CellSet, CubeTree, DyadicCube, DyadicGrid};
use crate::error::{Error, Result};
use crate::gehring::{epsilon_max_formula, gamma, theta, theta_conj};
use crate::operators::{
    cube_mask, dyadic_square_function, maximal_from_tree, weak_norm_with_masses, SimpleFunction,
};
use crate::sparse::{check_len, ExponentProfile, SparseFamily};
use crate::weights::Weight;
use crate::InequalityCheck;

/// Initial good-set multiplier `K`.
pub const K_START: f64 = 4.0;
/// Comparability constant assumed for `⟨fσ⟩_{p0,Q} ∼ ⟨1_{E_Q} fσ⟩_{p0,Q}`,
/// squared: the `r`-bin width 2, squared.
pub const SPARSITY_COMPARABILITY: f64 = 4.0;

/// `ln x` clamped below at 0.
pub fn log_plus(x: f64) -> f64 {
    x.ln().max(0.0)
}

/// `⌊log₂ x⌋` for `x > 0`, exact at powers of two.
pub fn floor_log2(x: f64) -> i32 {
    let mut k = x.log2().floor() as i32;
    while exp2i(k) > x {
        k -= 1;
    }
    while exp2i(k + 1) <= x {
        k += 1;
    }
    k
}

/// `Σ_{s>=0} 2^(-s x) = 2^x / (2^x - 1)`.
pub fn geometric_sum(x: f64) -> f64 {
    let t = x.exp2();
    t / (t - 1.0)
}

/// `Σ_{s>=0} s 2^(-s x) = 2^x / (2^x - 1)^2`.
pub fn geometric_weighted_sum(x: f64) -> f64 {
    let t = x.exp2();
    t / ((t - 1.0) * (t - 1.0))
}

/// Characteristics entering the argument.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceCharacteristics {
    /// `[w]_{A_{2/p0}}`
    pub ap: f64,
    /// `[w]_{RH_{q0*}}`
    pub rh: f64,
    /// `[w]_{A_∞}`
    pub a_infty: f64,
    /// `[w^{q0*}]_{A_∞}`
    pub a_infty_pow: f64,
    pub epsilon_max: f64,
}

/// Data shared by every step of one traced instance.
#[derive(Debug, Clone)]
pub struct ProofContext {
    grid: DyadicGrid,
    profile: ExponentProfile,
    f: Vec<f64>,
    chars: TraceCharacteristics,
    /// `∫_Q |f|^p0 σ^p0`, as cube totals of cell means.
    fs_pow: CubeTree,
    /// `⟨fσ⟩_{p0,Q}`
    fs_avg: CubeTree,
    f_norm_sq: f64,
    w_mass: Vec<f64>,
    w_pow_mass: Vec<f64>,
    w_tree: CubeTree,
    sigma_cell_mean: Vec<f64>,
}

impl ProofContext {
    pub fn new(f: &[f64], w: &Weight, profile: ExponentProfile, grid: DyadicGrid) -> Result<Self> {
        check_len(grid, f)?;
        if profile.q0.is_infinite() {
            return Err(Error::OutOfRange {
                what: "q0",
                value: profile.q0,
                range: "(2, inf) for the tracer, which needs q0* > 1",
            });
        }
        if f.iter().all(|&v| v == 0.0) {
            return Err(Error::ZeroFunction);
        }
        let depth = grid.depth();
        let q = profile.q0_star();
        let sigma = w.pow(-1.0)?;
        let ap = ap_constant(w, profile.ap_index(), grid)?.value;
        let rh = rh_constant(w, q, grid)?.value;
        let a_infty = a_infty_fw(w, grid)?.value;
        let a_infty_pow = a_infty_fw(&w.pow(q)?, grid)?.value;
        let chars = TraceCharacteristics {
            ap,
            rh,
            a_infty,
            a_infty_pow,
            epsilon_max: epsilon_max_formula(q, a_infty_pow),
        };
        let p0 = profile.p0;
        let sp = sigma.cell_means(depth, p0)?;
        let leaves: Vec<f64> = f.iter().zip(&sp).map(|(v, m)| v.abs().powf(p0) * m).collect();
        let fs_pow = CubeTree::sums(depth, leaves);
        let fs_avg = fs_pow.clone().into_means().map(|_, m| m.powf(1.0 / p0));
        let sigma_mass = sigma.cell_masses(depth, 1.0)?;
        let f_norm_sq = pairwise_sum(
            &f.iter()
                .zip(&sigma_mass)
                .map(|(v, m)| v * v * m)
                .collect::<Vec<_>>(),
        );
        let w_mass = w.cell_masses(depth, 1.0)?;
        Ok(ProofContext {
            grid,
            profile,
            f: f.to_vec(),
            chars,
            fs_pow,
            fs_avg,
            f_norm_sq,
            w_tree: CubeTree::sums(depth, w_mass.clone()),
            w_mass,
            w_pow_mass: w.cell_masses(depth, q)?,
            sigma_cell_mean: sigma.cell_means(depth, 1.0)?,
        })
    }

    pub fn grid(&self) -> DyadicGrid {
        self.grid
    }

    pub fn profile(&self) -> ExponentProfile {
        self.profile
    }

    pub fn characteristics(&self) -> TraceCharacteristics {
        self.chars
    }

    /// `‖f‖²_{L²(σ)}`
    pub fn f_norm_sq(&self) -> f64 {
        self.f_norm_sq
    }

    /// `⟨fσ⟩_{p0,Q}`
    pub fn fs_average(&self, q: DyadicCube) -> f64 {
        self.fs_avg.get(q)
    }

    /// `w(E)`
    pub fn w_measure(&self, e: &CellSet) -> f64 {
        masked_sum(&self.w_mass, e)
    }

    /// `f σ` with `σ` replaced by its cell averages.
    pub fn f_sigma_cells(&self) -> Vec<f64> {
        self.f
            .iter()
            .zip(&self.sigma_cell_mean)
            .map(|(a, b)| a * b)
            .collect()
    }

    fn check_epsilon(&self, epsilon: f64) -> Result<()> {
        if !(epsilon > 0.0 && epsilon <= self.chars.epsilon_max) {
            return Err(Error::EpsilonOutOfRange {
                epsilon,
                max: self.chars.epsilon_max,
            });
        }
        Ok(())
    }

    /// `2^{1/(θq)} [w]_{RH_q}^{2-γ} 2^{-s/(θ'q)}`, the factor multiplying
    /// `⟨w⟩_Q` in the average comparison.
    fn comparison_factor(&self, epsilon: f64, s: i32) -> f64 {
        let q = self.profile.q0_star();
        let th = theta(q, epsilon);
        let x = 1.0 / (theta_conj(q, epsilon) * q);
        (1.0 / (th * q)).exp2() * self.chars.rh.powf(2.0 - gamma(q, epsilon)) * (-(s as f64) * x).exp2()
    }
}

fn masked_sum(values: &[f64], e: &CellSet) -> f64 {
    pairwise_sum(
        &values
            .iter()
            .enumerate()
            .map(|(i, &v)| if e.contains(i) { v } else { 0.0 })
            .collect::<Vec<_>>(),
    )
}

fn masked_tree(values: &[f64], e: &CellSet) -> CubeTree {
    let depth = e.grid().depth();
    CubeTree::sums(
        depth,
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| if e.contains(i) { v } else { 0.0 })
            .collect(),
    )
}

/// The good set `G' = G \ {M_{p0,A}(fσ) > K [w]^{1/2} ‖f‖ / w(G)^{1/2}}`.
#[derive(Debug, Clone, Serialize)]
pub struct GoodSet {
    pub k: f64,
    pub doublings: u32,
    /// `K [w]_{A_{2/p0}}^{1/2} ‖f‖_{L²(σ)} / w(G)^{1/2}`
    pub threshold: f64,
    pub w_g: f64,
    pub w_g_prime: f64,
    #[serde(skip)]
    pub g: CellSet,
    #[serde(skip)]
    pub g_prime: CellSet,
}

/// Doubles `K` from 4 until `w(G') >= ¾ w(G)`.
pub fn build_good_set(ctx: &ProofContext, family: &SparseFamily, g: &CellSet) -> Result<GoodSet> {
    let w_g = ctx.w_measure(g);
    if w_g.is_nan() || w_g <= 0.0 {
        return Err(Error::EmptyG);
    }
    let mask = cube_mask(ctx.grid, family.cubes());
    let m = maximal_from_tree(&ctx.fs_avg, |q| mask[q.level as usize][q.index as usize]);
    let base = ctx.chars.ap.sqrt() * ctx.f_norm_sq.sqrt() / w_g.sqrt();
    let mut k = K_START;
    let mut doublings = 0;
    loop {
        let threshold = k * base;
        let mut g_prime = g.clone();
        for c in g.iter() {
            if m[c] > threshold {
                g_prime.remove(c);
            }
        }
        let w_g_prime = ctx.w_measure(&g_prime);
        if w_g_prime >= 0.75 * w_g || doublings >= 1100 {
            return Ok(GoodSet {
                k,
                doublings,
                threshold,
                w_g,
                w_g_prime,
                g: g.clone(),
                g_prime,
            });
        }
        k *= 2.0;
        doublings += 1;
    }
}

/// Cube-level data derived from `G'`.
#[derive(Debug, Clone)]
struct GoodTrees {
    /// `w(G' ∩ Q)`
    w_gp: CubeTree,
    /// `w^{q0*}(G' ∩ Q)`
    w_pow_gp: CubeTree,
}

impl GoodTrees {
    fn new(ctx: &ProofContext, good: &GoodSet) -> Self {
        GoodTrees {
            w_gp: masked_tree(&ctx.w_mass, &good.g_prime),
            w_pow_gp: masked_tree(&ctx.w_pow_mass, &good.g_prime),
        }
    }

    /// `⟨1_{G'} w⟩_{q0*,Q}`
    fn g_average(&self, ctx: &ProofContext, q: DyadicCube) -> f64 {
        (self.w_pow_gp.get(q) / q.side()).powf(1.0 / ctx.profile.q0_star())
    }
}

/// One bin `A_{r,s}` with its maximal layers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bin {
    pub r: i32,
    pub s: i32,
    /// Cubes in family order.
    pub cubes: Vec<DyadicCube>,
    /// `layers[k-1]` holds `A_{r,s,k}`.
    pub layers: Vec<Vec<DyadicCube>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bins {
    pub bins: Vec<Bin>,
    /// Cubes meeting `G'` with `⟨fσ⟩_{p0,Q} = 0`.
    pub overflow: Vec<DyadicCube>,
}

/// Assigns each family cube meeting `G'` to its bin: `r = ⌊log₂(T/⟨fσ⟩)⌋`
/// and `s = ⌊log₂(1/⟨1_{G'}⟩^w_Q)⌋`.
pub fn bin_cubes(ctx: &ProofContext, family: &SparseFamily, good: &GoodSet) -> Bins {
    let trees = GoodTrees::new(ctx, good);
    bin_with(ctx, family, good, &trees)
}

fn bin_with(ctx: &ProofContext, family: &SparseFamily, good: &GoodSet, trees: &GoodTrees) -> Bins {
    let mut map: BTreeMap<(i32, i32), Vec<DyadicCube>> = BTreeMap::new();
    let mut overflow = Vec::new();
    for &q in family.cubes() {
        let wg = trees.w_gp.get(q);
        if good.g_prime.count_in(q) == 0 {
            continue;
        }
        let a = ctx.fs_avg.get(q);
        if a == 0.0 {
            overflow.push(q);
            continue;
        }
        let r = floor_log2(good.threshold / a);
        let s = floor_log2(ctx.w_tree.get(q) / wg);
        map.entry((r, s)).or_default().push(q);
    }
    let bins = map
        .into_iter()
        .map(|((r, s), cubes)| {
            let layers = peel_layers(&cubes);
            Bin { r, s, cubes, layers }
        })
        .collect();
    Bins { bins, overflow }
}

/// Layer `k` of a cube is one more than the number of its strict ancestors
/// in the collection, which is the index of the peeling round that removes
/// it.
fn peel_layers(cubes: &[DyadicCube]) -> Vec<Vec<DyadicCube>> {
    let set: HashSet<DyadicCube> = cubes.iter().copied().collect();
    let mut layers: Vec<Vec<DyadicCube>> = Vec::new();
    for &q in cubes {
        let depth = (0..q.level).filter(|&l| set.contains(&q.ancestor(l))).count();
        if layers.len() <= depth {
            layers.resize(depth + 1, Vec::new());
        }
        layers[depth].push(q);
    }
    layers
}

/// Nearest strict ancestor of each cube within the collection.
fn bin_parents(cubes: &[DyadicCube]) -> HashMap<DyadicCube, DyadicCube> {
    let set: HashSet<DyadicCube> = cubes.iter().copied().collect();
    let mut out = HashMap::new();
    for &q in cubes {
        if let Some(l) = (0..q.level).rev().find(|&l| set.contains(&q.ancestor(l))) {
            out.insert(q, q.ancestor(l));
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct LayerCountRow {
    pub r: i32,
    pub s: i32,
    /// `Σ_{A_{r,s,1}} w(Q)` against `2^{s+1} w(G')`.
    pub first_layer: InequalityCheck,
    /// `Σ_{A_{r,s}} w(Q)` against `2 [w]_{A_∞} 2^{s+1} w(G')`.
    pub total: InequalityCheck,
}

/// Layer counting through `M_w` and the `A_∞` packing of sparse cubes.
pub fn verify_layer_counting(ctx: &ProofContext, bins: &Bins, good: &GoodSet) -> Vec<LayerCountRow> {
    bins.bins
        .iter()
        .map(|b| {
            let wq = |cs: &[DyadicCube]| pairwise_sum(&cs.iter().map(|&q| ctx.w_tree.get(q)).collect::<Vec<_>>());
            let width = exp2i(b.s + 1) * good.w_g_prime;
            LayerCountRow {
                r: b.r,
                s: b.s,
                first_layer: InequalityCheck::new(wq(&b.layers[0]), width),
                total: InequalityCheck::new(wq(&b.cubes), 2.0 * ctx.chars.a_infty * width),
            }
        })
        .collect()
}

/// `⟨1_{G'} w⟩_{q0*,Q}` against
/// `2^{1/(θq)} [w]_{RH}^{2-γ} 2^{-s/(θ'q)} ⟨w⟩_Q`, times the `s`-bin slack
/// `2^{1/(θ'q)}`.
pub fn verify_average_comparison(
    ctx: &ProofContext,
    epsilon: f64,
    q: DyadicCube,
    s: i32,
    good: &GoodSet,
) -> Result<InequalityCheck> {
    ctx.check_epsilon(epsilon)?;
    ctx.grid.check(q)?;
    let qs = ctx.profile.q0_star();
    let gp = good.g_prime.restricted_to(q);
    let lhs = (masked_sum(&ctx.w_pow_mass, &gp) / q.side()).powf(1.0 / qs);
    Ok(average_comparison_check(ctx, epsilon, q, s, lhs))
}

fn average_comparison_check(ctx: &ProofContext, epsilon: f64, q: DyadicCube, s: i32, lhs: f64) -> InequalityCheck {
    let qs = ctx.profile.q0_star();
    let slack = (1.0 / (theta_conj(qs, epsilon) * qs)).exp2();
    let rhs = ctx.comparison_factor(epsilon, s) * slack * ctx.w_tree.get(q) / q.side();
    InequalityCheck::new(lhs, rhs)
}

#[derive(Debug, Clone, Serialize)]
pub struct SparsityAverageRow {
    pub r: i32,
    pub s: i32,
    /// Largest `⟨fσ⟩_{p0,Q} / ⟨1_{E_Q} fσ⟩_{p0,Q}` over cubes with a
    /// nonzero denominator.
    pub max_ratio: Option<f64>,
    /// Cubes whose exceptional set carries no mass of `fσ`.
    pub degenerate: usize,
}

/// Compares `⟨fσ⟩_{p0,Q}` with `⟨1_{E_Q} fσ⟩_{p0,Q}`, where `E_Q` is `Q`
/// minus the strictly smaller cubes of the same bin.
pub fn verify_sparsity_averages(ctx: &ProofContext, bins: &Bins) -> Vec<SparsityAverageRow> {
    bins.bins
        .iter()
        .map(|b| {
            let ratios = exceptional_ratios(ctx, &b.cubes);
            let degenerate = ratios.iter().filter(|r| r.is_none()).count();
            let max_ratio = ratios.into_iter().flatten().reduce(f64::max);
            SparsityAverageRow {
                r: b.r,
                s: b.s,
                max_ratio,
                degenerate,
            }
        })
        .collect()
}

fn exceptional_ratios(ctx: &ProofContext, cubes: &[DyadicCube]) -> Vec<Option<f64>> {
    let parents = bin_parents(cubes);
    let mut removed: HashMap<DyadicCube, Vec<f64>> = HashMap::new();
    for (child, parent) in &parents {
        removed.entry(*parent).or_default().push(ctx.fs_pow.get(*child));
    }
    let depth = ctx.grid.depth();
    let inv = 1.0 / ctx.profile.p0;
    cubes
        .iter()
        .map(|&q| {
            let scale = exp2i(q.level as i32 - depth as i32);
            let whole = ctx.fs_pow.get(q);
            let e = match removed.get(&q) {
                Some(v) => (whole - pairwise_sum(v)).max(0.0),
                None => whole,
            };
            if e > 0.0 {
                Some((whole * scale).powf(inv) / (e * scale).powf(inv))
            } else {
                None
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct BinEstimateRow {
    pub r: i32,
    pub s: i32,
    pub cubes: usize,
    /// `S_{r,s} = Σ_{A_{r,s}} ⟨fσ⟩²_{p0,Q} ⟨1_{G'}w⟩_{q0*,Q} |Q|`
    pub sum: f64,
    /// First estimate, through layer counting.
    pub cap1: f64,
    /// Second estimate, through sparsity and Hölder, with the assumed
    /// comparability constant.
    pub cap2: f64,
    pub ratio1: f64,
    pub ratio2: f64,
    /// Largest average-comparison ratio over the bin.
    pub comparison_max_ratio: f64,
}

impl BinEstimateRow {
    pub fn passes(&self) -> bool {
        self.ratio1.min(self.ratio2) <= 1.0
    }
}

/// Both estimates for every bin. `cap1` is
/// `T² 2^{-2r} C_s 2[w]_{A_∞} 2^{s+1} w(G')` and `cap2` is
/// `4 C_s [w]_{A_{2/p0}} ‖f‖²_{L²(σ)}`, with
/// `C_s = 2^{1/(θq)} [w]_{RH}^{2-γ} 2^{-s/(θ'q)}` and `T` the good-set
/// threshold.
pub fn verify_bin_estimates(
    ctx: &ProofContext,
    bins: &Bins,
    good: &GoodSet,
    epsilon: f64,
) -> Result<Vec<BinEstimateRow>> {
    ctx.check_epsilon(epsilon)?;
    let trees = GoodTrees::new(ctx, good);
    Ok(bin_estimates_with(ctx, bins, good, &trees, epsilon))
}

fn bin_estimates_with(
    ctx: &ProofContext,
    bins: &Bins,
    good: &GoodSet,
    trees: &GoodTrees,
    epsilon: f64,
) -> Vec<BinEstimateRow> {
    bins.bins
        .par_iter()
        .map(|b| {
            let mut terms = Vec::with_capacity(b.cubes.len());
            let mut cmp: f64 = 0.0;
            for &q in &b.cubes {
                let a = ctx.fs_avg.get(q);
                let gavg = trees.g_average(ctx, q);
                terms.push(a * a * gavg * q.side());
                cmp = cmp.max(average_comparison_check(ctx, epsilon, q, b.s, gavg).ratio);
            }
            let sum = pairwise_sum(&terms);
            let cs = ctx.comparison_factor(epsilon, b.s);
            let t = good.threshold;
            let cap1 = t * t * exp2i(-2 * b.r) * cs * 2.0 * ctx.chars.a_infty * exp2i(b.s + 1) * good.w_g_prime;
            let cap2 = SPARSITY_COMPARABILITY * cs * ctx.chars.ap * ctx.f_norm_sq;
            BinEstimateRow {
                r: b.r,
                s: b.s,
                cubes: b.cubes.len(),
                sum,
                cap1,
                cap2,
                ratio1: InequalityCheck::new(sum, cap1).ratio,
                ratio2: InequalityCheck::new(sum, cap2).ratio,
                comparison_max_ratio: cmp,
            }
        })
        .collect()
}

/// The target estimate and its implied constant.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MainEstimate {
    /// `Σ_{Q∈A} ⟨fσ⟩²_{p0,Q} ⟨1_{G'}w⟩_{q0*,Q} |Q|`
    pub sum: f64,
    /// `[w]_{A_{2/p0}} [w]_{RH}^{2-γ} (1/ε)(1/ε + ln⁺[w]_{A_∞}) ‖f‖²_{L²(σ)}`
    pub denominator: f64,
    pub c0: f64,
    /// `ln [w]_{A_∞} < 0` was clamped to 0.
    pub log_clamped: bool,
}

/// `C0` = left side of the target estimate divided by its right side
/// without the constant.
pub fn verify_main_estimate(
    ctx: &ProofContext,
    family: &SparseFamily,
    good: &GoodSet,
    epsilon: f64,
) -> Result<MainEstimate> {
    ctx.check_epsilon(epsilon)?;
    let trees = GoodTrees::new(ctx, good);
    Ok(main_estimate_with(ctx, family, &trees, epsilon))
}

fn main_estimate_with(ctx: &ProofContext, family: &SparseFamily, trees: &GoodTrees, epsilon: f64) -> MainEstimate {
    let terms: Vec<f64> = family
        .cubes()
        .iter()
        .map(|&q| {
            let a = ctx.fs_avg.get(q);
            a * a * trees.g_average(ctx, q) * q.side()
        })
        .collect();
    let sum = pairwise_sum(&terms);
    let q = ctx.profile.q0_star();
    let c = &ctx.chars;
    let ln = c.a_infty.ln();
    let denominator = c.ap
        * c.rh.powf(2.0 - gamma(q, epsilon))
        * (1.0 / epsilon)
        * (1.0 / epsilon + log_plus(c.a_infty))
        * ctx.f_norm_sq;
    MainEstimate {
        sum,
        denominator,
        c0: sum / denominator,
        log_clamped: ln < 0.0,
    }
}

/// Exact per-cube steps: `⟨w⟩_Q ⟨σ⟩_{φ(p0),Q} <= [w]_{A_{2/p0}}` and
/// `⟨1_E fσ⟩²_{p0,Q} <= ⟨σ⟩_{φ(p0),Q} |Q|⁻¹ ∫_Q 1_E f² σ`.
#[derive(Debug, Clone)]
pub struct PerCubeSteps {
    grid: DyadicGrid,
    p0: f64,
    phi: f64,
    ap: f64,
    f: Vec<f64>,
    w_avg: CubeTree,
    sigma_phi: CubeTree,
    sigma_p0_mass: Vec<f64>,
    sigma_mass: Vec<f64>,
}

impl PerCubeSteps {
    pub fn new(w: &Weight, profile: &ExponentProfile, grid: DyadicGrid, f: &[f64]) -> Result<Self> {
        check_len(grid, f)?;
        let phi = profile.phi_p0();
        let depth = grid.depth();
        let sigma = w.pow(-1.0)?;
        Ok(PerCubeSteps {
            grid,
            p0: profile.p0,
            phi,
            ap: ap_constant(w, profile.ap_index(), grid)?.value,
            f: f.to_vec(),
            w_avg: w.moment_tree(grid, 1.0)?,
            sigma_phi: sigma.moment_tree(grid, phi)?,
            sigma_p0_mass: sigma.cell_masses(depth, profile.p0)?,
            sigma_mass: sigma.cell_masses(depth, 1.0)?,
        })
    }

    pub fn ap(&self) -> f64 {
        self.ap
    }

    pub fn check(&self, q: DyadicCube, e: &CellSet) -> Result<(InequalityCheck, InequalityCheck)> {
        self.grid.check(q)?;
        let s_phi = self.sigma_phi.get(q).powf(1.0 / self.phi);
        let ap = InequalityCheck::new(self.w_avg.get(q) * s_phi, self.ap);
        let r = q.cell_range(self.grid.depth());
        let mut a = Vec::with_capacity(r.len());
        let mut b = Vec::with_capacity(r.len());
        for c in r {
            if e.contains(c) {
                let v = self.f[c].abs();
                a.push(v.powf(self.p0) * self.sigma_p0_mass[c]);
                b.push(v * v * self.sigma_mass[c]);
            }
        }
        let side = q.side();
        let lhs = (pairwise_sum(&a) / side).powf(2.0 / self.p0);
        let rhs = s_phi * pairwise_sum(&b) / side;
        Ok((ap, InequalityCheck::new(lhs, rhs)))
    }
}

/// One-shot form of [`PerCubeSteps::check`].
pub fn verify_percube_ap_holder(
    w: &Weight,
    profile: &ExponentProfile,
    grid: DyadicGrid,
    q: DyadicCube,
    e: &CellSet,
    f: &[f64],
) -> Result<(InequalityCheck, InequalityCheck)> {
    PerCubeSteps::new(w, profile, grid, f)?.check(q, e)
}

/// Serializable record of one traced instance.
#[derive(Debug, Clone, Serialize)]
pub struct PigeonholeTrace {
    #[serde(rename = "L")]
    pub depth: u32,
    pub profile: ExponentProfile,
    pub epsilon: f64,
    pub characteristics: TraceCharacteristics,
    pub f_norm_sq: f64,
    pub good_set: GoodSet,
    pub g: Vec<(usize, usize)>,
    pub g_prime: Vec<(usize, usize)>,
    pub family_size: usize,
    pub bins: Vec<Bin>,
    pub overflow: Vec<DyadicCube>,
    pub layer_counting: Vec<LayerCountRow>,
    pub sparsity_averages: Vec<SparsityAverageRow>,
    pub bin_estimates: Vec<BinEstimateRow>,
    pub main: MainEstimate,
    pub slacks: Slacks,
}

/// Powers of two conceded to dyadic bin widths and assumed constants.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Slacks {
    /// `2^{s+1}` in place of `2^s` in layer counting.
    pub s_bin_layer: f64,
    /// `2^{1/(θ'q)}` in the average comparison.
    pub s_bin_comparison: f64,
    /// Assumed squared comparability in the second estimate.
    pub sparsity_comparability: f64,
    /// Sparsity factor `|Q| < 2|E_Q|` in layer counting.
    pub sparsity_packing: f64,
}

impl PigeonholeTrace {
    /// Every rigorous check passed: good-set measure, layer counting, average
    /// comparison and `min(ratio1, ratio2) <= 1` per bin, all with relative
    /// slack `rel`.
    pub fn passes(&self, rel: f64) -> bool {
        self.good_set.w_g_prime >= 0.75 * self.good_set.w_g
            && self
                .layer_counting
                .iter()
                .all(|r| r.first_layer.passes_within(rel) && r.total.passes_within(rel))
            && self
                .bin_estimates
                .iter()
                .all(|b| b.ratio1.min(b.ratio2) <= 1.0 + rel && b.comparison_max_ratio <= 1.0 + rel)
    }

    pub fn csv_rows(&self) -> Vec<String> {
        self.bin_estimates
            .iter()
            .zip(&self.layer_counting)
            .zip(&self.sparsity_averages)
            .map(|((b, l), s)| {
                format!(
                    "{},{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{}",
                    b.r,
                    b.s,
                    b.cubes,
                    b.sum,
                    b.cap1,
                    b.cap2,
                    b.ratio1,
                    b.ratio2,
                    l.total.ratio,
                    b.comparison_max_ratio,
                    s.max_ratio.map_or("NA".to_string(), |v| format!("{v:e}"))
                )
            })
            .collect()
    }
}

pub const TRACE_CSV_HEADER: &str =
    "r,s,cubes,sum,cap1,cap2,ratio1,ratio2,layer_ratio,comparison_ratio,sparsity_ratio";

/// Runs the whole argument. `epsilon` defaults to the largest admissible
/// value.
pub fn trace_proof(
    ctx: &ProofContext,
    family: &SparseFamily,
    g: &CellSet,
    epsilon: Option<f64>,
) -> Result<PigeonholeTrace> {
    let epsilon = epsilon.unwrap_or(ctx.chars.epsilon_max);
    ctx.check_epsilon(epsilon)?;
    let good = build_good_set(ctx, family, g)?;
    let trees = GoodTrees::new(ctx, &good);
    let bins = bin_with(ctx, family, &good, &trees);
    let layer_counting = verify_layer_counting(ctx, &bins, &good);
    let sparsity_averages = verify_sparsity_averages(ctx, &bins);
    let bin_estimates = bin_estimates_with(ctx, &bins, &good, &trees, epsilon);
    let main = main_estimate_with(ctx, family, &trees, epsilon);
    let qs = ctx.profile.q0_star();
    Ok(PigeonholeTrace {
        depth: ctx.grid.depth(),
        profile: ctx.profile,
        epsilon,
        characteristics: ctx.chars,
        f_norm_sq: ctx.f_norm_sq,
        g: good.g.ranges(),
        g_prime: good.g_prime.ranges(),
        good_set: good,
        family_size: family.len(),
        bins: bins.bins,
        overflow: bins.overflow,
        layer_counting,
        sparsity_averages,
        bin_estimates,
        main,
        slacks: Slacks {
            s_bin_layer: 2.0,
            s_bin_comparison: (1.0 / (theta_conj(qs, epsilon) * qs)).exp2(),
            sparsity_comparability: SPARSITY_COMPARABILITY,
            sparsity_packing: 2.0,
        },
    })
}

/// Item (2) against item (3) of the weak-type equivalence, for one `f`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EquivalenceRow {
    /// `max_λ λ² w({S(fσ) >= λ}) / ‖f‖²_{L²(σ)}` over the tested levels.
    pub weak_sq: f64,
    /// `max_G ⟨S(fσ)², 1_{G'} w⟩ / ‖f‖²_{L²(σ)}` over the same level sets.
    pub c3: f64,
    /// `weak_sq <= (4/3) c3`, which follows from `w(G') >= ¾ w(G)`.
    pub lower_holds: bool,
    /// `c3 <= 16 weak_sq` (soft).
    pub upper_holds: bool,
}

/// Number of level sets tested besides the extremal one.
pub const EQUIVALENCE_LEVELS: usize = 16;

/// Tests sets `G = {S(fσ) >= λ}`, each with its traced `G'`, where `fσ`
/// uses cell averages of `σ` and the family is `family`. The levels are
/// the maximizer of the weak norm plus evenly spaced quantiles of the
/// values of `S(fσ)`.
pub fn equivalence_check(ctx: &ProofContext, family: &SparseFamily) -> Result<EquivalenceRow> {
    let grid = ctx.grid;
    let fs = SimpleFunction::new(grid, ctx.f_sigma_cells())?;
    let sf = dyadic_square_function(&fs);
    let vals = sf.values();
    let (_, lambda_star) = weak_norm_with_masses(vals, &ctx.w_mass, 2.0);
    let mut sorted: Vec<f64> = vals.iter().copied().filter(|v| *v > 0.0).collect();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut levels = vec![lambda_star];
    if !sorted.is_empty() {
        for j in 0..EQUIVALENCE_LEVELS {
            levels.push(sorted[j * (sorted.len() - 1) / (EQUIVALENCE_LEVELS - 1).max(1)]);
        }
    }
    levels.retain(|l| *l > 0.0);
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let sq: Vec<f64> = vals.iter().map(|v| v * v).collect();
    let norm = ctx.f_norm_sq;
    let mut weak_sq: f64 = 0.0;
    let mut c3: f64 = 0.0;
    for &lambda in &levels {
        let mask: Vec<bool> = vals.iter().map(|&v| v >= lambda).collect();
        let g = CellSet::from_mask(grid, &mask)?;
        let good = build_good_set(ctx, family, &g)?;
        weak_sq = weak_sq.max(lambda * lambda * good.w_g / norm);
        let inner: Vec<f64> = sq
            .iter()
            .zip(&ctx.w_mass)
            .enumerate()
            .map(|(i, (s, m))| if good.g_prime.contains(i) { s * m } else { 0.0 })
            .collect();
        c3 = c3.max(pairwise_sum(&inner) / norm);
    }
    Ok(EquivalenceRow {
        weak_sq,
        c3,
        lower_holds: weak_sq <= 4.0 / 3.0 * c3 * (1.0 + 1e-12),
        upper_holds: c3 <= 16.0 * weak_sq,
    })
}
