//! Closed-form bound and exponent formulas, with the comparison between
//! the weak-type and strong-type estimates. Implicit constants are 1 and
//! logarithms are natural.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::characteristics::{a_infty_fw, ap_constant, rh_constant};
use crate::dyadic::DyadicGrid;
use crate::error::{Error, Result};
use crate::gehring::{epsilon_max_formula, gamma};
use crate::sparse::ExponentProfile;
use crate::tracer::log_plus;
use crate::weights::{conjugate, Weight};
use crate::InequalityCheck;

/// `(q0/p)'`, equal to 1 when `q0 = ∞`.
fn q0_over_conj(q0: f64, p: f64) -> f64 {
    if q0.is_infinite() {
        1.0
    } else {
        conjugate(q0 / p)
    }
}

fn in_open_range(what: &'static str, x: f64, profile: &ExponentProfile) -> Result<()> {
    crate::ensure_range(what, x, x > profile.p0 && x < profile.q0, "(p0, q0)")
}

/// `[w]_{RH}^{1-γ} (1/ε)(1/ε + ln⁺[w]_{A_∞})` with `γ = ε/(q(q+ε-1))`.
pub fn eta_eps(rh: f64, a_infty: f64, q0_star: f64, epsilon: f64) -> Result<f64> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::NonPositiveEpsilon(epsilon));
    }
    let g = gamma(q0_star, epsilon);
    Ok(rh.powf(1.0 - g) * (1.0 / epsilon) * (1.0 / epsilon + log_plus(a_infty)))
}

/// `ε = 1/(4 [w^{q0*}]_{A_∞})`.
pub fn reciprocal_epsilon(a_infty_pow: f64) -> f64 {
    1.0 / (4.0 * a_infty_pow)
}

/// `[w]_{RH}^{1-γ} a (a + ln⁺[w]_{A_∞})` with `a = [w^{q0*}]_{A_∞}` and `γ`
/// at the reciprocal choice of `ε`.
pub fn eta_explicit(rh: f64, a_infty: f64, a_infty_pow: f64, q0_star: f64) -> f64 {
    let g = gamma(q0_star, reciprocal_epsilon(a_infty_pow));
    rh.powf(1.0 - g) * a_infty_pow * (a_infty_pow + log_plus(a_infty))
}

/// Characteristics feeding the bound formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// `[w]_{A_{2/p0}}`
    pub ap: f64,
    /// `[w]_{RH_{q0*}}`
    pub rh: f64,
    /// `[w]_{A_∞}`
    pub a_infty: f64,
    /// `[w^{q0*}]_{A_∞}`
    pub a_infty_pow: f64,
}

impl BoundInputs {
    pub fn unit() -> Self {
        BoundInputs {
            ap: 1.0,
            rh: 1.0,
            a_infty: 1.0,
            a_infty_pow: 1.0,
        }
    }

    pub fn from_weight(w: &Weight, profile: &ExponentProfile, grid: DyadicGrid) -> Result<Self> {
        let q = profile.q0_star();
        Ok(BoundInputs {
            ap: ap_constant(w, profile.ap_index(), grid)?.value,
            rh: if q == 1.0 { 1.0 } else { rh_constant(w, q, grid)?.value },
            a_infty: a_infty_fw(w, grid)?.value,
            a_infty_pow: a_infty_fw(&w.pow(q)?, grid)?.value,
        })
    }

    /// `q0* / (4 [w^{q0*}]_{A_∞} - 1)`.
    pub fn epsilon_max(&self, profile: &ExponentProfile) -> f64 {
        epsilon_max_formula(profile.q0_star(), self.a_infty_pow)
    }
}

/// The bound at `ε` and the bound at the reciprocal choice of `ε`, in that
/// order, both of the form `[w]_{A}^{1/2} [w]_{RH}^{1/2} η^{1/2}`.
pub fn weak_type_bounds(inputs: &BoundInputs, profile: &ExponentProfile, epsilon: f64) -> Result<(f64, f64)> {
    let q = profile.q0_star();
    let base = inputs.ap.sqrt() * inputs.rh.sqrt();
    let at_eps = base * eta_eps(inputs.rh, inputs.a_infty, q, epsilon)?.sqrt();
    let explicit = base * eta_explicit(inputs.rh, inputs.a_infty, inputs.a_infty_pow, q).sqrt();
    Ok((at_eps, explicit))
}

/// `γ(q) = max{1/(q - p0), (q0/q)'/(2 q0*)}`.
pub fn gamma_strong(q: f64, profile: &ExponentProfile) -> Result<f64> {
    in_open_range("q", q, profile)?;
    Ok((1.0 / (q - profile.p0)).max(q0_over_conj(profile.q0, q) / (2.0 * profile.q0_star())))
}

/// `φ(p) = (q0/p)'(p/p0 - 1) + 1`.
pub fn phi(p: f64, profile: &ExponentProfile) -> Result<f64> {
    in_open_range("p", p, profile)?;
    Ok(q0_over_conj(profile.q0, p) * (p / profile.p0 - 1.0) + 1.0)
}

/// `β(p, q) = max(1, (q0 - q)(p - p0) / ((q0 - p)(q - p0)))`.
pub fn beta(p: f64, q: f64, profile: &ExponentProfile) -> Result<f64> {
    in_open_range("p", p, profile)?;
    in_open_range("q", q, profile)?;
    let p0 = profile.p0;
    let ratio = if profile.q0.is_infinite() {
        (p - p0) / (q - p0)
    } else {
        let q0 = profile.q0;
        (q0 - q) * (p - p0) / ((q0 - p) * (q - p0))
    };
    Ok(ratio.max(1.0))
}

/// The all-`p` bound at exponent `q`, from `ap = [w]_{A_{q/p0}}` and
/// `rh = [w]_{RH_{(q0/q)'}}`: with `B = (ap rh)^{(q0/q)'}`,
/// `B^{β(2,q)(3 - γ + q0*)/(2q0*)} (B + ln B / q0*)^{β(2,q)/2}`.
pub fn extrapolated_bound(ap: f64, rh: f64, profile: &ExponentProfile, q: f64, gamma: f64) -> Result<f64> {
    let b = beta(2.0, q, profile)?;
    let qs = profile.q0_star();
    let base = (ap * rh).powf(q0_over_conj(profile.q0, q));
    Ok(base.powf(b * (3.0 - gamma + qs) / (2.0 * qs)) * (base + base.ln() / qs).powf(b / 2.0))
}

/// `[w^{(q0/p)'}]_{A_{φ(p)}}` against `([w]_{A_{p/p0}} [w]_{RH_{(q0/p)'}})^{(q0/p)'}`.
pub fn check_bridge(w: &Weight, profile: &ExponentProfile, p: f64, grid: DyadicGrid) -> Result<InequalityCheck> {
    let s = q0_over_conj(profile.q0, p);
    let ph = phi(p, profile)?;
    let lhs = ap_constant(&w.pow(s)?, ph, grid)?.value;
    let a = ap_constant(w, p / profile.p0, grid)?.value;
    let r = if s == 1.0 { 1.0 } else { rh_constant(w, s, grid)?.value };
    Ok(InequalityCheck::new(lhs, (a * r).powf(s)))
}

/// Exponents of `[w]_{A_{2/p0}}` and `[w]_{RH_{q0*}}` in the weak-type and
/// strong-type bounds, with the bound values.
#[derive(Debug, Clone, Serialize)]
pub struct WeakStrongComparison {
    pub a_exponent_weak: f64,
    pub a_exponent_strong: f64,
    pub rh_exponent_weak: f64,
    pub rh_exponent_strong: f64,
    pub weak_bound: f64,
    /// `([w]_{A_{2/p0}} [w]_{RH_{q0*}})^{γ(2)}`
    pub strong_bound: f64,
    /// The weak side has the smaller `A` exponent.
    pub weak_smaller_a_exponent: bool,
}

pub fn compare_weak_strong(
    inputs: &BoundInputs,
    profile: &ExponentProfile,
    epsilon: f64,
) -> Result<WeakStrongComparison> {
    let g2 = gamma_strong(2.0, profile)?;
    let g = gamma(profile.q0_star(), reciprocal_epsilon(inputs.a_infty_pow));
    let weak_bound = weak_type_bounds(inputs, profile, epsilon)?.0;
    Ok(WeakStrongComparison {
        a_exponent_weak: 0.5,
        a_exponent_strong: g2,
        rh_exponent_weak: 1.0 - g / 2.0,
        rh_exponent_strong: g2,
        weak_bound,
        strong_bound: (inputs.ap * inputs.rh).powf(g2),
        weak_smaller_a_exponent: 0.5 < g2,
    })
}

/// How `ε` is chosen for the main bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum EpsilonPolicy {
    /// Upper end of the admissible range.
    Max,
    /// `1 / (4 [w^{q0*}]_{A_∞})`.
    Reciprocal,
    Explicit(f64),
}

impl EpsilonPolicy {
    pub fn resolve(&self, inputs: &BoundInputs, profile: &ExponentProfile) -> f64 {
        match *self {
            EpsilonPolicy::Max => inputs.epsilon_max(profile),
            EpsilonPolicy::Reciprocal => reciprocal_epsilon(inputs.a_infty_pow),
            EpsilonPolicy::Explicit(e) => e,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub inputs: BoundInputs,
    /// `computed` from a weight or `supplied`.
    pub provenance: String,
    pub profile: ExponentProfile,
    pub epsilon: f64,
    pub epsilon_max: f64,
    /// `ε/(q0*(q0*+ε-1))` at the chosen `ε`.
    pub gamma_epsilon: f64,
    pub eta_eps: f64,
    /// `γ` at the reciprocal choice of `ε`.
    pub gamma_reciprocal: f64,
    pub eta_explicit: f64,
    pub eps_bound: f64,
    pub explicit_bound: f64,
    pub gamma_strong: f64,
    pub strong_bound: f64,
    pub phi_p: f64,
    pub beta_2q: f64,
    /// The all-`p` bound at `q = 2`, built from the same characteristics.
    pub extrapolated_at_2: f64,
    /// `extrapolated_at_2 >= explicit_bound`.
    pub loss_chain_holds: bool,
    pub comparison: WeakStrongComparison,
    pub notes: Vec<String>,
    pub formulas: BTreeMap<String, String>,
}

fn formulas() -> BTreeMap<String, String> {
    [
        ("eta_eps", "RH^(1-g) (1/e) (1/e + ln+ Ainf), g = e/(q*(q*+e-1))"),
        ("eta_explicit", "RH^(1-g) Ainf_pow (Ainf_pow + ln+ Ainf), e = 1/(4 Ainf_pow)"),
        ("eps_bound", "A^(1/2) RH^(1/2) eta_eps^(1/2)"),
        ("explicit_bound", "A^(1/2) RH^(1/2) eta_explicit^(1/2)"),
        ("gamma_strong", "max{1/(q-p0), (q0/q)'/(2 q*)} at q = 2"),
        ("strong_bound", "(A RH)^gamma_strong"),
        ("phi_p", "(q0/p)' (p/p0 - 1) + 1"),
        ("beta_2q", "max(1, (q0-q)(2-p0)/((q0-2)(q-p0)))"),
        ("extrapolated", "B^(beta (3-g+q*)/(2q*)) (B + ln(B)/q*)^(beta/2), B = (A_{q/p0} RH_{(q0/q)'})^((q0/q)')"),
        ("epsilon_max", "q*/(4 Ainf_pow - 1)"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

/// Every bound formula at one set of characteristics. `q` is the exponent
/// used for `β(2, q)`; it defaults to the profile's target `p`.
pub fn bound_report(
    inputs: BoundInputs,
    provenance: &str,
    profile: &ExponentProfile,
    policy: EpsilonPolicy,
) -> Result<BoundReport> {
    let qs = profile.q0_star();
    let epsilon = policy.resolve(&inputs, profile);
    let epsilon_max = inputs.epsilon_max(profile);
    let (eps_bound, explicit_bound) = weak_type_bounds(&inputs, profile, epsilon)?;
    let gamma_reciprocal = gamma(qs, reciprocal_epsilon(inputs.a_infty_pow));
    let g2 = gamma_strong(2.0, profile)?;
    let extrapolated_at_2 = extrapolated_bound(inputs.ap, inputs.rh, profile, 2.0, gamma_reciprocal)?;
    let mut notes = Vec::new();
    if inputs.a_infty < 1.0 {
        notes.push("ln [w]_{A_inf} < 0 clamped to 0".to_string());
    }
    if profile.q0.is_infinite() {
        notes.push("q0 = inf: q0* = 1, so gamma = 1 and the RH factor of eta_eps has exponent 0".to_string());
    }
    if epsilon > epsilon_max {
        notes.push(format!("epsilon {epsilon} exceeds the admissible range (0, {epsilon_max}]"));
    }
    Ok(BoundReport {
        inputs,
        provenance: provenance.to_string(),
        profile: *profile,
        epsilon,
        epsilon_max,
        gamma_epsilon: gamma(qs, epsilon),
        eta_eps: eta_eps(inputs.rh, inputs.a_infty, qs, epsilon)?,
        gamma_reciprocal,
        eta_explicit: eta_explicit(inputs.rh, inputs.a_infty, inputs.a_infty_pow, qs),
        eps_bound,
        explicit_bound,
        gamma_strong: g2,
        strong_bound: (inputs.ap * inputs.rh).powf(g2),
        phi_p: phi(profile.p, profile)?,
        beta_2q: beta(2.0, profile.p, profile)?,
        extrapolated_at_2,
        loss_chain_holds: extrapolated_at_2 >= explicit_bound * (1.0 - 1e-12),
        comparison: compare_weak_strong(&inputs, profile, epsilon)?,
        notes,
        formulas: formulas(),
    })
}
