//! Dyadic weighted-inequality laboratory on `[0, 1)`.
//!
//! Computes dyadic Muckenhoupt `A_p`, reverse Hölder `RH_q` and Fujii–Wilson
//! `A_∞` characteristics, evaluates quadratic sparse forms, traces the
//! pigeonhole argument behind the weak-type `L²(w)` bound for square
//! functions with restricted range `(p0, q0)`, and evaluates the associated
//! bound formulas. Dimension is fixed to `d = 1`.

#![forbid(unsafe_code)]

pub mod bounds;
pub mod characteristics;
pub mod corpus;
pub mod dyadic;
pub mod error;
pub mod gehring;
pub mod operators;
pub mod sparse;
pub mod tracer;
pub mod weights;

pub use dyadic::{CellSet, CubeTree, DyadicCube, DyadicGrid};
pub use error::{Error, Result};
pub use weights::Weight;

/// One side-by-side evaluation of an inequality `lhs <= rhs`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct InequalityCheck {
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs / rhs`, taken as 0 when both sides vanish.
    pub ratio: f64,
}

impl InequalityCheck {
    pub fn new(lhs: f64, rhs: f64) -> Self {
        let ratio = if lhs == 0.0 { 0.0 } else { lhs / rhs };
        InequalityCheck { lhs, rhs, ratio }
    }

    pub fn passes(&self) -> bool {
        self.ratio <= 1.0
    }

    /// Passes up to a relative rounding slack.
    pub fn passes_within(&self, rel: f64) -> bool {
        self.ratio <= 1.0 + rel
    }
}

pub(crate) fn ensure_range(what: &'static str, value: f64, ok: bool, range: &'static str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::OutOfRange { what, value, range })
    }
}
