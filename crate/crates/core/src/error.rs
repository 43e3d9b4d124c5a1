use thiserror::Error;

use crate::dyadic::DyadicCube;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("cube at level {level} has no children on a grid of depth {depth}")]
    LevelOverflow { level: u32, depth: u32 },

    #[error("cube (level {level}, index {index}) does not exist on a grid of depth {depth}")]
    CubeOutOfGrid { level: u32, index: u64, depth: u32 },

    #[error("expected {expected} values, got {actual}")]
    WrongLength { expected: usize, actual: usize },

    #[error("moment of order {t} of x^{alpha} diverges at 0 (need alpha*t > -1)")]
    DivergentMoment { alpha: f64, t: f64 },

    #[error("moment exponent must be nonzero")]
    ZeroExponent,

    #[error("weight value {value} at cell {cell} is not strictly positive and finite")]
    NonPositiveWeight { cell: usize, value: f64 },

    #[error("{what} = {value} is outside {range}")]
    OutOfRange {
        what: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("epsilon {epsilon} outside (0, {max}]")]
    EpsilonOutOfRange { epsilon: f64, max: f64 },

    #[error("epsilon must be positive, got {0}")]
    NonPositiveEpsilon(f64),

    #[error("set is not contained in cube {0:?}")]
    NotContained(DyadicCube),

    #[error("the set G has zero weighted measure")]
    EmptyG,

    #[error("function is identically zero")]
    ZeroFunction,

    #[error("sparsity violated at cube {cube:?}: witness holds {witness} of {total} cells")]
    SparsityViolation {
        cube: DyadicCube,
        witness: usize,
        total: usize,
    },

    #[error("tabulated weight has depth {weight} but the grid has depth {grid}")]
    DepthMismatch { weight: u32, grid: u32 },

    #[error("parse error: {0}")]
    Parse(String),
}
