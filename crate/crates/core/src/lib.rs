//! Proximal quasi-Newton solvers for convex optimal control over scenario trees.

// `!(x > 0.0)` style checks are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod error;
pub mod factor;
pub mod fbe;
pub mod lbfgs;
pub mod oracle;
pub mod problem;
pub mod prox;
pub mod solver;
pub mod tree;

pub use error::{Error, Result};
pub use factor::{factor, refactor_affine, FactorCache};
pub use problem::{NonsmoothSpec, PrimalPoint, ProblemInstance, ProblemParts};
pub use prox::SeparableNonsmooth;
pub use tree::ScenarioTree;
