//! Average-cost Markov decision processes at desk scale.
//!
//! The crate evaluates the four expected and four pathwise long-run average
//! cost criteria, computes optimal gains of finite multichain MDPs, checks
//! the structural conditions under which the optimal average cost is
//! constant, builds finite-horizon strategic measures, and solves the
//! occupation-measure linear program on truncations of countable models.
//!
//! Most numeric routines are generic over [`Scalar`], so the same code runs
//! on `f64` or on exact rationals.

pub mod chain;
pub mod countable;
pub mod criteria;
pub mod error;
pub mod gen;
pub mod linalg;
pub mod lp;
pub mod mdp;
pub mod optimal;
pub mod policy;
pub mod report;
pub mod scalar;
pub mod strategic;

pub use error::{Error, Result};
pub use mdp::{CountableMdp, FiniteMdp};
pub use policy::{Kernel, MarkovPolicy, Policy};
pub use scalar::{Rational, Scalar};
