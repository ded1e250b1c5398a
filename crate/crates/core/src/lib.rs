//! Multi-parameter Tikhonov regularisation for finite-dimensional inverse
//! problems, with numerical checks of stability, convergence and
//! convergence-rate bounds under data and operator errors.

pub mod analysis;
pub mod error;
pub mod experiments;
pub mod operators;
pub mod problem;
pub mod regularizers;
pub mod rng;
pub mod similarity;
pub mod solver;

pub use error::{Error, Result};
pub use operators::{ForwardOperator, SampleCloud};
pub use problem::{Datum, ExtReal, Point, RegVector, TikhonovProblem};
pub use regularizers::Regularizer;
pub use similarity::SimilarityMeasure;
