//! Online and sliding-window ℓp Lewis weight sampling.
//!
//! The crate computes offline, regularized and online ℓp Lewis weights,
//! turns online weight overestimates into one-shot Bernoulli coresets,
//! maintains sliding-window coresets by merge-and-reduce, and builds
//! weighted coresets for hinge-type and p-probit losses.

pub mod error;
pub mod glm;
pub mod io;
pub mod linalg;
pub mod offline;
pub mod online;
pub mod rng;
pub mod sampling;
pub mod synth;
pub mod weights;
pub mod window;

pub use error::{Error, Result};
pub use linalg::{DenseMatrix, PsdQuadratic, QuadForm};
pub use sampling::{Coreset, CoresetEntry, SamplingConfig};
pub use weights::WeightVector;
