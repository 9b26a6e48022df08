//! Conditional flow matching with a momentum-augmented sampling drift.
//!
//! The crate trains a single network with a denoiser head and noise-scaled
//! derivative heads on a Gaussian bridge, then samples with an
//! Euler-Maruyama scheme whose drift mixes the denoiser velocity with score
//! and higher-order terms. See the guide in `book/` for the full story.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coupling;
pub mod data;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod paths;
pub mod plot;
pub mod rng;
pub mod sampling;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/bridge-paths.md")]
    mod bridge_paths {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/sampling.md")]
    mod sampling {}
    #[doc = include_str!("../../../book/src/coupling.md")]
    mod coupling {}
    #[doc = include_str!("../../../book/src/likelihood.md")]
    mod likelihood {}
    #[doc = include_str!("../../../book/src/time-series.md")]
    mod time_series {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
