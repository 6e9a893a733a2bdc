//! Black-box discrete prompt optimization.
//!
//! A prompt of `n` tokens is modelled as `n` independent categorical
//! distributions over a candidate vocabulary of `N` n-grams. The only access
//! to the scoring model is through an [`oracle::Oracle`], which returns class
//! scores for query texts. Distributions are updated with a variance-reduced
//! score-function gradient followed by a Euclidean projection back onto the
//! probability simplex.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the HTTP client
//! and the command-line driver live in the `promptopt` crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod estimator;
pub mod math;
pub mod metrics;
pub mod oracle;
pub mod planted;
pub mod pmi;
pub mod prompt;
pub mod simplex;
pub mod trainer;

pub use error::{Error, Result};
pub use estimator::{plain_pge, vr_pge, GradientEstimate, SampleBatchRecord};
pub use prompt::{PromptDistribution, PromptSample, ScoreMatrix};
pub use simplex::{project, solve_threshold, ProbVector};
