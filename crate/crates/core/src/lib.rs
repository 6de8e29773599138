//! Explanation-aware soft ensembling for in-context learning.
//!
//! Sample N explanation/prediction candidates from an LLM, weight each one
//! by an LLM-judged explanation-quality score, and aggregate the candidates'
//! soft label distributions. The pieces:
//!
//! - [`domain`]: tasks, labels, candidates, softmax and the argmax tie rule
//! - [`prompting`] and [`templates`]: prompt rendering and the built-in templates
//! - [`backend`]: LLM access with caching, bounded concurrency and a mock
//! - [`sampler`]: candidate generation and soft distributions
//! - [`scorer`]: the bootstrapped explanation scorer and alternatives
//! - [`aggregate`]: voting and aggregation strategies, baselines
//! - [`harness`]: datasets, splits, experiments and reports
//! - [`cli`]: the `ease` command line

pub mod aggregate;
pub mod backend;
pub mod cli;
pub mod domain;
pub mod error;
pub mod harness;
pub mod prompting;
pub mod rng;
pub mod sampler;
pub mod scorer;
pub mod templates;

pub use error::{Error, Result};
