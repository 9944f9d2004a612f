//! Multi-class hate-speech classification pipeline for noisy Bangla
//! comments: rule-based normalization, a whitespace tokenizer, a small
//! embedding classifier with hand-written gradients, FGSM adversarial
//! training in embedding space, stratified K-fold ensembles and micro-F1
//! evaluation.
//!
//! Data-parallel loops (fold training, batch prediction, attack sweeps) run
//! on rayon when the default `parallel` feature is enabled and sequentially
//! otherwise; results are identical either way.

pub mod adversarial;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod model;
pub mod normalizer;
pub mod pipeline;
pub mod rng;
pub mod synthetic;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};
pub use exec::Execution;
