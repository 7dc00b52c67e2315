//! Noisy-label correction for fine-grained entity typing.
//!
//! A masked language model is fine-tuned with a two-mask prompt
//! (`... belongs to [PMASK] rather than [NMASK]`). Labels on which the two
//! masks disagree are down-weighted during training, and the trained model
//! then rewrites each example's label set: labels predicted by either mask
//! are recalled, and labels whose divergence score exceeds a margin are
//! eliminated.
//!
//! Module map:
//!
//! - [`corpus`]: type vocabularies, datasets, noise injection, synthetic corpora
//! - [`prompt`]: co-prediction prompt layout and rendering
//! - [`model`]: backbone contract, tiny transformer backbone, soft verbalizer, scoring
//! - [`trainer`]: divergence-weighted loss, loss-weight schedule, training loop
//! - [`corrector`]: recall / eliminate label correction with audit report
//! - [`eval`]: strict accuracy, macro and micro precision/recall/F1
//! - [`annotator`]: LLM relabeling protocol with mock and HTTP clients
//! - [`presets`]: per-dataset hyperparameter presets

pub mod annotator;
pub mod corpus;
pub mod corrector;
pub mod error;
pub mod eval;
pub mod model;
pub mod presets;
pub mod prompt;
pub mod trainer;

pub use error::{Error, Result};
