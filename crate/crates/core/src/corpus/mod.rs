//! Type vocabularies, mention datasets, and label-noise injection.

mod dataset;
mod noise;
pub mod synth;
mod vocab;

pub use dataset::{Dataset, LabelPolicy, LabelSet, MentionExample};
pub use noise::{inject_noise, NoiseSpec};
pub use vocab::TypeVocabulary;
