//! Named hyper-parameter bundles.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corrector::CorrectionConfig;
use crate::error::{Error, Result};
use crate::model::TinyBackboneConfig;
use crate::trainer::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Ontonotes,
    Wiki,
    Ultrafine,
    /// Scaled for the tiny backbone on synthetic corpora.
    Tiny,
}

/// How the labels being corrected were produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Distant,
    Chatgpt,
    Crowd,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Ontonotes, Preset::Wiki, Preset::Ultrafine, Preset::Tiny];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Ontonotes => "ontonotes",
            Preset::Wiki => "wiki",
            Preset::Ultrafine => "ultrafine",
            Preset::Tiny => "tiny",
        }
    }

    pub fn train_config(self) -> TrainConfig {
        let base = TrainConfig::default();
        match self {
            Preset::Ontonotes | Preset::Wiki => TrainConfig {
                learning_rate: 3e-6,
                gamma_min: 0.1,
                ..base
            },
            Preset::Ultrafine => TrainConfig {
                learning_rate: 2e-5,
                gamma_min: 0.005,
                ..base
            },
            Preset::Tiny => TrainConfig {
                learning_rate: 5e-3,
                grad_clip: 1.0,
                embedding_dropout: 0.1,
                gamma_min: 0.1,
                gamma_decay: 0.5,
                max_epochs: 40,
                patience: 10,
                ..base
            },
        }
    }

    pub fn native_source(self) -> LabelSource {
        match self {
            Preset::Ultrafine => LabelSource::Crowd,
            _ => LabelSource::Distant,
        }
    }

    /// Margin for labels from `source`, if this preset defines one.
    pub fn epsilon(self, source: LabelSource) -> Option<f64> {
        match (self, source) {
            (Preset::Ontonotes, LabelSource::Distant) => Some(0.2),
            (Preset::Ontonotes, LabelSource::Chatgpt) => Some(0.3),
            (Preset::Wiki, LabelSource::Distant) => Some(0.05),
            (Preset::Wiki, LabelSource::Chatgpt) => Some(0.5),
            (Preset::Ultrafine, LabelSource::Crowd) => Some(0.8),
            (Preset::Tiny, LabelSource::Distant) => Some(0.5),
            _ => None,
        }
    }

    pub fn correction_config(self, source: LabelSource) -> Result<CorrectionConfig> {
        let epsilon = self.epsilon(source).ok_or_else(|| {
            Error::invalid(
                "label_source",
                format!("preset `{self}` has no epsilon for {source:?} labels"),
            )
        })?;
        Ok(CorrectionConfig {
            epsilon,
            ..Default::default()
        })
    }

    pub fn backbone_config(self) -> TinyBackboneConfig {
        TinyBackboneConfig::default()
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid("preset", format!("unknown preset `{s}`")))
    }
}

impl FromStr for LabelSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "distant" => Ok(LabelSource::Distant),
            "chatgpt" => Ok(LabelSource::Chatgpt),
            "crowd" => Ok(LabelSource::Crowd),
            _ => Err(Error::invalid("label_source", format!("unknown source `{s}`"))),
        }
    }
}
