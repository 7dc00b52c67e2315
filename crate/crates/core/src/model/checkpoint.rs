use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::autograd::ParamStore;
use super::{Backbone, CoPredictionModel, ModelConfig, TinyBackbone, TinyBackboneConfig, WordTokenizer};
use crate::corpus::TypeVocabulary;
use crate::error::{Error, Result};
use crate::prompt::MarkerMap;

pub const CHECKPOINT_FORMAT: &str = "coprompt-checkpoint/1";

/// Everything needed to rebuild a tiny co-prediction model, in one JSON file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub model: ModelConfig,
    pub backbone: TinyBackboneConfig,
    pub tokenizer: WordTokenizer,
    pub vocabulary: TypeVocabulary,
    pub markers: MarkerMap,
    pub params: ParamStore,
    /// Snapshot of the configuration the model was trained with.
    #[serde(default)]
    pub config: serde_json::Value,
}

impl Checkpoint {
    pub fn from_model(model: &CoPredictionModel, config: serde_json::Value) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            model: model.config().clone(),
            backbone: model.backbone().config().clone(),
            tokenizer: model.backbone().tokenizer().clone(),
            vocabulary: model.vocabulary().as_ref().clone(),
            markers: model.markers().clone(),
            params: model.params().clone(),
            config,
        }
    }

    pub fn into_model(self) -> Result<CoPredictionModel> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported format `{}` (expected `{CHECKPOINT_FORMAT}`)",
                self.format
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let backbone = TinyBackbone::new(self.backbone, self.tokenizer, &mut store, &mut rng)?;
        let mut model =
            CoPredictionModel::new(backbone, store, Arc::new(self.vocabulary), self.model, &mut rng)?;
        if model.markers() != &self.markers {
            return Err(Error::Checkpoint("marker map does not match model config".into()));
        }
        let fresh = model.params();
        if fresh.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                fresh.len(),
                self.params.len()
            )));
        }
        for id in fresh.ids() {
            let (a, b) = (fresh.get(id), self.params.get(id));
            if fresh.name(id) != self.params.name(id) || (a.rows(), a.cols()) != (b.rows(), b.cols()) {
                return Err(Error::Checkpoint(format!(
                    "parameter {} `{}` {}x{} does not match `{}` {}x{}",
                    id.index(),
                    fresh.name(id),
                    a.rows(),
                    a.cols(),
                    self.params.name(id),
                    b.rows(),
                    b.cols()
                )));
            }
        }
        if !self.params.all_finite() {
            return Err(Error::Checkpoint("non-finite parameter values".into()));
        }
        *model.params_mut() = self.params;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, self)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_reader(BufReader::new(file))?;
        Ok(ck)
    }
}

impl CoPredictionModel {
    pub fn save(&self, path: impl AsRef<Path>, config: serde_json::Value) -> Result<()> {
        Checkpoint::from_model(self, config).save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, serde_json::Value)> {
        let ck = Checkpoint::load(path)?;
        let config = ck.config.clone();
        Ok((ck.into_model()?, config))
    }
}
