use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    ConstantModel, EnetModel, Model, ModelConfig, ModelError, ModelKind, NeuralModel, Standardizer,
};
use crate::diffcore::{NamedTensor, Params};
use crate::text::Vocab;

pub const CHECKPOINT_FORMAT: &str = "cmdn-checkpoint-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
enum Payload {
    Constant {
        point: [f64; 2],
    },
    Enet(EnetModel),
    Neural {
        config: ModelConfig,
        vocab_size: usize,
        standardizer: Standardizer,
        tensors: Vec<NamedTensor>,
    },
}

/// Serialized model plus what is needed to check it against a vocabulary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub kind: ModelKind,
    pub max_len: usize,
    pub vocab_fingerprint: String,
    payload: Payload,
}

impl Checkpoint {
    pub fn from_model(model: &Model, vocab: &Vocab, max_len: usize) -> Self {
        let payload = match model {
            Model::Constant(c) => Payload::Constant { point: c.point },
            Model::Enet(e) => Payload::Enet(e.clone()),
            Model::Neural(n) => Payload::Neural {
                config: n.config().clone(),
                vocab_size: n.vocab_size(),
                standardizer: *n.standardizer(),
                tensors: n.params().entries().to_vec(),
            },
        };
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            kind: model.kind(),
            max_len,
            vocab_fingerprint: vocab.fingerprint(max_len),
            payload,
        }
    }

    /// Rebuilds the model, refusing a vocabulary other than the one it was
    /// trained with.
    pub fn into_model(self, vocab: &Vocab) -> Result<Model, ModelError> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(ModelError::Checkpoint(format!(
                "unsupported format {:?}",
                self.format
            )));
        }
        let fingerprint = vocab.fingerprint(self.max_len);
        if fingerprint != self.vocab_fingerprint {
            return Err(ModelError::Checkpoint(format!(
                "vocabulary fingerprint {fingerprint} does not match checkpoint {}",
                self.vocab_fingerprint
            )));
        }
        match self.payload {
            Payload::Constant { point } => {
                if !matches!(self.kind, ModelKind::Mean | ModelKind::Median) {
                    return Err(ModelError::Checkpoint(format!(
                        "{} stored as a constant model",
                        self.kind
                    )));
                }
                Ok(Model::Constant(ConstantModel {
                    kind: self.kind,
                    point,
                }))
            }
            Payload::Enet(e) => {
                if e.vocab_size != vocab.len() || e.weights.iter().any(|w| w.len() != e.vocab_size)
                {
                    return Err(ModelError::Checkpoint(
                        "elastic net coefficients do not match the vocabulary".into(),
                    ));
                }
                Ok(Model::Enet(e))
            }
            Payload::Neural {
                config,
                vocab_size,
                standardizer,
                tensors,
            } => {
                if vocab_size != vocab.len() || config.max_len != self.max_len {
                    return Err(ModelError::Checkpoint(
                        "network dimensions do not match the vocabulary".into(),
                    ));
                }
                let n = NeuralModel::from_params(
                    self.kind,
                    config,
                    vocab_size,
                    standardizer,
                    Params::from_entries(tensors),
                )?;
                Ok(Model::Neural(n))
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        serde_json::from_str(text).map_err(|e| ModelError::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        fs::write(path, self.to_json())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
