//! Trainable architectures and baselines.
//!
//! Every model maps an [`EncodedTweet`] to a [`Prediction`] in degree space.
//! Trainable heads work on z-scored coordinates internally; the
//! [`Standardizer`] fitted on the training targets converts back.

mod baseline;
mod checkpoint;
mod enet;
mod neural;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::DiffError;
use crate::mixture::{mode_approx, Gmm2D, MixtureError};
use crate::text::EncodedTweet;

pub use baseline::{constant_baselines, ConstantModel};
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use enet::{soft_threshold, BagOfWords, EnetConfig, EnetFit, EnetModel};
pub use neural::{
    embed_concat, CnnEncoder, Conv, Encoder, Head, MdnHead, MlpEncoder, NeuralModel, RegressionHead,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("token id {id} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error("training set is empty")]
    EmptyTraining,
    #[error(
        "elastic net diverged at step {step} (objective {objective}, step size {step_size:e})"
    )]
    Diverged {
        step: usize,
        objective: f64,
        step_size: f64,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Mixture(#[from] MixtureError),
}

/// Every comparison model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Cmdn,
    Mdn,
    CnnL1,
    CnnL2,
    MlpL1,
    MlpL2,
    Enet,
    Mean,
    Median,
}

impl ModelKind {
    pub const ALL: [ModelKind; 9] = [
        ModelKind::Cmdn,
        ModelKind::Mdn,
        ModelKind::CnnL1,
        ModelKind::CnnL2,
        ModelKind::MlpL1,
        ModelKind::MlpL2,
        ModelKind::Enet,
        ModelKind::Mean,
        ModelKind::Median,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Cmdn => "cmdn",
            ModelKind::Mdn => "mdn",
            ModelKind::CnnL1 => "cnn-l1",
            ModelKind::CnnL2 => "cnn-l2",
            ModelKind::MlpL1 => "mlp-l1",
            ModelKind::MlpL2 => "mlp-l2",
            ModelKind::Enet => "enet",
            ModelKind::Mean => "mean",
            ModelKind::Median => "median",
        }
    }

    /// Training loss for neural kinds.
    pub fn loss(self) -> Option<LossKind> {
        match self {
            ModelKind::Cmdn | ModelKind::Mdn => Some(LossKind::Nll),
            ModelKind::CnnL1 | ModelKind::MlpL1 => Some(LossKind::L1),
            ModelKind::CnnL2 | ModelKind::MlpL2 => Some(LossKind::L2),
            _ => None,
        }
    }

    pub fn is_neural(self) -> bool {
        self.loss().is_some()
    }

    pub fn is_density(self) -> bool {
        self.loss() == Some(LossKind::Nll)
    }

    pub fn uses_cnn(self) -> bool {
        matches!(self, ModelKind::Cmdn | ModelKind::CnnL1 | ModelKind::CnnL2)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = ModelKind::ALL.iter().map(|k| k.name()).collect();
                format!(
                    "unknown model kind {s:?} (expected one of {})",
                    names.join(", ")
                )
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    L1,
    L2,
    Nll,
}

/// Architecture hyperparameters shared by the neural models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub windows: Vec<usize>,
    /// Filters per window size.
    pub filters: usize,
    pub mixtures: usize,
    /// Hidden width of the MLP feature extractor.
    pub hidden: usize,
    /// Fixed sequence length `L`.
    pub max_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            windows: vec![3, 4, 5],
            filters: 64,
            mixtures: 5,
            hidden: 64,
            max_len: 20,
        }
    }
}

impl ModelConfig {
    /// Settings of the large-scale configuration: 50 mixtures, 300-d
    /// embeddings, windows 3/4/5 with 128 filters each.
    pub fn large() -> Self {
        Self {
            embed_dim: 300,
            windows: vec![3, 4, 5],
            filters: 128,
            mixtures: 50,
            hidden: 384,
            max_len: 20,
        }
    }

    pub fn widest_window(&self) -> usize {
        self.windows.iter().copied().max().unwrap_or(1)
    }

    /// Width of the pooled CNN feature vector.
    pub fn feature_width(&self) -> usize {
        self.windows.len() * self.filters
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        if self.embed_dim == 0 || self.filters == 0 || self.hidden == 0 || self.mixtures == 0 {
            return bad("dimensions must be positive".into());
        }
        if self.windows.is_empty() || self.windows.contains(&0) {
            return bad(format!("window sizes {:?} must be positive", self.windows));
        }
        crate::text::validate_length(self.max_len, self.widest_window())
            .map_err(|e| ModelError::Config(e.to_string()))
    }
}

/// Per-axis z-scoring of coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

impl Standardizer {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; 2],
            std: [1.0; 2],
        }
    }

    /// Population mean and deviation; a zero deviation is replaced by 1.
    pub fn fit(points: &[[f64; 2]]) -> Result<Self, ModelError> {
        if points.is_empty() {
            return Err(ModelError::EmptyTraining);
        }
        let n = points.len() as f64;
        let mut mean = [0.0; 2];
        let mut std = [0.0; 2];
        for axis in 0..2 {
            mean[axis] = points.iter().map(|p| p[axis]).sum::<f64>() / n;
            let var = points
                .iter()
                .map(|p| (p[axis] - mean[axis]).powi(2))
                .sum::<f64>()
                / n;
            std[axis] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        Ok(Self { mean, std })
    }

    pub fn forward(&self, p: [f64; 2]) -> [f64; 2] {
        [
            (p[0] - self.mean[0]) / self.std[0],
            (p[1] - self.mean[1]) / self.std[1],
        ]
    }

    pub fn inverse(&self, z: [f64; 2]) -> [f64; 2] {
        [
            z[0] * self.std[0] + self.mean[0],
            z[1] * self.std[1] + self.mean[1],
        ]
    }

    /// Maps a mixture over z-scores to degrees; densities scale by the
    /// constant Jacobian `1 / (std_lat * std_lon)`.
    pub fn inverse_gmm(&self, gmm: &Gmm2D) -> Gmm2D {
        gmm.affine(self.mean, self.std)
    }
}

/// Model output in degree space.
#[derive(Clone, Debug, PartialEq)]
pub enum Prediction {
    Point([f64; 2]),
    Density(Gmm2D),
}

impl Prediction {
    /// Point estimate, plus the density there for mixture outputs.
    pub fn point(&self) -> ([f64; 2], Option<f64>) {
        match self {
            Prediction::Point(p) => (*p, None),
            Prediction::Density(gmm) => {
                let (p, density) = mode_approx(gmm);
                (p, Some(density))
            }
        }
    }
}

/// Any trained model.
#[derive(Clone, Debug)]
pub enum Model {
    Constant(ConstantModel),
    Enet(EnetModel),
    Neural(NeuralModel),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Constant(c) => c.kind,
            Model::Enet(_) => ModelKind::Enet,
            Model::Neural(n) => n.kind(),
        }
    }

    pub fn predict(&self, tweets: &[EncodedTweet]) -> Result<Vec<Prediction>, ModelError> {
        match self {
            Model::Constant(c) => Ok(tweets.iter().map(|_| Prediction::Point(c.point)).collect()),
            Model::Enet(e) => Ok(tweets
                .iter()
                .map(|t| Prediction::Point(e.predict(&BagOfWords::from_encoded(t))))
                .collect()),
            Model::Neural(n) => n.predict(tweets),
        }
    }
}
