use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ModelError, ModelKind, Prediction, Standardizer};
use crate::diffcore::{Graph, NodeId, ParamId, Params, Tensor};
use crate::mixture::{convert_params, PARAMS_PER_COMPONENT};
use crate::text::{EncodedTweet, PAD};

const EMBEDDING_INIT: f64 = 0.05;
const PREDICT_CHUNK: usize = 256;

/// One convolution bank: `filters x (width * d)` weights and a bias row.
#[derive(Clone, Debug)]
pub struct Conv {
    pub width: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Embedding lookup, sliding-window filters with ReLU, 1-max pooling.
///
/// Pooled features are laid out window by window in configuration order,
/// filter index fastest.
#[derive(Clone, Debug)]
pub struct CnnEncoder {
    pub embedding: ParamId,
    pub convs: Vec<Conv>,
}

/// Mean of the word embeddings over the unpadded positions, then one ReLU
/// hidden layer.
#[derive(Clone, Debug)]
pub struct MlpEncoder {
    pub embedding: ParamId,
    pub hidden_weight: ParamId,
    pub hidden_bias: ParamId,
}

#[derive(Clone, Debug)]
pub enum Encoder {
    Cnn(CnnEncoder),
    Mlp(MlpEncoder),
}

/// Affine map to `(lat, lon)`.
#[derive(Clone, Debug)]
pub struct RegressionHead {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Affine map to `6K` raw mixture parameters.
#[derive(Clone, Debug)]
pub struct MdnHead {
    pub weight: ParamId,
    pub bias: ParamId,
    pub mixtures: usize,
}

#[derive(Clone, Debug)]
pub enum Head {
    Regression(RegressionHead),
    Mixture(MdnHead),
}

impl Head {
    fn params(&self) -> (ParamId, ParamId) {
        match self {
            Head::Regression(h) => (h.weight, h.bias),
            Head::Mixture(h) => (h.weight, h.bias),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Head::Regression(_) => 2,
            Head::Mixture(h) => h.mixtures * PARAMS_PER_COMPONENT,
        }
    }
}

/// Neural model: an encoder feeding a regression or mixture head.
#[derive(Clone, Debug)]
pub struct NeuralModel {
    kind: ModelKind,
    config: ModelConfig,
    vocab_size: usize,
    standardizer: Standardizer,
    params: Params,
    encoder: Encoder,
    head: Head,
}

fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Tensor::matrix(rows, cols, data).expect("positive dimensions")
}

impl NeuralModel {
    /// Freshly initialized model; identical seeds give identical weights.
    pub fn new(
        kind: ModelKind,
        config: ModelConfig,
        vocab_size: usize,
        standardizer: Standardizer,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        let (encoder, head) = Self::layout(kind, &config, vocab_size, &mut params, Some(&mut rng))?;
        Ok(Self {
            kind,
            config,
            vocab_size,
            standardizer,
            params,
            encoder,
            head,
        })
    }

    /// Rebuilds a model around stored tensors, checking every name and shape.
    pub fn from_params(
        kind: ModelKind,
        config: ModelConfig,
        vocab_size: usize,
        standardizer: Standardizer,
        stored: Params,
    ) -> Result<Self, ModelError> {
        let mut params = Params::new();
        let (encoder, head) = Self::layout(kind, &config, vocab_size, &mut params, None)?;
        if stored.len() != params.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} tensors, found {}",
                params.len(),
                stored.len()
            )));
        }
        let mut ordered = Params::new();
        for (_, name, tensor) in params.iter() {
            let found = stored
                .find(name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor {name:?}")))?;
            let t = stored.get(found);
            if t.shape() != tensor.shape() {
                return Err(ModelError::Checkpoint(format!(
                    "tensor {name:?} has shape {:?}, expected {:?}",
                    t.shape(),
                    tensor.shape()
                )));
            }
            if !t.is_finite() {
                return Err(ModelError::Checkpoint(format!(
                    "tensor {name:?} is not finite"
                )));
            }
            ordered.add(name, t.clone());
        }
        let params = ordered;
        Ok(Self {
            kind,
            config,
            vocab_size,
            standardizer,
            params,
            encoder,
            head,
        })
    }

    fn layout(
        kind: ModelKind,
        config: &ModelConfig,
        vocab_size: usize,
        params: &mut Params,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Encoder, Head), ModelError> {
        config.validate()?;
        if !kind.is_neural() {
            return Err(ModelError::Config(format!("{kind} is not a neural model")));
        }
        if vocab_size < 2 {
            return Err(ModelError::Config(
                "vocabulary must contain PAD and UNK".into(),
            ));
        }
        let d = config.embed_dim;
        let mut init = |rows: usize, cols: usize, kind: Init| -> Tensor {
            match (rng.as_deref_mut(), kind) {
                (Some(r), Init::Embedding) => Tensor::matrix(
                    rows,
                    cols,
                    (0..rows * cols)
                        .map(|_| r.random_range(-EMBEDDING_INIT..EMBEDDING_INIT))
                        .collect(),
                )
                .expect("positive dimensions"),
                (Some(r), Init::Glorot) => glorot(rows, cols, r),
                _ => Tensor::zeros(vec![rows, cols]),
            }
        };
        let embedding = params.add("embedding", init(vocab_size, d, Init::Embedding));
        let (encoder, feature_width) = if kind.uses_cnn() {
            let convs = config
                .windows
                .iter()
                .map(|&w| Conv {
                    width: w,
                    weight: params.add(
                        format!("conv{w}.weight"),
                        init(config.filters, w * d, Init::Glorot),
                    ),
                    bias: params.add(format!("conv{w}.bias"), init(1, config.filters, Init::Zero)),
                })
                .collect();
            (
                Encoder::Cnn(CnnEncoder { embedding, convs }),
                config.feature_width(),
            )
        } else {
            let hidden_weight =
                params.add("mlp.hidden.weight", init(config.hidden, d, Init::Glorot));
            let hidden_bias = params.add("mlp.hidden.bias", init(1, config.hidden, Init::Zero));
            (
                Encoder::Mlp(MlpEncoder {
                    embedding,
                    hidden_weight,
                    hidden_bias,
                }),
                config.hidden,
            )
        };
        let head = if kind.is_density() {
            let out = config.mixtures * PARAMS_PER_COMPONENT;
            Head::Mixture(MdnHead {
                weight: params.add("head.weight", init(out, feature_width, Init::Glorot)),
                bias: params.add("head.bias", init(1, out, Init::Zero)),
                mixtures: config.mixtures,
            })
        } else {
            Head::Regression(RegressionHead {
                weight: params.add("head.weight", init(2, feature_width, Init::Glorot)),
                bias: params.add("head.bias", init(1, 2, Init::Zero)),
            })
        };
        Ok((encoder, head))
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    fn check_batch(&self, tweets: &[EncodedTweet]) -> Result<(), ModelError> {
        if tweets.is_empty() {
            return Err(ModelError::Config("empty batch".into()));
        }
        for t in tweets {
            if t.ids.len() != self.config.max_len {
                return Err(ModelError::Config(format!(
                    "tweet encoded with length {}, model expects {}",
                    t.ids.len(),
                    self.config.max_len
                )));
            }
            if let Some(&id) = t.ids.iter().find(|&&id| id >= self.vocab_size) {
                return Err(ModelError::TokenOutOfRange {
                    id,
                    vocab: self.vocab_size,
                });
            }
        }
        Ok(())
    }

    /// Records the feature vectors `h` (`batch x m`). Dropout at the given
    /// rate is applied only when a generator is passed.
    pub fn encode_features(
        &self,
        g: &mut Graph,
        tweets: &[EncodedTweet],
        dropout: Option<(f64, &mut dyn RngCore)>,
    ) -> Result<NodeId, ModelError> {
        self.check_batch(tweets)?;
        let h = match &self.encoder {
            Encoder::Cnn(cnn) => {
                let table = g.param(&self.params, cnn.embedding);
                let ids = tweets.iter().flat_map(|t| t.ids.iter().copied()).collect();
                let x = g.gather(table, ids)?;
                let len = self.config.max_len;
                let mut pooled = Vec::with_capacity(cnn.convs.len());
                for conv in &cnn.convs {
                    let w = g.param(&self.params, conv.weight);
                    let b = g.param(&self.params, conv.bias);
                    let windows = g.windows(x, len, conv.width)?;
                    let pre = g.linear(windows, w)?;
                    let pre = g.add(pre, b)?;
                    let act = g.relu(pre)?;
                    pooled.push(g.max_pool(act, len - conv.width + 1)?);
                }
                g.concat_cols(pooled)?
            }
            Encoder::Mlp(mlp) => {
                let table = g.param(&self.params, mlp.embedding);
                let mut ids = Vec::new();
                let mut lengths = Vec::with_capacity(tweets.len());
                for t in tweets {
                    if t.true_length == 0 {
                        ids.push(PAD);
                        lengths.push(1);
                    } else {
                        ids.extend_from_slice(&t.ids[..t.true_length]);
                        lengths.push(t.true_length);
                    }
                }
                let x = g.gather(table, ids)?;
                let mean = g.segment_mean(x, lengths)?;
                let w = g.param(&self.params, mlp.hidden_weight);
                let b = g.param(&self.params, mlp.hidden_bias);
                let pre = g.linear(mean, w)?;
                let pre = g.add(pre, b)?;
                g.relu(pre)?
            }
        };
        match dropout {
            Some((rate, rng)) => Ok(g.dropout(h, rate, rng)?),
            None => Ok(h),
        }
    }

    /// Applies the head to features: `batch x 2` points or `batch x 6K`
    /// raw mixture parameters, in standardized space.
    pub fn head_forward(&self, g: &mut Graph, h: NodeId) -> Result<NodeId, ModelError> {
        let (wid, bid) = self.head.params();
        let w = g.param(&self.params, wid);
        let b = g.param(&self.params, bid);
        let out = g.linear(h, w)?;
        Ok(g.add(out, b)?)
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        tweets: &[EncodedTweet],
        dropout: Option<(f64, &mut dyn RngCore)>,
    ) -> Result<NodeId, ModelError> {
        let h = self.encode_features(g, tweets, dropout)?;
        self.head_forward(g, h)
    }

    /// Inference without dropout, mapped back to degrees.
    pub fn predict(&self, tweets: &[EncodedTweet]) -> Result<Vec<Prediction>, ModelError> {
        let mut out = Vec::with_capacity(tweets.len());
        for chunk in tweets.chunks(PREDICT_CHUNK) {
            let mut g = Graph::new();
            let node = self.forward(&mut g, chunk, None)?;
            let value = g.value(node);
            for r in 0..value.rows() {
                let row = value.row_slice(r);
                out.push(match self.head {
                    Head::Regression(_) => {
                        Prediction::Point(self.standardizer.inverse([row[0], row[1]]))
                    }
                    Head::Mixture(_) => {
                        Prediction::Density(self.standardizer.inverse_gmm(&convert_params(row)?))
                    }
                });
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Copy)]
enum Init {
    Embedding,
    Glorot,
    Zero,
}

/// `x_1 ++ x_2 ++ ... ++ x_L`: the embedding rows of a tweet, concatenated.
pub fn embed_concat(tweet: &EncodedTweet, embedding: &Tensor) -> Result<Vec<f64>, ModelError> {
    let vocab = embedding.rows();
    let mut out = Vec::with_capacity(tweet.ids.len() * embedding.cols());
    for &id in &tweet.ids {
        if id >= vocab {
            return Err(ModelError::TokenOutOfRange { id, vocab });
        }
        out.extend_from_slice(embedding.row_slice(id));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::gradient_check;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            embed_dim: 3,
            windows: vec![1, 2],
            filters: 2,
            mixtures: 2,
            hidden: 4,
            max_len: 4,
        }
    }

    fn tweet(ids: &[usize], true_length: usize) -> EncodedTweet {
        EncodedTweet {
            ids: ids.to_vec(),
            true_length,
        }
    }

    fn set(model: &mut NeuralModel, name: &str, data: Vec<f64>) {
        let id = model.params().find(name).unwrap();
        let t = model.params_mut().get_mut(id);
        assert_eq!(t.len(), data.len(), "{name}");
        t.data_mut().copy_from_slice(&data);
    }

    #[test]
    fn embed_concat_places_rows_in_order() {
        let e = Tensor::matrix(3, 2, vec![9.0, 9.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(
            embed_concat(&tweet(&[1, 2], 2), &e).unwrap(),
            [1.0, 2.0, 3.0, 4.0]
        );
        assert_eq!(embed_concat(&tweet(&[0, 0], 0), &e).unwrap(), [9.0; 4]);
        assert!(matches!(
            embed_concat(&tweet(&[5], 1), &e),
            Err(ModelError::TokenOutOfRange { id: 5, .. })
        ));
    }

    #[test]
    fn constant_filter_pools_to_bias() {
        let config = ModelConfig {
            windows: vec![2],
            filters: 1,
            ..tiny_config()
        };
        let mut m =
            NeuralModel::new(ModelKind::CnnL2, config, 5, Standardizer::identity(), 1).unwrap();
        set(&mut m, "conv2.weight", vec![0.0; 6]);
        set(&mut m, "conv2.bias", vec![1.0]);
        for ids in [[2, 3, 4, 0], [1, 1, 1, 1]] {
            let mut g = Graph::new();
            let h = m.encode_features(&mut g, &[tweet(&ids, 4)], None).unwrap();
            assert_eq!(g.value(h).data(), &[1.0]);
        }
    }

    #[test]
    fn single_unit_filter_takes_max_of_relu() {
        let config = ModelConfig {
            embed_dim: 1,
            windows: vec![1],
            filters: 1,
            max_len: 3,
            ..tiny_config()
        };
        let mut m =
            NeuralModel::new(ModelKind::CnnL2, config, 4, Standardizer::identity(), 1).unwrap();
        set(&mut m, "embedding", vec![0.0, 0.0, 2.0, -5.0]);
        set(&mut m, "conv1.weight", vec![1.0]);
        set(&mut m, "conv1.bias", vec![0.0]);
        // embeddings [2, -5, 3] via ids 2, 3 and a third row we overwrite
        let id = m.params().find("embedding").unwrap();
        m.params_mut().get_mut(id).data_mut()[1] = 3.0;
        let mut g = Graph::new();
        let h = m
            .encode_features(&mut g, &[tweet(&[2, 3, 1], 3)], None)
            .unwrap();
        assert_eq!(g.value(h).data(), &[3.0]);
    }

    #[test]
    fn zero_regression_weights_return_bias() {
        let mut m = NeuralModel::new(
            ModelKind::CnnL2,
            tiny_config(),
            6,
            Standardizer::identity(),
            3,
        )
        .unwrap();
        let w = m.params().find("head.weight").unwrap();
        m.params_mut().get_mut(w).fill(0.0);
        set(&mut m, "head.bias", vec![35.0, 135.0]);
        let preds = m
            .predict(&[tweet(&[2, 3, 0, 0], 2), tweet(&[5, 4, 3, 2], 4)])
            .unwrap();
        for p in preds {
            assert_eq!(p, Prediction::Point([35.0, 135.0]));
        }
    }

    #[test]
    fn zero_mdn_head_gives_standard_components() {
        let config = ModelConfig {
            mixtures: 1,
            ..tiny_config()
        };
        let mut m =
            NeuralModel::new(ModelKind::Cmdn, config, 6, Standardizer::identity(), 3).unwrap();
        let w = m.params().find("head.weight").unwrap();
        m.params_mut().get_mut(w).fill(0.0);
        let mut g = Graph::new();
        let out = m.forward(&mut g, &[tweet(&[2, 3, 0, 0], 2)], None).unwrap();
        assert_eq!(g.value(out).data(), &[0.0; 6]);
        match &m.predict(&[tweet(&[2, 3, 0, 0], 2)]).unwrap()[0] {
            Prediction::Density(gmm) => {
                assert_eq!(gmm.means(), &[[0.0, 0.0]]);
                assert_eq!(gmm.deviations(), &[[2f64.ln(), 2f64.ln()]]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mlp_is_order_invariant_and_cnn_is_not() {
        let a = tweet(&[2, 3, 4, 5], 4);
        let b = tweet(&[5, 4, 3, 2], 4);
        let mlp = NeuralModel::new(
            ModelKind::MlpL2,
            tiny_config(),
            6,
            Standardizer::identity(),
            9,
        )
        .unwrap();
        let p = mlp.predict(&[a.clone(), b.clone()]).unwrap();
        let (Prediction::Point(pa), Prediction::Point(pb)) = (&p[0], &p[1]) else {
            panic!()
        };
        assert!((pa[0] - pb[0]).abs() < 1e-12 && (pa[1] - pb[1]).abs() < 1e-12);

        let cnn = NeuralModel::new(
            ModelKind::CnnL2,
            tiny_config(),
            6,
            Standardizer::identity(),
            9,
        )
        .unwrap();
        let p = cnn.predict(&[a, b]).unwrap();
        assert_ne!(p[0], p[1], "witness pair should distinguish token order");
    }

    #[test]
    fn mlp_with_zero_hidden_weights_outputs_bias() {
        let mut m = NeuralModel::new(
            ModelKind::MlpL1,
            tiny_config(),
            6,
            Standardizer::identity(),
            2,
        )
        .unwrap();
        let w = m.params().find("mlp.hidden.weight").unwrap();
        m.params_mut().get_mut(w).fill(0.0);
        set(&mut m, "head.bias", vec![1.5, -2.5]);
        let p = m.predict(&[tweet(&[0, 0, 0, 0], 0)]).unwrap();
        assert_eq!(p[0], Prediction::Point([1.5, -2.5]));
    }

    #[test]
    fn features_match_dense_recomputation() {
        let m = NeuralModel::new(
            ModelKind::CnnL2,
            tiny_config(),
            6,
            Standardizer::identity(),
            4,
        )
        .unwrap();
        let t = tweet(&[2, 5, 1, 0], 3);
        let mut g = Graph::new();
        let h = m
            .encode_features(&mut g, std::slice::from_ref(&t), None)
            .unwrap();
        let Encoder::Cnn(cnn) = m.encoder() else {
            panic!()
        };
        let x = embed_concat(&t, m.params().get(cnn.embedding)).unwrap();
        let d = m.config().embed_dim;
        let mut expected = Vec::new();
        for conv in &cnn.convs {
            let w = m.params().get(conv.weight);
            let b = m.params().get(conv.bias);
            for j in 0..m.config().filters {
                let best = (0..=t.ids.len() - conv.width)
                    .map(|i| {
                        let window = &x[i * d..(i + conv.width) * d];
                        let pre: f64 = window
                            .iter()
                            .zip(w.row_slice(j))
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            + b.data()[j];
                        pre.max(0.0)
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
                expected.push(best);
            }
        }
        for (a, b) in g.value(h).data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn embedding_gradient_touches_only_looked_up_rows() {
        let m = NeuralModel::new(
            ModelKind::MlpL2,
            tiny_config(),
            8,
            Standardizer::identity(),
            4,
        )
        .unwrap();
        let mut g = Graph::new();
        let out = m.forward(&mut g, &[tweet(&[2, 6, 0, 0], 2)], None).unwrap();
        let loss = g.sum(out).unwrap();
        let grads = g.backward(loss).unwrap();
        let Encoder::Mlp(mlp) = m.encoder() else {
            panic!()
        };
        let ge = grads.get(mlp.embedding).unwrap();
        for row in 0..8 {
            let touched = ge.row_slice(row).iter().any(|&v| v != 0.0);
            assert_eq!(touched, row == 2 || row == 6, "row {row}");
        }
        let report = gradient_check(&mut g, loss, 1e-5).unwrap();
        assert!(report.max_rel_error < 1e-4);
    }

    #[test]
    fn rejects_mismatched_encodings() {
        let m = NeuralModel::new(
            ModelKind::CnnL2,
            tiny_config(),
            6,
            Standardizer::identity(),
            4,
        )
        .unwrap();
        assert!(m.predict(&[tweet(&[1, 2], 2)]).is_err());
        assert!(matches!(
            m.predict(&[tweet(&[1, 2, 9, 0], 3)]),
            Err(ModelError::TokenOutOfRange { id: 9, .. })
        ));
    }
}
