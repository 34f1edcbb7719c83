//! Losses, the Adam optimizer and the epoch loop with dev-set selection.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusRecord;
use crate::diffcore::{DiffError, Gradients, Graph, NodeId, Params, Tensor};
use crate::geo::{vincenty_distance, GeoPoint};
use crate::mixture::{nll_graph, MixtureError};
use crate::model::{
    constant_baselines, BagOfWords, EnetConfig, EnetModel, LossKind, Model, ModelConfig,
    ModelError, ModelKind, NeuralModel, Standardizer,
};
use crate::text::{encode, tokenize, EncodedTweet, Vocab};

const EVAL_CHUNK: usize = 256;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("{what}: {left} rows vs {right} rows")]
    ShapeMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Mixture(#[from] MixtureError),
}

/// Encoded tweets with their coordinates in degrees.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub tweets: Vec<EncodedTweet>,
    pub targets: Vec<[f64; 2]>,
}

impl Dataset {
    pub fn new(tweets: Vec<EncodedTweet>, targets: Vec<[f64; 2]>) -> Result<Self, TrainError> {
        if tweets.len() != targets.len() {
            return Err(TrainError::ShapeMismatch {
                what: "dataset",
                left: tweets.len(),
                right: targets.len(),
            });
        }
        Ok(Self { tweets, targets })
    }

    pub fn len(&self) -> usize {
        self.tweets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tweets.is_empty()
    }

    /// Tokenizes and encodes corpus records against `vocab`.
    pub fn from_records(records: &[CorpusRecord], vocab: &Vocab, max_len: usize) -> Self {
        Self {
            tweets: records
                .iter()
                .map(|r| encode(&tokenize(&r.text), vocab, max_len))
                .collect(),
            targets: records.iter().map(|r| [r.lat, r.lon]).collect(),
        }
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            tweets: idx.iter().map(|&i| self.tweets[i].clone()).collect(),
            targets: idx.iter().map(|&i| self.targets[i]).collect(),
        }
    }
}

fn check_pairs(pred: &[[f64; 2]], y: &[[f64; 2]]) -> Result<(), TrainError> {
    if pred.len() != y.len() {
        return Err(TrainError::ShapeMismatch {
            what: "loss",
            left: pred.len(),
            right: y.len(),
        });
    }
    Ok(())
}

/// `sum_n |y_n - yhat_n|^2`.
pub fn l2_loss(pred: &[[f64; 2]], y: &[[f64; 2]]) -> Result<f64, TrainError> {
    check_pairs(pred, y)?;
    Ok(pred
        .iter()
        .zip(y)
        .map(|(p, t)| (p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2))
        .sum())
}

/// `sum_n sum_q |y_nq - yhat_nq|`.
pub fn l1_loss(pred: &[[f64; 2]], y: &[[f64; 2]]) -> Result<f64, TrainError> {
    check_pairs(pred, y)?;
    Ok(pred
        .iter()
        .zip(y)
        .map(|(p, t)| (p[0] - t[0]).abs() + (p[1] - t[1]).abs())
        .sum())
}

/// Records the summed loss of `output` (`batch x 2` points or `batch x 6K`
/// mixture parameters) against `targets`.
pub fn loss_graph(
    g: &mut Graph,
    output: NodeId,
    targets: &[[f64; 2]],
    loss: LossKind,
) -> Result<NodeId, TrainError> {
    if loss == LossKind::Nll {
        return Ok(nll_graph(g, output, targets)?);
    }
    let rows = g.value(output).rows();
    if rows != targets.len() || g.value(output).cols() != 2 {
        return Err(TrainError::ShapeMismatch {
            what: "loss",
            left: rows,
            right: targets.len(),
        });
    }
    let y = g.constant(Tensor::matrix(
        targets.len(),
        2,
        targets.iter().flat_map(|t| t.iter().copied()).collect(),
    )?);
    let r = g.sub(output, y)?;
    let per = match loss {
        LossKind::L1 => g.abs(r)?,
        _ => g.square(r)?,
    };
    Ok(g.sum(per)?)
}

/// Forward pass plus summed loss on standardized targets.
pub fn batch_loss(
    model: &NeuralModel,
    g: &mut Graph,
    tweets: &[EncodedTweet],
    targets_z: &[[f64; 2]],
    dropout: Option<(f64, &mut dyn RngCore)>,
) -> Result<NodeId, TrainError> {
    let loss = model
        .kind()
        .loss()
        .ok_or_else(|| TrainError::Config(format!("{} has no training loss", model.kind())))?;
    let out = model.forward(g, tweets, dropout)?;
    loss_graph(g, out, targets_z, loss)
}

/// Adam moments and step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
    /// Steps skipped because a gradient was not finite.
    pub skipped: usize,
}

impl AdamState {
    pub fn new(params: &Params, lr: f64) -> Self {
        let zeros: Vec<Tensor> = params
            .iter()
            .map(|(_, _, t)| Tensor::zeros(t.shape().to_vec()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr,
            skipped: 0,
        }
    }
}

/// One bias-corrected Adam update. Parameters without a gradient are
/// treated as having a zero gradient. Returns `false`, leaving everything
/// untouched, when any gradient is not finite.
pub fn adam_step(params: &mut Params, grads: &Gradients, state: &mut AdamState) -> bool {
    if !grads.all_finite() {
        state.skipped += 1;
        return false;
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let i = id.index();
        let g = grads.get(id);
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let p = params.get_mut(id);
        for j in 0..p.len() {
            let gj = g.map_or(0.0, |g| g.data()[j]);
            let mj = state.beta1 * m.data()[j] + (1.0 - state.beta1) * gj;
            let vj = state.beta2 * v.data()[j] + (1.0 - state.beta2) * gj * gj;
            m.data_mut()[j] = mj;
            v.data_mut()[j] = vj;
            p.data_mut()[j] -= state.lr * (mj / c1) / ((vj / c2).sqrt() + state.eps);
        }
    }
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub seed: u64,
    /// Must match the model kind when given.
    pub loss: Option<LossKind>,
    /// Epochs without dev improvement before stopping.
    pub patience: usize,
    pub enet: EnetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            dropout: 0.2,
            seed: 1,
            loss: None,
            patience: 10,
            enet: EnetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, kind: ModelKind) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be >= 0", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if let Some(loss) = self.loss {
            if kind.loss() != Some(loss) {
                return bad(format!("loss {loss:?} does not fit model {kind}"));
            }
        }
        Ok(())
    }
}

/// One row of the training history.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-record loss over the epoch's mini-batches (with dropout).
    pub train_loss: f64,
    /// Mean per-record loss on dev without dropout.
    pub dev_loss: f64,
    pub dev_median_km: f64,
    pub dev_mean_km: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// The dev-selected model.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub skipped_steps: usize,
    /// Set when training stopped on a non-finite loss.
    pub aborted: Option<String>,
}

/// Losses are computed on z-scored coordinates, so they are comparable
/// across corpora but not in degrees.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,dev_loss,dev_median_km,dev_mean_km\n");
    for r in history {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.epoch, r.train_loss, r.dev_loss, r.dev_median_km, r.dev_mean_km
        );
    }
    out
}

/// Mean per-record loss over `data` with dropout off.
pub fn dataset_loss(model: &NeuralModel, data: &Dataset) -> Result<f64, TrainError> {
    let z: Vec<[f64; 2]> = data
        .targets
        .iter()
        .map(|t| model.standardizer().forward(*t))
        .collect();
    let mut total = 0.0;
    for (tweets, targets) in data.tweets.chunks(EVAL_CHUNK).zip(z.chunks(EVAL_CHUNK)) {
        let mut g = Graph::new();
        let loss = batch_loss(model, &mut g, tweets, targets, None)?;
        total += g.value(loss).data()[0];
    }
    Ok(total / data.len() as f64)
}

/// Mean and median Vincenty error (km) of the point predictions.
pub fn distance_stats(model: &Model, data: &Dataset) -> Result<(f64, f64), TrainError> {
    let preds = model.predict(&data.tweets)?;
    let mut d: Vec<f64> = preds
        .iter()
        .zip(&data.targets)
        .map(|(p, t)| {
            let (q, _) = p.point();
            match (
                GeoPoint::normalized(q[0], q[1]),
                GeoPoint::normalized(t[0], t[1]),
            ) {
                (Ok(a), Ok(b)) => vincenty_distance(a, b).km,
                _ => f64::NAN,
            }
        })
        .collect();
    if d.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let median = if n % 2 == 1 {
        d[n / 2]
    } else {
        (d[n / 2 - 1] + d[n / 2]) / 2.0
    };
    Ok((mean, median))
}

/// Fits `kind` on `train`, selecting the epoch with the lowest dev loss.
///
/// Baselines and the elastic net are fitted in closed form or by their own
/// solver and report a single history row whose losses are the mean squared
/// error on z-scored coordinates.
pub fn train(
    kind: ModelKind,
    model_config: &ModelConfig,
    vocab_size: usize,
    train_set: &Dataset,
    dev_set: &Dataset,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    if train_set.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if dev_set.is_empty() {
        return Err(TrainError::EmptySplit("dev"));
    }
    config.validate(kind)?;
    let standardizer = Standardizer::fit(&train_set.targets)?;
    let mse = |model: &Model, data: &Dataset| -> Result<f64, TrainError> {
        let z = |p: [f64; 2]| standardizer.forward(p);
        let pred: Vec<[f64; 2]> = model
            .predict(&data.tweets)?
            .iter()
            .map(|p| z(p.point().0))
            .collect();
        let y: Vec<[f64; 2]> = data.targets.iter().map(|t| z(*t)).collect();
        Ok(l2_loss(&pred, &y)? / data.len() as f64)
    };
    let single = |model: Model| -> Result<TrainOutcome, TrainError> {
        let (dev_mean_km, dev_median_km) = distance_stats(&model, dev_set)?;
        Ok(TrainOutcome {
            history: vec![EpochRecord {
                epoch: 1,
                train_loss: mse(&model, train_set)?,
                dev_loss: mse(&model, dev_set)?,
                dev_median_km,
                dev_mean_km,
            }],
            model,
            best_epoch: 1,
            skipped_steps: 0,
            aborted: None,
        })
    };
    match kind {
        ModelKind::Mean | ModelKind::Median => {
            let (mean, median) = constant_baselines(&train_set.targets)?;
            single(Model::Constant(if kind == ModelKind::Mean {
                mean
            } else {
                median
            }))
        }
        ModelKind::Enet => {
            let docs: Vec<BagOfWords> = train_set
                .tweets
                .iter()
                .map(BagOfWords::from_encoded)
                .collect();
            let (model, _) =
                EnetModel::fit(&docs, &train_set.targets, vocab_size, config.enet.clone())?;
            single(Model::Enet(model))
        }
        _ => train_neural(kind, model_config, vocab_size, train_set, dev_set, config),
    }
}

fn train_neural(
    kind: ModelKind,
    model_config: &ModelConfig,
    vocab_size: usize,
    train_set: &Dataset,
    dev_set: &Dataset,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    let standardizer = Standardizer::fit(&train_set.targets)?;
    let mut model = NeuralModel::new(
        kind,
        model_config.clone(),
        vocab_size,
        standardizer,
        config.seed,
    )?;
    let z: Vec<[f64; 2]> = train_set
        .targets
        .iter()
        .map(|t| standardizer.forward(*t))
        .collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed_0001));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed_0002));
    let mut adam = AdamState::new(model.params(), config.learning_rate);

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Params)> = None;
    let mut since_best = 0;
    let mut aborted = None;

    'epochs: for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for (step, idx) in order.chunks(config.batch_size).enumerate() {
            let tweets: Vec<EncodedTweet> =
                idx.iter().map(|&i| train_set.tweets[i].clone()).collect();
            let targets: Vec<[f64; 2]> = idx.iter().map(|&i| z[i]).collect();
            let mut g = Graph::new();
            let dropout: Option<(f64, &mut dyn RngCore)> = if config.dropout > 0.0 {
                Some((config.dropout, &mut dropout_rng))
            } else {
                None
            };
            let sum = batch_loss(&model, &mut g, &tweets, &targets, dropout)?;
            let value = g.value(sum).data()[0];
            if !value.is_finite() {
                aborted = Some(format!(
                    "non-finite training loss {value} at epoch {epoch}, step {}",
                    step + 1
                ));
                break 'epochs;
            }
            total += value;
            let mean = g.scale(sum, 1.0 / idx.len() as f64)?;
            let grads = g.backward(mean)?;
            adam_step(model.params_mut(), &grads, &mut adam);
        }
        let dev_loss = dataset_loss(&model, dev_set)?;
        let (dev_mean_km, dev_median_km) = distance_stats(&Model::Neural(model.clone()), dev_set)?;
        history.push(EpochRecord {
            epoch,
            train_loss: total / train_set.len() as f64,
            dev_loss,
            dev_median_km,
            dev_mean_km,
        });
        if !dev_loss.is_finite() {
            aborted = Some(format!("non-finite dev loss at epoch {epoch}"));
            break;
        }
        if best.as_ref().is_none_or(|(b, _, _)| dev_loss < *b) {
            best = Some((dev_loss, epoch, model.params().clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    let best_epoch = match best {
        Some((_, epoch, params)) => {
            *model.params_mut() = params;
            epoch
        }
        None => {
            // aborted during the first epoch: keep the initialization
            let fresh = NeuralModel::new(
                kind,
                model_config.clone(),
                vocab_size,
                standardizer,
                config.seed,
            )?;
            model = fresh;
            0
        }
    };
    Ok(TrainOutcome {
        model: Model::Neural(model),
        history,
        best_epoch,
        skipped_steps: adam.skipped,
        aborted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{gradient_check, Gradients};

    #[test]
    fn loss_values() {
        assert_eq!(l2_loss(&[[0.0, 0.0]], &[[1.0, 2.0]]).unwrap(), 5.0);
        assert_eq!(l1_loss(&[[0.0, 0.0]], &[[1.0, 2.0]]).unwrap(), 3.0);
        assert_eq!(l2_loss(&[[3.0, 4.0]], &[[3.0, 4.0]]).unwrap(), 0.0);
        let one = l2_loss(&[[0.5, 0.0]], &[[1.0, 2.0]]).unwrap();
        let two = l2_loss(&[[0.5, 0.0]; 2], &[[1.0, 2.0]; 2]).unwrap();
        assert_eq!(two, 2.0 * one);
        assert!(l1_loss(&[[0.0, 0.0]], &[]).is_err());
    }

    #[test]
    fn outlier_hurts_l2_more() {
        let pred = [[0.0, 0.0]; 3];
        let clean = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let mut dirty = clean;
        dirty[2] = [100.0, 100.0];
        let l1_ratio = l1_loss(&pred, &dirty).unwrap() / l1_loss(&pred, &clean).unwrap();
        let l2_ratio = l2_loss(&pred, &dirty).unwrap() / l2_loss(&pred, &clean).unwrap();
        assert!(l2_ratio > l1_ratio);
    }

    #[test]
    fn graph_losses_match_values() {
        let pred = [[0.3, -1.0], [2.0, 0.5]];
        let y = [[1.0, 2.0], [-1.0, 0.25]];
        for (kind, expect) in [
            (LossKind::L1, l1_loss(&pred, &y).unwrap()),
            (LossKind::L2, l2_loss(&pred, &y).unwrap()),
        ] {
            let mut g = Graph::new();
            let p = g.constant(Tensor::matrix(2, 2, vec![0.3, -1.0, 2.0, 0.5]).unwrap());
            let l = loss_graph(&mut g, p, &y, kind).unwrap();
            assert!((g.value(l).data()[0] - expect).abs() < 1e-12);
        }
        let mut g = Graph::new();
        let p = g.constant(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        assert!(loss_graph(&mut g, p, &y, LossKind::L2).is_err());
    }

    fn scalar_param(x: f64) -> (Params, crate::diffcore::ParamId) {
        let mut p = Params::new();
        let id = p.add("x", Tensor::scalar(x));
        (p, id)
    }

    fn grad_of(params: &Params, f: impl Fn(&mut Graph, NodeId) -> NodeId) -> Gradients {
        let mut g = Graph::new();
        let x = g.param(params, params.ids().next().unwrap());
        let loss = f(&mut g, x);
        g.backward(loss).unwrap()
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        for g0 in [0.5, -3.0, 1e-3] {
            let (mut p, id) = scalar_param(1.0);
            let mut state = AdamState::new(&p, 0.01);
            let grads = grad_of(&p, |g, x| g.scale(x, g0).unwrap());
            assert!(adam_step(&mut p, &grads, &mut state));
            let moved = 1.0 - p.get(id).data()[0];
            assert!((moved - 0.01 * g0.signum()).abs() < 1e-7, "{moved}");
        }
    }

    #[test]
    fn zero_gradient_keeps_params_and_counts_step() {
        let (mut p, id) = scalar_param(2.0);
        let mut state = AdamState::new(&p, 0.1);
        let grads = grad_of(&p, |g, x| g.scale(x, 0.0).unwrap());
        adam_step(&mut p, &grads, &mut state);
        assert_eq!(p.get(id).data()[0], 2.0);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn non_finite_gradient_is_skipped() {
        let (mut p, id) = scalar_param(0.0);
        let mut state = AdamState::new(&p, 0.1);
        // d/dx log(x) at 0 is infinite
        let grads = grad_of(&p, |g, x| g.log(x).unwrap());
        assert!(!adam_step(&mut p, &grads, &mut state));
        assert_eq!(state.skipped, 1);
        assert_eq!(state.t, 0);
        assert_eq!(p.get(id).data()[0], 0.0);
    }

    #[test]
    fn adam_minimizes_quadratic_bowl() {
        let (mut p, id) = scalar_param(3.0);
        let mut state = AdamState::new(&p, 0.05);
        let mut steps = 0;
        while p.get(id).data()[0].abs() >= 1e-3 {
            let grads = grad_of(&p, |g, x| g.square(x).unwrap());
            adam_step(&mut p, &grads, &mut state);
            steps += 1;
            assert!(steps < 5000, "no convergence");
        }
    }

    fn toy_data(n: usize, seed: u64) -> Dataset {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tweets = Vec::new();
        let mut targets = Vec::new();
        for _ in 0..n {
            let w = rng.random_range(2..6usize);
            tweets.push(EncodedTweet {
                ids: vec![w, 1, 0, 0],
                true_length: 2,
            });
            targets.push([
                30.0 + w as f64,
                130.0 + 2.0 * w as f64 + rng.random_range(-0.1..0.1),
            ]);
        }
        Dataset::new(tweets, targets).unwrap()
    }

    fn tiny() -> ModelConfig {
        ModelConfig {
            embed_dim: 4,
            windows: vec![1, 2],
            filters: 4,
            mixtures: 2,
            hidden: 6,
            max_len: 4,
        }
    }

    #[test]
    fn zero_learning_rate_keeps_initialization() {
        let data = toy_data(40, 1);
        let config = TrainConfig {
            epochs: 2,
            learning_rate: 0.0,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let out = train(ModelKind::CnnL2, &tiny(), 6, &data, &data, &config).unwrap();
        let init = NeuralModel::new(
            ModelKind::CnnL2,
            tiny(),
            6,
            Standardizer::fit(&data.targets).unwrap(),
            config.seed,
        )
        .unwrap();
        let Model::Neural(n) = out.model else {
            panic!()
        };
        assert_eq!(n.params(), init.params());
    }

    #[test]
    fn replay_is_identical_and_selection_is_best() {
        let data = toy_data(60, 2);
        let config = TrainConfig {
            epochs: 6,
            batch_size: 16,
            learning_rate: 0.01,
            ..TrainConfig::default()
        };
        let a = train(ModelKind::Cmdn, &tiny(), 6, &data, &data, &config).unwrap();
        let b = train(ModelKind::Cmdn, &tiny(), 6, &data, &data, &config).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(history_csv(&a.history), history_csv(&b.history));
        let best = a.history[a.best_epoch - 1].dev_loss;
        assert!(best <= a.history.last().unwrap().dev_loss);
        let Model::Neural(n) = &a.model else { panic!() };
        assert_eq!(dataset_loss(n, &data).unwrap(), best);
        assert!(a.history[5].train_loss < a.history[0].train_loss);
    }

    #[test]
    fn every_loss_kind_has_exact_gradients() {
        let data = toy_data(5, 3);
        for kind in [
            ModelKind::CnnL1,
            ModelKind::CnnL2,
            ModelKind::MlpL2,
            ModelKind::Cmdn,
        ] {
            let s = Standardizer::fit(&data.targets).unwrap();
            let m = NeuralModel::new(kind, tiny(), 6, s, 7).unwrap();
            let z: Vec<_> = data.targets.iter().map(|t| s.forward(*t)).collect();
            let mut g = Graph::new();
            let loss = batch_loss(&m, &mut g, &data.tweets, &z, None).unwrap();
            let report = gradient_check(&mut g, loss, 1e-5).unwrap();
            assert!(
                report.max_rel_error < 1e-4,
                "{kind}: {}",
                report.max_rel_error
            );
        }
    }

    #[test]
    fn mismatched_loss_is_rejected() {
        let config = TrainConfig {
            loss: Some(LossKind::L1),
            ..TrainConfig::default()
        };
        assert!(config.validate(ModelKind::CnnL2).is_err());
        assert!(config.validate(ModelKind::CnnL1).is_ok());
        let data = toy_data(3, 1);
        let empty = Dataset::default();
        assert!(matches!(
            train(
                ModelKind::Mean,
                &tiny(),
                6,
                &data,
                &empty,
                &TrainConfig::default()
            ),
            Err(TrainError::EmptySplit("dev"))
        ));
    }
}
