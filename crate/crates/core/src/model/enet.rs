use serde::{Deserialize, Serialize};

use super::{ModelError, Standardizer};
use crate::text::EncodedTweet;

const POWER_ITERATIONS: usize = 100;
/// Power iteration approaches the top singular value from below.
const LIPSCHITZ_MARGIN: f64 = 1.05;

/// `sign(x) * max(|x| - t, 0)`.
pub fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Sparse token counts over the unpadded positions of a tweet, sorted by id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BagOfWords {
    pub entries: Vec<(usize, f64)>,
}

impl BagOfWords {
    pub fn from_encoded(tweet: &EncodedTweet) -> Self {
        let mut ids: Vec<usize> = tweet.ids[..tweet.true_length].to_vec();
        ids.sort_unstable();
        let mut entries: Vec<(usize, f64)> = Vec::new();
        for id in ids {
            match entries.last_mut() {
                Some((last, count)) if *last == id => *count += 1.0,
                _ => entries.push((id, 1.0)),
            }
        }
        Self { entries }
    }

    fn dot(&self, w: &[f64]) -> f64 {
        self.entries
            .iter()
            .map(|&(j, v)| w.get(j).copied().unwrap_or(0.0) * v)
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnetConfig {
    /// Weight of the `l1` penalty.
    pub lambda1: f64,
    /// Weight of the squared `l2` penalty.
    pub lambda2: f64,
    pub max_iter: usize,
    /// Stop when no coefficient moves more than this in one step.
    pub tol: f64,
}

impl Default for EnetConfig {
    fn default() -> Self {
        Self {
            lambda1: 1e-4,
            lambda2: 1e-5,
            max_iter: 5000,
            tol: 1e-7,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnetFit {
    pub iterations: usize,
    pub converged: bool,
    /// Final objective per output axis.
    pub objective: [f64; 2],
    pub step_size: f64,
    /// Objective of the iterate after every step, starting from zero weights.
    pub trace: [Vec<f64>; 2],
}

/// Linear model on bag-of-words counts, one coefficient vector per axis,
/// fitted on standardized targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnetModel {
    pub config: EnetConfig,
    pub vocab_size: usize,
    pub weights: [Vec<f64>; 2],
    pub intercept: [f64; 2],
    pub standardizer: Standardizer,
}

impl EnetModel {
    /// Proximal gradient minimization of
    /// `(1/2n) |y - Xw - b|^2 + lambda1 |w|_1 + lambda2 |w|^2`
    /// with an unpenalized intercept `b` and step `1/L`, accelerated with
    /// the monotone variant of FISTA so the objective never increases.
    pub fn fit(
        docs: &[BagOfWords],
        targets: &[[f64; 2]],
        vocab_size: usize,
        config: EnetConfig,
    ) -> Result<(Self, EnetFit), ModelError> {
        if docs.is_empty() {
            return Err(ModelError::EmptyTraining);
        }
        if docs.len() != targets.len() {
            return Err(ModelError::Config(format!(
                "{} documents but {} targets",
                docs.len(),
                targets.len()
            )));
        }
        if config.lambda1 < 0.0 || config.lambda2 < 0.0 || config.max_iter == 0 {
            return Err(ModelError::Config(format!(
                "invalid elastic net settings {config:?}"
            )));
        }
        if let Some(&(id, _)) = docs
            .iter()
            .flat_map(|d| d.entries.iter())
            .find(|(id, _)| *id >= vocab_size)
        {
            return Err(ModelError::TokenOutOfRange {
                id,
                vocab: vocab_size,
            });
        }
        let standardizer = Standardizer::fit(targets)?;
        let n = docs.len() as f64;
        let lipschitz = top_singular_value_sq(docs, vocab_size) / n + 2.0 * config.lambda2;
        let step = 1.0 / lipschitz;

        let mut weights = [vec![0.0; vocab_size], vec![0.0; vocab_size]];
        let mut intercept = [0.0; 2];
        let mut fit = EnetFit {
            iterations: 0,
            converged: false,
            objective: [0.0; 2],
            step_size: step,
            trace: [Vec::new(), Vec::new()],
        };
        for axis in 0..2 {
            let y: Vec<f64> = targets
                .iter()
                .map(|t| standardizer.forward(*t)[axis])
                .collect();
            let (x, f, iterations, converged) = solve_axis(docs, &y, vocab_size, &config, step)?;
            weights[axis] = x[..vocab_size].to_vec();
            intercept[axis] = x[vocab_size];
            fit.iterations = fit.iterations.max(iterations);
            fit.converged = if axis == 0 {
                converged
            } else {
                fit.converged && converged
            };
            fit.objective[axis] = *f.last().expect("initial objective recorded");
            fit.trace[axis] = f;
        }
        Ok((
            Self {
                config,
                vocab_size,
                weights,
                intercept,
                standardizer,
            },
            fit,
        ))
    }

    /// Prediction in degrees.
    pub fn predict(&self, doc: &BagOfWords) -> [f64; 2] {
        let z = [
            doc.dot(&self.weights[0]) + self.intercept[0],
            doc.dot(&self.weights[1]) + self.intercept[1],
        ];
        self.standardizer.inverse(z)
    }

    /// Number of nonzero coefficients per axis.
    pub fn nonzeros(&self) -> [usize; 2] {
        [0, 1].map(|a| self.weights[a].iter().filter(|w| **w != 0.0).count())
    }
}

/// Runs one output axis; `x` holds the weights followed by the intercept.
fn solve_axis(
    docs: &[BagOfWords],
    y: &[f64],
    vocab_size: usize,
    config: &EnetConfig,
    step: f64,
) -> Result<(Vec<f64>, Vec<f64>, usize, bool), ModelError> {
    let n = docs.len() as f64;
    let dim = vocab_size + 1;
    let value = |x: &[f64]| objective(docs, y, &x[..vocab_size], x[vocab_size], config);
    let mut x = vec![0.0; dim];
    let mut fx = value(&x);
    let mut trace = vec![fx];
    let mut anchor = x.clone();
    let mut t = 1.0f64;
    let mut grad = vec![0.0; dim];
    for iteration in 1..=config.max_iter {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (doc, &yi) in docs.iter().zip(y) {
            let r = doc.dot(&anchor[..vocab_size]) + anchor[vocab_size] - yi;
            for &(j, v) in &doc.entries {
                grad[j] += r * v;
            }
            grad[vocab_size] += r;
        }
        let mut z = vec![0.0; dim];
        let mut moved = 0.0f64;
        for j in 0..dim {
            let next = if j == vocab_size {
                anchor[j] - step * grad[j] / n
            } else {
                let g = grad[j] / n + 2.0 * config.lambda2 * anchor[j];
                soft_threshold(anchor[j] - step * g, step * config.lambda1)
            };
            moved = moved.max((next - anchor[j]).abs());
            z[j] = next;
        }
        let fz = value(&z);
        if !fz.is_finite() {
            return Err(ModelError::Diverged {
                step: iteration,
                objective: fz,
                step_size: step,
            });
        }
        let previous = x.clone();
        if fz <= fx {
            x.clone_from(&z);
            fx = fz;
        }
        trace.push(fx);
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        for j in 0..dim {
            anchor[j] =
                x[j] + t / t_next * (z[j] - x[j]) + (t - 1.0) / t_next * (x[j] - previous[j]);
        }
        t = t_next;
        if moved < config.tol {
            return Ok((x, trace, iteration, true));
        }
    }
    Ok((x, trace, config.max_iter, false))
}

fn objective(docs: &[BagOfWords], y: &[f64], w: &[f64], b: f64, config: &EnetConfig) -> f64 {
    let n = docs.len() as f64;
    let rss: f64 = docs
        .iter()
        .zip(y)
        .map(|(d, &yi)| (d.dot(w) + b - yi).powi(2))
        .sum();
    let l1: f64 = w.iter().map(|v| v.abs()).sum();
    let l2: f64 = w.iter().map(|v| v * v).sum();
    rss / (2.0 * n) + config.lambda1 * l1 + config.lambda2 * l2
}

/// Squared top singular value of `[X 1]`, by power iteration on its Gram
/// matrix, inflated by a small safety margin.
fn top_singular_value_sq(docs: &[BagOfWords], vocab_size: usize) -> f64 {
    let dim = vocab_size + 1;
    let mut v = vec![1.0 / (dim as f64).sqrt(); dim];
    let mut estimate = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let mut next = vec![0.0; dim];
        for doc in docs {
            let xv = doc.dot(&v[..vocab_size]) + v[vocab_size];
            for &(j, val) in &doc.entries {
                next[j] += xv * val;
            }
            next[vocab_size] += xv;
        }
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        estimate = norm;
        v = next.into_iter().map(|x| x / norm).collect();
    }
    estimate * LIPSCHITZ_MARGIN
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bow(ids: &[usize]) -> BagOfWords {
        BagOfWords::from_encoded(&EncodedTweet {
            ids: ids.to_vec(),
            true_length: ids.len(),
        })
    }

    #[test]
    fn soft_threshold_values() {
        assert_eq!(soft_threshold(1.5, 1.0), 0.5);
        assert_eq!(soft_threshold(-1.5, 1.0), -0.5);
        assert_eq!(soft_threshold(0.3, 1.0), 0.0);
    }

    #[test]
    fn bag_counts_skip_padding() {
        let b = BagOfWords::from_encoded(&EncodedTweet {
            ids: vec![3, 2, 3, 0, 0],
            true_length: 3,
        });
        assert_eq!(b.entries, [(2, 1.0), (3, 2.0)]);
    }

    #[test]
    fn huge_l1_gives_constant_mean() {
        let docs = vec![bow(&[2]), bow(&[3]), bow(&[2, 3])];
        let targets = [[30.0, 130.0], [40.0, 140.0], [35.0, 138.0]];
        let config = EnetConfig {
            lambda1: 10.0,
            ..EnetConfig::default()
        };
        let (m, fit) = EnetModel::fit(&docs, &targets, 4, config).unwrap();
        assert!(fit.converged);
        for trace in &fit.trace {
            assert!(trace.windows(2).all(|w| w[1] <= w[0]));
        }
        assert_eq!(m.nonzeros(), [0, 0]);
        let p = m.predict(&bow(&[2]));
        assert!((p[0] - 35.0).abs() < 1e-6 && (p[1] - 136.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            EnetModel::fit(&[], &[], 4, EnetConfig::default()),
            Err(ModelError::EmptyTraining)
        ));
        assert!(EnetModel::fit(&[bow(&[9])], &[[0.0, 0.0]], 4, EnetConfig::default()).is_err());
    }
}
