//! Test-set prediction, distance statistics, bootstrap intervals,
//! likelihood-threshold sweeps and error histograms.

use std::fmt::Write as _;
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{vincenty_distance, GeoPoint};
use crate::model::{Model, ModelError};
use crate::text::EncodedTweet;

/// Distances below this are placed at it before a log10 transform.
pub const LOG_FLOOR_KM: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no records to summarize")]
    Empty,
    #[error("{0} tweets but {1} reference locations")]
    Length(usize, usize),
    #[error(
        "likelihood sweep needs a density model; these records come from a point regressor and carry no likelihood"
    )]
    NoLikelihood,
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("model produced an unusable coordinate: {0}")]
    Coordinate(#[from] crate::geo::GeoError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub predicted: GeoPoint,
    /// Density at the predicted point; only density models have one.
    pub likelihood: Option<f64>,
    pub truth: GeoPoint,
    pub error_km: f64,
    /// The distance came from the spherical fallback.
    pub geodesic_fallback: bool,
}

impl PredictionRecord {
    pub fn new(predicted: GeoPoint, likelihood: Option<f64>, truth: GeoPoint) -> Self {
        let d = vincenty_distance(predicted, truth);
        Self {
            predicted,
            likelihood,
            truth,
            error_km: d.km,
            geodesic_fallback: d.fallback,
        }
    }
}

/// Predicts every tweet, sharding the work over the available cores.
/// Output order and values do not depend on the number of threads.
pub fn predict_corpus(
    model: &Model,
    tweets: &[EncodedTweet],
    truths: &[GeoPoint],
) -> Result<Vec<PredictionRecord>, EvalError> {
    if tweets.len() != truths.len() {
        return Err(EvalError::Length(tweets.len(), truths.len()));
    }
    if tweets.is_empty() {
        return Ok(Vec::new());
    }
    let workers = thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(8);
    let chunk = tweets.len().div_ceil(workers).max(64);
    let parts: Vec<Result<Vec<PredictionRecord>, EvalError>> = thread::scope(|s| {
        let handles: Vec<_> = tweets
            .chunks(chunk)
            .zip(truths.chunks(chunk))
            .map(|(t, y)| s.spawn(move || predict_chunk(model, t, y)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("prediction worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(tweets.len());
    for part in parts {
        out.extend(part?);
    }
    Ok(out)
}

fn predict_chunk(
    model: &Model,
    tweets: &[EncodedTweet],
    truths: &[GeoPoint],
) -> Result<Vec<PredictionRecord>, EvalError> {
    let preds = model.predict(tweets)?;
    preds
        .iter()
        .zip(truths)
        .map(|(p, &truth)| {
            let (q, likelihood) = p.point();
            let predicted = GeoPoint::normalized(q[0], q[1])?;
            Ok(PredictionRecord::new(predicted, likelihood, truth))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean_km: f64,
    pub median_km: f64,
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Median of an ascending slice, averaging the middle pair.
fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    median_sorted(&v)
}

pub fn summarize_distances(distances: &[f64]) -> Result<Summary, EvalError> {
    if distances.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(Summary {
        count: distances.len(),
        mean_km: mean(distances),
        median_km: median(distances),
    })
}

pub fn summarize(records: &[PredictionRecord]) -> Result<Summary, EvalError> {
    summarize_distances(&errors(records))
}

pub fn errors(records: &[PredictionRecord]) -> Vec<f64> {
    records.iter().map(|r| r.error_km).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    Mean,
    Median,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            resamples: 1000,
            level: 0.95,
            seed: 0,
        }
    }
}

/// Linear interpolation between order statistics of an ascending slice.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Percentile bootstrap interval for the mean or median of `values`.
///
/// Resampling indexes a sorted copy, so the result depends only on the
/// multiset of values and the seed.
pub fn bootstrap_ci(
    values: &[f64],
    statistic: Statistic,
    config: &BootstrapConfig,
) -> Result<(f64, f64), EvalError> {
    if values.is_empty() {
        return Err(EvalError::Empty);
    }
    if config.resamples < 100 {
        return Err(EvalError::Argument(format!(
            "bootstrap needs at least 100 resamples, got {}",
            config.resamples
        )));
    }
    if !(config.level > 0.0 && config.level < 1.0) {
        return Err(EvalError::Argument(format!(
            "confidence level {} outside (0, 1)",
            config.level
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sample = vec![0.0; n];
    let mut stats = Vec::with_capacity(config.resamples);
    for _ in 0..config.resamples {
        for s in sample.iter_mut() {
            *s = sorted[rng.random_range(0..n)];
        }
        stats.push(match statistic {
            Statistic::Mean => mean(&sample),
            Statistic::Median => {
                sample.sort_by(f64::total_cmp);
                median_sorted(&sample)
            }
        });
    }
    stats.sort_by(f64::total_cmp);
    let alpha = (1.0 - config.level) / 2.0;
    Ok((
        quantile_sorted(&stats, alpha),
        quantile_sorted(&stats, 1.0 - alpha),
    ))
}

/// Statistics of the records whose likelihood reaches `bound`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub bound: f64,
    pub retained: usize,
    pub mean_km: Option<f64>,
    pub median_km: Option<f64>,
    pub mean_ci: Option<(f64, f64)>,
    pub median_ci: Option<(f64, f64)>,
}

/// `count` log-spaced bounds from the smallest positive likelihood to the
/// largest.
pub fn default_bounds(records: &[PredictionRecord], count: usize) -> Result<Vec<f64>, EvalError> {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for r in records {
        let l = r.likelihood.ok_or(EvalError::NoLikelihood)?;
        if l > 0.0 {
            lo = lo.min(l);
            hi = hi.max(l);
        }
    }
    if count == 0 || !lo.is_finite() {
        return Err(EvalError::Argument(
            "no positive likelihoods to span".into(),
        ));
    }
    if count == 1 || lo == hi {
        return Ok(vec![lo; 1]);
    }
    let (a, b) = (lo.log10(), hi.log10());
    Ok((0..count)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64))
        .collect())
}

pub fn likelihood_sweep(
    records: &[PredictionRecord],
    bounds: &[f64],
    bootstrap: &BootstrapConfig,
) -> Result<Vec<SweepRow>, EvalError> {
    if records.iter().any(|r| r.likelihood.is_none()) {
        return Err(EvalError::NoLikelihood);
    }
    if bounds.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(EvalError::Argument("bounds must be ascending".into()));
    }
    bounds
        .iter()
        .map(|&bound| {
            let kept: Vec<f64> = records
                .iter()
                .filter(|r| r.likelihood.is_some_and(|l| l >= bound))
                .map(|r| r.error_km)
                .collect();
            if kept.is_empty() {
                return Ok(SweepRow {
                    bound,
                    retained: 0,
                    mean_km: None,
                    median_km: None,
                    mean_ci: None,
                    median_ci: None,
                });
            }
            let s = summarize_distances(&kept)?;
            Ok(SweepRow {
                bound,
                retained: kept.len(),
                mean_km: Some(s.mean_km),
                median_km: Some(s.median_km),
                mean_ci: Some(bootstrap_ci(&kept, Statistic::Mean, bootstrap)?),
                median_ci: Some(bootstrap_ci(&kept, Statistic::Median, bootstrap)?),
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    Linear,
    Log10,
}

impl Transform {
    pub fn apply(self, km: f64) -> f64 {
        match self {
            Transform::Linear => km,
            Transform::Log10 => km.max(LOG_FLOOR_KM).log10(),
        }
    }
}

/// Equal-width bins over transformed errors; `edges` has one more entry
/// than `counts`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub transform: Transform,
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect()
    }

    /// Index of the most populated bin (lowest on ties).
    pub fn peak(&self) -> usize {
        let max = self.counts.iter().copied().max().unwrap_or(0);
        self.counts.iter().position(|&c| c == max).unwrap_or(0)
    }
}

/// Bins the errors. Without an explicit `range` the bins span the observed
/// transformed values; values outside a given range land in the end bins.
pub fn export_histogram(
    records: &[PredictionRecord],
    bins: usize,
    transform: Transform,
    range: Option<(f64, f64)>,
) -> Result<Histogram, EvalError> {
    if bins == 0 {
        return Err(EvalError::Argument("at least one bin is required".into()));
    }
    let values: Vec<f64> = records
        .iter()
        .map(|r| transform.apply(r.error_km))
        .collect();
    let (mut lo, mut hi) = range.unwrap_or_else(|| {
        values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            })
    });
    if !lo.is_finite() || !hi.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi <= lo {
        (lo, hi) = (lo - 0.5, lo + 0.5);
    }
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut counts = vec![0; bins];
    for v in values {
        let i = ((v - lo) / width).floor();
        counts[(i.max(0.0) as usize).min(bins - 1)] += 1;
    }
    Ok(Histogram {
        transform,
        edges,
        counts,
    })
}

/// `# key=value` comment lines identifying the run that produced a file.
pub fn header_lines(config_hash: &str, seed: u64) -> String {
    format!("# config_hash={config_hash}\n# seed={seed}\n")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn records_csv(records: &[PredictionRecord], header: &str) -> String {
    let mut out = String::from(header);
    out.push_str("pred_lat,pred_lon,likelihood,true_lat,true_lon,error_km,geodesic_fallback\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.predicted.lat(),
            r.predicted.lon(),
            opt(r.likelihood),
            r.truth.lat(),
            r.truth.lon(),
            r.error_km,
            r.geodesic_fallback
        );
    }
    out
}

pub fn sweep_csv(rows: &[SweepRow], header: &str) -> String {
    let mut out = String::from(header);
    out.push_str(
        "bound,retained,mean_km,mean_ci_low,mean_ci_high,median_km,median_ci_low,median_ci_high\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.bound,
            r.retained,
            opt(r.mean_km),
            opt(r.mean_ci.map(|c| c.0)),
            opt(r.mean_ci.map(|c| c.1)),
            opt(r.median_km),
            opt(r.median_ci.map(|c| c.0)),
            opt(r.median_ci.map(|c| c.1)),
        );
    }
    out
}

pub fn histogram_csv(h: &Histogram, header: &str) -> String {
    let mut out = String::from(header);
    let unit = match h.transform {
        Transform::Linear => "km",
        Transform::Log10 => "log10_km",
    };
    let _ = writeln!(out, "bin_low_{unit},bin_high_{unit},count");
    for (w, c) in h.edges.windows(2).zip(&h.counts) {
        let _ = writeln!(out, "{},{},{}", w[0], w[1], c);
    }
    out
}

/// Aggregate statistics written next to the per-record CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub config_hash: String,
    pub seed: u64,
    pub model: String,
    pub count: usize,
    pub mean_km: f64,
    pub median_km: f64,
    pub mean_ci: (f64, f64),
    pub median_ci: (f64, f64),
    pub ci_level: f64,
    pub geodesic_fallbacks: usize,
}

impl EvalSummary {
    pub fn new(
        model: &str,
        records: &[PredictionRecord],
        bootstrap: &BootstrapConfig,
        config_hash: &str,
        seed: u64,
    ) -> Result<Self, EvalError> {
        let d = errors(records);
        let s = summarize_distances(&d)?;
        Ok(Self {
            config_hash: config_hash.to_string(),
            seed,
            model: model.to_string(),
            count: s.count,
            mean_km: s.mean_km,
            median_km: s.median_km,
            mean_ci: bootstrap_ci(&d, Statistic::Mean, bootstrap)?,
            median_ci: bootstrap_ci(&d, Statistic::Median, bootstrap)?,
            ci_level: bootstrap.level,
            geodesic_fallbacks: records.iter().filter(|r| r.geodesic_fallback).count(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes") + "\n"
    }
}
