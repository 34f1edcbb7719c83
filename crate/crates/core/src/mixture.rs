//! Bivariate Gaussian mixtures: conversion from raw network outputs,
//! log-densities, the negative log-likelihood loss, mode approximation and
//! sampling.
//!
//! The density formulas are written once against [`MixtureAlgebra`]. The
//! same code evaluates plain `f64` values ([`Scalars`]) and records
//! differentiable operations on a [`Graph`] ([`GraphAlgebra`]), so the
//! training loss and the reported densities cannot drift apart.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::{log_sum_exp, softplus, DiffError, Graph, NodeId, Tensor};

/// Raw parameters per component: `(pi, mu1, mu2, sigma1, sigma2, rho)`.
pub const PARAMS_PER_COMPONENT: usize = 6;
pub const SIGMA_FLOOR: f64 = 1e-6;
pub const RHO_LIMIT: f64 = 1.0 - 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MixtureError {
    #[error("raw parameter vector of length {0} is not a positive multiple of 6")]
    BadLength(usize),
    #[error("raw parameters must be finite")]
    NonFinite,
    #[error("invalid mixture: {0}")]
    Invalid(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Graph(#[from] DiffError),
}

/// K-component bivariate Gaussian mixture.
///
/// Serializes as parallel arrays `{"pi": [..], "mu": [[..]], "sigma": [[..]], "rho": [..]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gmm2D {
    pi: Vec<f64>,
    mu: Vec<[f64; 2]>,
    sigma: Vec<[f64; 2]>,
    rho: Vec<f64>,
}

impl Gmm2D {
    /// Validates the mixture. Weights within `1e-9` of summing to one are
    /// renormalized.
    pub fn new(
        pi: Vec<f64>,
        mu: Vec<[f64; 2]>,
        sigma: Vec<[f64; 2]>,
        rho: Vec<f64>,
    ) -> Result<Self, MixtureError> {
        let k = pi.len();
        if k == 0 || mu.len() != k || sigma.len() != k || rho.len() != k {
            return Err(MixtureError::Invalid(format!(
                "component arrays have lengths {}, {}, {}, {}",
                k,
                mu.len(),
                sigma.len(),
                rho.len()
            )));
        }
        let total: f64 = pi.iter().sum();
        if pi
            .iter()
            .any(|&p| !(p > 0.0 && p < 1.0 || k == 1 && p == 1.0))
        {
            return Err(MixtureError::Invalid(format!(
                "weights {pi:?} outside (0, 1)"
            )));
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(MixtureError::Invalid(format!("weights sum to {total}")));
        }
        if mu.iter().flatten().any(|m| !m.is_finite()) {
            return Err(MixtureError::Invalid("non-finite mean".into()));
        }
        if sigma.iter().flatten().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(MixtureError::Invalid("deviations must be positive".into()));
        }
        if rho.iter().any(|r| !(r.abs() < 1.0)) {
            return Err(MixtureError::Invalid("correlation outside (-1, 1)".into()));
        }
        let pi = pi.iter().map(|p| p / total).collect();
        Ok(Self { pi, mu, sigma, rho })
    }

    /// Single component.
    pub fn single(mu: [f64; 2], sigma: [f64; 2], rho: f64) -> Result<Self, MixtureError> {
        Self::new(vec![1.0], vec![mu], vec![sigma], vec![rho])
    }

    pub fn k(&self) -> usize {
        self.pi.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.pi
    }

    pub fn means(&self) -> &[[f64; 2]] {
        &self.mu
    }

    pub fn deviations(&self) -> &[[f64; 2]] {
        &self.sigma
    }

    pub fn correlations(&self) -> &[f64] {
        &self.rho
    }

    /// Covariance matrix of component `k`.
    pub fn covariance(&self, k: usize) -> [[f64; 2]; 2] {
        let [s1, s2] = self.sigma[k];
        let c = self.rho[k] * s1 * s2;
        [[s1 * s1, c], [c, s2 * s2]]
    }

    /// Maps the mixture through `y -> y * scale + offset` per axis.
    pub fn affine(&self, offset: [f64; 2], scale: [f64; 2]) -> Self {
        assert!(scale[0] > 0.0 && scale[1] > 0.0, "scale must be positive");
        Self {
            pi: self.pi.clone(),
            mu: self
                .mu
                .iter()
                .map(|m| [m[0] * scale[0] + offset[0], m[1] * scale[1] + offset[1]])
                .collect(),
            sigma: self
                .sigma
                .iter()
                .map(|s| [s[0] * scale[0], s[1] * scale[1]])
                .collect(),
            rho: self.rho.clone(),
        }
    }

    /// Combines mixtures with the given outer weights into one mixture.
    pub fn combine(parts: &[(f64, &Gmm2D)]) -> Result<Self, MixtureError> {
        let total: f64 = parts.iter().map(|(w, _)| w).sum();
        let (mut pi, mut mu, mut sigma, mut rho) = (vec![], vec![], vec![], vec![]);
        for (w, g) in parts {
            pi.extend(g.pi.iter().map(|p| p * w / total));
            mu.extend_from_slice(&g.mu);
            sigma.extend_from_slice(&g.sigma);
            rho.extend_from_slice(&g.rho);
        }
        Self::new(pi, mu, sigma, rho)
    }

    pub fn log_density(&self, y: [f64; 2]) -> f64 {
        mixture_log_density(y, self)
    }

    pub fn density(&self, y: [f64; 2]) -> f64 {
        self.log_density(y).exp()
    }

    fn as_converted(&self) -> Converted<Vec<f64>> {
        Converted {
            log_pi: self.pi.iter().map(|p| p.ln()).collect(),
            mu1: self.mu.iter().map(|m| m[0]).collect(),
            mu2: self.mu.iter().map(|m| m[1]).collect(),
            sigma1: self.sigma.iter().map(|s| s[0]).collect(),
            sigma2: self.sigma.iter().map(|s| s[1]).collect(),
            rho: self.rho.clone(),
        }
    }
}

/// Arithmetic over component-indexed quantities.
///
/// A value holds one entry per mixture component (per sample, for batched
/// implementations); operands with a single entry broadcast.
pub trait MixtureAlgebra {
    type Value: Clone;

    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value, DiffError>;
    fn sub(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value, DiffError>;
    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value, DiffError>;
    fn div(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value, DiffError>;
    fn square(&mut self, a: &Self::Value) -> Result<Self::Value, DiffError>;
    fn ln(&mut self, a: &Self::Value) -> Result<Self::Value, DiffError>;
    fn scale(&mut self, a: &Self::Value, c: f64) -> Result<Self::Value, DiffError>;
    fn add_scalar(&mut self, a: &Self::Value, c: f64) -> Result<Self::Value, DiffError>;
    fn softplus(&mut self, a: &Self::Value) -> Result<Self::Value, DiffError>;
    fn softsign(&mut self, a: &Self::Value) -> Result<Self::Value, DiffError>;
    fn clamp(&mut self, a: &Self::Value, lo: f64, hi: f64) -> Result<Self::Value, DiffError>;
    /// Log-softmax across components.
    fn log_softmax(&mut self, a: &Self::Value) -> Result<Self::Value, DiffError>;
    /// Log-sum-exp across components.
    fn log_sum_exp(&mut self, a: &Self::Value) -> Result<Self::Value, DiffError>;
}

/// Unconstrained network outputs, one value per parameter slot.
#[derive(Clone, Debug)]
pub struct RawParams<V> {
    pub logit: V,
    pub mu1: V,
    pub mu2: V,
    pub sigma1: V,
    pub sigma2: V,
    pub rho: V,
}

/// Constrained parameters; weights are kept in log space.
#[derive(Clone, Debug)]
pub struct Converted<V> {
    pub log_pi: V,
    pub mu1: V,
    pub mu2: V,
    pub sigma1: V,
    pub sigma2: V,
    pub rho: V,
}

/// softmax for weights, identity for means, softplus for deviations,
/// softsign for correlations; deviations and correlations are clamped to
/// keep the density finite.
pub fn convert_with<A: MixtureAlgebra>(
    alg: &mut A,
    raw: &RawParams<A::Value>,
) -> Result<Converted<A::Value>, DiffError> {
    let log_pi = alg.log_softmax(&raw.logit)?;
    let s1 = alg.softplus(&raw.sigma1)?;
    let s2 = alg.softplus(&raw.sigma2)?;
    let r = alg.softsign(&raw.rho)?;
    Ok(Converted {
        log_pi,
        mu1: raw.mu1.clone(),
        mu2: raw.mu2.clone(),
        sigma1: alg.clamp(&s1, SIGMA_FLOOR, f64::INFINITY)?,
        sigma2: alg.clamp(&s2, SIGMA_FLOOR, f64::INFINITY)?,
        rho: alg.clamp(&r, -RHO_LIMIT, RHO_LIMIT)?,
    })
}

/// `ln N(y | mu, Sigma)` for the correlated bivariate normal:
/// `-ln(2 pi s1 s2 sqrt(1 - rho^2)) - z / (2 (1 - rho^2))` with
/// `z = u1^2 + u2^2 - 2 rho u1 u2`, `u_i = (y_i - mu_i) / s_i`.
#[allow(clippy::too_many_arguments)]
pub fn component_log_density_with<A: MixtureAlgebra>(
    alg: &mut A,
    y1: &A::Value,
    y2: &A::Value,
    mu1: &A::Value,
    mu2: &A::Value,
    sigma1: &A::Value,
    sigma2: &A::Value,
    rho: &A::Value,
) -> Result<A::Value, DiffError> {
    let d1 = alg.sub(y1, mu1)?;
    let d2 = alg.sub(y2, mu2)?;
    let u1 = alg.div(&d1, sigma1)?;
    let u2 = alg.div(&d2, sigma2)?;
    let u1_sq = alg.square(&u1)?;
    let u2_sq = alg.square(&u2)?;
    let u12 = alg.mul(&u1, &u2)?;
    let cross = alg.mul(rho, &u12)?;
    let cross = alg.scale(&cross, -2.0)?;
    let z = alg.add(&u1_sq, &u2_sq)?;
    let z = alg.add(&z, &cross)?;

    let rho_sq = alg.square(rho)?;
    let one_minus = alg.scale(&rho_sq, -1.0)?;
    let one_minus = alg.add_scalar(&one_minus, 1.0)?;

    let quad = alg.div(&z, &one_minus)?;
    let quad = alg.scale(&quad, -0.5)?;

    let ln_s1 = alg.ln(sigma1)?;
    let ln_s2 = alg.ln(sigma2)?;
    let ln_det = alg.ln(&one_minus)?;
    let ln_det = alg.scale(&ln_det, 0.5)?;
    let norm = alg.add(&ln_s1, &ln_s2)?;
    let norm = alg.add(&norm, &ln_det)?;
    let norm = alg.add_scalar(&norm, (2.0 * PI).ln())?;

    alg.sub(&quad, &norm)
}

/// `ln sum_k pi_k N(y | mu_k, Sigma_k)` via log-sum-exp.
pub fn mixture_log_density_with<A: MixtureAlgebra>(
    alg: &mut A,
    y1: &A::Value,
    y2: &A::Value,
    params: &Converted<A::Value>,
) -> Result<A::Value, DiffError> {
    let comp = component_log_density_with(
        alg,
        y1,
        y2,
        &params.mu1,
        &params.mu2,
        &params.sigma1,
        &params.sigma2,
        &params.rho,
    )?;
    let joint = alg.add(&params.log_pi, &comp)?;
    alg.log_sum_exp(&joint)
}

/// Plain `f64` evaluation; values are per-component vectors.
#[derive(Default, Debug, Clone, Copy)]
pub struct Scalars;

impl Scalars {
    fn zip(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Result<Vec<f64>, DiffError> {
        match (a.len(), b.len()) {
            (x, y) if x == y => Ok(a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()),
            (1, _) => Ok(b.iter().map(|&y| f(a[0], y)).collect()),
            (_, 1) => Ok(a.iter().map(|&x| f(x, b[0])).collect()),
            (x, y) => Err(DiffError::Op {
                op: "scalars",
                detail: format!("lengths {x} and {y} do not broadcast"),
            }),
        }
    }
}

impl MixtureAlgebra for Scalars {
    type Value = Vec<f64>;

    fn add(&mut self, a: &Vec<f64>, b: &Vec<f64>) -> Result<Vec<f64>, DiffError> {
        Self::zip(a, b, |x, y| x + y)
    }
    fn sub(&mut self, a: &Vec<f64>, b: &Vec<f64>) -> Result<Vec<f64>, DiffError> {
        Self::zip(a, b, |x, y| x - y)
    }
    fn mul(&mut self, a: &Vec<f64>, b: &Vec<f64>) -> Result<Vec<f64>, DiffError> {
        Self::zip(a, b, |x, y| x * y)
    }
    fn div(&mut self, a: &Vec<f64>, b: &Vec<f64>) -> Result<Vec<f64>, DiffError> {
        Self::zip(a, b, |x, y| x / y)
    }
    fn square(&mut self, a: &Vec<f64>) -> Result<Vec<f64>, DiffError> {
        Ok(a.iter().map(|x| x * x).collect())
    }
    fn ln(&mut self, a: &Vec<f64>) -> Result<Vec<f64>, DiffError> {
        Ok(a.iter().map(|x| x.ln()).collect())
    }
    fn scale(&mut self, a: &Vec<f64>, c: f64) -> Result<Vec<f64>, DiffError> {
        Ok(a.iter().map(|x| x * c).collect())
    }
    fn add_scalar(&mut self, a: &Vec<f64>, c: f64) -> Result<Vec<f64>, DiffError> {
        Ok(a.iter().map(|x| x + c).collect())
    }
    fn softplus(&mut self, a: &Vec<f64>) -> Result<Vec<f64>, DiffError> {
        Ok(a.iter().map(|&x| softplus(x)).collect())
    }
    fn softsign(&mut self, a: &Vec<f64>) -> Result<Vec<f64>, DiffError> {
        Ok(a.iter().map(|x| x / (1.0 + x.abs())).collect())
    }
    fn clamp(&mut self, a: &Vec<f64>, lo: f64, hi: f64) -> Result<Vec<f64>, DiffError> {
        Ok(a.iter().map(|x| x.clamp(lo, hi)).collect())
    }
    fn log_softmax(&mut self, a: &Vec<f64>) -> Result<Vec<f64>, DiffError> {
        let lse = log_sum_exp(a);
        Ok(a.iter().map(|x| x - lse).collect())
    }
    fn log_sum_exp(&mut self, a: &Vec<f64>) -> Result<Vec<f64>, DiffError> {
        Ok(vec![log_sum_exp(a)])
    }
}

/// Records operations on a graph; values are `batch x K` nodes (or
/// `batch x 1` columns that broadcast across components).
pub struct GraphAlgebra<'g> {
    pub graph: &'g mut Graph,
}

impl MixtureAlgebra for GraphAlgebra<'_> {
    type Value = NodeId;

    fn add(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId, DiffError> {
        self.graph.add(*a, *b)
    }
    fn sub(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId, DiffError> {
        self.graph.sub(*a, *b)
    }
    fn mul(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId, DiffError> {
        self.graph.mul(*a, *b)
    }
    fn div(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId, DiffError> {
        self.graph.div(*a, *b)
    }
    fn square(&mut self, a: &NodeId) -> Result<NodeId, DiffError> {
        self.graph.square(*a)
    }
    fn ln(&mut self, a: &NodeId) -> Result<NodeId, DiffError> {
        self.graph.log(*a)
    }
    fn scale(&mut self, a: &NodeId, c: f64) -> Result<NodeId, DiffError> {
        self.graph.scale(*a, c)
    }
    fn add_scalar(&mut self, a: &NodeId, c: f64) -> Result<NodeId, DiffError> {
        self.graph.add_scalar(*a, c)
    }
    fn softplus(&mut self, a: &NodeId) -> Result<NodeId, DiffError> {
        self.graph.softplus(*a)
    }
    fn softsign(&mut self, a: &NodeId) -> Result<NodeId, DiffError> {
        self.graph.softsign(*a)
    }
    fn clamp(&mut self, a: &NodeId, lo: f64, hi: f64) -> Result<NodeId, DiffError> {
        self.graph.clamp(*a, lo, hi)
    }
    fn log_softmax(&mut self, a: &NodeId) -> Result<NodeId, DiffError> {
        self.graph.log_softmax(*a)
    }
    fn log_sum_exp(&mut self, a: &NodeId) -> Result<NodeId, DiffError> {
        self.graph.log_sum_exp(*a)
    }
}

fn split_raw(theta: &[f64]) -> Result<RawParams<Vec<f64>>, MixtureError> {
    if theta.is_empty() || !theta.len().is_multiple_of(PARAMS_PER_COMPONENT) {
        return Err(MixtureError::BadLength(theta.len()));
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(MixtureError::NonFinite);
    }
    let slot = |j: usize| {
        theta
            .chunks_exact(PARAMS_PER_COMPONENT)
            .map(|c| c[j])
            .collect::<Vec<_>>()
    };
    Ok(RawParams {
        logit: slot(0),
        mu1: slot(1),
        mu2: slot(2),
        sigma1: slot(3),
        sigma2: slot(4),
        rho: slot(5),
    })
}

/// Converts raw outputs `theta = theta_1 ++ ... ++ theta_K` into a mixture.
pub fn convert_params(theta: &[f64]) -> Result<Gmm2D, MixtureError> {
    let raw = split_raw(theta)?;
    let c = convert_with(&mut Scalars, &raw)?;
    let pi = c.log_pi.iter().map(|l| l.exp()).collect();
    let mu = c.mu1.iter().zip(&c.mu2).map(|(&a, &b)| [a, b]).collect();
    let sigma = c
        .sigma1
        .iter()
        .zip(&c.sigma2)
        .map(|(&a, &b)| [a, b])
        .collect();
    // softmax weights can underflow to exactly 0 for extreme logits
    Ok(Gmm2D::from_converted_unchecked(pi, mu, sigma, c.rho))
}

impl Gmm2D {
    fn from_converted_unchecked(
        pi: Vec<f64>,
        mu: Vec<[f64; 2]>,
        sigma: Vec<[f64; 2]>,
        rho: Vec<f64>,
    ) -> Self {
        Self { pi, mu, sigma, rho }
    }
}

pub fn component_log_density(y: [f64; 2], mu: [f64; 2], sigma: [f64; 2], rho: f64) -> f64 {
    component_log_density_with(
        &mut Scalars,
        &vec![y[0]],
        &vec![y[1]],
        &vec![mu[0]],
        &vec![mu[1]],
        &vec![sigma[0]],
        &vec![sigma[1]],
        &vec![rho],
    )
    .expect("length-one vectors always broadcast")[0]
}

pub fn mixture_log_density(y: [f64; 2], gmm: &Gmm2D) -> f64 {
    mixture_log_density_with(&mut Scalars, &vec![y[0]], &vec![y[1]], &gmm.as_converted())
        .expect("component vectors share a length")[0]
}

/// `-sum_n ln p(y_n)` over a batch of targets and their mixtures.
pub fn nll_loss<'a>(
    batch: impl IntoIterator<Item = ([f64; 2], &'a Gmm2D)>,
) -> Result<f64, MixtureError> {
    let mut total = 0.0;
    let mut n = 0;
    for (y, gmm) in batch {
        total -= mixture_log_density(y, gmm);
        n += 1;
    }
    if n == 0 {
        return Err(MixtureError::EmptyBatch);
    }
    Ok(total)
}

/// Records the summed NLL of `targets` under the mixtures whose raw
/// parameters are the rows of `theta` (`batch x 6K`).
pub fn nll_graph(
    graph: &mut Graph,
    theta: NodeId,
    targets: &[[f64; 2]],
) -> Result<NodeId, MixtureError> {
    if targets.is_empty() {
        return Err(MixtureError::EmptyBatch);
    }
    let (rows, width) = graph
        .value(theta)
        .dims2()
        .ok_or(MixtureError::BadLength(graph.value(theta).len()))?;
    if width == 0 || width % PARAMS_PER_COMPONENT != 0 {
        return Err(MixtureError::BadLength(width));
    }
    if rows != targets.len() {
        return Err(DiffError::Op {
            op: "nll",
            detail: format!("{rows} parameter rows for {} targets", targets.len()),
        }
        .into());
    }
    let k = width / PARAMS_PER_COMPONENT;
    let mut slot = |j: usize| {
        graph.select_cols(
            theta,
            (0..k).map(|c| c * PARAMS_PER_COMPONENT + j).collect(),
        )
    };
    let raw = RawParams {
        logit: slot(0)?,
        mu1: slot(1)?,
        mu2: slot(2)?,
        sigma1: slot(3)?,
        sigma2: slot(4)?,
        rho: slot(5)?,
    };
    let y1 = graph.constant(Tensor::column(targets.iter().map(|t| t[0]).collect()));
    let y2 = graph.constant(Tensor::column(targets.iter().map(|t| t[1]).collect()));
    let mut alg = GraphAlgebra { graph: &mut *graph };
    let converted = convert_with(&mut alg, &raw)?;
    let log_lik = mixture_log_density_with(&mut alg, &y1, &y2, &converted)?;
    let total = graph.sum(log_lik)?;
    Ok(graph.scale(total, -1.0)?)
}

/// Mode approximation: the component mean with the highest mixture density
/// (lowest index on ties), together with the density there.
pub fn mode_approx(gmm: &Gmm2D) -> ([f64; 2], f64) {
    let mut best = 0;
    let mut best_log = f64::NEG_INFINITY;
    for (k, &m) in gmm.mu.iter().enumerate() {
        let v = mixture_log_density(m, gmm);
        if v > best_log {
            best_log = v;
            best = k;
        }
    }
    (gmm.mu[best], best_log.exp())
}

/// Draws one point: component by weight, then a correlated normal via the
/// Cholesky factor of its covariance.
pub fn sample_one<R: Rng + ?Sized>(gmm: &Gmm2D, rng: &mut R) -> [f64; 2] {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut k = gmm.k() - 1;
    for (i, p) in gmm.pi.iter().enumerate() {
        acc += p;
        if u < acc {
            k = i;
            break;
        }
    }
    let z1: f64 = StandardNormal.sample(rng);
    let z2: f64 = StandardNormal.sample(rng);
    let [m1, m2] = gmm.mu[k];
    let [s1, s2] = gmm.sigma[k];
    let r = gmm.rho[k];
    [m1 + s1 * z1, m2 + s2 * (r * z1 + (1.0 - r * r).sqrt() * z2)]
}

/// `count` draws from a stream seeded with `seed`.
pub fn sample(gmm: &Gmm2D, count: usize, seed: u64) -> Vec<[f64; 2]> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| sample_one(gmm, &mut rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn two_component() -> Gmm2D {
        Gmm2D::new(
            vec![0.9, 0.1],
            vec![[0.0, 0.0], [10.0, 10.0]],
            vec![[1.0, 1.0], [1.0, 1.0]],
            vec![0.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn zero_theta_converts_to_standard_single_component() {
        let g = convert_params(&[0.0; 6]).unwrap();
        assert_eq!(g.weights(), &[1.0]);
        assert_eq!(g.means(), &[[0.0, 0.0]]);
        assert_abs_diff_eq!(g.deviations()[0][0], std::f64::consts::LN_2, epsilon = 1e-6);
        assert_abs_diff_eq!(g.deviations()[0][1], 2f64.ln(), epsilon = 1e-15);
        assert_eq!(g.correlations(), &[0.0]);
    }

    #[test]
    fn equal_logits_give_uniform_weights() {
        let mut theta = vec![0.0; 18];
        for k in 0..3 {
            theta[k * 6] = 1.7;
        }
        let g = convert_params(&theta).unwrap();
        for &p in g.weights() {
            assert_abs_diff_eq!(p, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn softsign_correlation() {
        let g = convert_params(&[0.0, 0.0, 0.0, 0.0, 0.0, -3.0]).unwrap();
        assert_abs_diff_eq!(g.correlations()[0], -0.75, epsilon = 1e-15);
    }

    #[test]
    fn bad_theta_length_rejected() {
        assert_eq!(convert_params(&[0.0; 5]), Err(MixtureError::BadLength(5)));
        assert_eq!(convert_params(&[]), Err(MixtureError::BadLength(0)));
        assert_eq!(
            convert_params(&[f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0]),
            Err(MixtureError::NonFinite)
        );
    }

    #[test]
    fn component_density_at_mean() {
        assert_abs_diff_eq!(
            component_log_density([1.0, 2.0], [1.0, 2.0], [1.0, 1.0], 0.0),
            -1.837877,
            epsilon = 1e-6
        );
        assert_abs_diff_eq!(
            component_log_density([0.0, 0.0], [0.0, 0.0], [1.0, 1.0], 0.5),
            0.183776f64.ln(),
            epsilon = 1e-5
        );
    }

    #[test]
    fn identical_components_collapse() {
        let one = Gmm2D::single([1.0, -1.0], [0.5, 2.0], 0.3).unwrap();
        let two = Gmm2D::new(
            vec![0.5, 0.5],
            vec![[1.0, -1.0]; 2],
            vec![[0.5, 2.0]; 2],
            vec![0.3; 2],
        )
        .unwrap();
        for y in [[0.0, 0.0], [1.0, -1.0], [3.0, 2.0]] {
            assert_abs_diff_eq!(one.log_density(y), two.log_density(y), epsilon = 1e-14);
            assert_abs_diff_eq!(
                one.log_density(y),
                component_log_density(y, [1.0, -1.0], [0.5, 2.0], 0.3),
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn nll_of_point_at_unit_mean() {
        let g = Gmm2D::single([0.0, 0.0], [1.0, 1.0], 0.0).unwrap();
        let loss = nll_loss([([0.0, 0.0], &g)]).unwrap();
        assert_abs_diff_eq!(loss, (2.0 * PI).ln(), epsilon = 1e-12);
        let doubled = nll_loss([([0.0, 0.0], &g), ([0.0, 0.0], &g)]).unwrap();
        assert_abs_diff_eq!(doubled, 2.0 * loss, epsilon = 1e-12);
        assert_eq!(nll_loss(std::iter::empty()), Err(MixtureError::EmptyBatch));
    }

    #[test]
    fn graph_nll_matches_value_nll() {
        let theta = [
            0.3, 1.0, -0.5, -0.2, 0.4, 0.7, -1.1, -2.0, 0.3, 0.1, -0.3, -0.4,
        ];
        let targets = [[0.5, -0.2], [-1.5, 0.1]];
        let mut g = Graph::new();
        let rows = [
            theta.to_vec(),
            theta.iter().map(|v| v * 0.5).collect::<Vec<_>>(),
        ];
        let t = g.constant(Tensor::matrix(2, 12, rows.concat()).unwrap());
        let loss = nll_graph(&mut g, t, &targets).unwrap();
        let gmms: Vec<_> = rows.iter().map(|r| convert_params(r).unwrap()).collect();
        let expected = nll_loss(targets.iter().copied().zip(&gmms)).unwrap();
        assert_abs_diff_eq!(g.value(loss).data()[0], expected, epsilon = 1e-12);
    }

    #[test]
    fn mode_picks_dominant_component() {
        let (y, lik) = mode_approx(&two_component());
        assert_eq!(y, [0.0, 0.0]);
        assert_abs_diff_eq!(lik, two_component().density([0.0, 0.0]), epsilon = 0.0);
        let one = Gmm2D::single([3.0, 4.0], [1.0, 2.0], 0.1).unwrap();
        assert_eq!(mode_approx(&one).0, [3.0, 4.0]);
    }

    #[test]
    fn mode_ties_take_lowest_index() {
        let g = Gmm2D::new(
            vec![0.5, 0.5],
            vec![[0.0, 0.0], [10.0, 0.0]],
            vec![[1.0, 1.0]; 2],
            vec![0.0; 2],
        )
        .unwrap();
        assert_eq!(mode_approx(&g).0, [0.0, 0.0]);
    }

    #[test]
    fn degenerate_component_samples_at_mean() {
        let g = Gmm2D::single([2.0, -3.0], [1e-6, 1e-6], 0.0).unwrap();
        for p in sample(&g, 100, 1) {
            assert_abs_diff_eq!(p[0], 2.0, epsilon = 1e-4);
            assert_abs_diff_eq!(p[1], -3.0, epsilon = 1e-4);
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let g = two_component();
        assert_eq!(sample(&g, 50, 4), sample(&g, 50, 4));
        assert_ne!(sample(&g, 50, 4), sample(&g, 50, 5));
    }

    #[test]
    fn invalid_mixtures_rejected() {
        assert!(Gmm2D::new(
            vec![0.5, 0.6],
            vec![[0.0; 2]; 2],
            vec![[1.0; 2]; 2],
            vec![0.0; 2]
        )
        .is_err());
        assert!(Gmm2D::single([0.0, 0.0], [0.0, 1.0], 0.0).is_err());
        assert!(Gmm2D::single([0.0, 0.0], [1.0, 1.0], 1.0).is_err());
        assert!(Gmm2D::new(vec![], vec![], vec![], vec![]).is_err());
    }

    #[test]
    fn json_uses_parallel_arrays() {
        let json = serde_json::to_value(two_component()).unwrap();
        assert_eq!(json["pi"], serde_json::json!([0.9, 0.1]));
        assert_eq!(json["mu"][1], serde_json::json!([10.0, 10.0]));
        assert!(json.get("sigma").is_some() && json.get("rho").is_some());
    }

    proptest! {
        #[test]
        fn conversion_is_total(theta in proptest::collection::vec(-50.0f64..50.0, 6..=30)) {
            let k = theta.len() / 6;
            let g = convert_params(&theta[..k * 6]).unwrap();
            let total: f64 = g.weights().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(g.deviations().iter().flatten().all(|&s| s >= SIGMA_FLOOR));
            prop_assert!(g.correlations().iter().all(|r| r.abs() <= RHO_LIMIT));
            prop_assert!(g.log_density([0.0, 0.0]).is_finite() || g.log_density([0.0, 0.0]) == f64::NEG_INFINITY);
        }

        #[test]
        fn translation_invariance(
            theta in proptest::collection::vec(-3.0f64..3.0, 18),
            y in proptest::array::uniform2(-3.0f64..3.0),
            shift in proptest::array::uniform2(-100.0f64..100.0),
        ) {
            let g = convert_params(&theta).unwrap();
            let moved = g.affine(shift, [1.0, 1.0]);
            let a = g.log_density(y);
            let b = moved.log_density([y[0] + shift[0], y[1] + shift[1]]);
            prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
        }

        #[test]
        fn log_sum_exp_upper_bound(
            theta in proptest::collection::vec(-3.0f64..3.0, 18),
            y in proptest::array::uniform2(-3.0f64..3.0),
        ) {
            let g = convert_params(&theta).unwrap();
            let best = (0..g.k())
                .map(|k| g.weights()[k].ln()
                    + component_log_density(y, g.means()[k], g.deviations()[k], g.correlations()[k]))
                .fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(g.log_density(y) <= best + (g.k() as f64).ln() + 1e-12);
        }
    }
}
