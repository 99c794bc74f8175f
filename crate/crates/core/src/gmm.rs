//! Univariate Gaussian mixtures: density, likelihood, the ELBO/KL split of
//! the log-likelihood, EM fitting, and sampling.

use std::f64::consts::PI;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound applied to every component variance.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Default mixture size.
pub const DEFAULT_K: usize = 5;

const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Mixture parameters `(pi_k, mu_k, sigma2_k)` with scalar variances.
///
/// Serializes as `{K, weights[], means[], variances[]}`; deserialization
/// re-checks every invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GmmJson", into = "GmmJson")]
pub struct GmmParams {
    weights: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
}

#[derive(Clone, Serialize, Deserialize)]
struct GmmJson {
    #[serde(rename = "K")]
    k: usize,
    weights: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
}

impl GmmParams {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || variances.len() != k {
            return Err(Error::Contract(format!(
                "mixture needs matching non-empty parameter lists, got {}/{}/{}",
                k,
                means.len(),
                variances.len()
            )));
        }
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::Contract("mixture weights must lie in [0, 1]".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::Contract(format!("mixture weights sum to {total}")));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::Contract("mixture means must be finite".into()));
        }
        if variances
            .iter()
            .any(|v| !v.is_finite() || *v < VARIANCE_FLOOR)
        {
            return Err(Error::Contract(format!(
                "component variances must be finite and >= {VARIANCE_FLOOR}"
            )));
        }
        Ok(Self {
            weights,
            means,
            variances,
        })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// Reorders components; `order[i]` is the old index placed at slot `i`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            weights: order.iter().map(|&i| self.weights[i]).collect(),
            means: order.iter().map(|&i| self.means[i]).collect(),
            variances: order.iter().map(|&i| self.variances[i]).collect(),
        }
    }

    /// `ln(pi_k) + ln N(x | mu_k, sigma2_k)` for every component.
    pub fn log_joint(&self, x: f64) -> impl Iterator<Item = f64> + '_ {
        (0..self.k()).map(move |k| self.weights[k].ln() + log_normal(x, self.means[k], self.variances[k]))
    }

    /// `ln p(x)`, via log-sum-exp over components.
    pub fn log_density(&self, x: f64) -> f64 {
        let lj: Vec<f64> = self.log_joint(x).collect();
        log_sum_exp(lj.into_iter())
    }

    pub fn density(&self, x: f64) -> f64 {
        (0..self.k())
            .map(|k| self.weights[k] * normal_pdf(x, self.means[k], self.variances[k]))
            .sum()
    }

    /// Mixture mean `sum pi_k mu_k`.
    pub fn mean(&self) -> f64 {
        self.weights.iter().zip(&self.means).map(|(w, m)| w * m).sum()
    }

    /// Mixture variance `sum pi_k (sigma2_k + mu_k^2) - mean^2`.
    pub fn variance(&self) -> f64 {
        let second: f64 = (0..self.k())
            .map(|k| self.weights[k] * (self.variances[k] + self.means[k] * self.means[k]))
            .sum();
        second - self.mean().powi(2)
    }

    /// Same mixture for `scale * X`.
    pub fn scaled(&self, scale: f64) -> Result<Self> {
        Self::new(
            self.weights.clone(),
            self.means.iter().map(|m| m * scale).collect(),
            self.variances
                .iter()
                .map(|v| (v * scale * scale).max(VARIANCE_FLOOR))
                .collect(),
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

impl From<GmmParams> for GmmJson {
    fn from(p: GmmParams) -> Self {
        GmmJson {
            k: p.k(),
            weights: p.weights,
            means: p.means,
            variances: p.variances,
        }
    }
}

impl TryFrom<GmmJson> for GmmParams {
    type Error = Error;

    fn try_from(j: GmmJson) -> Result<Self> {
        if j.k != j.weights.len() {
            return Err(Error::Contract(format!(
                "K = {} but {} weights given",
                j.k,
                j.weights.len()
            )));
        }
        GmmParams::new(j.weights, j.means, j.variances)
    }
}

/// Unconstrained mixture parameters as produced by a network head.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmRaw {
    pub weight_logits: Vec<f64>,
    pub means: Vec<f64>,
    pub log_variances: Vec<f64>,
}

impl GmmRaw {
    /// Softmax for the weights, `exp(.) + floor` for the variances.
    pub fn constrain(&self) -> Result<GmmParams> {
        let k = self.weight_logits.len();
        if k == 0 || self.means.len() != k || self.log_variances.len() != k {
            return Err(Error::Contract("raw mixture parameter lists must match".into()));
        }
        let m = self
            .weight_logits
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = self.weight_logits.iter().map(|l| (l - m).exp()).collect();
        let total: f64 = exps.iter().sum();
        let weights = exps.iter().map(|e| e / total).collect();
        let variances = self
            .log_variances
            .iter()
            .map(|lv| lv.exp().min(f64::MAX / 4.0) + VARIANCE_FLOOR)
            .collect();
        GmmParams::new(weights, self.means.clone(), variances)
    }
}

pub fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

pub fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - (x - mean).powi(2) / (2.0 * var)
}

pub fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn density(params: &GmmParams, x: f64) -> f64 {
    params.density(x)
}

/// `sum_n ln p(x_n)`.
pub fn log_likelihood(params: &GmmParams, data: &[f64]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Contract("log-likelihood of an empty dataset".into()));
    }
    Ok(data.iter().map(|&x| params.log_density(x)).sum())
}

/// Posterior component probabilities, one row of length K per sample
/// (row-major `[N, K]`).
pub fn responsibilities(params: &GmmParams, data: &[f64]) -> Vec<Vec<f64>> {
    data.iter().map(|&x| posterior_row(params, x)).collect()
}

fn posterior_row(params: &GmmParams, x: f64) -> Vec<f64> {
    let lj: Vec<f64> = params.log_joint(x).collect();
    let lse = log_sum_exp(lj.iter().copied());
    lj.iter().map(|l| (l - lse).exp()).collect()
}

/// Split of `ln p(X)` into the lower bound and `KL(q || posterior)` for an
/// arbitrary responsibility matrix `q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboSplit {
    pub lower_bound: f64,
    pub kl: f64,
}

pub fn elbo_decomposition(params: &GmmParams, data: &[f64], q: &[Vec<f64>]) -> Result<ElboSplit> {
    if data.is_empty() {
        return Err(Error::Contract("ELBO of an empty dataset".into()));
    }
    if q.len() != data.len() {
        return Err(Error::Contract(format!(
            "{} responsibility rows for {} samples",
            q.len(),
            data.len()
        )));
    }
    let k = params.k();
    let mut lower_bound = 0.0;
    let mut kl = 0.0;
    for (n, (&x, row)) in data.iter().zip(q).enumerate() {
        if row.len() != k
            || row.iter().any(|&v| !(v >= 0.0) || !v.is_finite())
            || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::Contract(format!(
                "responsibility row {n} is not a probability vector"
            )));
        }
        let lj: Vec<f64> = params.log_joint(x).collect();
        let lse = log_sum_exp(lj.iter().copied());
        for (&qk, &ljk) in row.iter().zip(&lj) {
            if qk == 0.0 {
                continue;
            }
            let lq = qk.ln();
            lower_bound += qk * (ljk - lq);
            kl -= qk * ((ljk - lse) - lq);
        }
    }
    Ok(ElboSplit { lower_bound, kl })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            seed: 0,
            max_iters: 500,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub params: GmmParams,
    /// Log-likelihood of the parameters entering each iteration, plus the
    /// final parameters.
    pub log_likelihood_trace: Vec<f64>,
    pub iterations: usize,
}

/// k-means++ seeding on scalar data.
pub fn kmeans_pp_seeds<R: Rng>(data: &[f64], k: usize, rng: &mut R) -> Vec<f64> {
    let mut centers = Vec::with_capacity(k);
    centers.push(data[rng.gen_range(0..data.len())]);
    let mut d2: Vec<f64> = data.iter().map(|x| (x - centers[0]).powi(2)).collect();
    while centers.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(dist) => data[dist.sample(rng)],
            // every point already sits on a center
            Err(_) => break,
        };
        centers.push(next);
        for (d, x) in d2.iter_mut().zip(data) {
            *d = d.min((x - next).powi(2));
        }
    }
    centers
}

/// Maximum-likelihood mixture fit by expectation-maximization.
pub fn em_fit(data: &[f64], opts: &EmOptions) -> Result<EmFit> {
    let k = opts.k;
    if k == 0 {
        return Err(Error::Contract("K must be positive".into()));
    }
    if data.iter().any(|x| !x.is_finite()) {
        return Err(Error::Contract("EM data must be finite".into()));
    }
    let mut distinct = data.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::DegenerateData(format!(
            "{} distinct values cannot support {k} components",
            distinct.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut means = kmeans_pp_seeds(data, k, &mut rng);
    means.sort_by(f64::total_cmp);
    let (weights, variances) = hard_assignment_stats(data, &means);
    let mut params = GmmParams::new(weights, means, variances)?;

    let n = data.len();
    let mut trace = Vec::new();
    let mut resp = vec![0.0; n * k];
    let mut iterations = 0;
    loop {
        // E-step; also yields ln p(X) for the current parameters.
        let mut ll = 0.0;
        for (row, &x) in resp.chunks_exact_mut(k).zip(data) {
            let lj: Vec<f64> = params.log_joint(x).collect();
            let lse = log_sum_exp(lj.iter().copied());
            ll += lse;
            for (r, l) in row.iter_mut().zip(&lj) {
                *r = (l - lse).exp();
            }
        }
        if !ll.is_finite() {
            return Err(Error::NonFinite(format!("EM log-likelihood {ll}")));
        }
        if let Some(&prev) = trace.last() {
            let gain: f64 = ll - prev;
            if iterations >= opts.max_iters || gain <= opts.tol * f64::abs(prev) {
                trace.push(ll);
                break;
            }
        } else if opts.max_iters == 0 {
            trace.push(ll);
            break;
        }
        trace.push(ll);

        // M-step
        let mut nk = vec![0.0; k];
        let mut sx = vec![0.0; k];
        for (row, &x) in resp.chunks_exact(k).zip(data) {
            for j in 0..k {
                nk[j] += row[j];
                sx[j] += row[j] * x;
            }
        }
        let mut new_means = params.means.clone();
        for j in 0..k {
            if nk[j] > 0.0 {
                new_means[j] = sx[j] / nk[j];
            }
        }
        let mut sq = vec![0.0; k];
        for (row, &x) in resp.chunks_exact(k).zip(data) {
            for j in 0..k {
                sq[j] += row[j] * (x - new_means[j]).powi(2);
            }
        }
        let total: f64 = nk.iter().sum();
        let weights = nk.iter().map(|v| v / total).collect();
        let variances = (0..k)
            .map(|j| {
                if nk[j] > 0.0 {
                    (sq[j] / nk[j]).max(VARIANCE_FLOOR)
                } else {
                    params.variances[j]
                }
            })
            .collect();
        params = GmmParams::new(weights, new_means, variances)?;
        iterations += 1;
    }

    Ok(EmFit {
        params,
        log_likelihood_trace: trace,
        iterations,
    })
}

fn hard_assignment_stats(data: &[f64], centers: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let k = centers.len();
    let mut count = vec![0usize; k];
    let mut sum = vec![0.0; k];
    let mut sumsq = vec![0.0; k];
    for &x in data {
        let j = (0..k)
            .min_by(|&a, &b| (x - centers[a]).abs().total_cmp(&(x - centers[b]).abs()))
            .unwrap();
        count[j] += 1;
        sum[j] += x;
        sumsq[j] += x * x;
    }
    let n = data.len() as f64;
    let weights = count.iter().map(|&c| c as f64 / n).collect();
    let variances = (0..k)
        .map(|j| {
            if count[j] == 0 {
                return VARIANCE_FLOOR;
            }
            let c = count[j] as f64;
            let m = sum[j] / c;
            (sumsq[j] / c - m * m).max(VARIANCE_FLOOR)
        })
        .collect();
    (weights, variances)
}

/// `n` i.i.d. draws: component by `pi`, value by `N(mu_k, sigma2_k)`.
pub fn sample(params: &GmmParams, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_with(params, n, &mut rng)
}

pub fn sample_with<R: Rng>(params: &GmmParams, n: usize, rng: &mut R) -> Vec<f64> {
    let stds: Vec<f64> = params.variances.iter().map(|v| v.sqrt()).collect();
    (0..n)
        .map(|_| {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut comp = params.k() - 1;
            for (j, w) in params.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    comp = j;
                    break;
                }
            }
            let z: f64 = rng.sample(StandardNormal);
            params.means[comp] + stds[comp] * z
        })
        .collect()
}

/// Permutation of `candidate`'s components that minimizes the total
/// absolute mean distance to `reference` (exhaustive; K is small).
pub fn best_permutation(reference: &GmmParams, candidate: &GmmParams) -> Vec<usize> {
    let k = reference.k();
    assert_eq!(k, candidate.k());
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = perm.clone();
    let mut best_cost = f64::INFINITY;
    permute(&mut perm, 0, &mut |p| {
        let cost: f64 = (0..k)
            .map(|i| (reference.means[i] - candidate.means[p[i]]).abs())
            .sum();
        if cost < best_cost {
            best_cost = cost;
            best = p.to_vec();
        }
    });
    best
}

fn permute(p: &mut [usize], start: usize, visit: &mut impl FnMut(&[usize])) {
    if start == p.len() {
        visit(p);
        return;
    }
    for i in start..p.len() {
        p.swap(start, i);
        permute(p, start + 1, visit);
        p.swap(start, i);
    }
}
