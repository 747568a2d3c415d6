//! Gaussian mixture with a single covariance matrix shared by all components.
//!
//! EM runs in whitened coordinates: with `Sigma = L L^T`, every point and mean is
//! mapped through `L^{-1}` once per iteration, after which the Mahalanobis term
//! is a plain squared distance. Responsibilities are computed in log space with
//! the row maximum subtracted.
//!
//! The covariance update adds `eps * I`. That is the exact maximizer of the
//! expected log-likelihood penalized by `-(eps / 2) tr(Sigma^{-1})` per point,
//! so the penalized objective recorded in [`GmmFit::objective_trace`] is
//! non-decreasing.

use std::fs;
use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, dot, forward_substitute, half_log_det, squared_distance};
use crate::scalar::Scalar;
use crate::seed::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceKind {
    #[default]
    Full,
    Diagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub eps: f64,
    pub covariance: CovarianceKind,
}

impl Default for GmmConfig {
    fn default() -> Self {
        GmmConfig {
            max_iters: 200,
            tol: 1e-5,
            eps: 1e-6,
            covariance: CovarianceKind::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel<T> {
    k: usize,
    d: usize,
    means: Vec<T>,
    covariance: Vec<T>,
    chol: Vec<T>,
    weights: Vec<T>,
    // derived: L^{-1} mu_o and sum(log diag L)
    white_means: Vec<T>,
    half_log_det: T,
}

impl<T: Scalar> GmmModel<T> {
    /// Builds a model from explicit parameters; `covariance` is `d x d` row-major.
    pub fn new(means: Vec<Vec<T>>, covariance: Vec<T>, weights: Vec<T>) -> Result<Self> {
        let k = means.len();
        if k == 0 || weights.len() != k {
            return Err(Error::invalid(
                "need one weight per component and at least one component",
            ));
        }
        let d = means[0].len();
        if means.iter().any(|m| m.len() != d) || covariance.len() != d * d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: means.iter().map(Vec::len).find(|&l| l != d).unwrap_or(covariance.len()),
            });
        }
        let chol = cholesky(&covariance, d)?;
        Ok(Self::assemble(k, d, means.concat(), covariance, chol, weights))
    }

    fn assemble(k: usize, d: usize, means: Vec<T>, covariance: Vec<T>, chol: Vec<T>, weights: Vec<T>) -> Self {
        let white_means = (0..k)
            .flat_map(|o| forward_substitute(&chol, d, &means[o * d..(o + 1) * d]))
            .collect();
        let hld = half_log_det(&chol, d);
        GmmModel {
            k,
            d,
            means,
            covariance,
            chol,
            weights,
            white_means,
            half_log_det: hld,
        }
    }

    pub fn num_components(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn mean(&self, o: usize) -> &[T] {
        &self.means[o * self.d..(o + 1) * self.d]
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// Shared covariance, `d x d` row-major.
    pub fn covariance(&self) -> &[T] {
        &self.covariance
    }

    pub fn cholesky_factor(&self) -> &[T] {
        &self.chol
    }

    fn log_joint(&self, x: &[T]) -> Vec<T> {
        let y = forward_substitute(&self.chol, self.d, x);
        log_joint_whitened(&y, &self.white_means, &self.weights, self.d, self.half_log_det)
    }

    /// `P(component | x)` for every component.
    pub fn posterior(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                found: x.len(),
            });
        }
        let (post, _) = normalize_log(self.log_joint(x));
        Ok(post)
    }

    /// Posteriors for many points, computed in parallel, in input order.
    pub fn posteriors<V: AsRef<[T]> + Sync>(&self, xs: &[V]) -> Result<Vec<Vec<T>>> {
        xs.par_iter().map(|x| self.posterior(x.as_ref())).collect()
    }

    /// Mean log-density of the points under the mixture.
    pub fn mean_log_likelihood<V: AsRef<[T]> + Sync>(&self, xs: &[V]) -> Result<T> {
        let lses = xs
            .par_iter()
            .map(|x| {
                let x = x.as_ref();
                if x.len() != self.d {
                    return Err(Error::DimensionMismatch {
                        expected: self.d,
                        found: x.len(),
                    });
                }
                Ok(normalize_log(self.log_joint(x)).1)
            })
            .collect::<Result<Vec<T>>>()?;
        Ok(lses.iter().copied().sum::<T>() / T::from_usize_lossy(lses.len().max(1)))
    }

    /// Binary blob: `u32 K, u32 d`, then means, the packed lower Cholesky
    /// factor (row-major), and weights, all `f64` little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let (k, d) = (self.k, self.d);
        let mut out = Vec::with_capacity(8 + 8 * (k * d + d * (d + 1) / 2 + k));
        out.extend_from_slice(&(k as u32).to_le_bytes());
        out.extend_from_slice(&(d as u32).to_le_bytes());
        let mut put = |v: T| out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        self.means.iter().for_each(|&v| put(v));
        for i in 0..d {
            for j in 0..=i {
                put(self.chol[i * d + j]);
            }
        }
        self.weights.iter().for_each(|&v| put(v));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |offset: usize, msg: &str| Error::Format {
            offset: offset as u64,
            msg: msg.to_string(),
        };
        if bytes.len() < 8 {
            return Err(fmt(0, "model blob shorter than header"));
        }
        let k = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let d = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let want = 8 + 8 * (k * d + d * (d + 1) / 2 + k);
        if bytes.len() != want {
            return Err(fmt(
                bytes.len().min(want),
                &format!("expected {want} bytes for K={k}, d={d}"),
            ));
        }
        let mut vals = bytes[8..]
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())));
        let means: Vec<T> = vals.by_ref().take(k * d).collect();
        let mut chol = vec![T::zero(); d * d];
        for i in 0..d {
            for j in 0..=i {
                chol[i * d + j] = vals.next().unwrap();
            }
        }
        let weights: Vec<T> = vals.collect();
        let mut covariance = vec![T::zero(); d * d];
        for i in 0..d {
            for j in 0..d {
                let m = i.min(j) + 1;
                covariance[i * d + j] = dot(&chol[i * d..i * d + m], &chol[j * d..j * d + m]);
            }
        }
        Ok(Self::assemble(k, d, means, covariance, chol, weights))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn log_joint_whitened<T: Scalar>(y: &[T], white_means: &[T], weights: &[T], d: usize, hld: T) -> Vec<T> {
    let c = T::lit(-0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln()) - hld;
    let half = T::lit(0.5);
    weights
        .iter()
        .enumerate()
        .map(|(o, &w)| {
            let m = &white_means[o * d..(o + 1) * d];
            w.ln() + c - half * squared_distance(y, m)
        })
        .collect()
}

/// Exponentiates log weights into a probability vector; also returns log-sum-exp.
fn normalize_log<T: Scalar>(mut a: Vec<T>) -> (Vec<T>, T) {
    let max = a.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in a.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in a.iter_mut() {
        *v /= sum;
    }
    (a, max + sum.ln())
}

#[derive(Debug, Clone)]
pub struct GmmFit<T> {
    pub model: GmmModel<T>,
    /// Mean penalized log-likelihood after each E-step.
    pub objective_trace: Vec<T>,
    /// Plain mean log-likelihood after each E-step.
    pub log_likelihood_trace: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
}

fn kmeans_pp_means<T: Scalar>(xs: &[Vec<T>], k: usize, seed: u64) -> Vec<Vec<T>> {
    let n = xs.len();
    let mut rng = rng_from_seed(seed);
    let mut centers = vec![xs[rng.random_range(0..n)].clone()];
    let mut dist: Vec<f64> = xs
        .iter()
        .map(|x| squared_distance(x, &centers[0]).to_f64_lossy())
        .collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let r = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &w) in dist.iter().enumerate() {
                acc += w;
                if acc > r && w > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            centers.len() % n
        };
        centers.push(xs[next].clone());
        for (d, x) in dist.iter_mut().zip(xs) {
            *d = d.min(squared_distance(x, &xs[next]).to_f64_lossy());
        }
    }
    // a few Lloyd refinements
    let dim = xs[0].len();
    for _ in 0..10 {
        let mut sums = vec![vec![T::zero(); dim]; k];
        let mut counts = vec![0usize; k];
        for x in xs {
            let (mut best, mut bd) = (0, squared_distance(x, &centers[0]));
            for (o, c) in centers.iter().enumerate().skip(1) {
                let dd = squared_distance(x, c);
                if dd < bd {
                    best = o;
                    bd = dd;
                }
            }
            counts[best] += 1;
            for (s, &v) in sums[best].iter_mut().zip(x) {
                *s += v;
            }
        }
        let mut moved = false;
        for o in 0..k {
            if counts[o] > 0 {
                let inv = T::one() / T::from_usize_lossy(counts[o]);
                let m: Vec<T> = sums[o].iter().map(|&s| s * inv).collect();
                moved |= m != centers[o];
                centers[o] = m;
            }
        }
        if !moved {
            break;
        }
    }
    centers
}

/// Fits a tied-covariance mixture by EM.
pub fn fit_gmm<T: Scalar, V: AsRef<[T]> + Sync>(
    vectors: &[V],
    k: usize,
    seed: u64,
    cfg: &GmmConfig,
) -> Result<GmmFit<T>> {
    let n = vectors.len();
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    if k > n {
        return Err(Error::invalid(format!("K = {k} exceeds the {n} input vectors")));
    }
    if !(cfg.eps >= 0.0) || !(cfg.tol >= 0.0) {
        return Err(Error::Config("eps and tol must be non-negative".into()));
    }
    let d = vectors[0].as_ref().len();
    let mut center = vec![T::zero(); d];
    for v in vectors {
        let v = v.as_ref();
        if v.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("non-finite input to the mixture fit".into()));
        }
        for (c, &x) in center.iter_mut().zip(v) {
            *c += x;
        }
    }
    let nf = T::from_usize_lossy(n);
    center.iter_mut().for_each(|c| *c /= nf);
    // EM runs on globally centered data; posteriors are shift invariant
    let xs: Vec<Vec<T>> = vectors
        .iter()
        .map(|v| v.as_ref().iter().zip(&center).map(|(&x, &c)| x - c).collect())
        .collect();

    let eps = T::lit(cfg.eps);
    let diagonal = cfg.covariance == CovarianceKind::Diagonal;
    let mut scatter = vec![T::zero(); d * d];
    for x in &xs {
        for i in 0..d {
            let xi = x[i];
            for j in 0..=i {
                scatter[i * d + j] += xi * x[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            scatter[j * d + i] = scatter[i * d + j];
        }
    }

    let finish_cov = |mut s: Vec<T>| -> Vec<T> {
        for i in 0..d {
            for j in 0..d {
                if i == j {
                    s[i * d + j] += eps;
                } else if diagonal {
                    s[i * d + j] = T::zero();
                } else {
                    // symmetrize against rounding
                    let m = (s[i * d + j] + s[j * d + i]) * T::lit(0.5);
                    s[i * d + j] = m;
                    s[j * d + i] = m;
                }
            }
        }
        s
    };

    let mut means = kmeans_pp_means(&xs, k, seed);
    let mut weights = vec![T::one() / T::from_usize_lossy(k); k];
    let mut cov = finish_cov(scatter.iter().map(|&s| s / nf).collect());

    let mut objective_trace = Vec::new();
    let mut ll_trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    loop {
        let chol = cholesky(&cov, d).map_err(|e| match e {
            Error::Singular(m) => Error::Singular(format!("{m} (eps = {:e})", cfg.eps)),
            other => other,
        })?;
        let hld = half_log_det(&chol, d);
        let white_means: Vec<T> = means.iter().flat_map(|m| forward_substitute(&chol, d, m)).collect();

        // E-step
        let rows: Vec<(Vec<T>, T)> = xs
            .par_iter()
            .map(|x| {
                let y = forward_substitute(&chol, d, x);
                normalize_log(log_joint_whitened(&y, &white_means, &weights, d, hld))
            })
            .collect();
        let ll = rows.iter().map(|r| r.1).sum::<T>() / nf;
        let penalty = T::lit(0.5) * eps * trace_of_inverse(&chol, d);
        let objective = ll - penalty;
        if !objective.is_finite() {
            return Err(Error::Numeric("mixture log-likelihood is not finite".into()));
        }
        let improvement = objective_trace.last().map(|&p: &T| objective - p);
        objective_trace.push(objective);
        ll_trace.push(ll);
        if improvement.is_some_and(|imp| imp < T::lit(cfg.tol)) {
            converged = true;
        }
        if converged || iterations >= cfg.max_iters {
            let means_abs: Vec<T> = means
                .iter()
                .flat_map(|m| m.iter().zip(&center).map(|(&a, &c)| a + c).collect::<Vec<_>>())
                .collect();
            let model = GmmModel::assemble(k, d, means_abs, cov, chol, weights);
            return Ok(GmmFit {
                model,
                objective_trace,
                log_likelihood_trace: ll_trace,
                iterations,
                converged,
            });
        }

        // M-step, fixed summation order
        let mut nk = vec![T::zero(); k];
        let mut sums = vec![vec![T::zero(); d]; k];
        for ((gamma, _), x) in rows.iter().zip(&xs) {
            for o in 0..k {
                let g = gamma[o];
                if g == T::zero() {
                    continue;
                }
                nk[o] += g;
                for (s, &v) in sums[o].iter_mut().zip(x) {
                    *s += g * v;
                }
            }
        }
        for o in 0..k {
            weights[o] = nk[o] / nf;
            if nk[o] > T::zero() {
                let inv = T::one() / nk[o];
                means[o] = sums[o].iter().map(|&s| s * inv).collect();
            }
        }
        // sum_i sum_o g_io (x_i - mu_o)(x_i - mu_o)^T = X^T X - sum_o N_o mu_o mu_o^T
        let mut s = scatter.clone();
        for o in 0..k {
            let m = &means[o];
            for i in 0..d {
                for j in 0..d {
                    s[i * d + j] -= nk[o] * m[i] * m[j];
                }
            }
        }
        cov = finish_cov(s.into_iter().map(|v| v / nf).collect());
        iterations += 1;
    }
}

/// `tr(Sigma^{-1}) = ||L^{-1}||_F^2`.
fn trace_of_inverse<T: Scalar>(chol: &[T], d: usize) -> T {
    let mut total = T::zero();
    let mut e = vec![T::zero(); d];
    for j in 0..d {
        e.iter_mut().for_each(|v| *v = T::zero());
        e[j] = T::one();
        let col = forward_substitute(chol, d, &e);
        total += dot(&col, &col);
    }
    total
}
