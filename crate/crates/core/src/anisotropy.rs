//! Anisotropy reduction: mean-centering plus removal of the top principal
//! directions, and a mean-pairwise-cosine measure of how anisotropic a set is.

use std::fs;
use std::path::Path;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::linalg::{cosine, dot, normalize_in_place, symmetric_eigen};
use crate::scalar::Scalar;
use crate::seed::rng_from_seed;

/// Pair counts up to this bound are scored exhaustively.
pub const EXHAUSTIVE_PAIR_LIMIT: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct AnisotropyTransform<T> {
    mean: Vec<T>,
    components: Vec<Vec<T>>,
    center: bool,
}

impl<T: Scalar> AnisotropyTransform<T> {
    /// The identity transform: no centering, no removal.
    pub fn identity(dim: usize) -> Self {
        AnisotropyTransform {
            mean: vec![T::zero(); dim],
            components: Vec::new(),
            center: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    pub fn components(&self) -> &[Vec<T>] {
        &self.components
    }

    pub fn num_removed(&self) -> usize {
        self.components.len()
    }

    /// `x' = (x - mu) - sum_i <x - mu, u_i> u_i`
    pub fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        let mut y: Vec<T> = if self.center {
            x.iter().zip(&self.mean).map(|(&a, &m)| a - m).collect()
        } else {
            x.to_vec()
        };
        for u in &self.components {
            let p = dot(&y, u);
            for (yi, &ui) in y.iter_mut().zip(u) {
                *yi -= p * ui;
            }
        }
        Ok(y)
    }

    /// Binary form: `u32 dim, u32 k, u8 centered`, then mean and components as
    /// `f64` little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        out.extend_from_slice(&(self.components.len() as u32).to_le_bytes());
        out.push(self.center as u8);
        for &v in self.mean.iter().chain(self.components.iter().flatten()) {
            out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 9 {
            return Err(Error::Format {
                offset: 0,
                msg: "anisotropy blob shorter than header".into(),
            });
        }
        let dim = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let k = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let center = bytes[8] != 0;
        let want = 9 + 8 * dim * (k + 1);
        if bytes.len() != want {
            return Err(Error::Format {
                offset: bytes.len().min(want) as u64,
                msg: format!("expected {want} bytes for dim={dim}, k={k}"),
            });
        }
        let vals: Vec<T> = bytes[9..]
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        let mean = vals[..dim].to_vec();
        let components = vals[dim..].chunks(dim.max(1)).take(k).map(<[T]>::to_vec).collect();
        Ok(AnisotropyTransform {
            mean,
            components,
            center,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Flips `u` so its largest-magnitude coordinate is positive (first wins ties).
fn fix_sign<T: Scalar>(u: &mut [T]) {
    let mut best = 0;
    for (i, v) in u.iter().enumerate() {
        if v.abs() > u[best].abs() {
            best = i;
        }
    }
    if u.get(best).is_some_and(|&v| v < T::zero()) {
        u.iter_mut().for_each(|v| *v = -*v);
    }
}

/// Fits mean-centering plus removal of the top `k` principal directions.
pub fn fit_transform<T: Scalar, V: AsRef<[T]>>(vectors: &[V], k: usize) -> Result<AnisotropyTransform<T>> {
    let n = vectors.len();
    if n == 0 {
        return Err(Error::invalid("anisotropy fit needs at least one vector"));
    }
    let dim = vectors[0].as_ref().len();
    if k >= dim || k >= n {
        return Err(Error::invalid(format!(
            "k_aniso = {k} must be smaller than both the dimension {dim} and the vector count {n}"
        )));
    }
    let mut mean = vec![T::zero(); dim];
    for v in vectors {
        let v = v.as_ref();
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.len(),
            });
        }
        for (m, &x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    let nf = T::from_usize_lossy(n);
    mean.iter_mut().for_each(|m| *m /= nf);
    if k == 0 {
        return Ok(AnisotropyTransform {
            mean,
            components: Vec::new(),
            center: true,
        });
    }
    let centered: Vec<Vec<T>> = vectors
        .iter()
        .map(|v| v.as_ref().iter().zip(&mean).map(|(&x, &m)| x - m).collect())
        .collect();

    let mut components = if dim <= n {
        // eigenvectors of the d x d scatter matrix
        let mut s = vec![T::zero(); dim * dim];
        for x in &centered {
            for i in 0..dim {
                for j in 0..=i {
                    s[i * dim + j] += x[i] * x[j];
                }
            }
        }
        for i in 0..dim {
            for j in 0..i {
                s[j * dim + i] = s[i * dim + j];
            }
        }
        let (_, vecs) = symmetric_eigen(&s, dim)?;
        vecs.chunks(dim).take(k).map(<[T]>::to_vec).collect::<Vec<_>>()
    } else {
        // fewer points than dimensions: go through the n x n Gram matrix
        let mut g = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = dot(&centered[i], &centered[j]);
                g[i * n + j] = v;
                g[j * n + i] = v;
            }
        }
        let (_, vecs) = symmetric_eigen(&g, n)?;
        let mut comps: Vec<Vec<T>> = Vec::with_capacity(k);
        for coeffs in vecs.chunks(n).take(k) {
            let mut u = vec![T::zero(); dim];
            for (c, x) in coeffs.iter().zip(&centered) {
                for (ui, &xi) in u.iter_mut().zip(x) {
                    *ui += *c * xi;
                }
            }
            comps.push(u);
        }
        orthonormalize(comps, dim)
    };
    for u in &mut components {
        fix_sign(u);
    }
    Ok(AnisotropyTransform {
        mean,
        components,
        center: true,
    })
}

/// Gram-Schmidt; directions that collapse (rank deficiency) are replaced by
/// the first standard basis vector that is still independent.
fn orthonormalize<T: Scalar>(vs: Vec<Vec<T>>, dim: usize) -> Vec<Vec<T>> {
    let tol = T::lit(1e-10);
    let mut out: Vec<Vec<T>> = Vec::with_capacity(vs.len());
    let mut basis = 0;
    for v in vs {
        let mut cand = v;
        loop {
            for u in &out {
                let p = dot(&cand, u);
                for (c, &ui) in cand.iter_mut().zip(u) {
                    *c -= p * ui;
                }
            }
            let n = crate::linalg::norm(&cand);
            if n > tol && normalize_in_place(&mut cand) {
                break;
            }
            cand = vec![T::zero(); dim];
            cand[basis.min(dim - 1)] = T::one();
            basis += 1;
        }
        out.push(cand);
    }
    out
}

/// Mean cosine over unordered pairs of distinct vectors.
///
/// Exhaustive when the pair count is at most [`EXHAUSTIVE_PAIR_LIMIT`],
/// otherwise `sample_size` pairs drawn with the given seed. Zero vectors are
/// skipped with a warning.
pub fn mean_pairwise_cosine<T: Scalar, V: AsRef<[T]>>(vectors: &[V], sample_size: usize, seed: u64) -> Result<T> {
    let live: Vec<&[T]> = vectors
        .iter()
        .map(AsRef::as_ref)
        .filter(|v| v.iter().any(|x| *x != T::zero()))
        .collect();
    let skipped = vectors.len() - live.len();
    if skipped > 0 {
        log::warn!("mean_pairwise_cosine: skipped {skipped} zero vector(s)");
    }
    let n = live.len();
    if n < 2 {
        return Err(Error::invalid("need at least two nonzero vectors"));
    }
    let pairs = n * (n - 1) / 2;
    let mut total = T::zero();
    let mut count = 0usize;
    if pairs <= EXHAUSTIVE_PAIR_LIMIT {
        for i in 0..n {
            for j in i + 1..n {
                total += cosine(live[i], live[j]).expect("nonzero");
                count += 1;
            }
        }
    } else {
        let mut rng = rng_from_seed(seed);
        for _ in 0..sample_size.max(1) {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            total += cosine(live[i], live[j]).expect("nonzero");
            count += 1;
        }
    }
    Ok(total / T::from_usize_lossy(count))
}
