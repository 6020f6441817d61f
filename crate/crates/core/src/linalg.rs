//! Thin wrappers over the dense SVD and a seeded randomized partial SVD for
//! matrices too large to decompose fully. Decompositions run in faer; the
//! rest of the crate sees ndarray.

use faer::{Mat, MatRef};
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("SVD failed: {0}")]
    Svd(String),
}

/// `a = u · diag(s) · vt` with `s` nonincreasing.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: Array2<f64>,
    pub s: Array1<f64>,
    pub vt: Array2<f64>,
}

impl ThinSvd {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// `u[:, ..k] · diag(weights[..k]) · vt[..k, :]` where `k` is the number
    /// of leading nonzero weights.
    pub fn reconstruct_with(&self, weights: &[f64]) -> Array2<f64> {
        let k = weights.iter().take_while(|&&w| w != 0.0).count();
        let (m, n) = (self.u.nrows(), self.vt.ncols());
        if k == 0 {
            return Array2::zeros((m, n));
        }
        let mut left = self.u.slice(s![.., ..k]).to_owned();
        for (mut col, &w) in left.axis_iter_mut(Axis(1)).zip(weights) {
            col *= w;
        }
        left.dot(&self.vt.slice(s![..k, ..]))
    }

    /// Keeps the leading `k` triplets.
    pub fn truncate(mut self, k: usize) -> Self {
        let k = k.min(self.s.len());
        self.u = self.u.slice(s![.., ..k]).to_owned();
        self.vt = self.vt.slice(s![..k, ..]).to_owned();
        self.s = self.s.slice(s![..k]).to_owned();
        self
    }
}

fn to_faer(a: ArrayView2<f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn to_ndarray(a: MatRef<'_, f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.nrows(), a.ncols()), |(i, j)| a[(i, j)])
}

/// Economy SVD.
pub fn full_svd(a: ArrayView2<f64>) -> Result<ThinSvd, LinalgError> {
    let svd = to_faer(a)
        .thin_svd()
        .map_err(|e| LinalgError::Svd(format!("{e:?}")))?;
    let s = svd.S().column_vector();
    Ok(ThinSvd {
        u: to_ndarray(svd.U()),
        s: Array1::from_shape_fn(s.nrows(), |i| s[i]),
        vt: to_ndarray(svd.V().transpose()),
    })
}

fn orthonormal_basis(y: &Array2<f64>) -> Array2<f64> {
    to_ndarray(to_faer(y.view()).qr().compute_thin_Q().as_ref())
}

/// Leading `k` singular triplets by randomized subspace iteration.
///
/// The test matrix is drawn from a ChaCha stream seeded with `seed`, so the
/// result is reproducible. `power_iters` sharpens the spectrum decay;
/// `oversample` extra directions are carried and dropped at the end.
pub fn randomized_svd(
    a: ArrayView2<f64>,
    k: usize,
    oversample: usize,
    power_iters: usize,
    seed: u64,
) -> Result<ThinSvd, LinalgError> {
    let (m, n) = a.dim();
    let width = (k + oversample).min(m.min(n));
    if width == m.min(n) {
        return full_svd(a).map(|svd| svd.truncate(k));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probe = Array2::from_shape_fn((n, width), |_| rng.random_range(-1.0..1.0));
    let mut q = orthonormal_basis(&a.dot(&probe));
    for _ in 0..power_iters {
        let w = orthonormal_basis(&a.t().dot(&q));
        q = orthonormal_basis(&a.dot(&w));
    }
    let small = q.t().dot(&a);
    let inner = full_svd(small.view())?;
    Ok(ThinSvd {
        u: q.dot(&inner.u),
        s: inner.s,
        vt: inner.vt,
    }
    .truncate(k))
}
