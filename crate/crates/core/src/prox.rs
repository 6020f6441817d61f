//! The logdet rank surrogate `Σ log(1 + σᵢ)` and its proximal operator.
//!
//! The surrogate is a function of the singular values only, so its prox on a
//! matrix reduces to an independent scalar problem per singular value,
//! applied in the singular basis of the argument.

use ndarray::{Array2, ArrayView2};
use thiserror::Error;

use crate::linalg::{self, LinalgError, ThinSvd};

/// Shrunk singular values below this are set to exactly zero.
pub const FLUSH_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ProxError {
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("beta must be finite and > 0, got {0}")]
    InvalidBeta(f64),
    #[error("sigma_a must be finite and >= 0, got {0}")]
    InvalidSigma(f64),
    #[error("singular values must be nonnegative and nonincreasing")]
    InvalidSpectrum,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Nonincreasing, nonnegative singular values.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularSpectrum(Vec<f64>);

impl SingularSpectrum {
    pub fn new(values: Vec<f64>) -> Result<Self, ProxError> {
        let ok = values.iter().all(|v| v.is_finite() && *v >= 0.0)
            && values.windows(2).all(|w| w[0] >= w[1]);
        if ok {
            Ok(Self(values))
        } else {
            Err(ProxError::InvalidSpectrum)
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Count of strictly positive values.
    pub fn rank(&self) -> usize {
        self.0.iter().take_while(|&&v| v > 0.0).count()
    }

    pub fn logdet(&self) -> f64 {
        self.0.iter().map(|v| v.ln_1p()).sum()
    }

    pub fn nuclear_norm(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// `argmin_{σ ≥ 0} log(1 + σ) + (β/2)(σ − σ_A)²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarProxProblem {
    sigma_a: f64,
    beta: f64,
}

impl ScalarProxProblem {
    pub fn new(sigma_a: f64, beta: f64) -> Result<Self, ProxError> {
        if !(sigma_a.is_finite() && sigma_a >= 0.0) {
            return Err(ProxError::InvalidSigma(sigma_a));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(ProxError::InvalidBeta(beta));
        }
        Ok(Self { sigma_a, beta })
    }

    pub fn sigma_a(&self) -> f64 {
        self.sigma_a
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn objective(&self, sigma: f64) -> f64 {
        let d = sigma - self.sigma_a;
        sigma.ln_1p() + 0.5 * self.beta * d * d
    }

    /// Nonnegative real roots of the stationarity condition
    /// `1/(1+σ) + β(σ − σ_A) = 0`, i.e. `σ² + (1 − σ_A)σ + (1/β − σ_A) = 0`.
    pub fn stationary_points(&self) -> Vec<f64> {
        let b = 1.0 - self.sigma_a;
        let c = 1.0 / self.beta - self.sigma_a;
        let disc = (1.0 + self.sigma_a).powi(2) - 4.0 / self.beta;
        if disc < 0.0 {
            return Vec::new();
        }
        let sq = disc.sqrt();
        // Cancellation-free pair: q and c/q.
        let q = -0.5 * (b + b.signum() * sq);
        let mut roots = if q == 0.0 {
            vec![-0.5 * b]
        } else {
            vec![q, c / q]
        };
        roots.retain(|r| r.is_finite() && *r >= 0.0);
        roots
    }
}

/// Scalar prox by enumerating `{0}` plus the nonnegative stationary points
/// and keeping the lowest objective (the smaller candidate on exact ties).
pub fn scalar_prox(p: ScalarProxProblem) -> f64 {
    let mut best = 0.0;
    let mut best_val = p.objective(0.0);
    for r in p.stationary_points() {
        let val = p.objective(r);
        if val < best_val || (val == best_val && r < best) {
            best = r;
            best_val = val;
        }
    }
    best
}

/// Applies [`scalar_prox`] to every value and flushes tiny results to zero.
/// The scalar prox is monotone in `σ_A`; a running minimum removes rounding
/// flips between nearly equal inputs on either side of the jump to zero.
pub fn shrink_spectrum(values: &[f64], beta: f64) -> Result<SingularSpectrum, ProxError> {
    let mut shrunk = Vec::with_capacity(values.len());
    let mut ceiling = f64::INFINITY;
    for &s in values {
        let v = scalar_prox(ScalarProxProblem::new(s.max(0.0), beta)?);
        let v = if v < FLUSH_THRESHOLD { 0.0 } else { v.min(ceiling) };
        ceiling = v;
        shrunk.push(v);
    }
    SingularSpectrum::new(shrunk)
}

pub fn spectrum(x: ArrayView2<f64>) -> Result<SingularSpectrum, ProxError> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ProxError::NonFinite);
    }
    if x.is_empty() {
        return SingularSpectrum::new(Vec::new());
    }
    let svd = linalg::full_svd(x)?;
    SingularSpectrum::new(svd.s.iter().map(|v| v.max(0.0)).collect())
}

/// `Σ log(1 + σᵢ(x))`, equal to `logdet((xᵀx)^{1/2} + I)`.
pub fn logdet_objective(x: ArrayView2<f64>) -> Result<f64, ProxError> {
    Ok(spectrum(x)?.logdet())
}

pub fn nuclear_norm(x: ArrayView2<f64>) -> Result<f64, ProxError> {
    Ok(spectrum(x)?.nuclear_norm())
}

/// How the singular basis of the prox argument is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvdStrategy {
    /// Use the full SVD when `min(m, n)` is at most this.
    pub full_svd_limit: usize,
    /// First rank tried by the partial SVD.
    pub initial_rank: usize,
    /// Upper bound on the partial SVD rank; `None` means `min(m, n)`.
    pub rank_cap: Option<usize>,
    pub seed: u64,
}

impl Default for SvdStrategy {
    fn default() -> Self {
        Self {
            full_svd_limit: 2000,
            initial_rank: 32,
            rank_cap: None,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProxOutput {
    pub matrix: Array2<f64>,
    /// Spectrum after shrinkage.
    pub spectrum: SingularSpectrum,
}

/// Matrix prox `argmin_X Σ log(1+σᵢ(X)) + (β/2)‖X − a‖²_F` with the
/// default SVD strategy.
pub fn matrix_prox(a: ArrayView2<f64>, beta: f64) -> Result<Array2<f64>, ProxError> {
    matrix_prox_with(a, beta, &SvdStrategy::default()).map(|out| out.matrix)
}

pub fn matrix_prox_with(
    a: ArrayView2<f64>,
    beta: f64,
    strategy: &SvdStrategy,
) -> Result<ProxOutput, ProxError> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(ProxError::InvalidBeta(beta));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(ProxError::NonFinite);
    }
    let (m, n) = a.dim();
    let full = m.min(n);
    if full == 0 {
        return Ok(ProxOutput {
            matrix: a.to_owned(),
            spectrum: SingularSpectrum::new(Vec::new())?,
        });
    }
    let (svd, spectrum) = if full <= strategy.full_svd_limit {
        let svd = linalg::full_svd(a)?;
        let spectrum = shrink_spectrum(&clamped(&svd), beta)?;
        (svd, spectrum)
    } else {
        partial_prox_basis(a, beta, strategy)?
    };
    let matrix = svd.reconstruct_with(spectrum.values());
    Ok(ProxOutput { matrix, spectrum })
}

fn clamped(svd: &ThinSvd) -> Vec<f64> {
    svd.s.iter().map(|v| v.max(0.0)).collect()
}

// Grows the partial SVD rank until the smallest computed singular value is
// shrunk to zero (so every discarded one would be too) or the cap is hit.
fn partial_prox_basis(
    a: ArrayView2<f64>,
    beta: f64,
    strategy: &SvdStrategy,
) -> Result<(ThinSvd, SingularSpectrum), ProxError> {
    let full = a.nrows().min(a.ncols());
    let cap = strategy.rank_cap.unwrap_or(full).clamp(1, full);
    let mut k = strategy.initial_rank.clamp(1, cap);
    loop {
        let svd = linalg::randomized_svd(a, k, 10, 2, strategy.seed)?;
        let spectrum = shrink_spectrum(&clamped(&svd), beta)?;
        let tail_zero = spectrum.values().last().is_none_or(|&v| v == 0.0);
        if tail_zero || k >= cap {
            return Ok((svd, spectrum));
        }
        k = (2 * k).min(cap);
    }
}
