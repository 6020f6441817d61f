//! Augmented-Lagrangian completion under exact interpolation and
//! nonnegativity.
//!
//! The problem is split as `min logdet-surrogate(X) + ι₊(Y)` subject to
//! `P_Ω(X) = P_Ω(M)` and `X = Y`. Each round:
//!
//! 1. `X ← P_Ωᶜ(prox_{μ}(Y − Z/μ)) + P_Ω(M)`
//! 2. `Y ← max(X + Z/μ, 0)`
//! 3. `Z ← Z + μ(X − Y)`
//! 4. `μ ← γμ` (capped)
//!
//! starting from `Y = P_Ω(M)`, `Z = 0`, `μ = μ⁰`.

use std::io::Write;
use std::time::Instant;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::RatingMatrix;
use crate::prox::{self, ProxError, SvdStrategy};

/// Default dense-size guard: 2^28 cells per matrix.
pub const DEFAULT_MAX_DENSE_ENTRIES: usize = 1 << 28;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid solver config: {0}")]
    Config(String),
    #[error("rating matrix has no observed entries")]
    EmptyInput,
    #[error("dense {rows}x{cols} iterate exceeds the limit of {limit} entries")]
    Capacity { rows: usize, cols: usize, limit: usize },
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error(transparent)]
    Prox(#[from] ProxError),
    #[error("failed to write trace: {0}")]
    Trace(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub mu0: f64,
    pub gamma: f64,
    pub max_iter: usize,
    pub tol: f64,
    /// Cap on the partial-SVD rank used for large matrices.
    pub svd_rank_budget: Option<usize>,
    pub mu_max: f64,
    pub max_dense_entries: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            mu0: 1e-2,
            gamma: 1.1,
            max_iter: 300,
            tol: 1e-4,
            svd_rank_budget: None,
            mu_max: 1e10,
            max_dense_entries: DEFAULT_MAX_DENSE_ENTRIES,
        }
    }
}

impl SolverConfig {
    pub fn new(mu0: f64, gamma: f64) -> Self {
        Self {
            mu0,
            gamma,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |msg: String| Err(SolverError::Config(msg));
        if !(self.mu0.is_finite() && self.mu0 > 0.0) {
            return bad(format!("mu0 must be > 0, got {}", self.mu0));
        }
        if !(self.gamma.is_finite() && self.gamma > 1.0) {
            return bad(format!("gamma must be > 1, got {}", self.gamma));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive".into());
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return bad(format!("tol must be > 0, got {}", self.tol));
        }
        if self.svd_rank_budget == Some(0) {
            return bad("svd_rank_budget must be positive".into());
        }
        if self.mu_max.is_nan() || self.mu_max < self.mu0 {
            return bad(format!("mu_max ({}) must be >= mu0 ({})", self.mu_max, self.mu0));
        }
        Ok(())
    }

    fn svd_strategy(&self) -> SvdStrategy {
        SvdStrategy {
            rank_cap: self.svd_rank_budget,
            ..SvdStrategy::default()
        }
    }
}

/// Per-dataset (μ⁰, γ) pairs tuned for the standard top-N benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Delicious,
    Lastfm,
    Bx,
    Ml100k,
    Netflix,
    Yahoo,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::Delicious,
        Preset::Lastfm,
        Preset::Bx,
        Preset::Ml100k,
        Preset::Netflix,
        Preset::Yahoo,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Delicious => "delicious",
            Preset::Lastfm => "lastfm",
            Preset::Bx => "bx",
            Preset::Ml100k => "ml100k",
            Preset::Netflix => "netflix",
            Preset::Yahoo => "yahoo",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name().eq_ignore_ascii_case(name))
    }

    /// `(mu0, gamma)`.
    pub fn params(&self) -> (f64, f64) {
        match self {
            Preset::Delicious => (250.0, 4.0),
            Preset::Lastfm => (0.03, 1.5),
            Preset::Bx => (1.2e-3, 1.3),
            Preset::Ml100k => (6e-3, 2.5),
            Preset::Netflix => (0.015, 1.2),
            Preset::Yahoo => (5e-3, 1.1),
        }
    }

    pub fn config(&self) -> SolverConfig {
        let (mu0, gamma) = self.params();
        SolverConfig::new(mu0, gamma)
    }
}

/// Iterates of the splitting scheme.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub z: Array2<f64>,
    pub mu: f64,
    pub iter: usize,
}

impl SolverState {
    /// `Y = P_Ω(M)`, `Z = 0`, `X = P_Ω(M)`.
    pub fn initial(m: &RatingMatrix, mu0: f64) -> Self {
        let y = m.to_dense();
        Self {
            x: y.clone(),
            z: Array2::zeros(y.raw_dim()),
            y,
            mu: mu0,
            iter: 0,
        }
    }
}

/// One line of the iteration trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    /// Penalty used in this iteration.
    pub mu: f64,
    /// `‖X − Y‖_F / max(1, ‖P_Ω(M)‖_F)` after the multiplier step.
    pub residual: f64,
    /// Surrogate value of the low-rank prox iterate, before the observed
    /// entries are re-imposed.
    pub objective: f64,
    pub rank: usize,
    /// `max(‖X − Y‖_∞, ‖X − X_prev‖_∞)`, compared against `tol`.
    pub change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub iterations: usize,
    pub converged: bool,
    pub final_residual: f64,
    pub final_rank: usize,
    pub final_mu: f64,
    pub objective_trace: Vec<f64>,
    /// Seconds.
    pub wall_time: f64,
}

fn check_shape(m: &RatingMatrix, got: (usize, usize)) -> Result<(), SolverError> {
    if m.shape() != got {
        return Err(SolverError::Shape {
            expected: m.shape(),
            got,
        });
    }
    Ok(())
}

fn check_capacity(m: &RatingMatrix, limit: usize) -> Result<(), SolverError> {
    let (rows, cols) = m.shape();
    match rows.checked_mul(cols) {
        Some(cells) if cells <= limit => Ok(()),
        _ => Err(SolverError::Capacity { rows, cols, limit }),
    }
}

struct XStep {
    x: Array2<f64>,
    rank: usize,
    objective: f64,
}

fn x_step_inner(state: &SolverState, m: &RatingMatrix, strategy: &SvdStrategy) -> Result<XStep, SolverError> {
    let mu = state.mu;
    let mut arg = state.y.clone();
    Zip::from(&mut arg).and(&state.z).for_each(|a, &z| *a -= z / mu);
    let out = prox::matrix_prox_with(arg.view(), mu, strategy)?;
    let mut x = out.matrix;
    for e in m.entries() {
        x[[e.user, e.item]] = e.value;
    }
    Ok(XStep {
        x,
        rank: out.spectrum.rank(),
        objective: out.spectrum.logdet(),
    })
}

/// `P_Ωᶜ(prox_μ(Y − Z/μ)) + P_Ω(M)`.
pub fn x_step(state: &SolverState, m: &RatingMatrix) -> Result<Array2<f64>, SolverError> {
    check_shape(m, state.y.dim())?;
    check_shape(m, state.z.dim())?;
    Ok(x_step_inner(state, m, &SvdStrategy::default())?.x)
}

/// `max(X + Z/μ, 0)` elementwise.
pub fn y_step(x: &Array2<f64>, z: &Array2<f64>, mu: f64) -> Array2<f64> {
    assert_eq!(x.dim(), z.dim(), "y_step: shape mismatch");
    let mut y = x.clone();
    Zip::from(&mut y).and(z).for_each(|y, &z| *y = (*y + z / mu).max(0.0));
    y
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    Zip::from(a)
        .and(b)
        .fold(0.0f64, |acc, &p, &q| acc.max((p - q).abs()))
}

fn frobenius_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    Zip::from(a)
        .and(b)
        .fold(0.0f64, |acc, &p, &q| acc + (p - q) * (p - q))
        .sqrt()
}

/// Runs the completion and returns the final `X` with any negative
/// unobserved entries clamped to zero.
pub fn complete(m: &RatingMatrix, cfg: &SolverConfig) -> Result<(Array2<f64>, SolverReport), SolverError> {
    complete_with(m, cfg, |_, _| Ok(()))
}

/// Writes one JSON object per iteration to `trace`.
pub fn complete_traced<W: Write>(
    m: &RatingMatrix,
    cfg: &SolverConfig,
    mut trace: W,
) -> Result<(Array2<f64>, SolverReport), SolverError> {
    let out = complete_with(m, cfg, |rec, _| {
        serde_json::to_writer(&mut trace, rec).map_err(std::io::Error::from)?;
        trace.write_all(b"\n")?;
        Ok(())
    })?;
    trace.flush()?;
    Ok(out)
}

/// Like [`complete`], calling `observe` after every iteration with the trace
/// record and the state (whose `mu` is already advanced for the next round).
///
/// Stops once `max(‖X − Y‖_∞, ‖X − X_prev‖_∞) ≤ tol`. An iteration whose prox
/// step shrank the whole spectrum to zero is not allowed to stop the run
/// unless Ω covers the full matrix: with μ still tiny the iterates sit at
/// `P_Ω(M)` until μ grows enough for any singular value to survive.
pub fn complete_with<F>(
    m: &RatingMatrix,
    cfg: &SolverConfig,
    mut observe: F,
) -> Result<(Array2<f64>, SolverReport), SolverError>
where
    F: FnMut(&TraceRecord, &SolverState) -> Result<(), SolverError>,
{
    cfg.validate()?;
    if m.is_empty() {
        return Err(SolverError::EmptyInput);
    }
    check_capacity(m, cfg.max_dense_entries)?;
    let start = Instant::now();
    let strategy = cfg.svd_strategy();
    let fully_observed = m.len() == m.num_users() * m.num_items();
    let scale = m
        .entries()
        .iter()
        .map(|e| e.value * e.value)
        .sum::<f64>()
        .sqrt()
        .max(1.0);

    let mut state = SolverState::initial(m, cfg.mu0);
    let mut objective_trace = Vec::new();
    let mut converged = false;
    let mut residual = f64::INFINITY;
    let mut rank = 0;

    while state.iter < cfg.max_iter {
        let step = x_step_inner(&state, m, &strategy)?;
        let y = y_step(&step.x, &state.z, state.mu);
        let mu = state.mu;
        Zip::from(&mut state.z)
            .and(&step.x)
            .and(&y)
            .for_each(|z, &x, &y| *z += mu * (x - y));

        let change = max_abs_diff(&step.x, &y).max(max_abs_diff(&step.x, &state.x));
        residual = frobenius_diff(&step.x, &y) / scale;
        rank = step.rank;
        state.x = step.x;
        state.y = y;
        state.iter += 1;
        state.mu = (mu * cfg.gamma).min(cfg.mu_max);
        objective_trace.push(step.objective);

        let record = TraceRecord {
            iter: state.iter,
            mu,
            residual,
            objective: step.objective,
            rank,
            change,
        };
        observe(&record, &state)?;

        if change <= cfg.tol && (rank > 0 || fully_observed) {
            converged = true;
            break;
        }
    }

    let mask = m.mask();
    let mut x_hat = state.x;
    Zip::from(&mut x_hat).and(&mask).for_each(|x, &observed| {
        if !observed && *x < 0.0 {
            *x = 0.0;
        }
    });
    let report = SolverReport {
        iterations: state.iter,
        converged,
        final_residual: residual,
        final_rank: rank,
        final_mu: state.mu,
        objective_trace,
        wall_time: start.elapsed().as_secs_f64(),
    };
    Ok((x_hat, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Entry;
    use approx::assert_abs_diff_eq;
    use ndarray::arr2;

    fn matrix(rows: &[&[Option<f64>]]) -> RatingMatrix {
        let mut entries = Vec::new();
        for (u, row) in rows.iter().enumerate() {
            for (i, v) in row.iter().enumerate() {
                if let Some(value) = v {
                    entries.push(Entry { user: u, item: i, value: *value });
                }
            }
        }
        RatingMatrix::new(rows.len(), rows[0].len(), entries).unwrap()
    }

    #[test]
    fn y_step_examples() {
        let z = Array2::zeros((1, 2));
        assert_eq!(y_step(&arr2(&[[-1.0, 2.0]]), &z, 1.0), arr2(&[[0.0, 2.0]]));
        assert_eq!(y_step(&arr2(&[[1.0]]), &arr2(&[[-3.0]]), 1.0), arr2(&[[0.0]]));
        let x = arr2(&[[0.5, 3.0], [0.0, 1.0]]);
        assert_eq!(y_step(&x, &Array2::zeros((2, 2)), 4.0), x);
    }

    #[test]
    fn x_step_fully_observed_returns_m() {
        let m = matrix(&[&[Some(1.0), Some(2.0)], &[Some(3.0), Some(4.0)]]);
        let mut state = SolverState::initial(&m, 0.5);
        state.y = arr2(&[[9.0, -1.0], [0.0, 7.0]]);
        state.z = arr2(&[[1.0, 1.0], [2.0, -3.0]]);
        assert_eq!(x_step(&state, &m).unwrap(), m.to_dense());
    }

    #[test]
    fn x_step_zero_iterates() {
        let m = matrix(&[&[Some(2.0), None], &[None, Some(5.0)]]);
        let mut state = SolverState::initial(&m, 3.0);
        state.y = Array2::zeros((2, 2));
        assert_eq!(x_step(&state, &m).unwrap(), m.to_dense());
    }

    #[test]
    fn x_step_large_mu_tracks_y() {
        let m = matrix(&[&[Some(1.0), None, Some(2.0)], &[None, Some(3.0), None]]);
        let mut state = SolverState::initial(&m, 1e8);
        state.y = arr2(&[[1.0, 0.7, 2.0], [0.4, 3.0, 1.3]]);
        let x = x_step(&state, &m).unwrap();
        assert_abs_diff_eq!(x, state.y, epsilon = 1e-6);
    }

    #[test]
    fn fully_observed_converges_in_one_iteration() {
        let m = matrix(&[
            &[Some(1.0), Some(2.0), Some(3.0)],
            &[Some(4.0), Some(5.0), Some(6.0)],
            &[Some(7.0), Some(8.0), Some(9.5)],
        ]);
        let (x, report) = complete(&m, &SolverConfig::default()).unwrap();
        assert_eq!(x, m.to_dense());
        assert_eq!(report.iterations, 1);
        assert!(report.converged);
        assert_eq!(report.objective_trace.len(), report.iterations);
    }

    #[test]
    fn two_by_two_rank_one_completion() {
        // Grid search of Σ log(1+σᵢ) over the missing value on [0, 10] with
        // step 1e-3 puts the minimizer at 4.
        let m = matrix(&[&[Some(1.0), Some(2.0)], &[Some(2.0), None]]);
        let oracle = (0..=10_000)
            .map(|k| k as f64 * 1e-3)
            .min_by(|a, b| {
                let f = |v: f64| prox::logdet_objective(arr2(&[[1.0, 2.0], [2.0, v]]).view()).unwrap();
                f(*a).total_cmp(&f(*b))
            })
            .unwrap();
        assert_abs_diff_eq!(oracle, 4.0, epsilon = 1e-3);

        // The penalty has to grow slowly for the iterates to reach the
        // rank-one completion; at gamma = 1.1 they stall near 3.144.
        let cfg = SolverConfig {
            max_iter: 2000,
            ..SolverConfig::new(0.1, 1.01)
        };
        let (x, report) = complete(&m, &cfg).unwrap();
        assert!(report.converged);
        assert!((x[[1, 1]] - 4.0).abs() < 0.1, "got {} after {} iterations", x[[1, 1]], report.iterations);

        let (x, _) = complete(&m, &SolverConfig::new(1e-3, 1.1)).unwrap();
        assert!((x[[1, 1]] - 3.144).abs() < 1e-3, "got {}", x[[1, 1]]);
    }

    #[test]
    fn mu_schedule_and_interpolation_each_iteration() {
        let m = matrix(&[
            &[Some(1.0), None, Some(2.0), None],
            &[None, Some(3.0), None, Some(1.0)],
            &[Some(2.0), Some(1.0), None, None],
        ]);
        let cfg = SolverConfig::new(0.05, 1.7);
        let mut expected_mu = cfg.mu0;
        complete_with(&m, &cfg, |rec, state| {
            assert_eq!(rec.mu, expected_mu);
            expected_mu = (expected_mu * cfg.gamma).min(cfg.mu_max);
            for e in m.entries() {
                assert_eq!(state.x[[e.user, e.item]].to_bits(), e.value.to_bits());
            }
            assert!(state.y.iter().all(|&v| v >= 0.0));
            Ok(())
        })
        .unwrap();
    }

    #[test]
    fn tiny_mu_does_not_stop_on_all_zero_spectrum() {
        let m = matrix(&[&[Some(1.0), Some(2.0)], &[Some(2.0), None]]);
        let (_, report) = complete(&m, &SolverConfig::new(1e-6, 1.5)).unwrap();
        assert!(report.iterations > 2);
        assert!(report.final_rank > 0);
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::new(1.0, 0.9).validate().is_err());
        assert!(SolverConfig::new(1.0, 1.0).validate().is_err());
        assert!(SolverConfig::new(0.0, 2.0).validate().is_err());
        assert!(SolverConfig::new(1.0, 2.0).validate().is_ok());
        let cfg = SolverConfig {
            max_iter: 0,
            ..SolverConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn capacity_guard() {
        let m = RatingMatrix::new(100, 100, vec![Entry { user: 0, item: 0, value: 1.0 }]).unwrap();
        let cfg = SolverConfig {
            max_dense_entries: 9_999,
            ..SolverConfig::default()
        };
        assert!(matches!(complete(&m, &cfg), Err(SolverError::Capacity { .. })));
    }

    #[test]
    fn trace_is_line_delimited_json() {
        let m = matrix(&[&[Some(1.0), Some(2.0)], &[Some(2.0), None]]);
        let mut buf = Vec::new();
        let (_, report) = complete_traced(&m, &SolverConfig::new(0.1, 1.5), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), report.iterations);
        let first: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
        for key in ["iter", "mu", "residual", "objective", "rank"] {
            assert!(first.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn presets_carry_tuned_params() {
        assert_eq!(Preset::Ml100k.params(), (6e-3, 2.5));
        assert_eq!(Preset::Netflix.params(), (0.015, 1.2));
        assert_eq!(Preset::from_name("ML100K"), Some(Preset::Ml100k));
        for p in Preset::ALL {
            assert!(p.config().validate().is_ok());
        }
    }
}
