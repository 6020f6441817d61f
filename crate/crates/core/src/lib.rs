//! Top-N recommendation by logdet-regularized matrix completion.
//!
//! The unobserved cells of a user-item matrix are filled by an augmented
//! Lagrangian scheme that keeps every observed value exactly, keeps the
//! result nonnegative, and pushes the completion toward low rank through the
//! surrogate `Σ log(1 + σᵢ)`. Each user's unobserved items are then ranked by
//! their completed value.
//!
//! Modules, bottom up:
//!
//! - [`data`]: triplet loading, dataset statistics, leave-one-out folds
//! - [`linalg`]: SVD backends
//! - [`prox`]: surrogate evaluation and its proximal operator
//! - [`solver`]: the completion iteration
//! - [`recommend`]: top-N lists and reconstruction statistics
//! - [`baselines`]: PureSVD and item kNN scorers
//! - [`eval`]: HR / ARHR and the cross-validation harness

pub mod baselines;
pub mod data;
pub mod eval;
pub mod linalg;
pub mod prox;
pub mod recommend;
pub mod solver;

#[cfg(test)]
mod testutil;

pub use data::{dataset_stats, load_triplets, make_folds, DatasetMeta, Delimiter, Entry, FoldSplit, RatingMatrix, TripletFormat};
pub use eval::{arhr, hit_rate, run_cv, run_cv_multi, CvConfig, EvalReport, Method, Scorer};
pub use prox::{logdet_objective, matrix_prox, scalar_prox, ScalarProxProblem, SingularSpectrum};
pub use recommend::{reconstruction_stats, top_n, top_n_all, RankedList, ReconStats};
pub use solver::{complete, Preset, SolverConfig, SolverReport, SolverState};
