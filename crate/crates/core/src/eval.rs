//! Hit rate, average reciprocal hit rank and the cross-validation harness.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::baselines::{self, BaselineError};
use crate::data::{self, DataError, RatingMatrix};
use crate::recommend::{self, RankedList, RecommendError};
use crate::solver::{self, SolverConfig, SolverError, SolverReport};

/// List length used when none is given.
pub const DEFAULT_N: usize = 10;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("test user {0} has no ranked list")]
    MissingList(usize),
    #[error("no users with a held-out item")]
    NoTestUsers,
    #[error("list length must be at least 1")]
    InvalidListLength,
    #[error("at least one list length is required")]
    EmptyGrid,
    #[error("fold {fold} failed")]
    Fold {
        fold: usize,
        #[source]
        source: Box<EvalError>,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Recommend(#[from] RecommendError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where a user's held-out item landed; `position` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HitRecord {
    pub user: usize,
    pub position: Option<usize>,
}

pub fn hit_records(lists: &[RankedList], test: &BTreeMap<usize, usize>) -> Result<Vec<HitRecord>, EvalError> {
    let by_user: HashMap<usize, &RankedList> = lists.iter().map(|l| (l.user, l)).collect();
    test.iter()
        .map(|(&user, &item)| {
            let list = by_user.get(&user).ok_or(EvalError::MissingList(user))?;
            Ok(HitRecord {
                user,
                position: list.position(item),
            })
        })
        .collect()
}

/// `(HR, ARHR)` in one pass.
///
/// Hits are counted per position and ARHR is accumulated as
/// `Σ_p (count_p / #users) / p`, so when every hit sits at one position `p`
/// the result is exactly `HR / p`.
pub fn hr_arhr(lists: &[RankedList], test: &BTreeMap<usize, usize>) -> Result<(f64, f64), EvalError> {
    let records = hit_records(lists, test)?;
    if records.is_empty() {
        return Err(EvalError::NoTestUsers);
    }
    let users = records.len() as f64;
    let mut per_position: BTreeMap<usize, usize> = BTreeMap::new();
    for p in records.iter().filter_map(|r| r.position) {
        *per_position.entry(p).or_default() += 1;
    }
    let hits: usize = per_position.values().sum();
    let arhr = per_position
        .iter()
        .map(|(&p, &count)| (count as f64 / users) / p as f64)
        .sum();
    Ok((hits as f64 / users, arhr))
}

/// `#hits / #users` over users that have a test item.
pub fn hit_rate(lists: &[RankedList], test: &BTreeMap<usize, usize>) -> Result<f64, EvalError> {
    hr_arhr(lists, test).map(|(hr, _)| hr)
}

/// `(1/#users) Σ_hits 1/p`.
pub fn arhr(lists: &[RankedList], test: &BTreeMap<usize, usize>) -> Result<f64, EvalError> {
    hr_arhr(lists, test).map(|(_, arhr)| arhr)
}

/// Score matrix produced by a method on one training split.
pub struct Scored {
    pub scores: Array2<f64>,
    pub solver: Option<SolverReport>,
}

/// A method that turns a training matrix into user-item scores.
pub trait Scorer: Sync {
    fn name(&self) -> String;
    fn params(&self) -> String;
    fn score(&self, train: &RatingMatrix) -> Result<Scored, EvalError>;
}

#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Logdet(SolverConfig),
    PureSvd { rank: usize },
    ItemKnn { k: usize },
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Logdet(_) => "logdet",
            Method::PureSvd { .. } => "puresvd",
            Method::ItemKnn { .. } => "itemknn",
        })
    }
}

impl Scorer for Method {
    fn name(&self) -> String {
        self.to_string()
    }

    fn params(&self) -> String {
        match self {
            Method::Logdet(cfg) => format!("mu0={} gamma={}", cfg.mu0, cfg.gamma),
            Method::PureSvd { rank } => format!("rank={rank}"),
            Method::ItemKnn { k } => format!("k={k}"),
        }
    }

    fn score(&self, train: &RatingMatrix) -> Result<Scored, EvalError> {
        Ok(match self {
            Method::Logdet(cfg) => {
                let (scores, report) = solver::complete(train, cfg)?;
                Scored {
                    scores,
                    solver: Some(report),
                }
            }
            Method::PureSvd { rank } => Scored {
                scores: baselines::puresvd_scores(train, *rank)?,
                solver: None,
            },
            Method::ItemKnn { k } => Scored {
                scores: baselines::itemknn_scores(train, *k)?,
                solver: None,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub hr: f64,
    pub arhr: f64,
    pub n_list: usize,
    pub n_users: usize,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    /// Seconds spent producing the scores.
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub method: String,
    pub params: String,
    pub n_list: usize,
    pub seed: u64,
    pub per_fold: Vec<FoldMetrics>,
    pub mean_hr: f64,
    pub mean_arhr: f64,
    /// Users with a held-out item, per fold.
    pub n_users_evaluated: usize,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("EvalReport serializes")
    }

    pub fn mean_iterations(&self) -> Option<f64> {
        let its: Option<Vec<usize>> = self.per_fold.iter().map(|f| f.iterations).collect();
        its.map(|v| v.iter().sum::<usize>() as f64 / v.len() as f64)
    }

    pub fn mean_wall_time(&self) -> f64 {
        self.per_fold.iter().map(|f| f.wall_time).sum::<f64>() / self.per_fold.len() as f64
    }

    /// `method,params,HR,ARHR`, optionally preceded by the header.
    pub fn write_table_row<W: Write>(&self, out: W, header: bool) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        if header {
            w.write_record(["method", "params", "HR", "ARHR"])?;
        }
        w.write_record([
            self.method.clone(),
            self.params.clone(),
            format!("{:.4}", self.mean_hr),
            format!("{:.4}", self.mean_arhr),
        ])?;
        w.flush()?;
        Ok(())
    }
}

/// Cross-validation settings shared by every method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvConfig {
    pub folds: usize,
    pub seed: u64,
    /// Folds evaluated concurrently.
    pub jobs: usize,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            seed: 42,
            jobs: 1,
        }
    }
}

/// k-fold leave-one-out evaluation at a single list length.
pub fn run_cv<S: Scorer + ?Sized>(
    m: &RatingMatrix,
    method: &S,
    n_list: usize,
    cv: &CvConfig,
) -> Result<EvalReport, EvalError> {
    let mut reports = run_cv_multi(m, method, &[n_list], cv)?;
    Ok(reports.remove(0))
}

/// Trains once per fold and scores every list length in `n_lists`, so an
/// N sweep costs one training run per fold. Reports come back in the order
/// of `n_lists`.
pub fn run_cv_multi<S: Scorer + ?Sized>(
    m: &RatingMatrix,
    method: &S,
    n_lists: &[usize],
    cv: &CvConfig,
) -> Result<Vec<EvalReport>, EvalError> {
    if n_lists.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    if n_lists.contains(&0) {
        return Err(EvalError::InvalidListLength);
    }
    let folds = data::make_folds(m, cv.folds, cv.seed)?;
    if folds[0].test.is_empty() {
        return Err(EvalError::NoTestUsers);
    }
    let max_n = *n_lists.iter().max().expect("non-empty");

    let eval_fold = |(fold, split): (usize, &data::FoldSplit)| -> Result<Vec<FoldMetrics>, EvalError> {
        let wrap = |e: EvalError| EvalError::Fold {
            fold,
            source: Box::new(e),
        };
        let start = Instant::now();
        let scored = method.score(&split.train).map_err(wrap)?;
        let wall_time = start.elapsed().as_secs_f64();
        let lists = recommend::top_n_all(&scored.scores, &split.train, max_n)
            .map_err(|e| wrap(e.into()))?;
        n_lists
            .iter()
            .map(|&n| {
                let cut: Vec<RankedList> = lists.iter().map(|l| l.truncated(n)).collect();
                let (hr, arhr) = hr_arhr(&cut, &split.test).map_err(wrap)?;
                Ok(FoldMetrics {
                    fold,
                    hr,
                    arhr,
                    n_list: n,
                    n_users: split.test.len(),
                    iterations: scored.solver.as_ref().map(|r| r.iterations),
                    converged: scored.solver.as_ref().map(|r| r.converged),
                    wall_time,
                })
            })
            .collect()
    };

    let per_fold: Vec<Vec<FoldMetrics>> = if cv.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cv.jobs)
            .build()
            .expect("thread pool");
        pool.install(|| folds.par_iter().enumerate().map(eval_fold).collect::<Result<_, _>>())?
    } else {
        folds.iter().enumerate().map(eval_fold).collect::<Result<_, _>>()?
    };

    Ok(n_lists
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let rows: Vec<FoldMetrics> = per_fold.iter().map(|f| f[k].clone()).collect();
            let count = rows.len() as f64;
            EvalReport {
                method: method.name(),
                params: method.params(),
                n_list: n,
                seed: cv.seed,
                mean_hr: rows.iter().map(|r| r.hr).sum::<f64>() / count,
                mean_arhr: rows.iter().map(|r| r.arhr).sum::<f64>() / count,
                n_users_evaluated: rows[0].n_users,
                per_fold: rows,
            }
        })
        .collect())
}
