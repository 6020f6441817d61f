//! Run configuration: command-line flags layered over an optional TOML file
//! layered over a dataset preset.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use mcrec_core::eval::{CvConfig, Method, DEFAULT_N};
use mcrec_core::{Preset, SolverConfig, TripletFormat};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormatArg {
    TsvRating,
    TsvBinary,
}

impl From<FormatArg> for TripletFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::TsvRating => TripletFormat::Rating,
            FormatArg::TsvBinary => TripletFormat::Binary,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Logdet,
    Puresvd,
    Itemknn,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Triplet file (user, item[, value, ...]), tab- or comma-separated.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Output directory.
    #[arg(long, default_value = "mcrec-out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SolverArgs {
    /// Dataset preset supplying (mu0, gamma): delicious, lastfm, bx, ml100k, netflix, yahoo.
    #[arg(long)]
    pub preset: Option<String>,
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub mu0: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long = "max-iter")]
    pub max_iter: Option<usize>,
    /// Rank cap for the partial SVD on large matrices.
    #[arg(long = "svd-rank")]
    pub svd_rank: Option<usize>,
    /// Lift the dense-size guard.
    #[arg(long = "allow-large")]
    pub allow_large: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// PureSVD rank.
    #[arg(long)]
    pub rank: Option<usize>,
    /// ItemKNN neighbor count.
    #[arg(long)]
    pub k: Option<usize>,
    /// Top-N list length.
    #[arg(long = "N")]
    pub n_list: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Folds evaluated concurrently.
    #[arg(long)]
    pub jobs: Option<usize>,
}

/// Contents of a `--config` file. Every key is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub preset: Option<String>,
    pub format: Option<FormatArg>,
    pub method: Option<MethodArg>,
    pub mu0: Option<f64>,
    pub gamma: Option<f64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub svd_rank: Option<usize>,
    pub rank: Option<usize>,
    pub k: Option<usize>,
    #[serde(rename = "N")]
    pub n_list: Option<usize>,
    pub folds: Option<usize>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }
}

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_RANK: usize = 20;
pub const DEFAULT_K: usize = 10;

/// Fully resolved parameters for one run; serialized into the manifest.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub data: PathBuf,
    pub format: FormatArg,
    pub method: MethodArg,
    pub preset: Option<String>,
    pub solver: SolverConfig,
    pub rank: usize,
    pub k: usize,
    pub n_list: usize,
    pub folds: usize,
    pub seed: u64,
    pub jobs: usize,
    pub out: PathBuf,
    pub trace: bool,
}

impl RunConfig {
    pub fn resolve(command: &str, data: &DataArgs, solver: &SolverArgs, eval: &EvalArgs, trace: bool) -> Result<Self> {
        let file = match &solver.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let preset_name = solver.preset.clone().or(file.preset.clone());
        let preset = match &preset_name {
            Some(name) => Some(Preset::from_name(name).with_context(|| format!("unknown preset {name:?}"))?),
            None => None,
        };

        let mut cfg = preset.map(|p| p.config()).unwrap_or_default();
        let pick = |cli: Option<f64>, file: Option<f64>, base: f64| cli.or(file).unwrap_or(base);
        cfg.mu0 = pick(solver.mu0, file.mu0, cfg.mu0);
        cfg.gamma = pick(solver.gamma, file.gamma, cfg.gamma);
        cfg.tol = pick(solver.tol, file.tol, cfg.tol);
        cfg.max_iter = solver.max_iter.or(file.max_iter).unwrap_or(cfg.max_iter);
        cfg.svd_rank_budget = solver.svd_rank.or(file.svd_rank).or(cfg.svd_rank_budget);
        if solver.allow_large {
            cfg.max_dense_entries = usize::MAX;
        }

        let run = Self {
            command: command.to_string(),
            data: data.data.clone(),
            format: data.format.or(file.format).unwrap_or(FormatArg::TsvRating),
            method: eval.method.or(file.method).unwrap_or(MethodArg::Logdet),
            preset: preset.map(|p| p.name().to_string()),
            solver: cfg,
            rank: eval.rank.or(file.rank).unwrap_or(DEFAULT_RANK),
            k: eval.k.or(file.k).unwrap_or(DEFAULT_K),
            n_list: eval.n_list.or(file.n_list).unwrap_or(DEFAULT_N),
            folds: eval.folds.or(file.folds).unwrap_or(5),
            seed: eval.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
            jobs: eval.jobs.or(file.jobs).unwrap_or(1),
            out: data.out.clone(),
            trace,
        };
        run.validate()?;
        Ok(run)
    }

    pub fn validate(&self) -> Result<()> {
        if self.method == MethodArg::Logdet {
            self.solver.validate()?;
        }
        if self.rank == 0 {
            bail!("--rank must be at least 1");
        }
        if self.k == 0 {
            bail!("--k must be at least 1");
        }
        if self.n_list == 0 {
            bail!("--N must be at least 1");
        }
        if self.folds == 0 {
            bail!("--folds must be at least 1");
        }
        if self.jobs == 0 {
            bail!("--jobs must be at least 1");
        }
        Ok(())
    }

    pub fn method(&self) -> Method {
        match self.method {
            MethodArg::Logdet => Method::Logdet(self.solver),
            MethodArg::Puresvd => Method::PureSvd { rank: self.rank },
            MethodArg::Itemknn => Method::ItemKnn { k: self.k },
        }
    }

    pub fn cv(&self) -> CvConfig {
        CvConfig {
            folds: self.folds,
            seed: self.seed,
            jobs: self.jobs,
        }
    }
}
