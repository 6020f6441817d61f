mod config;
mod output;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mcrec_core::data::{self, Delimiter};
use mcrec_core::eval::{self, Method};
use mcrec_core::recommend;
use mcrec_core::solver;
use mcrec_core::RatingMatrix;
use serde::Serialize;

use config::{DataArgs, EvalArgs, MethodArg, RunConfig, SolverArgs};

#[derive(Debug, Parser)]
#[command(name = "mcrec", version, about = "Top-N recommendation by logdet matrix completion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Complete the full rating matrix and write solver diagnostics.
    Complete {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        solver: SolverArgs,
        /// Write a line-delimited JSON iteration trace.
        #[arg(long)]
        trace: bool,
        /// Dump unobserved entries above this value to completed.csv.
        #[arg(long = "dump-threshold")]
        dump_threshold: Option<f64>,
    },
    /// Cross-validated HR / ARHR for one method.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// One evaluation per grid point, written as long-format CSV.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        eval: EvalArgs,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Dataset statistics.
    Stats {
        #[command(flatten)]
        data: DataArgs,
    },
}

#[derive(Debug, Clone, Args)]
struct GridArgs {
    #[arg(long = "grid-mu0", id = "grid_mu0", value_delimiter = ',')]
    mu0: Vec<f64>,
    #[arg(long = "grid-gamma", id = "grid_gamma", value_delimiter = ',')]
    gamma: Vec<f64>,
    #[arg(long = "grid-n", id = "grid_n", value_delimiter = ',')]
    n: Vec<usize>,
    #[arg(long = "grid-rank", id = "grid_rank", value_delimiter = ',')]
    rank: Vec<usize>,
    #[arg(long = "grid-k", id = "grid_k", value_delimiter = ',')]
    k: Vec<usize>,
}

impl GridArgs {
    fn is_empty(&self) -> bool {
        self.mu0.is_empty() && self.gamma.is_empty() && self.n.is_empty() && self.rank.is_empty() && self.k.is_empty()
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Complete {
            data,
            solver,
            trace,
            dump_threshold,
        } => {
            let run = RunConfig::resolve("complete", &data, &solver, &EvalArgs::default(), trace)?;
            cmd_complete(&run, dump_threshold)
        }
        Command::Evaluate { data, solver, eval } => {
            let run = RunConfig::resolve("evaluate", &data, &solver, &eval, false)?;
            cmd_evaluate(&run)
        }
        Command::Sweep {
            data,
            solver,
            eval,
            grid,
        } => {
            if grid.is_empty() {
                bail!("sweep needs at least one non-empty grid (--grid-mu0, --grid-gamma, --grid-n, --grid-rank or --grid-k)");
            }
            let run = RunConfig::resolve("sweep", &data, &solver, &eval, false)?;
            cmd_sweep(&run, &grid)
        }
        Command::Stats { data } => {
            let run = RunConfig::resolve("stats", &data, &SolverArgs::default(), &EvalArgs::default(), false)?;
            cmd_stats(&run)
        }
    }
}

fn load(run: &RunConfig) -> Result<RatingMatrix> {
    let path = &run.data;
    let file = File::open(path).with_context(|| format!("cannot open dataset {}", path.display()))?;
    data::load_triplets(BufReader::new(file), run.format.into(), Delimiter::Auto)
        .with_context(|| format!("cannot parse {}", path.display()))
}

fn cmd_stats(run: &RunConfig) -> Result<()> {
    let m = load(run)?;
    let meta = data::dataset_stats(&m)?;
    output::write_json(&run.out, "stats.json", &meta)?;
    output::write_atomic(&run.out, "stats.csv", |w| Ok(meta.write_csv(w)?))?;
    output::write_manifest(run)?;
    println!("{}", meta.to_json());
    Ok(())
}

#[derive(Debug, Serialize)]
struct CompletionSummary {
    users: usize,
    items: usize,
    observed: usize,
    final_rank: usize,
    converged: bool,
    iterations: usize,
    reconstruction: recommend::ReconStats,
}

fn cmd_complete(run: &RunConfig, dump_threshold: Option<f64>) -> Result<()> {
    let m = load(run)?;
    std::fs::create_dir_all(&run.out)?;
    let (x_hat, report) = if run.trace {
        // The trace is streamed while the solver runs, then moved into place.
        let mut tmp = tempfile::NamedTempFile::new_in(&run.out)?;
        let result = solver::complete_traced(&m, &run.solver, BufWriter::new(tmp.as_file_mut()))?;
        tmp.persist(run.out.join("trace.jsonl"))?;
        result
    } else {
        solver::complete(&m, &run.solver)?
    };
    let stats = recommend::reconstruction_stats(&x_hat, &m)?;
    let summary = CompletionSummary {
        users: m.num_users(),
        items: m.num_items(),
        observed: m.len(),
        final_rank: report.final_rank,
        converged: report.converged,
        iterations: report.iterations,
        reconstruction: stats,
    };
    output::write_json(&run.out, "solver_report.json", &report)?;
    output::write_json(&run.out, "summary.json", &summary)?;
    output::write_atomic(&run.out, "id_map.csv", |w| Ok(data::write_id_map(&m, w)?))?;
    if let Some(threshold) = dump_threshold {
        let mask = m.mask();
        output::write_atomic(&run.out, "completed.csv", |w| {
            writeln!(w, "user_id,item_id,value")?;
            for ((u, i), &v) in x_hat.indexed_iter() {
                if !mask[[u, i]] && v > threshold {
                    writeln!(w, "{},{},{}", m.user_ids()[u], m.item_ids()[i], v)?;
                }
            }
            Ok(())
        })?;
    }
    output::write_manifest(run)?;
    println!(
        "converged={} iterations={} rank={} residual={:.3e} mean_recovered={:.4} wall_time={:.2}s",
        report.converged,
        report.iterations,
        report.final_rank,
        report.final_residual,
        summary.reconstruction.mean_recovered,
        report.wall_time
    );
    Ok(())
}

fn cmd_evaluate(run: &RunConfig) -> Result<()> {
    let m = load(run)?;
    let report = eval::run_cv(&m, &run.method(), run.n_list, &run.cv())?;
    output::write_json(&run.out, "eval_report.json", &report)?;
    output::write_atomic(&run.out, "table2.csv", |w| Ok(report.write_table_row(w, true)?))?;
    output::write_manifest(run)?;
    for f in &report.per_fold {
        println!("fold {} HR={:.4} ARHR={:.4} time={:.2}s", f.fold, f.hr, f.arhr, f.wall_time);
    }
    println!(
        "{} {} N={} HR={:.4} ARHR={:.4}",
        report.method, report.params, report.n_list, report.mean_hr, report.mean_arhr
    );
    Ok(())
}

fn methods_for_grid(run: &RunConfig, grid: &GridArgs) -> Result<Vec<Method>> {
    let or_base = |values: &[f64], base: f64| if values.is_empty() { vec![base] } else { values.to_vec() };
    let or_base_n = |values: &[usize], base: usize| if values.is_empty() { vec![base] } else { values.to_vec() };
    let mut methods = Vec::new();
    match run.method {
        MethodArg::Logdet => {
            if !grid.rank.is_empty() || !grid.k.is_empty() {
                bail!("--grid-rank / --grid-k do not apply to --method logdet");
            }
            for mu0 in or_base(&grid.mu0, run.solver.mu0) {
                for gamma in or_base(&grid.gamma, run.solver.gamma) {
                    let cfg = solver::SolverConfig { mu0, gamma, ..run.solver };
                    cfg.validate()?;
                    methods.push(Method::Logdet(cfg));
                }
            }
        }
        MethodArg::Puresvd | MethodArg::Itemknn => {
            if !grid.mu0.is_empty() || !grid.gamma.is_empty() {
                bail!("--grid-mu0 / --grid-gamma only apply to --method logdet");
            }
            if run.method == MethodArg::Puresvd {
                if !grid.k.is_empty() {
                    bail!("--grid-k does not apply to --method puresvd");
                }
                methods.extend(or_base_n(&grid.rank, run.rank).into_iter().map(|rank| Method::PureSvd { rank }));
            } else {
                if !grid.rank.is_empty() {
                    bail!("--grid-rank does not apply to --method itemknn");
                }
                methods.extend(or_base_n(&grid.k, run.k).into_iter().map(|k| Method::ItemKnn { k }));
            }
        }
    }
    Ok(methods)
}

fn cmd_sweep(run: &RunConfig, grid: &GridArgs) -> Result<()> {
    let methods = methods_for_grid(run, grid)?;
    let n_lists = if grid.n.is_empty() { vec![run.n_list] } else { grid.n.clone() };
    if n_lists.contains(&0) {
        bail!("--grid-n values must be at least 1");
    }
    let m = load(run)?;
    output::write_manifest(run)?;

    // Rows are flushed as they are produced so a failure keeps earlier points.
    let path = run.out.join("sweep.csv");
    let mut w = BufWriter::new(File::create(&path).with_context(|| format!("cannot create {}", path.display()))?);
    writeln!(w, "method,mu0,gamma,rank,k,n,hr,arhr,iterations,wall_time")?;
    w.flush()?;
    let mut rows = 0usize;
    for method in &methods {
        let reports = eval::run_cv_multi(&m, method, &n_lists, &run.cv())
            .with_context(|| format!("sweep point {} {} failed", method, eval::Scorer::params(method)))?;
        let (mu0, gamma, rank, k) = match method {
            Method::Logdet(cfg) => (cfg.mu0.to_string(), cfg.gamma.to_string(), String::new(), String::new()),
            Method::PureSvd { rank } => (String::new(), String::new(), rank.to_string(), String::new()),
            Method::ItemKnn { k } => (String::new(), String::new(), String::new(), k.to_string()),
        };
        for r in &reports {
            let iterations = r.mean_iterations().map(|v| v.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{mu0},{gamma},{rank},{k},{},{},{},{iterations},{}",
                r.method,
                r.n_list,
                r.mean_hr,
                r.mean_arhr,
                r.mean_wall_time()
            )?;
            w.flush()?;
            rows += 1;
            println!(
                "{} {} N={} HR={:.4} ARHR={:.4}",
                r.method, r.params, r.n_list, r.mean_hr, r.mean_arhr
            );
        }
    }
    println!("wrote {rows} rows to {}", display(&path));
    Ok(())
}

fn display(p: &Path) -> String {
    p.display().to_string()
}
