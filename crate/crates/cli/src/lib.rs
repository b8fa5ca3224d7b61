//! Command-line front end of `vol-core`.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 numerical failure
//! (solver breakdown, stalled solve, non-finite values, failed check).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use vol_core::harness::arrayfile::{write_array, ArrayData};
use vol_core::harness::checks::{grad_check, oracle_check};
use vol_core::harness::config::{ConfigMap, ExperimentKind, RunConfig};
use vol_core::harness::dataset::{generate_dataset, generate_sample, Dataset};
use vol_core::harness::experiment::{load_model, load_stats, run_experiment, train_on_dataset};
use vol_core::physics::problem_factory;
use vol_core::solvers::{cg_solve, restarted_cg_baseline, BaselineInit};
use vol_core::training::{compute_shift_stats, evaluate};
use vol_core::{ProblemKind, Strategy, VolError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

/// Largest tolerated relative matrix-free/dense discrepancy.
pub const ORACLE_TOL: f64 = 1e-10;
/// Largest tolerated relative finite-difference gradient error.
pub const GRAD_TOL: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(
    name = "vol",
    version,
    about = "Variational operator learning on structured FE meshes"
)]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for data, model initialization and batch order.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Elements per side.
    #[arg(long, global = true)]
    resolution: Option<usize>,
    /// dm, sd:N, cg:N or supervised.
    #[arg(long, global = true)]
    strategy: Option<String>,
    /// heat, darcy, elasticity-a or elasticity-b.
    #[arg(long, global = true)]
    problem: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate and label a dataset.
    GenData,
    /// Train a surrogate on a stored or freshly generated dataset.
    Train {
        /// Dataset directory written by `gen-data`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate a trained run on the test split.
    Evaluate {
        /// Run directory written by `train`.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Solve one sampled instance with conjugate gradients.
    Solve {
        /// Sample index; instance `index` of the stream keyed by `seed`.
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Restarted CG(n) baselines with random and averaged initializations.
    CompareCg,
    /// Finite-difference check of the model and loss gradients.
    GradCheck,
    /// Matrix-free operators against the dense assembly.
    OracleCheck {
        #[arg(long, default_value_t = 3)]
        samples: usize,
    },
    /// Run the experiment named by `experiment.kind`.
    RunExperiment {
        /// Overrides `experiment.kind`.
        #[arg(long)]
        kind: Option<String>,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Vol(VolError),
    /// A check ran but did not meet its tolerance.
    CheckFailed(String),
}

impl From<VolError> for CliError {
    fn from(e: VolError) -> Self {
        CliError::Vol(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Vol(e.into())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Resolve the run configuration: file first, then command-line overrides.
fn resolve(common: &Common, extra: &[(&str, String)]) -> CliResult<RunConfig> {
    let mut map = match &common.config {
        Some(p) => ConfigMap::load(p)?,
        None => ConfigMap::default(),
    };
    if let Some(p) = &common.problem {
        map.set("problem", p);
    }
    if let Some(r) = common.resolution {
        map.set("resolution", r);
    }
    if let Some(s) = &common.strategy {
        map.set("train.strategy", s);
    }
    if let Some(s) = common.seed {
        for k in ["seed", "model.seed", "train.seed"] {
            map.set(k, s);
        }
    }
    for (k, v) in extra {
        map.set(k, v);
    }
    Ok(RunConfig::from_map(&map)?)
}

fn need_out(common: &Common) -> CliResult<&Path> {
    common
        .out
        .as_deref()
        .ok_or_else(|| CliError::Usage("this command needs --out <dir>".into()))
}

fn dataset_for(run: &RunConfig, data: Option<&Path>, label_train: bool) -> CliResult<Dataset> {
    match data {
        Some(dir) => Ok(Dataset::read(dir)?),
        None => Ok(generate_dataset(&run.data, label_train)?),
    }
}

fn cmd_gen_data(common: &Common) -> CliResult<()> {
    let run = resolve(common, &[])?;
    let out = need_out(common)?;
    let ds = generate_dataset(&run.data, true)?;
    ds.write(out)?;
    println!(
        "wrote {} train / {} shift / {} test samples to {}",
        ds.train.len(),
        ds.shift.len(),
        ds.test.len(),
        out.display()
    );
    Ok(())
}

fn cmd_train(common: &Common, data: Option<&Path>) -> CliResult<()> {
    let run = resolve(common, &[])?;
    let ds = dataset_for(&run, data, run.train.strategy == Strategy::Supervised)?;
    let run = RunConfig {
        data: ds.cfg.clone(),
        ..run
    };
    let (_, _, report) = train_on_dataset(&run, &ds, common.out.as_deref())?;
    let last = report.epochs.last().map(|e| e.mean_residual_norm).unwrap_or(f64::NAN);
    println!("parameters {}", report.n_params);
    println!("final mean residual norm {last:.6e}");
    if let Some(e) = &report.final_eval {
        println!("test mean rel L2 {:.6e} worst {:.6e}", e.mean_rel_l2, e.worst_rel_l2);
    }
    println!("wall time {:.2}s", report.wall_time);
    Ok(())
}

fn cmd_evaluate(common: &Common, run_dir: &Path, data: Option<&Path>) -> CliResult<()> {
    let run = match &common.config {
        Some(_) => resolve(common, &[])?,
        None => {
            let mut c = common.clone();
            c.config = Some(run_dir.join("config.txt"));
            resolve(&c, &[])?
        }
    };
    let model = load_model(&run_dir.join("checkpoints").join("final"))?;
    let stats = load_stats(run_dir)?;
    let ds = dataset_for(&run, data, false)?;
    let r = evaluate(&model, &ds.test.samples, ds.test.labels()?, &stats)?;
    println!(
        "test mean rel L2 {:.6e} worst {:.6e} mean residual norm {:.6e}",
        r.mean_rel_l2, r.worst_rel_l2, r.mean_residual_norm
    );
    if let Some(out) = &common.out {
        std::fs::create_dir_all(out)?;
        let mut csv = String::from("sample,rel_l2\n");
        for (i, e) in r.per_sample.iter().enumerate() {
            csv.push_str(&format!("{i},{e:e}\n"));
        }
        std::fs::write(out.join("evaluation.csv"), csv)?;
    }
    Ok(())
}

fn cmd_solve(common: &Common, index: usize) -> CliResult<()> {
    let run = resolve(common, &[])?;
    let d = &run.data;
    let disc = d.problem.discretization(d.resolution)?;
    let gs = generate_sample(d, &disc, d.seed, index)?;
    let problem = problem_factory(d.problem, disc, &gs.physics, &d.physics)?;
    let (a, report) = cg_solve(&problem, &problem.zeros(), d.label_tol, d.label_maxiter)?;
    println!(
        "{} iterations, converged {}, residual norm {:.6e}",
        report.iterations(),
        report.converged,
        report.final_residual_norm.unwrap_or(f64::NAN)
    );
    if let Some(out) = &common.out {
        std::fs::create_dir_all(out)?;
        write_array(
            &out.join("solution.volf"),
            &ArrayData::new(a.shape().to_vec(), a.data.clone())?,
        )?;
        report.write_csv(&out.join("iterations.csv"))?;
    }
    if !report.converged {
        let rel = report.final_residual_norm.unwrap_or(f64::NAN) / problem.masked_load_norm();
        return Err(VolError::NotConverged {
            iterations: report.iterations(),
            relative: rel,
        }
        .into());
    }
    Ok(())
}

fn cmd_compare_cg(common: &Common) -> CliResult<()> {
    let run = resolve(common, &[])?;
    let ds = generate_dataset(&run.data, true)?;
    let problems: Vec<_> = ds.train.samples.iter().map(|s| s.problem.clone()).collect();
    let refs = ds.train.labels()?;
    let stats = compute_shift_stats(ds.shift.labels()?)?;
    let n = run.experiment.baseline_steps;
    let epochs = run.train.epochs;
    let random = restarted_cg_baseline(
        &problems,
        refs,
        n,
        epochs,
        &BaselineInit::RandomNormal { seed: run.data.seed },
    )?;
    let average = restarted_cg_baseline(
        &problems,
        refs,
        n,
        epochs,
        &BaselineInit::AverageOfShiftLabels(stats.mean),
    )?;
    println!(
        "CG({n})-R final mean rel L2 {:.6e}; CG({n})-A final mean rel L2 {:.6e} after {epochs} epochs",
        random.final_mean_rel_l2(),
        average.final_mean_rel_l2()
    );
    if let Some(out) = &common.out {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join("config.txt"), run.to_text())?;
        std::fs::write(out.join("cg_random.csv"), random.to_csv())?;
        std::fs::write(out.join("cg_average.csv"), average.to_csv())?;
    }
    Ok(())
}

fn problems_for(common: &Common) -> CliResult<Vec<ProblemKind>> {
    match &common.problem {
        Some(p) => Ok(vec![ProblemKind::parse(p)?]),
        None => Ok(ProblemKind::ALL.to_vec()),
    }
}

fn cmd_grad_check(common: &Common) -> CliResult<()> {
    let seed = common.seed.unwrap_or(0);
    let mut worst = 0.0f64;
    for kind in problems_for(common)? {
        let r = grad_check(kind, seed)?;
        println!("{:<13} model {:.3e} dm-loss {:.3e}", kind.name(), r.model, r.dm_loss);
        worst = worst.max(r.model).max(r.dm_loss);
    }
    println!("max relative gradient error {worst:.3e}");
    if worst < GRAD_TOL {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!(
            "gradient error {worst:e} is not below {GRAD_TOL:e}"
        )))
    }
}

fn cmd_oracle_check(common: &Common, samples: usize) -> CliResult<()> {
    let run = resolve(common, &[])?;
    let resolution = common.resolution.unwrap_or(8);
    let seed = common.seed.unwrap_or(run.data.seed);
    let mut worst = 0.0f64;
    for kind in problems_for(common)? {
        let r = oracle_check(kind, resolution, seed, samples, &run.data.physics)?;
        println!(
            "{:<13} residual {:.3e} matvec {:.3e} load {:.3e} functional {:.3e}",
            kind.name(),
            r.residual,
            r.matvec,
            r.load,
            r.functional
        );
        worst = worst.max(r.max());
    }
    println!("max relative discrepancy {worst:.3e}");
    if worst < ORACLE_TOL {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!(
            "discrepancy {worst:e} is not below {ORACLE_TOL:e}"
        )))
    }
}

fn cmd_run_experiment(common: &Common, kind: Option<&str>) -> CliResult<()> {
    let extra: Vec<(&str, String)> = match kind {
        Some(k) => {
            ExperimentKind::parse(k)?;
            vec![("experiment.kind", k.to_string())]
        }
        None => Vec::new(),
    };
    let run = resolve(common, &extra)?;
    let report = run_experiment(&run, common.out.as_deref())?;
    print!("{}", report.summary());
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let c = &cli.common;
    match &cli.command {
        Command::GenData => cmd_gen_data(c),
        Command::Train { data } => cmd_train(c, data.as_deref()),
        Command::Evaluate { run, data } => cmd_evaluate(c, run, data.as_deref()),
        Command::Solve { index } => cmd_solve(c, *index),
        Command::CompareCg => cmd_compare_cg(c),
        Command::GradCheck => cmd_grad_check(c),
        Command::OracleCheck { samples } => cmd_oracle_check(c, *samples),
        Command::RunExperiment { kind } => cmd_run_experiment(c, kind.as_deref()),
    }
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    info!("{:?}", cli.command);
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            EXIT_USAGE
        }
        Err(CliError::CheckFailed(m)) => {
            eprintln!("check failed: {m}");
            EXIT_NUMERICAL
        }
        Err(CliError::Vol(e)) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_USAGE
            }
        }
    }
}
