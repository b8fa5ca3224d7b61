//! Training runs and the four experiment drivers (scaling, resolution,
//! generalization against restarted CG, strategy comparison).
//!
//! Every run directory holds `config.txt` (full resolved configuration),
//! `metrics.csv`, `eval.csv` and `checkpoints/`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;

use crate::error::{invalid, Result, VolError};
use crate::field::NodeField;
use crate::harness::arrayfile::{read_array, write_array, ArrayData};
use crate::harness::config::{model_for_problem, ConfigMap, ExperimentKind, RunConfig};
use crate::harness::dataset::{generate_dataset, Dataset, Split};
use crate::model::{Activation, ConvModel, ModelConfig, OperatorModel};
use crate::solvers::{restarted_cg_baseline, BaselineInit, BaselineReport};
use crate::training::{
    compute_shift_stats, evaluate, fit_power_law, EpochReport, EvalReport, ShiftStats, Strategy, Trainer,
};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Test-set metrics after an epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub epoch: usize,
    pub mean_rel_l2: f64,
    pub worst_rel_l2: f64,
}

/// Outcome of one training run.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub n_params: usize,
    pub epochs: Vec<EpochReport>,
    pub eval: Vec<EvalRow>,
    /// Mean relative error on the training split after each epoch, when it
    /// was requested and labels exist.
    pub train_error: Vec<f64>,
    pub final_eval: Option<EvalReport>,
    /// Per-iteration batch-mean residual norms.
    pub residual_curve: Vec<f64>,
    pub wall_time: f64,
}

/// Options for [`train_run`] beyond the run configuration.
#[derive(Clone, Debug, Default)]
pub struct RunOptions<'a> {
    pub out: Option<&'a Path>,
    /// Evaluate on the (labeled) training split after every epoch.
    pub track_train_error: bool,
}

pub fn save_model(dir: &Path, model: &ConvModel) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let c = &model.cfg;
    let mut m = ConfigMap::default();
    m.set("model_format_version", MODEL_FORMAT_VERSION);
    m.set("in_channels", c.in_channels);
    m.set("hidden_channels", c.hidden_channels);
    m.set("out_channels", c.out_channels);
    m.set("n_layers", c.n_layers);
    m.set("kernel_extent", c.kernel_extent);
    m.set("use_alignment", c.use_alignment);
    m.set("activation", c.activation.name());
    m.set("dilation_base", c.dilation_base);
    m.set("seed", c.seed);
    // offset,shape of every named group in params.volf
    for sl in &model.params.slices {
        let shape: Vec<String> = sl.shape.iter().map(|d| d.to_string()).collect();
        m.set(
            &format!("slice.{}", sl.name),
            format!("{},{}", sl.offset, shape.join("x")),
        );
    }
    let mut text = String::new();
    for k in m.keys() {
        let _ = writeln!(text, "{k} = {}", m.get(k).unwrap());
    }
    std::fs::write(dir.join("model.txt"), text)?;
    write_array(
        &dir.join("params.volf"),
        &ArrayData::new(vec![model.params.data.len()], model.params.data.clone())?,
    )
}

pub fn load_model(dir: &Path) -> Result<ConvModel> {
    let m = ConfigMap::load(&dir.join("model.txt"))?;
    let get = |k: &str| -> Result<&str> { m.get(k).ok_or_else(|| VolError::Format(format!("model.txt lacks {k}"))) };
    let num = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| VolError::Format(format!("bad value for {k}")))
    };
    if num("model_format_version")? != MODEL_FORMAT_VERSION as usize {
        return Err(VolError::Format("unsupported model format version".into()));
    }
    let cfg = ModelConfig {
        in_channels: num("in_channels")?,
        hidden_channels: num("hidden_channels")?,
        out_channels: num("out_channels")?,
        n_layers: num("n_layers")?,
        kernel_extent: num("kernel_extent")?,
        use_alignment: get("use_alignment")? == "true",
        activation: Activation::parse(get("activation")?)?,
        dilation_base: num("dilation_base")?,
        seed: num("seed")? as u64,
    };
    let model = ConvModel::from_params(cfg, read_array(&dir.join("params.volf"))?.data)?;
    for sl in &model.params.slices {
        let shape: Vec<String> = sl.shape.iter().map(|d| d.to_string()).collect();
        if get(&format!("slice.{}", sl.name))? != format!("{},{}", sl.offset, shape.join("x")) {
            return Err(VolError::Format(format!(
                "slice {} does not match the model layout",
                sl.name
            )));
        }
    }
    Ok(model)
}

pub fn save_stats(dir: &Path, stats: &ShiftStats) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let s = stats.mean.shape();
    let mut data = stats.mean.data.clone();
    data.extend_from_slice(&stats.std.data);
    write_array(
        &dir.join("shift_stats.volf"),
        &ArrayData::new(vec![2, s[0], s[1], s[2]], data)?,
    )
}

pub fn load_stats(dir: &Path) -> Result<ShiftStats> {
    let a = read_array(&dir.join("shift_stats.volf"))?;
    if a.shape.len() != 4 || a.shape[0] != 2 {
        return Err(VolError::Format("shift statistics must have shape [2, c, h, w]".into()));
    }
    let (c, h, w) = (a.shape[1], a.shape[2], a.shape[3]);
    let n = c * h * w;
    Ok(ShiftStats {
        mean: NodeField::from_vec(c, h, w, a.data[..n].to_vec())?,
        std: NodeField::from_vec(c, h, w, a.data[n..].to_vec())?,
    })
}

fn eval_csv(rows: &[EvalRow]) -> String {
    let mut s = String::from("epoch,mean_rel_l2,worst_rel_l2\n");
    for r in rows {
        let _ = writeln!(s, "{},{:e},{:e}", r.epoch, r.mean_rel_l2, r.worst_rel_l2);
    }
    s
}

/// Model configuration for the dataset's problem.
pub fn resolved_model(run: &RunConfig) -> ModelConfig {
    model_for_problem(run.data.problem, &run.model)
}

/// Train a fresh model on `train` and evaluate on `test`. Shift statistics
/// come from `shift` labels only.
pub fn train_run(
    run: &RunConfig,
    train: &Split,
    shift: &Split,
    test: &Split,
    opts: &RunOptions,
) -> Result<(ConvModel, ShiftStats, RunReport)> {
    let t0 = Instant::now();
    let stats = compute_shift_stats(shift.labels()?)?;
    let mut model = ConvModel::new(resolved_model(run))?;
    let mut trainer = Trainer::new(run.train.clone(), model.n_params())?;
    let supervised_labels = if run.train.strategy == Strategy::Supervised {
        Some(train.labels()?)
    } else {
        None
    };
    if let Some(dir) = opts.out {
        std::fs::create_dir_all(dir.join("checkpoints"))?;
        std::fs::write(dir.join("config.txt"), run.to_text())?;
        save_stats(dir, &stats)?;
    }
    let test_labels = if test.is_empty() { None } else { Some(test.labels()?) };
    let mut report = RunReport {
        n_params: model.n_params(),
        epochs: Vec::new(),
        eval: Vec::new(),
        train_error: Vec::new(),
        final_eval: None,
        residual_curve: Vec::new(),
        wall_time: 0.0,
    };
    let epochs = run.train.epochs;
    for e in 0..epochs {
        let ep = trainer.train_epoch(&mut model, &train.samples, &stats, supervised_labels)?;
        info!(
            "epoch {} residual {:.4e} loss {:.4e} lr {:.2e} ({:.2}s)",
            ep.epoch, ep.mean_residual_norm, ep.mean_loss, ep.lr, ep.wall_time
        );
        report.epochs.push(ep);
        if opts.track_train_error {
            let r = evaluate(&model, &train.samples, train.labels()?, &stats)?;
            report.train_error.push(r.mean_rel_l2);
        }
        let last = e + 1 == epochs;
        if let Some(labels) = test_labels {
            if last || (run.eval_every > 0 && (e + 1) % run.eval_every == 0) {
                let r = evaluate(&model, &test.samples, labels, &stats)?;
                report.eval.push(EvalRow {
                    epoch: e,
                    mean_rel_l2: r.mean_rel_l2,
                    worst_rel_l2: r.worst_rel_l2,
                });
                if last {
                    report.final_eval = Some(r);
                }
            }
        }
        if let Some(dir) = opts.out {
            if run.checkpoint_every > 0 && (e + 1) % run.checkpoint_every == 0 {
                save_model(&dir.join("checkpoints").join(format!("epoch_{:04}", e + 1)), &model)?;
            }
        }
    }
    report.residual_curve = trainer.history.iter().map(|r| r.residual_norm).collect();
    report.wall_time = t0.elapsed().as_secs_f64();
    if let Some(dir) = opts.out {
        std::fs::write(dir.join("metrics.csv"), trainer.metrics_csv())?;
        std::fs::write(dir.join("eval.csv"), eval_csv(&report.eval))?;
        save_model(&dir.join("checkpoints").join("final"), &model)?;
    }
    Ok((model, stats, report))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingRow {
    pub size: usize,
    pub mean_rel_l2: f64,
    pub worst_rel_l2: f64,
    pub wall_time: f64,
}

#[derive(Clone, Debug)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    /// `error ≈ a·size^b`.
    pub fit: (f64, f64),
}

impl ScalingReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("size,mean_rel_l2,worst_rel_l2,wall_time\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:e},{:e},{:.3}",
                r.size, r.mean_rel_l2, r.worst_rel_l2, r.wall_time
            );
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResolutionRow {
    pub resolution: usize,
    pub n_params: usize,
    pub mean_rel_l2: f64,
    pub worst_rel_l2: f64,
    pub mean_residual_norm: f64,
    pub wall_time: f64,
}

#[derive(Clone, Debug)]
pub struct ResolutionReport {
    pub rows: Vec<ResolutionRow>,
}

impl ResolutionReport {
    pub fn to_csv(&self) -> String {
        let mut s =
            String::from("resolution,nodes_per_side,n_params,mean_rel_l2,worst_rel_l2,mean_residual_norm,wall_time\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{:e},{:e},{:e},{:.3}",
                r.resolution,
                r.resolution + 1,
                r.n_params,
                r.mean_rel_l2,
                r.worst_rel_l2,
                r.mean_residual_norm,
                r.wall_time
            );
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct GeneralizationReport {
    /// Mean relative training error of the learned model per epoch.
    pub vol: Vec<f64>,
    /// Restarted CG from random and from shift-average initial guesses.
    pub cg_random: BaselineReport,
    pub cg_average: BaselineReport,
}

impl GeneralizationReport {
    pub fn final_vol(&self) -> f64 {
        self.vol.last().copied().unwrap_or(f64::NAN)
    }

    /// Rows per epoch; baseline row `e` is the state after `e + 1` restarts.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,vol_mean_rel_l2,cg_r_mean_rel_l2,cg_a_mean_rel_l2\n");
        for (e, v) in self.vol.iter().enumerate() {
            let r = self.cg_random.epochs.get(e + 1).map_or(f64::NAN, |x| x.mean_rel_l2);
            let a = self.cg_average.epochs.get(e + 1).map_or(f64::NAN, |x| x.mean_rel_l2);
            let _ = writeln!(s, "{e},{v:e},{r:e},{a:e}");
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct StrategyCurve {
    pub strategy: Strategy,
    pub residual_curve: Vec<f64>,
    pub final_epoch_residual: f64,
    pub mean_rel_l2: f64,
}

impl StrategyCurve {
    /// First-iteration residual over the mean residual of the final epoch.
    pub fn reduction(&self) -> f64 {
        self.residual_curve.first().copied().unwrap_or(f64::NAN) / self.final_epoch_residual
    }
}

#[derive(Clone, Debug)]
pub struct StrategyReport {
    pub curves: Vec<StrategyCurve>,
}

impl StrategyReport {
    /// Long format: one row per strategy and iteration.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("strategy,iter,residual_norm\n");
        for c in &self.curves {
            for (i, r) in c.residual_curve.iter().enumerate() {
                let _ = writeln!(s, "{},{},{:e}", c.strategy.name(), i, r);
            }
        }
        s
    }
}

#[derive(Clone, Debug)]
pub enum ExperimentReport {
    Scaling(ScalingReport),
    Resolution(ResolutionReport),
    Generalization(GeneralizationReport),
    StrategyCompare(StrategyReport),
}

impl ExperimentReport {
    /// Human-readable summary.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        match self {
            ExperimentReport::Scaling(r) => {
                for row in &r.rows {
                    let _ = writeln!(
                        s,
                        "size {:5}  mean rel L2 {:.4e}  worst {:.4e}",
                        row.size, row.mean_rel_l2, row.worst_rel_l2
                    );
                }
                let _ = writeln!(s, "power law fit: a = {:.4e}, b = {:.4}", r.fit.0, r.fit.1);
            }
            ExperimentReport::Resolution(r) => {
                for row in &r.rows {
                    let _ = writeln!(
                        s,
                        "{}x{} nodes  params {}  mean rel L2 {:.4e}  worst {:.4e}",
                        row.resolution + 1,
                        row.resolution + 1,
                        row.n_params,
                        row.mean_rel_l2,
                        row.worst_rel_l2
                    );
                }
            }
            ExperimentReport::Generalization(r) => {
                let _ = writeln!(s, "final mean train error: VOL {:.4e}", r.final_vol());
                let _ = writeln!(
                    s,
                    "  restarted CG, random init:  {:.4e}",
                    r.cg_random.final_mean_rel_l2()
                );
                let _ = writeln!(
                    s,
                    "  restarted CG, average init: {:.4e}",
                    r.cg_average.final_mean_rel_l2()
                );
            }
            ExperimentReport::StrategyCompare(r) => {
                for c in &r.curves {
                    let _ = writeln!(
                        s,
                        "{:10}  first {:.4e}  final epoch {:.4e}  reduction {:.2}x  test rel L2 {:.4e}",
                        c.strategy.name(),
                        c.residual_curve.first().copied().unwrap_or(f64::NAN),
                        c.final_epoch_residual,
                        c.reduction(),
                        c.mean_rel_l2
                    );
                }
            }
        }
        s
    }
}

fn sub(out: Option<&Path>, name: &str) -> Option<PathBuf> {
    out.map(|p| p.join(name))
}

pub fn run_scaling(run: &RunConfig, out: Option<&Path>) -> Result<ScalingReport> {
    let sizes = &run.experiment.sizes;
    if sizes.len() < 2 {
        return invalid("scaling needs at least two sizes");
    }
    let mut data = run.data.clone();
    data.n_train = *sizes.iter().max().unwrap();
    let ds = generate_dataset(&data, false)?;
    let mut rows = Vec::new();
    for &n in sizes {
        let dir = sub(out, &format!("size_{n}"));
        let opts = RunOptions {
            out: dir.as_deref(),
            ..RunOptions::default()
        };
        let (_, _, rep) = train_run(run, &ds.train.prefix(n), &ds.shift, &ds.test, &opts)?;
        let ev = rep.final_eval.as_ref().expect("test set evaluated");
        info!("size {n}: mean rel L2 {:.4e}", ev.mean_rel_l2);
        rows.push(ScalingRow {
            size: n,
            mean_rel_l2: ev.mean_rel_l2,
            worst_rel_l2: ev.worst_rel_l2,
            wall_time: rep.wall_time,
        });
    }
    let x: Vec<f64> = rows.iter().map(|r| r.size as f64).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.mean_rel_l2).collect();
    Ok(ScalingReport {
        fit: fit_power_law(&x, &y)?,
        rows,
    })
}

pub fn run_resolution(run: &RunConfig, out: Option<&Path>) -> Result<ResolutionReport> {
    let mut rows = Vec::new();
    for &res in &run.experiment.resolutions {
        let mut data = run.data.clone();
        data.resolution = res;
        let ds = generate_dataset(&data, false)?;
        let mut r = run.clone();
        r.data = data;
        let dir = sub(out, &format!("res_{}", res + 1));
        let opts = RunOptions {
            out: dir.as_deref(),
            ..RunOptions::default()
        };
        let (_, _, rep) = train_run(&r, &ds.train, &ds.shift, &ds.test, &opts)?;
        let ev = rep.final_eval.as_ref().expect("test set evaluated");
        rows.push(ResolutionRow {
            resolution: res,
            n_params: rep.n_params,
            mean_rel_l2: ev.mean_rel_l2,
            worst_rel_l2: ev.worst_rel_l2,
            mean_residual_norm: ev.mean_residual_norm,
            wall_time: rep.wall_time,
        });
    }
    Ok(ResolutionReport { rows })
}

/// The training split is labeled so the error can be measured; labels are
/// never used by the VOL update or the baselines.
pub fn run_generalization(run: &RunConfig, out: Option<&Path>) -> Result<GeneralizationReport> {
    let mut data = run.data.clone();
    data.n_test = 0;
    let ds = generate_dataset(&data, true)?;
    let dir = sub(out, "vol");
    let opts = RunOptions {
        out: dir.as_deref(),
        track_train_error: true,
    };
    let (_, stats, rep) = train_run(run, &ds.train, &ds.shift, &Split::default(), &opts)?;
    let problems: Vec<_> = ds.train.samples.iter().map(|s| s.problem.clone()).collect();
    let refs = ds.train.labels()?;
    let n = run.experiment.baseline_steps;
    let epochs = run.train.epochs;
    let cg_random = restarted_cg_baseline(
        &problems,
        refs,
        n,
        epochs,
        &BaselineInit::RandomNormal { seed: data.seed },
    )?;
    let cg_average = restarted_cg_baseline(
        &problems,
        refs,
        n,
        epochs,
        &BaselineInit::AverageOfShiftLabels(stats.mean),
    )?;
    Ok(GeneralizationReport {
        vol: rep.train_error,
        cg_random,
        cg_average,
    })
}

pub fn run_strategy_compare(run: &RunConfig, out: Option<&Path>) -> Result<StrategyReport> {
    let needs_labels = run.experiment.strategies.contains(&Strategy::Supervised);
    let ds = generate_dataset(&run.data, needs_labels)?;
    let mut curves = Vec::new();
    for &strategy in &run.experiment.strategies {
        let mut r = run.clone();
        r.train.strategy = strategy;
        let dir = sub(out, &strategy.name().replace(':', "_"));
        let opts = RunOptions {
            out: dir.as_deref(),
            ..RunOptions::default()
        };
        let (_, _, rep) = train_run(&r, &ds.train, &ds.shift, &ds.test, &opts)?;
        let per_epoch = rep.residual_curve.len() / rep.epochs.len().max(1);
        let tail = &rep.residual_curve[rep.residual_curve.len() - per_epoch..];
        curves.push(StrategyCurve {
            strategy,
            final_epoch_residual: tail.iter().sum::<f64>() / tail.len() as f64,
            residual_curve: rep.residual_curve,
            mean_rel_l2: rep.final_eval.map_or(f64::NAN, |e| e.mean_rel_l2),
        });
    }
    Ok(StrategyReport { curves })
}

/// Run the experiment selected by `run.experiment.kind`, writing tables and
/// a summary under `out` when given.
pub fn run_experiment(run: &RunConfig, out: Option<&Path>) -> Result<ExperimentReport> {
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.txt"), run.to_text())?;
    }
    let (report, table, csv) = match run.experiment.kind {
        ExperimentKind::Scaling => {
            let r = run_scaling(run, out)?;
            let csv = r.to_csv();
            (ExperimentReport::Scaling(r), "scaling.csv", csv)
        }
        ExperimentKind::Resolution => {
            let r = run_resolution(run, out)?;
            let csv = r.to_csv();
            (ExperimentReport::Resolution(r), "resolution.csv", csv)
        }
        ExperimentKind::Generalization => {
            let r = run_generalization(run, out)?;
            if let Some(dir) = out {
                std::fs::write(dir.join("cg_random.csv"), r.cg_random.to_csv())?;
                std::fs::write(dir.join("cg_average.csv"), r.cg_average.to_csv())?;
            }
            let csv = r.to_csv();
            (ExperimentReport::Generalization(r), "generalization.csv", csv)
        }
        ExperimentKind::StrategyCompare => {
            let r = run_strategy_compare(run, out)?;
            let csv = r.to_csv();
            (ExperimentReport::StrategyCompare(r), "residual_curves.csv", csv)
        }
    };
    if let Some(dir) = out {
        std::fs::write(dir.join(table), csv)?;
        std::fs::write(dir.join("summary.txt"), report.summary())?;
    }
    Ok(report)
}

/// Dataset paired with a run configuration, for `train`/`evaluate` on data
/// generated earlier.
pub fn train_on_dataset(
    run: &RunConfig,
    ds: &Dataset,
    out: Option<&Path>,
) -> Result<(ConvModel, ShiftStats, RunReport)> {
    if ds.cfg.problem != run.data.problem {
        return invalid("dataset and run configuration disagree on the problem");
    }
    let opts = RunOptions {
        out,
        ..RunOptions::default()
    };
    train_run(run, &ds.train, &ds.shift, &ds.test, &opts)
}
