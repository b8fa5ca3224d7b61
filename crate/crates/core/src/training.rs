//! Residual-driven training of an [`OperatorModel`]: batch loop, update
//! strategies, optimizers and evaluation metrics.
//!
//! For the iterative strategies the solver update `Δa` is treated as a
//! constant "provisional label" `a + Δa`; the SSE gradient with respect to
//! the prediction is `−Δa`, pulled back through the model with its vjp.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{invalid, shape_err, Result, VolError};
use crate::field::NodeField;
use crate::harness::rng::sample_rng;
use crate::matrix_free::MaskSpec;
use crate::model::OperatorModel;
use crate::physics::{ParameterField, Problem};
use crate::solvers::{cg_steps, sd_steps};

/// Lower bound on shift-set standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

/// Elementwise mean and (population) standard deviation of the shift-set
/// labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftStats {
    pub mean: NodeField,
    pub std: NodeField,
}

impl ShiftStats {
    /// Mean 0, std 1: the shift stage becomes the identity.
    pub fn identity(shape: [usize; 3]) -> Self {
        let [c, h, w] = shape;
        ShiftStats {
            mean: NodeField::zeros(c, h, w),
            std: NodeField::filled(c, h, w, 1.0),
        }
    }

    pub fn check_shape(&self, shape: [usize; 3]) -> Result<()> {
        if self.mean.shape() != shape || self.std.shape() != shape {
            return shape_err(format!(
                "shift statistics {:?} do not match {shape:?}",
                self.mean.shape()
            ));
        }
        Ok(())
    }
}

pub fn compute_shift_stats(labels: &[NodeField]) -> Result<ShiftStats> {
    let Some(first) = labels.first() else {
        return invalid("shift set is empty");
    };
    for l in labels {
        first.check_same_shape(l, "shift labels")?;
    }
    let n = labels.len() as f64;
    let mut mean = first.zeros_like();
    for l in labels {
        mean.axpy(1.0 / n, l);
    }
    let mut std = first.zeros_like();
    for (k, s) in std.data.iter_mut().enumerate() {
        let var = labels.iter().map(|l| (l.data[k] - mean.data[k]).powi(2)).sum::<f64>() / n;
        *s = var.sqrt().max(STD_FLOOR);
    }
    Ok(ShiftStats { mean, std })
}

/// Euclidean norm of the flattened masked residual.
pub fn dm_loss(r: &NodeField) -> f64 {
    r.norm()
}

/// `∂‖R‖/∂a = K (R / ‖R‖)` for `R = Mask(K a − P)`; zero when `R = 0`.
pub fn dm_loss_grad(r: &NodeField, problem: &Problem) -> Result<NodeField> {
    let n = r.norm();
    if n == 0.0 {
        return Ok(r.zeros_like());
    }
    problem.matvec(&r.scaled(1.0 / n))
}

/// `½ Σ (â − a)²` and its gradient with respect to `a`, `−(â − a)`.
pub fn sse_loss(a_hat: &NodeField, a: &NodeField) -> Result<(f64, NodeField)> {
    a_hat.check_same_shape(a, "sse_loss")?;
    let diff = a_hat.sub(a);
    Ok((0.5 * diff.dot(&diff), diff.scaled(-1.0)))
}

/// `‖pred − label‖ / ‖label‖` over free dofs.
pub fn relative_l2(pred: &NodeField, label: &NodeField, mask: &MaskSpec) -> Result<f64> {
    pred.check_same_shape(label, "relative_l2")?;
    label.check_same_shape(&mask.mask, "relative_l2 mask")?;
    let (mut num, mut den) = (0.0, 0.0);
    for ((p, l), m) in pred.data.iter().zip(&label.data).zip(&mask.mask.data) {
        if *m != 0.0 {
            num += (p - l) * (p - l);
            den += l * l;
        }
    }
    if den == 0.0 {
        return invalid("label has zero norm on free dofs");
    }
    Ok((num / den).sqrt())
}

/// Least-squares fit of `y = a·x^b` in log–log space.
pub fn fit_power_law(sizes: &[f64], errors: &[f64]) -> Result<(f64, f64)> {
    if sizes.len() != errors.len() {
        return shape_err("sizes and errors differ in length");
    }
    if sizes.len() < 2 {
        return invalid("power-law fit needs at least two points");
    }
    if sizes.iter().chain(errors).any(|&v| !(v > 0.0) || !v.is_finite()) {
        return invalid("power-law fit needs positive finite values");
    }
    let n = sizes.len() as f64;
    let lx: Vec<f64> = sizes.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = errors.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return invalid("power-law fit needs at least two distinct sizes");
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let b = sxy / sxx;
    Ok(((my - b * mx).exp(), b))
}

/// How the prediction update is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Minimize the residual norm directly.
    DirectMinimization,
    SteepestDescent(usize),
    ConjugateGradient(usize),
    /// Regress onto solver labels (the data-driven reference).
    Supervised,
}

impl Strategy {
    /// `dm`, `sd:N`, `cg:N` or `supervised`.
    pub fn parse(s: &str) -> Result<Self> {
        let steps = |n: &str| -> Result<usize> {
            match n.parse::<usize>() {
                Ok(v) if v >= 1 => Ok(v),
                _ => invalid(format!("bad step count `{n}` in strategy `{s}`")),
            }
        };
        match s.split_once(':') {
            None if s == "dm" => Ok(Strategy::DirectMinimization),
            None if s == "supervised" => Ok(Strategy::Supervised),
            Some(("sd", n)) => Ok(Strategy::SteepestDescent(steps(n)?)),
            Some(("cg", n)) => Ok(Strategy::ConjugateGradient(steps(n)?)),
            _ => invalid(format!("unknown strategy `{s}` (dm, sd:N, cg:N, supervised)")),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Strategy::DirectMinimization => "dm".into(),
            Strategy::SteepestDescent(n) => format!("sd:{n}"),
            Strategy::ConjugateGradient(n) => format!("cg:{n}"),
            Strategy::Supervised => "supervised".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::default()),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => invalid(format!("unknown optimizer `{other}`")),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Adam { .. } => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }
}

/// Optimizer with its moment estimates.
///
/// Adam, at step `t` with gradient `g`:
/// `m ← β₁m + (1−β₁)g`, `v ← β₂v + (1−β₂)g²`,
/// `θ ← θ − η · (m/(1−β₁ᵗ)) / (√(v/(1−β₂ᵗ)) + ε)`.
/// Plain gradient descent: `θ ← θ − η g`.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, n_params: usize) -> Self {
        let (m, v) = match kind {
            OptimizerKind::Adam { .. } => (vec![0.0; n_params], vec![0.0; n_params]),
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
        };
        Optimizer { kind, m, v, t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.t as i32);
                let c2 = 1.0 - beta2.powi(self.t as i32);
                for k in 0..params.len() {
                    let g = grad[k];
                    self.m[k] = beta1 * self.m[k] + (1.0 - beta1) * g;
                    self.v[k] = beta2 * self.v[k] + (1.0 - beta2) * g * g;
                    params[k] -= lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + eps);
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Scheduler {
    Constant,
    /// Multiply by `factor` every `every` epochs.
    StepDecay {
        factor: f64,
        every: usize,
    },
}

impl Scheduler {
    /// Halve every fifth of the run.
    pub fn default_for(epochs: usize) -> Self {
        Scheduler::StepDecay {
            factor: 0.5,
            every: (epochs / 5).max(1),
        }
    }

    pub fn rate(&self, base: f64, epoch: usize) -> f64 {
        match *self {
            Scheduler::Constant => base,
            Scheduler::StepDecay { factor, every } => base * factor.powi((epoch / every.max(1)) as i32),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub strategy: Strategy,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub scheduler: Scheduler,
    /// Batches per epoch; `None` covers the training set once.
    pub maxiter: Option<usize>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(epochs: usize, strategy: Strategy) -> Self {
        TrainConfig {
            epochs,
            batch_size: 8,
            strategy,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::default(),
            scheduler: Scheduler::default_for(epochs),
            maxiter: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return invalid("batch size must be at least 1");
        }
        if matches!(
            self.strategy,
            Strategy::SteepestDescent(0) | Strategy::ConjugateGradient(0)
        ) {
            return invalid("iterative strategies need at least one step");
        }
        if !(self.learning_rate > 0.0) {
            return invalid("learning rate must be positive");
        }
        Ok(())
    }
}

/// One training input: the model's view of the parameter and the discrete
/// problem it defines.
#[derive(Clone, Debug)]
pub struct Sample {
    pub input: ParameterField,
    pub problem: Problem,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub epoch: usize,
    /// Batch mean of `‖Mask(R)‖` at the prediction before the update.
    pub residual_norm: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub mean_residual_norm: f64,
    /// Batch-mean loss of the strategy (‖R‖, SSE to the provisional label,
    /// or SSE to the true label).
    pub mean_loss: f64,
    pub lr: f64,
    pub wall_time: f64,
}

/// Training state that persists across epochs.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub optimizer: Optimizer,
    pub epoch: usize,
    pub iter: usize,
    pub history: Vec<IterRecord>,
}

struct SampleOutcome {
    grad: Vec<f64>,
    residual_norm: f64,
    loss: f64,
}

fn sample_step<M: OperatorModel>(
    model: &M,
    sample: &Sample,
    label: Option<&NodeField>,
    stats: &ShiftStats,
    strategy: Strategy,
    batch: usize,
) -> Result<SampleOutcome> {
    let p = &sample.problem;
    let (a, tape) = model.forward(&sample.input, &p.mask, stats)?;
    let r = p.masked_residual(&a)?;
    let residual_norm = r.norm();
    let (cot, loss) = match strategy {
        Strategy::DirectMinimization => {
            let g = dm_loss_grad(&r, p)?;
            (g.scaled(1.0 / batch as f64), residual_norm)
        }
        Strategy::SteepestDescent(n) | Strategy::ConjugateGradient(n) => {
            let (da, _) = if matches!(strategy, Strategy::SteepestDescent(_)) {
                sd_steps(&r, &a, p, n)?
            } else {
                cg_steps(&r, &a, p, n)?
            };
            let (loss, cot) = sse_loss(&a.add(&da), &a)?;
            (cot, loss)
        }
        Strategy::Supervised => {
            let label = label.ok_or_else(|| VolError::InvalidArgument("supervised training needs labels".into()))?;
            let (loss, cot) = sse_loss(label, &a)?;
            (cot, loss)
        }
    };
    Ok(SampleOutcome {
        grad: model.vjp(&tape, &cot)?,
        residual_norm,
        loss,
    })
}

impl Trainer {
    pub fn new(cfg: TrainConfig, n_params: usize) -> Result<Self> {
        cfg.validate()?;
        let optimizer = Optimizer::new(cfg.optimizer, n_params);
        Ok(Trainer {
            cfg,
            optimizer,
            epoch: 0,
            iter: 0,
            history: Vec::new(),
        })
    }

    pub fn current_lr(&self) -> f64 {
        self.cfg.scheduler.rate(self.cfg.learning_rate, self.epoch)
    }

    /// One pass of the batch loop. `labels` is consulted only by the
    /// supervised strategy.
    pub fn train_epoch<M: OperatorModel>(
        &mut self,
        model: &mut M,
        samples: &[Sample],
        stats: &ShiftStats,
        labels: Option<&[NodeField]>,
    ) -> Result<EpochReport> {
        if samples.is_empty() {
            return invalid("training set is empty");
        }
        if let Some(l) = labels {
            if l.len() != samples.len() {
                return shape_err("one label per training sample is required");
            }
        }
        let t0 = Instant::now();
        let cfg = &self.cfg;
        let bs = cfg.batch_size.min(samples.len());
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut sample_rng(cfg.seed, self.epoch as u64));
        let n_batches = cfg.maxiter.unwrap_or(samples.len().div_ceil(bs));
        let lr = self.current_lr();
        let strategy = cfg.strategy;
        let (mut res_sum, mut loss_sum, mut count) = (0.0, 0.0, 0usize);

        for b in 0..n_batches {
            let idx: Vec<usize> = (0..bs).map(|k| order[(b * bs + k) % order.len()]).collect();
            let batch = idx.len();
            let model_ref: &M = model;
            let outcomes: Vec<SampleOutcome> = idx
                .par_iter()
                .map(|&i| {
                    let label = if strategy == Strategy::Supervised {
                        labels.map(|l| &l[i])
                    } else {
                        None
                    };
                    sample_step(model_ref, &samples[i], label, stats, strategy, batch).map_err(|e| e.at_sample(i))
                })
                .collect::<Result<_>>()?;
            // fixed summation order
            let mut grad = vec![0.0; model.n_params()];
            let (mut rn, mut ls) = (0.0, 0.0);
            for o in &outcomes {
                for (g, v) in grad.iter_mut().zip(&o.grad) {
                    *g += v;
                }
                rn += o.residual_norm;
                ls += o.loss;
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(VolError::NonFinite(format!(
                    "parameter gradient at iteration {}",
                    self.iter
                )));
            }
            self.optimizer.step(model.params_mut(), &grad, lr);
            self.history.push(IterRecord {
                iter: self.iter,
                epoch: self.epoch,
                residual_norm: rn / batch as f64,
                lr,
            });
            self.iter += 1;
            res_sum += rn;
            loss_sum += ls;
            count += batch;
        }
        let report = EpochReport {
            epoch: self.epoch,
            mean_residual_norm: res_sum / count as f64,
            mean_loss: loss_sum / count as f64,
            lr,
            wall_time: t0.elapsed().as_secs_f64(),
        };
        self.epoch += 1;
        Ok(report)
    }

    /// `metrics.csv` content.
    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("iter,epoch,residual_norm,lr\n");
        for r in &self.history {
            s.push_str(&format!("{},{},{:e},{:e}\n", r.iter, r.epoch, r.residual_norm, r.lr));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub mean_rel_l2: f64,
    pub worst_rel_l2: f64,
    pub mean_residual_norm: f64,
    pub per_sample: Vec<f64>,
}

/// Predictions for every sample, in order.
pub fn predict<M: OperatorModel>(model: &M, samples: &[Sample], stats: &ShiftStats) -> Result<Vec<NodeField>> {
    samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            model
                .forward(&s.input, &s.problem.mask, stats)
                .map(|(a, _)| a)
                .map_err(|e| e.at_sample(i))
        })
        .collect()
}

/// Relative L2 error against labels and residual norms of the predictions.
pub fn evaluate<M: OperatorModel>(
    model: &M,
    samples: &[Sample],
    labels: &[NodeField],
    stats: &ShiftStats,
) -> Result<EvalReport> {
    if samples.len() != labels.len() || samples.is_empty() {
        return shape_err("evaluation needs one label per sample");
    }
    let preds = predict(model, samples, stats)?;
    let rows: Vec<(f64, f64)> = preds
        .par_iter()
        .zip(samples.par_iter().zip(labels.par_iter()))
        .enumerate()
        .map(|(i, (a, (s, l)))| {
            let row = || -> Result<(f64, f64)> {
                let e = relative_l2(a, l, &s.problem.mask)?;
                let r = s.problem.masked_residual(a)?.norm();
                Ok((e, r))
            };
            row().map_err(|e| e.at_sample(i))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = rows.len() as f64;
    Ok(EvalReport {
        mean_rel_l2: rows.iter().map(|r| r.0).sum::<f64>() / n,
        worst_rel_l2: rows.iter().map(|r| r.0).fold(0.0, f64::max),
        mean_residual_norm: rows.iter().map(|r| r.1).sum::<f64>() / n,
        per_sample: rows.iter().map(|r| r.0).collect(),
    })
}
