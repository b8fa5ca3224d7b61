//! Flat `key = value` configuration files and the fully resolved run
//! configuration.
//!
//! Lines are UTF-8; `#` starts a comment; blank lines are ignored. Unknown
//! keys are rejected. [`RunConfig::to_text`] writes every key, defaults
//! included, so an echoed config reproduces a run on its own.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{invalid, Result, VolError};
use crate::model::{Activation, ModelConfig};
use crate::physics::{LaminaProperties, ProblemConfig, ProblemKind};
use crate::training::{OptimizerKind, Scheduler, Strategy, TrainConfig};

/// Raw key/value pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(VolError::Format(format!("line {}: expected `key = value`", no + 1)));
            };
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(VolError::Format(format!("line {}: empty key", no + 1)));
            }
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(VolError::Format(format!("line {}: duplicate key `{k}`", no + 1)));
            }
        }
        Ok(ConfigMap { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|s| s.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    fn parsed<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| VolError::InvalidArgument(format!("bad value `{v}` for `{key}`"))),
        }
    }

    fn list(&self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| VolError::InvalidArgument(format!("bad list entry `{s}` for `{key}`")))
                })
                .collect(),
        }
    }
}

/// Which experiment family a run belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExperimentKind {
    Scaling,
    Resolution,
    Generalization,
    StrategyCompare,
}

impl ExperimentKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "scaling" => Ok(ExperimentKind::Scaling),
            "resolution" => Ok(ExperimentKind::Resolution),
            "generalization" => Ok(ExperimentKind::Generalization),
            "strategy-compare" => Ok(ExperimentKind::StrategyCompare),
            other => invalid(format!("unknown experiment `{other}`")),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Scaling => "scaling",
            ExperimentKind::Resolution => "resolution",
            ExperimentKind::Generalization => "generalization",
            ExperimentKind::StrategyCompare => "strategy-compare",
        }
    }
}

/// Everything needed to generate a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub problem: ProblemKind,
    /// Elements per side.
    pub resolution: usize,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub n_shift: usize,
    pub label_tol: f64,
    pub label_maxiter: usize,
    pub heat_length_scale: f64,
    pub heat_variance: f64,
    pub heat_mean: f64,
    pub darcy_length_scale: f64,
    pub darcy_kappa_hi: f64,
    pub darcy_kappa_lo: f64,
    /// B-spline control grid is `n × n`.
    pub fiber_control_points: usize,
    /// Fiber angles are drawn from `[−max, max]`, in degrees.
    pub fiber_max_angle_deg: f64,
    pub physics: ProblemConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            problem: ProblemKind::Heat,
            resolution: 32,
            seed: 0,
            n_train: 200,
            n_test: 200,
            n_shift: 5,
            label_tol: 1e-10,
            label_maxiter: 20_000,
            heat_length_scale: 0.2,
            heat_variance: 1.0,
            heat_mean: 1.0,
            darcy_length_scale: 0.2,
            darcy_kappa_hi: 12.0,
            darcy_kappa_lo: 3.0,
            fiber_control_points: 5,
            fiber_max_angle_deg: 90.0,
            physics: ProblemConfig::default(),
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 {
            return invalid("resolution must be at least 1 element");
        }
        if self.n_shift < 2 {
            return invalid("shift set needs at least two samples");
        }
        if !(self.label_tol > 0.0) {
            return invalid("label tolerance must be positive");
        }
        if !(self.darcy_kappa_hi > 0.0 && self.darcy_kappa_lo > 0.0) {
            return invalid("conductivities must be positive");
        }
        if self.fiber_control_points < 4 {
            return invalid("B-spline control grid needs at least 4 points per side");
        }
        if !(0.0..=90.0).contains(&self.fiber_max_angle_deg) {
            return invalid("fiber angle range must lie within [0, 90] degrees");
        }
        self.physics.lamina.validate()
    }
}

/// Settings of the experiment drivers.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSettings {
    pub kind: ExperimentKind,
    /// Training-set sizes of the scaling experiment.
    pub sizes: Vec<usize>,
    /// Elements per side of the resolution experiment.
    pub resolutions: Vec<usize>,
    /// Steps per epoch of the restarted CG baseline.
    pub baseline_steps: usize,
    pub strategies: Vec<Strategy>,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        ExperimentSettings {
            kind: ExperimentKind::Scaling,
            sizes: vec![50, 100, 200, 400],
            resolutions: vec![16, 32, 64],
            baseline_steps: 2,
            strategies: vec![
                Strategy::Supervised,
                Strategy::DirectMinimization,
                Strategy::ConjugateGradient(2),
            ],
        }
    }
}

/// Fully resolved configuration of a `train`/`run-experiment` invocation.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: DataConfig,
    /// Channel counts and alignment are filled in from the problem.
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Evaluate on the test set every this many epochs (0: only at the end).
    pub eval_every: usize,
    /// Save parameters every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
    pub experiment: ExperimentSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        let data = DataConfig::default();
        let model = model_for_problem(data.problem, &ModelConfig::default());
        RunConfig {
            data,
            model,
            train: TrainConfig::new(100, Strategy::ConjugateGradient(2)),
            eval_every: 10,
            checkpoint_every: 0,
            experiment: ExperimentSettings::default(),
        }
    }
}

/// Input/output channels and alignment of the surrogate for a problem.
pub fn model_for_problem(kind: ProblemKind, base: &ModelConfig) -> ModelConfig {
    let (in_channels, out_channels, use_alignment) = match kind {
        ProblemKind::Heat | ProblemKind::ElasticityA | ProblemKind::ElasticityB => {
            (4, kind.physics().solution_channels(), true)
        }
        ProblemKind::Darcy => (1, 1, false),
    };
    ModelConfig {
        in_channels,
        out_channels,
        use_alignment,
        ..base.clone()
    }
}

const KEYS: &[&str] = &[
    "problem",
    "resolution",
    "seed",
    "n_train",
    "n_test",
    "n_shift",
    "label_tol",
    "label_maxiter",
    "heat.length_scale",
    "heat.variance",
    "heat.mean",
    "darcy.length_scale",
    "darcy.kappa_hi",
    "darcy.kappa_lo",
    "darcy.source",
    "elasticity.e1",
    "elasticity.e2",
    "elasticity.g12",
    "elasticity.nu12",
    "elasticity.thickness",
    "elasticity.traction_x",
    "elasticity.traction_y",
    "elasticity.control_points",
    "elasticity.max_angle_deg",
    "heat.conductivity",
    "model.hidden",
    "model.layers",
    "model.kernel",
    "model.dilation_base",
    "model.activation",
    "model.seed",
    "train.epochs",
    "train.batch_size",
    "train.strategy",
    "train.lr",
    "train.optimizer",
    "train.scheduler",
    "train.decay_factor",
    "train.decay_every",
    "train.maxiter",
    "train.seed",
    "train.eval_every",
    "train.checkpoint_every",
    "experiment.kind",
    "experiment.sizes",
    "experiment.resolutions",
    "experiment.baseline_steps",
    "experiment.strategies",
];

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn from_map(m: &ConfigMap) -> Result<Self> {
        if let Some(k) = m.keys().find(|k| !KEYS.contains(k)) {
            return invalid(format!("unknown config key `{k}`"));
        }
        let d0 = DataConfig::default();
        let problem = match m.get("problem") {
            Some(s) => ProblemKind::parse(s)?,
            None => d0.problem,
        };
        let l0 = LaminaProperties::default();
        let p0 = ProblemConfig::default();
        let data = DataConfig {
            problem,
            resolution: m.parsed("resolution", d0.resolution)?,
            seed: m.parsed("seed", d0.seed)?,
            n_train: m.parsed("n_train", d0.n_train)?,
            n_test: m.parsed("n_test", d0.n_test)?,
            n_shift: m.parsed("n_shift", d0.n_shift)?,
            label_tol: m.parsed("label_tol", d0.label_tol)?,
            label_maxiter: m.parsed("label_maxiter", d0.label_maxiter)?,
            heat_length_scale: m.parsed("heat.length_scale", d0.heat_length_scale)?,
            heat_variance: m.parsed("heat.variance", d0.heat_variance)?,
            heat_mean: m.parsed("heat.mean", d0.heat_mean)?,
            darcy_length_scale: m.parsed("darcy.length_scale", d0.darcy_length_scale)?,
            darcy_kappa_hi: m.parsed("darcy.kappa_hi", d0.darcy_kappa_hi)?,
            darcy_kappa_lo: m.parsed("darcy.kappa_lo", d0.darcy_kappa_lo)?,
            fiber_control_points: m.parsed("elasticity.control_points", d0.fiber_control_points)?,
            fiber_max_angle_deg: m.parsed("elasticity.max_angle_deg", d0.fiber_max_angle_deg)?,
            physics: ProblemConfig {
                heat_conductivity: m.parsed("heat.conductivity", p0.heat_conductivity)?,
                darcy_source: m.parsed("darcy.source", p0.darcy_source)?,
                lamina: LaminaProperties {
                    e1: m.parsed("elasticity.e1", l0.e1)?,
                    e2: m.parsed("elasticity.e2", l0.e2)?,
                    g12: m.parsed("elasticity.g12", l0.g12)?,
                    nu12: m.parsed("elasticity.nu12", l0.nu12)?,
                    thickness: m.parsed("elasticity.thickness", l0.thickness)?,
                },
                traction: [
                    m.parsed("elasticity.traction_x", p0.traction[0])?,
                    m.parsed("elasticity.traction_y", p0.traction[1])?,
                ],
            },
        };
        data.validate()?;

        let mc0 = ModelConfig::default();
        let base = ModelConfig {
            hidden_channels: m.parsed("model.hidden", mc0.hidden_channels)?,
            n_layers: m.parsed("model.layers", mc0.n_layers)?,
            kernel_extent: m.parsed("model.kernel", mc0.kernel_extent)?,
            dilation_base: m.parsed("model.dilation_base", mc0.dilation_base)?,
            activation: match m.get("model.activation") {
                Some(s) => Activation::parse(s)?,
                None => mc0.activation,
            },
            seed: m.parsed("model.seed", mc0.seed)?,
            ..mc0
        };
        let model = model_for_problem(problem, &base);
        model.validate()?;

        let epochs = m.parsed("train.epochs", 100usize)?;
        let t0 = TrainConfig::new(epochs, Strategy::ConjugateGradient(2));
        let scheduler = match m.get("train.scheduler").unwrap_or("step") {
            "constant" => Scheduler::Constant,
            "step" => {
                let every: usize = m.parsed("train.decay_every", 0)?;
                Scheduler::StepDecay {
                    factor: m.parsed("train.decay_factor", 0.5)?,
                    every: if every == 0 { (epochs / 5).max(1) } else { every },
                }
            }
            other => return invalid(format!("unknown scheduler `{other}` (step, constant)")),
        };
        let maxiter: usize = m.parsed("train.maxiter", 0)?;
        let train = TrainConfig {
            epochs,
            batch_size: m.parsed("train.batch_size", t0.batch_size)?,
            strategy: match m.get("train.strategy") {
                Some(s) => Strategy::parse(s)?,
                None => t0.strategy,
            },
            learning_rate: m.parsed("train.lr", t0.learning_rate)?,
            optimizer: match m.get("train.optimizer") {
                Some(s) => OptimizerKind::parse(s)?,
                None => t0.optimizer,
            },
            scheduler,
            maxiter: (maxiter > 0).then_some(maxiter),
            seed: m.parsed("train.seed", t0.seed)?,
        };
        train.validate()?;

        let e0 = ExperimentSettings::default();
        let experiment = ExperimentSettings {
            kind: match m.get("experiment.kind") {
                Some(s) => ExperimentKind::parse(s)?,
                None => e0.kind,
            },
            sizes: m.list("experiment.sizes", &e0.sizes)?,
            resolutions: m.list("experiment.resolutions", &e0.resolutions)?,
            baseline_steps: m.parsed("experiment.baseline_steps", e0.baseline_steps)?,
            strategies: match m.get("experiment.strategies") {
                Some(s) => s.split(',').map(|x| Strategy::parse(x.trim())).collect::<Result<_>>()?,
                None => e0.strategies,
            },
        };
        if experiment.sizes.is_empty() || experiment.resolutions.is_empty() || experiment.strategies.is_empty() {
            return invalid("experiment lists must be nonempty");
        }
        Ok(RunConfig {
            data,
            model,
            train,
            eval_every: m.parsed("train.eval_every", 10)?,
            checkpoint_every: m.parsed("train.checkpoint_every", 0)?,
            experiment,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_map(&ConfigMap::parse(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_map(&ConfigMap::load(path)?)
    }

    /// Every key with its resolved value.
    pub fn to_map(&self) -> ConfigMap {
        let d = &self.data;
        let mut m = ConfigMap::default();
        m.set("problem", d.problem.name());
        m.set("resolution", d.resolution);
        m.set("seed", d.seed);
        m.set("n_train", d.n_train);
        m.set("n_test", d.n_test);
        m.set("n_shift", d.n_shift);
        m.set("label_tol", format!("{:e}", d.label_tol));
        m.set("label_maxiter", d.label_maxiter);
        m.set("heat.length_scale", d.heat_length_scale);
        m.set("heat.variance", d.heat_variance);
        m.set("heat.mean", d.heat_mean);
        m.set("heat.conductivity", d.physics.heat_conductivity);
        m.set("darcy.length_scale", d.darcy_length_scale);
        m.set("darcy.kappa_hi", d.darcy_kappa_hi);
        m.set("darcy.kappa_lo", d.darcy_kappa_lo);
        m.set("darcy.source", d.physics.darcy_source);
        let l = &d.physics.lamina;
        m.set("elasticity.e1", l.e1);
        m.set("elasticity.e2", l.e2);
        m.set("elasticity.g12", l.g12);
        m.set("elasticity.nu12", l.nu12);
        m.set("elasticity.thickness", l.thickness);
        m.set("elasticity.traction_x", d.physics.traction[0]);
        m.set("elasticity.traction_y", d.physics.traction[1]);
        m.set("elasticity.control_points", d.fiber_control_points);
        m.set("elasticity.max_angle_deg", d.fiber_max_angle_deg);
        let mc = &self.model;
        m.set("model.hidden", mc.hidden_channels);
        m.set("model.layers", mc.n_layers);
        m.set("model.kernel", mc.kernel_extent);
        m.set("model.dilation_base", mc.dilation_base);
        m.set("model.activation", mc.activation.name());
        m.set("model.seed", mc.seed);
        let t = &self.train;
        m.set("train.epochs", t.epochs);
        m.set("train.batch_size", t.batch_size);
        m.set("train.strategy", t.strategy.name());
        m.set("train.lr", t.learning_rate);
        m.set("train.optimizer", t.optimizer.name());
        match t.scheduler {
            Scheduler::Constant => {
                m.set("train.scheduler", "constant");
            }
            Scheduler::StepDecay { factor, every } => {
                m.set("train.scheduler", "step");
                m.set("train.decay_factor", factor);
                m.set("train.decay_every", every);
            }
        }
        m.set("train.maxiter", t.maxiter.unwrap_or(0));
        m.set("train.seed", t.seed);
        m.set("train.eval_every", self.eval_every);
        m.set("train.checkpoint_every", self.checkpoint_every);
        let e = &self.experiment;
        m.set("experiment.kind", e.kind.name());
        m.set("experiment.sizes", join(&e.sizes));
        m.set("experiment.resolutions", join(&e.resolutions));
        m.set("experiment.baseline_steps", e.baseline_steps);
        m.set(
            "experiment.strategies",
            e.strategies.iter().map(|s| s.name()).collect::<Vec<_>>().join(","),
        );
        m
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in KEYS {
            if let Some(v) = self.to_map().get(k) {
                let _ = writeln!(s, "{k} = {v}");
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_basics() {
        let m = ConfigMap::parse("# comment\n a = 1 \n\nb= x # trailing\n").unwrap();
        assert_eq!(m.get("a"), Some("1"));
        assert_eq!(m.get("b"), Some("x"));
        assert!(ConfigMap::parse("novalue\n").is_err());
        assert!(ConfigMap::parse("a = 1\na = 2\n").is_err());
    }

    #[test]
    fn echo_round_trip() {
        let c =
            RunConfig::parse("problem = darcy\ntrain.strategy = sd:3\nmodel.hidden = 8\nexperiment.sizes = 10, 20\n")
                .unwrap();
        assert_eq!(c.model.in_channels, 1);
        assert!(!c.model.use_alignment);
        assert_eq!(c.train.strategy, Strategy::SteepestDescent(3));
        let again = RunConfig::parse(&c.to_text()).unwrap();
        assert_eq!(again, c);
        assert_eq!(
            RunConfig::parse(&RunConfig::default().to_text()).unwrap(),
            RunConfig::default()
        );
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(RunConfig::parse("train.lrr = 1\n").is_err());
        assert!(RunConfig::parse("train.strategy = newton\n").is_err());
    }
}
