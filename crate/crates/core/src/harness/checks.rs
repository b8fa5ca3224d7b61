//! Self-checks run from the command line: matrix-free operators against the
//! dense assembly, and reverse-mode gradients against central differences.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::field::NodeField;
use crate::harness::config::{model_for_problem, DataConfig};
use crate::harness::dataset::generate_sample;
use crate::harness::rng::{sample_rng, stream_seed};
use crate::model::{ConvModel, ModelConfig, OperatorModel};
use crate::physics::{problem_factory, Problem, ProblemConfig, ProblemKind};
use crate::solvers::assemble_dense;
use crate::training::{dm_loss, dm_loss_grad, ShiftStats};

fn random_field(shape: [usize; 3], rng: &mut impl Rng) -> NodeField {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    NodeField::from_vec(shape[0], shape[1], shape[2], data).expect("length matches")
}

fn rel_inf(a: &NodeField, b: &NodeField) -> f64 {
    let scale = a.max_abs().max(b.max_abs());
    if scale == 0.0 {
        0.0
    } else {
        a.sub(b).max_abs() / scale
    }
}

/// Worst relative discrepancy between matrix-free and dense residual,
/// matvec, load vector and functional.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OracleReport {
    pub residual: f64,
    pub matvec: f64,
    pub load: f64,
    pub functional: f64,
}

impl OracleReport {
    pub fn max(&self) -> f64 {
        self.residual.max(self.matvec).max(self.load).max(self.functional)
    }

    fn merge(&mut self, o: &OracleReport) {
        self.residual = self.residual.max(o.residual);
        self.matvec = self.matvec.max(o.matvec);
        self.load = self.load.max(o.load);
        self.functional = self.functional.max(o.functional);
    }
}

pub fn oracle_problem(problem: &Problem, rng: &mut impl Rng) -> Result<OracleReport> {
    let sys = assemble_dense(problem)?;
    let shape = problem.node_shape();
    let a = random_field(shape, rng);
    let x = random_field(shape, rng);
    let fm = problem.functional(&a)?;
    let fd = sys.functional(&a)?;
    Ok(OracleReport {
        residual: rel_inf(&problem.residual(&a)?, &sys.residual(&a)?),
        matvec: rel_inf(&problem.matvec(&x)?, &sys.apply(&x)?),
        load: rel_inf(problem.load_vector(), &sys.load()),
        functional: (fm - fd).abs() / fd.abs().max(f64::MIN_POSITIVE),
    })
}

/// Oracle comparison on `samples` random instances of `kind`.
pub fn oracle_check(
    kind: ProblemKind,
    resolution: usize,
    seed: u64,
    samples: usize,
    physics: &ProblemConfig,
) -> Result<OracleReport> {
    let data = DataConfig {
        problem: kind,
        resolution,
        physics: physics.clone(),
        ..DataConfig::default()
    };
    let disc = kind.discretization(resolution)?;
    let s = stream_seed(seed, "oracle");
    let mut rng = sample_rng(s, u64::MAX);
    let mut report = OracleReport::default();
    for i in 0..samples {
        let gs = generate_sample(&data, &disc, s, i)?;
        let p = problem_factory(kind, disc.clone(), &gs.physics, &data.physics)?;
        report.merge(&oracle_problem(&p, &mut rng)?);
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Max relative error of the model vjp over all parameters.
    pub model: f64,
    /// Max relative error of the direct-minimization loss gradient.
    pub dm_loss: f64,
}

fn relative(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Central differences (`h = 1e-6`) on a small model for `kind`.
pub fn grad_check(kind: ProblemKind, seed: u64) -> Result<GradCheckReport> {
    let resolution = 5;
    let base = ModelConfig {
        hidden_channels: 4,
        n_layers: 2,
        kernel_extent: 3,
        dilation_base: 2,
        seed,
        ..ModelConfig::default()
    };
    let data = DataConfig {
        problem: kind,
        resolution,
        ..DataConfig::default()
    };
    let disc = kind.discretization(resolution)?;
    let gs = generate_sample(&data, &disc, seed, 0)?;
    let p = problem_factory(kind, disc.clone(), &gs.physics, &data.physics)?;
    let mut rng = sample_rng(stream_seed(seed, "grad-check"), 0);
    let shape = p.node_shape();
    let mut std = random_field(shape, &mut rng);
    std.data.iter_mut().for_each(|v| *v = 0.5 + v.abs());
    let stats = ShiftStats {
        mean: random_field(shape, &mut rng),
        std,
    };
    let cot = random_field(shape, &mut rng);

    let mut model = ConvModel::new(model_for_problem(kind, &base))?;
    for v in model.params_mut().iter_mut() {
        *v += 0.1 * rng.sample::<f64, _>(StandardNormal);
    }
    let (_, tape) = model.forward(&gs.input, &p.mask, &stats)?;
    let g = model.vjp(&tape, &cot)?;
    let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let h = 1e-6;
    let mut worst_model = 0.0f64;
    for i in 0..model.n_params() {
        let p0 = model.params()[i];
        model.params_mut()[i] = p0 + h;
        let fp = model.forward(&gs.input, &p.mask, &stats)?.0.dot(&cot);
        model.params_mut()[i] = p0 - h;
        let fm = model.forward(&gs.input, &p.mask, &stats)?.0.dot(&cot);
        model.params_mut()[i] = p0;
        worst_model = worst_model.max(relative(g[i], (fp - fm) / (2.0 * h), 1e-3 * gmax));
    }

    let a = random_field(shape, &mut rng);
    let r = p.masked_residual(&a)?;
    let gd = dm_loss_grad(&r, &p)?;
    let gdmax = gd.max_abs();
    let mut worst_dm = 0.0f64;
    for i in 0..a.len() {
        let mut ap = a.clone();
        ap.data[i] += h;
        let mut am = a.clone();
        am.data[i] -= h;
        let fd = (dm_loss(&p.masked_residual(&ap)?) - dm_loss(&p.masked_residual(&am)?)) / (2.0 * h);
        worst_dm = worst_dm.max(relative(gd.data[i], fd, 1e-3 * gdmax));
    }
    Ok(GradCheckReport {
        model: worst_model,
        dm_loss: worst_dm,
    })
}
