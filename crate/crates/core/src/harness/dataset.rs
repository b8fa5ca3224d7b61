//! Sampling of benchmark instances, labeling by CG, and the on-disk
//! dataset layout.
//!
//! ```text
//! <dir>/metadata.txt            resolved data config, seeds, solver settings
//! <dir>/{train,shift,test}/
//!     physics.volf              parameter as the physics sees it, [N, ...]
//!     inputs.volf               model input, [N, C, H, W]
//!     labels.volf               node solutions, [N, c, h, w] (labeled splits)
//! ```

use std::f64::consts::FRAC_PI_2;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{invalid, Result, VolError};
use crate::field::{GaussField, NodeField};
use crate::harness::arrayfile::{read_array, write_array, ArrayData};
use crate::harness::config::{ConfigMap, DataConfig, RunConfig};
use crate::harness::fiber::{sample_fiber_bspline, sample_fiber_linear};
use crate::harness::grf::{GrfConfig, GrfRealization};
use crate::harness::rng::{sample_rng, stream_seed};
use crate::mesh::Discretization;
use crate::physics::{problem_factory, ParamKind, ParamSamples, ParameterField, Problem, ProblemKind};
use crate::solvers::cg_solve;
use crate::training::Sample;

/// Marks defaults that are choices of this implementation rather than
/// published values.
pub const PROVENANCE: &str = "artifact-default";

/// Gauss-sampled GRF with the seed in `cfg`.
pub fn sample_grf(disc: &Discretization, cfg: &GrfConfig, kind: ParamKind) -> Result<ParameterField> {
    let mut rng = sample_rng(cfg.seed, 0);
    let f = GrfRealization::new(cfg, &disc.grid, &mut rng)?;
    Ok(ParameterField::gauss(kind, f.at_gauss(disc)))
}

/// Two-phase conductivity: `hi` where the GRF is non-negative, `lo`
/// elsewhere. Returns the Gauss-point field for the physics and the
/// node-sampled copy.
pub fn sample_darcy_conductivity(
    disc: &Discretization,
    grf: &GrfConfig,
    hi: f64,
    lo: f64,
    rng: &mut impl Rng,
) -> Result<(ParameterField, NodeField)> {
    if !(hi > 0.0 && lo > 0.0) {
        return invalid("conductivities must be positive");
    }
    let f = GrfRealization::new(grf, &disc.grid, rng)?;
    let phase = |v: f64| if v >= 0.0 { hi } else { lo };
    let mut g = f.at_gauss(disc);
    g.data.iter_mut().for_each(|v| *v = phase(*v));
    let mut n = f.at_nodes(&disc.grid);
    n.data.iter_mut().for_each(|v| *v = phase(*v));
    Ok((ParameterField::gauss(ParamKind::Conductivity, g), n))
}

/// One sampled instance before labeling.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedSample {
    /// Parameter consumed by the physics.
    pub physics: ParameterField,
    /// Parameter fed to the model (scaled, possibly node-sampled).
    pub input: ParameterField,
}

/// Draw instance `index` of a split whose stream seed is `seed`.
pub fn generate_sample(cfg: &DataConfig, disc: &Discretization, seed: u64, index: usize) -> Result<GeneratedSample> {
    let mut rng = sample_rng(seed, index as u64);
    match cfg.problem {
        ProblemKind::Heat => {
            let grf = GrfConfig {
                length_scale: cfg.heat_length_scale,
                variance: cfg.heat_variance,
                mean: cfg.heat_mean,
                seed: 0,
            };
            let q = GrfRealization::new(&grf, &disc.grid, &mut rng)?.at_gauss(disc);
            let physics = ParameterField::gauss(ParamKind::Source, q.clone());
            Ok(GeneratedSample {
                physics,
                input: ParameterField::gauss(ParamKind::Source, q),
            })
        }
        ProblemKind::Darcy => {
            let grf = GrfConfig {
                length_scale: cfg.darcy_length_scale,
                variance: 1.0,
                mean: 0.0,
                seed: 0,
            };
            let (physics, mut nodes) =
                sample_darcy_conductivity(disc, &grf, cfg.darcy_kappa_hi, cfg.darcy_kappa_lo, &mut rng)?;
            nodes.scale(1.0 / cfg.darcy_kappa_hi);
            Ok(GeneratedSample {
                physics,
                input: ParameterField::node(ParamKind::Conductivity, nodes),
            })
        }
        ProblemKind::ElasticityA | ProblemKind::ElasticityB => {
            let m = cfg.fiber_max_angle_deg.to_radians();
            let mut angle = || if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
            let physics = if cfg.problem == ProblemKind::ElasticityA {
                let (t0, t1) = (angle(), angle());
                sample_fiber_linear(t0, t1, disc)?
            } else {
                let n = cfg.fiber_control_points;
                let control: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| angle()).collect()).collect();
                sample_fiber_bspline(&control, disc)?
            };
            let mut scaled = physics.as_gauss()?.clone();
            scaled.data.iter_mut().for_each(|v| *v /= FRAC_PI_2);
            Ok(GeneratedSample {
                physics,
                input: ParameterField::gauss(ParamKind::FiberAngle, scaled),
            })
        }
    }
}

/// CG solve to `‖R‖ ≤ tol·‖Mask(P)‖`, re-checked against a freshly computed
/// residual and restarted if the recurrence drifted.
pub fn solve_label(problem: &Problem, tol: f64, maxiter: usize) -> Result<NodeField> {
    let scale = problem.masked_load_norm();
    let mut a = problem.zeros();
    let mut r = f64::INFINITY;
    let mut iterations = 0;
    for _ in 0..3 {
        let (x, rep) = cg_solve(problem, &a, tol, maxiter)?;
        a = x;
        iterations += rep.iterations();
        r = problem.masked_residual(&a)?.norm();
        if r <= tol * scale || scale == 0.0 {
            return Ok(a);
        }
        if !rep.converged {
            break;
        }
    }
    Err(VolError::NotConverged {
        iterations,
        relative: r / scale,
    })
}

/// One split held in memory.
#[derive(Clone, Debug, Default)]
pub struct Split {
    pub samples: Vec<Sample>,
    pub physics: Vec<ParameterField>,
    pub labels: Option<Vec<NodeField>>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// First `n` samples (with labels, if any).
    pub fn prefix(&self, n: usize) -> Split {
        let n = n.min(self.len());
        Split {
            samples: self.samples[..n].to_vec(),
            physics: self.physics[..n].to_vec(),
            labels: self.labels.as_ref().map(|l| l[..n].to_vec()),
        }
    }

    pub fn labels(&self) -> Result<&[NodeField]> {
        self.labels
            .as_deref()
            .ok_or_else(|| VolError::InvalidArgument("split has no labels".into()))
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub cfg: DataConfig,
    pub disc: Arc<Discretization>,
    pub train: Split,
    pub shift: Split,
    pub test: Split,
}

fn build_split(cfg: &DataConfig, disc: &Arc<Discretization>, stream: &str, n: usize, label: bool) -> Result<Split> {
    let seed = stream_seed(cfg.seed, stream);
    let rows: Vec<(GeneratedSample, Problem, Option<NodeField>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let row = || -> Result<_> {
                let gs = generate_sample(cfg, disc, seed, i)?;
                let problem = problem_factory(cfg.problem, disc.clone(), &gs.physics, &cfg.physics)?;
                let lab = if label {
                    Some(solve_label(&problem, cfg.label_tol, cfg.label_maxiter)?)
                } else {
                    None
                };
                Ok((gs, problem, lab))
            };
            row().map_err(|e| e.at_sample(i))
        })
        .collect::<Result<_>>()?;
    Ok(assemble_split(rows, label))
}

fn assemble_split(rows: Vec<(GeneratedSample, Problem, Option<NodeField>)>, label: bool) -> Split {
    let mut split = Split {
        labels: label.then(Vec::new),
        ..Split::default()
    };
    for (gs, problem, lab) in rows {
        split.samples.push(Sample {
            input: gs.input,
            problem,
        });
        split.physics.push(gs.physics);
        if let (Some(l), Some(v)) = (split.labels.as_mut(), lab) {
            l.push(v);
        }
    }
    split
}

/// Generate train (unlabeled unless `label_train`), shift and test splits.
pub fn generate_dataset(cfg: &DataConfig, label_train: bool) -> Result<Dataset> {
    cfg.validate()?;
    let disc = cfg.problem.discretization(cfg.resolution)?;
    Ok(Dataset {
        train: build_split(cfg, &disc, "train", cfg.n_train, label_train)?,
        shift: build_split(cfg, &disc, "shift", cfg.n_shift, true)?,
        test: build_split(cfg, &disc, "test", cfg.n_test, true)?,
        cfg: cfg.clone(),
        disc,
    })
}

fn stack_params(p: &[ParameterField]) -> Result<ArrayData> {
    let mut shape = match p.first().map(|f| &f.samples) {
        Some(ParamSamples::Gauss(g)) => vec![g.channels * g.n_gauss, g.ny, g.nx],
        Some(ParamSamples::Node(n)) => vec![n.channels, n.height, n.width],
        None => vec![0, 0, 0],
    };
    shape.insert(0, p.len());
    ArrayData::new(shape, p.iter().flat_map(|f| f.values().iter().copied()).collect())
}

fn stack_nodes(v: &[NodeField], shape: [usize; 3]) -> Result<ArrayData> {
    let mut s = vec![v.len()];
    s.extend(shape);
    ArrayData::new(s, v.iter().flat_map(|f| f.data.iter().copied()).collect())
}

fn metadata(cfg: &DataConfig, d: &Dataset) -> String {
    let run = RunConfig {
        data: cfg.clone(),
        ..RunConfig::default()
    };
    let m = run.to_map();
    let mut s = String::from("# dataset metadata\n");
    for k in [
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
        "heat.conductivity",
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
    ] {
        s.push_str(&format!("{k} = {}\n", m.get(k).unwrap()));
    }
    s.push_str(&format!("label_solver = cg\nprovenance = {PROVENANCE}\n"));
    s.push_str(&format!("train_labeled = {}\n", d.train.labels.is_some()));
    for split in ["train", "shift", "test"] {
        s.push_str(&format!("seed.{split} = {}\n", stream_seed(cfg.seed, split)));
    }
    s
}

impl Dataset {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("metadata.txt"), metadata(&self.cfg, self))?;
        let shape = self.disc.node_shape();
        for (name, split) in [("train", &self.train), ("shift", &self.shift), ("test", &self.test)] {
            let sub = dir.join(name);
            std::fs::create_dir_all(&sub)?;
            write_array(&sub.join("physics.volf"), &stack_params(&split.physics)?)?;
            let inputs: Vec<ParameterField> = split.samples.iter().map(|s| s.input.clone()).collect();
            write_array(&sub.join("inputs.volf"), &stack_params(&inputs)?)?;
            if let Some(l) = &split.labels {
                write_array(&sub.join("labels.volf"), &stack_nodes(l, shape)?)?;
            }
        }
        Ok(())
    }

    /// Load a dataset written by [`Dataset::write`]; problems are rebuilt
    /// from the stored physics parameters.
    pub fn read(dir: &Path) -> Result<Self> {
        let meta = ConfigMap::load(&dir.join("metadata.txt"))?;
        let mut known = ConfigMap::default();
        for k in meta.keys() {
            if !(k.starts_with("seed.") || matches!(k, "label_solver" | "provenance" | "train_labeled")) {
                known.set(k, meta.get(k).unwrap());
            }
        }
        let cfg = RunConfig::from_map(&known)?.data;
        let disc = cfg.problem.discretization(cfg.resolution)?;
        let split = |name: &str| -> Result<Split> { read_split(&cfg, &disc, &dir.join(name)) };
        Ok(Dataset {
            train: split("train")?,
            shift: split("shift")?,
            test: split("test")?,
            cfg,
            disc,
        })
    }
}

fn unstack_params(a: &ArrayData, kind: ParamKind, gauss: bool, disc: &Discretization) -> Result<Vec<ParameterField>> {
    if a.shape.len() != 4 {
        return Err(VolError::Format(format!(
            "expected 4-d parameter array, got {:?}",
            a.shape
        )));
    }
    let (n, c, h, w) = (a.shape[0], a.shape[1], a.shape[2], a.shape[3]);
    let per = c * h * w;
    (0..n)
        .map(|i| {
            let data = a.data[i * per..(i + 1) * per].to_vec();
            if gauss {
                let ng = disc.n_gauss();
                if c % ng != 0 {
                    return Err(VolError::Format(
                        "gauss channels not a multiple of the rule size".into(),
                    ));
                }
                Ok(ParameterField::gauss(
                    kind,
                    GaussField::from_vec(c / ng, ng, h, w, data)?,
                ))
            } else {
                Ok(ParameterField::node(kind, NodeField::from_vec(c, h, w, data)?))
            }
        })
        .collect()
}

fn read_split(cfg: &DataConfig, disc: &Arc<Discretization>, dir: &Path) -> Result<Split> {
    let kind = cfg.problem.parameter_kind();
    let physics = unstack_params(&read_array(&dir.join("physics.volf"))?, kind, true, disc)?;
    let input_gauss = cfg.problem != ProblemKind::Darcy;
    let inputs = unstack_params(&read_array(&dir.join("inputs.volf"))?, kind, input_gauss, disc)?;
    if inputs.len() != physics.len() {
        return Err(VolError::Format("input and physics counts differ".into()));
    }
    let labels = match read_array(&dir.join("labels.volf")) {
        Ok(a) => {
            let [c, h, w] = disc.node_shape();
            if a.shape != [physics.len(), c, h, w] {
                return Err(VolError::Format(format!("label array has shape {:?}", a.shape)));
            }
            let per = c * h * w;
            Some(
                (0..physics.len())
                    .map(|i| NodeField::from_vec(c, h, w, a.data[i * per..(i + 1) * per].to_vec()))
                    .collect::<Result<Vec<_>>>()?,
            )
        }
        Err(VolError::Io(e)) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(e),
    };
    let samples = physics
        .par_iter()
        .zip(inputs.into_par_iter())
        .enumerate()
        .map(|(i, (p, input))| {
            problem_factory(cfg.problem, disc.clone(), p, &cfg.physics)
                .map(|problem| Sample { input, problem })
                .map_err(|e| e.at_sample(i))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Split {
        samples,
        physics,
        labels,
    })
}
