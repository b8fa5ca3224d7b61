//! Restarted CG(i) run directly on every sample: `i` conjugate-gradient
//! steps per epoch, conjugacy discarded between epochs, the iterate carried
//! over.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{shape_err, Result, VolError};
use crate::field::NodeField;
use crate::harness::rng::sample_rng;
use crate::matrix_free::apply_shift_bc;
use crate::physics::Problem;
use crate::solvers::iterative::cg_steps;
use crate::training::relative_l2;

/// Starting iterate of the baseline.
#[derive(Clone, Debug, PartialEq)]
pub enum BaselineInit {
    /// Mean of the shift-set labels (the "-A" protocol).
    AverageOfShiftLabels(NodeField),
    /// Independent `N(0, 1)` entries per sample (the "-R" protocol).
    RandomNormal { seed: u64 },
}

impl BaselineInit {
    fn initial(&self, problem: &Problem, index: usize) -> Result<NodeField> {
        let a = match self {
            BaselineInit::AverageOfShiftLabels(mean) => {
                if mean.shape() != problem.node_shape() {
                    return shape_err("shift-label mean does not match the problem");
                }
                mean.clone()
            }
            BaselineInit::RandomNormal { seed } => {
                let mut rng = sample_rng(*seed, index as u64);
                let mut a = problem.zeros();
                a.data.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
                a
            }
        };
        apply_shift_bc(&a, &problem.mask)
    }
}

/// Error history of one sample; index 0 is the initial iterate.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BaselineSample {
    pub rel_l2: Vec<f64>,
    /// `‖a − a*‖_K`.
    pub energy_error: Vec<f64>,
    pub residual_norm: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaselineEpoch {
    pub epoch: usize,
    pub mean_rel_l2: f64,
    pub worst_rel_l2: f64,
    pub mean_energy_error: f64,
    pub mean_residual_norm: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BaselineReport {
    /// Entry 0 describes the initial iterates.
    pub epochs: Vec<BaselineEpoch>,
    pub samples: Vec<BaselineSample>,
}

impl BaselineReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,mean_rel_l2,worst_rel_l2,mean_energy_error,mean_residual_norm\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{:e},{:e},{:e},{:e}\n",
                e.epoch, e.mean_rel_l2, e.worst_rel_l2, e.mean_energy_error, e.mean_residual_norm
            ));
        }
        s
    }

    pub fn final_mean_rel_l2(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |e| e.mean_rel_l2)
    }
}

fn run_sample(
    problem: &Problem,
    reference: &NodeField,
    index: usize,
    n: usize,
    epochs: usize,
    init: &BaselineInit,
) -> Result<BaselineSample> {
    let mut a = init.initial(problem, index)?;
    let mut out = BaselineSample::default();
    let record = |a: &NodeField, r: &NodeField, out: &mut BaselineSample| -> Result<()> {
        out.rel_l2.push(relative_l2(a, reference, &problem.mask)?);
        let e = a.sub(reference);
        out.energy_error.push(problem.quadratic_form(&e)?.max(0.0).sqrt());
        out.residual_norm.push(r.norm());
        Ok(())
    };
    let mut r = problem.masked_residual(&a)?;
    record(&a, &r, &mut out)?;
    for _ in 0..epochs {
        let (da, _) = cg_steps(&r, &a, problem, n)?;
        a.axpy(1.0, &da);
        r = problem.masked_residual(&a)?;
        record(&a, &r, &mut out)?;
    }
    Ok(out)
}

/// Run restarted CG(`n`) for `epochs` epochs on every problem, measuring
/// against `references` (converged solutions).
pub fn restarted_cg_baseline(
    problems: &[Problem],
    references: &[NodeField],
    n: usize,
    epochs: usize,
    init: &BaselineInit,
) -> Result<BaselineReport> {
    if problems.len() != references.len() {
        return shape_err(format!(
            "{} problems but {} reference solutions",
            problems.len(),
            references.len()
        ));
    }
    if problems.is_empty() {
        return Err(VolError::InvalidArgument("baseline needs at least one sample".into()));
    }
    let samples: Vec<BaselineSample> = problems
        .par_iter()
        .zip(references.par_iter())
        .enumerate()
        .map(|(i, (p, r))| run_sample(p, r, i, n, epochs, init).map_err(|e| e.at_sample(i)))
        .collect::<Result<_>>()?;
    let ns = samples.len() as f64;
    let epochs = (0..=epochs)
        .map(|k| BaselineEpoch {
            epoch: k,
            mean_rel_l2: samples.iter().map(|s| s.rel_l2[k]).sum::<f64>() / ns,
            worst_rel_l2: samples.iter().map(|s| s.rel_l2[k]).fold(0.0, f64::max),
            mean_energy_error: samples.iter().map(|s| s.energy_error[k]).sum::<f64>() / ns,
            mean_residual_norm: samples.iter().map(|s| s.residual_norm[k]).sum::<f64>() / ns,
        })
        .collect();
    Ok(BaselineReport { epochs, samples })
}
