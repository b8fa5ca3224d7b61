//! Fixed-step steepest-descent and conjugate-gradient updates on the masked
//! system, and a full CG solve.
//!
//! Quadratic forms go through the Ritz path, matrix-vector products through
//! the Galerkin path. Every direction is masked, so constrained dofs of the
//! returned update are exactly zero.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::error::{Result, VolError};
use crate::field::NodeField;
use crate::physics::Problem;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub alpha: f64,
    /// Absent on the last step of a fixed-step run and for steepest descent.
    pub beta: Option<f64>,
    /// `‖R‖` of the masked residual the step started from.
    pub residual_norm: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IterationReport {
    pub steps: Vec<StepRecord>,
    pub wall_time: f64,
    /// Only meaningful for [`cg_solve`].
    pub converged: bool,
    /// `‖R‖` at the returned iterate when it was computed.
    pub final_residual_norm: Option<f64>,
}

impl IterationReport {
    pub fn iterations(&self) -> usize {
        self.steps.len()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,alpha,beta,residual_norm\n");
        for r in &self.steps {
            let beta = r.beta.map(|b| format!("{b:e}")).unwrap_or_default();
            let _ = writeln!(s, "{},{:e},{},{:e}", r.step, r.alpha, beta, r.residual_norm);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

fn curvature_check(step: usize, curvature: f64) -> Result<()> {
    if curvature > 0.0 && curvature.is_finite() {
        Ok(())
    } else {
        Err(VolError::Breakdown { step, curvature })
    }
}

fn check_inputs(r: &NodeField, a: &NodeField, problem: &Problem, n: usize) -> Result<()> {
    if n == 0 {
        return Err(VolError::InvalidArgument("step count must be at least 1".into()));
    }
    let shape = problem.node_shape();
    for (f, what) in [(r, "residual"), (a, "solution")] {
        if f.shape() != shape {
            return Err(VolError::ShapeMismatch(format!(
                "{what} {:?} vs problem {:?}",
                f.shape(),
                shape
            )));
        }
    }
    Ok(())
}

/// `n` steps of steepest descent from `a`, given its masked residual `r`.
/// Returns the accumulated update `Δa`.
pub fn sd_steps(r: &NodeField, a: &NodeField, problem: &Problem, n: usize) -> Result<(NodeField, IterationReport)> {
    check_inputs(r, a, problem, n)?;
    let t0 = Instant::now();
    let mut report = IterationReport::default();
    let mut dir = r.scaled(-1.0);
    let mut da = a.zeros_like();
    let mut a = a.clone();
    for step in 0..n {
        let rr = dir.dot(&dir);
        if rr == 0.0 {
            break;
        }
        let rkr = problem.quadratic_form(&dir)?;
        curvature_check(step, rkr)?;
        let alpha = rr / rkr;
        report.steps.push(StepRecord {
            step,
            alpha,
            beta: None,
            residual_norm: rr.sqrt(),
        });
        da.axpy(alpha, &dir);
        // the residual after the final step is never used
        if n > 1 && step + 1 < n {
            a.axpy(alpha, &dir);
            dir = problem.masked_residual(&a)?;
            dir.scale(-1.0);
        }
    }
    report.wall_time = t0.elapsed().as_secs_f64();
    Ok((da, report))
}

/// `n` steps of conjugate gradients from `a`, given its masked residual `r`.
/// Conjugacy history starts fresh on every call.
pub fn cg_steps(r: &NodeField, a: &NodeField, problem: &Problem, n: usize) -> Result<(NodeField, IterationReport)> {
    check_inputs(r, a, problem, n)?;
    let t0 = Instant::now();
    let mut report = IterationReport::default();
    let mut res = r.scaled(-1.0);
    let mut p = res.clone();
    let mut da = a.zeros_like();
    let mut rr = res.dot(&res);
    for step in 0..n {
        if rr == 0.0 {
            break;
        }
        let pkp = problem.quadratic_form(&p)?;
        curvature_check(step, pkp)?;
        let alpha = rr / pkp;
        da.axpy(alpha, &p);
        let mut rec = StepRecord {
            step,
            alpha,
            beta: None,
            residual_norm: rr.sqrt(),
        };
        if n > 1 && step + 1 < n {
            let kp = problem.masked_matvec(&p)?;
            res.axpy(-alpha, &kp);
            let rr_new = res.dot(&res);
            let beta = rr_new / rr;
            rr = rr_new;
            for (pv, rv) in p.data.iter_mut().zip(&res.data) {
                *pv = rv + beta * *pv;
            }
            rec.beta = Some(beta);
        }
        report.steps.push(rec);
    }
    report.wall_time = t0.elapsed().as_secs_f64();
    Ok((da, report))
}

/// Residual recomputed from scratch every this many CG iterations.
const RESIDUAL_REFRESH: usize = 50;

/// Conjugate gradients until `‖R‖ / ‖Mask(P)‖ ≤ tol` or `maxiter` steps.
/// Hitting `maxiter` is reported through `converged`, not as an error.
pub fn cg_solve(problem: &Problem, a0: &NodeField, tol: f64, maxiter: usize) -> Result<(NodeField, IterationReport)> {
    if a0.shape() != problem.node_shape() {
        return Err(VolError::ShapeMismatch(format!(
            "initial guess {:?} vs problem {:?}",
            a0.shape(),
            problem.node_shape()
        )));
    }
    let t0 = Instant::now();
    let mut report = IterationReport::default();
    let mut a = crate::matrix_free::apply_shift_bc(a0, &problem.mask)?;
    let mut res = problem.masked_residual(&a)?;
    res.scale(-1.0);
    let mut rr = res.dot(&res);
    let scale = match problem.masked_load_norm() {
        s if s > 0.0 => s,
        _ => rr.sqrt(),
    };
    let mut p = res.clone();
    let mut k = 0;
    loop {
        let rnorm = rr.sqrt();
        if rnorm <= tol * scale || rnorm == 0.0 {
            report.converged = true;
            break;
        }
        if k >= maxiter {
            break;
        }
        let kp = problem.masked_matvec(&p)?;
        let pkp = p.dot(&kp);
        curvature_check(k, pkp)?;
        let alpha = rr / pkp;
        a.axpy(alpha, &p);
        if (k + 1) % RESIDUAL_REFRESH == 0 {
            res = problem.masked_residual(&a)?;
            res.scale(-1.0);
        } else {
            res.axpy(-alpha, &kp);
        }
        let rr_new = res.dot(&res);
        let beta = rr_new / rr;
        report.steps.push(StepRecord {
            step: k,
            alpha,
            beta: Some(beta),
            residual_norm: rnorm,
        });
        rr = rr_new;
        for (pv, rv) in p.data.iter_mut().zip(&res.data) {
            *pv = rv + beta * *pv;
        }
        k += 1;
    }
    report.final_residual_norm = Some(rr.sqrt());
    report.wall_time = t0.elapsed().as_secs_f64();
    Ok((a, report))
}
