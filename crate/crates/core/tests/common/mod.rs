//! Fixtures shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use vol_core::field::{GaussField, NodeField};
use vol_core::harness::config::DataConfig;
use vol_core::harness::dataset::generate_sample;
use vol_core::matrix_free::apply_shift_bc;
use vol_core::mesh::{gauss_legendre_rule, q1_values, Discretization};
use vol_core::physics::{problem_factory, ParamKind, ParameterField, Problem, ProblemConfig, ProblemKind};
use vol_core::solvers::{assemble_dense, cg_solve, cg_steps, dense_solve};

/// A sampled instance of `kind` on `n × n` elements.
pub fn problem(kind: ProblemKind, n: usize, seed: u64) -> Problem {
    let data = DataConfig {
        problem: kind,
        resolution: n,
        ..DataConfig::default()
    };
    let disc = kind.discretization(n).unwrap();
    let gs = generate_sample(&data, &disc, seed, 0).unwrap();
    problem_factory(kind, disc.clone(), &gs.physics, &data.physics).unwrap()
}

pub fn random_start(p: &Problem, seed: u64) -> NodeField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = p.zeros();
    a.data.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
    apply_shift_bc(&a, &p.mask).unwrap()
}

/// `‖a + Δa_k − a*‖_K` for `k = 0..=steps`.
pub fn cg_energy_errors(p: &Problem, a: &NodeField, steps: usize) -> Vec<f64> {
    let sys = assemble_dense(p).unwrap();
    let exact = dense_solve(&sys).unwrap();
    let r = p.masked_residual(a).unwrap();
    let mut out = vec![sys.energy_norm(&a.sub(&exact)).unwrap()];
    for k in 1..=steps {
        let (da, _) = cg_steps(&r, a, p, k).unwrap();
        out.push(sys.energy_norm(&a.add(&da).sub(&exact)).unwrap());
    }
    out
}

/// Manufactured Poisson solution `T = sin(πx) sin(πy)`.
pub fn exact(x: f64, y: f64) -> f64 {
    (PI * x).sin() * (PI * y).sin()
}

/// `‖T_h − T‖_{L²}` by a 4×4 Gauss rule per element.
pub fn l2_error(t: &NodeField, disc: &Discretization) -> f64 {
    let rule = gauss_legendre_rule(4).unwrap();
    let g = &disc.grid;
    let jac = g.hx * g.hy / 4.0;
    let mut e2 = 0.0;
    for ey in 0..g.ny {
        for ex in 0..g.nx {
            let nodal = [
                t.get(0, ey, ex),
                t.get(0, ey, ex + 1),
                t.get(0, ey + 1, ex),
                t.get(0, ey + 1, ex + 1),
            ];
            for (&[r, s], &w) in rule.points.iter().zip(&rule.weights) {
                let n = q1_values(r, s);
                let th: f64 = n.iter().zip(&nodal).map(|(a, b)| a * b).sum();
                let [x, y] = g.map_point(ey, ex, r, s);
                e2 += w * jac * (th - exact(x, y)).powi(2);
            }
        }
    }
    e2.sqrt()
}

pub fn poisson_error(n: usize) -> f64 {
    let disc = ProblemKind::Heat.discretization(n).unwrap();
    let mut q = GaussField::zeros(1, disc.n_gauss(), n, n);
    for (slot, &[r, s]) in disc.rule.points.iter().enumerate() {
        for ey in 0..n {
            for ex in 0..n {
                let [x, y] = disc.grid.map_point(ey, ex, r, s);
                q.set(0, slot, ey, ex, 2.0 * PI * PI * exact(x, y));
            }
        }
    }
    let source = ParameterField::gauss(ParamKind::Source, q);
    let p = problem_factory(ProblemKind::Heat, disc.clone(), &source, &ProblemConfig::default()).unwrap();
    let (t, rep) = cg_solve(&p, &p.zeros(), 1e-12, 10_000).unwrap();
    assert!(rep.converged);
    l2_error(&t, &disc)
}
