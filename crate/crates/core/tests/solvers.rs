//! Krylov solvers against dense factorization, and the relations between
//! the truncated solvers.

mod common;

use proptest::prelude::*;

use common::{cg_energy_errors, problem, random_start};
use vol_core::physics::ProblemKind;
use vol_core::solvers::{assemble_dense, cg_solve, cg_steps, dense_solve, sd_steps};

#[test]
fn cg_matches_dense_solution() {
    for kind in ProblemKind::ALL {
        let p = problem(kind, 8, 3);
        let dense = dense_solve(&assemble_dense(&p).unwrap()).unwrap();
        let (a, rep) = cg_solve(&p, &p.zeros(), 1e-13, 10_000).unwrap();
        assert!(rep.converged, "{}", kind.name());
        let rel = a.sub(&dense).norm() / dense.norm();
        assert!(rel <= 1e-8, "{}: {rel:e}", kind.name());
    }
}

#[test]
fn one_step_cg_is_steepest_descent() {
    for kind in ProblemKind::ALL {
        let p = problem(kind, 6, 5);
        let a = random_start(&p, 1);
        let r = p.masked_residual(&a).unwrap();
        let (sd, _) = sd_steps(&r, &a, &p, 1).unwrap();
        let (cg, _) = cg_steps(&r, &a, &p, 1).unwrap();
        let diff = sd.sub(&cg).max_abs() / sd.max_abs();
        assert!(diff <= 1e-14, "{}: {diff:e}", kind.name());
    }
}

#[test]
fn cg_energy_error_is_monotone() {
    for kind in ProblemKind::ALL {
        let p = problem(kind, 8, 9);
        let a = random_start(&p, 2);
        let e = cg_energy_errors(&p, &a, 25);
        for w in e.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{}: {e:?}", kind.name());
        }
    }
}

#[test]
fn n_free_cg_steps_solve_small_systems() {
    let p = problem(ProblemKind::Heat, 4, 1);
    let a = random_start(&p, 3);
    let r = p.masked_residual(&a).unwrap();
    let (da, _) = cg_steps(&r, &a, &p, p.n_free()).unwrap();
    let exact = dense_solve(&assemble_dense(&p).unwrap()).unwrap();
    assert!(a.add(&da).sub(&exact).max_abs() <= 1e-10 * exact.max_abs());
}

#[test]
fn solver_updates_respect_constraints() {
    let p = problem(ProblemKind::ElasticityA, 5, 2);
    let a = random_start(&p, 4);
    let r = p.masked_residual(&a).unwrap();
    for (da, _) in [sd_steps(&r, &a, &p, 3).unwrap(), cg_steps(&r, &a, &p, 3).unwrap()] {
        for (k, v) in da.data.iter().enumerate() {
            if !p.mask.is_free(k) {
                assert_eq!(*v, 0.0);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// A provisional label never has a larger energy error than the
    /// prediction it came from, and for CG never a larger functional.
    #[test]
    fn provisional_label_improves(seed in 0u64..1000, n in 1usize..5, k in 0usize..4) {
        let kind = ProblemKind::ALL[k];
        let p = problem(kind, 4, seed);
        let a = random_start(&p, seed + 1);
        let r = p.masked_residual(&a).unwrap();
        let sys = assemble_dense(&p).unwrap();
        let exact = dense_solve(&sys).unwrap();
        let e0 = sys.energy_norm(&a.sub(&exact)).unwrap();
        let f0 = p.functional(&a).unwrap();
        for (name, (da, _)) in [("sd", sd_steps(&r, &a, &p, n).unwrap()), ("cg", cg_steps(&r, &a, &p, n).unwrap())] {
            let b = a.add(&da);
            let e1 = sys.energy_norm(&b.sub(&exact)).unwrap();
            prop_assert!(e1 <= e0 * (1.0 + 1e-12), "{} {}: {} > {}", kind.name(), name, e1, e0);
            prop_assert!(p.functional(&b).unwrap() <= f0 + 1e-12 * f0.abs());
        }
    }
}
