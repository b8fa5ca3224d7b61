//! Random fields, fiber fields, file format and dataset generation.

use std::f64::consts::FRAC_PI_2;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vol_core::harness::arrayfile::{decode, encode, read_array, write_array, ArrayData};
use vol_core::harness::config::DataConfig;
use vol_core::harness::dataset::{generate_dataset, sample_darcy_conductivity, sample_grf, Dataset};
use vol_core::harness::fiber::{bspline_surface, sample_fiber_bspline, sample_fiber_linear};
use vol_core::harness::grf::{GrfConfig, GrfRealization};
use vol_core::harness::rng::sample_rng;
use vol_core::mesh::StructuredGrid;
use vol_core::physics::{ParamKind, ProblemKind};

#[test]
fn grf_is_deterministic_per_seed() {
    let disc = ProblemKind::Heat.discretization(8).unwrap();
    let cfg = GrfConfig {
        seed: 17,
        ..GrfConfig::default()
    };
    let a = sample_grf(&disc, &cfg, ParamKind::Source).unwrap();
    let b = sample_grf(&disc, &cfg, ParamKind::Source).unwrap();
    assert_eq!(a, b);
    let c = sample_grf(&disc, &GrfConfig { seed: 18, ..cfg }, ParamKind::Source).unwrap();
    assert_ne!(a, c);
}

#[test]
fn grf_mean_within_three_sigma() {
    let grid = StructuredGrid::unit_square(16).unwrap();
    let cfg = GrfConfig {
        mean: 0.7,
        variance: 2.0,
        ..GrfConfig::default()
    };
    // pointwise mean at a fixed node over independent draws
    let draws = 100;
    let mut s = 0.0;
    for i in 0..draws {
        let f = GrfRealization::new(&cfg, &grid, &mut sample_rng(5, i)).unwrap();
        s += f.eval_tensor(&[0.4], &[0.6])[0];
    }
    let m = s / draws as f64;
    let sigma = (cfg.variance / draws as f64).sqrt();
    assert!((m - cfg.mean).abs() < 3.0 * sigma, "mean {m}");
}

#[test]
fn grf_pointwise_variance_and_lag_correlation() {
    let grid = StructuredGrid::unit_square(16).unwrap();
    let cfg = GrfConfig {
        length_scale: 0.2,
        variance: 1.5,
        mean: 0.0,
        seed: 0,
    };
    let ell = 0.2;
    let xs: Vec<f64> = (0..8).map(|i| 0.1 + 0.07 * i as f64).collect();
    let ys = [0.2, 0.5, 0.75];
    let (mut c0, mut c1) = (0.0, 0.0);
    let mut count = 0.0;
    for i in 0..200 {
        let f = GrfRealization::new(&cfg, &grid, &mut sample_rng(11, i)).unwrap();
        let shifted: Vec<f64> = xs.iter().map(|x| x + ell).collect();
        let a = f.eval_tensor(&xs, &ys);
        let b = f.eval_tensor(&shifted, &ys);
        for (u, v) in a.iter().zip(&b) {
            c0 += u * u;
            c1 += u * v;
            count += 1.0;
        }
    }
    let var = c0 / count;
    let rho = c1 / c0;
    assert!((var - cfg.variance).abs() < 0.25 * cfg.variance, "variance {var}");
    assert!((rho - (-0.5f64).exp()).abs() < 0.1, "lag correlation {rho}");
}

#[test]
fn darcy_conductivity_is_two_phase() {
    let disc = ProblemKind::Darcy.discretization(16).unwrap();
    let grf = GrfConfig::default();
    let mut frac = 0.0;
    for i in 0..200 {
        let (g, n) = sample_darcy_conductivity(&disc, &grf, 12.0, 3.0, &mut sample_rng(3, i)).unwrap();
        assert!(g.values().iter().chain(&n.data).all(|&v| v == 12.0 || v == 3.0));
        frac += g.values().iter().filter(|&&v| v == 12.0).count() as f64 / g.values().len() as f64;
    }
    let frac = frac / 200.0;
    assert!((frac - 0.5).abs() < 0.05, "high-phase fraction {frac}");

    let positive = GrfConfig {
        variance: 0.0,
        mean: 1.0,
        ..GrfConfig::default()
    };
    let (g, _) = sample_darcy_conductivity(&disc, &positive, 12.0, 3.0, &mut sample_rng(0, 0)).unwrap();
    assert!(g.values().iter().all(|&v| v == 12.0));
    assert!(sample_darcy_conductivity(&disc, &grf, 0.0, 3.0, &mut sample_rng(0, 0)).is_err());
    assert!(sample_darcy_conductivity(&disc, &grf, 12.0, -1.0, &mut sample_rng(0, 0)).is_err());
}

#[test]
fn linear_fiber_field() {
    let disc = ProblemKind::ElasticityA.discretization(10).unwrap();
    let f = sample_fiber_linear(0.3, -0.9, &disc).unwrap();
    let g = f.as_gauss().unwrap();
    let coords = disc.gauss_coordinates();
    let vals = g.data.clone();
    let w = disc.grid.lx();
    for (p, v) in coords.iter().zip(&vals) {
        let expect = 0.3 + (-0.9 - 0.3) * (p[0] - w / 2.0).abs() / (w / 2.0);
        assert!((v - expect).abs() < 1e-12);
    }
    // x only: Gauss points sharing an x coordinate share a value
    for (p, v) in coords.iter().zip(&vals) {
        for (q, u) in coords.iter().zip(&vals) {
            if (p[0] - q[0]).abs() < 1e-12 {
                assert!((v - u).abs() < 1e-12);
            }
        }
    }
}

/// De Boor's algorithm for a clamped cubic curve.
fn de_boor(ctrl: &[f64], u: f64) -> f64 {
    let n = ctrl.len();
    let spans = n - 3;
    let mut knots = vec![0.0; 4];
    knots.extend((1..spans).map(|i| i as f64 / spans as f64));
    knots.extend([1.0; 4]);
    let mut k = 3;
    while k < n - 1 && u >= knots[k + 1] {
        k += 1;
    }
    let mut d: Vec<f64> = (0..4).map(|j| ctrl[j + k - 3]).collect();
    for r in 1..4 {
        for j in (r..4).rev() {
            let i = j + k - 3;
            let den = knots[i + 4 - r] - knots[i];
            let alpha = if den > 0.0 { (u - knots[i]) / den } else { 0.0 };
            d[j] = (1.0 - alpha) * d[j - 1] + alpha * d[j];
        }
    }
    d[3]
}

fn de_boor_surface(control: &[Vec<f64>], u: f64, v: f64) -> f64 {
    let col: Vec<f64> = control.iter().map(|row| de_boor(row, u)).collect();
    de_boor(&col, v)
}

fn random_control(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..n).map(|_| rng.random_range(-FRAC_PI_2..=FRAC_PI_2)).collect())
        .collect()
}

#[test]
fn bspline_matches_de_boor() {
    for n in [4, 5, 7] {
        let control = random_control(n, n as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let (u, v) = (rng.random::<f64>(), rng.random::<f64>());
            let a = bspline_surface(&control, u, v);
            let b = de_boor_surface(&control, u, v);
            assert!((a - b).abs() < 1e-12, "n={n} at ({u}, {v}): {a} vs {b}");
        }
        let last = n - 1;
        for (u, v, c) in [
            (0.0, 0.0, control[0][0]),
            (1.0, 0.0, control[0][last]),
            (0.0, 1.0, control[last][0]),
            (1.0, 1.0, control[last][last]),
        ] {
            assert!((bspline_surface(&control, u, v) - c).abs() < 1e-12);
        }
    }
}

#[test]
fn bspline_field_properties() {
    let disc = ProblemKind::ElasticityB.discretization(12).unwrap();
    let f = sample_fiber_bspline(&vec![vec![0.25; 5]; 5], &disc).unwrap();
    assert!(f.values().iter().all(|&v| (v - 0.25).abs() < 1e-14));
    let control = random_control(6, 9);
    let lo = control.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
    let hi = control.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
    let f = sample_fiber_bspline(&control, &disc).unwrap();
    assert!(f.values().iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
    let mut bad = control.clone();
    bad[2][3] = 2.0;
    assert!(sample_fiber_bspline(&bad, &disc).is_err());
}

#[test]
fn array_file_round_trip_1000_random_arrays() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let dir = tempfile::tempdir().unwrap();
    for i in 0..1000 {
        let ndim = rng.random_range(0..5);
        let shape: Vec<usize> = (0..ndim).map(|_| rng.random_range(0..6)).collect();
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| f64::from_bits(rng.random::<u64>())).collect();
        let a = ArrayData::new(shape, data).unwrap();
        let back = if i % 10 == 0 {
            let path = dir.path().join(format!("a{i}.volf"));
            write_array(&path, &a).unwrap();
            read_array(&path).unwrap()
        } else {
            decode(&encode(&a)).unwrap()
        };
        assert_eq!(back.shape, a.shape);
        assert!(back.data.iter().zip(&a.data).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn truncated_files_are_rejected(len in 1usize..40, cut in 1usize..8) {
        let a = ArrayData::new(vec![len], vec![1.0; len]).unwrap();
        let bytes = encode(&a);
        prop_assert!(decode(&bytes[..bytes.len() - cut]).is_err());
    }
}

fn small_data(kind: ProblemKind) -> DataConfig {
    DataConfig {
        problem: kind,
        resolution: 8,
        n_train: 6,
        n_test: 4,
        n_shift: 5,
        seed: 99,
        ..DataConfig::default()
    }
}

#[test]
fn generated_labels_satisfy_the_solver_tolerance() {
    for kind in ProblemKind::ALL {
        let cfg = small_data(kind);
        let ds = generate_dataset(&cfg, false).unwrap();
        assert!(ds.train.labels.is_none());
        assert_eq!(ds.shift.len(), 5);
        assert_eq!(ds.shift.labels().unwrap().len(), 5);
        for split in [&ds.shift, &ds.test] {
            for (s, l) in split.samples.iter().zip(split.labels().unwrap()) {
                let r = s.problem.masked_residual(l).unwrap().norm();
                assert!(
                    r <= cfg.label_tol * s.problem.masked_load_norm(),
                    "{}: {r:e}",
                    kind.name()
                );
            }
        }
    }
}

#[test]
fn regeneration_is_bit_identical() {
    let cfg = small_data(ProblemKind::Darcy);
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    generate_dataset(&cfg, false).unwrap().write(d1.path()).unwrap();
    generate_dataset(&cfg, false).unwrap().write(d2.path()).unwrap();
    for f in [
        "metadata.txt",
        "train/inputs.volf",
        "train/physics.volf",
        "shift/labels.volf",
        "test/labels.volf",
        "test/inputs.volf",
    ] {
        let a = std::fs::read(d1.path().join(f)).unwrap();
        let b = std::fs::read(d2.path().join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    assert!(!d1.path().join("train/labels.volf").exists());
    let meta = std::fs::read_to_string(d1.path().join("metadata.txt")).unwrap();
    assert!(meta.contains("provenance = artifact-default"));
    assert!(meta.contains("label_tol = 1e-10"));
    assert!(meta.contains("seed.train = "));
}

#[test]
fn written_dataset_reads_back() {
    for kind in ProblemKind::ALL {
        let cfg = small_data(kind);
        let ds = generate_dataset(&cfg, true).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.write(dir.path()).unwrap();
        let back = Dataset::read(dir.path()).unwrap();
        assert_eq!(back.cfg, ds.cfg);
        assert_eq!(back.train.physics, ds.train.physics);
        assert_eq!(back.test.labels, ds.test.labels);
        assert_eq!(back.train.labels, ds.train.labels);
        for (a, b) in back.test.samples.iter().zip(&ds.test.samples) {
            assert_eq!(a.input, b.input);
            assert_eq!(a.problem.load_vector(), b.problem.load_vector());
        }
    }
}

#[test]
fn train_prefixes_are_nested() {
    let mut cfg = small_data(ProblemKind::Heat);
    let big = generate_dataset(&cfg, false).unwrap();
    cfg.n_train = 3;
    let small = generate_dataset(&cfg, false).unwrap();
    assert_eq!(small.train.physics[..], big.train.physics[..3]);
    assert_eq!(small.test.labels, big.test.labels);
}
