//! Surrogate model properties: gradient checks per stage, hard constraints,
//! shift behavior and resolution reuse.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use vol_core::field::{GaussField, NodeField};
use vol_core::matrix_free::MaskSpec;
use vol_core::model::{Activation, ConvModel, ModelConfig, OperatorModel};
use vol_core::physics::{boundary_mask, ParamKind, ParameterField, ProblemKind};
use vol_core::training::ShiftStats;

fn normal_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn node_input(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> ParameterField {
    ParameterField::node(
        ParamKind::Conductivity,
        NodeField::from_vec(c, h, w, normal_vec(c * h * w, rng)).unwrap(),
    )
}

fn gauss_input(ny: usize, nx: usize, rng: &mut ChaCha8Rng) -> ParameterField {
    ParameterField::gauss(
        ParamKind::Source,
        GaussField::from_vec(1, 4, ny, nx, normal_vec(4 * ny * nx, rng)).unwrap(),
    )
}

fn random_stats(shape: [usize; 3], rng: &mut ChaCha8Rng) -> ShiftStats {
    let n = shape.iter().product();
    let mean = NodeField::from_vec(shape[0], shape[1], shape[2], normal_vec(n, rng)).unwrap();
    let std = NodeField::from_vec(
        shape[0],
        shape[1],
        shape[2],
        normal_vec(n, rng).iter().map(|v| 0.3 + v.abs()).collect(),
    )
    .unwrap();
    ShiftStats { mean, std }
}

fn heat_mask(n: usize) -> MaskSpec {
    boundary_mask(&ProblemKind::Heat.discretization(n).unwrap()).unwrap()
}

/// Max relative error of the vjp over all parameters at `h = 1e-6`.
fn grad_check(cfg: ModelConfig, input: &ParameterField, mask: &MaskSpec, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stats = random_stats(mask.shape(), &mut rng);
    let [c, h, w] = mask.shape();
    let cot = NodeField::from_vec(c, h, w, normal_vec(c * h * w, &mut rng)).unwrap();
    let mut m = ConvModel::new(cfg).unwrap();
    // biases start at zero; move them so every activation regime is exercised
    for p in m.params_mut().iter_mut() {
        *p += 0.1 * rng.sample::<f64, _>(StandardNormal);
    }
    let (_, tape) = m.forward(input, mask, &stats).unwrap();
    let g = m.vjp(&tape, &cot).unwrap();
    let gmax = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..m.n_params() {
        let p0 = m.params()[i];
        m.params_mut()[i] = p0 + h;
        let fp = m.forward(input, mask, &stats).unwrap().0.dot(&cot);
        m.params_mut()[i] = p0 - h;
        let fm = m.forward(input, mask, &stats).unwrap().0.dot(&cot);
        m.params_mut()[i] = p0;
        let fd = (fp - fm) / (2.0 * h);
        worst = worst.max((g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-3 * gmax));
    }
    worst
}

#[test]
fn gradient_small_node_model() {
    // in = 2, hidden = 4, one layer, 5×5 nodes
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = ModelConfig {
        in_channels: 2,
        hidden_channels: 4,
        out_channels: 1,
        n_layers: 1,
        kernel_extent: 3,
        use_alignment: false,
        ..ModelConfig::default()
    };
    let input = node_input(2, 5, 5, &mut rng);
    let e = grad_check(cfg, &input, &heat_mask(4), 2);
    assert!(e < 1e-4, "{e:e}");
}

#[test]
fn gradient_per_stage() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let base = ModelConfig {
        in_channels: 1,
        hidden_channels: 3,
        out_channels: 1,
        n_layers: 0,
        kernel_extent: 3,
        use_alignment: false,
        ..ModelConfig::default()
    };
    let node = node_input(1, 6, 6, &mut rng);
    let gauss = gauss_input(5, 5, &mut rng);
    let mask = heat_mask(5);
    let cases = [
        ("lift + projection", base.clone(), &node),
        (
            "alignment",
            ModelConfig {
                in_channels: 4,
                use_alignment: true,
                ..base.clone()
            },
            &gauss,
        ),
        (
            "gelu layer",
            ModelConfig {
                n_layers: 1,
                ..base.clone()
            },
            &node,
        ),
        (
            "tanh layer",
            ModelConfig {
                n_layers: 1,
                activation: Activation::Tanh,
                ..base.clone()
            },
            &node,
        ),
        (
            "5x5 kernel",
            ModelConfig {
                n_layers: 1,
                kernel_extent: 5,
                ..base.clone()
            },
            &node,
        ),
        (
            "dilated stack",
            ModelConfig {
                n_layers: 3,
                dilation_base: 2,
                ..base.clone()
            },
            &node,
        ),
        (
            "full composition",
            ModelConfig {
                in_channels: 4,
                use_alignment: true,
                n_layers: 2,
                dilation_base: 2,
                ..base.clone()
            },
            &gauss,
        ),
    ];
    for (name, cfg, input) in cases {
        let e = grad_check(cfg, input, &mask, 4);
        assert!(e < 1e-4, "{name}: {e:e}");
    }
}

#[test]
fn zero_network_outputs_the_shifted_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mask = heat_mask(6);
    let stats = random_stats(mask.shape(), &mut rng);
    let mut m = ConvModel::new(ModelConfig {
        in_channels: 1,
        use_alignment: false,
        hidden_channels: 4,
        n_layers: 2,
        kernel_extent: 3,
        ..ModelConfig::default()
    })
    .unwrap();
    m.params_mut().iter_mut().for_each(|p| *p = 0.0);
    let (a, _) = m.forward(&node_input(1, 7, 7, &mut rng), &mask, &stats).unwrap();
    for k in 0..a.len() {
        let expect = if mask.is_free(k) {
            stats.mean.data[k]
        } else {
            mask.shift.data[k]
        };
        assert_eq!(a.data[k], expect);
    }
}

#[test]
fn vjp_is_linear_and_zero_at_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mask = heat_mask(6);
    let stats = random_stats(mask.shape(), &mut rng);
    let m = ConvModel::new(ModelConfig {
        hidden_channels: 5,
        n_layers: 2,
        kernel_extent: 3,
        ..ModelConfig::default()
    })
    .unwrap();
    let (_, tape) = m.forward(&gauss_input(6, 6, &mut rng), &mask, &stats).unwrap();
    let [c, h, w] = mask.shape();
    let c1 = NodeField::from_vec(c, h, w, normal_vec(c * h * w, &mut rng)).unwrap();
    let c2 = NodeField::from_vec(c, h, w, normal_vec(c * h * w, &mut rng)).unwrap();
    let g1 = m.vjp(&tape, &c1).unwrap();
    let g2 = m.vjp(&tape, &c2).unwrap();
    let g12 = m.vjp(&tape, &c1.add(&c2)).unwrap();
    let scale = g12.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for k in 0..g1.len() {
        assert!((g1[k] + g2[k] - g12[k]).abs() <= 1e-12 * scale);
    }
    assert!(m.vjp(&tape, &c1.zeros_like()).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn same_parameters_run_at_several_resolutions() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let m = ConvModel::new(ModelConfig {
        hidden_channels: 4,
        n_layers: 2,
        kernel_extent: 3,
        ..ModelConfig::default()
    })
    .unwrap();
    for n in [32, 64] {
        let mask = heat_mask(n);
        let stats = ShiftStats::identity(mask.shape());
        let (a, _) = m.forward(&gauss_input(n, n, &mut rng), &mask, &stats).unwrap();
        assert_eq!(a.shape(), [1, n + 1, n + 1]);
        assert!(a.is_finite());
    }
    // element-resolution input on the wrong grid
    let stats = ShiftStats::identity([1, 33, 33]);
    assert!(m
        .forward(&gauss_input(16, 16, &mut rng), &heat_mask(32), &stats)
        .is_err());
}

#[test]
fn forward_is_bit_reproducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mask = heat_mask(10);
    let stats = random_stats(mask.shape(), &mut rng);
    let input = gauss_input(10, 10, &mut rng);
    let m = ConvModel::new(ModelConfig::default()).unwrap();
    let a = m.forward(&input, &mask, &stats).unwrap().0;
    let b = m.forward(&input, &mask, &stats).unwrap().0;
    assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Perturbing any parameter never moves a constrained output.
    #[test]
    fn constrained_outputs_ignore_parameters(seed in 0u64..10_000, idx in 0usize..usize::MAX, delta in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let disc = ProblemKind::ElasticityA.discretization(4).unwrap();
        let mut mask = vol_core::physics::left_clamp_mask(&disc).unwrap();
        // nonzero prescribed values on the clamp
        for k in 0..mask.shift.len() {
            if !mask.is_free(k) {
                mask.shift.data[k] = rng.sample(StandardNormal);
            }
        }
        let stats = random_stats(mask.shape(), &mut rng);
        let cfg = ModelConfig { hidden_channels: 3, n_layers: 1, kernel_extent: 3, out_channels: 2, ..ModelConfig::default() };
        let mut m = ConvModel::new(cfg).unwrap();
        let input = gauss_input(4, 4, &mut rng);
        let a = m.forward(&input, &mask, &stats).unwrap().0;
        let i = idx % m.n_params();
        m.params_mut()[i] += delta;
        let b = m.forward(&input, &mask, &stats).unwrap().0;
        for k in 0..a.len() {
            if !mask.is_free(k) {
                prop_assert_eq!(a.data[k], mask.shift.data[k]);
                prop_assert_eq!(b.data[k], mask.shift.data[k]);
            }
        }
    }

    #[test]
    fn initialization_is_deterministic_and_centered(seed in 0u64..1000) {
        let cfg = ModelConfig { seed, ..ModelConfig::default() };
        let a = ConvModel::new(cfg.clone()).unwrap();
        let b = ConvModel::new(cfg.clone()).unwrap();
        prop_assert_eq!(a.params(), b.params());
        prop_assert_eq!(a.n_params(), cfg.param_count());
        let w = a.params.slice("layer0.conv").unwrap();
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let sd = 1.0 / ((cfg.hidden_channels * cfg.kernel_extent * cfg.kernel_extent) as f64).sqrt();
        prop_assert!(mean.abs() < 3.0 * sd / n.sqrt());
        prop_assert!(w.iter().all(|v| v.is_finite()));
    }
}
