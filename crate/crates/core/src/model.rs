//! Field-to-field surrogate with hand-written reverse mode.
//!
//! Pipeline: alignment (Gauss-sampled inputs only) → 1×1 lifting → hidden
//! layers of `act(conv_k(z) + skip(z) + b)` with same padding → 1×1
//! projection → distribution shift `y ⊙ std + mean` → hard boundary
//! conditions `u ⊙ mask + shift`.
//!
//! Parameter count for a config with `C_in` inputs, `H` hidden channels,
//! `C_out` outputs, `L` layers and extent `k`:
//!
//! ```text
//! align  = 4·C_in·H                 (only with alignment)
//! lift   = C₀·H + H                 C₀ = H with alignment, C_in without
//! layers = L·(H·H·k² + H·H + H)
//! proj   = H·C_out + C_out
//! ```
//!
//! so `(C_in=4, H=16, C_out=1, L=2, k=3)` with alignment has
//! `256 + 272 + 5152 + 17 = 5697` parameters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, shape_err, Result};
use crate::field::NodeField;
use crate::matrix_free::{apply_shift_bc, MaskSpec};
use crate::physics::{ParamSamples, ParameterField};
use crate::training::ShiftStats;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    /// Tanh approximation.
    Gelu,
    Relu,
    Tanh,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // √(2/π)
const GELU_A: f64 = 0.044_715;

impl Activation {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gelu" => Ok(Activation::Gelu),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => invalid(format!("unknown activation `{other}`")),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Gelu => "gelu",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()),
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub hidden_channels: usize,
    pub out_channels: usize,
    pub n_layers: usize,
    /// Odd spatial filter extent.
    pub kernel_extent: usize,
    /// Map an element-resolution (Gauss-sampled) input to the node grid.
    pub use_alignment: bool,
    pub activation: Activation,
    /// Hidden layer `l` uses dilation `dilation_base^l`; 1 disables dilation.
    pub dilation_base: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 4,
            hidden_channels: 32,
            out_channels: 1,
            n_layers: 4,
            kernel_extent: 5,
            use_alignment: true,
            activation: Activation::Gelu,
            dilation_base: 1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.hidden_channels == 0 || self.out_channels == 0 {
            return invalid("channel counts must be at least 1");
        }
        if self.kernel_extent == 0 || self.kernel_extent % 2 == 0 {
            return invalid("kernel extent must be odd");
        }
        if self.dilation_base == 0 {
            return invalid("dilation base must be at least 1");
        }
        Ok(())
    }

    pub fn dilation(&self, layer: usize) -> usize {
        self.dilation_base.pow(layer as u32)
    }

    /// Channels entering the lifting layer.
    fn lift_in(&self) -> usize {
        if self.use_alignment {
            self.hidden_channels
        } else {
            self.in_channels
        }
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let (ci, h, co, k) = (
            self.in_channels,
            self.hidden_channels,
            self.out_channels,
            self.kernel_extent,
        );
        let align = if self.use_alignment { 4 * ci * h } else { 0 };
        align + self.lift_in() * h + h + self.n_layers * (h * h * k * k + h * h + h) + h * co + co
    }
}

/// A named view into the flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSlice {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ParamSlice {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub data: Vec<f64>,
    pub slices: Vec<ParamSlice>,
}

impl ModelParams {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn slice(&self, name: &str) -> Option<&[f64]> {
        self.slices
            .iter()
            .find(|s| s.name == name)
            .map(|s| &self.data[s.range()])
    }
}

/// Indices of the parameter groups inside the flat vector.
#[derive(Clone, Debug)]
struct Layout {
    align: Option<usize>,
    lift_w: usize,
    lift_b: usize,
    layers: Vec<(usize, usize, usize)>,
    proj_w: usize,
    proj_b: usize,
    slices: Vec<ParamSlice>,
}

fn layout(cfg: &ModelConfig) -> Layout {
    let (ci, h, co, k) = (
        cfg.in_channels,
        cfg.hidden_channels,
        cfg.out_channels,
        cfg.kernel_extent,
    );
    let mut slices = Vec::new();
    let mut offset = 0;
    let mut push = |name: String, shape: Vec<usize>| {
        let s = ParamSlice { name, offset, shape };
        offset += s.len();
        slices.push(s);
        offset - slices.last().unwrap().len()
    };
    let align = cfg
        .use_alignment
        .then(|| push("align.weight".into(), vec![h, ci, 2, 2]));
    let lift_w = push("lift.weight".into(), vec![h, cfg.lift_in()]);
    let lift_b = push("lift.bias".into(), vec![h]);
    let layers = (0..cfg.n_layers)
        .map(|l| {
            (
                push(format!("layer{l}.conv"), vec![h, h, k, k]),
                push(format!("layer{l}.skip"), vec![h, h]),
                push(format!("layer{l}.bias"), vec![h]),
            )
        })
        .collect();
    let proj_w = push("proj.weight".into(), vec![co, h]);
    let proj_b = push("proj.bias".into(), vec![co]);
    Layout {
        align,
        lift_w,
        lift_b,
        layers,
        proj_w,
        proj_b,
        slices,
    }
}

/// Deterministic initialization: weights `N(0, 1)/√fan_in`, biases zero.
pub fn model_init(cfg: &ModelConfig) -> Result<ModelParams> {
    cfg.validate()?;
    let lay = layout(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut data = Vec::with_capacity(cfg.param_count());
    for s in &lay.slices {
        let n = s.len();
        if s.name.ends_with(".bias") {
            data.extend(std::iter::repeat_n(0.0, n));
            continue;
        }
        // shape [out, in, ...]: fan_in is everything after the first axis
        let fan_in: usize = s.shape[1..].iter().product();
        let scale = 1.0 / (fan_in as f64).sqrt();
        for _ in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(scale * z);
        }
    }
    debug_assert_eq!(data.len(), cfg.param_count());
    Ok(ModelParams {
        data,
        slices: lay.slices,
    })
}

/// `dst[j][i] += w · src[j + dy][i + dx]` wherever the source index exists.
#[allow(clippy::too_many_arguments)]
#[inline]
fn shift_axpy(dst: &mut [f64], dh: usize, dw: usize, src: &[f64], sh: usize, sw: usize, dy: isize, dx: isize, w: f64) {
    let j0 = (-dy).max(0) as usize;
    let j1 = (sh as isize - dy).clamp(0, dh as isize) as usize;
    let i0 = (-dx).max(0) as usize;
    let i1 = (sw as isize - dx).clamp(0, dw as isize) as usize;
    if j0 >= j1 || i0 >= i1 {
        return;
    }
    for j in j0..j1 {
        let sj = (j as isize + dy) as usize;
        let srow = &src[sj * sw + (i0 as isize + dx) as usize..sj * sw + (i1 as isize + dx) as usize];
        let drow = &mut dst[j * dw + i0..j * dw + i1];
        for (d, s) in drow.iter_mut().zip(srow) {
            *d += w * s;
        }
    }
}

/// `Σ a[j][i] · src[j + dy][i + dx]` over the valid range.
#[inline]
fn shift_dot(a: &[f64], ah: usize, aw: usize, src: &[f64], sh: usize, sw: usize, dy: isize, dx: isize) -> f64 {
    let j0 = (-dy).max(0) as usize;
    let j1 = (sh as isize - dy).clamp(0, ah as isize) as usize;
    let i0 = (-dx).max(0) as usize;
    let i1 = (sw as isize - dx).clamp(0, aw as isize) as usize;
    if j0 >= j1 || i0 >= i1 {
        return 0.0;
    }
    let mut total = 0.0;
    for j in j0..j1 {
        let sj = (j as isize + dy) as usize;
        let srow = &src[sj * sw + (i0 as isize + dx) as usize..sj * sw + (i1 as isize + dx) as usize];
        let arow = &a[j * aw + i0..j * aw + i1];
        total += arow.iter().zip(srow).map(|(x, y)| x * y).sum::<f64>();
    }
    total
}

/// Channel-major planes of one resolution.
#[derive(Clone, Debug, PartialEq)]
struct Planes {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Planes {
    fn zeros(c: usize, h: usize, w: usize) -> Self {
        Planes {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    fn n(&self) -> usize {
        self.h * self.w
    }

    fn plane(&self, c: usize) -> &[f64] {
        let n = self.n();
        &self.data[c * n..(c + 1) * n]
    }

    fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.n();
        &mut self.data[c * n..(c + 1) * n]
    }
}

/// `C (m×n) = A (m×k) · B (k×n) + beta·C` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_st: (usize, usize), b: &[f64], b_st: (usize, usize), c: &mut [f64]) {
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    let reach = |st: (usize, usize), r: usize, q: usize| (r - 1) * st.0 + (q - 1) * st.1;
    assert!(reach(a_st, m, k) < a.len() && reach(b_st, k, n) < b.len() && m * n <= c.len());
    // SAFETY: the asserts keep every strided access of A, B and C in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_st.0 as isize,
            a_st.1 as isize,
            b.as_ptr(),
            b_st.0 as isize,
            b_st.1 as isize,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `out[o] = Σ_c W[o][c] · x[c] (+ b[o])`.
fn pointwise(x: &Planes, w: &[f64], b: Option<&[f64]>, co: usize, out: &mut Planes) {
    let (ci, n) = (x.c, x.n());
    if let Some(b) = b {
        for o in 0..co {
            out.plane_mut(o).iter_mut().for_each(|v| *v += b[o]);
        }
    }
    gemm(co, ci, n, w, (ci, 1), &x.data, (n, 1), &mut out.data);
}

/// Reverse of [`pointwise`]: accumulates `gw`, `gb` and `gx`.
fn pointwise_vjp(x: &Planes, w: &[f64], gy: &Planes, gw: &mut [f64], gb: Option<&mut [f64]>, gx: Option<&mut Planes>) {
    let (ci, co, n) = (x.c, gy.c, x.n());
    if let Some(gb) = gb {
        for o in 0..co {
            gb[o] += gy.plane(o).iter().sum::<f64>();
        }
    }
    // gW += gY · xᵀ
    gemm(co, n, ci, &gy.data, (n, 1), &x.data, (1, n), gw);
    if let Some(gx) = gx {
        // gx += Wᵀ · gY
        gemm(ci, co, n, w, (1, ci), &gy.data, (n, 1), &mut gx.data);
    }
}

fn kernel_offsets(k: usize, d: usize) -> impl Iterator<Item = (isize, isize)> {
    let r = (k / 2) as isize;
    let d = d as isize;
    (0..k).flat_map(move |ky| (0..k).map(move |kx| ((ky as isize - r) * d, (kx as isize - r) * d)))
}

/// Patch matrix `[c·k² + tap][pixel] = x[c][j + dy][i + dx]` (zero outside).
fn im2col(x: &Planes, k: usize, d: usize) -> Vec<f64> {
    let (h, w, n) = (x.h, x.w, x.n());
    let mut col = vec![0.0; x.c * k * k * n];
    for c in 0..x.c {
        for (t, (dy, dx)) in kernel_offsets(k, d).enumerate() {
            let row = &mut col[(c * k * k + t) * n..(c * k * k + t + 1) * n];
            shift_axpy(row, h, w, x.plane(c), h, w, dy, dx, 1.0);
        }
    }
    col
}

/// Adjoint of [`im2col`], accumulated into `gx`.
fn col2im(col: &[f64], k: usize, d: usize, gx: &mut Planes) {
    let (h, w, n) = (gx.h, gx.w, gx.n());
    for c in 0..gx.c {
        for (t, (dy, dx)) in kernel_offsets(k, d).enumerate() {
            let row = &col[(c * k * k + t) * n..(c * k * k + t + 1) * n];
            shift_axpy(gx.plane_mut(c), h, w, row, h, w, -dy, -dx, 1.0);
        }
    }
}

/// Same-padded `k×k` correlation with dilation `d`, accumulated into `out`.
fn conv_same(x: &Planes, w: &[f64], k: usize, d: usize, out: &mut Planes) {
    let (ck, n) = (x.c * k * k, x.n());
    let col = im2col(x, k, d);
    gemm(out.c, ck, n, w, (ck, 1), &col, (n, 1), &mut out.data);
}

fn conv_same_vjp(x: &Planes, w: &[f64], k: usize, d: usize, gy: &Planes, gw: &mut [f64], gx: &mut Planes) {
    let (co, ck, n) = (gy.c, x.c * k * k, x.n());
    let col = im2col(x, k, d);
    gemm(co, n, ck, &gy.data, (n, 1), &col, (1, n), gw);
    let mut gcol = vec![0.0; ck * n];
    gemm(ck, co, n, w, (1, ck), &gy.data, (n, 1), &mut gcol);
    col2im(&gcol, k, d, gx);
}

/// Stride-1 transposed convolution of extent 2: `(h, w) → (h + 1, w + 1)`,
/// `out[o][J][I] = Σ W[o][c][a][b] · x[c][J − a][I − b]`.
fn align_forward(x: &Planes, w: &[f64], co: usize) -> Planes {
    let ci = x.c;
    let mut out = Planes::zeros(co, x.h + 1, x.w + 1);
    let (oh, ow) = (out.h, out.w);
    for o in 0..co {
        for c in 0..ci {
            for a in 0..2 {
                for b in 0..2 {
                    let wv = w[((o * ci + c) * 2 + a) * 2 + b];
                    shift_axpy(
                        out.plane_mut(o),
                        oh,
                        ow,
                        x.plane(c),
                        x.h,
                        x.w,
                        -(a as isize),
                        -(b as isize),
                        wv,
                    );
                }
            }
        }
    }
    out
}

fn align_vjp(x: &Planes, gy: &Planes, gw: &mut [f64]) {
    let (ci, co) = (x.c, gy.c);
    for o in 0..co {
        for c in 0..ci {
            for a in 0..2 {
                for b in 0..2 {
                    gw[((o * ci + c) * 2 + a) * 2 + b] += shift_dot(
                        gy.plane(o),
                        gy.h,
                        gy.w,
                        x.plane(c),
                        x.h,
                        x.w,
                        -(a as isize),
                        -(b as isize),
                    );
                }
            }
        }
    }
}

/// Activations retained by a forward pass.
#[derive(Clone, Debug)]
pub struct ConvTape {
    input: Planes,
    /// Output of alignment, when used.
    aligned: Option<Planes>,
    /// Hidden state entering layer `l` (index `n_layers` feeds the projection).
    z: Vec<Planes>,
    /// Pre-activation of layer `l`.
    pre: Vec<Planes>,
    std: NodeField,
    mask: NodeField,
}

/// A differentiable field-to-field map with hard boundary conditions.
pub trait OperatorModel: Send + Sync {
    type Tape: Send;

    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    fn n_params(&self) -> usize {
        self.params().len()
    }

    /// Prediction for one input, satisfying the essential boundary
    /// conditions of `mask` exactly.
    fn forward(&self, input: &ParameterField, mask: &MaskSpec, stats: &ShiftStats) -> Result<(NodeField, Self::Tape)>;

    /// Gradient of `⟨output, cotangent⟩` with respect to the parameters.
    fn vjp(&self, tape: &Self::Tape, cotangent: &NodeField) -> Result<Vec<f64>>;
}

/// The convolutional surrogate.
#[derive(Clone, Debug)]
pub struct ConvModel {
    pub cfg: ModelConfig,
    pub params: ModelParams,
    lay: Layout,
}

impl ConvModel {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        let params = model_init(&cfg)?;
        let lay = layout(&cfg);
        Ok(ConvModel { cfg, params, lay })
    }

    /// Rebuild from stored parameters.
    pub fn from_params(cfg: ModelConfig, data: Vec<f64>) -> Result<Self> {
        cfg.validate()?;
        if data.len() != cfg.param_count() {
            return shape_err(format!(
                "config needs {} parameters, got {}",
                cfg.param_count(),
                data.len()
            ));
        }
        let lay = layout(&cfg);
        let params = ModelParams {
            data,
            slices: lay.slices.clone(),
        };
        Ok(ConvModel { cfg, params, lay })
    }

    fn group(&self, offset: usize, len: usize) -> &[f64] {
        &self.params.data[offset..offset + len]
    }

    fn input_planes(&self, input: &ParameterField) -> Result<Planes> {
        let (c, h, w, data) = match &input.samples {
            ParamSamples::Gauss(g) => (g.tensor_channels(), g.ny, g.nx, &g.data),
            ParamSamples::Node(n) => (n.channels, n.height, n.width, &n.data),
        };
        let gauss = matches!(input.samples, ParamSamples::Gauss(_));
        if gauss != self.cfg.use_alignment {
            return invalid(if gauss {
                "Gauss-sampled input needs a model with alignment"
            } else {
                "node-sampled input given to a model with alignment"
            });
        }
        if c != self.cfg.in_channels {
            return shape_err(format!(
                "model expects {} input channels, got {c}",
                self.cfg.in_channels
            ));
        }
        Ok(Planes {
            c,
            h,
            w,
            data: data.clone(),
        })
    }
}

impl OperatorModel for ConvModel {
    type Tape = ConvTape;

    fn params(&self) -> &[f64] {
        &self.params.data
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params.data
    }

    fn forward(&self, input: &ParameterField, mask: &MaskSpec, stats: &ShiftStats) -> Result<(NodeField, ConvTape)> {
        let cfg = &self.cfg;
        let (h, k) = (cfg.hidden_channels, cfg.kernel_extent);
        let x = self.input_planes(input)?;
        let aligned = match self.lay.align {
            Some(off) => Some(align_forward(&x, self.group(off, h * cfg.in_channels * 4), h)),
            None => None,
        };
        let base = aligned.as_ref().unwrap_or(&x);
        let node_shape = [cfg.out_channels, base.h, base.w];
        if mask.shape() != node_shape {
            return shape_err(format!(
                "model output {node_shape:?} does not match mask {:?}",
                mask.shape()
            ));
        }
        stats.check_shape(node_shape)?;

        let mut z0 = Planes::zeros(h, base.h, base.w);
        pointwise(
            base,
            self.group(self.lay.lift_w, h * cfg.lift_in()),
            Some(self.group(self.lay.lift_b, h)),
            h,
            &mut z0,
        );
        let mut z = vec![z0];
        let mut pre = Vec::with_capacity(cfg.n_layers);
        for (l, &(cw, sw, bw)) in self.lay.layers.iter().enumerate() {
            let zin = &z[l];
            let mut p = Planes::zeros(h, zin.h, zin.w);
            conv_same(zin, self.group(cw, h * h * k * k), k, cfg.dilation(l), &mut p);
            pointwise(zin, self.group(sw, h * h), Some(self.group(bw, h)), h, &mut p);
            let act = Planes {
                data: p.data.iter().map(|&v| cfg.activation.apply(v)).collect(),
                ..p.clone()
            };
            pre.push(p);
            z.push(act);
        }
        let last = z.last().unwrap();
        let mut y = Planes::zeros(cfg.out_channels, last.h, last.w);
        pointwise(
            last,
            self.group(self.lay.proj_w, cfg.out_channels * h),
            Some(self.group(self.lay.proj_b, cfg.out_channels)),
            cfg.out_channels,
            &mut y,
        );
        let shifted: Vec<f64> = y
            .data
            .iter()
            .zip(&stats.std.data)
            .zip(&stats.mean.data)
            .map(|((v, s), m)| v * s + m)
            .collect();
        let u = NodeField::from_vec(cfg.out_channels, y.h, y.w, shifted)?;
        let a = apply_shift_bc(&u, mask)?;
        let tape = ConvTape {
            input: x,
            aligned,
            z,
            pre,
            std: stats.std.clone(),
            mask: mask.mask.clone(),
        };
        Ok((a, tape))
    }

    fn vjp(&self, tape: &ConvTape, cotangent: &NodeField) -> Result<Vec<f64>> {
        let cfg = &self.cfg;
        let (h, k) = (cfg.hidden_channels, cfg.kernel_extent);
        cotangent.check_same_shape(&tape.mask, "cotangent vs tape")?;
        let mut grad = vec![0.0; self.params.len()];

        // boundary conditions and distribution shift
        let gy_data: Vec<f64> = cotangent
            .data
            .iter()
            .zip(&tape.mask.data)
            .zip(&tape.std.data)
            .map(|((g, m), s)| g * m * s)
            .collect();
        let gy = Planes {
            c: cotangent.channels,
            h: cotangent.height,
            w: cotangent.width,
            data: gy_data,
        };

        let last = tape.z.last().unwrap();
        let mut gz = Planes::zeros(h, last.h, last.w);
        {
            // projection weight and bias are adjacent
            let (gw, gb) = grad[self.lay.proj_w..self.lay.proj_b + cfg.out_channels].split_at_mut(cfg.out_channels * h);
            pointwise_vjp(
                last,
                self.group(self.lay.proj_w, cfg.out_channels * h),
                &gy,
                gw,
                Some(gb),
                Some(&mut gz),
            );
        }

        for l in (0..cfg.n_layers).rev() {
            let (cw, sw, bw) = self.lay.layers[l];
            let p = &tape.pre[l];
            let gp = Planes {
                data: gz
                    .data
                    .iter()
                    .zip(&p.data)
                    .map(|(g, &v)| g * cfg.activation.derivative(v))
                    .collect(),
                ..gz.clone()
            };
            let zin = &tape.z[l];
            let mut gzin = Planes::zeros(h, zin.h, zin.w);
            for o in 0..h {
                grad[bw + o] += gp.plane(o).iter().sum::<f64>();
            }
            pointwise_vjp(
                zin,
                self.group(sw, h * h),
                &gp,
                &mut grad[sw..sw + h * h],
                None,
                Some(&mut gzin),
            );
            conv_same_vjp(
                zin,
                self.group(cw, h * h * k * k),
                k,
                cfg.dilation(l),
                &gp,
                &mut grad[cw..cw + h * h * k * k],
                &mut gzin,
            );
            gz = gzin;
        }

        let base = tape.aligned.as_ref().unwrap_or(&tape.input);
        let lift_len = h * cfg.lift_in();
        for o in 0..h {
            grad[self.lay.lift_b + o] += gz.plane(o).iter().sum::<f64>();
        }
        let mut gbase = tape.aligned.as_ref().map(|a| Planes::zeros(a.c, a.h, a.w));
        pointwise_vjp(
            base,
            self.group(self.lay.lift_w, lift_len),
            &gz,
            &mut grad[self.lay.lift_w..self.lay.lift_w + lift_len],
            None,
            gbase.as_mut(),
        );
        if let (Some(off), Some(gb)) = (self.lay.align, gbase) {
            let n = h * cfg.in_channels * 4;
            align_vjp(&tape.input, &gb, &mut grad[off..off + n]);
        }
        Ok(grad)
    }
}

/// The degenerate model whose parameters are the nodal values themselves.
/// The input and the shift statistics are ignored; only boundary conditions
/// are applied. Used to audit the training loop.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldModel {
    pub shape: [usize; 3],
    pub values: Vec<f64>,
}

impl FieldModel {
    pub fn zeros(shape: [usize; 3]) -> Self {
        FieldModel {
            shape,
            values: vec![0.0; shape.iter().product()],
        }
    }
}

impl OperatorModel for FieldModel {
    type Tape = NodeField;

    fn params(&self) -> &[f64] {
        &self.values
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn forward(&self, _input: &ParameterField, mask: &MaskSpec, _stats: &ShiftStats) -> Result<(NodeField, NodeField)> {
        let [c, h, w] = self.shape;
        let u = NodeField::from_vec(c, h, w, self.values.clone())?;
        Ok((apply_shift_bc(&u, mask)?, mask.mask.clone()))
    }

    fn vjp(&self, mask: &NodeField, cotangent: &NodeField) -> Result<Vec<f64>> {
        cotangent.check_same_shape(mask, "cotangent vs tape")?;
        Ok(cotangent.data.iter().zip(&mask.data).map(|(g, m)| g * m).collect())
    }
}
