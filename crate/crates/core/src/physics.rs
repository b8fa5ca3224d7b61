//! Constitutive data, loads and the benchmark problem families.

use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use crate::error::{invalid, shape_err, Result, VolError};
use crate::field::{GaussField, NodeField};
use crate::matrix_free::{self, MaskSpec};
use crate::mesh::{Discretization, PhysicsKind};

/// Storage flavor of a [`MaterialField`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaterialKind {
    /// Scalar conductivity `κ`.
    IsotropicScalar,
    /// 2×2 conductivity tensor, row-major.
    Anisotropic2,
    /// 3×3 plane-stress stiffness `C_xy`, row-major, acting on
    /// `(εxx, εyy, γxy)`.
    PlaneStress3,
}

impl MaterialKind {
    pub fn components(self) -> usize {
        match self {
            MaterialKind::IsotropicScalar => 1,
            MaterialKind::Anisotropic2 => 4,
            MaterialKind::PlaneStress3 => 9,
        }
    }

    fn dim(self) -> usize {
        match self {
            MaterialKind::IsotropicScalar => 1,
            MaterialKind::Anisotropic2 => 2,
            MaterialKind::PlaneStress3 => 3,
        }
    }
}

/// Constitutive matrices at Gauss points, component-major:
/// `data[(comp · n_gauss + g) · n_elem + e]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaterialField {
    pub kind: MaterialKind,
    pub n_gauss: usize,
    pub ny: usize,
    pub nx: usize,
    pub data: Vec<f64>,
}

impl MaterialField {
    /// Build and check symmetry and positive definiteness at every point.
    pub fn new(kind: MaterialKind, n_gauss: usize, ny: usize, nx: usize, data: Vec<f64>) -> Result<Self> {
        let m = Self::new_unchecked(kind, n_gauss, ny, nx, data)?;
        m.validate()?;
        Ok(m)
    }

    /// Build with only a shape and finiteness check. Nonsymmetric tensors are
    /// admitted here; the Galerkin path handles them, the Ritz path refuses.
    pub fn new_unchecked(kind: MaterialKind, n_gauss: usize, ny: usize, nx: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != kind.components() * n_gauss * ny * nx {
            return shape_err(format!(
                "material of kind {kind:?} on {n_gauss}x{ny}x{nx} needs {} values, got {}",
                kind.components() * n_gauss * ny * nx,
                data.len()
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(VolError::InvalidMaterial("non-finite entry".into()));
        }
        Ok(MaterialField {
            kind,
            n_gauss,
            ny,
            nx,
            data,
        })
    }

    pub fn constant_isotropic(disc: &Discretization, kappa: f64) -> Self {
        let n = disc.n_gauss() * disc.grid.n_elements();
        MaterialField {
            kind: MaterialKind::IsotropicScalar,
            n_gauss: disc.n_gauss(),
            ny: disc.grid.ny,
            nx: disc.grid.nx,
            data: vec![kappa; n],
        }
    }

    pub fn constant_anisotropic(disc: &Discretization, k: [[f64; 2]; 2]) -> Self {
        let n = disc.n_gauss() * disc.grid.n_elements();
        let mut data = Vec::with_capacity(4 * n);
        for v in [k[0][0], k[0][1], k[1][0], k[1][1]] {
            data.extend(std::iter::repeat_n(v, n));
        }
        MaterialField {
            kind: MaterialKind::Anisotropic2,
            n_gauss: disc.n_gauss(),
            ny: disc.grid.ny,
            nx: disc.grid.nx,
            data,
        }
    }

    pub fn constant_plane_stress(disc: &Discretization, c: &[[f64; 3]; 3]) -> Self {
        let n = disc.n_gauss() * disc.grid.n_elements();
        let mut data = Vec::with_capacity(9 * n);
        for row in c {
            for &v in row {
                data.extend(std::iter::repeat_n(v, n));
            }
        }
        MaterialField {
            kind: MaterialKind::PlaneStress3,
            n_gauss: disc.n_gauss(),
            ny: disc.grid.ny,
            nx: disc.grid.nx,
            data,
        }
    }

    /// Scalar conductivity from a one-channel Gauss-point field.
    pub fn isotropic_from_gauss(kappa: &GaussField) -> Result<Self> {
        if kappa.channels != 1 {
            return shape_err("isotropic conductivity needs a single channel");
        }
        Self::new(
            MaterialKind::IsotropicScalar,
            kappa.n_gauss,
            kappa.ny,
            kappa.nx,
            kappa.data.clone(),
        )
    }

    pub fn n_points(&self) -> usize {
        self.n_gauss * self.ny * self.nx
    }

    /// Plane of component `comp` at slot `g` over all elements.
    pub fn plane(&self, comp: usize, g: usize) -> &[f64] {
        let n = self.ny * self.nx;
        let k = (comp * self.n_gauss + g) * n;
        &self.data[k..k + n]
    }

    /// Full matrix at point `p` (flattened `g · n_elem + e`), row-major.
    pub fn matrix_at(&self, p: usize) -> Vec<f64> {
        let np = self.n_points();
        (0..self.kind.components()).map(|c| self.data[c * np + p]).collect()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let d = self.kind.dim();
        let np = self.n_points();
        for p in 0..np {
            let m = self.matrix_at(p);
            let scale = m.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
            for i in 0..d {
                for j in i + 1..d {
                    if (m[i * d + j] - m[j * d + i]).abs() > tol * scale {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// Symmetric with positive leading principal minors everywhere.
    pub fn validate(&self) -> Result<()> {
        if !self.is_symmetric(1e-12) {
            return Err(VolError::InvalidMaterial("constitutive matrix is not symmetric".into()));
        }
        let d = self.kind.dim();
        for p in 0..self.n_points() {
            let m = self.matrix_at(p);
            if !leading_minors_positive(&m, d) {
                return Err(VolError::InvalidMaterial(format!(
                    "constitutive matrix at point {p} is not positive definite"
                )));
            }
        }
        Ok(())
    }
}

fn leading_minors_positive(m: &[f64], d: usize) -> bool {
    let m1 = m[0];
    if m1 <= 0.0 {
        return false;
    }
    if d == 1 {
        return true;
    }
    let m2 = m[0] * m[d + 1] - m[1] * m[d];
    if m2 <= 0.0 {
        return false;
    }
    if d == 2 {
        return true;
    }
    det3(&[[m[0], m[1], m[2]], [m[3], m[4], m[5]], [m[6], m[7], m[8]]]) > 0.0
}

fn det3(a: &[[f64; 3]; 3]) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// Orthotropic lamina in its principal axes. Moduli in MPa, thickness in mm.
#[derive(Clone, Debug, PartialEq)]
pub struct LaminaProperties {
    pub e1: f64,
    pub e2: f64,
    pub g12: f64,
    pub nu12: f64,
    pub thickness: f64,
}

impl Default for LaminaProperties {
    fn default() -> Self {
        LaminaProperties {
            e1: 181_000.0,
            e2: 10_270.0,
            g12: 7_170.0,
            nu12: 0.28,
            thickness: 0.125,
        }
    }
}

impl LaminaProperties {
    pub fn validate(&self) -> Result<()> {
        if !(self.e1 > 0.0 && self.e2 > 0.0 && self.g12 > 0.0 && self.thickness > 0.0) {
            return Err(VolError::InvalidMaterial(
                "moduli and thickness must be positive".into(),
            ));
        }
        if 1.0 - self.nu12 * self.nu12 * self.e2 / self.e1 <= 0.0 {
            return Err(VolError::InvalidMaterial("compliance matrix is singular".into()));
        }
        Ok(())
    }

    /// Compliance `S₁₂` in principal axes.
    pub fn compliance(&self) -> [[f64; 3]; 3] {
        [
            [1.0 / self.e1, -self.nu12 / self.e1, 0.0],
            [-self.nu12 / self.e1, 1.0 / self.e2, 0.0],
            [0.0, 0.0, 1.0 / self.g12],
        ]
    }
}

/// `C₁₂ = S₁₂⁻¹` for plane stress.
pub fn plane_stress_stiffness(p: &LaminaProperties) -> Result<[[f64; 3]; 3]> {
    p.validate()?;
    let denom = 1.0 - p.nu12 * p.nu12 * p.e2 / p.e1;
    let c11 = p.e1 / denom;
    let c22 = p.e2 / denom;
    let c12 = p.nu12 * p.e2 / denom;
    Ok([[c11, c12, 0.0], [c12, c22, 0.0], [0.0, 0.0, p.g12]])
}

/// `T(θ)`, the stress transformation from `x-y` to principal axes.
pub fn rotation_matrix(theta: f64) -> [[f64; 3]; 3] {
    let (s, c) = theta.sin_cos();
    [
        [c * c, s * s, 2.0 * s * c],
        [s * s, c * c, -2.0 * s * c],
        [-s * c, s * c, c * c - s * s],
    ]
}

/// `C_xy = T⁻¹ C₁₂ T⁻ᵀ` with `T⁻¹ = T(−θ)`.
pub fn rotated_stiffness(c12: &[[f64; 3]; 3], theta: f64) -> [[f64; 3]; 3] {
    let ti = rotation_matrix(-theta);
    let mut tmp = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            tmp[i][j] = (0..3).map(|k| ti[i][k] * c12[k][j]).sum();
        }
    }
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| tmp[i][k] * ti[j][k]).sum();
        }
    }
    // exact symmetry
    for i in 0..3 {
        for j in i + 1..3 {
            let m = 0.5 * (out[i][j] + out[j][i]);
            out[i][j] = m;
            out[j][i] = m;
        }
    }
    out
}

/// What a [`ParameterField`] parameterizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Source,
    Conductivity,
    FiberAngle,
}

/// Parameter samples at Gauss points (one channel per Gauss slot) or at
/// nodes (one channel per component).
#[derive(Clone, Debug, PartialEq)]
pub enum ParamSamples {
    Gauss(GaussField),
    Node(NodeField),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParameterField {
    pub kind: ParamKind,
    pub samples: ParamSamples,
}

impl ParameterField {
    pub fn gauss(kind: ParamKind, field: GaussField) -> Self {
        ParameterField {
            kind,
            samples: ParamSamples::Gauss(field),
        }
    }

    pub fn node(kind: ParamKind, field: NodeField) -> Self {
        ParameterField {
            kind,
            samples: ParamSamples::Node(field),
        }
    }

    pub fn as_gauss(&self) -> Result<&GaussField> {
        match &self.samples {
            ParamSamples::Gauss(g) => Ok(g),
            ParamSamples::Node(_) => invalid(format!("{:?} parameter must be sampled at Gauss points", self.kind)),
        }
    }

    pub fn values(&self) -> &[f64] {
        match &self.samples {
            ParamSamples::Gauss(g) => &g.data,
            ParamSamples::Node(n) => &n.data,
        }
    }

    /// Fiber angles must lie in `[−π/2, π/2]`.
    pub fn validate(&self) -> Result<()> {
        if self.values().iter().any(|v| !v.is_finite()) {
            return invalid("parameter field has non-finite entries");
        }
        if self.kind == ParamKind::FiberAngle && self.values().iter().any(|v| v.abs() > FRAC_PI_2 + 1e-12) {
            return invalid("fiber angles must lie in [-pi/2, pi/2]");
        }
        Ok(())
    }
}

/// Boundary edge of the rectangular domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Edge {
    /// `x = x₀`
    Left,
    /// `x = x₀ + Lx`
    Right,
    /// `y = y₀`
    Bottom,
    /// `y = y₀ + Ly`
    Top,
}

impl Edge {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(Edge::Left),
            "right" => Ok(Edge::Right),
            "bottom" => Ok(Edge::Bottom),
            "top" => Ok(Edge::Top),
            other => invalid(format!("unknown edge `{other}`")),
        }
    }
}

/// Traction `X̄` (or flux `q̄`) along an edge, force per unit edge length.
#[derive(Clone, Debug, PartialEq)]
pub enum Traction {
    /// One value per solution channel, uniform along the edge.
    Constant(Vec<f64>),
    /// `values[channel][edge node]`, linear between nodes.
    NodeSampled(Vec<Vec<f64>>),
}

impl Traction {
    pub(crate) fn check(&self, channels: usize, n_nodes: usize) -> Result<()> {
        match self {
            Traction::Constant(v) if v.len() == channels => Ok(()),
            Traction::NodeSampled(v) if v.len() == channels && v.iter().all(|c| c.len() == n_nodes) => Ok(()),
            _ => shape_err(format!(
                "traction must have {channels} channel(s) over {n_nodes} edge nodes"
            )),
        }
    }

    #[inline]
    pub(crate) fn at(&self, c: usize, node: usize) -> f64 {
        match self {
            Traction::Constant(v) => v[c],
            Traction::NodeSampled(v) => v[c][node],
        }
    }

    fn is_zero(&self, c: usize) -> bool {
        match self {
            Traction::Constant(v) => v[c] == 0.0,
            Traction::NodeSampled(v) => v[c].iter().all(|&x| x == 0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeumannLoad {
    pub edge: Edge,
    pub traction: Traction,
}

/// Volumetric source/body force at Gauss points plus edge tractions.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct LoadSpec {
    pub volumetric: Option<ParameterField>,
    pub neumann: Vec<NeumannLoad>,
}

impl LoadSpec {
    pub fn none() -> Self {
        LoadSpec::default()
    }

    /// Uniform scalar source on every channel.
    pub fn constant_source(disc: &Discretization, q: f64) -> Self {
        let g = GaussField::filled(disc.solution_channels(), disc.n_gauss(), disc.grid.ny, disc.grid.nx, q);
        LoadSpec {
            volumetric: Some(ParameterField::gauss(ParamKind::Source, g)),
            neumann: Vec::new(),
        }
    }

    pub fn source(field: GaussField) -> Self {
        LoadSpec {
            volumetric: Some(ParameterField::gauss(ParamKind::Source, field)),
            neumann: Vec::new(),
        }
    }

    pub fn with_traction(mut self, edge: Edge, traction: Traction) -> Self {
        self.neumann.push(NeumannLoad { edge, traction });
        self
    }

    pub(crate) fn volumetric_gauss(&self) -> Result<Option<&GaussField>> {
        self.volumetric.as_ref().map(|p| p.as_gauss()).transpose()
    }
}

/// `F = κ ∇T` at every Gauss point. Input channels: `(T, ∂T/∂x, ∂T/∂y)`.
pub fn diffusion_flux_map(g: &GaussField, mat: &MaterialField) -> Result<GaussField> {
    if g.channels != 3 {
        return shape_err(format!("diffusion flux needs 3 gauss channels, got {}", g.channels));
    }
    check_material_shape(g, mat)?;
    let mut out = GaussField::zeros(2, g.n_gauss, g.ny, g.nx);
    for gp in 0..g.n_gauss {
        let (tx, ty) = (g.plane(1, gp), g.plane(2, gp));
        let n = g.plane_len();
        let mut qx = vec![0.0; n];
        let mut qy = vec![0.0; n];
        match mat.kind {
            MaterialKind::IsotropicScalar => {
                let k = mat.plane(0, gp);
                for e in 0..n {
                    qx[e] = k[e] * tx[e];
                    qy[e] = k[e] * ty[e];
                }
            }
            MaterialKind::Anisotropic2 => {
                let (k11, k12, k21, k22) = (mat.plane(0, gp), mat.plane(1, gp), mat.plane(2, gp), mat.plane(3, gp));
                for e in 0..n {
                    qx[e] = k11[e] * tx[e] + k12[e] * ty[e];
                    qy[e] = k21[e] * tx[e] + k22[e] * ty[e];
                }
            }
            MaterialKind::PlaneStress3 => {
                return Err(VolError::InvalidMaterial(
                    "diffusion flux needs a conductivity, got a plane-stress stiffness".into(),
                ))
            }
        }
        out.plane_mut(0, gp).copy_from_slice(&qx);
        out.plane_mut(1, gp).copy_from_slice(&qy);
    }
    Ok(out)
}

/// `σ = t · C_xy · ε` with `ε = (∂u/∂x, ∂v/∂y, ∂u/∂y + ∂v/∂x)`. Input channels:
/// `(u, u_x, u_y, v, v_x, v_y)`.
pub fn stress_map(g: &GaussField, mat: &MaterialField, thickness: f64) -> Result<GaussField> {
    if g.channels != 6 {
        return shape_err(format!("stress needs 6 gauss channels, got {}", g.channels));
    }
    if mat.kind != MaterialKind::PlaneStress3 {
        return Err(VolError::InvalidMaterial(
            "stress needs a plane-stress stiffness".into(),
        ));
    }
    check_material_shape(g, mat)?;
    let n = g.plane_len();
    let mut out = GaussField::zeros(3, g.n_gauss, g.ny, g.nx);
    for gp in 0..g.n_gauss {
        let (ux, uy, vx, vy) = (g.plane(1, gp), g.plane(2, gp), g.plane(4, gp), g.plane(5, gp));
        let c: Vec<&[f64]> = (0..9).map(|k| mat.plane(k, gp)).collect();
        for row in 0..3 {
            let dst = out.plane_mut(row, gp);
            for e in 0..n {
                let (exx, eyy, gxy) = (ux[e], vy[e], uy[e] + vx[e]);
                dst[e] = thickness * (c[3 * row][e] * exx + c[3 * row + 1][e] * eyy + c[3 * row + 2][e] * gxy);
            }
        }
    }
    Ok(out)
}

fn check_material_shape(g: &GaussField, mat: &MaterialField) -> Result<()> {
    if mat.n_gauss != g.n_gauss || mat.ny != g.ny || mat.nx != g.nx {
        return shape_err(format!(
            "material {}x{}x{} vs gauss field {}x{}x{}",
            mat.n_gauss, mat.ny, mat.nx, g.n_gauss, g.ny, g.nx
        ));
    }
    Ok(())
}

/// Per-Gauss-point rotated stiffness from a fiber-angle field (radians).
pub fn fiber_angle_to_material(theta: &ParameterField, p: &LaminaProperties) -> Result<MaterialField> {
    if theta.kind != ParamKind::FiberAngle {
        return invalid("expected a fiber-angle parameter field");
    }
    theta.validate()?;
    let th = theta.as_gauss()?;
    if th.channels != 1 {
        return shape_err("fiber angle field must have one component");
    }
    let c12 = plane_stress_stiffness(p)?;
    let np = th.data.len();
    let mut data = vec![0.0; 9 * np];
    for (pt, &angle) in th.data.iter().enumerate() {
        let c = rotated_stiffness(&c12, angle);
        for i in 0..3 {
            for j in 0..3 {
                data[(3 * i + j) * np + pt] = c[i][j];
            }
        }
    }
    MaterialField::new(MaterialKind::PlaneStress3, th.n_gauss, th.ny, th.nx, data)
}

/// The benchmark families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ProblemKind {
    /// Steady heat conduction on the unit square, source `Q` varies.
    Heat,
    /// Darcy flow on the unit square, conductivity `κ` varies.
    Darcy,
    /// 100 mm plate, fiber angle varies linearly with `|x − x_c|`.
    ElasticityA,
    /// 100 mm plate, fiber angle is a cubic B-spline surface.
    ElasticityB,
}

impl ProblemKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "heat" => Ok(ProblemKind::Heat),
            "darcy" => Ok(ProblemKind::Darcy),
            "elasticity-a" => Ok(ProblemKind::ElasticityA),
            "elasticity-b" => Ok(ProblemKind::ElasticityB),
            other => invalid(format!("unknown problem `{other}`")),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Heat => "heat",
            ProblemKind::Darcy => "darcy",
            ProblemKind::ElasticityA => "elasticity-a",
            ProblemKind::ElasticityB => "elasticity-b",
        }
    }

    pub fn physics(self) -> PhysicsKind {
        match self {
            ProblemKind::Heat | ProblemKind::Darcy => PhysicsKind::ScalarDiffusion,
            ProblemKind::ElasticityA | ProblemKind::ElasticityB => PhysicsKind::PlaneStress,
        }
    }

    pub fn parameter_kind(self) -> ParamKind {
        match self {
            ProblemKind::Heat => ParamKind::Source,
            ProblemKind::Darcy => ParamKind::Conductivity,
            ProblemKind::ElasticityA | ProblemKind::ElasticityB => ParamKind::FiberAngle,
        }
    }

    /// Side length of the square domain (m for heat/Darcy, mm for plates).
    pub fn domain_size(self) -> f64 {
        match self {
            ProblemKind::Heat | ProblemKind::Darcy => 1.0,
            ProblemKind::ElasticityA | ProblemKind::ElasticityB => 100.0,
        }
    }

    /// Square discretization with `n` elements per side and a 2×2 rule.
    pub fn discretization(self, n: usize) -> Result<Arc<Discretization>> {
        let grid = crate::mesh::StructuredGrid::square(n, self.domain_size())?;
        Ok(Arc::new(Discretization::with_default_rule(grid, self.physics())?))
    }

    pub const ALL: [ProblemKind; 4] = [
        ProblemKind::Heat,
        ProblemKind::Darcy,
        ProblemKind::ElasticityA,
        ProblemKind::ElasticityB,
    ];
}

/// Fixed (non-sampled) data of the benchmarks.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemConfig {
    pub heat_conductivity: f64,
    pub darcy_source: f64,
    pub lamina: LaminaProperties,
    /// Uniform traction on the `x = 100 mm` edge, N/mm.
    pub traction: [f64; 2],
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig {
            heat_conductivity: 1.0,
            darcy_source: 1.0,
            lamina: LaminaProperties::default(),
            traction: [1.0, 0.0],
        }
    }
}

/// Homogeneous Dirichlet on the whole boundary.
pub fn boundary_mask(disc: &Discretization) -> Result<MaskSpec> {
    let [c, h, w] = disc.node_shape();
    let mask = NodeField::from_fn(c, h, w, |_, j, i| {
        if j == 0 || i == 0 || j == h - 1 || i == w - 1 {
            0.0
        } else {
            1.0
        }
    });
    MaskSpec::homogeneous(mask)
}

/// All channels clamped on the `x = x₀` edge.
pub fn left_clamp_mask(disc: &Discretization) -> Result<MaskSpec> {
    let [c, h, w] = disc.node_shape();
    let mask = NodeField::from_fn(c, h, w, |_, _, i| if i == 0 { 0.0 } else { 1.0 });
    MaskSpec::homogeneous(mask)
}

/// A fully specified linear problem `K a = P` on a shared discretization.
#[derive(Clone, Debug)]
pub struct Problem {
    pub disc: Arc<Discretization>,
    pub material: MaterialField,
    /// Plate thickness for plane stress, 1 for diffusion.
    pub thickness: f64,
    pub load: LoadSpec,
    pub mask: MaskSpec,
    load_vec: NodeField,
}

impl Problem {
    pub fn new(
        disc: Arc<Discretization>,
        material: MaterialField,
        thickness: f64,
        load: LoadSpec,
        mask: MaskSpec,
    ) -> Result<Self> {
        if mask.shape() != disc.node_shape() {
            return shape_err("mask does not match discretization");
        }
        if material.n_gauss != disc.n_gauss() || material.ny != disc.grid.ny || material.nx != disc.grid.nx {
            return shape_err("material does not match discretization");
        }
        for n in &load.neumann {
            let nodes = matrix_free::edge_nodes(&disc, n.edge);
            for c in 0..disc.solution_channels() {
                let constrained = nodes.iter().any(|&(j, i)| mask.mask.get(c, j, i) == 0.0);
                if constrained && !n.traction.is_zero(c) {
                    log::warn!(
                        "traction on channel {c} of {:?} edge touches constrained dofs; it is ignored there",
                        n.edge
                    );
                }
            }
        }
        let load_vec = matrix_free::load_vector(&load, &disc)?;
        Ok(Problem {
            disc,
            material,
            thickness,
            load,
            mask,
            load_vec,
        })
    }

    pub fn node_shape(&self) -> [usize; 3] {
        self.disc.node_shape()
    }

    pub fn zeros(&self) -> NodeField {
        let [c, h, w] = self.node_shape();
        NodeField::zeros(c, h, w)
    }

    pub fn load_vector(&self) -> &NodeField {
        &self.load_vec
    }

    pub fn n_free(&self) -> usize {
        self.mask.n_free()
    }

    /// `K a − P`.
    pub fn residual(&self, a: &NodeField) -> Result<NodeField> {
        matrix_free::residual_galerkin(a, &self.disc, &self.material, self.thickness, &self.load_vec)
    }

    /// `Mask(K a − P)`.
    pub fn masked_residual(&self, a: &NodeField) -> Result<NodeField> {
        let mut r = self.residual(a)?;
        matrix_free::mask_in_place(&mut r, &self.mask);
        Ok(r)
    }

    pub fn matvec(&self, p: &NodeField) -> Result<NodeField> {
        matrix_free::matvec(p, &self.disc, &self.material, self.thickness)
    }

    pub fn masked_matvec(&self, p: &NodeField) -> Result<NodeField> {
        let mut kp = self.matvec(p)?;
        matrix_free::mask_in_place(&mut kp, &self.mask);
        Ok(kp)
    }

    pub fn quadratic_form(&self, p: &NodeField) -> Result<f64> {
        matrix_free::quadratic_form(p, &self.disc, &self.material, self.thickness)
    }

    pub fn functional(&self, a: &NodeField) -> Result<f64> {
        matrix_free::system_functional(a, &self.disc, &self.material, self.thickness, &self.load)
    }

    /// `‖Mask(P)‖`, the scale used for relative residual tolerances.
    pub fn masked_load_norm(&self) -> f64 {
        self.load_vec
            .data
            .iter()
            .zip(&self.mask.mask.data)
            .map(|(p, m)| (p * m) * (p * m))
            .sum::<f64>()
            .sqrt()
    }
}

/// Assemble one benchmark instance from its sampled parameter.
pub fn problem_factory(
    kind: ProblemKind,
    disc: Arc<Discretization>,
    parameter: &ParameterField,
    cfg: &ProblemConfig,
) -> Result<Problem> {
    if disc.physics != kind.physics() {
        return invalid(format!(
            "{} needs {:?} physics, discretization has {:?}",
            kind.name(),
            kind.physics(),
            disc.physics
        ));
    }
    if parameter.kind != kind.parameter_kind() {
        return invalid(format!(
            "{} takes a {:?} parameter, got {:?}",
            kind.name(),
            kind.parameter_kind(),
            parameter.kind
        ));
    }
    parameter.validate()?;
    match kind {
        ProblemKind::Heat => {
            let q = parameter.as_gauss()?.clone();
            let material = MaterialField::constant_isotropic(&disc, cfg.heat_conductivity);
            material.validate()?;
            let mask = boundary_mask(&disc)?;
            Problem::new(disc, material, 1.0, LoadSpec::source(q), mask)
        }
        ProblemKind::Darcy => {
            let material = MaterialField::isotropic_from_gauss(parameter.as_gauss()?)?;
            let load = LoadSpec::constant_source(&disc, cfg.darcy_source);
            let mask = boundary_mask(&disc)?;
            Problem::new(disc, material, 1.0, load, mask)
        }
        ProblemKind::ElasticityA | ProblemKind::ElasticityB => {
            let material = fiber_angle_to_material(parameter, &cfg.lamina)?;
            let mask = left_clamp_mask(&disc)?;
            let load = LoadSpec::none().with_traction(Edge::Right, Traction::Constant(cfg.traction.to_vec()));
            Problem::new(disc, material, cfg.lamina.thickness, load, mask)
        }
    }
}
