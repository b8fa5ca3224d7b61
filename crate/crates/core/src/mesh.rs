//! Structured quadrilateral meshes, Gauss–Legendre quadrature, Q1 shape
//! functions and the convolution kernels built from them.
//!
//! Local node numbering inside an element follows the 2×2 convolution
//! footprint: `j = 2·dy + dx`, so node `j` of element `(ey, ex)` is grid node
//! `(ey + dy, ex + dx)` and sits at reference corner `(2·dx − 1, 2·dy − 1)`.
//! Gauss slots are numbered row-major over `(s, r)`: `g = is·order + ir`.

use crate::error::{invalid, Result, VolError};

/// Uniform rectilinear grid of `nx × ny` bilinear elements.
#[derive(Clone, Debug, PartialEq)]
pub struct StructuredGrid {
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
    pub origin: [f64; 2],
}

impl StructuredGrid {
    pub fn new(nx: usize, ny: usize, hx: f64, hy: f64, origin: [f64; 2]) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return invalid(format!("grid needs at least one element per axis, got {nx}x{ny}"));
        }
        if !(hx > 0.0 && hy > 0.0) || !hx.is_finite() || !hy.is_finite() {
            return invalid(format!("element sizes must be positive, got {hx} x {hy}"));
        }
        Ok(StructuredGrid { nx, ny, hx, hy, origin })
    }

    /// Square domain `[0, side]²` split into `n × n` elements.
    pub fn square(n: usize, side: f64) -> Result<Self> {
        Self::new(n, n, side / n as f64, side / n as f64, [0.0, 0.0])
    }

    pub fn unit_square(n: usize) -> Result<Self> {
        Self::square(n, 1.0)
    }

    /// Nodes along x.
    pub fn width(&self) -> usize {
        self.nx + 1
    }

    /// Nodes along y.
    pub fn height(&self) -> usize {
        self.ny + 1
    }

    pub fn n_nodes(&self) -> usize {
        self.width() * self.height()
    }

    pub fn n_elements(&self) -> usize {
        self.nx * self.ny
    }

    pub fn lx(&self) -> f64 {
        self.nx as f64 * self.hx
    }

    pub fn ly(&self) -> f64 {
        self.ny as f64 * self.hy
    }

    pub fn node_x(&self, i: usize) -> f64 {
        self.origin[0] + i as f64 * self.hx
    }

    pub fn node_y(&self, j: usize) -> f64 {
        self.origin[1] + j as f64 * self.hy
    }

    /// Physical coordinates of reference point `(r, s)` in element `(ey, ex)`.
    pub fn map_point(&self, ey: usize, ex: usize, r: f64, s: f64) -> [f64; 2] {
        [
            self.origin[0] + (ex as f64 + 0.5 * (1.0 + r)) * self.hx,
            self.origin[1] + (ey as f64 + 0.5 * (1.0 + s)) * self.hy,
        ]
    }
}

/// Tensor-product Gauss–Legendre rule on the reference square `[−1, 1]²`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussRule {
    pub order: usize,
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    /// The 1-D abscissae along each axis, ascending.
    pub fn abscissae(&self) -> Vec<f64> {
        (0..self.order).map(|i| self.points[i][0]).collect()
    }
}

pub const MAX_GAUSS_ORDER: usize = 10;

/// Points and weights of the `order`-point Gauss–Legendre rule on `[−1, 1]`,
/// abscissae ascending.
pub fn gauss_legendre_1d(order: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if order == 0 || order > MAX_GAUSS_ORDER {
        return invalid(format!("gauss order must be in 1..={MAX_GAUSS_ORDER}, got {order}"));
    }
    let n = order;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Newton iteration on P_n from the Chebyshev-like initial guess.
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                let (_, d) = legendre_with_derivative(n, z);
                dp = d;
                break;
            }
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    Ok((x, w))
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let dp = n as f64 * (z * p - p0) / (z * z - 1.0);
    (p, dp)
}

/// Tensor-product rule with `order` points per axis.
pub fn gauss_legendre_rule(order: usize) -> Result<GaussRule> {
    let (x, w) = gauss_legendre_1d(order)?;
    let mut points = Vec::with_capacity(order * order);
    let mut weights = Vec::with_capacity(order * order);
    for is in 0..order {
        for ir in 0..order {
            points.push([x[ir], x[is]]);
            weights.push(w[ir] * w[is]);
        }
    }
    Ok(GaussRule { order, points, weights })
}

/// Reference coordinates of the four Q1 nodes in footprint order.
pub const Q1_CORNERS: [[f64; 2]; 4] = [[-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0], [1.0, 1.0]];

/// Q1 shape function values `N_j(r, s) = ¼(1 + r_j r)(1 + s_j s)`.
pub fn q1_values(r: f64, s: f64) -> [f64; 4] {
    let mut n = [0.0; 4];
    for (j, [rj, sj]) in Q1_CORNERS.iter().enumerate() {
        n[j] = 0.25 * (1.0 + rj * r) * (1.0 + sj * s);
    }
    n
}

/// Local gradients `(∂N_j/∂r, ∂N_j/∂s)`.
pub fn q1_local_grads(r: f64, s: f64) -> ([f64; 4], [f64; 4]) {
    let mut dr = [0.0; 4];
    let mut ds = [0.0; 4];
    for (j, [rj, sj]) in Q1_CORNERS.iter().enumerate() {
        dr[j] = 0.25 * rj * (1.0 + sj * s);
        ds[j] = 0.25 * sj * (1.0 + rj * r);
    }
    (dr, ds)
}

/// Q1 shape functions and local gradients tabulated at the points of a rule.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeTable {
    pub values: Vec<[f64; 4]>,
    pub grad_r: Vec<[f64; 4]>,
    pub grad_s: Vec<[f64; 4]>,
}

impl ShapeTable {
    pub fn n_points(&self) -> usize {
        self.values.len()
    }
}

pub fn q1_shape_table(rule: &GaussRule) -> ShapeTable {
    q1_shape_table_at(&rule.points)
}

/// Tabulate at arbitrary reference points.
pub fn q1_shape_table_at(points: &[[f64; 2]]) -> ShapeTable {
    let mut values = Vec::with_capacity(points.len());
    let mut grad_r = Vec::with_capacity(points.len());
    let mut grad_s = Vec::with_capacity(points.len());
    for &[r, s] in points {
        values.push(q1_values(r, s));
        let (dr, ds) = q1_local_grads(r, s);
        grad_r.push(dr);
        grad_s.push(ds);
    }
    ShapeTable { values, grad_r, grad_s }
}

/// Quantities a trial filter produces at a Gauss point.
pub const TRIAL_VALUE: usize = 0;
pub const TRIAL_DX: usize = 1;
pub const TRIAL_DY: usize = 2;

/// Trial kernel: for every Gauss slot, three 2×2 filters (value, ∂/∂x, ∂/∂y)
/// over the element's nodes, indexed `filters[g][quantity][j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialKernel {
    pub n_gauss: usize,
    pub filters: Vec<[[f64; 4]; 3]>,
}

impl TrialKernel {
    /// Filter for quantity `q` at slot `g`, as a 2×2 array `[dy][dx]`.
    pub fn filter(&self, g: usize, q: usize) -> [[f64; 2]; 2] {
        let f = &self.filters[g][q];
        [[f[0], f[1]], [f[2], f[3]]]
    }
}

/// Build trial filters for a uniform grid: `J⁻¹ = diag(2/hx, 2/hy)`.
pub fn build_trial_kernel(grid: &StructuredGrid, table: &ShapeTable) -> TrialKernel {
    let sx = 2.0 / grid.hx;
    let sy = 2.0 / grid.hy;
    let filters = (0..table.n_points())
        .map(|g| {
            let mut f = [[0.0; 4]; 3];
            for j in 0..4 {
                f[TRIAL_VALUE][j] = table.values[g][j];
                f[TRIAL_DX][j] = sx * table.grad_r[g][j];
                f[TRIAL_DY][j] = sy * table.grad_s[g][j];
            }
            f
        })
        .collect();
    TrialKernel {
        n_gauss: table.n_points(),
        filters,
    }
}

/// The families of physics the engine discretizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PhysicsKind {
    /// `−∇·(κ∇T) = Q`, one nodal unknown.
    ScalarDiffusion,
    /// Plane-stress linear elasticity, two nodal unknowns.
    PlaneStress,
}

impl PhysicsKind {
    pub fn solution_channels(self) -> usize {
        match self {
            PhysicsKind::ScalarDiffusion => 1,
            PhysicsKind::PlaneStress => 2,
        }
    }

    /// Number of physics feature channels (flux or stress components).
    pub fn feature_channels(self) -> usize {
        match self {
            PhysicsKind::ScalarDiffusion => 2,
            PhysicsKind::PlaneStress => 3,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "scalar-diffusion" => Ok(PhysicsKind::ScalarDiffusion),
            "plane-stress" => Ok(PhysicsKind::PlaneStress),
            other => Err(VolError::Unsupported(format!("physics kind `{other}`"))),
        }
    }
}

/// Test kernel: filters over the 2×2 elements adjacent to a node.
///
/// `grad_filters[out][feature][g][a][b]` weights physics feature `feature` at
/// Gauss slot `g` of the padded element `(J + a, I + b)` when forming residual
/// channel `out` at node `(J, I)`. For scalar diffusion the features are the
/// flux components and the filters hold `∂v/∂x, ∂v/∂y`; for plane stress the
/// features are `(σxx, σyy, τxy)` and the filters hold the virtual strain
/// `(δεxx, δεyy, 2δεxy)` of a unit virtual displacement in direction `out`.
/// `value_filters[g][a][b]` holds `v` itself for volumetric loads.
#[derive(Clone, Debug, PartialEq)]
pub struct TestKernel {
    pub physics: PhysicsKind,
    pub n_gauss: usize,
    pub out_channels: usize,
    pub n_features: usize,
    pub grad_filters: Vec<f64>,
    pub value_filters: Vec<f64>,
}

impl TestKernel {
    #[inline]
    pub fn grad_index(&self, out: usize, feat: usize, g: usize, a: usize, b: usize) -> usize {
        (((out * self.n_features + feat) * self.n_gauss + g) * 2 + a) * 2 + b
    }

    #[inline]
    pub fn grad(&self, out: usize, feat: usize, g: usize, a: usize, b: usize) -> f64 {
        self.grad_filters[self.grad_index(out, feat, g, a, b)]
    }

    #[inline]
    pub fn value(&self, g: usize, a: usize, b: usize) -> f64 {
        self.value_filters[(g * 2 + a) * 2 + b]
    }
}

/// Local index of a node inside the adjacent element at padded offset `(a, b)`.
#[inline]
pub fn local_index_from_offset(a: usize, b: usize) -> usize {
    2 * (1 - a) + (1 - b)
}

pub fn build_test_kernel(grid: &StructuredGrid, table: &ShapeTable, physics: PhysicsKind) -> TestKernel {
    let trial = build_trial_kernel(grid, table);
    let n_gauss = trial.n_gauss;
    let out_channels = physics.solution_channels();
    let n_features = physics.feature_channels();
    let mut k = TestKernel {
        physics,
        n_gauss,
        out_channels,
        n_features,
        grad_filters: vec![0.0; out_channels * n_features * n_gauss * 4],
        value_filters: vec![0.0; n_gauss * 4],
    };
    for g in 0..n_gauss {
        for a in 0..2 {
            for b in 0..2 {
                let j = local_index_from_offset(a, b);
                let f = &trial.filters[g];
                k.value_filters[(g * 2 + a) * 2 + b] = f[TRIAL_VALUE][j];
                let (vx, vy) = (f[TRIAL_DX][j], f[TRIAL_DY][j]);
                match physics {
                    PhysicsKind::ScalarDiffusion => {
                        let i0 = k.grad_index(0, 0, g, a, b);
                        let i1 = k.grad_index(0, 1, g, a, b);
                        k.grad_filters[i0] = vx;
                        k.grad_filters[i1] = vy;
                    }
                    PhysicsKind::PlaneStress => {
                        // virtual displacement along x: δε = (v,x, 0, v,y)
                        let i = k.grad_index(0, 0, g, a, b);
                        k.grad_filters[i] = vx;
                        let i = k.grad_index(0, 2, g, a, b);
                        k.grad_filters[i] = vy;
                        // along y: δε = (0, v,y, v,x)
                        let i = k.grad_index(1, 1, g, a, b);
                        k.grad_filters[i] = vy;
                        let i = k.grad_index(1, 2, g, a, b);
                        k.grad_filters[i] = vx;
                    }
                }
            }
        }
    }
    k
}

/// `|J|` at every Gauss point of every element, layout `[g][ey][ex]`.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianField {
    pub n_gauss: usize,
    pub ny: usize,
    pub nx: usize,
    pub det: Vec<f64>,
}

impl JacobianField {
    #[inline]
    pub fn get(&self, g: usize, ey: usize, ex: usize) -> f64 {
        self.det[(g * self.ny + ey) * self.nx + ex]
    }

    pub fn plane(&self, g: usize) -> &[f64] {
        let n = self.ny * self.nx;
        &self.det[g * n..(g + 1) * n]
    }
}

pub fn jacobian_field(grid: &StructuredGrid, rule: &GaussRule) -> JacobianField {
    let det = 0.25 * grid.hx * grid.hy;
    let n_gauss = rule.n_points();
    JacobianField {
        n_gauss,
        ny: grid.ny,
        nx: grid.nx,
        det: vec![det; n_gauss * grid.ny * grid.nx],
    }
}

/// Everything needed to evaluate one physics on one grid, built once and
/// shared by all samples.
#[derive(Clone, Debug)]
pub struct Discretization {
    pub grid: StructuredGrid,
    pub physics: PhysicsKind,
    pub rule: GaussRule,
    pub table: ShapeTable,
    pub trial: TrialKernel,
    pub test: TestKernel,
    pub jacobian: JacobianField,
    /// 1-D rule used for boundary tractions.
    pub edge_points: Vec<f64>,
    pub edge_weights: Vec<f64>,
}

impl Discretization {
    pub fn new(grid: StructuredGrid, physics: PhysicsKind, order: usize) -> Result<Self> {
        let rule = gauss_legendre_rule(order)?;
        let table = q1_shape_table(&rule);
        let trial = build_trial_kernel(&grid, &table);
        let test = build_test_kernel(&grid, &table, physics);
        let jacobian = jacobian_field(&grid, &rule);
        let (edge_points, edge_weights) = gauss_legendre_1d(2)?;
        Ok(Discretization {
            grid,
            physics,
            rule,
            table,
            trial,
            test,
            jacobian,
            edge_points,
            edge_weights,
        })
    }

    /// Default 2×2 rule.
    pub fn with_default_rule(grid: StructuredGrid, physics: PhysicsKind) -> Result<Self> {
        Self::new(grid, physics, 2)
    }

    pub fn n_gauss(&self) -> usize {
        self.rule.n_points()
    }

    pub fn solution_channels(&self) -> usize {
        self.physics.solution_channels()
    }

    pub fn node_shape(&self) -> [usize; 3] {
        [self.solution_channels(), self.grid.height(), self.grid.width()]
    }

    /// Physical coordinates of every Gauss point, layout `[g][ey][ex]`.
    pub fn gauss_coordinates(&self) -> Vec<[f64; 2]> {
        let g = &self.grid;
        let mut out = Vec::with_capacity(self.n_gauss() * g.n_elements());
        for &[r, s] in &self.rule.points {
            for ey in 0..g.ny {
                for ex in 0..g.nx {
                    out.push(g.map_point(ey, ex, r, s));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn order_one_is_midpoint() {
        let r = gauss_legendre_rule(1).unwrap();
        assert_eq!(r.points, vec![[0.0, 0.0]]);
        assert_abs_diff_eq!(r.weights[0], 4.0, epsilon = 1e-15);
    }

    #[test]
    fn order_two_closed_form() {
        let r = gauss_legendre_rule(2).unwrap();
        let p = 1.0 / 3f64.sqrt();
        let expect = [[-p, -p], [p, -p], [-p, p], [p, p]];
        for (a, b) in r.points.iter().zip(expect.iter()) {
            assert_abs_diff_eq!(a[0], b[0], epsilon = 1e-15);
            assert_abs_diff_eq!(a[1], b[1], epsilon = 1e-15);
        }
        for w in &r.weights {
            assert_abs_diff_eq!(*w, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn order_three_integrates_quartic() {
        let r = gauss_legendre_rule(3).unwrap();
        let q: f64 = r.points.iter().zip(&r.weights).map(|(p, w)| w * p[0].powi(4)).sum();
        // ∫∫ r⁴ dr ds = (2/5)·2 = 4/5
        assert_abs_diff_eq!(q, 4.0 / 5.0, epsilon = 1e-14);
    }

    #[test]
    fn rules_are_exact_to_their_degree() {
        for order in 1..=MAX_GAUSS_ORDER {
            let r = gauss_legendre_rule(order).unwrap();
            let wsum: f64 = r.weights.iter().sum();
            assert_abs_diff_eq!(wsum, 4.0, epsilon = 1e-14);
            assert!(r.points.iter().all(|p| p[0].abs() < 1.0 && p[1].abs() < 1.0));
            let deg = 2 * order - 1;
            for px in 0..=deg {
                for py in 0..=deg {
                    let q: f64 = r
                        .points
                        .iter()
                        .zip(&r.weights)
                        .map(|(p, w)| w * p[0].powi(px as i32) * p[1].powi(py as i32))
                        .sum();
                    let exact_1d = |k: usize| if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
                    let exact = exact_1d(px) * exact_1d(py);
                    assert!(
                        (q - exact).abs() <= 1e-12 * exact.abs().max(1.0),
                        "order {order} x^{px} y^{py}: {q} vs {exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn rejects_bad_order() {
        assert!(matches!(gauss_legendre_rule(0), Err(VolError::InvalidArgument(_))));
        assert!(matches!(gauss_legendre_rule(11), Err(VolError::InvalidArgument(_))));
    }

    #[test]
    fn shape_functions_at_center_and_corners() {
        let t = q1_shape_table_at(&[[0.0, 0.0]]);
        assert_eq!(t.values[0], [0.25; 4]);
        for (i, c) in Q1_CORNERS.iter().enumerate() {
            let n = q1_values(c[0], c[1]);
            for (j, v) in n.iter().enumerate() {
                assert_eq!(*v, if i == j { 1.0 } else { 0.0 });
            }
        }
        let p = 1.0 / 3f64.sqrt();
        let n = q1_values(p, p);
        assert_abs_diff_eq!(n[3], 0.25 * (1.0 + p) * (1.0 + p), epsilon = 1e-15);
        assert_abs_diff_eq!(n[3], 0.622008467928146, epsilon = 1e-11);
    }

    #[test]
    fn shape_table_partition_of_unity() {
        for order in 1..=4 {
            let t = q1_shape_table(&gauss_legendre_rule(order).unwrap());
            for g in 0..t.n_points() {
                assert_abs_diff_eq!(t.values[g].iter().sum::<f64>(), 1.0, epsilon = 1e-14);
                assert_abs_diff_eq!(t.grad_r[g].iter().sum::<f64>(), 0.0, epsilon = 1e-14);
                assert_abs_diff_eq!(t.grad_s[g].iter().sum::<f64>(), 0.0, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn trial_kernel_scaling_and_sums() {
        let grid = StructuredGrid::new(3, 2, 0.5, 2.0, [0.0, 0.0]).unwrap();
        let t = q1_shape_table(&gauss_legendre_rule(2).unwrap());
        let k = build_trial_kernel(&grid, &t);
        for g in 0..4 {
            let f = &k.filters[g];
            assert_abs_diff_eq!(f[TRIAL_VALUE].iter().sum::<f64>(), 1.0, epsilon = 1e-13);
            assert_abs_diff_eq!(f[TRIAL_DX].iter().sum::<f64>(), 0.0, epsilon = 1e-13);
            assert_abs_diff_eq!(f[TRIAL_DY].iter().sum::<f64>(), 0.0, epsilon = 1e-13);
            for j in 0..4 {
                assert_abs_diff_eq!(f[TRIAL_DX][j], 4.0 * t.grad_r[g][j], epsilon = 1e-15);
                assert_abs_diff_eq!(f[TRIAL_DY][j], 1.0 * t.grad_s[g][j], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn test_kernel_is_reindexed_trial_kernel() {
        let grid = StructuredGrid::unit_square(3).unwrap();
        let t = q1_shape_table(&gauss_legendre_rule(2).unwrap());
        let trial = build_trial_kernel(&grid, &t);
        let test = build_test_kernel(&grid, &t, PhysicsKind::ScalarDiffusion);
        assert_eq!(test.grad_filters.len(), 2 * 4 * 4);
        for g in 0..4 {
            for a in 0..2 {
                for b in 0..2 {
                    let j = local_index_from_offset(a, b);
                    assert_eq!(test.value(g, a, b), trial.filters[g][TRIAL_VALUE][j]);
                    assert_eq!(test.grad(0, 0, g, a, b), trial.filters[g][TRIAL_DX][j]);
                    assert_eq!(test.grad(0, 1, g, a, b), trial.filters[g][TRIAL_DY][j]);
                }
            }
        }
        let el = build_test_kernel(&grid, &t, PhysicsKind::PlaneStress);
        assert_eq!((el.out_channels, el.n_features), (2, 3));
        for g in 0..4 {
            for a in 0..2 {
                for b in 0..2 {
                    let j = local_index_from_offset(a, b);
                    assert_eq!(el.grad(0, 0, g, a, b), trial.filters[g][TRIAL_DX][j]);
                    assert_eq!(el.grad(0, 1, g, a, b), 0.0);
                    assert_eq!(el.grad(0, 2, g, a, b), trial.filters[g][TRIAL_DY][j]);
                    assert_eq!(el.grad(1, 0, g, a, b), 0.0);
                    assert_eq!(el.grad(1, 1, g, a, b), trial.filters[g][TRIAL_DY][j]);
                    assert_eq!(el.grad(1, 2, g, a, b), trial.filters[g][TRIAL_DX][j]);
                }
            }
        }
    }

    #[test]
    fn jacobian_values() {
        let r = gauss_legendre_rule(2).unwrap();
        let j = jacobian_field(&StructuredGrid::unit_square(4).unwrap().scaled_copy(4.0), &r);
        assert!(j.det.iter().all(|&d| (d - 0.25).abs() < 1e-14));
        let g = StructuredGrid::new(2, 2, 2.0, 0.5, [0.0, 0.0]).unwrap();
        assert!(jacobian_field(&g, &r).det.iter().all(|&d| (d - 0.25).abs() < 1e-14));
        let plate = StructuredGrid::square(32, 100.0).unwrap();
        assert_eq!(plate.n_nodes(), 33 * 33);
        let j = jacobian_field(&plate, &r);
        assert!(j.det.iter().all(|&d| (d - 2.44140625).abs() < 1e-12));
    }

    #[test]
    fn grid_validation() {
        assert!(StructuredGrid::new(0, 1, 1.0, 1.0, [0.0; 2]).is_err());
        assert!(StructuredGrid::new(1, 1, -1.0, 1.0, [0.0; 2]).is_err());
        let g = StructuredGrid::new(3, 4, 1.0, 1.0, [0.0; 2]).unwrap();
        assert_eq!((g.width(), g.height(), g.n_nodes()), (4, 5, 20));
    }

    impl StructuredGrid {
        fn scaled_copy(&self, f: f64) -> StructuredGrid {
            StructuredGrid::new(self.nx, self.ny, self.hx * f, self.hy * f, self.origin).unwrap()
        }
    }
}
