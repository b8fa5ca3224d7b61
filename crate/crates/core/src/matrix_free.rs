//! Matrix-free evaluation of the discrete system.
//!
//! Nodal fields are taken to Gauss points with the trial kernel
//! ([`eval_at_gauss`]), turned into physics feature maps (flux or stress),
//! then either integrated against themselves (Ritz: functionals and quadratic
//! forms) or convolved with the test kernel over a one-element zero halo
//! (Galerkin: residuals and matrix-vector products). No matrix is formed.

use crate::error::{invalid, shape_err, Result, VolError};
use crate::field::{GaussField, NodeField};
use crate::mesh::{Discretization, PhysicsKind, TrialKernel, TRIAL_DX, TRIAL_DY, TRIAL_VALUE};
use crate::physics::{diffusion_flux_map, stress_map, Edge, LoadSpec, MaterialField, Traction};

/// Essential boundary conditions: `mask` is 1 on free dofs and 0 on
/// constrained ones; `shift` carries the prescribed values and is zero on free
/// dofs.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSpec {
    pub mask: NodeField,
    pub shift: NodeField,
}

impl MaskSpec {
    pub fn new(mask: NodeField, shift: NodeField) -> Result<Self> {
        mask.check_same_shape(&shift, "mask/shift")?;
        if mask.data.iter().any(|&m| m != 0.0 && m != 1.0) {
            return invalid("mask entries must be 0 or 1");
        }
        if mask.data.iter().zip(&shift.data).any(|(&m, &s)| m * s != 0.0) {
            return invalid("shift must vanish on free dofs");
        }
        for c in 0..mask.channels {
            if mask.channel(c).iter().all(|&m| m == 1.0) {
                return invalid(format!("channel {c} has no constrained dof"));
            }
        }
        Ok(MaskSpec { mask, shift })
    }

    /// Homogeneous constraints (`shift = 0`).
    pub fn homogeneous(mask: NodeField) -> Result<Self> {
        let shift = mask.zeros_like();
        Self::new(mask, shift)
    }

    pub fn shape(&self) -> [usize; 3] {
        self.mask.shape()
    }

    pub fn n_free(&self) -> usize {
        self.mask.data.iter().filter(|&&m| m == 1.0).count()
    }

    pub fn is_free(&self, k: usize) -> bool {
        self.mask.data[k] == 1.0
    }

    /// Indices of free dofs in flattened order.
    pub fn free_indices(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&k| self.is_free(k)).collect()
    }
}

/// `x ⊙ mask`.
pub fn apply_mask(x: &NodeField, m: &MaskSpec) -> Result<NodeField> {
    x.check_same_shape(&m.mask, "apply_mask")?;
    let mut out = x.clone();
    mask_in_place(&mut out, m);
    Ok(out)
}

pub(crate) fn mask_in_place(x: &mut NodeField, m: &MaskSpec) {
    for (v, &k) in x.data.iter_mut().zip(&m.mask.data) {
        if k == 0.0 {
            *v = 0.0;
        }
    }
}

/// `x ⊙ mask + shift`; constrained dofs come out equal to the prescribed
/// values bit for bit.
pub fn apply_shift_bc(x: &NodeField, m: &MaskSpec) -> Result<NodeField> {
    x.check_same_shape(&m.mask, "apply_shift_bc")?;
    let mut out = x.clone();
    for ((v, &k), &s) in out.data.iter_mut().zip(&m.mask.data).zip(&m.shift.data) {
        *v = if k == 0.0 { s } else { *v };
    }
    Ok(out)
}

/// Values and physical gradients at every Gauss point.
///
/// For each solution channel `c` the output carries channels `3c` (value),
/// `3c + 1` (∂/∂x) and `3c + 2` (∂/∂y).
pub fn eval_at_gauss(a: &NodeField, k: &TrialKernel) -> Result<GaussField> {
    if a.height < 2 || a.width < 2 {
        return shape_err(format!("node field {:?} has no elements", a.shape()));
    }
    let (ny, nx) = (a.height - 1, a.width - 1);
    let mut out = GaussField::zeros(a.channels * 3, k.n_gauss, ny, nx);
    for c in 0..a.channels {
        let src = a.channel(c);
        for q in [TRIAL_VALUE, TRIAL_DX, TRIAL_DY] {
            for g in 0..k.n_gauss {
                let w = k.filters[g][q];
                let dst = out.plane_mut(3 * c + q, g);
                for ey in 0..ny {
                    let r0 = &src[ey * a.width..(ey + 1) * a.width];
                    let r1 = &src[(ey + 1) * a.width..(ey + 2) * a.width];
                    let d = &mut dst[ey * nx..(ey + 1) * nx];
                    for ex in 0..nx {
                        d[ex] = w[0] * r0[ex] + w[1] * r0[ex + 1] + w[2] * r1[ex] + w[3] * r1[ex + 1];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Strain-like quantity paired with the physics feature map: `∇T` for
/// diffusion, engineering strain `(εxx, εyy, γxy)` for plane stress.
pub fn strain_map(g: &GaussField, physics: PhysicsKind) -> Result<GaussField> {
    let n = g.plane_len();
    match physics {
        PhysicsKind::ScalarDiffusion => {
            if g.channels != 3 {
                return shape_err("diffusion strain needs 3 gauss channels");
            }
            let mut out = GaussField::zeros(2, g.n_gauss, g.ny, g.nx);
            for gp in 0..g.n_gauss {
                out.plane_mut(0, gp).copy_from_slice(g.plane(1, gp));
                out.plane_mut(1, gp).copy_from_slice(g.plane(2, gp));
            }
            Ok(out)
        }
        PhysicsKind::PlaneStress => {
            if g.channels != 6 {
                return shape_err("plane-stress strain needs 6 gauss channels");
            }
            let mut out = GaussField::zeros(3, g.n_gauss, g.ny, g.nx);
            for gp in 0..g.n_gauss {
                out.plane_mut(0, gp).copy_from_slice(g.plane(1, gp));
                out.plane_mut(1, gp).copy_from_slice(g.plane(5, gp));
                let (ux_y, uy_x) = (g.plane(2, gp).to_vec(), g.plane(4, gp));
                let d = out.plane_mut(2, gp);
                for e in 0..n {
                    d[e] = ux_y[e] + uy_x[e];
                }
            }
            Ok(out)
        }
    }
}

/// Physics feature map `F_physics` (flux `κ∇T` or stress `t·C·ε`).
pub fn physics_features(
    g: &GaussField,
    physics: PhysicsKind,
    mat: &MaterialField,
    thickness: f64,
) -> Result<GaussField> {
    match physics {
        PhysicsKind::ScalarDiffusion => diffusion_flux_map(g, mat),
        PhysicsKind::PlaneStress => stress_map(g, mat, thickness),
    }
}

fn check_node_shape(a: &NodeField, disc: &Discretization) -> Result<()> {
    if a.shape() != disc.node_shape() {
        return shape_err(format!(
            "node field {:?} does not match discretization {:?}",
            a.shape(),
            disc.node_shape()
        ));
    }
    Ok(())
}

/// Scale every plane of `f` by `H_g · |J|`.
fn weight_by_quadrature(f: &mut GaussField, disc: &Discretization) {
    for c in 0..f.channels {
        for g in 0..f.n_gauss {
            let h = disc.rule.weights[g];
            let jac = disc.jacobian.plane(g);
            for (v, &j) in f.plane_mut(c, g).iter_mut().zip(jac) {
                *v *= h * j;
            }
        }
    }
}

/// Zero-pad a Gauss-point plane with one layer of ghost elements.
fn pad_plane(src: &[f64], ny: usize, nx: usize) -> Vec<f64> {
    let pw = nx + 2;
    let mut out = vec![0.0; (ny + 2) * pw];
    for ey in 0..ny {
        out[(ey + 1) * pw + 1..(ey + 1) * pw + 1 + nx].copy_from_slice(&src[ey * nx..(ey + 1) * nx]);
    }
    out
}

/// Accumulate `w ⋆ padded` into `dst` at unit stride (a 2×2 correlation that
/// takes the padded element grid back to the node grid).
fn accumulate_2x2(dst: &mut [f64], padded: &[f64], w: [[f64; 2]; 2], height: usize, width: usize) {
    let pw = width + 1;
    for (a, wa) in w.iter().enumerate() {
        for (b, &wab) in wa.iter().enumerate() {
            if wab == 0.0 {
                continue;
            }
            for j in 0..height {
                let src = &padded[(j + a) * pw + b..(j + a) * pw + b + width];
                let d = &mut dst[j * width..(j + 1) * width];
                for (x, s) in d.iter_mut().zip(src) {
                    *x += wab * s;
                }
            }
        }
    }
}

/// Galerkin test-kernel convolution of weighted physics features.
fn test_convolution(features: &GaussField, disc: &Discretization) -> NodeField {
    let kv = &disc.test;
    let (ny, nx) = (features.ny, features.nx);
    let (height, width) = (ny + 1, nx + 1);
    let mut out = NodeField::zeros(kv.out_channels, height, width);
    for feat in 0..kv.n_features {
        for g in 0..kv.n_gauss {
            let padded = pad_plane(features.plane(feat, g), ny, nx);
            for o in 0..kv.out_channels {
                let w = [
                    [kv.grad(o, feat, g, 0, 0), kv.grad(o, feat, g, 0, 1)],
                    [kv.grad(o, feat, g, 1, 0), kv.grad(o, feat, g, 1, 1)],
                ];
                accumulate_2x2(out.channel_mut(o), &padded, w, height, width);
            }
        }
    }
    out
}

/// `K a` without forming `K`.
pub fn apply_stiffness(a: &NodeField, disc: &Discretization, mat: &MaterialField, thickness: f64) -> Result<NodeField> {
    check_node_shape(a, disc)?;
    let g = eval_at_gauss(a, &disc.trial)?;
    let mut f = physics_features(&g, disc.physics, mat, thickness)?;
    weight_by_quadrature(&mut f, disc);
    let out = test_convolution(&f, disc);
    Ok(out)
}

/// Galerkin residual `R = K a − P` (unmasked).
pub fn residual_galerkin(
    a: &NodeField,
    disc: &Discretization,
    mat: &MaterialField,
    thickness: f64,
    load_vec: &NodeField,
) -> Result<NodeField> {
    check_node_shape(load_vec, disc)?;
    let mut r = apply_stiffness(a, disc, mat, thickness)?;
    r.axpy(-1.0, load_vec);
    Ok(r)
}

/// `K p`, the residual of `p` under zero load.
pub fn matvec(p: &NodeField, disc: &Discretization, mat: &MaterialField, thickness: f64) -> Result<NodeField> {
    apply_stiffness(p, disc, mat, thickness)
}

/// Sum over elements and Gauss points of `H_l |J| · strain · feature`.
fn weighted_pairing(strain: &GaussField, features: &GaussField, disc: &Discretization) -> f64 {
    let mut total = 0.0;
    for c in 0..strain.channels {
        for g in 0..strain.n_gauss {
            let h = disc.rule.weights[g];
            let jac = disc.jacobian.plane(g);
            let s: f64 = strain
                .plane(c, g)
                .iter()
                .zip(features.plane(c, g))
                .zip(jac)
                .map(|((e, f), j)| e * f * j)
                .sum();
            total += h * s;
        }
    }
    total
}

/// Ritz quadratic form `pᵀ K p = Σ_e Σ_l H_l pᵉᵀ B_lᵀ D_l B_l pᵉ |J|`.
pub fn quadratic_form(p: &NodeField, disc: &Discretization, mat: &MaterialField, thickness: f64) -> Result<f64> {
    check_node_shape(p, disc)?;
    let g = eval_at_gauss(p, &disc.trial)?;
    let strain = strain_map(&g, disc.physics)?;
    let f = physics_features(&g, disc.physics, mat, thickness)?;
    Ok(weighted_pairing(&strain, &f, disc))
}

/// Ritz system functional
/// `Π̃ = ½ Σ H|J| εᵀDε − Σ H|J| uᵀf − ∫_{Sσ} uᵀX̄ dS`.
pub fn system_functional(
    a: &NodeField,
    disc: &Discretization,
    mat: &MaterialField,
    thickness: f64,
    load: &LoadSpec,
) -> Result<f64> {
    if !mat.is_symmetric(1e-12) {
        return Err(VolError::Unsupported(
            "functional needs a symmetric constitutive matrix".into(),
        ));
    }
    check_node_shape(a, disc)?;
    let g = eval_at_gauss(a, &disc.trial)?;
    let strain = strain_map(&g, disc.physics)?;
    let f = physics_features(&g, disc.physics, mat, thickness)?;
    let energy = 0.5 * weighted_pairing(&strain, &f, disc);

    let mut work = 0.0;
    if let Some(src) = load.volumetric_gauss()? {
        check_source_shape(src, disc)?;
        for c in 0..a.channels {
            for gp in 0..disc.n_gauss() {
                let h = disc.rule.weights[gp];
                let jac = disc.jacobian.plane(gp);
                let s: f64 = g
                    .plane(3 * c, gp)
                    .iter()
                    .zip(src.plane(c, gp))
                    .zip(jac)
                    .map(|((u, f), j)| u * f * j)
                    .sum();
                work += h * s;
            }
        }
    }
    for n in &load.neumann {
        work += edge_integral(disc, n.edge, &n.traction, |c, node| a.data[a.idx(c, node.0, node.1)])?;
    }
    Ok(energy - work)
}

fn check_source_shape(src: &GaussField, disc: &Discretization) -> Result<()> {
    let g = &disc.grid;
    if src.channels != disc.solution_channels() || src.n_gauss != disc.n_gauss() || src.ny != g.ny || src.nx != g.nx {
        return shape_err(format!(
            "volumetric source {}x{}x{}x{} does not match discretization",
            src.channels, src.n_gauss, src.ny, src.nx
        ));
    }
    Ok(())
}

/// Node `(row, col)` list of an edge, ordered along the edge.
pub fn edge_nodes(disc: &Discretization, edge: Edge) -> Vec<(usize, usize)> {
    let g = &disc.grid;
    match edge {
        Edge::Left => (0..=g.ny).map(|j| (j, 0)).collect(),
        Edge::Right => (0..=g.ny).map(|j| (j, g.nx)).collect(),
        Edge::Bottom => (0..=g.nx).map(|i| (0, i)).collect(),
        Edge::Top => (0..=g.nx).map(|i| (g.ny, i)).collect(),
    }
}

fn edge_segment_length(disc: &Discretization, edge: Edge) -> f64 {
    match edge {
        Edge::Left | Edge::Right => disc.grid.hy,
        Edge::Bottom | Edge::Top => disc.grid.hx,
    }
}

/// `∫_edge Σ_c u_c t_c dS` with `u` linear along each segment, 1-D Gauss.
fn edge_integral(
    disc: &Discretization,
    edge: Edge,
    traction: &Traction,
    u: impl Fn(usize, (usize, usize)) -> f64,
) -> Result<f64> {
    let nodes = edge_nodes(disc, edge);
    let len = edge_segment_length(disc, edge);
    let channels = disc.solution_channels();
    traction.check(channels, nodes.len())?;
    let mut total = 0.0;
    for seg in 0..nodes.len() - 1 {
        for (&xi, &w) in disc.edge_points.iter().zip(&disc.edge_weights) {
            let (n0, n1) = (0.5 * (1.0 - xi), 0.5 * (1.0 + xi));
            for c in 0..channels {
                let t = n0 * traction.at(c, seg) + n1 * traction.at(c, seg + 1);
                let uv = n0 * u(c, nodes[seg]) + n1 * u(c, nodes[seg + 1]);
                total += w * 0.5 * len * t * uv;
            }
        }
    }
    Ok(total)
}

/// Load vector `P`: test-kernel convolution of the weighted volumetric
/// source plus 1-D Gauss integration of boundary tractions.
pub fn load_vector(load: &LoadSpec, disc: &Discretization) -> Result<NodeField> {
    let [c, h, w] = disc.node_shape();
    let mut p = NodeField::zeros(c, h, w);
    if let Some(src) = load.volumetric_gauss()? {
        check_source_shape(src, disc)?;
        let mut weighted = src.clone();
        weight_by_quadrature(&mut weighted, disc);
        let (ny, nx) = (disc.grid.ny, disc.grid.nx);
        let kv = &disc.test;
        for ch in 0..c {
            for g in 0..disc.n_gauss() {
                let padded = pad_plane(weighted.plane(ch, g), ny, nx);
                let wv = [
                    [kv.value(g, 0, 0), kv.value(g, 0, 1)],
                    [kv.value(g, 1, 0), kv.value(g, 1, 1)],
                ];
                accumulate_2x2(p.channel_mut(ch), &padded, wv, h, w);
            }
        }
    }
    for n in &load.neumann {
        let nodes = edge_nodes(disc, n.edge);
        let len = edge_segment_length(disc, n.edge);
        n.traction.check(c, nodes.len())?;
        for seg in 0..nodes.len() - 1 {
            for (&xi, &wq) in disc.edge_points.iter().zip(&disc.edge_weights) {
                let (n0, n1) = (0.5 * (1.0 - xi), 0.5 * (1.0 + xi));
                for ch in 0..c {
                    let t = n0 * n.traction.at(ch, seg) + n1 * n.traction.at(ch, seg + 1);
                    let s = wq * 0.5 * len * t;
                    let k0 = p.idx(ch, nodes[seg].0, nodes[seg].1);
                    let k1 = p.idx(ch, nodes[seg + 1].0, nodes[seg + 1].1);
                    p.data[k0] += s * n0;
                    p.data[k1] += s * n1;
                }
            }
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::StructuredGrid;
    use crate::physics::MaterialField;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn disc(n: usize) -> Discretization {
        Discretization::with_default_rule(StructuredGrid::unit_square(n).unwrap(), PhysicsKind::ScalarDiffusion)
            .unwrap()
    }

    #[test]
    fn linear_field_has_exact_gradient() {
        let d = disc(3);
        let grid = &d.grid;
        let a = NodeField::from_fn(1, 4, 4, |_, j, i| 2.0 * grid.node_x(i) - 0.5 * grid.node_y(j) + 1.0);
        let g = eval_at_gauss(&a, &d.trial).unwrap();
        for gp in 0..4 {
            assert!(g.plane(1, gp).iter().all(|v| (v - 2.0).abs() < 1e-12));
            assert!(g.plane(2, gp).iter().all(|v| (v + 0.5).abs() < 1e-12));
        }
        let c = NodeField::filled(1, 4, 4, 3.5);
        let g = eval_at_gauss(&c, &d.trial).unwrap();
        for gp in 0..4 {
            assert!(g.plane(0, gp).iter().all(|v| (v - 3.5).abs() < 1e-14));
        }
    }

    #[test]
    fn gauss_values_match_element_loop() {
        let d = disc(3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = NodeField::from_fn(1, 4, 4, |_, _, _| rng.random_range(-1.0..1.0));
        let g = eval_at_gauss(&a, &d.trial).unwrap();
        for ey in 0..3 {
            for ex in 0..3 {
                for (gp, &[r, s]) in d.rule.points.iter().enumerate() {
                    // brute force: bilinear interpolation of the four corners
                    let (a00, a01) = (a.get(0, ey, ex), a.get(0, ey, ex + 1));
                    let (a10, a11) = (a.get(0, ey + 1, ex), a.get(0, ey + 1, ex + 1));
                    let (x, y) = (0.5 * (1.0 + r), 0.5 * (1.0 + s));
                    let v = a00 * (1.0 - x) * (1.0 - y) + a01 * x * (1.0 - y) + a10 * (1.0 - x) * y + a11 * x * y;
                    assert_abs_diff_eq!(g.get(0, gp, ey, ex), v, epsilon = 1e-14);
                }
            }
        }
    }

    #[test]
    fn mask_and_shift() {
        let mask = NodeField::from_vec(1, 2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let shift = NodeField::from_vec(1, 2, 2, vec![0.3, 0.0, 0.0, -7.0]).unwrap();
        let m = MaskSpec::new(mask.clone(), shift.clone()).unwrap();
        let x = NodeField::from_vec(1, 2, 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let once = apply_mask(&x, &m).unwrap();
        assert_eq!(once.data, vec![0.0, 6.0, 7.0, 0.0]);
        assert_eq!(apply_mask(&once, &m).unwrap(), once);
        let s = apply_shift_bc(&x, &m).unwrap();
        assert_eq!(s.data, vec![0.3, 6.0, 7.0, -7.0]);
        assert_eq!(apply_shift_bc(&x.zeros_like(), &m).unwrap(), shift);
        let hm = MaskSpec::homogeneous(mask).unwrap();
        assert_eq!(apply_shift_bc(&x, &hm).unwrap(), apply_mask(&x, &hm).unwrap());
        assert_eq!(m.n_free(), 2);
    }

    #[test]
    fn mask_validation() {
        let ones = NodeField::filled(1, 2, 2, 1.0);
        assert!(MaskSpec::homogeneous(ones.clone()).is_err());
        let bad = NodeField::from_vec(1, 2, 2, vec![0.5, 1.0, 1.0, 0.0]).unwrap();
        assert!(MaskSpec::homogeneous(bad).is_err());
        let mask = NodeField::from_vec(1, 2, 2, vec![0.0, 1.0, 1.0, 1.0]).unwrap();
        let shift = NodeField::from_vec(1, 2, 2, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!(MaskSpec::new(mask, shift).is_err());
        let m = MaskSpec::homogeneous(NodeField::from_vec(1, 2, 2, vec![0.0, 1.0, 1.0, 1.0]).unwrap()).unwrap();
        assert!(matches!(
            apply_mask(&ones.clone().scaled(2.0).reshaped(1, 1, 4), &m),
            Err(VolError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn functional_of_linear_field_on_unit_square() {
        let d = disc(4);
        let mat = MaterialField::constant_isotropic(&d, 1.0);
        let a = NodeField::from_fn(1, 5, 5, |_, _, i| d.grid.node_x(i));
        let load = LoadSpec::none();
        let pi = system_functional(&a, &d, &mat, 1.0, &load).unwrap();
        assert_abs_diff_eq!(pi, 0.5, epsilon = 1e-14);
        let z = NodeField::zeros(1, 5, 5);
        assert_eq!(system_functional(&z, &d, &mat, 1.0, &load).unwrap(), 0.0);
    }

    #[test]
    fn unit_source_interior_load() {
        let d = disc(4);
        let load = LoadSpec::constant_source(&d, 1.0);
        let p = load_vector(&load, &d).unwrap();
        let h2 = d.grid.hx * d.grid.hy;
        for j in 1..4 {
            for i in 1..4 {
                assert_abs_diff_eq!(p.get(0, j, i), h2, epsilon = 1e-15);
            }
        }
        // corner node sees a single element
        assert_abs_diff_eq!(p.get(0, 0, 0), h2 / 4.0, epsilon = 1e-15);
        assert_eq!(load_vector(&LoadSpec::none(), &d).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn nonsymmetric_conductivity_has_no_functional() {
        let d = disc(2);
        let mat = MaterialField::constant_anisotropic(&d, [[1.0, 0.5], [0.0, 1.0]]);
        let a = NodeField::zeros(1, 3, 3);
        assert!(matches!(
            system_functional(&a, &d, &mat, 1.0, &LoadSpec::none()),
            Err(VolError::Unsupported(_))
        ));
        // the Galerkin path does not need symmetry
        assert!(matvec(&a, &d, &mat, 1.0).is_ok());
    }

    impl NodeField {
        fn reshaped(&self, c: usize, h: usize, w: usize) -> NodeField {
            NodeField::from_vec(c, h, w, self.data.clone()).unwrap()
        }
    }
}
