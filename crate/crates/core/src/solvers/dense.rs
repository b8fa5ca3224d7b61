//! Explicit element-by-element assembly, used as a reference for the
//! matrix-free path and to produce exact solutions on small grids.

use nalgebra::{DMatrix, DVector};

use crate::error::{shape_err, Result, VolError};
use crate::field::NodeField;
use crate::matrix_free::edge_nodes;
use crate::mesh::{gauss_legendre_1d, PhysicsKind};
use crate::physics::{Edge, Problem};

/// Largest system [`assemble_dense`] accepts.
pub const DENSE_DOF_LIMIT: usize = 20_000;

/// `K` and `P` over all dofs in flattened [`NodeField`] order.
#[derive(Clone, Debug)]
pub struct DenseSystem {
    pub k: DMatrix<f64>,
    pub p: DVector<f64>,
    /// Unconstrained dofs, ascending.
    pub free_index: Vec<usize>,
    /// Prescribed values on constrained dofs (zero elsewhere).
    pub shift: NodeField,
}

impl DenseSystem {
    pub fn n_dof(&self) -> usize {
        self.p.len()
    }

    fn node_shape(&self) -> [usize; 3] {
        self.shift.shape()
    }

    fn to_vector(&self, a: &NodeField) -> Result<DVector<f64>> {
        if a.shape() != self.node_shape() {
            return shape_err(format!("{:?} vs dense system {:?}", a.shape(), self.node_shape()));
        }
        Ok(DVector::from_column_slice(&a.data))
    }

    fn to_field(&self, v: &DVector<f64>) -> NodeField {
        let [c, h, w] = self.node_shape();
        NodeField::from_vec(c, h, w, v.as_slice().to_vec()).expect("length matches")
    }

    /// `K a`.
    pub fn apply(&self, a: &NodeField) -> Result<NodeField> {
        let v = self.to_vector(a)?;
        Ok(self.to_field(&(&self.k * v)))
    }

    /// `K a − P`.
    pub fn residual(&self, a: &NodeField) -> Result<NodeField> {
        let v = self.to_vector(a)?;
        Ok(self.to_field(&(&self.k * v - &self.p)))
    }

    pub fn load(&self) -> NodeField {
        self.to_field(&self.p)
    }

    /// `½ aᵀKa − aᵀP`.
    pub fn functional(&self, a: &NodeField) -> Result<f64> {
        let v = self.to_vector(a)?;
        Ok(0.5 * v.dot(&(&self.k * &v)) - v.dot(&self.p))
    }

    /// `√(eᵀKe)`.
    pub fn energy_norm(&self, e: &NodeField) -> Result<f64> {
        let v = self.to_vector(e)?;
        Ok(v.dot(&(&self.k * &v)).max(0.0).sqrt())
    }

    /// `K` restricted to free rows and columns.
    pub fn free_block(&self) -> DMatrix<f64> {
        let f = &self.free_index;
        DMatrix::from_fn(f.len(), f.len(), |i, j| self.k[(f[i], f[j])])
    }

    pub fn asymmetry(&self) -> f64 {
        let n = self.n_dof();
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in i + 1..n {
                worst = worst.max((self.k[(i, j)] - self.k[(j, i)]).abs());
            }
        }
        worst
    }
}

/// Element matrix contribution `H |J| Bᵀ D B` at one Gauss point, local dofs
/// ordered `(channel, corner)`.
fn element_point_matrix(
    physics: PhysicsKind,
    d: &[f64],
    thickness: f64,
    dx: &[f64; 4],
    dy: &[f64; 4],
    weight: f64,
    ke: &mut [f64],
) {
    match physics {
        PhysicsKind::ScalarDiffusion => {
            let (k11, k12, k21, k22) = if d.len() == 1 {
                (d[0], 0.0, 0.0, d[0])
            } else {
                (d[0], d[1], d[2], d[3])
            };
            for i in 0..4 {
                for j in 0..4 {
                    let v = dx[i] * (k11 * dx[j] + k12 * dy[j]) + dy[i] * (k21 * dx[j] + k22 * dy[j]);
                    ke[i * 4 + j] += weight * v;
                }
            }
        }
        PhysicsKind::PlaneStress => {
            // B: 3×8, column (c, n) = c·4 + n
            let mut b = [[0.0; 8]; 3];
            for n in 0..4 {
                b[0][n] = dx[n];
                b[2][n] = dy[n];
                b[1][4 + n] = dy[n];
                b[2][4 + n] = dx[n];
            }
            let mut db = [[0.0; 8]; 3];
            for r in 0..3 {
                for col in 0..8 {
                    db[r][col] = (0..3).map(|k| d[3 * r + k] * b[k][col]).sum();
                }
            }
            for i in 0..8 {
                for j in 0..8 {
                    let v: f64 = (0..3).map(|r| b[r][i] * db[r][j]).sum();
                    ke[i * 8 + j] += weight * thickness * v;
                }
            }
        }
    }
}

/// Assemble `K` and `P` by explicit element loops and scatter-add.
pub fn assemble_dense(problem: &Problem) -> Result<DenseSystem> {
    let disc = &problem.disc;
    let grid = &disc.grid;
    let [nc, h, w] = disc.node_shape();
    let n_dof = nc * h * w;
    if n_dof > DENSE_DOF_LIMIT {
        return Err(VolError::TooLarge {
            n_dof,
            limit: DENSE_DOF_LIMIT,
        });
    }
    let physics = disc.physics;
    let mat = &problem.material;
    let ne = grid.n_elements();
    let det_j = grid.hx * grid.hy / 4.0;
    let ldof = 4 * nc;
    let mut k = DMatrix::<f64>::zeros(n_dof, n_dof);
    let mut p = DVector::<f64>::zeros(n_dof);
    let source = problem.load.volumetric_gauss()?;

    let mut ke = vec![0.0; ldof * ldof];
    for ey in 0..grid.ny {
        for ex in 0..grid.nx {
            let e = ey * grid.nx + ex;
            let global = |c: usize, n: usize| (c * h + ey + n / 2) * w + ex + n % 2;
            ke.iter_mut().for_each(|v| *v = 0.0);
            for (g, &hw) in disc.rule.weights.iter().enumerate() {
                let mut dx = [0.0; 4];
                let mut dy = [0.0; 4];
                for n in 0..4 {
                    dx[n] = 2.0 / grid.hx * disc.table.grad_r[g][n];
                    dy[n] = 2.0 / grid.hy * disc.table.grad_s[g][n];
                }
                let d = mat.matrix_at(g * ne + e);
                element_point_matrix(physics, &d, problem.thickness, &dx, &dy, hw * det_j, &mut ke);
                if let Some(src) = source {
                    for c in 0..nc {
                        let f = src.get(c, g, ey, ex);
                        for n in 0..4 {
                            p[global(c, n)] += hw * det_j * disc.table.values[g][n] * f;
                        }
                    }
                }
            }
            for ci in 0..nc {
                for ni in 0..4 {
                    let gi = global(ci, ni);
                    for cj in 0..nc {
                        for nj in 0..4 {
                            k[(gi, global(cj, nj))] += ke[(ci * 4 + ni) * ldof + cj * 4 + nj];
                        }
                    }
                }
            }
        }
    }

    let (xi, wi) = gauss_legendre_1d(2)?;
    for nl in &problem.load.neumann {
        let nodes = edge_nodes(disc, nl.edge);
        nl.traction.check(nc, nodes.len())?;
        let len = match nl.edge {
            Edge::Left | Edge::Right => grid.hy,
            Edge::Bottom | Edge::Top => grid.hx,
        };
        for seg in 0..nodes.len() - 1 {
            for (&x, &wq) in xi.iter().zip(&wi) {
                let shape = [(1.0 - x) / 2.0, (1.0 + x) / 2.0];
                for c in 0..nc {
                    let t = shape[0] * nl.traction.at(c, seg) + shape[1] * nl.traction.at(c, seg + 1);
                    for (s, &node) in shape.iter().zip(&[nodes[seg], nodes[seg + 1]]) {
                        p[(c * h + node.0) * w + node.1] += wq * len / 2.0 * t * s;
                    }
                }
            }
        }
    }

    Ok(DenseSystem {
        k,
        p,
        free_index: problem.mask.free_indices(),
        shift: problem.mask.shift.clone(),
    })
}

/// Cholesky solve on the free block; constrained dofs take their shift
/// values.
pub fn dense_solve(sys: &DenseSystem) -> Result<NodeField> {
    let f = &sys.free_index;
    let shift = DVector::from_column_slice(&sys.shift.data);
    let k_shift = &sys.k * &shift;
    let rhs = DVector::from_fn(f.len(), |i, _| sys.p[f[i]] - k_shift[f[i]]);
    let chol = sys.free_block().cholesky().ok_or(VolError::NotPositiveDefinite)?;
    let x = chol.solve(&rhs);
    let mut out = sys.shift.clone();
    for (i, &gi) in f.iter().enumerate() {
        out.data[gi] = x[i];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::GaussField;
    use crate::physics::{problem_factory, ParamKind, ParameterField, ProblemConfig, ProblemKind};
    use approx::assert_abs_diff_eq;

    fn heat(n: usize, q: f64) -> Problem {
        let disc = ProblemKind::Heat.discretization(n).unwrap();
        let src = GaussField::filled(1, 4, n, n, q);
        problem_factory(
            ProblemKind::Heat,
            disc,
            &ParameterField::gauss(ParamKind::Source, src),
            &ProblemConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn unit_laplacian_element() {
        let sys = assemble_dense(&heat(1, 0.0)).unwrap();
        // nodes 0:(0,0) 1:(0,1) 2:(1,0) 3:(1,1)
        assert_abs_diff_eq!(sys.k[(0, 0)], 2.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(sys.k[(0, 1)], -1.0 / 6.0, epsilon = 1e-14);
        assert_abs_diff_eq!(sys.k[(0, 2)], -1.0 / 6.0, epsilon = 1e-14);
        assert_abs_diff_eq!(sys.k[(0, 3)], -1.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn rows_sum_to_zero_and_symmetric() {
        let sys = assemble_dense(&heat(4, 1.0)).unwrap();
        for i in 0..sys.n_dof() {
            assert!(sys.k.row(i).sum().abs() < 1e-12);
        }
        assert!(sys.asymmetry() < 1e-12);
        assert!(sys.free_block().cholesky().is_some());
    }

    #[test]
    fn zero_load_gives_zero_solution() {
        let sys = assemble_dense(&heat(3, 0.0)).unwrap();
        let a = dense_solve(&sys).unwrap();
        assert_eq!(a.max_abs(), 0.0);
    }

    #[test]
    fn direct_solve_defect() {
        let sys = assemble_dense(&heat(6, 1.0)).unwrap();
        let a = dense_solve(&sys).unwrap();
        let r = sys.residual(&a).unwrap();
        let free_r: f64 = sys.free_index.iter().map(|&i| r.data[i].powi(2)).sum::<f64>().sqrt();
        assert!(free_r < 1e-10 * sys.p.norm());
    }

    #[test]
    fn size_guard() {
        let disc = ProblemKind::ElasticityA.discretization(100).unwrap();
        let theta = ParameterField::gauss(ParamKind::FiberAngle, GaussField::zeros(1, 4, 100, 100));
        let p = problem_factory(ProblemKind::ElasticityA, disc, &theta, &ProblemConfig::default()).unwrap();
        assert!(matches!(assemble_dense(&p), Err(VolError::TooLarge { .. })));
    }
}
