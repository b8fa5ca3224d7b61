//! Fiber-angle fields for the variable-stiffness plates, sampled at Gauss
//! points.

use std::f64::consts::FRAC_PI_2;

use crate::error::{invalid, Result};
use crate::field::GaussField;
use crate::mesh::Discretization;
use crate::physics::{ParamKind, ParameterField};

fn check_angle(t: f64) -> Result<()> {
    if !t.is_finite() || t.abs() > FRAC_PI_2 {
        return invalid(format!("fiber angle {t} outside [-pi/2, pi/2]"));
    }
    Ok(())
}

fn gauss_field_from(disc: &Discretization, f: impl Fn(f64, f64) -> f64) -> GaussField {
    let g = &disc.grid;
    let mut out = GaussField::zeros(1, disc.n_gauss(), g.ny, g.nx);
    for (slot, &[r, s]) in disc.rule.points.iter().enumerate() {
        for ey in 0..g.ny {
            for ex in 0..g.nx {
                let [x, y] = g.map_point(ey, ex, r, s);
                out.set(0, slot, ey, ex, f(x, y));
            }
        }
    }
    out
}

/// `θ = T₀ + (T₁ − T₀)·|x − x_c| / (W/2)` with `x_c` the plate center and `W`
/// its width.
pub fn sample_fiber_linear(t0: f64, t1: f64, disc: &Discretization) -> Result<ParameterField> {
    check_angle(t0)?;
    check_angle(t1)?;
    let g = &disc.grid;
    let half = g.lx() / 2.0;
    let xc = g.origin[0] + half;
    let field = gauss_field_from(disc, |x, _| t0 + (t1 - t0) * (x - xc).abs() / half);
    Ok(ParameterField::gauss(ParamKind::FiberAngle, field))
}

/// Clamped uniform knot vector for `n` cubic control points on `[0, 1]`.
pub fn clamped_knots(n: usize) -> Vec<f64> {
    let inner = n - 3;
    let mut k = vec![0.0; 4];
    for i in 1..inner {
        k.push(i as f64 / inner as f64);
    }
    k.extend([1.0; 4]);
    k
}

/// Cubic B-spline basis values at `u ∈ [0, 1]` by the Cox–de Boor recursion.
pub fn cubic_basis(knots: &[f64], n: usize, u: f64) -> Vec<f64> {
    // half-open spans, with the last span closed at u = 1
    let m = knots.len() - 1;
    let mut b: Vec<f64> = (0..m)
        .map(|i| {
            let inside = knots[i] <= u && u < knots[i + 1];
            let last = u >= 1.0 && knots[i] < knots[i + 1] && knots[i + 1] >= 1.0;
            if inside || last {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    for p in 1..=3 {
        let mut next = vec![0.0; m - p];
        for i in 0..m - p {
            let d1 = knots[i + p] - knots[i];
            let d2 = knots[i + p + 1] - knots[i + 1];
            let left = if d1 > 0.0 { (u - knots[i]) / d1 * b[i] } else { 0.0 };
            let right = if d2 > 0.0 {
                (knots[i + p + 1] - u) / d2 * b[i + 1]
            } else {
                0.0
            };
            next[i] = left + right;
        }
        b = next;
    }
    debug_assert_eq!(b.len(), n);
    b
}

/// Clamped cubic B-spline surface at parametric `(u, v) ∈ [0, 1]²`, with
/// `control[j][i]` weighted by `B_j(v)·B_i(u)`. The grid must be square with
/// at least 4 points per side.
pub fn bspline_surface(control: &[Vec<f64>], u: f64, v: f64) -> f64 {
    let n = control.len();
    let knots = clamped_knots(n);
    let bu = cubic_basis(&knots, n, u.clamp(0.0, 1.0));
    let bv = cubic_basis(&knots, n, v.clamp(0.0, 1.0));
    let mut s = 0.0;
    for (j, row) in control.iter().enumerate() {
        for (i, &c) in row.iter().enumerate() {
            s += bv[j] * bu[i] * c;
        }
    }
    s
}

/// Clamped cubic B-spline surface over the plate with `control[j][i]`
/// (row `j` along `y`, column `i` along `x`), evaluated at Gauss points.
pub fn sample_fiber_bspline(control: &[Vec<f64>], disc: &Discretization) -> Result<ParameterField> {
    let n = control.len();
    if n < 4 || control.iter().any(|row| row.len() != n) {
        return invalid("B-spline control grid must be n×n with n ≥ 4");
    }
    for &t in control.iter().flatten() {
        check_angle(t)?;
    }
    let g = &disc.grid;
    let field = gauss_field_from(disc, |x, y| {
        let u = (x - g.origin[0]) / g.lx();
        let v = (y - g.origin[1]) / g.ly();
        // round-off can step just past ±π/2 when control points sit there
        bspline_surface(control, u, v).clamp(-FRAC_PI_2, FRAC_PI_2)
    });
    Ok(ParameterField::gauss(ParamKind::FiberAngle, field))
}
