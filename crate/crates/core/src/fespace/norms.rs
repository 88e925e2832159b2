//! Error norms of finite element functions against exact fields.

use nalgebra::{Matrix3, Vector3};

use super::assembly::Tabulation;
use super::quadrature::QuadratureRule;
use super::space::{ElementGeometry, ScalarSpace, VectorSpace};
use crate::mesh::Point3;

/// `(||u - u_h||_L2, |u - u_h|_H1)` for a full interleaved vector field.
///
/// `exact` returns the value and the gradient `G[i][j] = du_i/dx_j`.
pub fn vector_errors(
    space: &VectorSpace,
    full: &[f64],
    rule: &QuadratureRule,
    exact: impl Fn(&Point3) -> ([f64; 3], Matrix3<f64>),
) -> (f64, f64) {
    let scalar = space.scalar();
    let mesh = scalar.mesh();
    let tab = Tabulation::new(scalar.basis(), rule);
    let (mut l2, mut h1) = (0.0, 0.0);
    for e in 0..mesh.tets().len() {
        let geo = ElementGeometry::new(mesh, e).expect("valid mesh");
        let dofs = scalar.cell_dofs(e);
        for (q, xi) in rule.points.iter().enumerate() {
            let x = geo.map(xi);
            let w = rule.weights[q] * geo.det;
            let mut val = [0.0; 3];
            let mut grad = Matrix3::zeros();
            for (i, &d) in dofs.iter().enumerate() {
                let g = geo.gradient(&tab.derivs[q][i]);
                for a in 0..3 {
                    let c = full[3 * d + a];
                    val[a] += c * tab.values[q][i];
                    grad.set_row(a, &(grad.row(a) + g.transpose() * c));
                }
            }
            let (uv, ug) = exact(&x);
            l2 += w * (0..3).map(|a| (uv[a] - val[a]).powi(2)).sum::<f64>();
            h1 += w * (ug - grad).norm_squared();
        }
    }
    (l2.sqrt(), h1.sqrt())
}

/// `(||psi - psi_h||_L2, |psi - psi_h|_H1)`.
pub fn scalar_errors(
    space: &ScalarSpace,
    coeffs: &[f64],
    rule: &QuadratureRule,
    exact: impl Fn(&Point3) -> (f64, Vector3<f64>),
) -> (f64, f64) {
    let mesh = space.mesh();
    let tab = Tabulation::new(space.basis(), rule);
    let (mut l2, mut h1) = (0.0, 0.0);
    for e in 0..mesh.tets().len() {
        let geo = ElementGeometry::new(mesh, e).expect("valid mesh");
        let dofs = space.cell_dofs(e);
        for (q, xi) in rule.points.iter().enumerate() {
            let x = geo.map(xi);
            let w = rule.weights[q] * geo.det;
            let mut val = 0.0;
            let mut grad = Vector3::zeros();
            for (i, &d) in dofs.iter().enumerate() {
                val += coeffs[d] * tab.values[q][i];
                grad += geo.gradient(&tab.derivs[q][i]) * coeffs[d];
            }
            let (pv, pg) = exact(&x);
            l2 += w * (pv - val).powi(2);
            h1 += w * (pg - grad).norm_squared();
        }
    }
    (l2.sqrt(), h1.sqrt())
}

/// `||f||_rho` of a vector field given pointwise (no discretization).
pub fn weighted_field_norm(
    space: &ScalarSpace,
    rule: &QuadratureRule,
    rho: impl Fn(&Point3) -> f64,
    f: impl Fn(&Point3) -> [f64; 3],
) -> f64 {
    let mesh = space.mesh();
    let mut acc = 0.0;
    for e in 0..mesh.tets().len() {
        let geo = ElementGeometry::new(mesh, e).expect("valid mesh");
        for (q, xi) in rule.points.iter().enumerate() {
            let x = geo.map(xi);
            let v = f(&x);
            acc += rule.weights[q] * geo.det * rho(&x) * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        }
    }
    acc.sqrt()
}
