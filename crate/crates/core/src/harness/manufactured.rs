//! Smooth exact solution of the coupled system and the data it induces.
//!
//! The displacement is switched on by a smooth step in time and the
//! potential grows like `t^2`. Sources are written out by hand from the
//! strong form; `tests::strong_form_residual_vanishes` checks them against
//! finite differences.

use nalgebra::{Matrix3, Vector3};

use crate::materials::{
    benchmark_lambda, benchmark_mu, piezo_apply, piezo_transpose_apply, MaterialSet,
};
use crate::mesh::Point3;

/// Smooth step: 0 for `s <= 0`, 1 for `s >= 1`, C^4 in between.
pub fn smooth_step(s: f64) -> f64 {
    smooth_step_derivs(s).0
}

/// `(H, H', H'')` at `s`.
pub fn smooth_step_derivs(s: f64) -> (f64, f64, f64) {
    if s <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    if s >= 1.0 {
        return (1.0, 0.0, 0.0);
    }
    // s^5 (1 - 5w + 15w^2 - 35w^3 + 70w^4 - 126w^5), w = s - 1, expanded
    const C: [f64; 6] = [252.0, -1050.0, 1800.0, -1575.0, 700.0, -126.0];
    let (mut h, mut d1, mut d2) = (0.0, 0.0, 0.0);
    for (i, c) in C.iter().enumerate() {
        let p = (5 + i) as f64;
        h += c * s.powi(5 + i as i32);
        d1 += c * p * s.powi(4 + i as i32);
        d2 += c * p * (p - 1.0) * s.powi(3 + i as i32);
    }
    (h, d1, d2)
}

/// Value, gradient `G[i][j] = dU_i/dx_j` and Hessians of the spatial
/// displacement profile.
fn displacement_profile(p: &Point3) -> ([f64; 3], Matrix3<f64>, [Matrix3<f64>; 3]) {
    use std::f64::consts::PI;
    let [x, y, z] = *p;
    let (sx, cx) = (PI * x).sin_cos();
    let (sy, cy) = (PI * y).sin_cos();
    let (sz, cz) = (PI * z).sin_cos();
    let u1 = cx * sy * cz;
    let g1 = [-PI * sx * sy * cz, PI * cx * cy * cz, -PI * cx * sy * sz];
    let p2 = PI * PI;
    let h1 = Matrix3::new(
        -p2 * u1,
        -p2 * sx * cy * cz,
        p2 * sx * sy * sz,
        -p2 * sx * cy * cz,
        -p2 * u1,
        -p2 * cx * cy * sz,
        p2 * sx * sy * sz,
        -p2 * cx * cy * sz,
        -p2 * u1,
    );

    let u2 = 5.0 * x * x * y * z + 4.0 * x * y * y * z + 3.0 * x * y * z * z + 17.0;
    let g2 = [
        10.0 * x * y * z + 4.0 * y * y * z + 3.0 * y * z * z,
        5.0 * x * x * z + 8.0 * x * y * z + 3.0 * x * z * z,
        5.0 * x * x * y + 4.0 * x * y * y + 6.0 * x * y * z,
    ];
    let (hxy, hxz, hyz) = (
        10.0 * x * z + 8.0 * y * z + 3.0 * z * z,
        10.0 * x * y + 4.0 * y * y + 6.0 * y * z,
        5.0 * x * x + 8.0 * x * y + 6.0 * x * z,
    );
    let h2 = Matrix3::new(
        10.0 * y * z,
        hxy,
        hxz,
        hxy,
        8.0 * x * z,
        hyz,
        hxz,
        hyz,
        6.0 * x * y,
    );

    let (s2x, c2x) = (2.0 * x).sin_cos();
    let (s3y, c3y) = (3.0 * y).sin_cos();
    let (sz1, cz1) = z.sin_cos();
    let u3 = c2x * c3y * cz1;
    let g3 = [
        -2.0 * s2x * c3y * cz1,
        -3.0 * c2x * s3y * cz1,
        -c2x * c3y * sz1,
    ];
    let (kxy, kxz, kyz) = (
        6.0 * s2x * s3y * cz1,
        2.0 * s2x * c3y * sz1,
        3.0 * c2x * s3y * sz1,
    );
    let h3 = Matrix3::new(-4.0 * u3, kxy, kxz, kxy, -9.0 * u3, kyz, kxz, kyz, -u3);

    let grad = Matrix3::new(
        g1[0], g1[1], g1[2], g2[0], g2[1], g2[2], g3[0], g3[1], g3[2],
    );
    ([u1, u2, u3], grad, [h1, h2, h3])
}

/// Value, gradient and Hessian of the spatial potential profile (zero mean
/// over the unit cube).
fn potential_profile(p: &Point3) -> (f64, Vector3<f64>, Matrix3<f64>) {
    let [x, y, z] = *p;
    let v = x.powi(3) + x.powi(3) * y - 3.0 * x * y * y * z - z.powi(3) / 3.0 - 1.0 / 24.0;
    let g = Vector3::new(
        3.0 * x * x + 3.0 * x * x * y - 3.0 * y * y * z,
        x.powi(3) - 6.0 * x * y * z,
        -3.0 * x * y * y - z * z,
    );
    let (hxy, hxz, hyz) = (3.0 * x * x - 6.0 * y * z, -3.0 * y * y, -6.0 * x * y);
    let h = Matrix3::new(
        6.0 * x + 6.0 * x * y,
        hxy,
        hxz,
        hxy,
        -6.0 * x * z,
        hyz,
        hxz,
        hyz,
        -2.0 * z,
    );
    (v, g, h)
}

/// Third-order coupling tensor `e_ijk` with `(E b)_ij = e_ijk b_k`.
pub fn coupling_tensor(materials: &MaterialSet, x: &Point3) -> [[[f64; 3]; 3]; 3] {
    let ev = materials.piezo_voigt(x);
    let mut e = [[[0.0; 3]; 3]; 3];
    for k in 0..3 {
        let mut b = Vector3::zeros();
        b[k] = 1.0;
        let s = piezo_apply(&ev, &b);
        for i in 0..3 {
            for j in 0..3 {
                e[i][j][k] = s[(i, j)];
            }
        }
    }
    e
}

/// Exact solution of the coupled system together with the data it induces.
pub trait ExactSolution: Sync {
    fn materials(&self) -> &MaterialSet;
    /// Displacement and its gradient `G[i][j] = du_i/dx_j`.
    fn displacement(&self, x: &Point3, t: f64) -> ([f64; 3], Matrix3<f64>);
    fn velocity(&self, x: &Point3, t: f64) -> [f64; 3];
    /// Potential (zero mean over the domain) and its gradient.
    fn potential(&self, x: &Point3, t: f64) -> (f64, Vector3<f64>);
    /// `rho u_tt - div sigma`.
    fn body_force(&self, x: &Point3, t: f64) -> [f64; 3];
    /// `-div d`.
    fn charge_source(&self, x: &Point3, t: f64) -> f64;
    /// `sigma nu`.
    fn traction(&self, x: &Point3, normal: &Vector3<f64>, t: f64) -> [f64; 3];
    /// `d . nu`.
    fn flux(&self, x: &Point3, normal: &Vector3<f64>, t: f64) -> f64;
}

/// Manufactured solution on the unit cube with the benchmark materials.
///
/// Requires spatially constant piezoelectric and dielectric tensors and
/// isotropic stiffness with the benchmark Lamé fields.
pub struct ManufacturedCase {
    pub materials: MaterialSet,
}

impl Default for ManufacturedCase {
    fn default() -> Self {
        Self::new()
    }
}

impl ManufacturedCase {
    pub fn new() -> Self {
        Self {
            materials: MaterialSet::benchmark(),
        }
    }

    fn switch(t: f64) -> (f64, f64, f64) {
        let (h, d1, d2) = smooth_step_derivs(2.0 * t - 0.4);
        (h, 2.0 * d1, 4.0 * d2)
    }

    fn lame(x: &Point3) -> (f64, Vector3<f64>, f64, Vector3<f64>) {
        let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
        let dl = -2.0 / (1.0 + r2).powi(2);
        let s = -(x[0] * x[1] * x[2]).sin();
        (
            benchmark_lambda(x),
            Vector3::new(dl * x[0], dl * x[1], dl * x[2]),
            benchmark_mu(x),
            Vector3::new(s * x[1] * x[2], s * x[0] * x[2], s * x[0] * x[1]),
        )
    }

    /// Stress `C eps(u) + E grad psi`.
    pub fn stress(&self, x: &Point3, t: f64) -> Matrix3<f64> {
        let (_, g) = self.displacement(x, t);
        let (_, gp) = self.potential(x, t);
        let eps = (g + g.transpose()) * 0.5;
        let (lambda, _, mu, _) = Self::lame(x);
        Matrix3::identity() * (lambda * eps.trace())
            + eps * (2.0 * mu)
            + piezo_apply(&self.materials.piezo_voigt(x), &gp)
    }

    /// Electric displacement `E^T eps(u) - kappa grad psi`.
    pub fn electric_displacement(&self, x: &Point3, t: f64) -> Vector3<f64> {
        let (_, g) = self.displacement(x, t);
        let (_, gp) = self.potential(x, t);
        piezo_transpose_apply(&self.materials.piezo_voigt(x), &g)
            - self.materials.dielectric_at(x) * gp
    }
}

impl ExactSolution for ManufacturedCase {
    fn materials(&self) -> &MaterialSet {
        &self.materials
    }

    fn displacement(&self, x: &Point3, t: f64) -> ([f64; 3], Matrix3<f64>) {
        let (h, _, _) = Self::switch(t);
        let (u, g, _) = displacement_profile(x);
        (u.map(|v| h * v), g * h)
    }

    fn velocity(&self, x: &Point3, t: f64) -> [f64; 3] {
        let (_, h1, _) = Self::switch(t);
        displacement_profile(x).0.map(|v| h1 * v)
    }

    fn potential(&self, x: &Point3, t: f64) -> (f64, Vector3<f64>) {
        let (v, g, _) = potential_profile(x);
        (t * t * v, g * (t * t))
    }

    fn body_force(&self, x: &Point3, t: f64) -> [f64; 3] {
        let (h, _, h2) = Self::switch(t);
        let (u, g, hess) = displacement_profile(x);
        let (_, _, hp) = potential_profile(x);
        let (lambda, dlambda, mu, dmu) = Self::lame(x);
        let e = coupling_tensor(&self.materials, x);
        let div_u = g.trace();
        let eps = (g + g.transpose()) * 0.5;
        let rho = self.materials.density(x);
        let mut f = [0.0; 3];
        for i in 0..3 {
            let grad_div: f64 = (0..3).map(|j| hess[j][(i, j)]).sum();
            let lap = hess[i].trace();
            let mut div_el = dlambda[i] * div_u + lambda * grad_div + mu * (lap + grad_div);
            for j in 0..3 {
                div_el += 2.0 * dmu[j] * eps[(i, j)];
            }
            let mut div_pz = 0.0;
            for j in 0..3 {
                for k in 0..3 {
                    div_pz += e[i][j][k] * hp[(j, k)];
                }
            }
            f[i] = rho * h2 * u[i] - h * div_el - t * t * div_pz;
        }
        f
    }

    fn charge_source(&self, x: &Point3, t: f64) -> f64 {
        let (h, _, _) = Self::switch(t);
        let (_, _, hess) = displacement_profile(x);
        let (_, _, hp) = potential_profile(x);
        let e = coupling_tensor(&self.materials, x);
        let kappa = self.materials.dielectric_at(x);
        let mut div_pz = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    div_pz += e[i][j][k] * hess[i][(j, k)];
                }
            }
        }
        let div_k: f64 = (0..3)
            .flat_map(|k| (0..3).map(move |l| (k, l)))
            .map(|(k, l)| kappa[(k, l)] * hp[(k, l)])
            .sum();
        -(h * div_pz - t * t * div_k)
    }

    fn traction(&self, x: &Point3, normal: &Vector3<f64>, t: f64) -> [f64; 3] {
        let s = self.stress(x, t) * normal;
        [s[0], s[1], s[2]]
    }

    fn flux(&self, x: &Point3, normal: &Vector3<f64>, t: f64) -> f64 {
        self.electric_displacement(x, t).dot(normal)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fespace::quadrature::QuadratureRule;

    fn fd_gradient(f: impl Fn(&Point3) -> f64, x: &Point3, h: f64) -> [f64; 3] {
        let mut g = [0.0; 3];
        for k in 0..3 {
            let (mut a, mut b) = (*x, *x);
            a[k] += h;
            b[k] -= h;
            g[k] = (f(&a) - f(&b)) / (2.0 * h);
        }
        g
    }

    #[test]
    fn smooth_step_matches_definition() {
        for s in [0.1, 0.37, 0.5, 0.9] {
            let w: f64 = s - 1.0;
            let direct = s.powi(5)
                * (1.0 - 5.0 * w + 15.0 * w * w - 35.0 * w.powi(3) + 70.0 * w.powi(4)
                    - 126.0 * w.powi(5));
            assert!((smooth_step(s) - direct).abs() < 1e-13);
        }
        assert_eq!(smooth_step(-0.5), 0.0);
        assert_eq!(smooth_step(1.5), 1.0);
        // 2^-5 (1 + 5/2 + 15/4 + 35/8 + 70/16 + 126/32)
        assert!((smooth_step(0.5) - 0.623046875).abs() < 1e-14);
        // C^2 joins
        for s in [1e-7, 1.0 - 1e-7] {
            let (_, d1, d2) = smooth_step_derivs(s);
            assert!(d1.abs() < 1e-20_f64.max(1e-9) && d2.abs() < 1e-6);
        }
    }

    #[test]
    fn switch_derivatives_match_differences() {
        let h = 1e-5;
        for t in [0.25, 0.4, 0.55] {
            let (_, d1, d2) = ManufacturedCase::switch(t);
            let f = |s: f64| ManufacturedCase::switch(s).0;
            assert!((d1 - (f(t + h) - f(t - h)) / (2.0 * h)).abs() < 1e-6);
            assert!((d2 - (f(t + h) - 2.0 * f(t) + f(t - h)) / (h * h)).abs() < 1e-3);
        }
    }

    #[test]
    fn profiles_match_differences() {
        let x = [0.31, 0.72, 0.45];
        let h = 1e-6;
        let (_, g, hess) = displacement_profile(&x);
        for i in 0..3 {
            let fd = fd_gradient(|p| displacement_profile(p).0[i], &x, h);
            for j in 0..3 {
                assert!((g[(i, j)] - fd[j]).abs() < 1e-7, "grad u{i}");
                let fdh = fd_gradient(|p| displacement_profile(p).1[(i, j)], &x, h);
                for k in 0..3 {
                    assert!((hess[i][(j, k)] - fdh[k]).abs() < 1e-6, "hess u{i}");
                }
            }
        }
        let (_, gp, hp) = potential_profile(&x);
        let fd = fd_gradient(|p| potential_profile(p).0, &x, h);
        for j in 0..3 {
            assert!((gp[j] - fd[j]).abs() < 1e-7);
            let fdh = fd_gradient(|p| potential_profile(p).1[j], &x, h);
            for k in 0..3 {
                assert!((hp[(j, k)] - fdh[k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn potential_has_zero_mean_and_state_starts_at_rest() {
        let case = ManufacturedCase::new();
        let rule = QuadratureRule::tetrahedron(6);
        let mesh = crate::mesh::build_cube_mesh(1, |_| false);
        let mut mean = 0.0;
        for e in 0..mesh.tets().len() {
            let geo = crate::fespace::space::ElementGeometry::new(&mesh, e).unwrap();
            for (q, xi) in rule.points.iter().enumerate() {
                mean += rule.weights[q] * geo.det * potential_profile(&geo.map(xi)).0;
            }
        }
        assert!(mean.abs() < 1e-14, "mean {mean}");
        let x = [0.3, 0.6, 0.9];
        assert_eq!(case.displacement(&x, 0.0).0, [0.0; 3]);
        assert_eq!(case.velocity(&x, 0.1), [0.0; 3]);
        assert_eq!(case.potential(&x, 0.0).0, 0.0);
    }

    /// Applies the strong-form operators to the exact fields numerically.
    #[test]
    fn strong_form_residual_vanishes() {
        let case = ManufacturedCase::new();
        let h = 1e-5;
        for (x, t) in [
            ([0.2, 0.5, 0.7], 0.45),
            ([0.9, 0.1, 0.35], 0.3),
            ([0.55, 0.8, 0.15], 1.0),
        ] {
            let mut div_sigma = [0.0; 3];
            for i in 0..3 {
                for j in 0..3 {
                    div_sigma[i] += fd_gradient(|p| case.stress(p, t)[(i, j)], &x, h)[j];
                }
            }
            let dt = 1e-4;
            let acc: Vec<f64> = (0..3)
                .map(|i| {
                    let u = |s: f64| case.displacement(&x, s).0[i];
                    (u(t + dt) - 2.0 * u(t) + u(t - dt)) / (dt * dt)
                })
                .collect();
            let f = case.body_force(&x, t);
            let rho = case.materials.density(&x);
            for i in 0..3 {
                let residual = rho * acc[i] - div_sigma[i] - f[i];
                assert!(
                    residual.abs() < 1e-4 * (1.0 + f[i].abs()),
                    "momentum {i}: {residual:e} at {x:?}"
                );
            }
            let div_d: f64 = (0..3)
                .map(|k| fd_gradient(|p| case.electric_displacement(p, t)[k], &x, h)[k])
                .sum();
            let fs = case.charge_source(&x, t);
            assert!(
                (div_d + fs).abs() < 1e-4 * (1.0 + fs.abs()),
                "charge: {:e}",
                div_d + fs
            );
        }
    }
}
