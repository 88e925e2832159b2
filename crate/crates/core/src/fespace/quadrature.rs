//! Collapsed-coordinate Gauss-Jacobi rules on the reference simplices.

use nalgebra::{DMatrix, SymmetricEigen};

/// Gauss-Jacobi nodes and weights on `[0, 1]` for the weight `(1 - u)^a`.
pub fn gauss_jacobi_unit(n: usize, a: u32) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let a = a as f64;
    // monic recurrence for weight (1-x)^a on [-1, 1]
    let alpha = |k: usize| -> f64 {
        let s = 2.0 * k as f64 + a;
        if k == 0 {
            -a / (a + 2.0)
        } else {
            -(a * a) / (s * (s + 2.0))
        }
    };
    let beta = |k: usize| -> f64 {
        let k = k as f64;
        let s = 2.0 * k + a;
        4.0 * k * (k + a) * k * (k + a) / (s * s * (s + 1.0) * (s - 1.0))
    };
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        jac[(k, k)] = alpha(k);
        if k + 1 < n {
            let b = beta(k + 1).sqrt();
            jac[(k, k + 1)] = b;
            jac[(k + 1, k)] = b;
        }
    }
    let mu0 = 2f64.powf(a + 1.0) / (a + 1.0);
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
    let scale = 0.5f64.powf(a + 1.0);
    pairs
        .into_iter()
        .map(|(x, w)| (0.5 * (1.0 + x), w * scale))
        .unzip()
}

/// Quadrature rule on the reference tetrahedron
/// `{xi >= 0, xi_1 + xi_2 + xi_3 <= 1}`.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub exactness: usize,
}

impl QuadratureRule {
    /// Conical-product rule exact for polynomials of total degree `degree`.
    pub fn tetrahedron(degree: usize) -> Self {
        let n = degree / 2 + 1;
        let (u, wu) = gauss_jacobi_unit(n, 2);
        let (v, wv) = gauss_jacobi_unit(n, 1);
        let (w, ww) = gauss_jacobi_unit(n, 0);
        let mut points = Vec::with_capacity(n * n * n);
        let mut weights = Vec::with_capacity(n * n * n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let x = u[i];
                    let y = v[j] * (1.0 - u[i]);
                    let z = w[k] * (1.0 - u[i]) * (1.0 - v[j]);
                    points.push([x, y, z]);
                    weights.push(wu[i] * wv[j] * ww[k]);
                }
            }
        }
        Self {
            points,
            weights,
            exactness: 2 * n - 1,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Rule on the reference triangle `{xi >= 0, xi_1 + xi_2 <= 1}`.
#[derive(Clone, Debug)]
pub struct TriangleRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub exactness: usize,
}

impl TriangleRule {
    pub fn new(degree: usize) -> Self {
        let n = degree / 2 + 1;
        let (u, wu) = gauss_jacobi_unit(n, 1);
        let (v, wv) = gauss_jacobi_unit(n, 0);
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                points.push([u[i], v[j] * (1.0 - u[i])]);
                weights.push(wu[i] * wv[j]);
            }
        }
        Self {
            points,
            weights,
            exactness: 2 * n - 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    #[test]
    fn tet_monomials_are_exact() {
        for degree in 0..=9 {
            let rule = QuadratureRule::tetrahedron(degree);
            assert!(rule.exactness >= degree);
            for a in 0..=degree as u32 {
                for b in 0..=(degree as u32 - a) {
                    for c in 0..=(degree as u32 - a - b) {
                        let exact =
                            factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 3);
                        let got: f64 = rule
                            .points
                            .iter()
                            .zip(&rule.weights)
                            .map(|(p, w)| {
                                w * p[0].powi(a as i32) * p[1].powi(b as i32) * p[2].powi(c as i32)
                            })
                            .sum();
                        assert!(
                            (got - exact).abs() < 1e-14,
                            "x^{a} y^{b} z^{c}: {got} vs {exact}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn triangle_monomials_are_exact() {
        for degree in 0..=9 {
            let rule = TriangleRule::new(degree);
            for a in 0..=degree as u32 {
                for b in 0..=(degree as u32 - a) {
                    let exact = factorial(a) * factorial(b) / factorial(a + b + 2);
                    let got: f64 = rule
                        .points
                        .iter()
                        .zip(&rule.weights)
                        .map(|(p, w)| w * p[0].powi(a as i32) * p[1].powi(b as i32))
                        .sum();
                    assert!((got - exact).abs() < 1e-14);
                }
            }
        }
    }
}
