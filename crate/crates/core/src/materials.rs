//! Constitutive fields in Voigt notation.
//!
//! Strains use the engineering convention `(e11, e22, e33, 2e23, 2e13, 2e12)`
//! and stresses the plain one `(s11, s22, s33, s23, s13, s12)`, so that
//! `strain . stress` equals the Frobenius product of the full tensors.

use std::sync::Arc;

use nalgebra::{Matrix3, Matrix6, Matrix6x3, SymmetricEigen, Vector3, Vector6};

use crate::mesh::Point3;

pub type ScalarField = Arc<dyn Fn(&Point3) -> f64 + Send + Sync>;
pub type StiffnessField = Arc<dyn Fn(&Point3) -> Matrix6<f64> + Send + Sync>;
pub type PiezoField = Arc<dyn Fn(&Point3) -> Matrix6x3<f64> + Send + Sync>;
pub type DielectricField = Arc<dyn Fn(&Point3) -> Matrix3<f64> + Send + Sync>;

/// Voigt index of the symmetric pair `(i, j)`, zero based.
pub const fn voigt_index(i: usize, j: usize) -> usize {
    match (i, j) {
        (0, 0) => 0,
        (1, 1) => 1,
        (2, 2) => 2,
        (1, 2) | (2, 1) => 3,
        (0, 2) | (2, 0) => 4,
        _ => 5,
    }
}

/// Engineering-shear Voigt strain of a displacement gradient `G[i][j] = du_i/dx_j`.
pub fn voigt_strain(grad: &Matrix3<f64>) -> Vector6<f64> {
    Vector6::new(
        grad[(0, 0)],
        grad[(1, 1)],
        grad[(2, 2)],
        grad[(1, 2)] + grad[(2, 1)],
        grad[(0, 2)] + grad[(2, 0)],
        grad[(0, 1)] + grad[(1, 0)],
    )
}

/// Symmetric matrix from a stress-convention Voigt vector.
pub fn voigt_to_matrix(s: &Vector6<f64>) -> Matrix3<f64> {
    Matrix3::new(s[0], s[5], s[4], s[5], s[1], s[3], s[4], s[3], s[2])
}

/// Stress-convention Voigt vector of a symmetric matrix.
pub fn matrix_to_voigt(a: &Matrix3<f64>) -> Vector6<f64> {
    Vector6::new(
        a[(0, 0)],
        a[(1, 1)],
        a[(2, 2)],
        a[(1, 2)],
        a[(0, 2)],
        a[(0, 1)],
    )
}

/// Isotropic Lamé fields: `C e = 2 mu e + lambda tr(e) I`.
#[derive(Clone)]
pub struct IsotropicElasticity {
    pub lambda: ScalarField,
    pub mu: ScalarField,
}

impl IsotropicElasticity {
    pub fn constant(lambda: f64, mu: f64) -> Self {
        Self {
            lambda: Arc::new(move |_| lambda),
            mu: Arc::new(move |_| mu),
        }
    }

    pub fn voigt(&self, x: &Point3) -> Matrix6<f64> {
        isotropic_voigt((self.lambda)(x), (self.mu)(x))
    }
}

pub fn isotropic_voigt(lambda: f64, mu: f64) -> Matrix6<f64> {
    let mut c = Matrix6::zeros();
    for i in 0..3 {
        for j in 0..3 {
            c[(i, j)] = lambda;
        }
        c[(i, i)] += 2.0 * mu;
        c[(i + 3, i + 3)] = mu;
    }
    c
}

#[derive(Clone)]
pub enum Stiffness {
    Isotropic(IsotropicElasticity),
    General(StiffnessField),
}

impl Stiffness {
    pub fn voigt(&self, x: &Point3) -> Matrix6<f64> {
        match self {
            Stiffness::Isotropic(iso) => iso.voigt(x),
            Stiffness::General(f) => f(x),
        }
    }
}

/// Density, stiffness, piezoelectric coupling and permittivity fields.
#[derive(Clone)]
pub struct MaterialSet {
    pub rho: ScalarField,
    pub stiffness: Stiffness,
    pub piezo: PiezoField,
    pub dielectric: DielectricField,
}

/// Piezoelectric matrix of the benchmark preset, stored transposed (3x6)
/// row by row.
pub const BENCHMARK_PIEZO_T: [[f64; 6]; 3] = [
    [2.0, 2.0, 3.0, 5.0, 2.0, 3.0],
    [1.0, 2.0, 6.0, 3.0, 2.0, 1.0],
    [4.0, 1.0, 3.0, 3.0, 1.0, 3.0],
];

pub const BENCHMARK_DIELECTRIC: [[f64; 3]; 3] =
    [[19.0, 8.0, 7.0], [8.0, 19.0, 5.0], [7.0, 5.0, 17.0]];

pub fn benchmark_density(x: &Point3) -> f64 {
    1.0 + x[0].abs() + x[1].abs()
}

pub fn benchmark_lambda(x: &Point3) -> f64 {
    1.0 + 1.0 / (1.0 + x[0] * x[0] + x[1] * x[1] + x[2] * x[2])
}

pub fn benchmark_mu(x: &Point3) -> f64 {
    3.0 + (x[0] * x[1] * x[2]).cos()
}

pub fn benchmark_piezo() -> Matrix6x3<f64> {
    Matrix6x3::from_fn(|i, j| BENCHMARK_PIEZO_T[j][i])
}

pub fn benchmark_dielectric() -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| BENCHMARK_DIELECTRIC[i][j])
}

impl MaterialSet {
    /// The non-homogeneous benchmark preset used by the verification
    /// experiments. The tensors are chosen for testing, not physical realism.
    pub fn benchmark() -> Self {
        let e = benchmark_piezo();
        let k = benchmark_dielectric();
        Self {
            rho: Arc::new(benchmark_density),
            stiffness: Stiffness::Isotropic(IsotropicElasticity {
                lambda: Arc::new(benchmark_lambda),
                mu: Arc::new(benchmark_mu),
            }),
            piezo: Arc::new(move |_| e),
            dielectric: Arc::new(move |_| k),
        }
    }

    /// Spatially constant material.
    pub fn constant(
        rho: f64,
        lambda: f64,
        mu: f64,
        piezo: Matrix6x3<f64>,
        dielectric: Matrix3<f64>,
    ) -> Self {
        Self {
            rho: Arc::new(move |_| rho),
            stiffness: Stiffness::Isotropic(IsotropicElasticity::constant(lambda, mu)),
            piezo: Arc::new(move |_| piezo),
            dielectric: Arc::new(move |_| dielectric),
        }
    }

    /// Copy with the piezoelectric coupling scaled by `factor`.
    pub fn with_piezo_scale(&self, factor: f64) -> Self {
        let piezo = self.piezo.clone();
        Self {
            piezo: Arc::new(move |x| piezo(x) * factor),
            ..self.clone()
        }
    }

    pub fn density(&self, x: &Point3) -> f64 {
        (self.rho)(x)
    }

    pub fn stiffness_voigt(&self, x: &Point3) -> Matrix6<f64> {
        self.stiffness.voigt(x)
    }

    pub fn piezo_voigt(&self, x: &Point3) -> Matrix6x3<f64> {
        (self.piezo)(x)
    }

    pub fn dielectric_at(&self, x: &Point3) -> Matrix3<f64> {
        (self.dielectric)(x)
    }

    /// Checks symmetry/positivity contracts at `x`.
    pub fn check_at(&self, x: &Point3) -> Result<(), String> {
        let rho = self.density(x);
        if !(rho > 0.0) {
            return Err(format!("density {rho} not positive at {x:?}"));
        }
        let c = self.stiffness_voigt(x);
        if (c - c.transpose()).abs().max() > 1e-12 * c.abs().max() {
            return Err(format!("stiffness not symmetric at {x:?}"));
        }
        let cmin = SymmetricEigen::new(c).eigenvalues.min();
        if cmin <= 0.0 {
            return Err(format!(
                "stiffness not positive definite at {x:?} (min eig {cmin})"
            ));
        }
        let k = self.dielectric_at(x);
        if (k - k.transpose()).abs().max() > 1e-12 * k.abs().max() {
            return Err(format!("dielectric not symmetric at {x:?}"));
        }
        let kmin = SymmetricEigen::new(k).eigenvalues.min();
        if kmin <= 0.0 {
            return Err(format!(
                "dielectric not positive definite at {x:?} (min eig {kmin})"
            ));
        }
        Ok(())
    }
}

/// Stress `E b` as a symmetric matrix.
pub fn piezo_apply(e: &Matrix6x3<f64>, b: &Vector3<f64>) -> Matrix3<f64> {
    voigt_to_matrix(&(e * b))
}

/// `E^T A` for a (not necessarily symmetric) matrix `A`, defined by
/// `(E^T A) . b = A : (E b)`.
pub fn piezo_transpose_apply(e: &Matrix6x3<f64>, a: &Matrix3<f64>) -> Vector3<f64> {
    // A : S for symmetric S only sees the symmetric part of A
    e.transpose() * voigt_strain(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut impl Rng) -> Matrix3<f64> {
        Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0))
    }

    /// Full fourth-order isotropic tensor applied to `A`.
    fn full_isotropic(lambda: f64, mu: f64, a: &Matrix3<f64>) -> Matrix3<f64> {
        let mut out = Matrix3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        let dij = (i == j) as u8 as f64;
                        let dkl = (k == l) as u8 as f64;
                        let dik = (i == k) as u8 as f64;
                        let djl = (j == l) as u8 as f64;
                        let dil = (i == l) as u8 as f64;
                        let djk = (j == k) as u8 as f64;
                        let cijkl = lambda * dij * dkl + mu * (dik * djl + dil * djk);
                        out[(i, j)] += cijkl * a[(k, l)];
                    }
                }
            }
        }
        out
    }

    #[test]
    fn benchmark_values() {
        let m = MaterialSet::benchmark();
        assert_eq!(benchmark_lambda(&[0.0; 3]), 2.0);
        assert_eq!(benchmark_mu(&[0.0; 3]), 4.0);
        assert_eq!(m.density(&[1.0, 1.0, 0.0]), 3.0);
        assert_eq!(m.piezo_voigt(&[0.0; 3])[(3, 0)], 5.0);
        assert_eq!(m.piezo_voigt(&[0.0; 3])[(2, 1)], 6.0);
    }

    #[test]
    fn dielectric_is_spd_by_characteristic_polynomial() {
        // oracle: Sylvester-free check via characteristic polynomial
        // p(s) = s^3 - c2 s^2 + c1 s - c0 has only positive roots iff all
        // of c2, c1, c0 > 0 for a symmetric matrix
        let k = BENCHMARK_DIELECTRIC;
        let c2 = k[0][0] + k[1][1] + k[2][2];
        let c1 = (k[0][0] * k[1][1] - k[0][1] * k[1][0])
            + (k[0][0] * k[2][2] - k[0][2] * k[2][0])
            + (k[1][1] * k[2][2] - k[1][2] * k[2][1]);
        let c0 = benchmark_dielectric().determinant();
        assert!(c2 > 0.0 && c1 > 0.0 && c0 > 0.0);
        assert!(
            SymmetricEigen::new(benchmark_dielectric())
                .eigenvalues
                .min()
                > 0.0
        );
    }

    #[test]
    fn benchmark_contracts_hold_on_samples() {
        let m = MaterialSet::benchmark();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let x = [
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
            ];
            m.check_at(&x).unwrap();
        }
    }

    #[test]
    fn strain_examples() {
        assert_eq!(
            voigt_strain(&Matrix3::identity()),
            Vector6::new(1.0, 1.0, 1.0, 0.0, 0.0, 0.0)
        );
        let skew = Matrix3::new(0.0, 1.0, -2.0, -1.0, 0.0, 3.0, 2.0, -3.0, 0.0);
        assert_eq!(voigt_strain(&skew), Vector6::zeros());
    }

    #[test]
    fn voigt_energy_matches_full_tensor() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let g = random_matrix(&mut rng);
            let (lambda, mu) = (rng.gen_range(0.0..3.0), rng.gen_range(0.5..4.0));
            let eps = 0.5 * (g + g.transpose());
            let full = full_isotropic(lambda, mu, &eps).component_mul(&eps).sum();
            let e = voigt_strain(&g);
            let voigt = e.dot(&(isotropic_voigt(lambda, mu) * e));
            assert!((full - voigt).abs() < 1e-12 * full.abs().max(1.0));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn stiffness_and_piezo_adjoint_identities(seed in 0u64..10_000) {
            let m = MaterialSet::benchmark();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
            let a = random_matrix(&mut rng);
            let b = random_matrix(&mut rng);
            let (a, b) = (a + a.transpose(), b + b.transpose());
            let c = m.stiffness_voigt(&x);
            let ca = voigt_to_matrix(&(c * voigt_strain(&a)));
            let cb = voigt_to_matrix(&(c * voigt_strain(&b)));
            prop_assert!((ca.component_mul(&b).sum() - a.component_mul(&cb).sum()).abs() < 1e-13 * ca.norm().max(1.0) * 10.0);

            let e = m.piezo_voigt(&x);
            let general = random_matrix(&mut rng);
            let v = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let lhs = piezo_transpose_apply(&e, &general).dot(&v);
            let rhs = general.component_mul(&piezo_apply(&e, &v)).sum();
            prop_assert!((lhs - rhs).abs() < 1e-13 * rhs.abs().max(1.0) * 10.0);
            // E b is symmetric by construction
            let eb = piezo_apply(&e, &v);
            prop_assert_eq!(eb, eb.transpose());
        }
    }
}
