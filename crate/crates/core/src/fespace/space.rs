//! Continuous Lagrange spaces: scalar `W_h` and the Dirichlet-constrained
//! vector space `V_h`.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};

use super::basis::LagrangeBasis;
use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point3};

/// Affine geometry of one tetrahedron.
#[derive(Clone, Debug)]
pub struct ElementGeometry {
    pub origin: Vector3<f64>,
    pub jacobian: Matrix3<f64>,
    pub det: f64,
    /// Physical gradients of the four barycentric coordinates.
    pub grad_lambda: [Vector3<f64>; 4],
}

impl ElementGeometry {
    pub fn new(mesh: &Mesh, e: usize) -> Result<Self> {
        let p = mesh.tet_points(e).map(Vector3::from);
        let jacobian = Matrix3::from_columns(&[p[1] - p[0], p[2] - p[0], p[3] - p[0]]);
        let det = jacobian.determinant();
        if !(det > 0.0) {
            return Err(Error::InvertedElement { element: e, det });
        }
        let inv = jacobian
            .try_inverse()
            .ok_or(Error::InvertedElement { element: e, det })?;
        let g1 = inv.row(0).transpose();
        let g2 = inv.row(1).transpose();
        let g3 = inv.row(2).transpose();
        Ok(Self {
            origin: p[0],
            jacobian,
            det,
            grad_lambda: [-(g1 + g2 + g3), g1, g2, g3],
        })
    }

    pub fn map(&self, xi: &[f64; 3]) -> Point3 {
        let x = self.origin + self.jacobian * Vector3::new(xi[0], xi[1], xi[2]);
        [x[0], x[1], x[2]]
    }

    pub fn gradient(&self, dlambda: &[f64; 4]) -> Vector3<f64> {
        (0..4)
            .map(|i| self.grad_lambda[i] * dlambda[i])
            .fold(Vector3::zeros(), |a, b| a + b)
    }
}

/// Scalar P_k space over a mesh; contains the constants.
#[derive(Debug)]
pub struct ScalarSpace {
    mesh: Arc<Mesh>,
    basis: LagrangeBasis,
    cell_dofs: Vec<Vec<usize>>,
    dof_coords: Vec<Point3>,
    vertex_dofs: Vec<usize>,
}

impl ScalarSpace {
    pub fn new(mesh: Arc<Mesh>, degree: usize) -> Self {
        let basis = LagrangeBasis::new(degree);
        let mut key_to_dof: HashMap<Vec<(usize, usize)>, usize> = HashMap::new();
        let mut dof_coords = Vec::new();
        let mut cell_dofs = Vec::with_capacity(mesh.tets().len());
        let mut vertex_dofs = vec![usize::MAX; mesh.vertices().len()];
        for tet in mesh.tets() {
            let pts = tet.map(|v| mesh.vertices()[v]);
            let mut dofs = Vec::with_capacity(basis.len());
            for alpha in &basis.alphas {
                let mut key: Vec<(usize, usize)> = (0..4)
                    .filter(|&i| alpha[i] > 0)
                    .map(|i| (tet[i], alpha[i]))
                    .collect();
                key.sort_unstable();
                let next = dof_coords.len();
                let dof = *key_to_dof.entry(key.clone()).or_insert_with(|| {
                    let x = [0, 1, 2].map(|c| {
                        (0..4).map(|i| alpha[i] as f64 * pts[i][c]).sum::<f64>() / degree as f64
                    });
                    dof_coords.push(x);
                    next
                });
                if key.len() == 1 {
                    vertex_dofs[key[0].0] = dof;
                }
                dofs.push(dof);
            }
            cell_dofs.push(dofs);
        }
        Self {
            mesh,
            basis,
            cell_dofs,
            dof_coords,
            vertex_dofs,
        }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn degree(&self) -> usize {
        self.basis.degree
    }

    pub fn basis(&self) -> &LagrangeBasis {
        &self.basis
    }

    pub fn n_dofs(&self) -> usize {
        self.dof_coords.len()
    }

    pub fn cell_dofs(&self, e: usize) -> &[usize] {
        &self.cell_dofs[e]
    }

    pub fn dof_coords(&self) -> &[Point3] {
        &self.dof_coords
    }

    /// Global dof sitting on mesh vertex `v`.
    pub fn vertex_dof(&self, v: usize) -> usize {
        self.vertex_dofs[v]
    }

    /// Local dof indices (into the owner tet) lying on a local face.
    pub fn local_face_dofs(&self, local_face: usize) -> Vec<usize> {
        (0..self.basis.len())
            .filter(|&i| self.basis.alphas[i][local_face] == 0)
            .collect()
    }

    /// Global dofs lying on boundary face `face`.
    pub fn face_dofs(&self, face: usize) -> Vec<usize> {
        let bf = &self.mesh.boundary_faces()[face];
        self.local_face_dofs(bf.local_face)
            .into_iter()
            .map(|i| self.cell_dofs[bf.owner][i])
            .collect()
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(&self, f: impl Fn(&Point3) -> f64) -> Vec<f64> {
        self.dof_coords.iter().map(f).collect()
    }

    /// Evaluates a finite element function inside element `e` at
    /// barycentric coordinates `lambda`: value and physical gradient.
    pub fn eval_in_cell(
        &self,
        coeffs: &[f64],
        e: usize,
        geo: &ElementGeometry,
        lambda: &[f64; 4],
    ) -> (f64, Vector3<f64>) {
        let (vals, ders) = self.basis.eval(lambda);
        let mut v = 0.0;
        let mut g = Vector3::zeros();
        for (i, &dof) in self.cell_dofs[e].iter().enumerate() {
            v += coeffs[dof] * vals[i];
            g += geo.gradient(&ders[i]) * coeffs[dof];
        }
        (v, g)
    }
}

/// Vector P_k space with dofs on Dirichlet faces removed.
///
/// Full vectors are interleaved: index `3 * node + component`.
#[derive(Debug)]
pub struct VectorSpace {
    scalar: Arc<ScalarSpace>,
    free: Vec<usize>,
    constrained: Vec<usize>,
    full_to_free: Vec<Option<usize>>,
}

impl VectorSpace {
    pub fn new(scalar: Arc<ScalarSpace>) -> Self {
        let n = scalar.n_dofs();
        let mut on_dirichlet = vec![false; n];
        let mesh = scalar.mesh().clone();
        for f in 0..mesh.n_boundary_faces() {
            if mesh.is_dirichlet_face(f) {
                for d in scalar.face_dofs(f) {
                    on_dirichlet[d] = true;
                }
            }
        }
        let mut free = Vec::new();
        let mut constrained = Vec::new();
        let mut full_to_free = vec![None; 3 * n];
        for node in 0..n {
            for c in 0..3 {
                let idx = 3 * node + c;
                if on_dirichlet[node] {
                    constrained.push(idx);
                } else {
                    full_to_free[idx] = Some(free.len());
                    free.push(idx);
                }
            }
        }
        Self {
            scalar,
            free,
            constrained,
            full_to_free,
        }
    }

    pub fn scalar(&self) -> &Arc<ScalarSpace> {
        &self.scalar
    }

    pub fn n_full(&self) -> usize {
        3 * self.scalar.n_dofs()
    }

    /// Number of unconstrained dofs `n_u`.
    pub fn n_dofs(&self) -> usize {
        self.free.len()
    }

    pub fn free_dofs(&self) -> &[usize] {
        &self.free
    }

    pub fn constrained_dofs(&self) -> &[usize] {
        &self.constrained
    }

    pub fn free_index(&self, full: usize) -> Option<usize> {
        self.full_to_free[full]
    }

    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&i| full[i]).collect()
    }

    /// Scatters free coefficients into a full vector, adding `lift` (values
    /// on constrained dofs) when given.
    pub fn extend(&self, free: &[f64], lift: Option<&[f64]>) -> Vec<f64> {
        let mut full = match lift {
            Some(l) => l.to_vec(),
            None => vec![0.0; self.n_full()],
        };
        for (k, &i) in self.free.iter().enumerate() {
            full[i] = free[k];
        }
        full
    }

    /// Full nodal interpolant of a vector field.
    pub fn interpolate_full(&self, f: impl Fn(&Point3) -> [f64; 3]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_full()];
        for (node, x) in self.scalar.dof_coords().iter().enumerate() {
            let v = f(x);
            out[3 * node..3 * node + 3].copy_from_slice(&v);
        }
        out
    }

    /// Values on constrained dofs only (zeros elsewhere).
    pub fn dirichlet_lift(&self, f: impl Fn(&Point3) -> [f64; 3]) -> Vec<f64> {
        let full = self.interpolate_full(f);
        let mut lift = vec![0.0; self.n_full()];
        for &i in &self.constrained {
            lift[i] = full[i];
        }
        lift
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_cube_mesh, coordinate_planes};

    #[test]
    fn dof_counts_on_cube() {
        for (m, k, n) in [(1, 1, 8), (1, 2, 27), (2, 2, 125), (2, 3, 343)] {
            let mesh = Arc::new(build_cube_mesh(m, |_| false));
            assert_eq!(ScalarSpace::new(mesh, k).n_dofs(), n);
        }
    }

    #[test]
    fn constants_are_reproduced() {
        let mesh = Arc::new(build_cube_mesh(2, |_| false));
        let w = ScalarSpace::new(mesh.clone(), 2);
        let one = w.interpolate(|_| 1.0);
        for e in 0..mesh.tets().len() {
            let geo = ElementGeometry::new(&mesh, e).unwrap();
            let (v, g) = w.eval_in_cell(&one, e, &geo, &[0.1, 0.2, 0.3, 0.4]);
            assert!((v - 1.0).abs() < 1e-14 && g.norm() < 1e-12);
        }
    }

    #[test]
    fn dirichlet_dofs_vanish_for_fields_vanishing_on_gamma_d() {
        let mesh = Arc::new(build_cube_mesh(2, coordinate_planes));
        let v = VectorSpace::new(Arc::new(ScalarSpace::new(mesh, 2)));
        let full = v.interpolate_full(|x| {
            let s = x[0] * x[1] * x[2];
            [s, 2.0 * s, -s]
        });
        for &i in v.constrained_dofs() {
            assert!(full[i].abs() < 1e-15);
        }
        // 5^3 nodes, those with some coordinate zero are constrained
        assert_eq!(v.n_dofs(), 3 * 4 * 4 * 4);
    }

    #[test]
    fn p2_interpolation_is_exact_for_quadratics() {
        let mesh = Arc::new(build_cube_mesh(2, |_| false));
        let w = ScalarSpace::new(mesh.clone(), 2);
        let f = |x: &Point3| x[0] * x[1] - 2.0 * x[2] * x[2] + x[0];
        let c = w.interpolate(f);
        let geo = ElementGeometry::new(&mesh, 5).unwrap();
        let lam = [0.3, 0.1, 0.2, 0.4];
        let x = geo.map(&[lam[1], lam[2], lam[3]]);
        let (v, _) = w.eval_in_cell(&c, 5, &geo, &lam);
        assert!((v - f(&x)).abs() < 1e-14);
    }
}
