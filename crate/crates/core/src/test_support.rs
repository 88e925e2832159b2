//! Shared fixtures for unit tests.

use std::collections::BTreeSet;
use std::sync::Arc;

use nalgebra::{Matrix3, Matrix6x3};

use crate::fespace::{assemble, default_rule, DiscreteOperators, ScalarSpace, VectorSpace};
use crate::materials::MaterialSet;
use crate::mesh::{build_cube_mesh, Mesh, Point3};

pub fn cube_ops(
    m: usize,
    k: usize,
    rule: impl Fn(&Point3) -> bool,
    materials: &MaterialSet,
) -> DiscreteOperators {
    let mesh = Arc::new(build_cube_mesh(m, rule));
    let space = Arc::new(VectorSpace::new(Arc::new(ScalarSpace::new(mesh, k))));
    assemble(&space, materials, &default_rule(k)).unwrap()
}

/// Reference tetrahedron; the face opposite vertex 3 (on z = 0) is
/// Dirichlet when `clamped`.
pub fn single_tet_ops(k: usize, clamped: bool, materials: &MaterialSet) -> DiscreteOperators {
    let v = vec![
        [0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
    ];
    let faces = vec![
        ([1, 2, 3], 1),
        ([0, 2, 3], 2),
        ([0, 1, 3], 3),
        ([0, 1, 2], 4),
    ];
    let dirichlet: BTreeSet<u32> = if clamped { [4].into() } else { BTreeSet::new() };
    let mesh = Arc::new(Mesh::new(v, vec![[0, 1, 2, 3]], faces, dirichlet).unwrap());
    let space = Arc::new(VectorSpace::new(Arc::new(ScalarSpace::new(mesh, k))));
    assemble(&space, materials, &default_rule(k)).unwrap()
}

pub fn constant_piezo_materials() -> MaterialSet {
    let mut e = Matrix6x3::zeros();
    e[(0, 0)] = 0.4;
    e[(3, 1)] = 0.3;
    e[(5, 2)] = 0.5;
    e[(2, 2)] = 0.2;
    let kappa = Matrix3::new(2.0, 0.3, 0.0, 0.3, 1.5, 0.1, 0.0, 0.1, 1.0);
    MaterialSet::constant(1.3, 1.0, 2.0, e, kappa)
}
