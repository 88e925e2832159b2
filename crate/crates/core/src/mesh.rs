//! Conforming tetrahedral meshes with a tagged boundary triangulation.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

/// Local vertex triples of the four faces of a tetrahedron; face `i` is
/// opposite local vertex `i`.
pub const TET_FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]];

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryFace {
    pub vertices: [usize; 3],
    pub tag: u32,
    /// Tet owning this face and the local face index within it.
    pub owner: usize,
    pub local_face: usize,
}

#[derive(Clone, Debug)]
pub struct Mesh {
    vertices: Vec<Point3>,
    tets: Vec<[usize; 4]>,
    boundary_faces: Vec<BoundaryFace>,
    dirichlet_tags: BTreeSet<u32>,
    neumann_tags: BTreeSet<u32>,
}

/// Boundary faces grouped by tag, with cached areas.
#[derive(Clone, Debug)]
pub struct BoundaryPartition {
    pub faces_by_tag: std::collections::BTreeMap<u32, Vec<usize>>,
    pub face_areas: Vec<f64>,
}

impl BoundaryPartition {
    pub fn total_area(&self) -> f64 {
        self.face_areas.iter().sum()
    }
}

fn sub(a: &Point3, b: &Point3) -> Vector3<f64> {
    Vector3::new(a[0] - b[0], a[1] - b[1], a[2] - b[2])
}

pub fn signed_volume(p: [&Point3; 4]) -> f64 {
    let m = Matrix3::from_columns(&[sub(p[1], p[0]), sub(p[2], p[0]), sub(p[3], p[0])]);
    m.determinant() / 6.0
}

pub fn triangle_area(a: &Point3, b: &Point3, c: &Point3) -> f64 {
    0.5 * sub(b, a).cross(&sub(c, a)).norm()
}

/// Side index (1..=6) of a point lying on the unit cube boundary:
/// 1: x=0, 2: x=1, 3: y=0, 4: y=1, 5: z=0, 6: z=1.
pub fn cube_side(c: &Point3) -> u32 {
    const EPS: f64 = 1e-12;
    for axis in 0..3 {
        if c[axis].abs() < EPS {
            return 2 * axis as u32 + 1;
        }
        if (c[axis] - 1.0).abs() < EPS {
            return 2 * axis as u32 + 2;
        }
    }
    0
}

impl Mesh {
    /// Builds a mesh from raw data, checking orientation and deriving face
    /// ownership.
    ///
    /// `boundary` lists triangles by global vertex indices with a tag; each
    /// must be a face of exactly one tet, and together they must cover every
    /// unshared tet face.
    pub fn new(
        vertices: Vec<Point3>,
        tets: Vec<[usize; 4]>,
        boundary: Vec<([usize; 3], u32)>,
        dirichlet_tags: BTreeSet<u32>,
    ) -> Result<Self> {
        for (e, t) in tets.iter().enumerate() {
            if t.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::InvalidMesh(format!(
                    "tet {e} references missing vertex"
                )));
            }
            let vol = signed_volume([
                &vertices[t[0]],
                &vertices[t[1]],
                &vertices[t[2]],
                &vertices[t[3]],
            ]);
            if vol <= 0.0 {
                return Err(Error::InvertedElement {
                    element: e,
                    det: 6.0 * vol,
                });
            }
        }

        let mut face_owner: HashMap<[usize; 3], Vec<(usize, usize)>> = HashMap::new();
        for (e, t) in tets.iter().enumerate() {
            for (lf, f) in TET_FACES.iter().enumerate() {
                let mut key = [t[f[0]], t[f[1]], t[f[2]]];
                key.sort_unstable();
                face_owner.entry(key).or_default().push((e, lf));
            }
        }
        let exterior = face_owner.values().filter(|v| v.len() == 1).count();
        if exterior != boundary.len() {
            return Err(Error::InvalidMesh(format!(
                "{} boundary triangles given but {} exterior tet faces found",
                boundary.len(),
                exterior
            )));
        }

        let mut boundary_faces = Vec::with_capacity(boundary.len());
        for (i, (verts, tag)) in boundary.into_iter().enumerate() {
            let mut key = verts;
            key.sort_unstable();
            match face_owner.get(&key).map(|v| v.as_slice()) {
                Some([(owner, local_face)]) => boundary_faces.push(BoundaryFace {
                    vertices: verts,
                    tag,
                    owner: *owner,
                    local_face: *local_face,
                }),
                _ => {
                    return Err(Error::InvalidMesh(format!(
                        "boundary triangle {i} is not an exterior tet face"
                    )))
                }
            }
        }

        let all_tags: BTreeSet<u32> = boundary_faces.iter().map(|f| f.tag).collect();
        let neumann_tags = all_tags.difference(&dirichlet_tags).copied().collect();
        let dirichlet_tags = dirichlet_tags.intersection(&all_tags).copied().collect();
        Ok(Self {
            vertices,
            tets,
            boundary_faces,
            dirichlet_tags,
            neumann_tags,
        })
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn tets(&self) -> &[[usize; 4]] {
        &self.tets
    }

    pub fn boundary_faces(&self) -> &[BoundaryFace] {
        &self.boundary_faces
    }

    pub fn n_boundary_faces(&self) -> usize {
        self.boundary_faces.len()
    }

    pub fn dirichlet_tags(&self) -> &BTreeSet<u32> {
        &self.dirichlet_tags
    }

    pub fn neumann_tags(&self) -> &BTreeSet<u32> {
        &self.neumann_tags
    }

    pub fn is_dirichlet_face(&self, face: usize) -> bool {
        self.dirichlet_tags.contains(&self.boundary_faces[face].tag)
    }

    pub fn tet_points(&self, e: usize) -> [Point3; 4] {
        self.tets[e].map(|v| self.vertices[v])
    }

    pub fn tet_volume(&self, e: usize) -> f64 {
        let p = self.tet_points(e);
        signed_volume([&p[0], &p[1], &p[2], &p[3]])
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.tets.len()).map(|e| self.tet_volume(e)).sum()
    }

    pub fn face_points(&self, face: usize) -> [Point3; 3] {
        self.boundary_faces[face].vertices.map(|v| self.vertices[v])
    }

    pub fn face_centroid(&self, face: usize) -> Point3 {
        let p = self.face_points(face);
        [0, 1, 2].map(|i| (p[0][i] + p[1][i] + p[2][i]) / 3.0)
    }

    pub fn boundary_face_area(&self, face: usize) -> Result<f64> {
        if face >= self.boundary_faces.len() {
            return Err(Error::IndexOutOfRange {
                index: face,
                len: self.boundary_faces.len(),
            });
        }
        let p = self.face_points(face);
        let area = triangle_area(&p[0], &p[1], &p[2]);
        let scale = sub(&p[1], &p[0])
            .norm_squared()
            .max(sub(&p[2], &p[0]).norm_squared());
        if area <= 1e-14 * scale || area == 0.0 {
            return Err(Error::DegenerateFace(face));
        }
        Ok(area)
    }

    /// Unit normal of a boundary face pointing away from its owning tet.
    pub fn outward_normal(&self, face: usize) -> Vector3<f64> {
        let p = self.face_points(face);
        let mut n = sub(&p[1], &p[0]).cross(&sub(&p[2], &p[0])).normalize();
        let bf = &self.boundary_faces[face];
        let opposite = self.vertices[self.tets[bf.owner][bf.local_face]];
        if n.dot(&sub(&opposite, &p[0])) > 0.0 {
            n = -n;
        }
        n
    }

    pub fn boundary_partition(&self) -> Result<BoundaryPartition> {
        let mut faces_by_tag = std::collections::BTreeMap::new();
        let mut face_areas = Vec::with_capacity(self.boundary_faces.len());
        for (i, f) in self.boundary_faces.iter().enumerate() {
            faces_by_tag.entry(f.tag).or_insert_with(Vec::new).push(i);
            face_areas.push(self.boundary_face_area(i)?);
        }
        Ok(BoundaryPartition {
            faces_by_tag,
            face_areas,
        })
    }

    /// Reads the ASCII format: `nv nt nf`, then vertex, tet and tagged
    /// boundary-triangle lines.
    pub fn read_ascii(path: &Path, dirichlet_tags: BTreeSet<u32>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_ascii(&text, dirichlet_tags)
    }

    pub fn parse_ascii(text: &str, dirichlet_tags: BTreeSet<u32>) -> Result<Self> {
        let bad = |msg: &str| Error::InvalidMesh(msg.to_string());
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header: Vec<usize> = lines
            .next()
            .ok_or_else(|| bad("empty mesh file"))?
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| bad("bad header")))
            .collect::<Result<_>>()?;
        let [nv, nt, nf] = header[..] else {
            return Err(bad("header must be `nv nt nf`"));
        };

        fn fields<T: std::str::FromStr>(
            line: Option<&str>,
            n: usize,
            what: &str,
        ) -> Result<Vec<T>> {
            let line = line.ok_or_else(|| Error::InvalidMesh(format!("missing {what} line")))?;
            let v: Vec<T> = line
                .split_whitespace()
                .map(|s| {
                    s.parse()
                        .map_err(|_| Error::InvalidMesh(format!("bad {what} line `{line}`")))
                })
                .collect::<Result<_>>()?;
            if v.len() != n {
                return Err(Error::InvalidMesh(format!(
                    "{what} line `{line}` needs {n} fields"
                )));
            }
            Ok(v)
        }

        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let v: Vec<f64> = fields(lines.next(), 3, "vertex")?;
            vertices.push([v[0], v[1], v[2]]);
        }
        let mut tets = Vec::with_capacity(nt);
        for _ in 0..nt {
            let v: Vec<usize> = fields(lines.next(), 4, "tet")?;
            tets.push([v[0], v[1], v[2], v[3]]);
        }
        let mut boundary = Vec::with_capacity(nf);
        for _ in 0..nf {
            let v: Vec<u64> = fields(lines.next(), 4, "face")?;
            boundary.push(([v[0] as usize, v[1] as usize, v[2] as usize], v[3] as u32));
        }
        Self::new(vertices, tets, boundary, dirichlet_tags)
    }

    pub fn to_ascii(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{} {} {}",
            self.vertices.len(),
            self.tets.len(),
            self.boundary_faces.len()
        );
        for v in &self.vertices {
            let _ = writeln!(s, "{:.17e} {:.17e} {:.17e}", v[0], v[1], v[2]);
        }
        for t in &self.tets {
            let _ = writeln!(s, "{} {} {} {}", t[0], t[1], t[2], t[3]);
        }
        for f in &self.boundary_faces {
            let _ = writeln!(
                s,
                "{} {} {} {}",
                f.vertices[0], f.vertices[1], f.vertices[2], f.tag
            );
        }
        s
    }
}

/// Unit cube `(0,1)^3` split into `m^3` subcubes, each cut into six tets
/// around the main diagonal (Kuhn subdivision).
///
/// Boundary triangles are tagged with their cube side (see [`cube_side`]).
/// A side is Dirichlet when `dirichlet_rule` holds at the centroid of its
/// triangles; if a side is split by the rule its Dirichlet triangles get
/// tag `side + 6`.
pub fn build_cube_mesh(m: usize, dirichlet_rule: impl Fn(&Point3) -> bool) -> Mesh {
    assert!(m >= 1, "mesh parameter must be positive");
    let n1 = m + 1;
    let h = 1.0 / m as f64;
    let vid = |i: usize, j: usize, k: usize| (k * n1 + j) * n1 + i;
    let mut vertices = Vec::with_capacity(n1 * n1 * n1);
    for k in 0..n1 {
        for j in 0..n1 {
            for i in 0..n1 {
                vertices.push([i as f64 * h, j as f64 * h, k as f64 * h]);
            }
        }
    }

    const PERMS: [[usize; 3]; 6] = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let mut tets = Vec::with_capacity(6 * m * m * m);
    for k in 0..m {
        for j in 0..m {
            for i in 0..m {
                for perm in PERMS {
                    let mut c = [i, j, k];
                    let mut t = [vid(c[0], c[1], c[2]), 0, 0, 0];
                    for (s, &axis) in perm.iter().enumerate() {
                        c[axis] += 1;
                        t[s + 1] = vid(c[0], c[1], c[2]);
                    }
                    let p = t.map(|v| vertices[v]);
                    if signed_volume([&p[0], &p[1], &p[2], &p[3]]) < 0.0 {
                        t.swap(2, 3);
                    }
                    tets.push(t);
                }
            }
        }
    }

    let mut count: HashMap<[usize; 3], usize> = HashMap::new();
    for t in &tets {
        for f in TET_FACES {
            let mut key = [t[f[0]], t[f[1]], t[f[2]]];
            key.sort_unstable();
            *count.entry(key).or_default() += 1;
        }
    }
    let mut tris = Vec::with_capacity(12 * m * m);
    for t in &tets {
        for f in TET_FACES {
            let tri = [t[f[0]], t[f[1]], t[f[2]]];
            let mut key = tri;
            key.sort_unstable();
            if count[&key] == 1 {
                tris.push(tri);
            }
        }
    }

    let centroid = |tri: &[usize; 3]| -> Point3 {
        [0, 1, 2].map(|a| tri.iter().map(|&v| vertices[v][a]).sum::<f64>() / 3.0)
    };
    let mut side_state: HashMap<u32, (bool, bool)> = HashMap::new();
    let classified: Vec<(u32, bool)> = tris
        .iter()
        .map(|tri| {
            let c = centroid(tri);
            let side = cube_side(&c);
            let d = dirichlet_rule(&c);
            let e = side_state.entry(side).or_default();
            if d {
                e.0 = true;
            } else {
                e.1 = true;
            }
            (side, d)
        })
        .collect();

    let mut dirichlet_tags = BTreeSet::new();
    let boundary: Vec<_> = tris
        .into_iter()
        .zip(classified)
        .map(|(tri, (side, d))| {
            let mixed = side_state[&side] == (true, true);
            let tag = if d && mixed { side + 6 } else { side };
            if d {
                dirichlet_tags.insert(tag);
            }
            (tri, tag)
        })
        .collect();

    Mesh::new(vertices, tets, boundary, dirichlet_tags).expect("cube mesh is valid by construction")
}

/// Dirichlet rule `xyz = 0` (the three coordinate-plane sides).
pub fn coordinate_planes(c: &Point3) -> bool {
    (c[0] * c[1] * c[2]).abs() < 1e-12
}

/// Dirichlet rule for the two sides `y = 0` and `y = 1`.
pub fn y_sides(c: &Point3) -> bool {
    c[1].abs() < 1e-12 || (c[1] - 1.0).abs() < 1e-12
}

/// Dirichlet rule for the bottom side `z = 0`.
pub fn bottom_side(c: &Point3) -> bool {
    c[2].abs() < 1e-12
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn kuhn_counts() {
        for (m, tets, verts, faces) in [(1, 6, 8, 12), (2, 48, 27, 48), (3, 162, 64, 108)] {
            let mesh = build_cube_mesh(m, |_| false);
            assert_eq!(mesh.tets().len(), tets);
            assert_eq!(mesh.vertices().len(), verts);
            assert_eq!(mesh.n_boundary_faces(), faces);
        }
    }

    #[test]
    fn coordinate_plane_classification_matches_brute_force() {
        let mesh = build_cube_mesh(3, coordinate_planes);
        // oracle: brute force over centroids
        let brute = (0..mesh.n_boundary_faces())
            .filter(|&f| {
                let c = mesh.face_centroid(f);
                c.iter().any(|x| x.abs() < 1e-9)
            })
            .count();
        assert_eq!(brute, 54);
        let tagged = (0..mesh.n_boundary_faces())
            .filter(|&f| mesh.is_dirichlet_face(f))
            .count();
        assert_eq!(tagged, 54);
        assert_eq!(
            mesh.dirichlet_tags().iter().copied().collect::<Vec<_>>(),
            vec![1, 3, 5]
        );
        assert!(mesh.dirichlet_tags().is_disjoint(mesh.neumann_tags()));
    }

    #[test]
    fn face_areas() {
        let m1 = build_cube_mesh(1, |_| false);
        for f in 0..m1.n_boundary_faces() {
            assert!((m1.boundary_face_area(f).unwrap() - 0.5).abs() < 1e-15);
        }
        let m2 = build_cube_mesh(2, |_| false);
        for f in 0..m2.n_boundary_faces() {
            assert!((m2.boundary_face_area(f).unwrap() - 0.125).abs() < 1e-15);
        }
        assert!(matches!(
            m2.boundary_face_area(10_000),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn degenerate_face_is_rejected() {
        // flat tet fixture: duplicate point makes the face degenerate but the
        // tet itself is checked first, so build the face-only check directly
        let text =
            "4 1 4\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n0 1 2 3\n1 2 3 1\n0 2 3 1\n0 1 3 1\n0 1 2 1\n";
        let mut mesh = Mesh::parse_ascii(text, BTreeSet::new()).unwrap();
        mesh.vertices[2] = [2.0, 0.0, 0.0];
        assert!(matches!(
            mesh.boundary_face_area(3),
            Err(Error::DegenerateFace(3))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn volume_area_and_normals(m in 1usize..=5, split in any::<bool>()) {
            let mesh = if split { build_cube_mesh(m, y_sides) } else { build_cube_mesh(m, |_| false) };
            prop_assert!((mesh.total_volume() - 1.0).abs() < 1e-12);
            let part = mesh.boundary_partition().unwrap();
            prop_assert!((part.total_area() - 6.0).abs() < 1e-12);
            for f in 0..mesh.n_boundary_faces() {
                let n = mesh.outward_normal(f);
                let bf = &mesh.boundary_faces()[f];
                let p = mesh.tet_points(bf.owner);
                let bary: Vector3<f64> =
                    (0..4).map(|i| Vector3::from(p[i])).fold(Vector3::zeros(), |a, b| a + b) / 4.0;
                let c = Vector3::from(mesh.face_centroid(f));
                prop_assert!(n.dot(&(c - bary)) > 0.0);
                // cube normals are axis aligned and point out of the cube
                let side = cube_side(&mesh.face_centroid(f));
                let axis = ((side - 1) / 2) as usize;
                let sign = if side.is_multiple_of(2) { 1.0 } else { -1.0 };
                prop_assert!((n[axis] - sign).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ascii_round_trip() {
        let mesh = build_cube_mesh(2, y_sides);
        let text = mesh.to_ascii();
        let back = Mesh::parse_ascii(&text, mesh.dirichlet_tags().clone()).unwrap();
        assert_eq!(back.tets(), mesh.tets());
        assert_eq!(back.boundary_faces(), mesh.boundary_faces());
        assert_eq!(back.dirichlet_tags(), mesh.dirichlet_tags());
    }

    #[test]
    fn inverted_tet_is_rejected() {
        let text =
            "4 1 4\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n0 2 1 3\n1 2 3 1\n0 2 3 1\n0 1 3 1\n0 1 2 1\n";
        assert!(matches!(
            Mesh::parse_ascii(text, BTreeSet::new()),
            Err(Error::InvertedElement { .. })
        ));
    }
}
