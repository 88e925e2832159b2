//! Legacy ASCII VTK unstructured-grid output.

use std::io::Write;

use crate::error::Result;
use crate::mesh::{Mesh, Point3};

const VTK_TRIANGLE: u8 = 5;
const VTK_TETRA: u8 = 10;

/// Surface or volume snapshot of a vertex-valued displacement.
pub struct VtkSnapshot<'a> {
    pub title: String,
    pub mesh: &'a Mesh,
    /// Displacement at each mesh vertex.
    pub displacement: &'a [[f64; 3]],
    /// One value per boundary face, written as cell data on the surface.
    pub face_values: Option<(&'a str, &'a [f64])>,
    /// Write the boundary triangles only (otherwise the tetrahedra).
    pub surface: bool,
}

impl VtkSnapshot<'_> {
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let mesh = self.mesh;
        let verts: &[Point3] = mesh.vertices();
        writeln!(w, "# vtk DataFile Version 3.0")?;
        // the title line must be a single line of at most 256 characters
        let title: String = self
            .title
            .replace(['\n', '\r'], " ")
            .chars()
            .take(255)
            .collect();
        writeln!(w, "{title}")?;
        writeln!(w, "ASCII")?;
        writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
        writeln!(w, "POINTS {} double", verts.len())?;
        for p in verts {
            writeln!(w, "{:.10e} {:.10e} {:.10e}", p[0], p[1], p[2])?;
        }
        let cells: Vec<Vec<usize>> = if self.surface {
            mesh.boundary_faces()
                .iter()
                .map(|f| f.vertices.to_vec())
                .collect()
        } else {
            mesh.tets().iter().map(|t| t.to_vec()).collect()
        };
        let size: usize = cells.iter().map(|c| c.len() + 1).sum();
        writeln!(w, "CELLS {} {}", cells.len(), size)?;
        for c in &cells {
            write!(w, "{}", c.len())?;
            for v in c {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        writeln!(w, "CELL_TYPES {}", cells.len())?;
        let kind = if self.surface {
            VTK_TRIANGLE
        } else {
            VTK_TETRA
        };
        for _ in &cells {
            writeln!(w, "{kind}")?;
        }
        writeln!(w, "POINT_DATA {}", verts.len())?;
        writeln!(w, "VECTORS displacement double")?;
        for d in self.displacement {
            writeln!(w, "{:.10e} {:.10e} {:.10e}", d[0], d[1], d[2])?;
        }
        if let (true, Some((name, values))) = (self.surface, self.face_values) {
            writeln!(w, "CELL_DATA {}", cells.len())?;
            writeln!(w, "SCALARS {name} double 1")?;
            writeln!(w, "LOOKUP_TABLE default")?;
            for v in values {
                writeln!(w, "{v:.10e}")?;
            }
        }
        Ok(())
    }
}
