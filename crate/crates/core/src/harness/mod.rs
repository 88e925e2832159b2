//! Experiment drivers behind the command-line tool: manufactured-solution
//! convergence, the control refinement study, the twisting-cube
//! simulation, and the verification gate.

pub mod config;
pub mod control_study;
pub mod convergence;
pub mod manufactured;
pub mod plot;
pub mod simulation;
pub mod verification;
pub mod vtk;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

pub use config::{Experiment, RunConfig};
pub use control_study::{run_control_study, ControlStudy};
pub use convergence::{run_convergence_study, ConvergenceTable};
pub use manufactured::ManufacturedCase;
pub use simulation::{run_simulation, SimulationSummary};
pub use verification::{run_verification, VerificationReport};

use crate::error::Result;
use crate::fespace::assembly::{assemble, default_rule, DiscreteOperators};
use crate::fespace::space::{ScalarSpace, VectorSpace};
use crate::materials::MaterialSet;
use crate::mesh::Mesh;

/// Assembles degree-`k` operators on `mesh` with the default quadrature.
pub fn build_operators(
    mesh: Mesh,
    degree: usize,
    materials: &MaterialSet,
) -> Result<DiscreteOperators> {
    let scalar = Arc::new(ScalarSpace::new(Arc::new(mesh), degree));
    let space = Arc::new(VectorSpace::new(scalar));
    assemble(&space, materials, &default_rule(degree))
}

/// Opens `dir/name` for buffered writing, creating `dir` if needed.
pub fn create_output(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    std::fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Writes a CSV table with a header row.
pub fn write_table(dir: &Path, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = create_output(dir, name)?;
    writeln!(w, "{}", header.join(","))?;
    for r in rows {
        writeln!(w, "{}", r.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Observed order `log(e_a / e_b) / log(h_a / h_b)`.
pub fn observed_rate(h_a: f64, e_a: f64, h_b: f64, e_b: f64) -> f64 {
    (e_a / e_b).ln() / (h_a / h_b).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_of_exact_power_law() {
        let e = |h: f64| 3.0 * h.powi(2);
        assert!((observed_rate(0.5, e(0.5), 0.25, e(0.25)) - 2.0).abs() < 1e-14);
        assert!((observed_rate(1.0 / 3.0, e(1.0 / 3.0), 0.25, e(0.25)) - 2.0).abs() < 1e-12);
    }
}
