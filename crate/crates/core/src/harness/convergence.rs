//! Space-time refinement study against an exact solution.

use log::info;
use rayon::prelude::*;

use super::config::RunConfig;
use super::manufactured::{ExactSolution, ManufacturedCase};
use super::plot::{Chart, Series};
use super::{build_operators, observed_rate, write_table};
use crate::control::ControlTrajectory;
use crate::error::Result;
use crate::fespace::assembly::{
    boundary_load_scalar, boundary_load_vector, default_rule, volume_load_scalar,
    volume_load_vector,
};
use crate::fespace::norms::{scalar_errors, vector_errors};
use crate::mesh::Mesh;
use crate::timestepper::{Sources, Stepper, TimeGrid};

/// Final-time errors on one level.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub m: usize,
    pub h: f64,
    pub steps: usize,
    pub n_dofs: usize,
    pub u_l2: f64,
    pub u_h1: f64,
    pub psi_l2: f64,
    pub psi_h1: f64,
}

impl ConvergenceRow {
    pub fn errors(&self) -> [f64; 4] {
        [self.u_l2, self.u_h1, self.psi_l2, self.psi_h1]
    }
}

#[derive(Clone, Debug)]
pub struct ConvergenceTable {
    pub degree: usize,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    /// Observed orders between consecutive rows, in the column order of
    /// [`ConvergenceRow::errors`].
    pub fn rates(&self) -> Vec<[f64; 4]> {
        self.rows
            .windows(2)
            .map(|w| {
                let (a, b) = (w[0].errors(), w[1].errors());
                std::array::from_fn(|i| observed_rate(w[0].h, a[i], w[1].h, b[i]))
            })
            .collect()
    }

    /// Rates between the two finest levels.
    pub fn finest_rates(&self) -> Option<[f64; 4]> {
        self.rates().last().copied()
    }

    pub fn write(&self, dir: &std::path::Path) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut v = vec![
                    r.m.to_string(),
                    format!("{:.6e}", r.h),
                    r.steps.to_string(),
                    r.n_dofs.to_string(),
                ];
                v.extend(r.errors().iter().map(|e| format!("{e:.6e}")));
                v
            })
            .collect();
        write_table(
            dir,
            "convergence.csv",
            &[
                "M", "h", "steps", "dofs", "u_l2", "u_h1", "psi_l2", "psi_h1",
            ],
            &rows,
        )?;
        let rates: Vec<Vec<String>> = self
            .rates()
            .iter()
            .zip(self.rows.windows(2))
            .map(|(r, w)| {
                let mut v = vec![w[0].m.to_string(), w[1].m.to_string()];
                v.extend(r.iter().map(|e| format!("{e:.4}")));
                v
            })
            .collect();
        write_table(
            dir,
            "rates.csv",
            &["M_coarse", "M_fine", "u_l2", "u_h1", "psi_l2", "psi_h1"],
            &rates,
        )?;

        let names = ["u L2", "u H1", "psi L2", "psi H1"];
        let mut chart = Chart::new("final-time errors", "h", "error").log_log();
        for (i, name) in names.iter().enumerate() {
            chart = chart.with(Series::new(
                *name,
                self.rows.iter().map(|r| (r.h, r.errors()[i])).collect(),
            ));
        }
        if let Some(first) = self.rows.first() {
            let scale = first.errors().iter().cloned().fold(f64::INFINITY, f64::min);
            let line = self
                .rows
                .iter()
                .map(|r| (r.h, scale * (r.h / first.h).powi(2)))
                .collect();
            chart = chart.with(Series::new("order 2", line).dashed());
        }
        chart.write(&dir.join("fig2_convergence.svg"))
    }
}

/// Solves the forced problem whose exact solution is `case` and returns
/// the errors at the final time.
pub fn solve_exact_case(
    case: &dyn ExactSolution,
    mesh: Mesh,
    degree: usize,
    grid: TimeGrid,
) -> Result<ConvergenceRow> {
    let ops = build_operators(mesh, degree, case.materials())?;
    let space = &ops.space;
    let scalar = ops.scalar_space();
    let mesh = scalar.mesh().clone();
    let u_load = |t: f64| {
        let mut full = volume_load_vector(space, &ops.rule, |x| case.body_force(x, t));
        let traction = boundary_load_vector(
            space,
            &ops.face_rule,
            |f| !mesh.is_dirichlet_face(f),
            |x, n| case.traction(x, n, t),
        );
        full.iter_mut().zip(&traction).for_each(|(a, b)| *a += b);
        space.restrict(&full)
    };
    let psi_load = |t: f64| {
        let vol = volume_load_scalar(scalar, &ops.rule, |x| case.charge_source(x, t));
        let flux =
            boundary_load_scalar(scalar, &ops.face_rule, |_| true, |x, n| case.flux(x, n, t));
        vol.iter().zip(&flux).map(|(a, b)| -a - b).collect()
    };
    let dirichlet = |t: f64| {
        (
            space.dirichlet_lift(|x| case.displacement(x, t).0),
            space.dirichlet_lift(|x| case.velocity(x, t)),
        )
    };
    let sources = Sources {
        u_load: Some(Box::new(u_load)),
        psi_load: Some(Box::new(psi_load)),
        dirichlet: Some(Box::new(dirichlet)),
    };
    let stepper = Stepper::new(&ops, grid)?;
    let state = stepper.solve_state(&ControlTrajectory::zeros(grid, ops.n_faces()), &sources)?;

    let n = grid.steps;
    let t = grid.final_time;
    let lift = state.lift.as_ref().map(|l| l[n].as_slice());
    let full = space.extend(&state.u[n], lift);
    let rule = default_rule(degree + 1);
    let (u_l2, u_h1) = vector_errors(space, &full, &rule, |x| case.displacement(x, t));
    let (psi_l2, psi_h1) = scalar_errors(scalar, &state.psi[n], &rule, |x| case.potential(x, t));
    Ok(ConvergenceRow {
        m: 0,
        h: 0.0,
        steps: n,
        n_dofs: ops.n_u() + ops.n_psi(),
        u_l2,
        u_h1,
        psi_l2,
        psi_h1,
    })
}

/// Runs the manufactured case on every level `M` with `M * N0` steps.
pub fn run_convergence_study(cfg: &RunConfig) -> Result<ConvergenceTable> {
    let case = ManufacturedCase::new();
    run_convergence_with(cfg, &case)
}

pub fn run_convergence_with(cfg: &RunConfig, case: &dyn ExactSolution) -> Result<ConvergenceTable> {
    let rows = cfg
        .levels
        .par_iter()
        .map(|&m| {
            let grid = TimeGrid::new(cfg.final_time, cfg.steps_for_level(m));
            let mut row = solve_exact_case(case, cfg.build_mesh(m)?, cfg.degree, grid)?;
            row.m = m;
            row.h = 1.0 / m as f64;
            info!(
                "level M={m}: u L2 {:.3e} H1 {:.3e}, psi L2 {:.3e} H1 {:.3e}",
                row.u_l2, row.u_h1, row.psi_l2, row.psi_h1
            );
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    let table = ConvergenceTable {
        degree: cfg.degree,
        rows,
    };
    table.write(&cfg.out_dir)?;
    Ok(table)
}
