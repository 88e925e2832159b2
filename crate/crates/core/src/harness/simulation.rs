//! Twisting-cube tracking run: optimize on one mesh, re-solve the state
//! with the optimal control at a (possibly higher) degree, and write paired
//! snapshots of the computed and the desired displacement.

use std::io::Write;
use std::path::Path;

use log::info;

use super::config::RunConfig;
use super::manufactured::smooth_step;
use super::plot::{Chart, Series};
use super::vtk::VtkSnapshot;
use super::{build_operators, create_output, write_table};
use crate::error::{Error, Result};
use crate::fespace::assembly::DiscreteOperators;
use crate::mesh::Point3;
use crate::optimizer::{optimize, OptimizerOptions, ReducedProblem};
use crate::timestepper::{energy, TimeGrid};

/// Window that switches the twist on.
pub fn window_twist(t: f64) -> f64 {
    smooth_step(2.0 * t - 0.4)
}

/// Window of the vertical stretch: fully open on `[1.2, 1.7]`, zero
/// outside `(0.2, 2.7)`.
pub fn window_stretch(t: f64) -> f64 {
    smooth_step(t - 0.2) * smooth_step(2.7 - t)
}

/// Quarter twist about the vertical axis plus one vertical stretch.
pub fn twist_target(x: &Point3, t: f64) -> [f64; 3] {
    let (t1, t2) = (window_twist(t), window_stretch(t));
    [
        t1 * (0.5 - x[1]) * x[2],
        t1 * (x[0] - 0.5) * x[2],
        t2 * 2.0 * x[2],
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationSummary {
    pub iterations: usize,
    pub converged: bool,
    pub line_search_failed: bool,
    /// `j_fd` at zero and at the optimized control.
    pub j_zero: f64,
    pub j_opt: f64,
    /// Time-integrated relative misfit `||u - u_d|| / ||u_d||`.
    pub misfit_zero: f64,
    pub misfit_opt: f64,
    /// The same for the re-solve at `resolve_degree`.
    pub resolved_misfit_zero: f64,
    pub resolved_misfit_opt: f64,
    /// Final-time relative misfit of the re-solve.
    pub final_misfit_zero: f64,
    pub final_misfit_opt: f64,
    pub snapshots: Vec<String>,
}

fn vertex_values(ops: &DiscreteOperators, full: &[f64]) -> Vec<[f64; 3]> {
    let scalar = ops.scalar_space();
    (0..scalar.mesh().vertices().len())
        .map(|v| {
            let d = scalar.vertex_dof(v);
            [full[3 * d], full[3 * d + 1], full[3 * d + 2]]
        })
        .collect()
}

pub fn run_simulation(cfg: &RunConfig) -> Result<SimulationSummary> {
    let dir = &cfg.out_dir;
    let materials = cfg.materials.build();
    let grid = TimeGrid::new(cfg.final_time, cfg.single_steps());
    if let Some(&bad) = cfg.snapshots.iter().find(|&&n| n > grid.steps) {
        return Err(Error::Config(format!(
            "snapshot {bad} beyond {} steps",
            grid.steps
        )));
    }

    let ops = build_operators(cfg.build_mesh(cfg.mesh)?, cfg.degree, &materials)?;
    let problem = ReducedProblem::from_desired(
        &ops,
        &materials,
        grid,
        twist_target,
        cfg.alpha,
        cfg.bounds(),
    )?;
    let zero = problem.zero_control();
    let base = problem.evaluate(&zero)?;
    let opts = OptimizerOptions {
        tol: cfg.tol,
        max_iters: cfg.max_iters,
        ..Default::default()
    };
    let (z, report) = optimize(&problem, &zero, opts)?;
    let best = problem.evaluate(&z)?;
    info!(
        "optimization: {} iterations, j {:.6e} -> {:.6e}",
        report.iterations, base.value, best.value
    );

    report.write_csv(create_output(dir, "trace.csv")?)?;
    z.write_csv(create_output(dir, "control.csv")?)?;

    // re-solve with the optimal control on the same mesh
    let ops_hi = build_operators(cfg.build_mesh(cfg.mesh)?, cfg.resolve_degree, &materials)?;
    let resolve = ReducedProblem::from_desired(
        &ops_hi,
        &materials,
        grid,
        twist_target,
        cfg.alpha,
        cfg.bounds(),
    )?;
    let hi_zero = resolve.evaluate(&resolve.zero_control())?;
    let hi_opt = resolve.evaluate(&z)?;
    let n_final = grid.steps;
    let final_rel = |u: &[Vec<f64>]| {
        let d = &resolve.desired()[n_final];
        let diff: Vec<f64> = u[n_final].iter().zip(d).map(|(a, b)| a - b).collect();
        ops_hi.rho_norm(&diff) / ops_hi.rho_norm(d)
    };

    let mut rows = Vec::new();
    for n in 0..=n_final {
        let (u, v, psi) = (&hi_opt.state.u[n], &hi_opt.state.v[n], &hi_opt.state.psi[n]);
        let d = &resolve.desired()[n];
        let err: Vec<f64> = u.iter().zip(d).map(|(a, b)| a - b).collect();
        let err0: Vec<f64> = hi_zero.state.u[n]
            .iter()
            .zip(d)
            .map(|(a, b)| a - b)
            .collect();
        rows.push(vec![
            format!("{:.6e}", grid.time(n)),
            format!("{:.10e}", energy(&ops_hi, u, v, psi)),
            format!("{:.10e}", ops_hi.rho_norm(u)),
            format!("{:.10e}", ops_hi.rho_norm(&err)),
            format!("{:.10e}", ops_hi.rho_norm(&err0)),
            format!("{:.10e}", ops_hi.rho_norm(d)),
        ]);
    }
    write_table(
        dir,
        "trajectory.csv",
        &[
            "t_n",
            "energy",
            "u_norm",
            "misfit_opt",
            "misfit_zero",
            "target_norm",
        ],
        &rows,
    )?;
    let col = |i: usize| -> Vec<(f64, f64)> {
        rows.iter()
            .map(|r| (r[0].parse().unwrap(), r[i].parse().unwrap()))
            .collect()
    };
    Chart::new("tracking misfit", "t", "rho-norm")
        .with(Series::new("optimal control", col(3)))
        .with(Series::new("zero control", col(4)))
        .with(Series::new("target", col(5)).dashed())
        .write(&dir.join("misfit.svg"))?;

    let snap_dir = dir.join("snapshots");
    let mesh = ops_hi.scalar_space().mesh().clone();
    let mut snapshots = Vec::new();
    for &n in &cfg.snapshots {
        let t = grid.time(n);
        let full = ops_hi.space.extend(&hi_opt.state.u[n], None);
        let uh = vertex_values(&ops_hi, &full);
        let ud: Vec<[f64; 3]> = mesh.vertices().iter().map(|x| twist_target(x, t)).collect();
        for (name, disp) in [("u_h", &uh), ("u_d", &ud)] {
            let file = format!("{name}_{n:04}.vtk");
            let snap = VtkSnapshot {
                title: format!("{name} at t = {t:.4}"),
                mesh: &mesh,
                displacement: disp,
                face_values: Some(("control", z.at(n))),
                surface: true,
            };
            let mut w = create_output(&snap_dir, &file)?;
            snap.write(&mut w)?;
            w.flush()?;
            snapshots.push(file);
        }
    }

    let summary = SimulationSummary {
        iterations: report.iterations,
        converged: report.converged,
        line_search_failed: report.line_search_failed,
        j_zero: base.value,
        j_opt: best.value,
        misfit_zero: problem.relative_misfit(&base.state.u),
        misfit_opt: problem.relative_misfit(&best.state.u),
        resolved_misfit_zero: resolve.relative_misfit(&hi_zero.state.u),
        resolved_misfit_opt: resolve.relative_misfit(&hi_opt.state.u),
        final_misfit_zero: final_rel(&hi_zero.state.u),
        final_misfit_opt: final_rel(&hi_opt.state.u),
        snapshots,
    };
    write_summary(dir, &summary)?;
    Ok(summary)
}

fn write_summary(dir: &Path, s: &SimulationSummary) -> Result<()> {
    let rows = vec![
        vec!["iterations".into(), s.iterations.to_string()],
        vec!["converged".into(), s.converged.to_string()],
        vec![
            "line_search_failed".into(),
            s.line_search_failed.to_string(),
        ],
        vec!["j_zero".into(), format!("{:.10e}", s.j_zero)],
        vec!["j_opt".into(), format!("{:.10e}", s.j_opt)],
        vec!["misfit_zero".into(), format!("{:.6e}", s.misfit_zero)],
        vec!["misfit_opt".into(), format!("{:.6e}", s.misfit_opt)],
        vec![
            "resolved_misfit_zero".into(),
            format!("{:.6e}", s.resolved_misfit_zero),
        ],
        vec![
            "resolved_misfit_opt".into(),
            format!("{:.6e}", s.resolved_misfit_opt),
        ],
        vec![
            "final_misfit_zero".into(),
            format!("{:.6e}", s.final_misfit_zero),
        ],
        vec![
            "final_misfit_opt".into(),
            format!("{:.6e}", s.final_misfit_opt),
        ],
    ];
    write_table(dir, "summary.csv", &["quantity", "value"], &rows)
}
