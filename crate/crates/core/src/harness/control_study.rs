//! Optimal control under joint space-time refinement.

use std::path::Path;

use log::info;
use rayon::prelude::*;

use super::config::RunConfig;
use super::plot::{Chart, Series};
use super::{build_operators, create_output, write_table};
use crate::control::{side_integrals, write_side_integrals_csv, ControlTrajectory};
use crate::error::Result;
use crate::mesh::Point3;
use crate::optimizer::{optimize, OptimizerOptions, OptimizerReport, ReducedProblem};
use crate::timestepper::TimeGrid;

/// Tracking target of the study, the same for all three components.
pub fn study_target(x: &Point3, t: f64) -> [f64; 3] {
    let v = t * t * x[1] * (x[1] - 1.0) * (x[0] + x[1] + x[2]);
    [v; 3]
}

#[derive(Clone, Debug)]
pub struct ControlLevel {
    pub m: usize,
    pub grid: TimeGrid,
    pub report: OptimizerReport,
    pub control: ControlTrajectory,
    pub j_fd: f64,
    /// `dt * sum_n ||(z_n - z_{n-1}) / dt||^2`.
    pub zeta: f64,
    pub side_integrals: Vec<[f64; 6]>,
}

#[derive(Clone, Debug)]
pub struct ControlStudy {
    pub levels: Vec<ControlLevel>,
}

/// Piecewise linear interpolation of a nodal series on a uniform grid.
fn interpolate(grid: TimeGrid, values: &[f64], t: f64) -> f64 {
    let s = (t / grid.dt()).clamp(0.0, grid.steps as f64);
    let n = (s.floor() as usize).min(grid.steps.saturating_sub(1));
    let w = s - n as f64;
    (1.0 - w) * values[n] + w * values[(n + 1).min(grid.steps)]
}

impl ControlStudy {
    fn reference(&self) -> &ControlLevel {
        self.levels.last().expect("study has at least one level")
    }

    /// `|zeta_h - zeta_ref| / zeta_ref` for all but the reference level.
    pub fn eps_z(&self) -> Vec<f64> {
        let r = self.reference().zeta;
        self.levels[..self.levels.len() - 1]
            .iter()
            .map(|l| ((l.zeta - r) / r).abs())
            .collect()
    }

    /// `|j_h - j_ref| / j_ref` for all but the reference level.
    pub fn eps_j(&self) -> Vec<f64> {
        let r = self.reference().j_fd;
        self.levels[..self.levels.len() - 1]
            .iter()
            .map(|l| ((l.j_fd - r) / r).abs())
            .collect()
    }

    /// Sup-in-time distance between the side integrals of consecutive
    /// levels, maximized over the six sides. Both curves are piecewise
    /// linear, so the maximum is attained at a node of either grid.
    pub fn side_gaps(&self) -> Vec<f64> {
        self.levels
            .windows(2)
            .map(|w| {
                let (a, b) = (&w[0], &w[1]);
                let mut times: Vec<f64> = a.grid.times();
                times.extend(b.grid.times());
                let mut gap: f64 = 0.0;
                for side in 0..6 {
                    let sa: Vec<f64> = a.side_integrals.iter().map(|r| r[side]).collect();
                    let sb: Vec<f64> = b.side_integrals.iter().map(|r| r[side]).collect();
                    for &t in &times {
                        gap = gap
                            .max((interpolate(a.grid, &sa, t) - interpolate(b.grid, &sb, t)).abs());
                    }
                }
                gap
            })
            .collect()
    }

    pub fn iterations(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.report.iterations).collect()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .levels
            .iter()
            .map(|l| {
                vec![
                    l.m.to_string(),
                    format!("{:.6e}", 1.0 / l.m as f64),
                    l.grid.steps.to_string(),
                    l.report.iterations.to_string(),
                    l.report.converged.to_string(),
                    l.report.line_search_failed.to_string(),
                    format!("{:.10e}", l.j_fd),
                    format!("{:.10e}", l.zeta),
                ]
            })
            .collect();
        write_table(
            dir,
            "iterations.csv",
            &[
                "M",
                "h",
                "steps",
                "iterations",
                "converged",
                "line_search_failed",
                "j_fd",
                "zeta",
            ],
            &rows,
        )?;

        let (ez, ej) = (self.eps_z(), self.eps_j());
        let rows: Vec<Vec<String>> = self.levels[..self.levels.len() - 1]
            .iter()
            .enumerate()
            .map(|(i, l)| {
                vec![
                    l.m.to_string(),
                    format!("{:.6e}", 1.0 / l.m as f64),
                    format!("{:.6e}", ez[i]),
                    format!("{:.6e}", ej[i]),
                ]
            })
            .collect();
        write_table(
            dir,
            "control_convergence.csv",
            &["M", "h", "eps_z", "eps_j"],
            &rows,
        )?;

        let gaps: Vec<Vec<String>> = self
            .side_gaps()
            .iter()
            .zip(self.levels.windows(2))
            .map(|(g, w)| vec![w[0].m.to_string(), w[1].m.to_string(), format!("{g:.6e}")])
            .collect();
        write_table(
            dir,
            "side_gaps.csv",
            &["M_coarse", "M_fine", "sup_gap"],
            &gaps,
        )?;

        for l in &self.levels {
            write_side_integrals_csv(
                create_output(dir, &format!("side_integrals_M{}.csv", l.m))?,
                l.grid,
                &l.side_integrals,
            )?;
            l.report
                .write_csv(create_output(dir, &format!("trace_M{}.csv", l.m))?)?;
        }

        let h: Vec<f64> = self.levels[..self.levels.len() - 1]
            .iter()
            .map(|l| 1.0 / l.m as f64)
            .collect();
        let mut chart = Chart::new("control convergence", "h", "relative difference").log_log();
        chart = chart.with(Series::new(
            "eps_z",
            h.iter().copied().zip(ez.iter().copied()).collect(),
        ));
        chart = chart.with(Series::new(
            "eps_j",
            h.iter().copied().zip(ej.iter().copied()).collect(),
        ));
        if let (Some(&h0), Some(&e0)) = (h.first(), ez.first()) {
            chart = chart.with(
                Series::new("order 1", h.iter().map(|&x| (x, e0 * x / h0)).collect()).dashed(),
            );
            chart = chart.with(
                Series::new(
                    "order 2",
                    h.iter().map(|&x| (x, e0 * (x / h0).powi(2))).collect(),
                )
                .dashed(),
            );
        }
        chart.write(&dir.join("fig3_control_convergence.svg"))?;

        for side in 0..6 {
            let mut chart = Chart::new(
                format!("side {} control integral", side + 1),
                "t",
                "integral",
            );
            for l in &self.levels {
                let pts = l
                    .grid
                    .times()
                    .into_iter()
                    .zip(l.side_integrals.iter().map(|r| r[side]))
                    .collect();
                chart = chart.with(Series::new(format!("M = {}", l.m), pts));
            }
            chart.write(&dir.join(format!("fig3b_side{}.svg", side + 1)))?;
        }
        Ok(())
    }
}

/// Optimizes on one level `M` with `M * N0` steps.
pub fn solve_level(cfg: &RunConfig, m: usize) -> Result<ControlLevel> {
    let materials = cfg.materials.build();
    let ops = build_operators(cfg.build_mesh(m)?, cfg.degree, &materials)?;
    let grid = TimeGrid::new(cfg.final_time, cfg.steps_for_level(m));
    let problem = ReducedProblem::from_desired(
        &ops,
        &materials,
        grid,
        study_target,
        cfg.alpha,
        cfg.bounds(),
    )?;
    let opts = OptimizerOptions {
        tol: cfg.tol,
        max_iters: cfg.max_iters,
        ..Default::default()
    };
    let (control, report) = optimize(&problem, &problem.zero_control(), opts)?;
    let j_fd = problem.evaluate_jfd(&control)?;
    let zeta = problem.metric().norm(&control)?.powi(2);
    let sides = side_integrals(ops.scalar_space().mesh(), &ops.face_areas, &control);
    info!(
        "level M={m}: {} iterations, j_fd {j_fd:.6e}, zeta {zeta:.6e}",
        report.iterations
    );
    Ok(ControlLevel {
        m,
        grid,
        report,
        control,
        j_fd,
        zeta,
        side_integrals: sides,
    })
}

/// Runs every level of the sweep; the last level is the reference.
pub fn run_control_study(cfg: &RunConfig) -> Result<ControlStudy> {
    let levels = cfg
        .levels
        .par_iter()
        .map(|&m| solve_level(cfg, m))
        .collect::<Result<Vec<_>>>()?;
    let study = ControlStudy { levels };
    study.write(&cfg.out_dir)?;
    Ok(study)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_and_gaps_of_linear_series() {
        let g1 = TimeGrid::new(1.0, 2);
        let g2 = TimeGrid::new(1.0, 4);
        assert!((interpolate(g1, &[0.0, 1.0, 4.0], 0.75) - 2.5).abs() < 1e-15);
        let level = |grid: TimeGrid, f: &dyn Fn(f64) -> f64| ControlLevel {
            m: grid.steps,
            grid,
            report: OptimizerReport::default(),
            control: ControlTrajectory::zeros(grid, 1),
            j_fd: 1.0,
            zeta: 1.0,
            side_integrals: grid.times().iter().map(|&t| [f(t); 6]).collect(),
        };
        let study = ControlStudy {
            levels: vec![
                level(g1, &|t| t),
                level(g2, &|t| t + 0.25 * (4.0 * t).fract()),
            ],
        };
        let gaps = study.side_gaps();
        assert_eq!(gaps.len(), 1);
        assert!(gaps[0] < 1e-15, "{gaps:?}");
    }

    #[test]
    fn target_vanishes_on_clamped_sides_and_at_start() {
        assert_eq!(study_target(&[0.3, 0.0, 0.5], 0.7), [0.0; 3]);
        assert_eq!(study_target(&[0.3, 1.0, 0.5], 0.7), [0.0; 3]);
        assert_eq!(study_target(&[0.3, 0.4, 0.5], 0.0), [0.0; 3]);
    }
}
