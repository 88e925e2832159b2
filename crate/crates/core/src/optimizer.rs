//! Reduced tracking functional, its adjoint-based gradient, and a projected
//! limited-memory BFGS method in the control metric.

use std::collections::VecDeque;
use std::io::Write;
use std::time::Instant;

use log::{debug, info, warn};

use crate::control::{
    project_q, project_subspace, riesz_gradient, Bounds, ControlTrajectory, ZMetric,
};
use crate::error::{Error, Result};
use crate::fespace::DiscreteOperators;
use crate::materials::MaterialSet;
use crate::mesh::Point3;
use crate::timestepper::{Sources, StateTrajectory, Stepper, TimeGrid};

/// Tracking problem `1/2 int ||u - u_d||_rho^2 + alpha/2 [[z]]^2` over the
/// admissible controls.
pub struct ReducedProblem<'a> {
    stepper: Stepper<'a>,
    metric: ZMetric,
    desired: Vec<Vec<f64>>,
    desired_mid: Vec<Vec<f64>>,
    pub alpha: f64,
    pub bounds: Bounds,
}

/// Functional value together with the state it was computed from.
pub struct Evaluation {
    pub value: f64,
    pub misfit_part: f64,
    pub state: StateTrajectory,
}

impl<'a> ReducedProblem<'a> {
    /// `desired[n]` are free coefficients of `u_d` at `t_n`.
    pub fn new(
        ops: &'a DiscreteOperators,
        grid: TimeGrid,
        desired: Vec<Vec<f64>>,
        alpha: f64,
        bounds: Bounds,
    ) -> Result<Self> {
        if alpha <= 0.0 || !alpha.is_finite() {
            return Err(Error::Config(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        Bounds::new(bounds.lower, bounds.upper)?;
        if desired.len() != grid.steps + 1 || desired.iter().any(|d| d.len() != ops.n_u()) {
            return Err(Error::Dimension(
                "desired state series does not match grid and space".into(),
            ));
        }
        let d0 = ops.rho_norm(&desired[0]);
        if d0 > 1e-12 * (1.0 + desired.iter().map(|d| ops.rho_norm(d)).fold(0.0, f64::max)) {
            warn!("desired state does not vanish at t = 0 (norm {d0:e})");
        }
        let desired_mid = desired
            .windows(2)
            .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| 0.5 * (a + b)).collect())
            .collect();
        let metric = ZMetric::new(ops.face_areas.clone(), grid.dt());
        Ok(Self {
            stepper: Stepper::new(ops, grid)?,
            metric,
            desired,
            desired_mid,
            alpha,
            bounds,
        })
    }

    /// Projects `u_d(x, t_n)` onto the displacement space for every node.
    pub fn from_desired(
        ops: &'a DiscreteOperators,
        materials: &MaterialSet,
        grid: TimeGrid,
        desired: impl Fn(&Point3, f64) -> [f64; 3] + Sync,
        alpha: f64,
        bounds: Bounds,
    ) -> Result<Self> {
        let series = grid
            .times()
            .iter()
            .map(|&t| ops.project_l2_weighted(|x| desired(x, t), materials))
            .collect::<Result<Vec<_>>>()?;
        Self::new(ops, grid, series, alpha, bounds)
    }

    pub fn ops(&self) -> &DiscreteOperators {
        self.stepper.ops()
    }

    pub fn grid(&self) -> TimeGrid {
        self.stepper.grid()
    }

    pub fn metric(&self) -> &ZMetric {
        &self.metric
    }

    pub fn desired(&self) -> &[Vec<f64>] {
        &self.desired
    }

    pub fn zero_control(&self) -> ControlTrajectory {
        ControlTrajectory::zeros(self.grid(), self.ops().n_faces())
    }

    /// Simpson-weighted misfit `dt/12 sum (|e_{n-1}|^2 + 4|e_mid|^2 + |e_n|^2)`.
    pub fn misfit(&self, u: &[Vec<f64>]) -> f64 {
        let ops = self.ops();
        let dt = self.grid().dt();
        let err = |n: usize| -> Vec<f64> {
            u[n].iter()
                .zip(&self.desired[n])
                .map(|(a, b)| a - b)
                .collect()
        };
        let mut sq: Vec<f64> = Vec::with_capacity(u.len());
        let errs: Vec<Vec<f64>> = (0..u.len()).map(err).collect();
        for e in &errs {
            sq.push(ops.mass.bilinear(e, e));
        }
        let mut s = 0.0;
        for n in 1..u.len() {
            let mid: Vec<f64> = u[n - 1]
                .iter()
                .zip(&u[n])
                .zip(&self.desired_mid[n - 1])
                .map(|((a, b), d)| 0.5 * (a + b) - d)
                .collect();
            s += sq[n - 1] + 4.0 * ops.mass.bilinear(&mid, &mid) + sq[n];
        }
        s * dt / 12.0
    }

    pub fn evaluate(&self, z: &ControlTrajectory) -> Result<Evaluation> {
        let state = self.stepper.solve_state(z, &Sources::none())?;
        let misfit_part = self.misfit(&state.u);
        let penalty = 0.5 * self.alpha * self.metric.inner(z, z)?;
        Ok(Evaluation {
            value: misfit_part + penalty,
            misfit_part,
            state,
        })
    }

    pub fn evaluate_jfd(&self, z: &ControlTrajectory) -> Result<f64> {
        Ok(self.evaluate(z)?.value)
    }

    /// Gradient at `z` reusing an already computed state.
    pub fn gradient_from(
        &self,
        z: &ControlTrajectory,
        eval: &Evaluation,
    ) -> Result<ControlTrajectory> {
        let data: Vec<Vec<f64>> = eval
            .state
            .u
            .iter()
            .zip(&self.desired)
            .map(|(u, d)| u.iter().zip(d).map(|(a, b)| a - b).collect())
            .collect();
        let adj = self.stepper.solve_adjoint(&data)?;
        riesz_gradient(&self.metric, &adj.beta, z, self.alpha)
    }

    pub fn evaluate_gradient(&self, z: &ControlTrajectory) -> Result<ControlTrajectory> {
        let eval = self.evaluate(z)?;
        self.gradient_from(z, &eval)
    }

    pub fn project(
        &self,
        z: &ControlTrajectory,
        warm: Option<&ControlTrajectory>,
    ) -> Result<ControlTrajectory> {
        project_q(&self.metric, z, self.bounds, warm)
    }

    /// `[[z - Q(z - g)]]`, the stopping measure.
    pub fn projected_gradient_norm(
        &self,
        z: &ControlTrajectory,
        g: &ControlTrajectory,
    ) -> Result<f64> {
        let q = self.project(&z.axpy(-1.0, g), Some(z))?;
        self.metric.norm(&z.axpy(-1.0, &q))
    }

    /// Relative tracking error `||u - u_d||_rho / ||u_d||_rho` in the time
    /// integrated (Simpson) sense.
    pub fn relative_misfit(&self, u: &[Vec<f64>]) -> f64 {
        let zero: Vec<Vec<f64>> = self.desired.iter().map(|d| vec![0.0; d.len()]).collect();
        (self.misfit(u) / self.misfit(&zero)).sqrt()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct OptimizerOptions {
    pub tol: f64,
    pub max_iters: usize,
    pub memory: usize,
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iters: 100,
            memory: 10,
            armijo: 1e-4,
            max_backtracks: 30,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct IterationRecord {
    pub iter: usize,
    pub value: f64,
    pub projected_grad_norm: f64,
    pub step_length: f64,
    pub backtracks: usize,
}

#[derive(Clone, Debug, Default)]
pub struct OptimizerReport {
    pub records: Vec<IterationRecord>,
    pub iterations: usize,
    pub converged: bool,
    pub line_search_failed: bool,
    pub wall_time: f64,
}

impl OptimizerReport {
    pub fn values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.value).collect()
    }

    pub fn final_value(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.value)
    }

    /// CSV with header `iter,j_fd,projected_grad_norm,step_length,backtracks`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "iter,j_fd,projected_grad_norm,step_length,backtracks")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{:.12e},{:.12e},{:.6e},{}",
                r.iter, r.value, r.projected_grad_norm, r.step_length, r.backtracks
            )?;
        }
        Ok(())
    }
}

/// L-BFGS two-loop recursion with the control inner product.
fn lbfgs_apply(
    metric: &ZMetric,
    memory: &VecDeque<(ControlTrajectory, ControlTrajectory, f64)>,
    g: &ControlTrajectory,
) -> Result<ControlTrajectory> {
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * metric.inner(s, &q)?;
        q = q.axpy(-a, y);
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = metric.inner(s, y)? / metric.inner(y, y)?;
        q = q.scaled(gamma);
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * metric.inner(y, &q)?;
        q = q.axpy(a - b, s);
    }
    Ok(q)
}

/// Entries within `eps` of a bound that the projected steepest-descent
/// point keeps at the same bound.
fn active_mask(
    z: &ControlTrajectory,
    w: &ControlTrajectory,
    bounds: Bounds,
    eps: f64,
) -> Vec<bool> {
    let nf = z.n_faces();
    let mut mask = vec![false; (z.steps() + 1) * nf];
    for n in 1..=z.steps() {
        for f in 0..nf {
            let (v, p) = (z.get(n, f), w.get(n, f));
            let at_lower = v - bounds.lower <= eps && p - bounds.lower <= eps;
            let at_upper = bounds.upper - v <= eps && bounds.upper - p <= eps;
            mask[n * nf + f] = at_lower || at_upper;
        }
    }
    mask
}

/// Search direction `-(g - g_I) - H g_I`, where `g_I` is the projection of
/// `g` onto the subspace free of active bounds and `H` the limited-memory
/// inverse Hessian built from pairs reduced to that subspace.
fn search_direction(
    metric: &ZMetric,
    memory: &VecDeque<(ControlTrajectory, ControlTrajectory, f64)>,
    g: &ControlTrajectory,
    mask: &[bool],
) -> Result<ControlTrajectory> {
    if !mask.iter().any(|&a| a) {
        return Ok(lbfgs_apply(metric, memory, g)?.scaled(-1.0));
    }
    let gi = project_subspace(metric, g, mask)?;
    let mut reduced = VecDeque::with_capacity(memory.len());
    for (s, y, _) in memory {
        let (si, yi) = (
            project_subspace(metric, s, mask)?,
            project_subspace(metric, y, mask)?,
        );
        let sy = metric.inner(&si, &yi)?;
        if sy > 1e-12 * metric.norm(&si)? * metric.norm(&yi)? {
            reduced.push_back((si, yi, 1.0 / sy));
        }
    }
    let hg = project_subspace(metric, &lbfgs_apply(metric, &reduced, &gi)?, mask)?;
    Ok(g.axpy(-1.0, &gi).axpy(1.0, &hg).scaled(-1.0))
}

/// Projected L-BFGS with Armijo backtracking on `j(Q(z + s d))`.
pub fn optimize(
    problem: &ReducedProblem,
    z_init: &ControlTrajectory,
    opts: OptimizerOptions,
) -> Result<(ControlTrajectory, OptimizerReport)> {
    if opts.tol <= 0.0 {
        return Err(Error::Config("tolerance must be positive".into()));
    }
    let start = Instant::now();
    let metric = problem.metric();
    let mut z = problem.project(z_init, None)?;
    let mut eval = problem.evaluate(&z)?;
    let mut g = problem.gradient_from(&z, &eval)?;
    let mut memory: VecDeque<(ControlTrajectory, ControlTrajectory, f64)> = VecDeque::new();
    let mut report = OptimizerReport::default();
    let (mut step_length, mut backtracks) = (0.0, 0);

    'outer: for iter in 0..=opts.max_iters {
        let w = problem.project(&z.axpy(-1.0, &g), Some(&z))?;
        let pg = metric.norm(&z.axpy(-1.0, &w))?;
        report.records.push(IterationRecord {
            iter,
            value: eval.value,
            projected_grad_norm: pg,
            step_length,
            backtracks,
        });
        debug!("iter {iter}: j = {:.10e}, |pg| = {pg:.3e}", eval.value);
        if pg <= opts.tol {
            report.converged = true;
            break;
        }
        if iter == opts.max_iters {
            break;
        }
        report.iterations = iter + 1;

        let eps = pg.min(1e-3 * (problem.bounds.upper - problem.bounds.lower));
        let mask = active_mask(&z, &w, problem.bounds, eps);
        let (z_new, eval_new) = loop {
            let mut d = search_direction(metric, &memory, &g, &mask)?;
            if metric.inner(&d, &g)? >= 0.0 {
                memory.clear();
                d = g.scaled(-1.0);
            }
            let mut s = 1.0;
            backtracks = 0;
            let accepted = loop {
                let trial = problem.project(&z.axpy(s, &d), Some(&z))?;
                let decrease = metric.inner(&g, &trial.axpy(-1.0, &z))?;
                let trial_eval = problem.evaluate(&trial)?;
                if decrease < 0.0
                    && trial_eval.value < eval.value
                    && trial_eval.value <= eval.value + opts.armijo * decrease
                {
                    break Some((trial, trial_eval));
                }
                if backtracks == opts.max_backtracks {
                    break None;
                }
                backtracks += 1;
                s *= 0.5;
            };
            step_length = s;
            match accepted {
                Some(pair) => break pair,
                None if memory.is_empty() => {
                    warn!(
                        "line search failed after {backtracks} backtracks; returning best iterate"
                    );
                    report.line_search_failed = true;
                    break 'outer;
                }
                None => memory.clear(),
            }
        };
        let g_new = problem.gradient_from(&z_new, &eval_new)?;
        let sv = z_new.axpy(-1.0, &z);
        let yv = g_new.axpy(-1.0, &g);
        let sy = metric.inner(&sv, &yv)?;
        if sy > 1e-12 * metric.norm(&sv)? * metric.norm(&yv)? {
            if memory.len() == opts.memory {
                memory.pop_front();
            }
            memory.push_back((sv, yv, 1.0 / sy));
        }
        z = z_new;
        eval = eval_new;
        g = g_new;
    }
    report.wall_time = start.elapsed().as_secs_f64();
    info!(
        "optimizer: {} iterations, j = {:.10e}, converged = {}",
        report.iterations, eval.value, report.converged
    );
    Ok((z, report))
}
