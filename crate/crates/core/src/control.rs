//! Discrete controls: face-constant in space, continuous piecewise linear in
//! time, vanishing at `t = 0`.
//!
//! The control inner product is the H1-in-time seminorm
//! `[[g, y]] = sum_n sum_F |F| (g_n - g_{n-1})(y_n - y_{n-1}) / dt`.
//! For a fixed face it is `(|F| / dt) T` with `T = tridiag(-1, 2, -1)` over
//! steps `1..=N` and a last diagonal entry of 1.

use std::io::Write;

use crate::error::{Error, Result};
use crate::fespace::sparse::{CsrMatrix, SparseLu};
use crate::mesh::{cube_side, Mesh};
use crate::timestepper::TimeGrid;

/// Box bounds `lower <= z <= upper`, with `lower <= 0 <= upper`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

impl Bounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower <= 0.0 && upper >= 0.0) {
            return Err(Error::InfeasibleBounds { lower, upper });
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded() -> Self {
        Self {
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
        }
    }

    pub fn contains(&self, v: f64, tol: f64) -> bool {
        v >= self.lower - tol && v <= self.upper + tol
    }
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            lower: -1e6,
            upper: 1e6,
        }
    }
}

/// Values `z_n[F]` for `n = 0..=N`, stored step-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlTrajectory {
    grid: TimeGrid,
    n_faces: usize,
    values: Vec<f64>,
}

impl ControlTrajectory {
    pub fn zeros(grid: TimeGrid, n_faces: usize) -> Self {
        Self {
            grid,
            n_faces,
            values: vec![0.0; (grid.steps + 1) * n_faces],
        }
    }

    /// Builds from `f(n, face)` for `n >= 1`; `z_0` is zero.
    pub fn from_fn(grid: TimeGrid, n_faces: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut z = Self::zeros(grid, n_faces);
        for n in 1..=grid.steps {
            for face in 0..n_faces {
                z.values[n * n_faces + face] = f(n, face);
            }
        }
        z
    }

    /// Builds from per-step rows; the first row must be zero.
    pub fn from_rows(grid: TimeGrid, rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() != grid.steps + 1 {
            return Err(Error::GridMismatch(format!(
                "{} rows for {} steps",
                rows.len(),
                grid.steps
            )));
        }
        let n_faces = rows[0].len();
        if rows.iter().any(|r| r.len() != n_faces) {
            return Err(Error::Dimension("ragged control rows".into()));
        }
        if rows[0].iter().any(|&v| v != 0.0) {
            return Err(Error::Dimension("control must vanish at t = 0".into()));
        }
        Ok(Self {
            grid,
            n_faces,
            values: rows.concat(),
        })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn n_faces(&self) -> usize {
        self.n_faces
    }

    pub fn steps(&self) -> usize {
        self.grid.steps
    }

    pub fn at(&self, n: usize) -> &[f64] {
        &self.values[n * self.n_faces..(n + 1) * self.n_faces]
    }

    /// Mutable access to `z_n`, `n >= 1`.
    pub fn at_mut(&mut self, n: usize) -> &mut [f64] {
        assert!(n >= 1, "z_0 is fixed at zero");
        &mut self.values[n * self.n_faces..(n + 1) * self.n_faces]
    }

    pub fn get(&self, n: usize, face: usize) -> f64 {
        self.values[n * self.n_faces + face]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..=self.steps()).map(|n| self.at(n).to_vec()).collect()
    }

    /// Unknowns `z_1..z_N` as a flat step-major vector.
    pub fn unknowns(&self) -> &[f64] {
        &self.values[self.n_faces..]
    }

    pub fn from_unknowns(grid: TimeGrid, n_faces: usize, x: &[f64]) -> Self {
        assert_eq!(x.len(), grid.steps * n_faces);
        let mut values = vec![0.0; n_faces];
        values.extend_from_slice(x);
        Self {
            grid,
            n_faces,
            values,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid || self.n_faces != other.n_faces {
            return Err(Error::GridMismatch(
                "control trajectories on different grids".into(),
            ));
        }
        Ok(())
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: f64, other: &Self) -> Self {
        assert!(
            self.grid == other.grid && self.n_faces == other.n_faces,
            "grid mismatch"
        );
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| x + a * y)
            .collect();
        Self {
            grid: self.grid,
            n_faces: self.n_faces,
            values,
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            grid: self.grid,
            n_faces: self.n_faces,
            values: self.values.iter().map(|v| a * v).collect(),
        }
    }

    /// Area-weighted mean of `z_n` over the boundary.
    pub fn step_mean(&self, n: usize, areas: &[f64]) -> f64 {
        let total: f64 = areas.iter().sum();
        self.at(n)
            .iter()
            .zip(areas)
            .map(|(z, a)| z * a)
            .sum::<f64>()
            / total
    }

    pub fn is_admissible(&self, areas: &[f64], bounds: Bounds, tol: f64) -> bool {
        let total: f64 = areas.iter().sum();
        (0..=self.steps()).all(|n| {
            self.at(n).iter().all(|&v| bounds.contains(v, tol))
                && (self.step_mean(n, areas) * total).abs() <= tol
        })
    }

    /// CSV with header `n,t_n,face_id,value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "n,t_n,face_id,value")?;
        for n in 0..=self.steps() {
            let t = self.grid.time(n);
            for (f, v) in self.at(n).iter().enumerate() {
                writeln!(w, "{n},{t:.12e},{f},{v:.12e}")?;
            }
        }
        Ok(())
    }
}

/// Face areas and step size defining the control inner product.
#[derive(Clone, Debug)]
pub struct ZMetric {
    pub areas: Vec<f64>,
    pub dt: f64,
}

impl ZMetric {
    pub fn new(areas: Vec<f64>, dt: f64) -> Self {
        Self { areas, dt }
    }

    pub fn inner(&self, g: &ControlTrajectory, y: &ControlTrajectory) -> Result<f64> {
        g.check_same(y)?;
        if g.n_faces() != self.areas.len() {
            return Err(Error::GridMismatch(
                "metric and control face counts differ".into(),
            ));
        }
        let mut s = 0.0;
        for n in 1..=g.steps() {
            let (g0, g1, y0, y1) = (g.at(n - 1), g.at(n), y.at(n - 1), y.at(n));
            for f in 0..g.n_faces() {
                s += self.areas[f] * (g1[f] - g0[f]) * (y1[f] - y0[f]);
            }
        }
        Ok(s / self.dt)
    }

    pub fn norm(&self, z: &ControlTrajectory) -> Result<f64> {
        Ok(self.inner(z, z)?.max(0.0).sqrt())
    }

    /// The Gram matrix over unknowns `(n, F)`, `n = 1..=N`, step-major.
    pub fn matrix(&self, steps: usize) -> CsrMatrix {
        let nf = self.areas.len();
        let mut t = Vec::with_capacity(3 * steps * nf);
        for n in 0..steps {
            for (f, &a) in self.areas.iter().enumerate() {
                let c = a / self.dt;
                let i = n * nf + f;
                t.push((i, i, if n + 1 == steps { c } else { 2.0 * c }));
                if n + 1 < steps {
                    t.push((i, i + nf, -c));
                    t.push((i + nf, i, -c));
                }
            }
        }
        CsrMatrix::from_triplets(steps * nf, steps * nf, &t)
    }

    /// Per-step area-weighted mean removal.
    pub fn subtract_mean(&self, z: &mut ControlTrajectory) {
        for n in 1..=z.steps() {
            let m = z.step_mean(n, &self.areas);
            z.at_mut(n).iter_mut().for_each(|v| *v -= m);
        }
    }
}

/// Solves `T x = r` for the per-face time matrix, `T = tridiag(-1, 2, -1)`
/// with last diagonal entry 1 (Thomas algorithm).
fn solve_time_tridiagonal(rhs: &mut [f64]) {
    let n = rhs.len();
    if n == 0 {
        return;
    }
    let mut c = vec![0.0; n];
    let diag = |i: usize| if i + 1 == n { 1.0 } else { 2.0 };
    let mut denom = diag(0);
    c[0] = -1.0 / denom;
    rhs[0] /= denom;
    for i in 1..n {
        denom = diag(i) + c[i - 1];
        c[i] = -1.0 / denom;
        rhs[i] = (rhs[i] + rhs[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}

/// Right-hand side weights of the gradient equation: the exact pairing of
/// the piecewise linear interpolant of `beta` with each hat function.
fn beta_load(beta: &[Vec<f64>], dt: f64) -> Vec<Vec<f64>> {
    let steps = beta.len() - 1;
    (1..=steps)
        .map(|n| {
            (0..beta[n].len())
                .map(|f| {
                    if n < steps {
                        dt * (beta[n - 1][f] / 6.0 + 2.0 * beta[n][f] / 3.0 + beta[n + 1][f] / 6.0)
                    } else {
                        dt * (beta[n - 1][f] / 6.0 + beta[n][f] / 3.0)
                    }
                })
                .collect()
        })
        .collect()
}

/// Riesz representative `g` of `y -> int <beta, y>_Gamma + alpha [[z, y]]`,
/// followed by per-step mean removal.
///
/// `beta[n][F]` holds the face moment of the adjoint trace at `t_n`.
pub fn riesz_gradient(
    metric: &ZMetric,
    beta: &[Vec<f64>],
    z: &ControlTrajectory,
    alpha: f64,
) -> Result<ControlTrajectory> {
    let (steps, nf) = (z.steps(), z.n_faces());
    if beta.len() != steps + 1 || beta.iter().any(|b| b.len() != nf) {
        return Err(Error::GridMismatch(
            "beta series does not match control grid".into(),
        ));
    }
    if metric.areas.len() != nf {
        return Err(Error::GridMismatch(
            "metric and control face counts differ".into(),
        ));
    }
    let load = beta_load(beta, metric.dt);
    let mut g = ControlTrajectory::zeros(z.grid(), nf);
    let mut col = vec![0.0; steps];
    for f in 0..nf {
        let scale = metric.dt / metric.areas[f];
        for n in 0..steps {
            col[n] = load[n][f] * scale;
        }
        solve_time_tridiagonal(&mut col);
        for n in 1..=steps {
            g.values[n * nf + f] = col[n - 1] + alpha * z.get(n, f);
        }
    }
    metric.subtract_mean(&mut g);
    Ok(g)
}

/// Exact `int_0^T <beta(t), y(t)>_Gamma dt` for piecewise linear `beta`
/// (given as face moments) and `y`.
pub fn pair_beta(beta: &[Vec<f64>], y: &ControlTrajectory) -> Result<f64> {
    if beta.len() != y.steps() + 1 || beta.iter().any(|b| b.len() != y.n_faces()) {
        return Err(Error::GridMismatch(
            "beta series does not match control grid".into(),
        ));
    }
    let dt = y.grid().dt();
    let mut s = 0.0;
    for n in 1..=y.steps() {
        let (b0, b1, y0, y1) = (&beta[n - 1], &beta[n], y.at(n - 1), y.at(n));
        for f in 0..y.n_faces() {
            s += 2.0 * b0[f] * y0[f] + b0[f] * y1[f] + b1[f] * y0[f] + 2.0 * b1[f] * y1[f];
        }
    }
    Ok(s * dt / 6.0)
}

/// Integrals `sum_{F on side} |F| z_n[F]` for the six sides of the unit cube.
pub fn side_integrals(mesh: &Mesh, areas: &[f64], z: &ControlTrajectory) -> Vec<[f64; 6]> {
    let sides: Vec<usize> = (0..mesh.n_boundary_faces())
        .map(|f| cube_side(&mesh.face_centroid(f)) as usize - 1)
        .collect();
    (0..=z.steps())
        .map(|n| {
            let mut s = [0.0; 6];
            for (f, v) in z.at(n).iter().enumerate() {
                s[sides[f]] += areas[f] * v;
            }
            s
        })
        .collect()
}

/// CSV with header `t_n,side,integral`; sides are numbered 1..=6.
pub fn write_side_integrals_csv<W: Write>(
    mut w: W,
    grid: TimeGrid,
    integrals: &[[f64; 6]],
) -> Result<()> {
    writeln!(w, "t_n,side,integral")?;
    for (n, row) in integrals.iter().enumerate() {
        for (s, v) in row.iter().enumerate() {
            writeln!(w, "{:.12e},{},{:.12e}", grid.time(n), s + 1, v)?;
        }
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Active {
    Free,
    Lower,
    Upper,
}

/// Best approximation of `raw` in the admissible set: zero area-weighted
/// mean per step and `bounds` at every node.
///
/// Uses mean subtraction when that is feasible, otherwise a primal
/// active-set method started from `warm` (if admissible) or from zero.
pub fn project_q(
    metric: &ZMetric,
    raw: &ControlTrajectory,
    bounds: Bounds,
    warm: Option<&ControlTrajectory>,
) -> Result<ControlTrajectory> {
    Bounds::new(bounds.lower, bounds.upper)?;
    let (steps, nf) = (raw.steps(), raw.n_faces());
    if metric.areas.len() != nf {
        return Err(Error::GridMismatch(
            "metric and control face counts differ".into(),
        ));
    }
    let mut fast = raw.clone();
    metric.subtract_mean(&mut fast);
    if fast.values.iter().all(|&v| bounds.contains(v, 0.0)) {
        return Ok(fast);
    }

    let nv = steps * nf;
    let h = metric.matrix(steps);
    let target = raw.unknowns().to_vec();
    let hz = h.mul_vec(&target);

    let mut q = match warm {
        Some(w)
            if w.grid == raw.grid
                && w.n_faces == nf
                && w.is_admissible(&metric.areas, bounds, 0.0) =>
        {
            w.unknowns().to_vec()
        }
        _ => vec![0.0; nv],
    };
    let mut state: Vec<Active> = q
        .iter()
        .map(|&v| {
            if v == bounds.lower {
                Active::Lower
            } else if v == bounds.upper {
                Active::Upper
            } else {
                Active::Free
            }
        })
        .collect();

    let scale = 1.0 + target.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let tol = 1e-12 * scale;
    let max_iter = 10 * nv + 100;
    for _ in 0..max_iter {
        let (q_eq, mu) = solve_equality_qp(metric, &h, &hz, &q, &state, steps, nf)?;
        let p: Vec<f64> = q_eq.iter().zip(&q).map(|(a, b)| a - b).collect();
        let step_norm = p.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if step_norm <= tol {
            q = q_eq;
            // multipliers of active bounds
            let mut grad = h.mul_vec(&q);
            for (g, hz) in grad.iter_mut().zip(&hz) {
                *g -= hz;
            }
            let nu = bound_multipliers(metric, &grad, &mu, &state, steps, nf);
            let worst = nu
                .iter()
                .enumerate()
                .filter(|(i, _)| state[*i] != Active::Free)
                .min_by(|a, b| a.1.total_cmp(b.1));
            match worst {
                Some((i, &v)) if v < -1e-12 * scale => state[i] = Active::Free,
                _ => return Ok(ControlTrajectory::from_unknowns(raw.grid, nf, &q)),
            }
            continue;
        }
        // ratio test
        let mut alpha = 1.0;
        let mut blocking = None;
        for i in 0..nv {
            if state[i] != Active::Free {
                continue;
            }
            if p[i] < 0.0 && bounds.lower.is_finite() {
                let a = (bounds.lower - q[i]) / p[i];
                if a < alpha {
                    alpha = a.max(0.0);
                    blocking = Some((i, Active::Lower));
                }
            } else if p[i] > 0.0 && bounds.upper.is_finite() {
                let a = (bounds.upper - q[i]) / p[i];
                if a < alpha {
                    alpha = a.max(0.0);
                    blocking = Some((i, Active::Upper));
                }
            }
        }
        for i in 0..nv {
            if state[i] == Active::Free {
                q[i] += alpha * p[i];
            }
        }
        if let Some((i, side)) = blocking {
            state[i] = side;
            q[i] = if side == Active::Lower {
                bounds.lower
            } else {
                bounds.upper
            };
        }
    }
    Err(Error::Singular("projection active-set iteration limit"))
}

/// Orthogonal projection (in the control metric) of `v` onto the subspace
/// of zero-mean controls vanishing on the entries flagged in `fixed`.
///
/// `fixed` is indexed like the stored values, `n * n_faces + face`, and its
/// `n = 0` entries are ignored.
pub fn project_subspace(
    metric: &ZMetric,
    v: &ControlTrajectory,
    fixed: &[bool],
) -> Result<ControlTrajectory> {
    let (steps, nf) = (v.steps(), v.n_faces());
    if fixed.len() != (steps + 1) * nf {
        return Err(Error::Dimension(
            "mask length does not match control".into(),
        ));
    }
    if !fixed[nf..].iter().any(|&a| a) {
        let mut out = v.clone();
        metric.subtract_mean(&mut out);
        return Ok(out);
    }
    let h = metric.matrix(steps);
    let hz = h.mul_vec(v.unknowns());
    let state: Vec<Active> = fixed[nf..]
        .iter()
        .map(|&a| if a { Active::Lower } else { Active::Free })
        .collect();
    let (q, _) = solve_equality_qp(metric, &h, &hz, &vec![0.0; steps * nf], &state, steps, nf)?;
    Ok(ControlTrajectory::from_unknowns(v.grid(), nf, &q))
}

/// Minimizes the projection objective with active entries held at their
/// current values and the mean constraint on steps that still have free
/// entries. Returns the point and the per-step multipliers (NaN where the
/// constraint row was dropped).
fn solve_equality_qp(
    metric: &ZMetric,
    h: &CsrMatrix,
    hz: &[f64],
    q: &[f64],
    state: &[Active],
    steps: usize,
    nf: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let nv = steps * nf;
    let free: Vec<usize> = (0..nv).filter(|&i| state[i] == Active::Free).collect();
    let mut pos = vec![usize::MAX; nv];
    for (k, &i) in free.iter().enumerate() {
        pos[i] = k;
    }
    let rows: Vec<usize> = (0..steps)
        .filter(|&n| (0..nf).any(|f| state[n * nf + f] == Active::Free))
        .collect();
    let nfree = free.len();
    let dim = nfree + rows.len();
    let mut trip = Vec::new();
    let mut rhs = vec![0.0; dim];
    for (k, &i) in free.iter().enumerate() {
        rhs[k] = hz[i];
        for (j, v) in h.row(i) {
            if pos[j] != usize::MAX {
                trip.push((k, pos[j], v));
            } else {
                rhs[k] -= v * q[j];
            }
        }
    }
    for (r, &n) in rows.iter().enumerate() {
        let mut fixed = 0.0;
        for f in 0..nf {
            let i = n * nf + f;
            let a = metric.areas[f];
            if pos[i] != usize::MAX {
                trip.push((nfree + r, pos[i], a));
                trip.push((pos[i], nfree + r, a));
            } else {
                fixed += a * q[i];
            }
        }
        rhs[nfree + r] = -fixed;
    }
    let mut out = q.to_vec();
    let mut mu = vec![f64::NAN; steps];
    if dim == 0 {
        return Ok((out, mu));
    }
    let kkt = CsrMatrix::from_triplets(dim, dim, &trip);
    let x = SparseLu::new(&kkt, "projection KKT system")?.solve(&rhs);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("projection KKT system"));
    }
    for (k, &i) in free.iter().enumerate() {
        out[i] = x[k];
    }
    for (r, &n) in rows.iter().enumerate() {
        mu[n] = x[nfree + r];
    }
    Ok((out, mu))
}

/// Sign-corrected multipliers of active bounds; nonnegative at optimality.
///
/// For steps whose mean constraint was dropped (all entries fixed), the
/// free multiplier is chosen to maximize the smallest bound multiplier.
fn bound_multipliers(
    metric: &ZMetric,
    grad: &[f64],
    mu: &[f64],
    state: &[Active],
    steps: usize,
    nf: usize,
) -> Vec<f64> {
    let mut nu = vec![0.0; grad.len()];
    for n in 0..steps {
        let idx = |f: usize| n * nf + f;
        let m = if mu[n].is_nan() {
            best_free_multiplier(metric, grad, state, n, nf)
        } else {
            mu[n]
        };
        for f in 0..nf {
            let r = grad[idx(f)] + m * metric.areas[f];
            nu[idx(f)] = match state[idx(f)] {
                Active::Free => 0.0,
                Active::Lower => r,
                Active::Upper => -r,
            };
        }
    }
    nu
}

fn best_free_multiplier(
    metric: &ZMetric,
    grad: &[f64],
    state: &[Active],
    n: usize,
    nf: usize,
) -> f64 {
    let lowers: Vec<usize> = (0..nf)
        .filter(|&f| state[n * nf + f] == Active::Lower)
        .collect();
    let uppers: Vec<usize> = (0..nf)
        .filter(|&f| state[n * nf + f] == Active::Upper)
        .collect();
    let a = &metric.areas;
    let value = |m: f64| {
        let l = lowers
            .iter()
            .map(|&f| grad[n * nf + f] + m * a[f])
            .fold(f64::INFINITY, f64::min);
        let u = uppers
            .iter()
            .map(|&f| -(grad[n * nf + f] + m * a[f]))
            .fold(f64::INFINITY, f64::min);
        l.min(u)
    };
    if uppers.is_empty() {
        return 1e300_f64.sqrt();
    }
    if lowers.is_empty() {
        return -1e300_f64.sqrt();
    }
    let mut best = (f64::NEG_INFINITY, 0.0);
    for &i in &lowers {
        for &j in &uppers {
            let m = -(grad[n * nf + i] + grad[n * nf + j]) / (a[i] + a[j]);
            let v = value(m);
            if v > best.0 {
                best = (v, m);
            }
        }
    }
    best.1
}

/// Value of the projection objective `[[raw - q, raw - q]]`.
pub fn distance_sq(
    metric: &ZMetric,
    raw: &ControlTrajectory,
    q: &ControlTrajectory,
) -> Result<f64> {
    let d = raw.axpy(-1.0, q);
    metric.inner(&d, &d)
}
