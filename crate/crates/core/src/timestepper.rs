//! Crank-Nicolson integration of the state and adjoint systems.
//!
//! The scheme is the implicit midpoint rule for the first-order system in
//! `(u, v)`. Each step solves for the midpoint displacement and the midpoint
//! potential together:
//!
//! ```text
//! [ 4/dt^2 M + K_uu   K_upsi     0 ] [ u_mid   ]   [ r_u   ]
//! [ K_psiu           -K_psipsi  -g ] [ psi_mid ] = [ -r_psi]
//! [ 0                -g^T        0 ] [ lambda  ]   [ 0     ]
//! ```
//!
//! then sets `u_n = 2 u_mid - u_{n-1}` and
//! `v_n = 4/dt (u_mid - u_{n-1}) - v_{n-1}`. The potential at each node is
//! recovered from the grounded electrostatic problem. The adjoint runs the
//! same scheme on the reversed time axis, so a single factorization serves
//! both directions.

use crate::control::ControlTrajectory;
use crate::error::{Error, Result};
use crate::fespace::sparse::{block_matrix, dot, norm_inf, CsrMatrix, SparseLu};
use crate::fespace::DiscreteOperators;

/// Uniform partition of `[0, T]` into `steps` intervals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    pub final_time: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(final_time: f64, steps: usize) -> Self {
        assert!(
            final_time > 0.0 && steps >= 1,
            "time grid needs T > 0 and N >= 1"
        );
        Self { final_time, steps }
    }

    pub fn dt(&self) -> f64 {
        self.final_time / self.steps as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        // exact at the end point
        if n == self.steps {
            self.final_time
        } else {
            n as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|n| self.time(n)).collect()
    }
}

/// Inhomogeneous data for the state solve, all evaluated at nodes `t_n`.
///
/// * `u_load(t)`: load on the free displacement rows (body force and
///   traction moments).
/// * `psi_load(t)`: extra right-hand side of the potential rows, added to
///   `-B z(t)`.
/// * `dirichlet(t)`: full interleaved vectors of prescribed displacement
///   and velocity, nonzero only on constrained dofs.
#[derive(Default)]
pub struct Sources<'a> {
    pub u_load: Option<Box<dyn Fn(f64) -> Vec<f64> + Sync + 'a>>,
    pub psi_load: Option<Box<dyn Fn(f64) -> Vec<f64> + Sync + 'a>>,
    pub dirichlet: Option<Box<dyn Fn(f64) -> (Vec<f64>, Vec<f64>) + Sync + 'a>>,
}

impl Sources<'_> {
    pub fn none() -> Self {
        Self::default()
    }
}

#[derive(Clone, Debug)]
pub struct StateTrajectory {
    pub grid: TimeGrid,
    /// Free displacement coefficients per node.
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// Grounded potential coefficients per node.
    pub psi: Vec<Vec<f64>>,
    /// Prescribed Dirichlet values per node, when lifted.
    pub lift: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug)]
pub struct AdjointTrajectory {
    pub grid: TimeGrid,
    pub p: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub xi: Vec<Vec<f64>>,
    /// Face moments of the trace: `beta[n][F]` is the integral of `xi_n`
    /// over boundary face `F`.
    pub beta: Vec<Vec<f64>>,
}

/// Factored Crank-Nicolson step matrix and grounded potential solver for
/// one operator set and step size.
pub struct Stepper<'a> {
    ops: &'a DiscreteOperators,
    grid: TimeGrid,
    step: SparseLu,
    potential: SparseLu,
}

fn potential_matrix(ops: &DiscreteOperators) -> CsrMatrix {
    let n = ops.n_psi();
    let g: Vec<_> = ops
        .grounding
        .iter()
        .enumerate()
        .map(|(i, &v)| (i, 0, v))
        .collect();
    let g_col = CsrMatrix::from_triplets(n, 1, &g);
    let g_row = g_col.transpose();
    block_matrix(
        n + 1,
        n + 1,
        &[(0, 0, &ops.permittivity), (0, n, &g_col), (n, 0, &g_row)],
    )
}

impl<'a> Stepper<'a> {
    pub fn new(ops: &'a DiscreteOperators, grid: TimeGrid) -> Result<Self> {
        let dt = grid.dt();
        let (nu, np) = (ops.n_u(), ops.n_psi());
        let mut t = Vec::new();
        let c = 4.0 / (dt * dt);
        t.extend(ops.mass.triplets().map(|(r, col, v)| (r, col, c * v)));
        t.extend(ops.stiffness.triplets());
        t.extend(ops.coupling.triplets().map(|(r, col, v)| (r, nu + col, v)));
        t.extend(
            ops.coupling_t
                .triplets()
                .map(|(r, col, v)| (nu + r, col, v)),
        );
        t.extend(
            ops.permittivity
                .triplets()
                .map(|(r, col, v)| (nu + r, nu + col, -v)),
        );
        for (i, &g) in ops.grounding.iter().enumerate() {
            t.push((nu + i, nu + np, -g));
            t.push((nu + np, nu + i, -g));
        }
        let a = CsrMatrix::from_triplets(nu + np + 1, nu + np + 1, &t);
        let step = SparseLu::new(&a, "Crank-Nicolson step matrix")?;
        let potential = SparseLu::new(&potential_matrix(ops), "grounded potential system")?;
        Ok(Self {
            ops,
            grid,
            step,
            potential,
        })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn ops(&self) -> &DiscreteOperators {
        self.ops
    }

    /// Grounded solution of `K_psipsi psi = rhs` (up to the constant mode).
    pub fn solve_potential(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.ops.n_psi();
        let mut b = rhs.to_vec();
        b.push(0.0);
        let mut x = self.potential.solve(&b);
        x.truncate(n);
        check_finite(&x, "grounded potential system")?;
        let residual = dot(&self.ops.grounding, &x).abs();
        let scale =
            self.ops.grounding.iter().map(|g| g.abs()).sum::<f64>() * norm_inf(&x).max(1e-300);
        if residual > 1e-10 * scale.max(1e-300) && residual > 1e-14 {
            return Err(Error::Grounding { residual });
        }
        Ok(self.ops.apply_grounding(&x))
    }

    /// Potential matching displacement `u` (free) with extra rhs `psi_rhs`.
    fn potential_at(&self, u: &[f64], lift: Option<&[f64]>, psi_rhs: &[f64]) -> Result<Vec<f64>> {
        let mut rhs = self.ops.coupling_t.mul_vec(u);
        for (r, p) in rhs.iter_mut().zip(psi_rhs) {
            *r += p;
        }
        if let Some(l) = lift {
            self.ops.coupling_t_full.mul_vec_acc(1.0, l, &mut rhs);
        }
        self.solve_potential(&rhs)
    }

    /// Core loop. `u_load(n)` and `psi_rhs(n)` give nodal data at `t_n`.
    fn integrate(
        &self,
        u0: Vec<f64>,
        v0: Vec<f64>,
        u_load: &dyn Fn(usize) -> Option<Vec<f64>>,
        psi_rhs: &dyn Fn(usize) -> Vec<f64>,
        lift: Option<&dyn Fn(usize) -> (Vec<f64>, Vec<f64>)>,
    ) -> Result<(
        Vec<Vec<f64>>,
        Vec<Vec<f64>>,
        Vec<Vec<f64>>,
        Option<Vec<Vec<f64>>>,
    )> {
        let ops = self.ops;
        let (nu, np) = (ops.n_u(), ops.n_psi());
        let n_steps = self.grid.steps;
        let dt = self.grid.dt();
        let space = &ops.space;

        let mut us = Vec::with_capacity(n_steps + 1);
        let mut vs = Vec::with_capacity(n_steps + 1);
        let mut psis = Vec::with_capacity(n_steps + 1);
        let mut lifts = lift.map(|_| Vec::with_capacity(n_steps + 1));

        let mut prev_load = u_load(0);
        let mut prev_psi = psi_rhs(0);
        let mut prev_lift = lift.map(|l| l(0));
        psis.push(self.potential_at(&u0, prev_lift.as_ref().map(|l| l.0.as_slice()), &prev_psi)?);
        if let (Some(ls), Some(l)) = (lifts.as_mut(), prev_lift.as_ref()) {
            ls.push(l.0.clone());
        }
        us.push(u0);
        vs.push(v0);

        let c4 = 4.0 / (dt * dt);
        for n in 1..=n_steps {
            let cur_load = u_load(n);
            let cur_psi = psi_rhs(n);
            let cur_lift = lift.map(|l| l(n));
            let (u_prev, v_prev) = (&us[n - 1], &vs[n - 1]);

            let mut rhs = vec![0.0; nu + np + 1];
            {
                let ru = &mut rhs[..nu];
                let mut tmp: Vec<f64> = u_prev
                    .iter()
                    .zip(v_prev)
                    .map(|(u, v)| c4 * u + 2.0 / dt * v)
                    .collect();
                tmp = ops.mass.mul_vec(&tmp);
                ru.copy_from_slice(&tmp);
                match (&prev_load, &cur_load) {
                    (Some(a), Some(b)) => ru
                        .iter_mut()
                        .zip(a.iter().zip(b))
                        .for_each(|(r, (x, y))| *r += 0.5 * (x + y)),
                    (None, None) => {}
                    _ => unreachable!("load availability is uniform in time"),
                }
            }
            for (i, r) in rhs[nu..nu + np].iter_mut().enumerate() {
                *r = -0.5 * (prev_psi[i] + cur_psi[i]);
            }
            if let (Some(pl), Some(cl)) = (&prev_lift, &cur_lift) {
                let mid: Vec<f64> = pl.0.iter().zip(&cl.0).map(|(a, b)| 0.5 * (a + b)).collect();
                let dv: Vec<f64> = pl.1.iter().zip(&cl.1).map(|(a, b)| (b - a) / dt).collect();
                let ku = space.restrict(&ops.stiffness_full.mul_vec(&mid));
                let mv = space.restrict(&ops.mass_full.mul_vec(&dv));
                for i in 0..nu {
                    rhs[i] -= ku[i] + mv[i];
                }
                // psi rows were negated in the step matrix
                let kd = ops.coupling_t_full.mul_vec(&mid);
                for i in 0..np {
                    rhs[nu + i] -= kd[i];
                }
            }

            let x = self.step.solve(&rhs);
            if n == 1 {
                check_finite(&x, "Crank-Nicolson step matrix")?;
            }
            let u_mid = &x[..nu];
            let u_new: Vec<f64> = u_mid.iter().zip(u_prev).map(|(m, p)| 2.0 * m - p).collect();
            let v_new: Vec<f64> = u_mid
                .iter()
                .zip(u_prev.iter().zip(v_prev))
                .map(|(m, (p, v))| 4.0 / dt * (m - p) - v)
                .collect();
            let psi_new =
                self.potential_at(&u_new, cur_lift.as_ref().map(|l| l.0.as_slice()), &cur_psi)?;

            us.push(u_new);
            vs.push(v_new);
            psis.push(psi_new);
            if let (Some(ls), Some(l)) = (lifts.as_mut(), cur_lift.as_ref()) {
                ls.push(l.0.clone());
            }
            prev_load = cur_load;
            prev_psi = cur_psi;
            prev_lift = cur_lift;
        }
        Ok((us, vs, psis, lifts))
    }

    /// Forward state solve from rest.
    pub fn solve_state(
        &self,
        control: &ControlTrajectory,
        sources: &Sources,
    ) -> Result<StateTrajectory> {
        if control.grid() != self.grid {
            return Err(Error::GridMismatch(
                "control and stepper grids differ".into(),
            ));
        }
        if control.n_faces() != self.ops.n_faces() {
            return Err(Error::Dimension(format!(
                "control has {} faces, mesh has {}",
                control.n_faces(),
                self.ops.n_faces()
            )));
        }
        let grid = self.grid;
        let (nu, np) = (self.ops.n_u(), self.ops.n_psi());
        let u_load = |n: usize| sources.u_load.as_ref().map(|f| f(grid.time(n)));
        let psi_rhs = |n: usize| {
            let mut r = self.ops.boundary.mul_vec(control.at(n));
            r.iter_mut().for_each(|v| *v = -*v);
            if let Some(f) = &sources.psi_load {
                for (a, b) in r.iter_mut().zip(f(grid.time(n))) {
                    *a += b;
                }
            }
            r
        };
        let lift_fn = sources
            .dirichlet
            .as_ref()
            .map(|f| move |n: usize| f(grid.time(n)));
        let lift_ref: Option<&dyn Fn(usize) -> (Vec<f64>, Vec<f64>)> = lift_fn
            .as_ref()
            .map(|f| f as &dyn Fn(usize) -> (Vec<f64>, Vec<f64>));
        let (u, v, psi, lift) =
            self.integrate(vec![0.0; nu], vec![0.0; nu], &u_load, &psi_rhs, lift_ref)?;
        debug_assert!(psi.iter().all(|p| p.len() == np));
        Ok(StateTrajectory {
            grid,
            u,
            v,
            psi,
            lift,
        })
    }

    /// Unforced evolution from nonzero initial data with zero control.
    ///
    /// Not part of the control problem (whose state starts at rest); used
    /// to check conservation properties of the scheme.
    pub fn solve_free_from(&self, u0: Vec<f64>, v0: Vec<f64>) -> Result<StateTrajectory> {
        let np = self.ops.n_psi();
        let (u, v, psi, _) = self.integrate(u0, v0, &|_| None, &|_| vec![0.0; np], None)?;
        Ok(StateTrajectory {
            grid: self.grid,
            u,
            v,
            psi,
            lift: None,
        })
    }

    /// Backward adjoint solve for data `f` (free coefficients per node),
    /// with zero terminal conditions. The volume load is `M f(t)`.
    pub fn solve_adjoint(&self, data: &[Vec<f64>]) -> Result<AdjointTrajectory> {
        let n_steps = self.grid.steps;
        if data.len() != n_steps + 1 {
            return Err(Error::GridMismatch(format!(
                "adjoint data has {} nodes, grid {}",
                data.len(),
                n_steps + 1
            )));
        }
        let (nu, np) = (self.ops.n_u(), self.ops.n_psi());
        let load = |j: usize| Some(self.ops.mass.mul_vec(&data[n_steps - j]));
        let (mut p, mut q, mut xi, _) = self.integrate(
            vec![0.0; nu],
            vec![0.0; nu],
            &load,
            &|_| vec![0.0; np],
            None,
        )?;
        p.reverse();
        xi.reverse();
        q.reverse();
        // d/dt = -d/ds on the reversed axis
        q.iter_mut()
            .for_each(|qn| qn.iter_mut().for_each(|v| *v = -*v));
        let beta = xi.iter().map(|x| self.ops.face_integrals(x)).collect();
        Ok(AdjointTrajectory {
            grid: self.grid,
            p,
            q,
            xi,
            beta,
        })
    }
}

fn check_finite(x: &[f64], what: &'static str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Singular(what))
    }
}

/// `1/2 v^T M v + 1/2 u^T K_uu u + 1/2 psi^T K_psipsi psi`.
pub fn energy(ops: &DiscreteOperators, u: &[f64], v: &[f64], psi: &[f64]) -> f64 {
    0.5 * (ops.mass.bilinear(v, v)
        + ops.stiffness.bilinear(u, u)
        + ops.permittivity.bilinear(psi, psi))
}

/// Convenience wrapper building a stepper for one solve.
pub fn solve_state(
    ops: &DiscreteOperators,
    control: &ControlTrajectory,
    sources: &Sources,
) -> Result<StateTrajectory> {
    Stepper::new(ops, control.grid())?.solve_state(control, sources)
}

pub fn solve_adjoint(
    ops: &DiscreteOperators,
    grid: TimeGrid,
    misfit: &[Vec<f64>],
) -> Result<AdjointTrajectory> {
    Stepper::new(ops, grid)?.solve_adjoint(misfit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::pair_beta;
    use crate::materials::MaterialSet;
    use crate::mesh::coordinate_planes;
    use crate::test_support::{constant_piezo_materials, cube_ops, single_tet_ops};
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// Zero-mean face profile.
    fn profile(ops: &DiscreteOperators, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut p = random_vec(rng, ops.n_faces());
        let total: f64 = ops.face_areas.iter().sum();
        let m = p
            .iter()
            .zip(&ops.face_areas)
            .map(|(p, a)| p * a)
            .sum::<f64>()
            / total;
        p.iter_mut().for_each(|v| *v -= m);
        p
    }

    fn smooth_control(ops: &DiscreteOperators, grid: TimeGrid, p: &[f64]) -> ControlTrajectory {
        ControlTrajectory::from_fn(grid, ops.n_faces(), |n, f| {
            let t = grid.time(n);
            p[f] * t * t * (1.0 + t).cos()
        })
    }

    #[test]
    fn zero_data_gives_zero_trajectories() {
        let ops = cube_ops(1, 2, coordinate_planes, &MaterialSet::benchmark());
        let grid = TimeGrid::new(1.0, 5);
        let st = solve_state(
            &ops,
            &ControlTrajectory::zeros(grid, ops.n_faces()),
            &Sources::none(),
        )
        .unwrap();
        assert!(st
            .u
            .iter()
            .chain(&st.psi)
            .all(|x| x.iter().all(|&v| v == 0.0)));
        let adj = solve_adjoint(&ops, grid, &vec![vec![0.0; ops.n_u()]; 6]).unwrap();
        assert!(adj
            .p
            .iter()
            .chain(&adj.xi)
            .chain(&adj.beta)
            .all(|x| x.iter().all(|&v| v == 0.0)));
        assert_eq!(energy(&ops, &st.u[3], &st.v[3], &st.psi[3]), 0.0);
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let ops = cube_ops(1, 1, coordinate_planes, &MaterialSet::benchmark());
        let stepper = Stepper::new(&ops, TimeGrid::new(1.0, 4)).unwrap();
        let z = ControlTrajectory::zeros(TimeGrid::new(1.0, 5), ops.n_faces());
        assert!(matches!(
            stepper.solve_state(&z, &Sources::none()),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn energy_is_conserved_without_forcing() {
        let ops = cube_ops(1, 2, coordinate_planes, &MaterialSet::benchmark());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u0 = random_vec(&mut rng, ops.n_u());
        let v0 = random_vec(&mut rng, ops.n_u());
        let stepper = Stepper::new(&ops, TimeGrid::new(2.0, 200)).unwrap();
        let st = stepper.solve_free_from(u0, v0).unwrap();
        let e0 = energy(&ops, &st.u[0], &st.v[0], &st.psi[0]);
        assert!(e0 > 0.0);
        for n in 0..=200 {
            let e = energy(&ops, &st.u[n], &st.v[n], &st.psi[n]);
            assert!(
                (e - e0).abs() <= 1e-10 * e0,
                "step {n}: drift {}",
                (e - e0) / e0
            );
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn state_is_linear_in_control(seed in 0u64..10_000) {
            let ops = cube_ops(1, 2, coordinate_planes, &MaterialSet::benchmark());
            let grid = TimeGrid::new(1.0, 8);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z1 = ControlTrajectory::from_fn(grid, ops.n_faces(), |_, _| rng.gen_range(-1.0..1.0));
            let z2 = ControlTrajectory::from_fn(grid, ops.n_faces(), |_, _| rng.gen_range(-1.0..1.0));
            let stepper = Stepper::new(&ops, grid).unwrap();
            let s1 = stepper.solve_state(&z1, &Sources::none()).unwrap();
            let s2 = stepper.solve_state(&z2, &Sources::none()).unwrap();
            let s12 = stepper.solve_state(&z1.axpy(1.0, &z2), &Sources::none()).unwrap();
            for n in 0..=8 {
                let scale = norm_inf(&s12.u[n]).max(1e-300);
                for i in 0..ops.n_u() {
                    prop_assert!((s12.u[n][i] - s1.u[n][i] - s2.u[n][i]).abs() <= 1e-11 * scale);
                }
            }
        }
    }

    #[test]
    fn adjoint_is_forward_scheme_on_reversed_axis() {
        let ops = cube_ops(1, 2, coordinate_planes, &MaterialSet::benchmark());
        let grid = TimeGrid::new(1.0, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_vec(&mut rng, ops.n_u());
        let b = random_vec(&mut rng, ops.n_u());
        let data_at = |t: f64| -> Vec<f64> {
            a.iter()
                .zip(&b)
                .map(|(x, y)| x * t.sin() + y * t * t)
                .collect()
        };
        let data: Vec<Vec<f64>> = grid.times().iter().map(|&t| data_at(t)).collect();
        let stepper = Stepper::new(&ops, grid).unwrap();
        let adj = stepper.solve_adjoint(&data).unwrap();
        let sources = Sources {
            u_load: Some(Box::new(|s: f64| ops.mass.mul_vec(&data_at(1.0 - s)))),
            ..Sources::none()
        };
        let fwd = stepper
            .solve_state(&ControlTrajectory::zeros(grid, ops.n_faces()), &sources)
            .unwrap();
        let scale = adj.p.iter().map(|p| norm_inf(p)).fold(0.0, f64::max);
        for n in 0..=10 {
            let m = 10 - n;
            for i in 0..ops.n_u() {
                assert!((adj.p[n][i] - fwd.u[m][i]).abs() <= 1e-12 * scale);
                assert!((adj.q[n][i] + fwd.v[m][i]).abs() <= 1e-12 * scale.max(1.0) * 100.0);
            }
        }
        assert!(adj.p[10].iter().all(|&v| v == 0.0));
        assert!(adj
            .xi
            .iter()
            .all(|x| dot(&ops.grounding, x).abs() < 1e-12 * (1.0 + norm_inf(x))));
    }

    /// Reduced first-order system `M u'' = -A u + c(t)` assembled densely.
    struct DenseOde {
        m_inv: DMatrix<f64>,
        a: DMatrix<f64>,
        drive: DMatrix<f64>,
    }

    impl DenseOde {
        fn new(ops: &DiscreteOperators) -> Self {
            let (nu, np) = (ops.n_u(), ops.n_psi());
            let dense = |m: &CsrMatrix| DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m.get(i, j));
            let mut sp = DMatrix::zeros(np + 1, np + 1);
            sp.view_mut((0, 0), (np, np))
                .copy_from(&dense(&ops.permittivity));
            for i in 0..np {
                sp[(i, np)] = ops.grounding[i];
                sp[(np, i)] = ops.grounding[i];
            }
            let sp_inv = sp.try_inverse().unwrap();
            let p = sp_inv.view((0, 0), (np, np)).into_owned();
            let kup = dense(&ops.coupling);
            let kpu = dense(&ops.coupling_t);
            let a = dense(&ops.stiffness) + &kup * &p * &kpu;
            let drive = -(&kup * &p * dense(&ops.boundary));
            let m_inv = dense(&ops.mass).try_inverse().unwrap();
            assert_eq!(a.nrows(), nu);
            Self { m_inv, a, drive }
        }

        fn rhs(&self, y: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
            let n = self.a.nrows();
            let u = y.rows(0, n);
            let v = y.rows(n, n);
            let acc = &self.m_inv * (-(&self.a * u) - &self.drive * z);
            let mut out = DVector::zeros(2 * n);
            out.rows_mut(0, n).copy_from(&v);
            out.rows_mut(n, n).copy_from(&acc);
            out
        }

        fn rk4(&self, t_end: f64, steps: usize, z: impl Fn(f64) -> DVector<f64>) -> DVector<f64> {
            let n = self.a.nrows();
            let h = t_end / steps as f64;
            let mut y = DVector::zeros(2 * n);
            for s in 0..steps {
                let t = s as f64 * h;
                let k1 = self.rhs(&y, &z(t));
                let k2 = self.rhs(&(&y + &k1 * (h / 2.0)), &z(t + h / 2.0));
                let k3 = self.rhs(&(&y + &k2 * (h / 2.0)), &z(t + h / 2.0));
                let k4 = self.rhs(&(&y + &k3 * h), &z(t + h));
                y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            }
            y.rows(0, n).into_owned()
        }
    }

    #[test]
    fn crank_nicolson_matches_dense_ode_oracle_at_second_order() {
        let ops = single_tet_ops(2, true, &constant_piezo_materials());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = profile(&ops, &mut rng);
        let t_end = 1.0;
        let ode = DenseOde::new(&ops);
        let zc =
            |t: f64| DVector::from_iterator(p.len(), p.iter().map(|v| v * t * t * (1.0 + t).cos()));
        let exact = ode.rk4(t_end, 20000, zc);
        let mut errs = Vec::new();
        for steps in [10, 20, 40] {
            let grid = TimeGrid::new(t_end, steps);
            let st = solve_state(&ops, &smooth_control(&ops, grid, &p), &Sources::none()).unwrap();
            let e = st.u[steps]
                .iter()
                .zip(exact.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            errs.push(e);
        }
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!(
                (3.5..4.6).contains(&ratio),
                "ratio {ratio}, errors {errs:?}"
            );
        }
    }

    /// Random combination of smooth fields interpolated on the free dofs.
    fn smooth_field(ops: &DiscreteOperators, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let c: Vec<f64> = random_vec(rng, 9);
        let full = ops.space.interpolate_full(|x| {
            [
                c[0] + c[1] * x[1] + c[2] * x[0] * x[2],
                c[3] * x[2] + c[4] * x[0] * x[1] + c[5],
                c[6] * x[0] + c[7] * x[1] * x[1] + c[8] * x[2],
            ]
        });
        ops.space.restrict(&full)
    }

    /// Random zero-mean face profile built from a smooth function of the
    /// face centroid.
    fn smooth_profile(ops: &DiscreteOperators, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let c = random_vec(rng, 4);
        let mesh = ops.scalar_space().mesh();
        let mut p: Vec<f64> = (0..ops.n_faces())
            .map(|f| {
                let x = mesh.face_centroid(f);
                c[0] * x[0] + c[1] * x[1] * x[1] + c[2] * x[2] + c[3] * x[0] * x[1]
            })
            .collect();
        let total: f64 = ops.face_areas.iter().sum();
        let m = p
            .iter()
            .zip(&ops.face_areas)
            .map(|(p, a)| p * a)
            .sum::<f64>()
            / total;
        p.iter_mut().for_each(|v| *v -= m);
        p
    }

    #[test]
    fn transposition_residual_is_second_order() {
        let ops = cube_ops(1, 2, coordinate_planes, &MaterialSet::benchmark());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = smooth_field(&ops, &mut rng);
        let b = smooth_field(&ops, &mut rng);
        let p = smooth_profile(&ops, &mut rng);
        let mut res = Vec::new();
        for steps in [16, 32, 64, 128] {
            let grid = TimeGrid::new(1.0, steps);
            let f: Vec<Vec<f64>> = grid
                .times()
                .iter()
                .map(|&t| {
                    a.iter()
                        .zip(&b)
                        .map(|(x, y)| x * (2.0 * t).sin() + y * t)
                        .collect()
                })
                .collect();
            let y = smooth_control(&ops, grid, &p);
            let stepper = Stepper::new(&ops, grid).unwrap();
            let st = stepper.solve_state(&y, &Sources::none()).unwrap();
            let adj = stepper.solve_adjoint(&f).unwrap();
            let dt = grid.dt();
            let lhs: f64 = (0..=steps)
                .map(|n| {
                    let w = if n == 0 || n == steps { 0.5 } else { 1.0 };
                    w * dt * ops.mass.bilinear(&f[n], &st.u[n])
                })
                .sum();
            let rhs = pair_beta(&adj.beta, &y).unwrap();
            res.push((lhs - rhs).abs() / lhs.abs().max(rhs.abs()));
        }
        for w in res.windows(2) {
            let ratio = w[0] / w[1];
            assert!(
                (3.5..4.5).contains(&ratio),
                "ratio {ratio}, residuals {res:?}"
            );
        }
    }
}
