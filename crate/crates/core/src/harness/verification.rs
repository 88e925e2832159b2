//! Code-verification checks with pass/fail verdicts.
//!
//! Each check compares the implementation against an independent
//! computation: dense element loops for assembly, exhaustive enumeration
//! for the projection, exact conservation and adjoint identities for the
//! time stepper, and central differences for the gradient.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use log::info;
use nalgebra::{DMatrix, DVector, Matrix3, Matrix6x3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use super::control_study::study_target;
use super::{build_operators, write_table};
use crate::control::{pair_beta, project_q, Bounds, ControlTrajectory, ZMetric};
use crate::error::Result;
use crate::fespace::assembly::{assemble, default_rule, DiscreteOperators};
use crate::fespace::basis::LagrangeBasis;
use crate::fespace::quadrature::{QuadratureRule, TriangleRule};
use crate::fespace::space::{ElementGeometry, ScalarSpace, VectorSpace};
use crate::materials::{benchmark_dielectric, benchmark_piezo, MaterialSet};
use crate::mesh::Mesh;
use crate::optimizer::ReducedProblem;
use crate::timestepper::{energy, Sources, Stepper, TimeGrid};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    /// Passes when `measured <= tolerance`.
    fn at_most(name: &str, measured: f64, tolerance: f64, detail: String) -> Self {
        Self {
            name: name.into(),
            measured,
            tolerance,
            passed: measured <= tolerance,
            detail,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct VerificationReport {
    pub checks: Vec<CheckResult>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    /// One line per check.
    pub fn lines(&self) -> Vec<String> {
        self.checks
            .iter()
            .map(|c| {
                format!(
                    "{} {}: measured {:.3e}, tolerance {:.3e} ({})",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.measured,
                    c.tolerance,
                    c.detail
                )
            })
            .collect()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .checks
            .iter()
            .map(|c| {
                vec![
                    c.name.clone(),
                    format!("{:.6e}", c.measured),
                    format!("{:.6e}", c.tolerance),
                    c.passed.to_string(),
                    format!("\"{}\"", c.detail.replace('"', "'")),
                ]
            })
            .collect();
        write_table(
            dir,
            "verification.csv",
            &["check", "measured", "tolerance", "passed", "detail"],
            &rows,
        )
    }
}

/// A skewed tetrahedron whose four faces are all boundary (no Dirichlet).
pub fn single_element_mesh() -> Mesh {
    let v = vec![
        [0.1, 0.0, 0.05],
        [1.2, 0.1, 0.0],
        [0.2, 0.9, 0.1],
        [0.3, 0.2, 1.1],
    ];
    let faces = vec![
        ([1, 2, 3], 1),
        ([0, 2, 3], 2),
        ([0, 1, 3], 3),
        ([0, 1, 2], 4),
    ];
    Mesh::new(v, vec![[0, 1, 2, 3]], faces, BTreeSet::new()).expect("fixed element is valid")
}

/// Constant, fully anisotropic coupling with isotropic stiffness.
pub fn oracle_materials() -> (MaterialSet, f64, f64, f64) {
    let (rho, lambda, mu) = (1.7, 1.3, 0.8);
    (
        MaterialSet::constant(rho, lambda, mu, benchmark_piezo(), benchmark_dielectric()),
        rho,
        lambda,
        mu,
    )
}

/// Dense element matrices from a quadrature loop over full tensors.
pub struct DenseBlocks {
    pub mass: DMatrix<f64>,
    pub stiffness: DMatrix<f64>,
    pub coupling: DMatrix<f64>,
    pub permittivity: DMatrix<f64>,
    pub boundary: DMatrix<f64>,
    pub grounding: DVector<f64>,
}

/// Element matrices of the single-tet mesh in the global dof numbering.
pub fn dense_element_oracle(
    mesh: &Mesh,
    degree: usize,
    rho: f64,
    lambda: f64,
    mu: f64,
    piezo: &Matrix6x3<f64>,
    kappa: &Matrix3<f64>,
) -> DenseBlocks {
    let scalar = ScalarSpace::new(Arc::new(mesh.clone()), degree);
    let basis = LagrangeBasis::new(degree);
    let nl = basis.len();
    let dofs = scalar.cell_dofs(0).to_vec();
    let n = scalar.n_dofs();
    let geo = ElementGeometry::new(mesh, 0).expect("valid element");
    let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    let c4 = |i: usize, j: usize, k: usize, l: usize| {
        lambda * delta(i, j) * delta(k, l)
            + mu * (delta(i, k) * delta(j, l) + delta(i, l) * delta(j, k))
    };
    let e_cols: [Matrix3<f64>; 3] =
        std::array::from_fn(|k| crate::materials::piezo_apply(piezo, &Vector3::ith(k, 1.0)));
    let e3 = |i: usize, j: usize, k: usize| e_cols[k][(i, j)];

    let mut out = DenseBlocks {
        mass: DMatrix::zeros(3 * n, 3 * n),
        stiffness: DMatrix::zeros(3 * n, 3 * n),
        coupling: DMatrix::zeros(3 * n, n),
        permittivity: DMatrix::zeros(n, n),
        boundary: DMatrix::zeros(n, mesh.n_boundary_faces()),
        grounding: DVector::zeros(n),
    };
    let rule = QuadratureRule::tetrahedron(2 * degree + 2);
    for (q, xi) in rule.points.iter().enumerate() {
        let w = rule.weights[q] * geo.det;
        let (vals, dl) = basis.eval(&crate::fespace::basis::reference_to_barycentric(xi));
        let grads: Vec<Vector3<f64>> = dl.iter().map(|d| geo.gradient(d)).collect();
        // symmetric gradient of phi_i e_a: eps_kl = (d_ka g_l + d_la g_k) / 2
        let eps = |i: usize, a: usize, k: usize, l: usize| {
            0.5 * (delta(k, a) * grads[i][l] + delta(l, a) * grads[i][k])
        };
        for i in 0..nl {
            out.grounding[dofs[i]] += w * vals[i];
            for j in 0..nl {
                let (gi, gj) = (dofs[i], dofs[j]);
                out.permittivity[(gi, gj)] += w * (grads[i].transpose() * kappa * grads[j])[(0, 0)];
                for a in 0..3 {
                    out.mass[(3 * gi + a, 3 * gj + a)] += w * rho * vals[i] * vals[j];
                    let mut cpl = 0.0;
                    for k in 0..3 {
                        for l in 0..3 {
                            for m in 0..3 {
                                cpl += eps(i, a, k, l) * e3(k, l, m) * grads[j][m];
                            }
                        }
                    }
                    out.coupling[(3 * gi + a, gj)] += w * cpl;
                    for b in 0..3 {
                        let mut s = 0.0;
                        for k in 0..3 {
                            for l in 0..3 {
                                for m in 0..3 {
                                    for p in 0..3 {
                                        s += eps(i, a, k, l) * c4(k, l, m, p) * eps(j, b, m, p);
                                    }
                                }
                            }
                        }
                        out.stiffness[(3 * gi + a, 3 * gj + b)] += w * s;
                    }
                }
            }
        }
    }

    let tri = TriangleRule::new(2 * degree + 2);
    let t = mesh.tets()[0];
    for (f, bf) in mesh.boundary_faces().iter().enumerate() {
        let area = mesh.boundary_face_area(f).expect("nondegenerate");
        for (q, uv) in tri.points.iter().enumerate() {
            let face_bary = [1.0 - uv[0] - uv[1], uv[0], uv[1]];
            let mut lam = [0.0; 4];
            for (c, &v) in bf.vertices.iter().enumerate() {
                let local = t.iter().position(|&x| x == v).expect("face vertex in tet");
                lam[local] = face_bary[c];
            }
            let (vals, _) = basis.eval(&lam);
            // reference triangle has area 1/2
            let w = tri.weights[q] * 2.0 * area;
            for i in 0..nl {
                out.boundary[(dofs[i], f)] += w * vals[i];
            }
        }
    }
    out
}

fn max_rel_diff(a: &DMatrix<f64>, b: &crate::fespace::sparse::CsrMatrix) -> f64 {
    let scale = a.amax().max(1e-300);
    let mut d: f64 = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            d = d.max((a[(i, j)] - b.get(i, j)).abs());
        }
    }
    d / scale
}

/// Every assembled block on one element against the dense oracle.
pub fn assembly_check(degree: usize) -> CheckResult {
    let mesh = single_element_mesh();
    let (materials, rho, lambda, mu) = oracle_materials();
    let space = Arc::new(VectorSpace::new(Arc::new(ScalarSpace::new(
        Arc::new(mesh.clone()),
        degree,
    ))));
    let ops =
        assemble(&space, &materials, &default_rule(degree)).expect("single element assembles");
    let dense = dense_element_oracle(
        &mesh,
        degree,
        rho,
        lambda,
        mu,
        &benchmark_piezo(),
        &benchmark_dielectric(),
    );
    let diffs = [
        ("mass", max_rel_diff(&dense.mass, &ops.mass_full)),
        (
            "stiffness",
            max_rel_diff(&dense.stiffness, &ops.stiffness_full),
        ),
        (
            "coupling",
            max_rel_diff(&dense.coupling, &ops.coupling_full),
        ),
        (
            "coupling_t",
            max_rel_diff(&dense.coupling.transpose(), &ops.coupling_t_full),
        ),
        (
            "permittivity",
            max_rel_diff(&dense.permittivity, &ops.permittivity),
        ),
        ("boundary", max_rel_diff(&dense.boundary, &ops.boundary)),
    ];
    let g = dense
        .grounding
        .iter()
        .zip(&ops.grounding)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / dense.grounding.amax();
    let worst = diffs.iter().map(|d| d.1).fold(g, f64::max);
    let detail = diffs
        .iter()
        .map(|(n, d)| format!("{n} {d:.1e}"))
        .collect::<Vec<_>>()
        .join(", ")
        + &format!(", grounding {g:.1e}");
    CheckResult::at_most(&format!("assembly oracle P{degree}"), worst, 1e-12, detail)
}

/// Relative drift of the discrete energy for unforced motion from smooth
/// nonzero initial data.
pub fn energy_check(ops: &DiscreteOperators, steps: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let u0 = smooth_field(ops, &mut rng);
    let v0 = smooth_field(ops, &mut rng);
    let st = Stepper::new(ops, TimeGrid::new(1.0, steps))?.solve_free_from(u0, v0)?;
    let e: Vec<f64> = (0..=steps)
        .map(|n| energy(ops, &st.u[n], &st.v[n], &st.psi[n]))
        .collect();
    let drift = e.iter().map(|v| (v - e[0]).abs()).fold(0.0, f64::max) / e[0];
    Ok(CheckResult::at_most(
        "energy conservation",
        drift,
        1e-10,
        format!("{steps} steps, E0 = {:.4e}", e[0]),
    ))
}

/// Random combination of smooth fields on the free displacement dofs.
pub fn smooth_field(ops: &DiscreteOperators, rng: &mut impl Rng) -> Vec<f64> {
    let c: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let full = ops.space.interpolate_full(|x| {
        [
            c[0] + c[1] * x[1] + c[2] * x[0] * x[2],
            c[3] * x[2] + c[4] * x[0] * x[1] + c[5],
            c[6] * x[0] + c[7] * x[1] * x[1] + c[8] * x[2],
        ]
    });
    ops.space.restrict(&full)
}

/// Zero-mean face profile from a smooth random function of the centroid.
pub fn smooth_profile(ops: &DiscreteOperators, rng: &mut impl Rng) -> Vec<f64> {
    let c: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
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

/// Normalized residuals of `int (f, S y)_rho = int <R f, y>` for each step
/// count, with smooth data `f` and control `y`.
pub fn transposition_residuals(
    ops: &DiscreteOperators,
    steps: &[usize],
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = smooth_field(ops, &mut rng);
    let b = smooth_field(ops, &mut rng);
    let p = smooth_profile(ops, &mut rng);
    let mut res = Vec::new();
    for &n_steps in steps {
        let grid = TimeGrid::new(1.0, n_steps);
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
        let y = ControlTrajectory::from_fn(grid, ops.n_faces(), |n, face| {
            let t = grid.time(n);
            p[face] * t * t * (1.0 + t).cos()
        });
        let stepper = Stepper::new(ops, grid)?;
        let st = stepper.solve_state(&y, &Sources::none())?;
        let adj = stepper.solve_adjoint(&f)?;
        let dt = grid.dt();
        let lhs: f64 = (0..=n_steps)
            .map(|n| {
                let w = if n == 0 || n == n_steps { 0.5 } else { 1.0 };
                w * dt * ops.mass.bilinear(&f[n], &st.u[n])
            })
            .sum();
        let rhs = pair_beta(&adj.beta, &y)?;
        res.push((lhs - rhs).abs() / lhs.abs().max(rhs.abs()));
    }
    Ok(res)
}

fn sci(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:.2e}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Consecutive ratios of a residual sequence.
pub fn ratios(res: &[f64]) -> Vec<f64> {
    res.windows(2).map(|w| w[0] / w[1]).collect()
}

/// Passes when every halving of the step shrinks the residual by 3.5-4.5.
pub fn transposition_check(ops: &DiscreteOperators, steps: &[usize]) -> Result<CheckResult> {
    let res = transposition_residuals(ops, steps, 5)?;
    let r = ratios(&res);
    let worst = r.iter().map(|v| (v - 4.0).abs()).fold(0.0, f64::max);
    let mut c = CheckResult::at_most(
        "transposition identity",
        worst,
        0.5,
        format!("|ratio - 4|; residuals {}, ratios {r:.3?}", sci(&res)),
    );
    c.passed &= r.iter().all(|v| (3.5..=4.5).contains(v));
    Ok(c)
}

/// Regularization weight of the control study.
pub const GRADIENT_ALPHA: f64 = 1e-4;

/// Central-difference directional derivatives of `j_fd` against
/// `[[g, y]]_Z` for `samples` random smooth admissible pairs `(z, y)`, on
/// the control-study problem. Returns the relative errors per sample for
/// each step count.
pub fn gradient_errors(
    ops: &DiscreteOperators,
    materials: &MaterialSet,
    steps: &[usize],
    samples: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<(Vec<f64>, Vec<f64>, f64, f64)> = (0..samples)
        .map(|_| {
            (
                smooth_profile(ops, &mut rng),
                smooth_profile(ops, &mut rng),
                rng.gen_range(0.5..2.0),
                rng.gen_range(0.5..2.0),
            )
        })
        .collect();
    let mut out = Vec::new();
    for &n in steps {
        let grid = TimeGrid::new(1.0, n);
        let problem = ReducedProblem::from_desired(
            ops,
            materials,
            grid,
            study_target,
            GRADIENT_ALPHA,
            Bounds::unbounded(),
        )?;
        let metric = problem.metric();
        let mut errs = Vec::new();
        for (pz, py, wz, wy) in &pairs {
            let z = ControlTrajectory::from_fn(grid, ops.n_faces(), |k, f| {
                pz[f] * (wz * grid.time(k)).sin() * grid.time(k)
            });
            let y = ControlTrajectory::from_fn(grid, ops.n_faces(), |k, f| {
                py[f] * (wy * grid.time(k)).sin()
            });
            let g = problem.evaluate_gradient(&z)?;
            let eps = 1e-3;
            let fd = (problem.evaluate_jfd(&z.axpy(eps, &y))?
                - problem.evaluate_jfd(&z.axpy(-eps, &y))?)
                / (2.0 * eps);
            let an = metric.inner(&g, &y)?;
            errs.push((fd - an).abs() / fd.abs().max(an.abs()));
        }
        out.push(errs);
    }
    Ok(out)
}

/// Worst relative error at the first step count must be within 1e-3 and
/// every sample must improve at each refinement of the step.
pub fn gradient_check(
    ops: &DiscreteOperators,
    materials: &MaterialSet,
    steps: &[usize],
    samples: usize,
) -> Result<CheckResult> {
    let errs = gradient_errors(ops, materials, steps, samples, 3)?;
    let worst = errs[0].iter().cloned().fold(0.0, f64::max);
    let mut c = CheckResult::at_most(
        "gradient directional derivative",
        worst,
        1e-3,
        format!(
            "steps {steps:?}, errors {}",
            errs.iter().map(|e| sci(e)).collect::<Vec<_>>().join(" / ")
        ),
    );
    for w in errs.windows(2) {
        c.passed &= w[0].iter().zip(&w[1]).all(|(a, b)| b < a);
    }
    Ok(c)
}

/// Exhaustive active-set enumeration with dense solves: every entry is
/// free, at its lower or at its upper bound. Only for a handful of unknowns.
pub fn brute_force_projection(
    metric: &ZMetric,
    raw: &ControlTrajectory,
    bounds: Bounds,
) -> Vec<f64> {
    let (steps, nf) = (raw.steps(), raw.n_faces());
    let nv = steps * nf;
    let gram = metric.matrix(steps);
    let h = DMatrix::from_fn(nv, nv, |i, j| gram.get(i, j));
    let z = DVector::from_column_slice(raw.unknowns());
    let objective = |q: &DVector<f64>| {
        let d = q - &z;
        (d.transpose() * &h * &d)[(0, 0)]
    };
    let mut best: Option<(f64, DVector<f64>)> = None;
    for code in 0..3usize.pow(nv as u32) {
        let mut c = code;
        let pattern: Vec<u8> = (0..nv)
            .map(|_| {
                let d = (c % 3) as u8;
                c /= 3;
                d
            })
            .collect();
        let free: Vec<usize> = (0..nv).filter(|&i| pattern[i] == 0).collect();
        let mut fixed = DVector::zeros(nv);
        for i in 0..nv {
            fixed[i] = match pattern[i] {
                1 => bounds.lower,
                2 => bounds.upper,
                _ => 0.0,
            };
        }
        let mut rows = Vec::new();
        let mut ok = true;
        for n in 0..steps {
            let has_free = (0..nf).any(|f| pattern[n * nf + f] == 0);
            if has_free {
                rows.push(n);
            } else {
                let s: f64 = (0..nf).map(|f| metric.areas[f] * fixed[n * nf + f]).sum();
                ok &= s.abs() < 1e-12;
            }
        }
        if !ok {
            continue;
        }
        let k = free.len() + rows.len();
        let mut a = DMatrix::zeros(k, k);
        let mut b = DVector::zeros(k);
        let hz = &h * (&z - &fixed);
        for (p, &i) in free.iter().enumerate() {
            for (r, &j) in free.iter().enumerate() {
                a[(p, r)] = h[(i, j)];
            }
            b[p] = hz[i];
        }
        for (r, &n) in rows.iter().enumerate() {
            let mut s = 0.0;
            for f in 0..nf {
                let i = n * nf + f;
                match free.iter().position(|&x| x == i) {
                    Some(p) => {
                        a[(free.len() + r, p)] = metric.areas[f];
                        a[(p, free.len() + r)] = metric.areas[f];
                    }
                    None => s += metric.areas[f] * fixed[i],
                }
            }
            b[free.len() + r] = -s;
        }
        let Some(x) = a.lu().solve(&b) else { continue };
        let mut q = fixed.clone();
        for (p, &i) in free.iter().enumerate() {
            q[i] = x[p];
        }
        if free.iter().any(|&i| !bounds.contains(q[i], 1e-12)) {
            continue;
        }
        let val = objective(&q);
        if best.as_ref().is_none_or(|(v, _)| val < *v - 1e-14) {
            best = Some((val, q));
        }
    }
    best.expect("zero is always feasible").1.as_slice().to_vec()
}

/// `project_q` against enumeration on tiny instances (at most two faces,
/// three steps).
pub fn projection_check(trials: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let steps = 1 + trial % 3;
        let nf = 1 + trial % 2;
        let grid = TimeGrid::new(1.0, steps);
        let areas: Vec<f64> = (0..nf).map(|_| rng.gen_range(0.2..1.0)).collect();
        let metric = ZMetric::new(areas, grid.dt());
        let raw = ControlTrajectory::from_fn(grid, nf, |_, _| rng.gen_range(-2.0..2.0));
        let bounds = Bounds::new(-rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0))?;
        let q = project_q(&metric, &raw, bounds, None)?;
        let oracle = brute_force_projection(&metric, &raw, bounds);
        for (a, b) in q.unknowns().iter().zip(&oracle) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(CheckResult::at_most(
        "projection oracle",
        worst,
        1e-9,
        format!("{trials} instances"),
    ))
}

/// Admissibility, idempotence and the variational inequality
/// `[[raw - q, y - q]]_Z <= 0` against admissible `y` on random instances
/// with several faces and steps. Reports the worst violation.
pub fn projection_properties_check(trials: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst: f64 = 0.0;
    let mut admissible = true;
    for _ in 0..trials {
        let steps = rng.gen_range(3..10);
        let nf = rng.gen_range(3..9);
        let grid = TimeGrid::new(1.0, steps);
        let areas: Vec<f64> = (0..nf).map(|_| rng.gen_range(0.1..1.0)).collect();
        let metric = ZMetric::new(areas.clone(), grid.dt());
        let bounds = Bounds::new(-rng.gen_range(0.2..1.0), rng.gen_range(0.2..1.0))?;
        let random = |rng: &mut ChaCha8Rng| {
            ControlTrajectory::from_fn(grid, nf, |_, _| rng.gen_range(-2.0..2.0))
        };
        let raw = random(&mut rng);
        let q = project_q(&metric, &raw, bounds, None)?;
        admissible &= q.is_admissible(&areas, bounds, 1e-10);
        let qq = project_q(&metric, &q, bounds, Some(&q))?;
        let scale = 1.0 + metric.norm(&q)?;
        worst = worst.max(metric.norm(&qq.axpy(-1.0, &q))? / scale);
        let d = raw.axpy(-1.0, &q);
        for _ in 0..5 {
            let y = project_q(&metric, &random(&mut rng), bounds, None)?.axpy(-1.0, &q);
            let vi = metric.inner(&d, &y)?;
            worst = worst.max(vi / (1.0 + metric.norm(&d)? * metric.norm(&y)?));
        }
    }
    let mut c = CheckResult::at_most(
        "projection properties",
        worst,
        1e-9,
        format!("{trials} instances, admissible {admissible}"),
    );
    c.passed &= admissible;
    Ok(c)
}

/// Runs all checks; `cfg.fault_injection` scales the transposed coupling
/// block for the time-stepper checks.
pub fn run_verification(cfg: &RunConfig) -> Result<VerificationReport> {
    let materials = cfg.materials.build();
    let mut report = VerificationReport::default();
    for k in 1..=cfg.degree.max(2) {
        report.checks.push(assembly_check(k));
    }
    let ops = build_operators(cfg.build_mesh(cfg.mesh)?, cfg.degree, &materials)?;
    let ops = if cfg.fault_injection != 1.0 {
        ops.with_coupling_t_scaled(cfg.fault_injection)
    } else {
        ops
    };
    report.checks.push(energy_check(&ops, 200)?);
    report
        .checks
        .push(transposition_check(&ops, &[16, 32, 64, 128])?);
    let control_ops = build_operators(
        crate::mesh::build_cube_mesh(cfg.mesh, crate::mesh::y_sides),
        cfg.degree,
        &materials,
    )?;
    report
        .checks
        .push(gradient_check(&control_ops, &materials, &[32, 64], 5)?);
    report.checks.push(projection_check(30)?);
    report.checks.push(projection_properties_check(20)?);
    for line in report.lines() {
        info!("{line}");
    }
    report.write(&cfg.out_dir)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assembly_matches_dense_loops() {
        for k in 1..=3 {
            let c = assembly_check(k);
            assert!(c.passed, "{c:?}");
        }
    }

    #[test]
    fn oracle_p1_mass_is_exact() {
        let mesh = single_element_mesh();
        let d = dense_element_oracle(
            &mesh,
            1,
            2.0,
            1.0,
            1.0,
            &benchmark_piezo(),
            &benchmark_dielectric(),
        );
        let vol = mesh.tet_volume(0);
        for i in 0..4 {
            for j in 0..4 {
                let exact = 2.0 * vol * if i == j { 0.1 } else { 0.05 };
                assert!((d.mass[(3 * i, 3 * j)] - exact).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn fault_injection_breaks_transposition() {
        let materials = MaterialSet::benchmark();
        let ops = build_operators(
            crate::mesh::build_cube_mesh(1, crate::mesh::coordinate_planes),
            1,
            &materials,
        )
        .unwrap();
        assert!(transposition_check(&ops, &[16, 32, 64]).unwrap().passed);
        let broken = ops.with_coupling_t_scaled(1.5);
        let c = transposition_check(&broken, &[16, 32, 64]).unwrap();
        assert!(!c.passed, "{c:?}");
    }

    #[test]
    fn report_lines_and_csv() {
        let dir = tempfile::tempdir().unwrap();
        let report = VerificationReport {
            checks: vec![
                CheckResult::at_most("a", 1.0, 2.0, "x".into()),
                CheckResult::at_most("b", 3.0, 2.0, "y, z".into()),
            ],
        };
        assert!(!report.passed());
        assert_eq!(report.failures().len(), 1);
        assert!(report.lines()[1].starts_with("FAIL b"));
        report.write(dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("verification.csv")).unwrap();
        assert_eq!(text.lines().count(), 3);
    }
}
