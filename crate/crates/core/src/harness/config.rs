//! Flat `key = value` run configuration.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::control::Bounds;
use crate::error::{Error, Result};
use crate::materials::MaterialSet;
use crate::mesh::{bottom_side, build_cube_mesh, coordinate_planes, y_sides, Mesh, Point3};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    Convergence,
    Control,
    Simulation,
    Verify,
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "convergence" => Ok(Self::Convergence),
            "control" => Ok(Self::Control),
            "simulation" => Ok(Self::Simulation),
            "verify" | "verification" => Ok(Self::Verify),
            _ => Err(Error::Config(format!(
                "unknown experiment '{s}' (convergence, control, simulation, verify)"
            ))),
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Convergence => "convergence",
            Self::Control => "control",
            Self::Simulation => "simulation",
            Self::Verify => "verify",
        })
    }
}

/// Which sides of the generated unit cube are clamped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DirichletSides {
    /// The three sides on the coordinate planes.
    CoordinatePlanes,
    /// `y = 0` and `y = 1`.
    YSides,
    /// `z = 0`.
    Bottom,
}

impl FromStr for DirichletSides {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coordinate_planes" => Ok(Self::CoordinatePlanes),
            "y_sides" => Ok(Self::YSides),
            "bottom" => Ok(Self::Bottom),
            _ => Err(Error::Config(format!(
                "unknown dirichlet rule '{s}' (coordinate_planes, y_sides, bottom)"
            ))),
        }
    }
}

impl DirichletSides {
    pub fn rule(self) -> fn(&Point3) -> bool {
        match self {
            Self::CoordinatePlanes => coordinate_planes,
            Self::YSides => y_sides,
            Self::Bottom => bottom_side,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaterialPreset {
    Benchmark,
    /// Unit density, unit Lamé constants, benchmark coupling tensors.
    Homogeneous,
}

impl FromStr for MaterialPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "benchmark" => Ok(Self::Benchmark),
            "homogeneous" => Ok(Self::Homogeneous),
            _ => Err(Error::Config(format!(
                "unknown material preset '{s}' (benchmark, homogeneous)"
            ))),
        }
    }
}

impl MaterialPreset {
    pub fn build(self) -> MaterialSet {
        match self {
            Self::Benchmark => MaterialSet::benchmark(),
            Self::Homogeneous => MaterialSet::constant(
                1.0,
                1.0,
                1.0,
                crate::materials::benchmark_piezo(),
                crate::materials::benchmark_dielectric(),
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub experiment: Experiment,
    /// Subdivisions per cube edge for single-mesh runs.
    pub mesh: usize,
    /// Subdivision sweep for refinement studies.
    pub levels: Vec<usize>,
    /// Mesh file in the crate's ASCII format; replaces the generated cube.
    pub mesh_file: Option<PathBuf>,
    /// Boundary tags treated as Dirichlet when reading `mesh_file`.
    pub dirichlet_tags: BTreeSet<u32>,
    pub dirichlet: DirichletSides,
    pub degree: usize,
    /// Base step count: level `M` takes `M * base_steps` steps.
    pub base_steps: usize,
    /// Explicit step count for single-mesh runs.
    pub steps: Option<usize>,
    pub final_time: f64,
    pub alpha: f64,
    pub lower: f64,
    pub upper: f64,
    pub materials: MaterialPreset,
    pub out_dir: PathBuf,
    pub tol: f64,
    pub max_iters: usize,
    /// Degree of the re-solve with the optimal control.
    pub resolve_degree: usize,
    /// Scale factor applied to the transposed coupling block; 1 disables it.
    pub fault_injection: f64,
    pub full_scale: bool,
    /// Time levels written as VTK snapshots.
    pub snapshots: Vec<usize>,
}

impl RunConfig {
    /// Defaults of each experiment at desk scale.
    pub fn defaults(experiment: Experiment) -> Self {
        let base = Self {
            experiment,
            mesh: 2,
            levels: vec![1, 2, 3, 4],
            mesh_file: None,
            dirichlet_tags: BTreeSet::new(),
            dirichlet: DirichletSides::CoordinatePlanes,
            degree: 2,
            base_steps: 8,
            steps: None,
            final_time: 1.0,
            alpha: 1e-4,
            lower: -1e6,
            upper: 1e6,
            materials: MaterialPreset::Benchmark,
            out_dir: PathBuf::from(format!("out/{experiment}")),
            tol: 1e-6,
            max_iters: 100,
            resolve_degree: 3,
            fault_injection: 1.0,
            full_scale: false,
            snapshots: Vec::new(),
        };
        match experiment {
            Experiment::Convergence | Experiment::Verify => base,
            Experiment::Control => Self {
                dirichlet: DirichletSides::YSides,
                ..base
            },
            Experiment::Simulation => Self {
                dirichlet: DirichletSides::Bottom,
                steps: Some(80),
                final_time: 5.0,
                snapshots: vec![16, 48, 64, 80],
                ..base
            },
        }
    }

    /// Parses `key = value` lines; `#` starts a comment. The `experiment`
    /// key selects the defaults, so it may appear anywhere in the file.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            pairs.push((lineno + 1, k.trim().to_string(), v.trim().to_string()));
        }
        let experiment = match pairs.iter().find(|(_, k, _)| k == "experiment") {
            Some((_, _, v)) => v.parse()?,
            None => return Err(Error::Config("missing key 'experiment'".into())),
        };
        let mut cfg = Self::defaults(experiment);
        for (lineno, k, v) in pairs {
            cfg.set(&k, &v)
                .map_err(|e| Error::Config(format!("line {lineno}: {e}")))?;
        }
        if cfg.full_scale {
            cfg.apply_full_scale();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse()
                .map_err(|_| format!("invalid value '{v}' for {key}"))
        }
        fn list<T: FromStr>(key: &str, v: &str) -> std::result::Result<Vec<T>, String> {
            v.split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| num(key, s.trim()))
                .collect()
        }
        match key {
            "experiment" => self.experiment = value.parse().map_err(|e: Error| e.to_string())?,
            "mesh" => self.mesh = num(key, value)?,
            "levels" => self.levels = list(key, value)?,
            "mesh_file" => self.mesh_file = Some(PathBuf::from(value)),
            "dirichlet_tags" => self.dirichlet_tags = list(key, value)?.into_iter().collect(),
            "dirichlet" => self.dirichlet = value.parse().map_err(|e: Error| e.to_string())?,
            "degree" => self.degree = num(key, value)?,
            "base_steps" => self.base_steps = num(key, value)?,
            "steps" => self.steps = Some(num(key, value)?),
            "final_time" => self.final_time = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "lower" => self.lower = num(key, value)?,
            "upper" => self.upper = num(key, value)?,
            "materials" => self.materials = value.parse().map_err(|e: Error| e.to_string())?,
            "out" => self.out_dir = PathBuf::from(value),
            "tol" => self.tol = num(key, value)?,
            "max_iters" => self.max_iters = num(key, value)?,
            "resolve_degree" => self.resolve_degree = num(key, value)?,
            "fault_injection" => self.fault_injection = num(key, value)?,
            "full_scale" => self.full_scale = num(key, value)?,
            "snapshots" => self.snapshots = list(key, value)?,
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    /// Switches to the published scale (much longer runtimes).
    pub fn apply_full_scale(&mut self) {
        self.full_scale = true;
        match self.experiment {
            Experiment::Simulation => {
                self.mesh = 4;
                self.steps = Some(400);
                self.final_time = 5.0;
                self.snapshots = vec![80, 240, 320, 400];
            }
            Experiment::Control => self.levels = (1..=8).collect(),
            Experiment::Convergence => self.levels = (1..=6).collect(),
            Experiment::Verify => {}
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.final_time > 0.0 && self.final_time.is_finite()) {
            return bad(format!(
                "final_time must be positive, got {}",
                self.final_time
            ));
        }
        if self.degree == 0 || self.degree > 4 {
            return bad(format!("degree must be in 1..=4, got {}", self.degree));
        }
        if self.resolve_degree == 0 || self.resolve_degree > 4 {
            return bad(format!(
                "resolve_degree must be in 1..=4, got {}",
                self.resolve_degree
            ));
        }
        if self.mesh == 0 || self.levels.contains(&0) {
            return bad("mesh subdivisions must be positive".into());
        }
        if self.levels.is_empty() {
            return bad("levels must not be empty".into());
        }
        if self.base_steps == 0 || self.steps == Some(0) {
            return bad("step counts must be positive".into());
        }
        if !(self.alpha > 0.0) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.tol > 0.0) {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        Bounds::new(self.lower, self.upper).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn bounds(&self) -> Bounds {
        Bounds {
            lower: self.lower,
            upper: self.upper,
        }
    }

    /// Steps used at refinement level `m`.
    pub fn steps_for_level(&self, m: usize) -> usize {
        m * self.base_steps
    }

    /// Steps for single-mesh runs: the explicit count or `mesh * base_steps`.
    pub fn single_steps(&self) -> usize {
        self.steps.unwrap_or(self.mesh * self.base_steps)
    }

    /// Mesh for level `m`: the generated cube, or the mesh file if given.
    pub fn build_mesh(&self, m: usize) -> Result<Mesh> {
        match &self.mesh_file {
            Some(path) => Mesh::read_ascii(path, self.dirichlet_tags.clone()),
            None => Ok(build_cube_mesh(m, self.dirichlet.rule())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_with_comments_and_defaults() {
        let cfg = RunConfig::parse(
            "# demo\nexperiment = control\nlevels = 1, 2,3\nalpha = 2e-4 # penalty\n",
        )
        .unwrap();
        assert_eq!(cfg.experiment, Experiment::Control);
        assert_eq!(cfg.levels, vec![1, 2, 3]);
        assert_eq!(cfg.alpha, 2e-4);
        assert_eq!(cfg.dirichlet, DirichletSides::YSides);
        assert_eq!(cfg.steps_for_level(3), 24);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "mesh = 2",
            "experiment = nope",
            "experiment = control\nfoo = 1",
            "experiment = control\nfinal_time = -1",
            "experiment = control\nlower = 1",
            "experiment = control\nalpha 3",
            "experiment = control\ndegree = x",
        ] {
            assert!(
                matches!(RunConfig::parse(text), Err(Error::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn full_scale_simulation() {
        let cfg = RunConfig::parse("experiment = simulation\nfull_scale = true").unwrap();
        assert_eq!(
            (cfg.mesh, cfg.single_steps(), cfg.final_time),
            (4, 400, 5.0)
        );
        assert!((cfg.final_time / cfg.single_steps() as f64 - 0.0125).abs() < 1e-15);
    }
}
