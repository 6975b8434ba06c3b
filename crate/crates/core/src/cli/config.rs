//! Run configuration: TOML text in, validated model pieces out.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::AuditTolerances;
use crate::energy::{ChemicalEnergy, Degradation, GradientTensor, MaterialParams, Model, Phase, RegularizedLog, Stiffness};
use crate::grid::{sym_len, BoundaryValues, ConcentrationField, Face, Field, Grid, ScalarField};
use crate::simplex::{projection_matrix, Diffusion, Mobility};
use crate::stepper::{BoundaryProgram, SolverOptions, Simulation, Stepper};

use super::io::read_state_csv;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
}

impl ConfigError {
    pub fn violations(&self) -> &[String] {
        match self {
            ConfigError::Invalid(v) => v,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub cells: Vec<usize>,
    #[serde(default)]
    pub extent: Vec<f64>,
    /// Faces carrying displacement data.
    #[serde(default)]
    pub dirichlet: Vec<Face>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChemicalKind {
    Poly,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    /// Lamé constants; ignored when `mandel` is given.
    #[serde(default = "one")]
    pub lambda: f64,
    #[serde(default = "one")]
    pub mu: f64,
    /// Full stiffness in Mandel form, row-major.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mandel: Option<Vec<f64>>,
    /// Tensor components `[xx]` or `[xx, yy, xy]`; zero by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigenstrain: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialConfig {
    pub mode: Diffusion,
    #[serde(default = "default_chemical")]
    pub chemical: ChemicalKind,
    #[serde(default = "one")]
    pub poly_scale: f64,
    #[serde(default = "default_theta")]
    pub theta: f64,
    /// Interaction matrix A of the log potential; zero by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interaction: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_delta0")]
    pub delta0: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Full Γ on `[component][axis]` gradients; replaces `gamma` when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradient_tensor: Option<Vec<Vec<f64>>>,
    /// Defaults to the binary mobility for two phases and to the simplex
    /// projection otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mobility: Option<Vec<Vec<f64>>>,
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default = "one")]
    pub beta: f64,
    #[serde(default)]
    pub epsilon: f64,
    /// Defaults to dim + 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default = "default_degradation")]
    pub degradation_exponent: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Two isotropic phases with unit Lamé constants by default.
    #[serde(default = "default_phases")]
    pub phases: Vec<PhaseConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub horizon: f64,
    pub steps: usize,
}

/// One knot of the boundary program: a uniform vector per Dirichlet face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryKnot {
    pub t: f64,
    #[serde(default)]
    pub faces: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialKind {
    /// Constant mean plus seeded uniform noise in the tangent space.
    Perturbed,
    /// Disc (or interval) of `inside` in a matrix of `mean`.
    Inclusion,
    /// Concentration and damage columns of a state CSV.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub kind: InitialKind,
    #[serde(default)]
    pub mean: Vec<f64>,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default)]
    pub inside: Vec<f64>,
    #[serde(default)]
    pub center: Vec<f64>,
    #[serde(default)]
    pub radius: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Uniform initial damage; ignored for `file`.
    #[serde(default = "one")]
    pub z: f64,
}

/// Audit tolerances; unset entries follow the solver tolerance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simplex: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Relative paths resolve against the output root.
    #[serde(default = "default_output_dir")]
    pub dir: PathBuf,
    #[serde(default)]
    pub vtk: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_output_dir(), vtk: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub seed: u64,
    pub grid: GridConfig,
    pub model: MaterialConfig,
    pub time: TimeConfig,
    #[serde(default)]
    pub boundary: Vec<BoundaryKnot>,
    pub initial: InitialConfig,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub audit: AuditConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn one() -> f64 {
    1.0
}
fn default_chemical() -> ChemicalKind {
    ChemicalKind::Poly
}
fn default_theta() -> f64 {
    0.2
}
fn default_delta() -> f64 {
    1e-3
}
fn default_delta0() -> f64 {
    0.3
}
fn default_gamma() -> f64 {
    0.01
}
fn default_degradation() -> f64 {
    2.0
}
fn default_eta() -> f64 {
    0.01
}
fn default_phases() -> Vec<PhaseConfig> {
    vec![PhaseConfig { lambda: 1.0, mu: 1.0, mandel: None, eigenstrain: None }; 2]
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("output")
}

/// A run manifest wraps the resolved configuration under `[config]`.
#[derive(Deserialize)]
struct ManifestShape {
    config: toml::Value,
}

/// Reads, fills defaults and validates. Relative `initial.path` entries
/// resolve against the directory of `path`.
pub fn parse_config(path: &Path) -> Result<ModelConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    let mut cfg = parse_config_str(&text)?;
    if let Some(p) = cfg.initial.path.as_mut() {
        if p.is_relative() {
            *p = path.parent().unwrap_or(Path::new(".")).join(&*p);
        }
    }
    let violations = cfg.violations();
    if violations.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Invalid(violations))
    }
}

/// Parses without validating; accepts a plain config or a run manifest.
pub fn parse_config_str(text: &str) -> Result<ModelConfig, ConfigError> {
    let parse_err = |e: toml::de::Error| {
        let (line, column) = e.span().map(|s| line_col(text, s.start)).unwrap_or((0, 0));
        ConfigError::Parse { line, column, message: e.message().to_string() }
    };
    let value: toml::Table = toml::from_str(text).map_err(parse_err)?;
    if value.contains_key("config") && value.contains_key("run") {
        let m: ManifestShape = toml::from_str(text).map_err(parse_err)?;
        return m.config.try_into().map_err(|e: toml::de::Error| ConfigError::Parse { line: 0, column: 0, message: e.message().to_string() });
    }
    toml::from_str(text).map_err(parse_err)
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

fn matrix(rows: &[Vec<f64>], n: usize, what: &str, out: &mut Vec<String>) -> Option<Vec<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        out.push(format!("{what} must be {n}×{n}"));
        return None;
    }
    Some(rows.concat())
}

impl ModelConfig {
    pub fn n_phases(&self) -> usize {
        self.model.phases.len()
    }

    pub fn tau(&self) -> f64 {
        if self.time.steps == 0 {
            self.time.horizon
        } else {
            self.time.horizon / self.time.steps as f64
        }
    }

    pub fn grid(&self) -> crate::Result<Grid> {
        let g = &self.grid;
        let extent = if g.extent.is_empty() { vec![1.0; g.dim] } else { g.extent.clone() };
        Grid::new(g.dim, &g.cells, &extent, &g.dirichlet)
    }

    /// Material parameters; collects every problem instead of stopping at the
    /// first.
    fn params(&self, problems: &mut Vec<String>) -> Option<MaterialParams> {
        let m = &self.model;
        let dim = self.grid.dim;
        if dim != 1 && dim != 2 {
            problems.push(format!("grid.dim must be 1 or 2, got {dim}"));
            return None;
        }
        let n = m.phases.len();
        if n < 2 {
            problems.push(format!("model.phases needs at least 2 entries, got {n}"));
            return None;
        }
        let before = problems.len();
        let ms = sym_len(dim);
        let mut phases = Vec::with_capacity(n);
        for (k, ph) in m.phases.iter().enumerate() {
            let stiffness = match &ph.mandel {
                Some(data) => match Stiffness::from_mandel(dim, data.clone()) {
                    Ok(s) => s,
                    Err(e) => {
                        problems.push(format!("phase {k}: {e}"));
                        continue;
                    }
                },
                None => Stiffness::isotropic(dim, ph.lambda, ph.mu),
            };
            phases.push(Phase { stiffness, eigenstrain: ph.eigenstrain.clone().unwrap_or_else(|| vec![0.0; ms]) });
        }
        let mobility = match &m.mobility {
            Some(rows) => matrix(rows, n, "model.mobility", problems).and_then(|v| match Mobility::new(n, &v) {
                Ok(mb) => Some(mb),
                Err(e) => {
                    problems.push(e.to_string());
                    None
                }
            }),
            None if n == 2 => Some(Mobility::binary()),
            None => {
                let p = projection_matrix(n).expect("n ≥ 2");
                Some(Mobility::new(n, p.transpose().as_slice()).expect("projection is a valid mobility"))
            }
        };
        let gradient = match &m.gradient_tensor {
            Some(rows) => matrix(rows, n * dim, "model.gradient_tensor", problems).map(GradientTensor::Full),
            None => Some(GradientTensor::Isotropic(m.gamma)),
        };
        let chemical = match m.chemical {
            ChemicalKind::Poly => Some(ChemicalEnergy::Polynomial { scale: m.poly_scale }),
            ChemicalKind::Log => {
                let a = match &m.interaction {
                    Some(rows) => matrix(rows, n, "model.interaction", problems),
                    None => Some(vec![0.0; n * n]),
                };
                match RegularizedLog::new(m.delta) {
                    Ok(delta) => a.map(|a| ChemicalEnergy::Logarithmic { theta: m.theta, a, delta }),
                    Err(e) => {
                        problems.push(e.to_string());
                        None
                    }
                }
            }
        };
        if problems.len() > before {
            return None;
        }
        let params = MaterialParams {
            dim,
            gradient: gradient?,
            mobility: mobility?,
            chemical: chemical?,
            alpha: m.alpha,
            beta: m.beta,
            epsilon: m.epsilon,
            p: m.p.unwrap_or(dim as f64 + 1.0),
            degradation: Degradation { exponent: m.degradation_exponent },
            eta: m.eta,
            phases,
            delta0: m.delta0,
        };
        let v = params.violations();
        if v.is_empty() {
            Some(params)
        } else {
            problems.extend(v);
            None
        }
    }

    pub fn material(&self) -> crate::Result<MaterialParams> {
        let mut problems = Vec::new();
        self.params(&mut problems).ok_or_else(|| crate::Error::Param(problems.join("; ")))
    }

    pub fn boundary_program(&self, grid: &Grid) -> crate::Result<BoundaryProgram> {
        let dim = grid.dim();
        if self.boundary.is_empty() {
            return Ok(BoundaryProgram::constant(BoundaryValues::zeros(grid, dim)));
        }
        let knots = self
            .boundary
            .iter()
            .map(|k| {
                for name in k.faces.keys() {
                    name.parse::<Face>()?;
                }
                let b = BoundaryValues::from_fn(grid, dim, |f, _| k.faces.get(f.name()).cloned().unwrap_or_else(|| vec![0.0; dim]));
                b.validate(grid, dim)?;
                Ok((k.t, b))
            })
            .collect::<crate::Result<Vec<_>>>()?;
        BoundaryProgram::new(knots)
    }

    pub fn audit_tolerances(&self) -> AuditTolerances {
        let d = AuditTolerances::for_solver(self.solver.tol);
        let a = &self.audit;
        AuditTolerances {
            energy: a.energy.unwrap_or(d.energy),
            residual: a.residual.unwrap_or(d.residual),
            vi: a.vi.unwrap_or(d.vi),
            mass: a.mass.unwrap_or(d.mass),
            simplex: a.simplex.unwrap_or(d.simplex),
            damage: a.damage.unwrap_or(d.damage),
        }
    }

    /// Initial concentration and damage.
    pub fn initial_fields(&self, grid: &Grid) -> crate::Result<(ConcentrationField, ScalarField)> {
        let n = self.n_phases();
        let init = &self.initial;
        let need = |v: &[f64], what: &str| {
            if v.len() == n {
                Ok(())
            } else {
                Err(crate::Error::Param(format!("initial.{what} needs {n} entries, got {}", v.len())))
            }
        };
        let z = Field::constant(grid.n_cells(), &[init.z]);
        match init.kind {
            InitialKind::Perturbed => {
                need(&init.mean, "mean")?;
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                let mut c = Field::constant(grid.n_cells(), &init.mean);
                let mut xi = vec![0.0; n];
                for cell in c.as_mut_slice().chunks_exact_mut(n) {
                    xi.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
                    let mean = xi.iter().sum::<f64>() / n as f64;
                    for (ci, x) in cell.iter_mut().zip(&xi) {
                        *ci += init.amplitude * (x - mean);
                    }
                }
                Ok((c, z))
            }
            InitialKind::Inclusion => {
                need(&init.mean, "mean")?;
                need(&init.inside, "inside")?;
                let center = if init.center.is_empty() {
                    [0.5 * grid.extent(0), if grid.dim() == 2 { 0.5 * grid.extent(1) } else { 0.0 }]
                } else {
                    [init.center[0], init.center.get(1).copied().unwrap_or(0.0)]
                };
                let c = Field::from_fn(grid, n, |x| {
                    let r2 = (x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2);
                    if r2 <= init.radius * init.radius {
                        init.inside.clone()
                    } else {
                        init.mean.clone()
                    }
                });
                Ok((c, z))
            }
            InitialKind::File => {
                let path = init.path.as_ref().ok_or_else(|| crate::Error::Param("initial.path is required for kind = \"file\"".into()))?;
                let s = read_state_csv(path, grid, n).map_err(|e| crate::Error::Param(format!("initial.path: {e}")))?;
                Ok((s.c, s.z))
            }
        }
    }

    /// Every violated invariant, including those of the generated initial
    /// data. Empty means the configuration is runnable.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let g = &self.grid;
        if g.cells.len() != g.dim || (!g.extent.is_empty() && g.extent.len() != g.dim) {
            v.push(format!("grid.cells and grid.extent need {} entries", g.dim));
        }
        let grid = match self.grid() {
            Ok(grid) => Some(grid),
            Err(e) => {
                v.push(e.to_string());
                None
            }
        };
        let params = self.params(&mut v);
        if !(self.time.horizon > 0.0 && self.time.horizon.is_finite()) {
            v.push(format!("time.horizon must be positive, got {}", self.time.horizon));
        }
        let s = &self.solver;
        if !(s.tol > 0.0 && s.s_tol > 0.0) || s.max_sweeps == 0 || s.max_newton == 0 || s.max_cg == 0 {
            v.push("solver tolerances and budgets must be positive".into());
        }
        let log = self.model.chemical == ChemicalKind::Log;
        let Some(grid) = grid else { return v };
        if log && !grid.all_dirichlet() {
            let free: Vec<&str> = grid.faces().filter(|f| !grid.is_dirichlet(*f)).map(Face::name).collect();
            v.push(format!("logarithmic mode requires every face to be Dirichlet; free: {}", free.join(", ")));
        }
        for k in &self.boundary {
            for (name, val) in &k.faces {
                let Ok(f) = name.parse::<Face>() else { continue };
                if f.axis() >= grid.dim() || !grid.is_dirichlet(f) {
                    v.push(format!("boundary data given on non-Dirichlet face `{}`", f.name()));
                } else if val.len() != grid.dim() {
                    v.push(format!("boundary data on `{}` needs {} components", f.name(), grid.dim()));
                }
            }
        }
        if let Err(e) = self.boundary_program(&grid) {
            v.push(e.to_string());
        }
        match self.initial_fields(&grid) {
            Err(e) => v.push(e.to_string()),
            Ok((c, z)) => {
                if z.as_slice().iter().any(|zi| !(0.0..=1.0).contains(zi)) {
                    v.push("damage out of [0,1]".into());
                }
                if c.cells().any(|cc| (cc.iter().sum::<f64>() - 1.0).abs() > 1e-12) {
                    v.push("initial concentration does not sum to 1".into());
                }
                if log && c.as_slice().iter().any(|ck| !(*ck > 0.0)) {
                    v.push("logarithmic mode requires positive initial concentrations".into());
                }
                if !c.is_finite() {
                    v.push("initial concentration is not finite".into());
                }
            }
        }
        if let Some(p) = params {
            if v.is_empty() {
                if let Err(e) = Model::new(grid, p) {
                    v.push(e.to_string());
                }
            }
        }
        let mut seen = std::collections::HashSet::new();
        v.retain(|m| seen.insert(m.clone()));
        v
    }

    /// Assembles the simulation. The configuration must be valid.
    pub fn simulation(&self) -> crate::Result<Simulation> {
        let grid = self.grid()?;
        let model = Model::new(grid.clone(), self.material()?)?;
        let stepper = Stepper::new(model, self.model.mode, self.solver)?;
        let (c0, z0) = self.initial_fields(&grid)?;
        Ok(Simulation { stepper, horizon: self.time.horizon, steps: self.time.steps, boundary: self.boundary_program(&grid)?, c0, z0 })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"
[grid]
dim = 1
cells = [8]
dirichlet = ["left", "right"]

[model]
mode = "allen-cahn"

[time]
horizon = 0.1
steps = 2

[initial]
kind = "perturbed"
mean = [0.5, 0.5]
amplitude = 0.01
"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse_config_str(MINIMAL).unwrap();
        assert!(cfg.violations().is_empty(), "{:?}", cfg.violations());
        assert_eq!(cfg.model.chemical, ChemicalKind::Poly);
        assert_eq!(cfg.solver, SolverOptions::default());
        assert_eq!(cfg.audit_tolerances(), AuditTolerances::for_solver(1e-9));
        assert_eq!(cfg.material().unwrap().p, 2.0);
        let again = parse_config_str(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn log_mode_needs_dirichlet_everywhere() {
        let text = MINIMAL.replace("dirichlet = [\"left\", \"right\"]", "dirichlet = [\"left\"]").replace("mode = \"allen-cahn\"", "mode = \"allen-cahn\"\nchemical = \"log\"");
        let cfg = parse_config_str(&text).unwrap();
        let v = cfg.violations();
        assert!(v.iter().any(|m| m.contains("every face to be Dirichlet")), "{v:?}");
    }

    #[test]
    fn damage_outside_unit_interval_is_named() {
        let text = MINIMAL.replace("amplitude = 0.01", "amplitude = 0.01\nz = 1.5");
        let v = parse_config_str(&text).unwrap().violations();
        assert_eq!(v, vec!["damage out of [0,1]".to_string()]);
    }

    #[test]
    fn parse_errors_carry_position() {
        match parse_config_str("[grid]\ndim = = 1\n") {
            Err(ConfigError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn every_problem_is_listed() {
        let text = MINIMAL.replace("horizon = 0.1", "horizon = -1.0").replace("amplitude = 0.01", "amplitude = 0.01\nz = -0.5");
        let v = parse_config_str(&text).unwrap().violations();
        assert_eq!(v.len(), 2, "{v:?}");
    }

    #[test]
    fn perturbation_is_seeded_and_on_the_simplex() {
        let cfg = parse_config_str(MINIMAL).unwrap();
        let grid = cfg.grid().unwrap();
        let (a, _) = cfg.initial_fields(&grid).unwrap();
        let (b, _) = cfg.initial_fields(&grid).unwrap();
        assert_eq!(a, b);
        assert!(a.cells().all(|c| (c[0] + c[1] - 1.0).abs() < 1e-15));
        assert!(a.max_abs_diff(&Field::constant(8, &[0.5, 0.5])) <= 0.01);
    }
}
