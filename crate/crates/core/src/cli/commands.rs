use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::diagnostics::{audit_energy, audit_trajectory, AuditReport, AuditTolerances};
use crate::energy::Model;
use crate::oracle::{compare_with_stepper, small_suite};
use crate::stepper::{run_simulation, SolverOptions, Trajectory};

use super::config::{parse_config, ConfigError, ModelConfig};
use super::io::{load_trajectory, write_audit_csv, write_ledger_csv, write_states, IoError};

/// Overrides the directory that relative `output.dir` entries resolve against.
pub const OUTPUT_ROOT_ENV: &str = "PHASEDAMAGE_OUTPUT_ROOT";

/// Tolerances of the oracle comparison.
pub const ORACLE_VALUE_TOL: f64 = 1e-6;
pub const ORACLE_FIELD_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    AuditFail,
    ConfigError,
    SolverFailure,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Pass => 0,
            Outcome::AuditFail => 1,
            Outcome::ConfigError => 2,
            Outcome::SolverFailure => 3,
        }
    }

    fn status(self) -> &'static str {
        match self {
            Outcome::Pass => "pass",
            Outcome::AuditFail => "audit-fail",
            Outcome::ConfigError => "config-error",
            Outcome::SolverFailure => "solver-failure",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Model(#[from] crate::Error),
}

impl CliError {
    pub fn outcome(&self) -> Outcome {
        match self {
            CliError::Config(_) | CliError::Model(_) => Outcome::ConfigError,
            CliError::Io(_) => Outcome::ConfigError,
        }
    }
}

#[derive(Serialize)]
struct RunInfo {
    version: &'static str,
    seed: u64,
    status: &'static str,
    steps_completed: usize,
    tau: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    solver_error: Option<String>,
    audit_failures: Vec<String>,
    audit_tolerances: AuditTolerances,
}

#[derive(Serialize)]
struct Manifest<'a> {
    run: RunInfo,
    config: &'a ModelConfig,
}

/// Where `simulate` writes for this configuration.
pub fn output_dir(cfg: &ModelConfig) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if cfg.output.dir.is_relative() => PathBuf::from(root).join(&cfg.output.dir),
        _ => cfg.output.dir.clone(),
    }
}

fn audit(cfg: &ModelConfig, model: &Model, traj: &Trajectory) -> Result<AuditReport, CliError> {
    Ok(audit_trajectory(model, traj, &cfg.audit_tolerances())?)
}

/// Runs the scheme and writes states, ledger, audit and manifest into `dir`.
pub fn simulate_into(cfg: &ModelConfig, dir: &Path, out: &mut dyn Write) -> Result<Outcome, CliError> {
    let sim = cfg.simulation()?;
    let model = sim.stepper.model().clone();
    let grid = model.grid().clone();
    let (traj, solver_error) = match run_simulation(&sim) {
        Ok(t) => (t, None),
        Err(f) => match f.partial {
            Some(t) => (t, Some(f.error.to_string())),
            None => return Err(f.error.into()),
        },
    };
    std::fs::create_dir_all(dir).map_err(|source| IoError::Io { path: dir.to_path_buf(), source })?;
    write_states(dir, &grid, &traj, cfg.output.vtk)?;
    let report = audit(cfg, &model, &traj)?;
    let energy = audit_energy(&model, &traj)?;
    write_ledger_csv(&dir.join("ledger.csv"), &traj, &energy, &report)?;
    write_audit_csv(&dir.join("audit.csv"), &report)?;
    let outcome = if solver_error.is_some() {
        Outcome::SolverFailure
    } else if report.passed() {
        Outcome::Pass
    } else {
        Outcome::AuditFail
    };
    let manifest = Manifest {
        run: RunInfo {
            version: env!("CARGO_PKG_VERSION"),
            seed: cfg.seed,
            status: outcome.status(),
            steps_completed: traj.len() - 1,
            tau: traj.tau,
            solver_error: solver_error.clone(),
            audit_failures: report.failures.clone(),
            audit_tolerances: report.tolerances,
        },
        config: cfg,
    };
    let path = dir.join("manifest.toml");
    std::fs::write(&path, toml::to_string(&manifest).expect("manifest serializes")).map_err(|source| IoError::Io { path, source })?;
    let _ = writeln!(out, "{} steps written to {}", traj.len() - 1, dir.display());
    if let Some(e) = solver_error {
        let _ = writeln!(out, "solver failure: {e}");
    }
    for f in &report.failures {
        let _ = writeln!(out, "audit: {f}");
    }
    let _ = writeln!(out, "{}", outcome.status());
    Ok(outcome)
}

/// Re-audits the states stored under `dir`.
pub fn audit_dir(cfg: &ModelConfig, dir: &Path, csv: Option<&Path>, out: &mut dyn Write) -> Result<Outcome, CliError> {
    let grid = cfg.grid()?;
    let model = Model::new(grid.clone(), cfg.material()?)?;
    let program = cfg.boundary_program(&grid)?;
    let traj = load_trajectory(dir, &grid, cfg.n_phases(), cfg.model.mode, cfg.tau(), |t| program.at(t))?;
    let report = audit(cfg, &model, &traj)?;
    if let Some(p) = csv {
        write_audit_csv(p, &report)?;
    }
    for f in &report.failures {
        let _ = writeln!(out, "audit: {f}");
    }
    let _ = writeln!(out, "{} states audited: {}", traj.len(), if report.passed() { "pass" } else { "fail" });
    Ok(if report.passed() { Outcome::Pass } else { Outcome::AuditFail })
}

/// Block solver against the dense reference on the built-in cases.
pub fn oracle_check(out: &mut dyn Write) -> Result<Outcome, CliError> {
    let mut all = true;
    for case in small_suite() {
        let r = compare_with_stepper(&case, SolverOptions::default())?;
        let ok = r.passed(ORACLE_VALUE_TOL, ORACLE_FIELD_TOL);
        all &= ok;
        let _ = writeln!(
            out,
            "{:<24} value gap {:.2e}  field gap {:.2e}  evaluation gap {:.2e}  {}",
            r.name,
            r.value_gap,
            r.field_gap,
            r.evaluation_gap,
            if ok { "pass" } else { "FAIL" }
        );
    }
    Ok(if all { Outcome::Pass } else { Outcome::AuditFail })
}

fn report(result: Result<Outcome, CliError>, err: &mut dyn Write) -> Outcome {
    result.unwrap_or_else(|e| {
        let _ = writeln!(err, "error: {e}");
        e.outcome()
    })
}

pub fn simulate(config: &Path, out: &mut dyn Write, err: &mut dyn Write) -> Outcome {
    report(parse_config(config).map_err(CliError::from).and_then(|cfg| simulate_into(&cfg, &output_dir(&cfg), out)), err)
}

pub fn audit_command(config: &Path, dir: &Path, csv: Option<&Path>, out: &mut dyn Write, err: &mut dyn Write) -> Outcome {
    report(parse_config(config).map_err(CliError::from).and_then(|cfg| audit_dir(&cfg, dir, csv, out)), err)
}

pub fn oracle_command(out: &mut dyn Write, err: &mut dyn Write) -> Outcome {
    report(oracle_check(out), err)
}
