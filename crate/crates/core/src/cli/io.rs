//! File formats. Column order in every CSV is fixed; see the README.
//!
//! Floats are written with Rust's shortest round-trip formatting, so reading
//! a state back reproduces it bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::diagnostics::{AuditReport, EnergyAudit};
use crate::grid::{BoundaryValues, Field, Grid};
use crate::stepper::{State, StepInfo, Trajectory};
use crate::simplex::Diffusion;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

type Result<T> = std::result::Result<T, IoError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> IoError + '_ {
    move |source| IoError::Csv { path: path.to_path_buf(), source }
}

fn fmt(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) || !a.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// `cell,x,y,u_x[,u_y],c_0..c_{N−1},w_0..w_{N−1},z`
pub fn state_header(dim: usize, n: usize) -> Vec<String> {
    let mut h: Vec<String> = ["cell", "x", "y", "u_x"].iter().map(|s| s.to_string()).collect();
    if dim == 2 {
        h.push("u_y".into());
    }
    h.extend((0..n).map(|k| format!("c_{k}")));
    h.extend((0..n).map(|k| format!("w_{k}")));
    h.push("z".into());
    h
}

pub fn state_file_name(m: usize) -> String {
    format!("state_{m:04}.csv")
}

pub fn write_state_csv(path: &Path, grid: &Grid, s: &State) -> Result<()> {
    let n = s.c.ncomp();
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(state_header(grid.dim(), n)).map_err(csv_err(path))?;
    let mut rec = Vec::new();
    for cell in 0..grid.n_cells() {
        let x = grid.center(cell);
        rec.clear();
        rec.push(cell.to_string());
        rec.push(fmt(x[0]));
        rec.push(fmt(x[1]));
        rec.extend(s.u.cell(cell).iter().map(|&v| fmt(v)));
        rec.extend(s.c.cell(cell).iter().map(|&v| fmt(v)));
        rec.extend(s.w.cell(cell).iter().map(|&v| fmt(v)));
        rec.push(fmt(s.z.as_slice()[cell]));
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads a state snapshot; the time is left at zero.
pub fn read_state_csv(path: &Path, grid: &Grid, n: usize) -> Result<State> {
    let bad = |message: String| IoError::Format { path: path.to_path_buf(), message };
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header: Vec<String> = r.headers().map_err(csv_err(path))?.iter().map(str::to_string).collect();
    let expect = state_header(grid.dim(), n);
    if header != expect {
        return Err(bad(format!("expected columns {}, found {}", expect.join(","), header.join(","))));
    }
    let dim = grid.dim();
    let nc = grid.n_cells();
    let (mut u, mut c, mut w, mut z) = (Vec::with_capacity(nc * dim), Vec::with_capacity(nc * n), Vec::with_capacity(nc * n), Vec::with_capacity(nc));
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let vals: Vec<f64> = rec
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>().map_err(|e| bad(format!("row {row}: {e}"))))
            .collect::<Result<_>>()?;
        if rec.get(0) != Some(row.to_string().as_str()) {
            return Err(bad(format!("row {row}: cells must be listed in order")));
        }
        let mut it = vals.into_iter().skip(2);
        u.extend(it.by_ref().take(dim));
        c.extend(it.by_ref().take(n));
        w.extend(it.by_ref().take(n));
        z.extend(it.by_ref().take(1));
    }
    if z.len() != nc {
        return Err(bad(format!("expected {nc} cells, found {}", z.len())));
    }
    Ok(State {
        t: 0.0,
        u: Field::from_vec(dim, u).expect("counted"),
        c: Field::from_vec(n, c).expect("counted"),
        w: Field::from_vec(n, w).expect("counted"),
        z: Field::from_vec(1, z).expect("counted"),
    })
}

/// Legacy-VTK structured points with cell data.
pub fn write_state_vtk(path: &Path, grid: &Grid, s: &State) -> Result<()> {
    let nx = grid.cells(0);
    let ny = if grid.dim() == 2 { grid.cells(1) } else { 1 };
    let hy = if grid.dim() == 2 { grid.spacing(1) } else { 1.0 };
    let mut out = String::new();
    let _ = writeln!(out, "# vtk DataFile Version 3.0\nstate t={}\nASCII\nDATASET STRUCTURED_POINTS", s.t);
    let _ = writeln!(out, "DIMENSIONS {} {} 1\nORIGIN 0 0 0\nSPACING {} {} 1", nx + 1, ny + 1, grid.spacing(0), hy);
    let _ = writeln!(out, "CELL_DATA {}", grid.n_cells());
    let _ = writeln!(out, "VECTORS u double");
    for cell in s.u.cells() {
        let _ = writeln!(out, "{} {} 0", cell[0], cell.get(1).copied().unwrap_or(0.0));
    }
    let mut scalar = |name: &str, vals: &mut dyn Iterator<Item = f64>| {
        let _ = writeln!(out, "SCALARS {name} double 1\nLOOKUP_TABLE default");
        for v in vals {
            let _ = writeln!(out, "{v}");
        }
    };
    for k in 0..s.c.ncomp() {
        scalar(&format!("c_{k}"), &mut s.c.cells().map(|c| c[k]));
    }
    for k in 0..s.w.ncomp() {
        scalar(&format!("w_{k}"), &mut s.w.cells().map(|c| c[k]));
    }
    scalar("z", &mut s.z.as_slice().iter().copied());
    fs::write(path, out).map_err(io_err(path))
}

pub const LEDGER_HEADER: [&str; 18] = [
    "step", "t", "gradient_c", "gradient_z", "chemical", "elastic", "reg_u", "reg_z", "total", "work", "dissipation", "slack",
    "slack_sharp", "sweeps", "residual_u", "residual_c", "residual_z", "step_value",
];

pub const AUDIT_HEADER: [&str; 17] = [
    "step", "t", "total", "slack", "slack_sharp", "residual_diffusion", "residual_potential", "residual_momentum", "vi_min",
    "vi_side_min", "mass_drift", "simplex_defect", "damage_increase", "z_min", "z_max", "c_min", "pass",
];

/// One row per state: energy ledger, cumulative balance, solver data of the
/// step that produced it (empty for the initial state), then every audit column.
pub fn write_ledger_csv(path: &Path, traj: &Trajectory, energy: &[EnergyAudit], report: &AuditReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let header: Vec<&str> = LEDGER_HEADER.iter().chain(AUDIT_HEADER.iter().skip(5)).copied().collect();
    w.write_record(&header).map_err(csv_err(path))?;
    for (m, (e, a)) in energy.iter().zip(&report.rows).enumerate() {
        let l = &e.energy;
        let mut rec: Vec<String> = vec![m.to_string(), fmt(traj.states[m].t)];
        rec.extend([l.gradient_c, l.gradient_z, l.chemical, l.elastic, l.reg_u, l.reg_z, l.total, e.work, e.dissipation, e.slack, e.slack_sharp].map(fmt));
        match m.checked_sub(1).and_then(|k| traj.steps.get(k)) {
            Some(StepInfo { sweeps, residual_u, residual_c, residual_z, value, .. }) => {
                rec.push(sweeps.to_string());
                rec.extend([*residual_u, *residual_c, *residual_z, *value].map(fmt));
            }
            None => rec.extend(std::iter::repeat(String::new()).take(5)),
        }
        rec.extend(audit_record(a).into_iter().skip(5));
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn audit_record(a: &crate::diagnostics::StepAudit) -> Vec<String> {
    let mut rec = vec![a.step.to_string(), fmt(a.t), fmt(a.energy.total)];
    rec.extend(
        [
            a.slack,
            a.slack_sharp,
            a.residual_diffusion,
            a.residual_potential,
            a.residual_momentum,
            a.vi_min,
            a.vi_side_min,
            a.mass_drift,
            a.simplex_defect,
            a.damage_increase,
            a.z_min,
            a.z_max,
            a.c_min,
        ]
        .map(fmt),
    );
    rec.push(a.pass.to_string());
    rec
}

pub fn write_audit_csv(path: &Path, report: &AuditReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(AUDIT_HEADER).map_err(csv_err(path))?;
    for a in &report.rows {
        w.write_record(audit_record(a)).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes `states/state_NNNN.csv` (and `.vtk` when asked) for every state.
pub fn write_states(dir: &Path, grid: &Grid, traj: &Trajectory, vtk: bool) -> Result<()> {
    let states = dir.join("states");
    fs::create_dir_all(&states).map_err(io_err(&states))?;
    for (m, s) in traj.states.iter().enumerate() {
        write_state_csv(&states.join(state_file_name(m)), grid, s)?;
        if vtk {
            write_state_vtk(&states.join(format!("state_{m:04}.vtk")), grid, s)?;
        }
    }
    Ok(())
}

/// Loads `states/state_0000.csv, state_0001.csv, …` until the first gap.
/// Times are m·τ and boundary data are re-evaluated from `boundary`.
pub fn load_trajectory(dir: &Path, grid: &Grid, n: usize, mode: Diffusion, tau: f64, boundary: impl Fn(f64) -> BoundaryValues) -> Result<Trajectory> {
    let states_dir = dir.join("states");
    let mut states = Vec::new();
    loop {
        let p = states_dir.join(state_file_name(states.len()));
        if !p.exists() {
            break;
        }
        let mut s = read_state_csv(&p, grid, n)?;
        s.t = states.len() as f64 * tau;
        states.push(s);
    }
    if states.is_empty() {
        return Err(IoError::Format { path: states_dir, message: "no state files".into() });
    }
    let bnd = states.iter().map(|s| boundary(s.t)).collect();
    Ok(Trajectory { mode, tau, states, boundary: bnd, steps: Vec::new() })
}
