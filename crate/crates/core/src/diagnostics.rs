//! Post-hoc certification of trajectories: discrete energy inequality,
//! Euler–Lagrange residuals, the damage variational inequality, conservation
//! and constraint checks, and the strain integrability monitor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energy::{EnergyLedger, Model};
use crate::error::{Error, Result};
use crate::grid::{BoundaryValues, Field, ScalarField};
use crate::simplex::{apply_s, project_tangent, Diffusion};
use crate::solve::{dot, norm2};
use crate::stepper::{State, Trajectory};

/// Cells with damage below this value count as fully damaged.
pub const Z_ZERO_TOL: f64 = 1e-10;

/// Random nonpositive test fields per step in the VI audit.
pub const VI_RANDOM_FIELDS: usize = 32;

/// Seed of the VI test-field generator.
pub const VI_SEED: u64 = 0x5eed_2a1e;

/// Tolerances of [`audit_trajectory`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditTolerances {
    /// Energy slack bound is `−energy·(1 + |E₀|)`.
    pub energy: f64,
    pub residual: f64,
    pub vi: f64,
    /// Mass drift bound per unit volume.
    pub mass: f64,
    pub simplex: f64,
    pub damage: f64,
}

impl AuditTolerances {
    /// Defaults tied to the solver tolerance: ten times for every
    /// solver-dependent check.
    pub fn for_solver(tol: f64) -> Self {
        Self { energy: 10.0 * tol, residual: 10.0 * tol, vi: 10.0 * tol, mass: 1e-10, simplex: 1e-12, damage: 1e-12 }
    }
}

impl Default for AuditTolerances {
    fn default() -> Self {
        Self::for_solver(1e-9)
    }
}

/// Energy balance at step m, cumulative from t = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyAudit {
    pub step: usize,
    pub energy: EnergyLedger,
    /// Σ work of the boundary data up to step m.
    pub work: f64,
    /// Σ τ[R(ż) + ε/2|ċ|² + ½⟨Sw, w⟩].
    pub dissipation: f64,
    /// Σ τ⟨Sw, w⟩ (full weight).
    pub diffusion: f64,
    /// E₀ + work − E_m − dissipation.
    pub slack: f64,
    /// Same with the full ⟨Sw, w⟩ weight; reported without a sign requirement.
    pub slack_sharp: f64,
}

/// Per-step energy balance; row 0 is the initial state.
pub fn audit_energy(model: &Model, traj: &Trajectory) -> Result<Vec<EnergyAudit>> {
    let s = &traj.states;
    let b = &traj.boundary;
    if b.len() != s.len() {
        return Err(Error::shape("trajectory needs boundary data for every state"));
    }
    let tau = traj.tau;
    let vol = model.grid().cell_volume();
    let eps = model.params().epsilon;
    let e0 = model.ledger(&s[0].u, &b[0], &s[0].c, &s[0].z)?;
    let mut rows = vec![EnergyAudit { step: 0, energy: e0, work: 0.0, dissipation: 0.0, diffusion: 0.0, slack: 0.0, slack_sharp: 0.0 }];
    let (mut work, mut diss, mut diff) = (0.0, 0.0, 0.0);
    for m in 1..s.len() {
        let (p, q) = (&s[m - 1], &s[m]);
        let energy = model.ledger(&q.u, &b[m], &q.c, &q.z)?;
        work += model.u_energy(&p.u, &b[m], &p.c, &p.z) - model.u_energy(&p.u, &b[m - 1], &p.c, &p.z);
        let zr = q.z.sub(&p.z).scaled(1.0 / tau);
        let cr = q.c.sub(&p.c).scaled(1.0 / tau);
        let sww = diffusion_form(model, traj.mode, &q.w)?;
        diss += tau * (model.dissipation(&zr) + 0.5 * eps * vol * dot(cr.as_slice(), cr.as_slice()) + 0.5 * sww);
        diff += tau * sww;
        let slack = e0.total + work - energy.total - diss;
        rows.push(EnergyAudit { step: m, energy, work, dissipation: diss, diffusion: diff, slack, slack_sharp: slack - 0.5 * diff });
    }
    Ok(rows)
}

/// ⟨S w, w⟩.
pub fn diffusion_form(model: &Model, mode: Diffusion, w: &Field) -> Result<f64> {
    let sw = apply_s(w, mode, model.grid(), &model.params().mobility)?;
    Ok(model.grid().cell_volume() * dot(sw.as_slice(), w.as_slice()))
}

/// Dual norms of the three Euler–Lagrange residuals at one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ElResiduals {
    /// ∫ ∂ₜĉ·ζ + ⟨Sw, ζ⟩
    pub diffusion: f64,
    /// ∫ w·ζ − [Γ∇c:∇ζ + W_{,c}·ζ + ε∂ₜĉ·ζ], ζ pointwise in TΣ.
    pub potential: f64,
    /// ∫ W^el_{,e}:e(ζ) + ε|∇u|²∇u:∇ζ, ζ vanishing on the Dirichlet part.
    pub momentum: f64,
}

impl ElResiduals {
    pub fn max(&self) -> f64 {
        self.diffusion.max(self.potential).max(self.momentum)
    }
}

pub fn audit_el_residuals(model: &Model, mode: Diffusion, state: &State, prev: &State, bnd: &BoundaryValues, tau: f64) -> Result<ElResiduals> {
    model.check_state(&state.u, bnd, &state.c, &state.z)?;
    let vol = model.grid().cell_volume();
    let n = model.n_phases();
    let rate = state.c.sub(&prev.c).scaled(1.0 / tau);
    let sw = apply_s(&state.w, mode, model.grid(), &model.params().mobility)?;
    let r1: Vec<f64> = rate.as_slice().iter().zip(sw.as_slice()).map(|(a, b)| vol * (a + b)).collect();
    let gc = model.grad_c(&state.u, bnd, &state.c, &state.z);
    let eps = model.params().epsilon;
    let mut r2: Vec<f64> = (0..gc.as_slice().len())
        .map(|i| vol * state.w.as_slice()[i] - gc.as_slice()[i] - eps * vol * rate.as_slice()[i])
        .collect();
    r2.chunks_exact_mut(n).for_each(project_tangent);
    let gu = model.grad_u(&state.u, bnd, &state.c, &state.z);
    Ok(ElResiduals { diffusion: norm2(&r1), potential: norm2(&r2), momentum: norm2(gu.as_slice()) })
}

/// Outcome of the damage variational inequality audit at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct ViAudit {
    /// Minimum tested value over admissible directions.
    pub min_slack: f64,
    /// Minimum of ⟨r, z − ζ⟩ over sampled ζ ≥ 0.
    pub side_min: f64,
    /// Subgradient density r = −χ_{z=0}[W^el_{,z}]⁺.
    pub r: ScalarField,
}

/// Tests the damage inequality on per-cell bumps toward both obstacles and on
/// seeded random admissible fields.
pub fn audit_vi(model: &Model, state: &State, prev: &State, bnd: &BoundaryValues, tau: f64) -> Result<ViAudit> {
    model.check_state(&state.u, bnd, &state.c, &state.z)?;
    let p = model.params();
    let vol = model.grid().cell_volume();
    let z = state.z.as_slice();
    let zp = prev.z.as_slice();
    let force = model.elastic_damage_force(&state.u, bnd, &state.c, &state.z);
    let r: Vec<f64> = z.iter().zip(force.as_slice()).map(|(zi, f)| if *zi < Z_ZERO_TOL { -f.max(0.0) } else { 0.0 }).collect();
    let gz = model.grad_z(&state.u, bnd, &state.c, &state.z);
    let g: Vec<f64> = (0..z.len())
        .map(|i| gz.as_slice()[i] + vol * (-p.alpha + p.beta * (z[i] - zp[i]) / tau + r[i]))
        .collect();
    let mut min_slack = f64::INFINITY;
    for i in 0..z.len() {
        for d in [-z[i], zp[i] - z[i]] {
            if d != 0.0 {
                min_slack = min_slack.min(g[i] * d);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(VI_SEED);
    let mut side_min = f64::INFINITY;
    for _ in 0..VI_RANDOM_FIELDS {
        let (mut down, mut up, mut side) = (0.0, 0.0, 0.0);
        let (mut down_len, mut up_len) = (0.0f64, 0.0f64);
        for i in 0..z.len() {
            let a: f64 = rng.gen();
            let b: f64 = rng.gen();
            down += g[i] * (-a * z[i]);
            up += g[i] * (b * (zp[i] - z[i]));
            down_len = down_len.max(a * z[i]);
            up_len = up_len.max(b * (zp[i] - z[i]));
            side += vol * r[i] * (z[i] - a);
        }
        if down_len > 0.0 {
            min_slack = min_slack.min(down);
        }
        if up_len > 0.0 {
            min_slack = min_slack.min(up);
        }
        side_min = side_min.min(side);
    }
    if min_slack == f64::INFINITY {
        min_slack = 0.0;
    }
    Ok(ViAudit { min_slack, side_min, r: Field::from_vec(1, r)? })
}

/// Per-step `max_k |∫c_m − ∫c₀|`; Cahn-Hilliard trajectories only.
pub fn audit_conservation(model: &Model, traj: &Trajectory) -> Result<Vec<f64>> {
    if traj.mode != Diffusion::CahnHilliard {
        return Err(Error::Mode("mass is conserved only under Cahn-Hilliard diffusion".into()));
    }
    let g = model.grid();
    let m0 = g.integrate(&traj.states[0].c)?;
    traj.states[1..]
        .iter()
        .map(|s| Ok(g.integrate(&s.c)?.iter().zip(&m0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)))
        .collect()
}

/// One line of [`strain_integrability_report`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrainRatio {
    pub state: usize,
    pub p: f64,
    pub grad_u_lp: f64,
    pub grad_u_l2: f64,
    pub c_l2p: f64,
    /// ‖∇u‖_{L^p} / (‖∇u‖_{L²} + ‖c‖²_{L^{2p}} + 1)
    pub ratio: f64,
}

/// Higher-integrability monitor for each state and exponent.
pub fn strain_integrability_report(model: &Model, traj: &Trajectory, p_list: &[f64]) -> Result<Vec<StrainRatio>> {
    if let Some(p) = p_list.iter().find(|p| !(**p > 2.0)) {
        return Err(Error::param(format!("exponents must exceed 2, got {p}")));
    }
    let mut out = Vec::new();
    for (i, s) in traj.states.iter().enumerate() {
        for &p in p_list {
            out.push(strain_ratio(model, &s.u, &traj.boundary[i], &s.c, p, i));
        }
    }
    Ok(out)
}

pub fn strain_ratio(model: &Model, u: &Field, bnd: &BoundaryValues, c: &Field, p: f64, state: usize) -> StrainRatio {
    let op = model.displacement_operator();
    let dim = model.dim();
    let wq = op.weight();
    let grads = op.gradients(u, Some(bnd));
    let (mut sp, mut s2) = (0.0, 0.0);
    for g in grads.chunks_exact(dim * dim) {
        let n2: f64 = g.iter().map(|x| x * x).sum();
        sp += wq * n2.powf(0.5 * p);
        s2 += wq * n2;
    }
    let vol = model.grid().cell_volume();
    let cn: f64 = c.cells().map(|cc| vol * cc.iter().map(|x| x * x).sum::<f64>().powf(p)).sum();
    let grad_u_lp = sp.powf(1.0 / p);
    let grad_u_l2 = s2.sqrt();
    let c_l2p = cn.powf(1.0 / (2.0 * p));
    StrainRatio { state, p, grad_u_lp, grad_u_l2, c_l2p, ratio: grad_u_lp / (grad_u_l2 + c_l2p * c_l2p + 1.0) }
}

/// All checks of one step; row 0 describes the initial state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepAudit {
    pub step: usize,
    pub t: f64,
    pub energy: EnergyLedger,
    pub slack: f64,
    pub slack_sharp: f64,
    pub residual_diffusion: f64,
    pub residual_potential: f64,
    pub residual_momentum: f64,
    pub vi_min: f64,
    pub vi_side_min: f64,
    /// NaN for Allen-Cahn runs.
    pub mass_drift: f64,
    pub simplex_defect: f64,
    /// max(z_m − z_{m−1}); positive values are healing.
    pub damage_increase: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub c_min: f64,
    pub pass: bool,
}

/// Aggregated audit of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub rows: Vec<StepAudit>,
    pub tolerances: AuditTolerances,
    /// Human-readable list of failed checks, `step m: ...`.
    pub failures: Vec<String>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    /// First step at which any check failed.
    pub fn first_failure(&self) -> Option<usize> {
        self.rows.iter().find(|r| !r.pass).map(|r| r.step)
    }

    /// Steps failing a named check (`energy`, `residual`, `vi`, `mass`,
    /// `simplex`, `damage`, `positivity`).
    pub fn failing_steps(&self, check: &str) -> Vec<usize> {
        let tag = format!("[{check}]");
        let mut steps: Vec<usize> = self
            .failures
            .iter()
            .filter(|f| f.contains(&tag))
            .filter_map(|f| f.strip_prefix("step ")?.split(':').next()?.parse().ok())
            .collect();
        steps.dedup();
        steps
    }
}

/// Runs every audit over a trajectory. `log_mode` adds the strict
/// positivity check.
pub fn audit_trajectory(model: &Model, traj: &Trajectory, tol: &AuditTolerances) -> Result<AuditReport> {
    let energy = audit_energy(model, traj)?;
    let e0 = energy[0].energy.total;
    let ch = traj.mode == Diffusion::CahnHilliard;
    let drift = if ch { audit_conservation(model, traj)? } else { Vec::new() };
    let log_mode = model.params().chemical.is_log();
    let n = model.n_phases();
    let vol_total = model.grid().volume();
    let mut rows = Vec::with_capacity(traj.states.len());
    let mut failures = Vec::new();
    for (m, s) in traj.states.iter().enumerate() {
        let simplex_defect = s.c.cells().map(|c| (c.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max);
        let c_min = s.c.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
        let z_min = s.z.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
        let z_max = s.z.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut row = StepAudit {
            step: m,
            t: s.t,
            energy: energy[m].energy,
            slack: energy[m].slack,
            slack_sharp: energy[m].slack_sharp,
            residual_diffusion: 0.0,
            residual_potential: 0.0,
            residual_momentum: 0.0,
            vi_min: 0.0,
            vi_side_min: 0.0,
            mass_drift: f64::NAN,
            simplex_defect,
            damage_increase: 0.0,
            z_min,
            z_max,
            c_min,
            pass: true,
        };
        let mut fail = |check: &str, msg: String| failures.push(format!("step {m}: [{check}] {msg}"));
        let mut ok = true;
        if m > 0 {
            let prev = &traj.states[m - 1];
            let el = audit_el_residuals(model, traj.mode, s, prev, &traj.boundary[m], traj.tau)?;
            row.residual_diffusion = el.diffusion;
            row.residual_potential = el.potential;
            row.residual_momentum = el.momentum;
            if !(el.max() <= tol.residual) {
                ok = false;
                fail("residual", format!("Euler–Lagrange residuals {:.3e} / {:.3e} / {:.3e}", el.diffusion, el.potential, el.momentum));
            }
            let vi = audit_vi(model, s, prev, &traj.boundary[m], traj.tau)?;
            row.vi_min = vi.min_slack;
            row.vi_side_min = vi.side_min;
            if !(vi.min_slack >= -tol.vi && vi.side_min >= -tol.vi) {
                ok = false;
                fail("vi", format!("variational inequality slack {:.3e}, side condition {:.3e}", vi.min_slack, vi.side_min));
            }
            row.damage_increase = s.z.sub(&prev.z).as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if ch {
                row.mass_drift = drift[m - 1];
                if !(row.mass_drift <= tol.mass * vol_total) {
                    ok = false;
                    fail("mass", format!("mass drift {:.3e}", row.mass_drift));
                }
            }
            if !(row.slack >= -tol.energy * (1.0 + e0.abs())) {
                ok = false;
                fail("energy", format!("energy inequality slack {:.3e}", row.slack));
            }
        } else if ch {
            row.mass_drift = 0.0;
        }
        if !(row.damage_increase <= tol.damage && z_min >= -tol.damage && z_max <= 1.0) {
            ok = false;
            fail("damage", format!("damage increase {:.3e}, range [{z_min:.3e}, {z_max:.3e}]", row.damage_increase));
        }
        if !(simplex_defect <= tol.simplex) {
            ok = false;
            fail("simplex", format!("simplex defect {simplex_defect:.3e}"));
        }
        if log_mode && !(c_min > 0.0) {
            ok = false;
            fail("positivity", format!("minimum concentration {c_min:.3e}"));
        }
        if !s.u.is_finite() || !s.c.is_finite() || !s.w.is_finite() || !s.z.is_finite() || s.c.ncomp() != n {
            ok = false;
            fail("finite", "non-finite or malformed fields".into());
        }
        row.pass = ok;
        rows.push(row);
    }
    Ok(AuditReport { rows, tolerances: *tol, failures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::MaterialParams;
    use crate::grid::{Face, Grid};

    fn model(dim: usize) -> Model {
        let g = if dim == 1 {
            Grid::new(1, &[8], &[1.0], &[Face::Left, Face::Right]).unwrap()
        } else {
            Grid::new(2, &[4, 4], &[1.0, 1.0], &Face::ALL).unwrap()
        };
        Model::new(g, MaterialParams::binary(dim)).unwrap()
    }

    fn static_traj(m: &Model, mode: Diffusion, len: usize) -> Trajectory {
        let n = m.grid().n_cells();
        let s = State { t: 0.0, u: Field::zeros(n, m.dim()), c: Field::constant(n, &[1.0, 0.0]), w: Field::zeros(n, 2), z: Field::constant(n, &[1.0]) };
        let mut states = vec![s; len];
        for (i, s) in states.iter_mut().enumerate() {
            s.t = 0.1 * i as f64;
        }
        Trajectory { mode, tau: 0.1, states, boundary: vec![BoundaryValues::zeros(m.grid(), m.dim()); len], steps: vec![] }
    }

    #[test]
    fn static_trajectory_has_zero_slack() {
        let m = model(1);
        let tr = static_traj(&m, Diffusion::CahnHilliard, 4);
        for row in audit_energy(&m, &tr).unwrap() {
            assert!(row.slack.abs() < 1e-12);
        }
        let rep = audit_trajectory(&m, &tr, &AuditTolerances::default()).unwrap();
        assert!(rep.passed(), "{:?}", rep.failures);
        assert!(audit_conservation(&m, &static_traj(&m, Diffusion::CahnHilliard, 1)).unwrap().is_empty());
        assert!(matches!(audit_conservation(&m, &static_traj(&m, Diffusion::AllenCahn, 2)), Err(Error::Mode(_))));
    }

    #[test]
    fn injected_damage_increase_is_flagged() {
        let m = model(1);
        let mut tr = static_traj(&m, Diffusion::AllenCahn, 4);
        for s in &mut tr.states {
            s.z = Field::constant(8, &[0.5]);
        }
        tr.states[2].z.as_mut_slice()[3] = 0.6;
        let rep = audit_trajectory(&m, &tr, &AuditTolerances::default()).unwrap();
        assert_eq!(rep.failing_steps("damage"), vec![2]);
    }

    #[test]
    fn undamaged_rest_state_vi_is_sign_definite() {
        let m = model(1);
        let tr = static_traj(&m, Diffusion::AllenCahn, 2);
        let b = &tr.boundary[1];
        let vi = audit_vi(&m, &tr.states[1], &tr.states[0], b, tr.tau).unwrap();
        // only downward bumps exist and each gives −α·ζ·|cell| > 0
        assert!((vi.min_slack - 0.125).abs() < 1e-15);
        assert!(vi.r.as_slice().iter().all(|&r| r == 0.0));
    }

    #[test]
    fn w_offset_raises_potential_residual() {
        let m = model(1);
        let tr = static_traj(&m, Diffusion::AllenCahn, 2);
        let mut s = tr.states[1].clone();
        let base = audit_el_residuals(&m, tr.mode, &s, &tr.states[0], &tr.boundary[1], tr.tau).unwrap();
        s.w.as_mut_slice()[6] += 1.0;
        let off = audit_el_residuals(&m, tr.mode, &s, &tr.states[0], &tr.boundary[1], tr.tau).unwrap();
        let vol = m.grid().cell_volume();
        let jump = off.potential - base.potential;
        assert!((jump - vol / 2f64.sqrt()).abs() < 1e-12, "{jump}");
    }

    #[test]
    fn strain_ratio_examples() {
        let m = model(2);
        let g = m.grid().clone();
        let zero = strain_ratio(&m, &Field::zeros(16, 2), &BoundaryValues::zeros(&g, 2), &Field::constant(16, &[0.5, 0.5]), 4.0, 0);
        assert_eq!(zero.ratio, 0.0);
        let a = [[0.2, 0.1], [0.1, -0.3]];
        let aff = |x: [f64; 2]| vec![a[0][0] * x[0] + a[0][1] * x[1], a[1][0] * x[0] + a[1][1] * x[1]];
        let u = Field::from_fn(&g, 2, aff);
        let b = BoundaryValues::from_fn(&g, 2, |_, x| aff(x));
        let c = [0.3, 0.7];
        let r = strain_ratio(&m, &u, &b, &Field::constant(16, &c), 4.0, 0);
        let na = (0.04f64 + 0.01 + 0.01 + 0.09).sqrt();
        let expect = na / (na + (0.09 + 0.49) + 1.0);
        assert!((r.ratio - expect).abs() < 1e-14, "{} vs {expect}", r.ratio);
    }
}
