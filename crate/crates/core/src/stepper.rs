//! Time-incremental minimization: initial displacement, one constrained step,
//! potential recovery, the time loop and the interpolants.

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use crate::energy::{EnergyLedger, Model};
use crate::error::{Error, Result};
use crate::grid::{BoundaryValues, ConcentrationField, Field, ScalarField, VectorField};
use crate::simplex::{lagrange_multiplier, project_admissible, project_tangent, Diffusion, SInverse};
use crate::solve::{dot, newton_cg, norm2, projected_gradient_norm, projected_newton, NewtonOptions, Objective};

/// Tolerances and iteration budgets of the step solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Joint first-order residual at which a step is accepted.
    pub tol: f64,
    /// Alternating sweeps over the u, c and z blocks.
    pub max_sweeps: usize,
    /// Newton iterations per block solve.
    pub max_newton: usize,
    /// Inner conjugate-gradient iterations per Newton step.
    pub max_cg: usize,
    /// Accuracy of the S⁻¹ solves inside a step.
    pub s_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_sweeps: 400, max_newton: 60, max_cg: 2000, s_tol: 1e-13 }
    }
}

impl SolverOptions {
    fn block(&self) -> NewtonOptions {
        NewtonOptions { tol: 0.1 * self.tol, max_iter: self.max_newton, cg_max_iter: self.max_cg }
    }
}

/// One time slice (u, c, w, z).
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: f64,
    pub u: VectorField,
    pub c: ConcentrationField,
    pub w: ConcentrationField,
    pub z: ScalarField,
}

impl State {
    /// Convex combination `beta·self + (1 − beta)·other`.
    pub fn lerp(&self, other: &State, beta: f64) -> State {
        State {
            t: beta * self.t + (1.0 - beta) * other.t,
            u: self.u.lerp(&other.u, beta),
            c: self.c.lerp(&other.c, beta),
            w: self.w.lerp(&other.w, beta),
            z: self.z.lerp(&other.z, beta),
        }
    }

    pub fn max_abs_diff(&self, other: &State) -> f64 {
        self.u
            .max_abs_diff(&other.u)
            .max(self.c.max_abs_diff(&other.c))
            .max(self.w.max_abs_diff(&other.w))
            .max(self.z.max_abs_diff(&other.z))
    }
}

/// Convergence data of one incremental step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub sweeps: usize,
    pub residual_u: f64,
    pub residual_c: f64,
    pub residual_z: f64,
    /// Step functional at the starting candidate.
    pub candidate_value: f64,
    /// Step functional at the accepted point.
    pub value: f64,
}

/// Displacement data as a piecewise-linear function of time.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryProgram {
    knots: Vec<(f64, BoundaryValues)>,
}

impl BoundaryProgram {
    pub fn constant(b: BoundaryValues) -> Self {
        Self { knots: vec![(0.0, b)] }
    }

    /// Knots must have strictly increasing times; values are held constant
    /// outside the knot range.
    pub fn new(knots: Vec<(f64, BoundaryValues)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::param("boundary program needs at least one knot"));
        }
        if knots.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::param("boundary knot times must increase strictly"));
        }
        Ok(Self { knots })
    }

    pub fn knots(&self) -> &[(f64, BoundaryValues)] {
        &self.knots
    }

    pub fn at(&self, t: f64) -> BoundaryValues {
        let k = &self.knots;
        if t <= k[0].0 {
            return k[0].1.clone();
        }
        for w in k.windows(2) {
            if t <= w[1].0 {
                let beta = (t - w[0].0) / (w[1].0 - w[0].0);
                return w[1].1.lerp(&w[0].1, beta);
            }
        }
        k[k.len() - 1].1.clone()
    }
}

/// States at t_m = mτ with their boundary data and step diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub mode: Diffusion,
    pub tau: f64,
    pub states: Vec<State>,
    pub boundary: Vec<BoundaryValues>,
    pub steps: Vec<StepInfo>,
}

impl Trajectory {
    pub fn horizon(&self) -> f64 {
        self.tau * (self.states.len() - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Interpolant kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolant {
    /// Piecewise constant, `q^m` on `((m−1)τ, mτ]`.
    Right,
    /// Piecewise constant, `q^m` on `[mτ, (m+1)τ)`.
    Left,
    /// Piecewise linear.
    Linear,
}

/// Index pair (m, β) with t = (m + β)τ, snapped to grid points.
fn locate(traj: &Trajectory, t: f64) -> Result<(usize, f64)> {
    let last = traj.states.len() - 1;
    let horizon = traj.horizon();
    let slack = 1e-12 * horizon.max(1.0);
    if !(t >= -slack && t <= horizon + slack) {
        return Err(Error::TimeRange { t, horizon });
    }
    if last == 0 {
        return Ok((0, 0.0));
    }
    let s = (t / traj.tau).max(0.0);
    let r = s.round();
    if (s - r).abs() <= 1e-12 * s.max(1.0) {
        return Ok(((r as usize).min(last), 0.0));
    }
    let m = (s.floor() as usize).min(last - 1);
    Ok((m, s - m as f64))
}

pub fn interpolant_eval(traj: &Trajectory, t: f64, kind: Interpolant) -> Result<State> {
    if traj.states.is_empty() {
        return Err(Error::param("empty trajectory"));
    }
    let (m, beta) = locate(traj, t)?;
    let s = &traj.states;
    Ok(match kind {
        _ if beta == 0.0 => s[m].clone(),
        Interpolant::Right => s[m + 1].clone(),
        Interpolant::Left => s[m].clone(),
        Interpolant::Linear => s[m + 1].lerp(&s[m], beta),
    })
}

/// The interpolation weight β = t/τ − (m − 1) on `[(m−1)τ, mτ)`.
pub fn linear_weight(t: f64, tau: f64) -> f64 {
    let s = t / tau;
    s - s.floor()
}

/// Projects raw concentration data onto the admissible increments.
fn project_increment(x: &mut [f64], n: usize, mode: Diffusion) {
    match mode {
        Diffusion::CahnHilliard => project_admissible(x, n),
        Diffusion::AllenCahn => x.chunks_exact_mut(n).for_each(project_tangent),
    }
}

struct UBlock<'a> {
    model: &'a Model,
    bnd: &'a BoundaryValues,
    c: &'a ConcentrationField,
    z: &'a ScalarField,
    ncomp: usize,
}

impl UBlock<'_> {
    fn field(&self, x: &[f64]) -> Field {
        Field::from_vec(self.ncomp, x.to_vec()).expect("cell-major data")
    }
}

impl Objective for UBlock<'_> {
    fn dim(&self) -> usize {
        self.c.n_cells() * self.ncomp
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.model.u_energy(&self.field(x), self.bnd, self.c, self.z)
    }

    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        g.copy_from_slice(self.model.grad_u(&self.field(x), self.bnd, self.c, self.z).as_slice());
    }
}

/// Concentration block in the increment x = c − c_prev.
struct CBlock<'a> {
    model: &'a Model,
    mode: Diffusion,
    sinv: &'a SInverse,
    tau: f64,
    c_prev: &'a ConcentrationField,
    u: &'a VectorField,
    bnd: &'a BoundaryValues,
    z: &'a ScalarField,
    warm: RefCell<Option<Vec<f64>>>,
}

impl CBlock<'_> {
    fn concentration(&self, x: &[f64]) -> Field {
        let mut c = self.c_prev.clone();
        c.as_mut_slice().iter_mut().zip(x).for_each(|(a, b)| *a += b);
        c
    }

    /// S⁻¹x; on failure returns NaNs so line searches reject the point.
    fn s_inv(&self, x: &[f64]) -> Vec<f64> {
        let guess = self.warm.borrow().clone();
        match self.sinv.solve(x, guess.as_deref()) {
            Ok(v) => {
                *self.warm.borrow_mut() = Some(v.clone());
                v
            }
            Err(_) => vec![f64::NAN; x.len()],
        }
    }

    fn prox_weight(&self) -> f64 {
        self.model.grid().cell_volume() / self.tau
    }

    fn eps(&self) -> f64 {
        self.model.params().epsilon
    }
}

impl Objective for CBlock<'_> {
    fn dim(&self) -> usize {
        self.c_prev.as_slice().len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let c = self.concentration(x);
        let sx = self.s_inv(x);
        let k = self.prox_weight();
        self.model.c_energy(self.u, self.bnd, &c, self.z) + 0.5 * k * (dot(x, &sx) + self.eps() * dot(x, x))
    }

    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        let c = self.concentration(x);
        let sx = self.s_inv(x);
        let k = self.prox_weight();
        let eps = self.eps();
        let gc = self.model.grad_c(self.u, self.bnd, &c, self.z);
        for i in 0..g.len() {
            g[i] = gc.as_slice()[i] + k * (sx[i] + eps * x[i]);
        }
        project_increment(g, self.model.n_phases(), self.mode);
    }

    fn hess_vec(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        let vn = crate::solve::norm_inf(v);
        if vn == 0.0 {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let h = 1e-6 * (1.0 + crate::solve::norm_inf(x)) / vn;
        let shifted = |s: f64| {
            let xs: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + s * b).collect();
            self.model.grad_c(self.u, self.bnd, &self.concentration(&xs), self.z)
        };
        let gp = shifted(h);
        let gm = shifted(-h);
        let sv = self.sinv.solve(v, None).unwrap_or_else(|_| vec![f64::NAN; v.len()]);
        let k = self.prox_weight();
        let eps = self.eps();
        for i in 0..out.len() {
            out[i] = (gp.as_slice()[i] - gm.as_slice()[i]) / (2.0 * h) + k * (sv[i] + eps * v[i]);
        }
        project_increment(out, self.model.n_phases(), self.mode);
    }
}

struct ZBlock<'a> {
    model: &'a Model,
    tau: f64,
    z_prev: &'a ScalarField,
    u: &'a VectorField,
    bnd: &'a BoundaryValues,
    c: &'a ConcentrationField,
}

impl ZBlock<'_> {
    fn field(&self, x: &[f64]) -> Field {
        Field::from_vec(1, x.to_vec()).expect("cell data")
    }
}

impl Objective for ZBlock<'_> {
    fn dim(&self) -> usize {
        self.z_prev.n_cells()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let p = self.model.params();
        let vol = self.model.grid().cell_volume();
        let diss: f64 = x
            .iter()
            .zip(self.z_prev.as_slice())
            .map(|(z, zp)| {
                let d = z - zp;
                vol * (-p.alpha * d + 0.5 * p.beta / self.tau * d * d)
            })
            .sum();
        self.model.z_energy(self.u, self.bnd, self.c, &self.field(x)) + diss
    }

    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        let p = self.model.params();
        let vol = self.model.grid().cell_volume();
        let gz = self.model.grad_z(self.u, self.bnd, self.c, &self.field(x));
        for i in 0..g.len() {
            g[i] = gz.as_slice()[i] + vol * (-p.alpha + p.beta / self.tau * (x[i] - self.z_prev.as_slice()[i]));
        }
    }
}

/// Solver bound to a model and diffusion mode.
#[derive(Debug, Clone)]
pub struct Stepper {
    model: Model,
    mode: Diffusion,
    opts: SolverOptions,
    sinv: SInverse,
}

impl Stepper {
    pub fn new(model: Model, mode: Diffusion, opts: SolverOptions) -> Result<Self> {
        if !(opts.tol > 0.0 && opts.s_tol > 0.0) {
            return Err(Error::param("solver tolerances must be positive"));
        }
        let sinv = SInverse::new(mode, model.grid(), &model.params().mobility, opts.s_tol);
        Ok(Self { model, mode, opts, sinv })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn mode(&self) -> Diffusion {
        self.mode
    }

    pub fn options(&self) -> &SolverOptions {
        &self.opts
    }

    pub fn s_inverse(&self) -> &SInverse {
        &self.sinv
    }

    /// Minimizer of the displacement-dependent energy with c, z fixed.
    pub fn initial_displacement(&self, c0: &ConcentrationField, z0: &ScalarField, b0: &BoundaryValues, guess: Option<&VectorField>) -> Result<VectorField> {
        let dim = self.model.dim();
        let mut u = guess.cloned().unwrap_or_else(|| Field::zeros(self.model.grid().n_cells(), dim));
        self.model.check_state(&u, b0, c0, z0)?;
        let obj = UBlock { model: &self.model, bnd: b0, c: c0, z: z0, ncomp: dim };
        let mut opts = self.opts.block();
        opts.tol = self.opts.tol;
        opts.max_iter = opts.max_iter.max(200);
        newton_cg(&obj, u.as_mut_slice(), &opts).require("initial displacement")?;
        Ok(u)
    }

    /// Chemical potential for the initial state: the projected variational
    /// derivative of the energy in c, plus in Cahn-Hilliard mode the normal
    /// part of the multiplier.
    pub fn initial_potential(&self, u: &VectorField, bnd: &BoundaryValues, c: &ConcentrationField, z: &ScalarField) -> ConcentrationField {
        let mut w = self.model.grad_c(u, bnd, c, z);
        let inv = 1.0 / self.model.grid().cell_volume();
        let n = self.model.n_phases();
        // CH potentials carry the multiplier's normal part, as recovered ones do.
        let shift = match self.mode {
            Diffusion::CahnHilliard => {
                let lambda = self.model.grid().mean(&self.model.local_c_derivative(u, bnd, c, z)).expect("fields checked by caller");
                lambda.iter().sum::<f64>() / n as f64
            }
            Diffusion::AllenCahn => 0.0,
        };
        for cell in w.as_mut_slice().chunks_exact_mut(n) {
            cell.iter_mut().for_each(|v| *v *= inv);
            project_tangent(cell);
            cell.iter_mut().for_each(|v| *v += shift);
        }
        w
    }

    /// Value of the step functional at (u, c, z).
    pub fn step_functional(&self, prev: &State, tau: f64, u: &VectorField, bnd: &BoundaryValues, c: &ConcentrationField, z: &ScalarField) -> Result<f64> {
        let e = self.model.ledger(u, bnd, c, z)?;
        let vol = self.model.grid().cell_volume();
        let p = self.model.params();
        let dz = z.sub(&prev.z);
        let diss: f64 = dz.as_slice().iter().map(|d| vol * (-p.alpha * d + 0.5 * p.beta / tau * d * d)).sum();
        let mut dc = c.sub(&prev.c).into_vec();
        project_increment(&mut dc, self.model.n_phases(), self.mode);
        let s = self.sinv.solve(&dc, None)?;
        let prox = 0.5 * vol / tau * (dot(&dc, &s) + p.epsilon * dot(&dc, &dc));
        Ok(e.total + diss + prox)
    }

    /// Block residuals (u, c, z) of the step functional at a point.
    pub fn step_residuals(&self, prev: &State, tau: f64, u: &VectorField, bnd: &BoundaryValues, c: &ConcentrationField, z: &ScalarField) -> [f64; 3] {
        let ru = norm2(self.model.grad_u(u, bnd, c, z).as_slice());
        let mut x = c.sub(&prev.c).into_vec();
        project_increment(&mut x, self.model.n_phases(), self.mode);
        let cb = self.c_block(prev, tau, u, bnd, z);
        let mut g = vec![0.0; x.len()];
        cb.gradient(&x, &mut g);
        let rc = norm2(&g);
        let zb = ZBlock { model: &self.model, tau, z_prev: &prev.z, u, bnd, c };
        let mut gz = vec![0.0; z.n_cells()];
        zb.gradient(z.as_slice(), &mut gz);
        let lower = vec![0.0; gz.len()];
        let rz = projected_gradient_norm(z.as_slice(), &gz, &lower, prev.z.as_slice());
        [ru, rc, rz]
    }

    fn c_block<'a>(&'a self, prev: &'a State, tau: f64, u: &'a VectorField, bnd: &'a BoundaryValues, z: &'a ScalarField) -> CBlock<'a> {
        CBlock { model: &self.model, mode: self.mode, sinv: &self.sinv, tau, c_prev: &prev.c, u, bnd, z, warm: RefCell::new(None) }
    }

    /// One incremental step from `prev` with displacement data `b_next`.
    pub fn step(&self, prev: &State, tau: f64, b_next: &BoundaryValues) -> Result<(State, StepInfo)> {
        if !(tau > 0.0) {
            return Err(Error::param(format!("time step must be positive, got {tau}")));
        }
        if let Some(v) = prev.z.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Constraint(format!("previous damage {v} outside [0, 1]")));
        }
        self.model.check_state(&prev.u, b_next, &prev.c, &prev.z)?;
        let n = self.model.n_phases();
        let dim = self.model.dim();
        let mut u = prev.u.clone();
        let mut x = vec![0.0; prev.c.as_slice().len()];
        let mut z = prev.z.clone();
        let lower = vec![0.0; z.n_cells()];
        let block = self.opts.block();
        let candidate_value = self.step_functional(prev, tau, &u, b_next, &prev.c, &z)?;
        let mut info = StepInfo { candidate_value, ..StepInfo::default() };
        let mut c = prev.c.clone();
        for sweep in 1..=self.opts.max_sweeps {
            {
                let ub = UBlock { model: &self.model, bnd: b_next, c: &c, z: &z, ncomp: dim };
                newton_cg(&ub, u.as_mut_slice(), &block);
            }
            {
                let cb = self.c_block(prev, tau, &u, b_next, &z);
                newton_cg(&cb, &mut x, &block);
                c = cb.concentration(&x);
            }
            {
                let zb = ZBlock { model: &self.model, tau, z_prev: &prev.z, u: &u, bnd: b_next, c: &c };
                projected_newton(&zb, z.as_mut_slice(), &lower, prev.z.as_slice(), &block);
            }
            let [ru, rc, rz] = self.step_residuals(prev, tau, &u, b_next, &c, &z);
            info.sweeps = sweep;
            info.residual_u = ru;
            info.residual_c = rc;
            info.residual_z = rz;
            if !(ru.is_finite() && rc.is_finite() && rz.is_finite()) {
                return Err(Error::Solver("non-finite residual in incremental step".into()));
            }
            if ru <= self.opts.tol && rc <= self.opts.tol && rz <= self.opts.tol {
                break;
            }
            if sweep == self.opts.max_sweeps {
                return Err(Error::Solver(format!(
                    "incremental step: no convergence after {sweep} sweeps (residuals u {ru:.3e}, c {rc:.3e}, z {rz:.3e})"
                )));
            }
        }
        for cell in c.as_mut_slice().chunks_exact_mut(n) {
            let defect = (cell.iter().sum::<f64>() - 1.0) / n as f64;
            cell.iter_mut().for_each(|v| *v -= defect);
        }
        for (zi, zp) in z.as_mut_slice().iter_mut().zip(prev.z.as_slice()) {
            *zi = zi.clamp(0.0, *zp);
        }
        info.value = self.step_functional(prev, tau, &u, b_next, &c, &z)?;
        let w = self.recover_potential(&c, &prev.c, tau, &u, b_next, &z)?;
        Ok((State { t: prev.t + tau, u, c, w, z }, info))
    }

    /// `w = −S⁻¹((c − c_prev)/τ) + λ` (Cahn-Hilliard) or `−M⁺((c − c_prev)/τ)`.
    pub fn recover_potential(
        &self,
        c_new: &ConcentrationField,
        c_prev: &ConcentrationField,
        tau: f64,
        u: &VectorField,
        bnd: &BoundaryValues,
        z: &ScalarField,
    ) -> Result<ConcentrationField> {
        let n = self.model.n_phases();
        let mut rate = c_new.sub(c_prev).scaled(1.0 / tau).into_vec();
        project_increment(&mut rate, n, self.mode);
        let s = self.sinv.solve(&rate, None)?;
        let mut w = Field::from_vec(n, s.into_iter().map(|v| -v).collect())?;
        if self.mode == Diffusion::CahnHilliard {
            let lambda = lagrange_multiplier(&self.model, self.mode, u, bnd, c_new, z)?;
            for cell in w.as_mut_slice().chunks_exact_mut(n) {
                cell.iter_mut().zip(&lambda).for_each(|(a, l)| *a += l);
            }
        }
        Ok(w)
    }

    /// Energy ledger of a state under boundary data `bnd`.
    pub fn ledger(&self, s: &State, bnd: &BoundaryValues) -> Result<EnergyLedger> {
        self.model.ledger(&s.u, bnd, &s.c, &s.z)
    }
}

/// Everything needed to run the scheme from t = 0.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub stepper: Stepper,
    pub horizon: f64,
    pub steps: usize,
    pub boundary: BoundaryProgram,
    pub c0: ConcentrationField,
    pub z0: ScalarField,
}

/// A run that stopped at a failing step.
#[derive(Debug, Clone)]
pub struct SimulationFailure {
    pub error: Error,
    pub partial: Option<Trajectory>,
}

impl std::fmt::Display for SimulationFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.partial {
            Some(t) => write!(f, "{} (after {} completed steps)", self.error, t.states.len() - 1),
            None => write!(f, "{}", self.error),
        }
    }
}

impl std::error::Error for SimulationFailure {}

impl Simulation {
    pub fn tau(&self) -> f64 {
        if self.steps == 0 {
            self.horizon
        } else {
            self.horizon / self.steps as f64
        }
    }

    /// Initial state with u⁰ from [`Stepper::initial_displacement`].
    pub fn initial_state(&self) -> Result<State> {
        let b0 = self.boundary.at(0.0);
        let u = self.stepper.initial_displacement(&self.c0, &self.z0, &b0, None)?;
        let w = self.stepper.initial_potential(&u, &b0, &self.c0, &self.z0);
        Ok(State { t: 0.0, u, c: self.c0.clone(), w, z: self.z0.clone() })
    }
}

pub fn run_simulation(sim: &Simulation) -> std::result::Result<Trajectory, SimulationFailure> {
    run_from(sim, None)
}

/// Runs the scheme; `initial` replaces the computed initial state.
pub fn run_from(sim: &Simulation, initial: Option<State>) -> std::result::Result<Trajectory, SimulationFailure> {
    if !(sim.horizon > 0.0) && sim.steps > 0 {
        return Err(SimulationFailure { error: Error::param("time horizon must be positive"), partial: None });
    }
    let s0 = match initial {
        Some(s) => s,
        None => sim.initial_state().map_err(|error| SimulationFailure { error, partial: None })?,
    };
    let tau = sim.tau();
    let mut traj = Trajectory {
        mode: sim.stepper.mode(),
        tau,
        states: vec![s0],
        boundary: vec![sim.boundary.at(0.0)],
        steps: Vec::new(),
    };
    for m in 1..=sim.steps {
        let t = m as f64 * tau;
        let b = sim.boundary.at(t);
        let prev = traj.states.last().expect("nonempty");
        match sim.stepper.step(prev, tau, &b) {
            Ok((mut s, info)) => {
                s.t = t;
                traj.states.push(s);
                traj.boundary.push(b);
                traj.steps.push(info);
            }
            Err(error) => return Err(SimulationFailure { error, partial: Some(traj) }),
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::MaterialParams;
    use crate::grid::{Face, Grid};

    fn traj3() -> Trajectory {
        let st = |v: f64| State {
            t: v,
            u: Field::constant(2, &[v]),
            c: Field::constant(2, &[v, 1.0 - v]),
            w: Field::zeros(2, 2),
            z: Field::constant(2, &[1.0 - 0.1 * v]),
        };
        Trajectory { mode: Diffusion::AllenCahn, tau: 0.5, states: vec![st(0.0), st(0.5), st(1.0)], boundary: vec![], steps: vec![] }
    }

    #[test]
    fn interpolants() {
        let tr = traj3();
        for kind in [Interpolant::Left, Interpolant::Right, Interpolant::Linear] {
            assert_eq!(interpolant_eval(&tr, 0.5, kind).unwrap(), tr.states[1]);
            assert_eq!(interpolant_eval(&tr, 1.0, kind).unwrap(), tr.states[2]);
        }
        let mid = interpolant_eval(&tr, 0.25, Interpolant::Linear).unwrap();
        assert!((mid.u.as_slice()[0] - 0.25).abs() < 1e-15);
        assert_eq!(interpolant_eval(&tr, 0.3, Interpolant::Right).unwrap(), tr.states[1]);
        assert_eq!(interpolant_eval(&tr, 0.3, Interpolant::Left).unwrap(), tr.states[0]);
        assert!((linear_weight(1.0 + 0.25 * 0.5, 0.5) - 0.25).abs() < 1e-15);
        assert!(matches!(interpolant_eval(&tr, 1.5, Interpolant::Left), Err(Error::TimeRange { .. })));
        assert!(interpolant_eval(&tr, -0.1, Interpolant::Left).is_err());
    }

    #[test]
    fn boundary_program_interpolates() {
        let g = Grid::new(1, &[4], &[1.0], &[Face::Left, Face::Right]).unwrap();
        let p = BoundaryProgram::new(vec![(0.0, BoundaryValues::zeros(&g, 1)), (1.0, BoundaryValues::uniform(&g, &[2.0]))]).unwrap();
        assert_eq!(p.at(0.25).get(Face::Right, 0), &[0.5]);
        assert_eq!(p.at(3.0).get(Face::Left, 0), &[2.0]);
        assert!(BoundaryProgram::new(vec![]).is_err());
    }

    fn stepper(mode: Diffusion, n: usize) -> Stepper {
        let g = Grid::new(1, &[n], &[1.0], &[Face::Left, Face::Right]).unwrap();
        let mut p = MaterialParams::binary(1);
        p.phases[0].eigenstrain = vec![0.05];
        Stepper::new(Model::new(g, p).unwrap(), mode, SolverOptions::default()).unwrap()
    }

    #[test]
    fn zero_eigenstrain_gives_zero_displacement() {
        let g = Grid::new(1, &[8], &[1.0], &[Face::Left, Face::Right]).unwrap();
        let st = Stepper::new(Model::new(g.clone(), MaterialParams::binary(1)).unwrap(), Diffusion::AllenCahn, SolverOptions::default()).unwrap();
        let u = st
            .initial_displacement(&Field::constant(8, &[0.3, 0.7]), &Field::constant(8, &[1.0]), &BoundaryValues::zeros(&g, 1), None)
            .unwrap();
        assert_eq!(u.max_abs(), 0.0);
    }

    #[test]
    fn uniform_eigenstrain_clamped_bar_has_constant_stress() {
        let st = stepper(Diffusion::AllenCahn, 8);
        let g = st.model().grid().clone();
        let b = BoundaryValues::zeros(&g, 1);
        let c = Field::constant(8, &[0.5, 0.5]);
        let z = Field::constant(8, &[1.0]);
        let u = st.initial_displacement(&c, &z, &b, None).unwrap();
        assert!(u.max_abs() < 1e-12);
        let guess = Field::from_fn(&g, 1, |x| vec![0.01 * (3.0 * x[0]).sin()]);
        let u2 = st.initial_displacement(&c, &z, &b, Some(&guess)).unwrap();
        assert!(u2.max_abs_diff(&u) < 1e-8);
    }

    #[test]
    fn damage_only_decreases() {
        let st = stepper(Diffusion::AllenCahn, 6);
        let g = st.model().grid().clone();
        let b = BoundaryValues::from_fn(&g, 1, |f, _| vec![if f == Face::Right { 3.0 } else { 0.0 }]);
        let prev = State { t: 0.0, u: Field::zeros(6, 1), c: Field::constant(6, &[0.5, 0.5]), w: Field::zeros(6, 2), z: Field::constant(6, &[0.5]) };
        let (next, info) = st.step(&prev, 0.1, &b).unwrap();
        assert!(next.z.as_slice().iter().all(|&z| z < 0.5 && z >= 0.0));
        assert!(info.value <= info.candidate_value);
    }

    #[test]
    fn stationary_state_is_fixed() {
        for mode in [Diffusion::AllenCahn, Diffusion::CahnHilliard] {
            let g = Grid::new(1, &[8], &[1.0], &[Face::Left, Face::Right]).unwrap();
            let st = Stepper::new(Model::new(g.clone(), MaterialParams::binary(1)).unwrap(), mode, SolverOptions::default()).unwrap();
            let b = BoundaryValues::zeros(&g, 1);
            let c = Field::constant(8, &[1.0, 0.0]);
            let z = Field::constant(8, &[1.0]);
            let u = st.initial_displacement(&c, &z, &b, None).unwrap();
            let w = st.initial_potential(&u, &b, &c, &z);
            let prev = State { t: 0.0, u, c, w, z };
            let (next, _) = st.step(&prev, 0.05, &b).unwrap();
            assert!(next.u.max_abs_diff(&prev.u) < 1e-8 && next.c.max_abs_diff(&prev.c) < 1e-8 && next.z.max_abs_diff(&prev.z) < 1e-8);
        }
    }

    #[test]
    fn allen_cahn_potential_example() {
        let g = Grid::new(1, &[4], &[1.0], &[Face::Left]).unwrap();
        let st = Stepper::new(Model::new(g.clone(), MaterialParams::binary(1)).unwrap(), Diffusion::AllenCahn, SolverOptions::default()).unwrap();
        let c_prev = Field::constant(4, &[0.5, 0.5]);
        let c_new = Field::constant(4, &[0.6, 0.4]);
        let w = st
            .recover_potential(&c_new, &c_prev, 0.1, &Field::zeros(4, 1), &BoundaryValues::zeros(&g, 1), &Field::constant(4, &[1.0]))
            .unwrap();
        assert!(w.cells().all(|c| (c[0] + 0.5).abs() < 1e-12 && (c[1] - 0.5).abs() < 1e-12));
    }
}
