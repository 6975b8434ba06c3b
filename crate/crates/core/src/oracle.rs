//! Dense brute-force reference for one incremental step on small 1D binary
//! problems.
//!
//! The step functional is re-derived here with explicit loops and a dense
//! pseudo-inverse of S, then minimized over all unknowns at once by a
//! projected Newton method with finite-difference derivatives and several
//! starting points. Nothing in this module calls the block solver.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::energy::{ChemicalEnergy, MaterialParams, Model, Stiffness};
use crate::error::{Error, Result};
use crate::grid::{BoundaryValues, Face, Field, Grid};
use crate::simplex::Diffusion;
use crate::stepper::{SolverOptions, State, Stepper};

/// A one-step problem: 1D, two phases, uniform cells on (0, length).
#[derive(Debug, Clone)]
pub struct OracleCase {
    pub name: String,
    pub mode: Diffusion,
    pub params: MaterialParams,
    pub length: f64,
    pub dirichlet_left: bool,
    pub dirichlet_right: bool,
    pub tau: f64,
    pub u_prev: Vec<f64>,
    /// First concentration component; the second is `1 − c`.
    pub c_prev: Vec<f64>,
    pub z_prev: Vec<f64>,
    /// Displacement data at the new time on the (left, right) end.
    pub b_next: (f64, f64),
}

/// Dense minimizer of one case.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub u: Vec<f64>,
    pub c: Vec<f64>,
    pub z: Vec<f64>,
    pub value: f64,
}

struct Dense<'a> {
    case: &'a OracleCase,
    n: usize,
    h: f64,
    /// Dense pseudo-inverse of S on the 2n concentration unknowns.
    s_pinv: DMatrix<f64>,
}

impl<'a> Dense<'a> {
    fn new(case: &'a OracleCase) -> Self {
        let n = case.c_prev.len();
        let h = case.length / n as f64;
        let m = case.params.mobility.matrix();
        let mut s = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            for a in 0..2 {
                for b in 0..2 {
                    match case.mode {
                        Diffusion::AllenCahn => s[(2 * i + a, 2 * i + b)] = m[(a, b)],
                        Diffusion::CahnHilliard => {
                            let mut diag = 0.0;
                            if i > 0 {
                                s[(2 * i + a, 2 * (i - 1) + b)] = -m[(a, b)] / (h * h);
                                diag += 1.0;
                            }
                            if i + 1 < n {
                                s[(2 * i + a, 2 * (i + 1) + b)] = -m[(a, b)] / (h * h);
                                diag += 1.0;
                            }
                            s[(2 * i + a, 2 * i + b)] = diag * m[(a, b)] / (h * h);
                        }
                    }
                }
            }
        }
        let s_pinv = s.pseudo_inverse(1e-10).expect("SVD of a small matrix");
        Self { case, n, h, s_pinv }
    }

    fn unknowns(&self) -> usize {
        match self.case.mode {
            Diffusion::AllenCahn => 3 * self.n,
            Diffusion::CahnHilliard => 3 * self.n - 1,
        }
    }

    /// Splits x into (u, s, z) with c₁ = c₁_prev + s.
    fn split(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.n;
        let u = x[..n].to_vec();
        let (s, zs) = match self.case.mode {
            Diffusion::AllenCahn => (x[n..2 * n].to_vec(), &x[2 * n..]),
            Diffusion::CahnHilliard => {
                let mut s = x[n..2 * n - 1].to_vec();
                s.push(-s.iter().sum::<f64>());
                (s, &x[2 * n - 1..])
            }
        };
        (u, s, zs.to_vec())
    }

    fn chemical(&self, c: [f64; 2]) -> f64 {
        match &self.case.params.chemical {
            ChemicalEnergy::Polynomial { scale } => scale * c.iter().map(|x| x * x * (1.0 - x) * (1.0 - x)).sum::<f64>(),
            ChemicalEnergy::Logarithmic { theta, a, delta } => {
                let d = delta.delta();
                let phi = |x: f64| if x >= d { x * x.ln() } else { x * d.ln() - d / 2.0 + x * x / (2.0 * d) };
                let mut q = 0.0;
                for k in 0..2 {
                    for l in 0..2 {
                        q += 0.5 * c[k] * a[k * 2 + l] * c[l];
                    }
                }
                theta * (phi(c[0]) + phi(c[1])) + q
            }
        }
    }

    fn value(&self, x: &[f64]) -> f64 {
        let case = self.case;
        let p = &case.params;
        let (n, h) = (self.n, self.h);
        let (u, s, z) = self.split(x);
        let c: Vec<[f64; 2]> = (0..n).map(|i| [case.c_prev[i] + s[i], 1.0 - case.c_prev[i] - s[i]]).collect();
        let gamma = match p.gradient {
            crate::energy::GradientTensor::Isotropic(g) => g,
            crate::energy::GradientTensor::Full(ref m) => m[0],
        };
        let stiff: Vec<f64> = p.phases.iter().map(|ph| ph.stiffness.mandel()[0]).collect();
        let eig: Vec<f64> = p.phases.iter().map(|ph| ph.eigenstrain[0]).collect();
        let q = p.degradation.exponent;
        let (bl, br) = case.b_next;
        let mut e = 0.0;
        for i in 0..n {
            let left = if i > 0 {
                (u[i] - u[i - 1]) / h
            } else if case.dirichlet_left {
                2.0 * (u[0] - bl) / h
            } else {
                (u[1] - u[0]) / h
            };
            let right = if i + 1 < n {
                (u[i + 1] - u[i]) / h
            } else if case.dirichlet_right {
                2.0 * (br - u[i]) / h
            } else {
                (u[i] - u[i - 1]) / h
            };
            let cm = stiff[0] * c[i][0] + stiff[1] * c[i][1];
            let em = eig[0] * c[i][0] + eig[1] * c[i][1];
            let deg = z[i].max(0.0).powf(q) + p.eta;
            for du in [left, right] {
                e += 0.5 * h * (deg * 0.5 * cm * (du - em) * (du - em) + 0.25 * p.epsilon * du.powi(4));
            }
            e += h * self.chemical(c[i]);
            if i + 1 < n {
                let dz = (z[i + 1] - z[i]) / h;
                let dc = [(c[i + 1][0] - c[i][0]) / h, (c[i + 1][1] - c[i][1]) / h];
                e += h * (0.5 * dz * dz + p.epsilon / p.p * dz.abs().powf(p.p));
                e += h * 0.5 * gamma * (dc[0] * dc[0] + dc[1] * dc[1]);
            }
            let dzi = z[i] - case.z_prev[i];
            e += h * (-p.alpha * dzi + 0.5 * p.beta / case.tau * dzi * dzi);
        }
        let delta = DVector::from_iterator(2 * n, s.iter().flat_map(|&si| [si, -si]));
        let sd = &self.s_pinv * &delta;
        e += 0.5 * h / case.tau * (delta.dot(&sd) + p.epsilon * delta.dot(&delta));
        e
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let m = self.unknowns();
        let mut lo = vec![f64::NEG_INFINITY; m];
        let mut hi = vec![f64::INFINITY; m];
        for i in 0..self.n {
            lo[m - self.n + i] = 0.0;
            hi[m - self.n + i] = self.case.z_prev[i];
        }
        (lo, hi)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        let mut xp = x.to_vec();
        for i in 0..x.len() {
            let h = 1e-6 * (1.0 + x[i].abs());
            xp[i] = x[i] + h;
            let fp = self.value(&xp);
            xp[i] = x[i] - h;
            let fm = self.value(&xp);
            xp[i] = x[i];
            g[i] = (fp - fm) / (2.0 * h);
        }
        g
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let m = x.len();
        let mut hm = DMatrix::zeros(m, m);
        let mut xp = x.to_vec();
        for j in 0..m {
            let h = 1e-4 * (1.0 + x[j].abs());
            xp[j] = x[j] + h;
            let gp = self.gradient(&xp);
            xp[j] = x[j] - h;
            let gm = self.gradient(&xp);
            xp[j] = x[j];
            for i in 0..m {
                hm[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
        (&hm + hm.transpose()) * 0.5
    }

    fn projected_gradient(&self, x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
        (0..x.len()).map(|i| (x[i] - (x[i] - g[i]).clamp(lo[i], hi[i].max(lo[i]))).powi(2)).sum::<f64>().sqrt()
    }

    /// Projected Newton from one start.
    fn minimize(&self, mut x: Vec<f64>) -> (Vec<f64>, f64) {
        let (lo, hi) = self.bounds();
        let clip = |v: &mut Vec<f64>| {
            for i in 0..v.len() {
                v[i] = v[i].clamp(lo[i], hi[i].max(lo[i]));
            }
        };
        clip(&mut x);
        let mut f = self.value(&x);
        for _ in 0..200 {
            let g = self.gradient(&x);
            if self.projected_gradient(&x, &g, &lo, &hi) < 1e-12 {
                break;
            }
            let free: Vec<usize> = (0..x.len())
                .filter(|&i| !((x[i] <= lo[i] + 1e-14 && g[i] > 0.0) || (x[i] >= hi[i] - 1e-14 && g[i] < 0.0)))
                .collect();
            let hess = self.hessian(&x);
            let k = free.len();
            let mut d = vec![0.0; x.len()];
            if k > 0 {
                let hf = DMatrix::from_fn(k, k, |a, b| hess[(free[a], free[b])]);
                let eig = SymmetricEigen::new(hf);
                let floor = 1e-10 * eig.eigenvalues.amax().max(1e-12);
                let gf = DVector::from_iterator(k, free.iter().map(|&i| g[i]));
                let coeff = eig.eigenvectors.transpose() * gf;
                let scaled = DVector::from_iterator(k, coeff.iter().zip(eig.eigenvalues.iter()).map(|(c, l)| -c / l.abs().max(floor)));
                let df = &eig.eigenvectors * scaled;
                for (a, &i) in free.iter().enumerate() {
                    d[i] = df[a];
                }
            }
            let mut improved = false;
            for dir in [d, g.iter().map(|v| -v).collect::<Vec<f64>>()] {
                let mut t = 1.0;
                while t > 1e-14 {
                    let mut xn: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
                    clip(&mut xn);
                    let fnew = self.value(&xn);
                    if fnew < f {
                        x = xn;
                        f = fnew;
                        improved = true;
                        break;
                    }
                    t *= 0.5;
                }
                if improved {
                    break;
                }
            }
            if !improved {
                break;
            }
        }
        (x, f)
    }
}

impl OracleCase {
    fn check(&self) -> Result<()> {
        let n = self.c_prev.len();
        if n < 2 || self.u_prev.len() != n || self.z_prev.len() != n {
            return Err(Error::shape("oracle case fields must share a length ≥ 2"));
        }
        if self.params.dim != 1 || self.params.n_phases() != 2 {
            return Err(Error::param("oracle handles one-dimensional binary problems only"));
        }
        if !(self.dirichlet_left || self.dirichlet_right) {
            return Err(Error::param("oracle case needs a Dirichlet end"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        let mut faces = Vec::new();
        if self.dirichlet_left {
            faces.push(Face::Left);
        }
        if self.dirichlet_right {
            faces.push(Face::Right);
        }
        Grid::new(1, &[self.c_prev.len()], &[self.length], &faces)
    }

    pub fn boundary(&self, grid: &Grid) -> BoundaryValues {
        BoundaryValues::from_fn(grid, 1, |f, _| vec![if f == Face::Left { self.b_next.0 } else { self.b_next.1 }])
    }

    pub fn prev_state(&self) -> State {
        let n = self.c_prev.len();
        State {
            t: 0.0,
            u: Field::from_vec(1, self.u_prev.clone()).expect("length checked"),
            c: Field::from_vec(2, self.c_prev.iter().flat_map(|&c| [c, 1.0 - c]).collect()).expect("length checked"),
            w: Field::zeros(n, 2),
            z: Field::from_vec(1, self.z_prev.clone()).expect("length checked"),
        }
    }

    /// Step functional as evaluated by the dense reference.
    pub fn dense_value(&self, u: &[f64], c: &[f64], z: &[f64]) -> Result<f64> {
        self.check()?;
        let d = Dense::new(self);
        let s: Vec<f64> = c.iter().zip(&self.c_prev).map(|(a, b)| a - b).collect();
        let mut x = u.to_vec();
        match self.mode {
            Diffusion::AllenCahn => x.extend(&s),
            Diffusion::CahnHilliard => x.extend(&s[..s.len() - 1]),
        }
        x.extend(z);
        Ok(d.value(&x))
    }
}

/// Minimizes the step functional of `case` densely from several starts.
pub fn brute_force_step(case: &OracleCase) -> Result<OracleSolution> {
    case.check()?;
    let d = Dense::new(case);
    let n = d.n;
    let m = d.unknowns();
    let mut base = vec![0.0; m];
    base[..n].copy_from_slice(&case.u_prev);
    base[m - n..].copy_from_slice(&case.z_prev);
    let mut starts = vec![base.clone()];
    let mut half = base.clone();
    for i in 0..n {
        half[m - n + i] = 0.5 * case.z_prev[i];
    }
    starts.push(half);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..3 {
        let mut s = base.clone();
        for v in s[..m - n].iter_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
        for (i, v) in s[m - n..].iter_mut().enumerate() {
            *v = rng.gen_range(0.0..=1.0) * case.z_prev[i];
        }
        starts.push(s);
    }
    let (x, value) = starts
        .into_iter()
        .map(|s| d.minimize(s))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("at least one start");
    let (u, s, z) = d.split(&x);
    let c = case.c_prev.iter().zip(&s).map(|(a, b)| a + b).collect();
    Ok(OracleSolution { u, c, z, value })
}

/// Block solver against dense reference on one case.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleComparison {
    pub name: String,
    /// |𝔼_block − 𝔼_dense| at the respective minimizers.
    pub value_gap: f64,
    /// Max-norm difference over u, c and z.
    pub field_gap: f64,
    /// The two implementations of 𝔼 evaluated at the block solver's point.
    pub evaluation_gap: f64,
}

impl OracleComparison {
    pub fn passed(&self, value_tol: f64, field_tol: f64) -> bool {
        self.value_gap <= value_tol && self.field_gap <= field_tol && self.evaluation_gap <= value_tol
    }
}

pub fn compare_with_stepper(case: &OracleCase, opts: SolverOptions) -> Result<OracleComparison> {
    let grid = case.grid()?;
    let model = Model::new(grid.clone(), case.params.clone())?;
    let stepper = Stepper::new(model, case.mode, opts)?;
    let prev = case.prev_state();
    let b = case.boundary(&grid);
    let (next, info) = stepper.step(&prev, case.tau, &b)?;
    let dense = brute_force_step(case)?;
    let c1 = next.c.component(0);
    let field_gap = next
        .u
        .as_slice()
        .iter()
        .zip(&dense.u)
        .chain(c1.iter().zip(&dense.c))
        .chain(next.z.as_slice().iter().zip(&dense.z))
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let at_block = case.dense_value(next.u.as_slice(), &c1, next.z.as_slice())?;
    Ok(OracleComparison {
        name: case.name.clone(),
        value_gap: (info.value - dense.value).abs(),
        field_gap,
        evaluation_gap: (at_block - info.value).abs(),
    })
}

/// The four-cell cases: both diffusion modes, ε ∈ {0, 0.1}, with eigenstrain
/// mismatch, a heterogeneous stiffness and damage driven past threshold.
pub fn small_suite() -> Vec<OracleCase> {
    let mut out = Vec::new();
    for mode in [Diffusion::AllenCahn, Diffusion::CahnHilliard] {
        for eps in [0.0, 0.1] {
            let mut params = MaterialParams::binary(1);
            params.epsilon = eps;
            params.gradient = crate::energy::GradientTensor::Isotropic(0.02);
            params.phases[0].eigenstrain = vec![0.1];
            params.phases[1].eigenstrain = vec![-0.05];
            params.phases[1].stiffness = Stiffness::isotropic(1, 2.0, 1.5);
            out.push(OracleCase {
                name: format!("{}-eps{eps}", mode.name()),
                mode,
                params,
                length: 1.0,
                dirichlet_left: true,
                dirichlet_right: true,
                tau: 0.05,
                u_prev: vec![0.0; 4],
                c_prev: vec![0.2, 0.45, 0.6, 0.85],
                z_prev: vec![1.0, 0.9, 0.75, 1.0],
                b_next: (0.0, 0.45),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_value_matches_model_on_candidate() {
        for case in small_suite() {
            let grid = case.grid().unwrap();
            let model = Model::new(grid.clone(), case.params.clone()).unwrap();
            let st = Stepper::new(model, case.mode, SolverOptions::default()).unwrap();
            let prev = case.prev_state();
            let b = case.boundary(&grid);
            let u: Vec<f64> = case.u_prev.iter().map(|v| v + 0.01).collect();
            let c: Vec<f64> = match case.mode {
                Diffusion::AllenCahn => case.c_prev.iter().map(|v| v + 0.03).collect(),
                Diffusion::CahnHilliard => case.c_prev.iter().zip([0.03, -0.01, -0.04, 0.02]).map(|(v, d)| v + d).collect(),
            };
            let z: Vec<f64> = case.z_prev.iter().map(|v| 0.9 * v).collect();
            let fu = Field::from_vec(1, u.clone()).unwrap();
            let fc = Field::from_vec(2, c.iter().flat_map(|&a| [a, 1.0 - a]).collect()).unwrap();
            let fz = Field::from_vec(1, z.clone()).unwrap();
            let a = st.step_functional(&prev, case.tau, &fu, &b, &fc, &fz).unwrap();
            let d = case.dense_value(&u, &c, &z).unwrap();
            assert!((a - d).abs() < 1e-11, "{}: {a} vs {d}", case.name);
        }
    }
}
