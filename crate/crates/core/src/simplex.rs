//! Concentration simplex algebra: the projection onto TΣ, mobility checks,
//! the diffusion operator S and its inverse, and the mass-constraint
//! multiplier.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::energy::Model;
use crate::error::{Error, Result};
use crate::grid::{BoundaryValues, ConcentrationField, Field, Grid, QuadrantOperator, ScalarField, VectorField};
use crate::solve::{conjugate_gradient, dot, norm2, norm_inf};

/// Diffusion type of the concentration evolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Diffusion {
    CahnHilliard,
    AllenCahn,
}

impl Diffusion {
    pub fn name(self) -> &'static str {
        match self {
            Diffusion::CahnHilliard => "cahn-hilliard",
            Diffusion::AllenCahn => "allen-cahn",
        }
    }
}

impl std::str::FromStr for Diffusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cahn-hilliard" => Ok(Diffusion::CahnHilliard),
            "allen-cahn" => Ok(Diffusion::AllenCahn),
            _ => Err(Error::param(format!("unknown diffusion mode `{s}`"))),
        }
    }
}

/// `P = I − 𝟙𝟙ᵀ/N`.
pub fn projection_matrix(n: usize) -> Result<DMatrix<f64>> {
    if n < 2 {
        return Err(Error::param(format!("need N ≥ 2, got {n}")));
    }
    Ok(DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64))
}

/// Removes the mean of a vector in place: `x ← P x`.
#[inline]
pub fn project_tangent(x: &mut [f64]) {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= m);
}

/// Orthonormal basis of TΣ as the columns of an N×(N−1) matrix.
pub fn tangent_basis(n: usize) -> DMatrix<f64> {
    let mut q = DMatrix::zeros(n, n - 1);
    for k in 0..n - 1 {
        let mut v = nalgebra::DVector::zeros(n);
        v[k] = 1.0;
        v[n - 1] = -1.0;
        for j in 0..k {
            let col = q.column(j).clone_owned();
            v -= &col * col.dot(&v);
        }
        v /= v.norm();
        q.set_column(k, &v);
    }
    q
}

/// Symmetric N×N mobility matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mobility {
    m: DMatrix<f64>,
    pinv: DMatrix<f64>,
}

impl Mobility {
    pub fn new(n: usize, row_major: &[f64]) -> Result<Self> {
        if n < 2 || row_major.len() != n * n {
            return Err(Error::param(format!("mobility must be N×N with N ≥ 2, got {} entries for N = {n}", row_major.len())));
        }
        if row_major.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("mobility has non-finite entries"));
        }
        let m = DMatrix::from_row_slice(n, n, row_major);
        let j = DMatrix::from_element(n, n, 1.0 / n as f64);
        let pinv = (&m + &j).try_inverse().map(|inv| inv - j).unwrap_or_else(|| DMatrix::zeros(n, n));
        Ok(Self { m, pinv })
    }

    /// `[[1, −1], [−1, 1]]`
    pub fn binary() -> Self {
        Self::new(2, &[1.0, -1.0, -1.0, 1.0]).expect("valid literal")
    }

    pub fn n(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n()).map(|i| self.m.row(i).iter().copied().collect()).collect()
    }

    #[inline]
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n();
        for i in 0..n {
            out[i] = (0..n).map(|j| self.m[(i, j)] * x[j]).sum();
        }
    }

    /// Pseudo-inverse on TΣ: `(M + J)⁻¹ − J` with `J = 𝟙𝟙ᵀ/N`.
    #[inline]
    pub fn apply_pinv(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n();
        for i in 0..n {
            out[i] = (0..n).map(|j| self.pinv[(i, j)] * x[j]).sum();
        }
    }

    /// Eigenvalues of the restriction to TΣ, ascending.
    pub fn tangent_eigenvalues(&self) -> Vec<f64> {
        let q = tangent_basis(self.n());
        let sym = (&self.m + self.m.transpose()) * 0.5;
        let r = q.transpose() * sym * &q;
        let mut ev: Vec<f64> = SymmetricEigen::new(r).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn min_tangent_eigenvalue(&self) -> f64 {
        self.tangent_eigenvalues()[0]
    }
}

/// Outcome of [`validate_mobility`].
#[derive(Debug, Clone, PartialEq)]
pub struct MobilityReport {
    pub symmetry_defect: f64,
    pub max_row_sum: f64,
    pub min_tangent_eigenvalue: f64,
    pub violations: Vec<String>,
}

impl MobilityReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_mobility(m: &Mobility, tol: f64) -> MobilityReport {
    let a = m.matrix();
    let symmetry_defect = (a - a.transpose()).amax();
    let max_row_sum = (0..m.n()).map(|i| a.row(i).sum().abs()).fold(0.0, f64::max);
    let min_tangent_eigenvalue = m.min_tangent_eigenvalue();
    let mut violations = Vec::new();
    if symmetry_defect > tol {
        violations.push(format!("mobility not symmetric (defect {symmetry_defect:e})"));
    }
    if max_row_sum > tol {
        violations.push(format!("mobility row sums nonzero (max {max_row_sum:e})"));
    }
    if !(min_tangent_eigenvalue > tol) {
        violations.push(format!("mobility not positive definite on TΣ (min eigenvalue {min_tangent_eigenvalue:e})"));
    }
    MobilityReport { symmetry_defect, max_row_sum, min_tangent_eigenvalue, violations }
}

fn check_field(f: &ConcentrationField, grid: &Grid, m: &Mobility) -> Result<()> {
    f.check(grid, m.n())
}

fn check_zero_mean(f: &ConcentrationField, grid: &Grid) -> Result<()> {
    let means = grid.mean(f)?;
    let scale = 1.0 + f.max_abs();
    if let Some((k, v)) = means.iter().enumerate().find(|(_, v)| v.abs() > 1e-10 * scale) {
        return Err(Error::Constraint(format!("component {k} has mean {v:e}; Cahn-Hilliard data must have zero mean")));
    }
    Ok(())
}

/// Raw form of the Cahn-Hilliard operator: Σ_quadrants w·M∇f·∇(·).
fn s_raw(op: &QuadrantOperator, m: &Mobility, f: &[f64], n: usize, dim: usize, out: &mut [f64]) {
    let field = Field::from_vec(n, f.to_vec()).expect("cell-major data");
    let mut g = op.gradients(&field, None);
    let w = op.weight();
    let mut col = vec![0.0; n];
    let mut mc = vec![0.0; n];
    for chunk in g.chunks_exact_mut(n * dim) {
        for a in 0..dim {
            for k in 0..n {
                col[k] = chunk[k * dim + a];
            }
            m.apply(&col, &mut mc);
            for k in 0..n {
                chunk[k * dim + a] = w * mc[k];
            }
        }
    }
    out.copy_from_slice(op.scatter(&g, n).as_slice());
}

/// `S f`: pointwise `M f` (Allen-Cahn) or `−div(M∇f)` with zero flux
/// (Cahn-Hilliard).
pub fn apply_s(f: &ConcentrationField, mode: Diffusion, grid: &Grid, m: &Mobility) -> Result<ConcentrationField> {
    check_field(f, grid, m)?;
    let n = m.n();
    let mut out = Field::zeros(grid.n_cells(), n);
    match mode {
        Diffusion::AllenCahn => {
            for cell in 0..grid.n_cells() {
                m.apply(f.cell(cell), out.cell_mut(cell));
            }
        }
        Diffusion::CahnHilliard => {
            let op = QuadrantOperator::neumann(grid);
            s_raw(&op, m, f.as_slice(), n, grid.dim(), out.as_mut_slice());
            let inv = 1.0 / grid.cell_volume();
            out.as_mut_slice().iter_mut().for_each(|v| *v *= inv);
        }
    }
    Ok(out)
}

/// Smallest eigenvalue of the discrete Cahn-Hilliard S on the admissible space.
pub fn s_lower_bound(grid: &Grid, m: &Mobility) -> f64 {
    let lap = (0..grid.dim())
        .map(|a| {
            let h = grid.spacing(a);
            let s = (std::f64::consts::PI / (2.0 * grid.cells(a) as f64)).sin();
            4.0 * s * s / (h * h)
        })
        .fold(f64::INFINITY, f64::min);
    m.min_tangent_eigenvalue() * lap
}

/// Upper bound on the spectrum of S on admissible fields.
pub fn s_upper_bound(grid: &Grid, m: &Mobility) -> f64 {
    let lap: f64 = (0..grid.dim()).map(|a| 4.0 / (grid.spacing(a) * grid.spacing(a))).sum();
    m.tangent_eigenvalues().last().copied().unwrap_or(0.0) * lap
}

/// Projects cell-major data onto pointwise TΣ with zero component means.
pub(crate) fn project_admissible(x: &mut [f64], n: usize) {
    let cells = x.len() / n;
    for c in x.chunks_exact_mut(n) {
        project_tangent(c);
    }
    for k in 0..n {
        let mean = (0..cells).map(|i| x[i * n + k]).sum::<f64>() / cells as f64;
        for i in 0..cells {
            x[i * n + k] -= mean;
        }
    }
}

/// Reusable Cahn-Hilliard inverse on a fixed grid.
#[derive(Debug, Clone)]
pub struct SInverse {
    mode: Diffusion,
    op: QuadrantOperator,
    mobility: Mobility,
    dim: usize,
    cell_volume: f64,
    lambda_min: f64,
    /// Residual norm per unit ‖x‖ below which rounding dominates.
    floor: f64,
    pub tol: f64,
}

impl SInverse {
    pub fn new(mode: Diffusion, grid: &Grid, m: &Mobility, tol: f64) -> Self {
        Self {
            mode,
            op: QuadrantOperator::neumann(grid),
            mobility: m.clone(),
            dim: grid.dim(),
            cell_volume: grid.cell_volume(),
            lambda_min: s_lower_bound(grid, m),
            floor: 64.0 * f64::EPSILON * s_upper_bound(grid, m),
            tol,
        }
    }

    pub fn mode(&self) -> Diffusion {
        self.mode
    }

    /// Solves `S v = f` for cell-major data `f` on the admissible space.
    /// `guess` warm-starts the Cahn-Hilliard iteration.
    pub fn solve(&self, f: &[f64], guess: Option<&[f64]>) -> Result<Vec<f64>> {
        let n = self.mobility.n();
        match self.mode {
            Diffusion::AllenCahn => {
                let mut out = vec![0.0; f.len()];
                for (src, dst) in f.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
                    self.mobility.apply_pinv(src, dst);
                }
                Ok(out)
            }
            Diffusion::CahnHilliard => {
                let mut b: Vec<f64> = f.to_vec();
                project_admissible(&mut b, n);
                let mut x = match guess {
                    Some(g) => {
                        let mut g = g.to_vec();
                        project_admissible(&mut g, n);
                        g
                    }
                    None => vec![0.0; f.len()],
                };
                let (vol, dim, lmin, tol, floor) = (self.cell_volume, self.dim, self.lambda_min, self.tol, self.floor);
                let apply = |v: &[f64], out: &mut [f64]| {
                    s_raw(&self.op, &self.mobility, v, n, dim, out);
                    out.iter_mut().for_each(|o| *o /= vol);
                };
                let budget = 20 * f.len() + 200;
                let out = conjugate_gradient(
                    apply,
                    |v| project_admissible(v, n),
                    &b,
                    &mut x,
                    budget,
                    |res, x| res / lmin <= tol * norm_inf(x).max(1.0) || res <= floor * norm2(x),
                );
                if !out.converged {
                    return Err(Error::Solver(format!(
                        "S⁻¹ conjugate gradients stalled after {} iterations (residual {:e})",
                        out.iterations, out.residual
                    )));
                }
                Ok(x)
            }
        }
    }
}

/// `v = S⁻¹ f` with zero component means (Cahn-Hilliard) or `M⁺ f`
/// pointwise (Allen-Cahn).
pub fn solve_s_inverse(f: &ConcentrationField, mode: Diffusion, grid: &Grid, m: &Mobility, tol: f64) -> Result<ConcentrationField> {
    check_field(f, grid, m)?;
    if !(tol > 0.0) {
        return Err(Error::param(format!("tolerance must be positive, got {tol}")));
    }
    if mode == Diffusion::CahnHilliard {
        check_zero_mean(f, grid)?;
    }
    let v = SInverse::new(mode, grid, m, tol).solve(f.as_slice(), None)?;
    Field::from_vec(m.n(), v)
}

/// The step metric: CH `∫ M∇S⁻¹v₁·∇S⁻¹v₂`, AC `∫ M v₁·v₂`.
pub fn inner_x(v1: &ConcentrationField, v2: &ConcentrationField, mode: Diffusion, grid: &Grid, m: &Mobility) -> Result<f64> {
    check_field(v1, grid, m)?;
    check_field(v2, grid, m)?;
    match mode {
        Diffusion::AllenCahn => {
            let mv2 = apply_s(v2, mode, grid, m)?;
            Ok(grid.cell_volume() * dot(v1.as_slice(), mv2.as_slice()))
        }
        Diffusion::CahnHilliard => dissipation_metric(v1, v2, mode, grid, m, 1e-12),
    }
}

/// `∫ v₁·S⁻¹v₂`: the metric whose gradient flow has `w = −S⁻¹ċ`. Equals
/// [`inner_x`] for Cahn-Hilliard; for Allen-Cahn it uses `M⁺` in place of `M`.
pub fn dissipation_metric(
    v1: &ConcentrationField,
    v2: &ConcentrationField,
    mode: Diffusion,
    grid: &Grid,
    m: &Mobility,
    tol: f64,
) -> Result<f64> {
    check_field(v1, grid, m)?;
    let s = solve_s_inverse(v2, mode, grid, m, tol)?;
    Ok(grid.cell_volume() * dot(v1.as_slice(), s.as_slice()))
}

/// Mean over Ω of `W^ch_{,c} + W^el_{,c}`; Cahn-Hilliard only.
pub fn lagrange_multiplier(
    model: &Model,
    mode: Diffusion,
    u: &VectorField,
    bnd: &BoundaryValues,
    c: &ConcentrationField,
    z: &ScalarField,
) -> Result<Vec<f64>> {
    if mode != Diffusion::CahnHilliard {
        return Err(Error::Mode("the Lagrange multiplier exists only for Cahn-Hilliard diffusion".into()));
    }
    model.check_state(u, bnd, c, z)?;
    model.grid().mean(&model.local_c_derivative(u, bnd, c, z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{chem_poly_grad, MaterialParams};
    use crate::grid::Face;
    use std::f64::consts::PI;

    fn line(n: usize) -> Grid {
        Grid::new(1, &[n], &[1.0], &[Face::Left, Face::Right]).unwrap()
    }

    fn cos_mode(g: &Grid, scale: f64) -> Field {
        Field::from_fn(g, 2, |x| {
            let v = scale * (PI * x[0]).cos();
            vec![v, -v]
        })
    }

    #[test]
    fn projection_examples() {
        let p = projection_matrix(2).unwrap();
        assert_eq!(p, DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]));
        for n in 2..=6 {
            let p = projection_matrix(n).unwrap();
            assert!((&p * &p - &p).amax() < 1e-15);
            assert!((&p - p.transpose()).amax() == 0.0);
            assert!((&p * nalgebra::DVector::from_element(n, 1.0)).amax() < 1e-15);
        }
        let p3 = projection_matrix(3).unwrap();
        let x = nalgebra::DVector::from_vec(vec![0.3, -0.1, -0.2]);
        assert!((&p3 * &x - &x).amax() < 1e-15);
        assert!(projection_matrix(1).is_err());
    }

    #[test]
    fn mobility_reports() {
        assert!(validate_mobility(&Mobility::binary(), 1e-12).passed());
        assert!((Mobility::binary().min_tangent_eigenvalue() - 2.0).abs() < 1e-14);
        assert!(!validate_mobility(&Mobility::new(2, &[1.0, 0.0, 0.0, 1.0]).unwrap(), 1e-12).passed());
        assert!(!validate_mobility(&Mobility::new(2, &[0.0; 4]).unwrap(), 1e-12).passed());
    }

    #[test]
    fn allen_cahn_examples() {
        let g = line(4);
        let m = Mobility::binary();
        let f = Field::constant(4, &[0.5, -0.5]);
        let s = apply_s(&f, Diffusion::AllenCahn, &g, &m).unwrap();
        assert!(s.cells().all(|c| c == [1.0, -1.0]));
        let v = solve_s_inverse(&Field::constant(4, &[1.0, -1.0]), Diffusion::AllenCahn, &g, &m, 1e-12).unwrap();
        assert!(v.cells().all(|c| (c[0] - 0.5).abs() < 1e-15 && (c[1] + 0.5).abs() < 1e-15));
        assert!((inner_x(&f, &f, Diffusion::AllenCahn, &g, &m).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(inner_x(&f, &Field::zeros(4, 2), Diffusion::AllenCahn, &g, &m).unwrap(), 0.0);
    }

    #[test]
    fn cahn_hilliard_constant_and_zero() {
        let g = line(8);
        let m = Mobility::binary();
        let s = apply_s(&Field::constant(8, &[0.3, -0.3]), Diffusion::CahnHilliard, &g, &m).unwrap();
        assert!(s.max_abs() < 1e-14);
        let v = solve_s_inverse(&Field::zeros(8, 2), Diffusion::CahnHilliard, &g, &m, 1e-10).unwrap();
        assert_eq!(v.max_abs(), 0.0);
        assert!(solve_s_inverse(&Field::constant(8, &[0.1, -0.1]), Diffusion::CahnHilliard, &g, &m, 1e-10).is_err());
    }

    #[test]
    fn cosine_is_discrete_eigenvector() {
        for n in [8, 16, 32] {
            let g = line(n);
            let h = 1.0 / n as f64;
            let m = Mobility::binary();
            let f = cos_mode(&g, 1.0);
            let s = apply_s(&f, Diffusion::CahnHilliard, &g, &m).unwrap();
            let lam = 2.0 * 4.0 / (h * h) * (PI * h / 2.0).sin().powi(2);
            assert!(s.max_abs_diff(&f.scaled(lam)) < 1e-10 * lam);
            let cont = f.scaled(2.0 * PI * PI);
            assert!(s.max_abs_diff(&cont) < 2.0 * PI.powi(4) * h * h / 12.0 * 1.01);
        }
    }

    #[test]
    fn cosine_inverse_and_metric() {
        let g = line(32);
        let m = Mobility::binary();
        let f = cos_mode(&g, 1.0);
        let v = solve_s_inverse(&f, Diffusion::CahnHilliard, &g, &m, 1e-12).unwrap();
        let exact = cos_mode(&g, 1.0 / (2.0 * PI * PI));
        assert!(v.max_abs_diff(&exact) < 2e-4);
        // ∫ v·S⁻¹v = ∫ 2cos²(πx)/(2π²) dx = 1/(2π²)
        let ip = inner_x(&f, &f, Diffusion::CahnHilliard, &g, &m).unwrap();
        assert!((ip - 1.0 / (2.0 * PI * PI)).abs() < 1e-4, "{ip}");
    }

    #[test]
    fn lagrange_multiplier_at_half() {
        let g = line(8);
        let p = MaterialParams::binary(1);
        let model = Model::new(g.clone(), p).unwrap();
        let c = Field::constant(8, &[0.5, 0.5]);
        let (u, z, b) = (Field::zeros(8, 1), Field::constant(8, &[1.0]), BoundaryValues::zeros(&g, 1));
        let lam = lagrange_multiplier(&model, Diffusion::CahnHilliard, &u, &b, &c, &z).unwrap();
        let mut expect = [0.0; 2];
        chem_poly_grad(&[0.5, 0.5], 1.0, &mut expect);
        assert_eq!(lam, expect.to_vec());
        assert!(lagrange_multiplier(&model, Diffusion::AllenCahn, &u, &b, &c, &z).is_err());
    }
}
