//! Stored energy, its derivatives and the damage dissipation.
//!
//! Every integral uses midpoint quadrature. Gradient terms are evaluated per
//! cell quadrant with one-sided differences (see [`QuadrantOperator`]), so
//! the discrete elastic and interfacial forms have no spurious null modes.
//! Derivatives returned by [`Model`] are *raw*: partial derivatives of the
//! discrete energy with respect to the cell values, i.e. cell volume times
//! the variational derivative.

mod density;
mod params;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

pub use density::{
    chem_log_delta, chem_log_delta_grad, chem_poly, chem_poly_grad, contract, elastic_d_c, elastic_d_e,
    elastic_d_z, elastic_density, phi_delta, phi_delta_prime, ElasticPoint, RegularizedLog,
};
pub use params::{ChemicalEnergy, Degradation, GradientTensor, MaterialParams, Phase, Stiffness};

use crate::error::{Error, Result};
use crate::grid::{sym_part, BoundaryValues, ConcentrationField, Field, Grid, QuadrantOperator, ScalarField, VectorField};

/// Per-term breakdown of the regularized stored energy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub gradient_c: f64,
    pub gradient_z: f64,
    pub chemical: f64,
    pub elastic: f64,
    pub reg_u: f64,
    pub reg_z: f64,
    pub total: f64,
}

impl EnergyLedger {
    fn finish(mut self) -> Self {
        self.total = self.gradient_c + self.gradient_z + self.chemical + self.elastic + self.reg_u + self.reg_z;
        self
    }

    /// Terms that depend on the displacement.
    pub fn u_part(&self) -> f64 {
        self.elastic + self.reg_u
    }
}

/// Grid, coefficients and the two quadrant operators bundled for repeated
/// evaluation.
#[derive(Debug, Clone)]
pub struct Model {
    grid: Grid,
    params: MaterialParams,
    u_op: QuadrantOperator,
    n_op: QuadrantOperator,
}

/// Which derivatives an elastic sweep should accumulate.
#[derive(Clone, Copy, Default)]
struct Want {
    du: bool,
    dc: bool,
    dz: bool,
}

struct ElasticSweep {
    energy: f64,
    reg_u: f64,
    du: Vec<f64>,
    dc: Vec<f64>,
    dz: Vec<f64>,
}

impl Model {
    pub fn new(grid: Grid, params: MaterialParams) -> Result<Self> {
        if grid.dim() != params.dim {
            return Err(Error::param(format!(
                "material parameters are {}-dimensional, grid is {}-dimensional",
                params.dim,
                grid.dim()
            )));
        }
        params.validate()?;
        let u_op = QuadrantOperator::displacement(&grid);
        let n_op = QuadrantOperator::neumann(&grid);
        Ok(Self { grid, params, u_op, n_op })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn params(&self) -> &MaterialParams {
        &self.params
    }

    pub fn n_phases(&self) -> usize {
        self.params.n_phases()
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn displacement_operator(&self) -> &QuadrantOperator {
        &self.u_op
    }

    pub fn neumann_operator(&self) -> &QuadrantOperator {
        &self.n_op
    }

    /// Checks shapes of a (u, c, z) triple and the damage box.
    pub fn check_state(&self, u: &VectorField, bnd: &BoundaryValues, c: &ConcentrationField, z: &ScalarField) -> Result<()> {
        u.check(&self.grid, self.dim())?;
        c.check(&self.grid, self.n_phases())?;
        z.check(&self.grid, 1)?;
        bnd.validate(&self.grid, self.dim())?;
        if let Some(v) = z.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Constraint(format!("damage {v} outside [0, 1]")));
        }
        Ok(())
    }

    /// Quadrant strains (tensor components) of `u`.
    pub fn quadrant_strains(&self, u: &VectorField, bnd: &BoundaryValues) -> Vec<[f64; 3]> {
        let dim = self.dim();
        self.u_op.gradients(u, Some(bnd)).chunks_exact(dim * dim).map(|g| sym_part(g, dim)).collect()
    }

    fn elastic_sweep(&self, u: &VectorField, bnd: &BoundaryValues, c: &ConcentrationField, z: &ScalarField, want: Want) -> ElasticSweep {
        let dim = self.dim();
        let n = self.n_phases();
        let q = self.u_op.quadrants();
        let wq = self.u_op.weight();
        let eps = self.params.epsilon;
        let grads = self.u_op.gradients(u, Some(bnd));
        let nc = self.grid.n_cells();
        let mut out = ElasticSweep {
            energy: 0.0,
            reg_u: 0.0,
            du: if want.du { vec![0.0; grads.len()] } else { Vec::new() },
            dc: if want.dc { vec![0.0; nc * n] } else { Vec::new() },
            dz: if want.dz { vec![0.0; nc] } else { Vec::new() },
        };
        let mut dck = vec![0.0; n];
        for cell in 0..nc {
            let cc = c.cell(cell);
            let zc = z.as_slice()[cell];
            for quad in 0..q {
                let base = (cell * q + quad) * dim * dim;
                let g = &grads[base..base + dim * dim];
                let e = sym_part(g, dim);
                let pt = self.params.elastic_point(&e, cc, zc, if want.dc { Some(&mut dck) } else { None });
                out.energy += wq * pt.density;
                let g2: f64 = g.iter().map(|x| x * x).sum();
                if eps > 0.0 {
                    out.reg_u += wq * 0.25 * eps * g2 * g2;
                }
                if want.du {
                    let s = pt.stress;
                    let dg = &mut out.du[base..base + dim * dim];
                    if dim == 1 {
                        dg[0] = wq * s[0];
                    } else {
                        dg[0] = wq * s[0];
                        dg[1] = wq * s[2];
                        dg[2] = wq * s[2];
                        dg[3] = wq * s[1];
                    }
                    if eps > 0.0 {
                        for (d, gi) in dg.iter_mut().zip(g) {
                            *d += wq * eps * g2 * gi;
                        }
                    }
                }
                if want.dc {
                    for k in 0..n {
                        out.dc[cell * n + k] += wq * dck[k];
                    }
                }
                if want.dz {
                    out.dz[cell] += wq * pt.d_z;
                }
            }
        }
        out
    }

    /// Γ applied to one quadrant's concentration gradient.
    #[inline]
    fn gamma_apply(&self, g: &[f64], out: &mut [f64]) {
        match &self.params.gradient {
            GradientTensor::Isotropic(gamma) => {
                for (o, x) in out.iter_mut().zip(g) {
                    *o = gamma * x;
                }
            }
            GradientTensor::Full(m) => {
                let k = g.len();
                for i in 0..k {
                    out[i] = (0..k).map(|j| m[i * k + j] * g[j]).sum();
                }
            }
        }
    }

    fn interfacial(&self, c: &ConcentrationField, dc: Option<&mut Field>) -> f64 {
        let grads = self.n_op.gradients(c, None);
        let stride = self.n_phases() * self.dim();
        let wq = self.n_op.weight();
        let mut flux = vec![0.0; grads.len()];
        let mut e = 0.0;
        for (g, f) in grads.chunks_exact(stride).zip(flux.chunks_exact_mut(stride)) {
            self.gamma_apply(g, f);
            e += 0.5 * wq * g.iter().zip(f.iter()).map(|(a, b)| a * b).sum::<f64>();
        }
        if let Some(dc) = dc {
            flux.iter_mut().for_each(|f| *f *= wq);
            dc.axpy(1.0, &self.n_op.scatter(&flux, self.n_phases()));
        }
        e
    }

    /// ½∫|∇z|² + ε/p∫|∇z|^p, optionally accumulating the raw derivative.
    fn damage_gradient(&self, z: &ScalarField, dz: Option<&mut Field>) -> (f64, f64) {
        let dim = self.dim();
        let grads = self.n_op.gradients(z, None);
        let wq = self.n_op.weight();
        let eps = self.params.epsilon;
        let p = self.params.p;
        let mut quad = 0.0;
        let mut reg = 0.0;
        let mut flux = vec![0.0; grads.len()];
        for (g, f) in grads.chunks_exact(dim).zip(flux.chunks_exact_mut(dim)) {
            let g2: f64 = g.iter().map(|x| x * x).sum();
            quad += 0.5 * wq * g2;
            let mut scale = wq;
            if eps > 0.0 && g2 > 0.0 {
                let norm = g2.sqrt();
                reg += wq * eps / p * norm.powf(p);
                scale += wq * eps * norm.powf(p - 2.0);
            }
            for (fi, gi) in f.iter_mut().zip(g) {
                *fi = scale * gi;
            }
        }
        if let Some(dz) = dz {
            dz.axpy(1.0, &self.n_op.scatter(&flux, 1));
        }
        (quad, reg)
    }

    /// Energy breakdown; errors on shape mismatch or damage outside [0, 1].
    pub fn ledger(&self, u: &VectorField, bnd: &BoundaryValues, c: &ConcentrationField, z: &ScalarField) -> Result<EnergyLedger> {
        self.check_state(u, bnd, c, z)?;
        Ok(self.ledger_unchecked(u, bnd, c, z))
    }

    pub(crate) fn ledger_unchecked(&self, u: &VectorField, bnd: &BoundaryValues, c: &ConcentrationField, z: &ScalarField) -> EnergyLedger {
        let el = self.elastic_sweep(u, bnd, c, z, Want::default());
        let (gradient_z, reg_z) = self.damage_gradient(z, None);
        EnergyLedger {
            gradient_c: self.interfacial(c, None),
            gradient_z,
            chemical: self.chemical_energy(c),
            elastic: el.energy,
            reg_u: el.reg_u,
            reg_z,
            total: 0.0,
        }
        .finish()
    }

    pub fn chemical_energy(&self, c: &ConcentrationField) -> f64 {
        let vol = self.grid.cell_volume();
        c.cells().map(|cc| vol * self.params.chemical.density(cc)).sum()
    }

    /// Elastic plus ε|∇u|⁴ energy: the displacement-dependent part.
    pub fn u_energy(&self, u: &VectorField, bnd: &BoundaryValues, c: &ConcentrationField, z: &ScalarField) -> f64 {
        let el = self.elastic_sweep(u, bnd, c, z, Want::default());
        el.energy + el.reg_u
    }

    /// Interfacial, chemical and elastic energy: the concentration-dependent part.
    pub fn c_energy(&self, u: &VectorField, bnd: &BoundaryValues, c: &ConcentrationField, z: &ScalarField) -> f64 {
        self.interfacial(c, None) + self.chemical_energy(c) + self.elastic_sweep(u, bnd, c, z, Want::default()).energy
    }

    /// Damage gradient terms plus elastic energy: the damage-dependent part.
    pub fn z_energy(&self, u: &VectorField, bnd: &BoundaryValues, c: &ConcentrationField, z: &ScalarField) -> f64 {
        let (a, b) = self.damage_gradient(z, None);
        a + b + self.elastic_sweep(u, bnd, c, z, Want::default()).energy
    }

    /// Raw derivative of the energy with respect to the displacement cell values.
    pub fn grad_u(&self, u: &VectorField, bnd: &BoundaryValues, c: &ConcentrationField, z: &ScalarField) -> VectorField {
        let el = self.elastic_sweep(u, bnd, c, z, Want { du: true, ..Want::default() });
        self.u_op.scatter(&el.du, self.dim())
    }

    /// Raw derivative with respect to the concentration cell values.
    pub fn grad_c(&self, u: &VectorField, bnd: &BoundaryValues, c: &ConcentrationField, z: &ScalarField) -> ConcentrationField {
        let mut g = self.local_c_derivative(u, bnd, c, z);
        let vol = self.grid.cell_volume();
        g.as_mut_slice().iter_mut().for_each(|x| *x *= vol);
        self.interfacial(c, Some(&mut g));
        g
    }

    /// Pointwise W^ch_{,c} + W^el_{,c} as a density (quadrant average of the
    /// elastic part).
    pub fn local_c_derivative(&self, u: &VectorField, bnd: &BoundaryValues, c: &ConcentrationField, z: &ScalarField) -> ConcentrationField {
        let n = self.n_phases();
        let el = self.elastic_sweep(u, bnd, c, z, Want { dc: true, ..Want::default() });
        let inv_vol = 1.0 / self.grid.cell_volume();
        let mut out = Field::zeros(self.grid.n_cells(), n);
        let mut tmp = vec![0.0; n];
        for cell in 0..self.grid.n_cells() {
            self.params.chemical.gradient(c.cell(cell), &mut tmp);
            for (k, o) in out.cell_mut(cell).iter_mut().enumerate() {
                *o = tmp[k] + inv_vol * el.dc[cell * n + k];
            }
        }
        out
    }

    /// Raw derivative with respect to the damage cell values.
    pub fn grad_z(&self, u: &VectorField, bnd: &BoundaryValues, c: &ConcentrationField, z: &ScalarField) -> ScalarField {
        let el = self.elastic_sweep(u, bnd, c, z, Want { dz: true, ..Want::default() });
        let mut g = Field::from_vec(1, el.dz).expect("one value per cell");
        self.damage_gradient(z, Some(&mut g));
        g
    }

    /// Cellwise W^el_{,z} as a density (quadrant average).
    pub fn elastic_damage_force(&self, u: &VectorField, bnd: &BoundaryValues, c: &ConcentrationField, z: &ScalarField) -> ScalarField {
        let el = self.elastic_sweep(u, bnd, c, z, Want { dz: true, ..Want::default() });
        let inv_vol = 1.0 / self.grid.cell_volume();
        Field::from_vec(1, el.dz.into_iter().map(|v| v * inv_vol).collect()).expect("one value per cell")
    }

    /// Cellwise elastic energy density (quadrant average).
    pub fn elastic_density_field(&self, u: &VectorField, bnd: &BoundaryValues, c: &ConcentrationField, z: &ScalarField) -> ScalarField {
        let dim = self.dim();
        let q = self.u_op.quadrants();
        let grads = self.u_op.gradients(u, Some(bnd));
        let data = (0..self.grid.n_cells())
            .map(|cell| {
                (0..q)
                    .map(|quad| {
                        let base = (cell * q + quad) * dim * dim;
                        let e = sym_part(&grads[base..base + dim * dim], dim);
                        self.params.elastic_point(&e, c.cell(cell), z.as_slice()[cell], None).density
                    })
                    .sum::<f64>()
                    / q as f64
            })
            .collect();
        Field::from_vec(1, data).expect("one value per cell")
    }

    /// ∫ −αż + (β/2)ż² without the sign check.
    pub fn dissipation(&self, z_rate: &ScalarField) -> f64 {
        let (a, b) = (self.params.alpha, self.params.beta);
        self.grid.cell_volume() * z_rate.as_slice().iter().map(|r| -a * r + 0.5 * b * r * r).sum::<f64>()
    }

    /// Lower bound C with ∫W^ch ≥ −C|Ω| on simplex-valued fields.
    pub fn chemical_lower_bound(&self) -> f64 {
        chemical_lower_bound(&self.params)
    }
}

/// Constant C such that W^ch(c) ≥ −C for every c in the closed simplex,
/// uniformly in the log regularization.
pub fn chemical_lower_bound(params: &MaterialParams) -> f64 {
    match &params.chemical {
        ChemicalEnergy::Polynomial { .. } => 0.0,
        ChemicalEnergy::Logarithmic { theta, a, .. } => {
            let n = params.n_phases();
            let lmin = SymmetricEigen::new(DMatrix::from_row_slice(n, n, a)).eigenvalues.min();
            theta * n as f64 / std::f64::consts::E + 0.5 * (-lmin).max(0.0)
        }
    }
}

/// Energy breakdown of (u, c, z) with displacement boundary data `bnd`.
pub fn total_energy(
    u: &VectorField,
    bnd: &BoundaryValues,
    c: &ConcentrationField,
    z: &ScalarField,
    params: &MaterialParams,
    grid: &Grid,
) -> Result<EnergyLedger> {
    Model::new(grid.clone(), params.clone())?.ledger(u, bnd, c, z)
}

/// ∫ −αż + (β/2)ż²; errors where the rate is positive.
pub fn dissipation_r(z_rate: &ScalarField, params: &MaterialParams, grid: &Grid) -> Result<f64> {
    z_rate.check(grid, 1)?;
    if let Some(r) = z_rate.as_slice().iter().find(|r| !(**r <= 0.0)) {
        return Err(Error::Constraint(format!("damage rate {r} is positive")));
    }
    let (a, b) = (params.alpha, params.beta);
    Ok(grid.cell_volume() * z_rate.as_slice().iter().map(|r| -a * r + 0.5 * b * r * r).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Face;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid1(n: usize) -> Grid {
        Grid::new(1, &[n], &[1.0], &[Face::Left, Face::Right]).unwrap()
    }

    #[test]
    fn constant_half_state() {
        let g = grid1(8);
        let p = MaterialParams::binary(1);
        let u = Field::zeros(8, 1);
        let c = Field::constant(8, &[0.5, 0.5]);
        let z = Field::constant(8, &[1.0]);
        let b = BoundaryValues::zeros(&g, 1);
        let l = total_energy(&u, &b, &c, &z, &p, &g).unwrap();
        assert!((l.total - 0.125).abs() < 1e-15);
        assert!((l.chemical - 0.125).abs() < 1e-15);
    }

    #[test]
    fn well_at_eigenstrain_is_zero() {
        let g = Grid::new(2, &[4, 4], &[1.0, 1.0], &[Face::Left]).unwrap();
        let mut p = MaterialParams::binary(2);
        p.phases[0].eigenstrain = vec![0.1, 0.1, 0.0];
        let c = Field::constant(16, &[1.0, 0.0]);
        let z = Field::constant(16, &[1.0]);
        let u = Field::from_fn(&g, 2, |x| vec![0.1 * x[0], 0.1 * x[1]]);
        let b = BoundaryValues::from_fn(&g, 2, |_, x| vec![0.1 * x[0], 0.1 * x[1]]);
        let l = total_energy(&u, &b, &c, &z, &p, &g).unwrap();
        assert!(l.total.abs() < 1e-28, "{l:?}");
    }

    #[test]
    fn damage_out_of_range_rejected() {
        let g = grid1(4);
        let p = MaterialParams::binary(1);
        let z = Field::constant(4, &[1.2]);
        let r = total_energy(&Field::zeros(4, 1), &BoundaryValues::zeros(&g, 1), &Field::constant(4, &[0.5, 0.5]), &z, &p, &g);
        assert!(matches!(r, Err(Error::Constraint(_))));
    }

    #[test]
    fn dissipation_values() {
        let g = grid1(4);
        let p = MaterialParams::binary(1);
        assert_eq!(dissipation_r(&Field::zeros(4, 1), &p, &g).unwrap(), 0.0);
        assert!((dissipation_r(&Field::constant(4, &[-1.0]), &p, &g).unwrap() - 1.5).abs() < 1e-15);
        assert!(dissipation_r(&Field::constant(4, &[0.1]), &p, &g).is_err());
    }

    /// Straight-line evaluation of the 1D discrete energy on 4 cells.
    fn dense_energy_1d(u: &[f64], bl: f64, br: f64, c: &[[f64; 2]], z: &[f64], p: &MaterialParams) -> f64 {
        let n = u.len();
        let h = 1.0 / n as f64;
        let w = h / 2.0;
        let gamma = 0.01;
        let stiff = [p.phases[0].stiffness.mandel()[0], p.phases[1].stiffness.mandel()[0]];
        let es = [p.phases[0].eigenstrain[0], p.phases[1].eigenstrain[0]];
        let mut e = 0.0;
        for i in 0..n {
            let du_l = if i == 0 { 2.0 * (u[0] - bl) / h } else { (u[i] - u[i - 1]) / h };
            let du_r = if i == n - 1 { 2.0 * (br - u[i]) / h } else { (u[i + 1] - u[i]) / h };
            let cm = stiff[0] * c[i][0] + stiff[1] * c[i][1];
            let em = es[0] * c[i][0] + es[1] * c[i][1];
            let f = z[i] * z[i] + p.eta;
            for du in [du_l, du_r] {
                e += w * f * 0.5 * cm * (du - em) * (du - em);
                e += w * 0.25 * p.epsilon * du.powi(4);
            }
            for k in 0..2 {
                e += h * c[i][k] * c[i][k] * (1.0 - c[i][k]) * (1.0 - c[i][k]);
            }
            if i + 1 < n {
                let dz = (z[i + 1] - z[i]) / h;
                let dc0 = (c[i + 1][0] - c[i][0]) / h;
                let dc1 = (c[i + 1][1] - c[i][1]) / h;
                // each interior face is seen by the two adjacent half cells
                e += 2.0 * w * (0.5 * dz * dz + p.epsilon / p.p * dz.abs().powf(p.p));
                e += 2.0 * w * 0.5 * gamma * (dc0 * dc0 + dc1 * dc1);
            }
        }
        e
    }

    #[test]
    fn matches_dense_evaluation() {
        let g = grid1(4);
        let mut p = MaterialParams::binary(1);
        p.epsilon = 0.1;
        p.phases[0].eigenstrain = vec![0.05];
        p.phases[1].eigenstrain = vec![-0.03];
        p.phases[1].stiffness = Stiffness::isotropic(1, 2.0, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let u: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.1..0.1)).collect();
            let c: Vec<[f64; 2]> = (0..4).map(|_| rng.gen_range(0.0..1.0)).map(|a| [a, 1.0 - a]).collect();
            let z: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..1.0)).collect();
            let (bl, br) = (0.02, -0.05);
            let b = BoundaryValues::from_fn(&g, 1, |f, _| vec![if f == Face::Left { bl } else { br }]);
            let l = total_energy(
                &Field::from_vec(1, u.clone()).unwrap(),
                &b,
                &Field::from_vec(2, c.iter().flatten().copied().collect()).unwrap(),
                &Field::from_vec(1, z.clone()).unwrap(),
                &p,
                &g,
            )
            .unwrap();
            let d = dense_energy_1d(&u, bl, br, &c, &z, &p);
            assert!((l.total - d).abs() < 1e-13 * (1.0 + d.abs()), "{} vs {d}", l.total);
        }
    }

    fn fd_check(model: &Model, u: &Field, b: &BoundaryValues, c: &Field, z: &Field) {
        let h = 1e-5;
        let total = |u: &Field, c: &Field, z: &Field| model.ledger_unchecked(u, b, c, z).total;
        let check = |an: &Field, which: usize| {
            let base = [u, c, z][which];
            for i in 0..base.as_slice().len() {
                let mut p = base.clone();
                let mut m = base.clone();
                p.as_mut_slice()[i] += h;
                m.as_mut_slice()[i] -= h;
                let (ep, em) = match which {
                    0 => (total(&p, c, z), total(&m, c, z)),
                    1 => (total(u, &p, z), total(u, &m, z)),
                    _ => (total(u, c, &p), total(u, c, &m)),
                };
                let fd = (ep - em) / (2.0 * h);
                let a = an.as_slice()[i];
                assert!((fd - a).abs() <= 1e-6 * a.abs().max(1e-3), "block {which} entry {i}: {a} vs {fd}");
            }
        };
        check(&model.grad_u(u, b, c, z), 0);
        check(&model.grad_c(u, b, c, z), 1);
        check(&model.grad_z(u, b, c, z), 2);
    }

    #[test]
    fn raw_gradients_match_finite_differences_2d() {
        let g = Grid::new(2, &[3, 4], &[1.0, 1.5], &[Face::Left, Face::Top]).unwrap();
        let mut p = MaterialParams::binary(2);
        p.epsilon = 0.2;
        p.phases[0].eigenstrain = vec![0.05, -0.02, 0.01];
        p.phases[1].stiffness = Stiffness::isotropic(2, 2.0, 0.7);
        let model = Model::new(g.clone(), p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = g.n_cells();
        let u = Field::from_vec(2, (0..2 * n).map(|_| rng.gen_range(-0.1..0.1)).collect()).unwrap();
        let c = Field::from_vec(2, (0..n).flat_map(|_| { let a: f64 = rng.gen_range(0.0..1.0); [a, 1.0 - a] }).collect()).unwrap();
        let z = Field::from_vec(1, (0..n).map(|_| rng.gen_range(0.2..0.9)).collect()).unwrap();
        let b = BoundaryValues::from_fn(&g, 2, |_, x| vec![0.01 * x[1], -0.02 * x[0]]);
        fd_check(&model, &u, &b, &c, &z);
    }

    #[test]
    fn log_chemical_gradients_match_finite_differences() {
        let g = grid1(6);
        let mut p = MaterialParams::binary(1);
        p.chemical = ChemicalEnergy::Logarithmic { theta: 0.3, a: vec![0.0, 1.0, 1.0, 0.0], delta: RegularizedLog::new(0.05).unwrap() };
        let model = Model::new(g.clone(), p).unwrap();
        let c = Field::from_vec(2, [0.02, 0.98, 0.3, 0.7, 0.6, 0.4, 0.04, 0.96, 0.5, 0.5, 0.9, 0.1].to_vec()).unwrap();
        let z = Field::constant(6, &[0.7]);
        fd_check(&model, &Field::zeros(6, 1), &BoundaryValues::zeros(&g, 1), &c, &z);
    }

    #[test]
    fn lower_bound_constant() {
        let mut p = MaterialParams::binary(1);
        assert_eq!(chemical_lower_bound(&p), 0.0);
        p.chemical = ChemicalEnergy::Logarithmic { theta: 1.0, a: vec![-2.0, 0.0, 0.0, -2.0], delta: RegularizedLog::new(0.1).unwrap() };
        assert!((chemical_lower_bound(&p) - (2.0 / std::f64::consts::E + 1.0)).abs() < 1e-14);
    }
}
