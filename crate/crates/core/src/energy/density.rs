//! Pointwise energy densities and their derivatives.

use crate::error::{Error, Result};

use super::params::{ChemicalEnergy, MaterialParams};

/// Quadratic continuation of `x log x` below δ:
///
/// φ^δ(x) = x log x                       for x ≥ δ,
/// φ^δ(x) = x log δ − δ/2 + x²/(2δ)       for x < δ.
///
/// The two branches agree to second order at x = δ, so φ^δ is C² and convex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizedLog {
    delta: f64,
    log_delta: f64,
}

impl RegularizedLog {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::param(format!("delta must be positive, got {delta}")));
        }
        Ok(Self { delta, log_delta: delta.ln() })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        if x >= self.delta {
            x * x.ln()
        } else {
            x * self.log_delta - 0.5 * self.delta + x * x / (2.0 * self.delta)
        }
    }

    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        if x >= self.delta {
            x.ln() + 1.0
        } else {
            self.log_delta + x / self.delta
        }
    }

    #[inline]
    pub fn second_derivative(&self, x: f64) -> f64 {
        1.0 / x.max(self.delta)
    }
}

pub fn phi_delta(x: f64, delta: f64) -> Result<f64> {
    Ok(RegularizedLog::new(delta)?.value(x))
}

pub fn phi_delta_prime(x: f64, delta: f64) -> Result<f64> {
    Ok(RegularizedLog::new(delta)?.derivative(x))
}

/// `scale · Σ c_k²(1 − c_k)²`
pub fn chem_poly(c: &[f64], scale: f64) -> f64 {
    scale * c.iter().map(|&x| x * x * (1.0 - x) * (1.0 - x)).sum::<f64>()
}

pub fn chem_poly_grad(c: &[f64], scale: f64, out: &mut [f64]) {
    for (o, &x) in out.iter_mut().zip(c) {
        *o = scale * 2.0 * x * (1.0 - x) * (1.0 - 2.0 * x);
    }
}

/// `θ Σ φ^δ(c_k) + ½ c·Ac`
pub fn chem_log_delta(c: &[f64], theta: f64, a: &[f64], reg: &RegularizedLog) -> f64 {
    let n = c.len();
    let mut s = 0.0;
    for k in 0..n {
        s += theta * reg.value(c[k]);
        for l in 0..n {
            s += 0.5 * c[k] * a[k * n + l] * c[l];
        }
    }
    s
}

pub fn chem_log_delta_grad(c: &[f64], theta: f64, a: &[f64], reg: &RegularizedLog, out: &mut [f64]) {
    let n = c.len();
    for k in 0..n {
        let mut ac = 0.0;
        for l in 0..n {
            ac += a[k * n + l] * c[l];
        }
        out[k] = theta * reg.derivative(c[k]) + ac;
    }
}

impl ChemicalEnergy {
    #[inline]
    pub fn density(&self, c: &[f64]) -> f64 {
        match self {
            ChemicalEnergy::Polynomial { scale } => chem_poly(c, *scale),
            ChemicalEnergy::Logarithmic { theta, a, delta } => chem_log_delta(c, *theta, a, delta),
        }
    }

    #[inline]
    pub fn gradient(&self, c: &[f64], out: &mut [f64]) {
        match self {
            ChemicalEnergy::Polynomial { scale } => chem_poly_grad(c, *scale, out),
            ChemicalEnergy::Logarithmic { theta, a, delta } => chem_log_delta_grad(c, *theta, a, delta, out),
        }
    }
}

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Tensor components to Mandel vector.
#[inline]
pub(crate) fn to_mandel(e: &[f64], dim: usize) -> [f64; 3] {
    if dim == 1 {
        [e[0], 0.0, 0.0]
    } else {
        [e[0], e[1], SQRT2 * e[2]]
    }
}

#[inline]
fn from_mandel(s: &[f64; 3], dim: usize) -> [f64; 3] {
    if dim == 1 {
        [s[0], 0.0, 0.0]
    } else {
        [s[0], s[1], s[2] / SQRT2]
    }
}

#[inline]
fn mat_vec(a: &[f64], x: &[f64; 3], m: usize) -> [f64; 3] {
    let mut y = [0.0; 3];
    for i in 0..m {
        for j in 0..m {
            y[i] += a[i * m + j] * x[j];
        }
    }
    y
}

#[inline]
fn dot_m(a: &[f64; 3], b: &[f64; 3], m: usize) -> f64 {
    (0..m).map(|i| a[i] * b[i]).sum()
}

/// Elastic density and derivatives at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElasticPoint {
    /// W^el = (Φ(z) + η̃) Ŵ
    pub density: f64,
    /// Ŵ = ½(e − e*(c)) : C(c)(e − e*(c))
    pub base: f64,
    /// W^el_{,e}, tensor components.
    pub stress: [f64; 3],
    /// W^el_{,z} = Φ'(z) Ŵ
    pub d_z: f64,
}

impl MaterialParams {
    /// Elastic response at strain `e` (tensor components). When `d_c` is
    /// given it receives W^el_{,c}.
    pub fn elastic_point(&self, e: &[f64], c: &[f64], z: f64, d_c: Option<&mut [f64]>) -> ElasticPoint {
        let dim = self.dim;
        let m = if dim == 1 { 1 } else { 3 };
        let em = to_mandel(e, dim);
        let mut cm = vec![0.0; m * m];
        let mut estar = [0.0; 3];
        for (ck, ph) in c.iter().zip(&self.phases) {
            for (a, b) in cm.iter_mut().zip(ph.stiffness.mandel()) {
                *a += ck * b;
            }
            let es = to_mandel(&ph.eigenstrain, dim);
            for i in 0..m {
                estar[i] += ck * es[i];
            }
        }
        let mut d = [0.0; 3];
        for i in 0..m {
            d[i] = em[i] - estar[i];
        }
        let cd = mat_vec(&cm, &d, m);
        let base = 0.5 * dot_m(&d, &cd, m);
        let scale = self.degradation.value(z) + self.eta;
        let mut sm = [0.0; 3];
        for i in 0..m {
            sm[i] = scale * cd[i];
        }
        if let Some(dc) = d_c {
            for (k, ph) in self.phases.iter().enumerate() {
                let ckd = mat_vec(ph.stiffness.mandel(), &d, m);
                let es = to_mandel(&ph.eigenstrain, dim);
                dc[k] = scale * (0.5 * dot_m(&d, &ckd, m) - dot_m(&es, &cd, m));
            }
        }
        ElasticPoint {
            density: scale * base,
            base,
            stress: from_mandel(&sm, dim),
            d_z: self.degradation.derivative(z) * base,
        }
    }
}

fn check_damage(z: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&z) {
        return Err(Error::Constraint(format!("damage {z} outside [0, 1]")));
    }
    Ok(())
}

pub fn elastic_density(e: &[f64], c: &[f64], z: f64, params: &MaterialParams) -> Result<f64> {
    check_damage(z)?;
    Ok(params.elastic_point(e, c, z, None).density)
}

/// Stress σ = W^el_{,e}.
pub fn elastic_d_e(e: &[f64], c: &[f64], z: f64, params: &MaterialParams) -> Result<[f64; 3]> {
    check_damage(z)?;
    Ok(params.elastic_point(e, c, z, None).stress)
}

pub fn elastic_d_c(e: &[f64], c: &[f64], z: f64, params: &MaterialParams) -> Result<Vec<f64>> {
    check_damage(z)?;
    let mut dc = vec![0.0; c.len()];
    params.elastic_point(e, c, z, Some(&mut dc));
    Ok(dc)
}

pub fn elastic_d_z(e: &[f64], c: &[f64], z: f64, params: &MaterialParams) -> Result<f64> {
    check_damage(z)?;
    Ok(params.elastic_point(e, c, z, None).d_z)
}

/// Symmetric-tensor contraction a:b for tensor components.
pub fn contract(a: &[f64], b: &[f64], dim: usize) -> f64 {
    if dim == 1 {
        a[0] * b[0]
    } else {
        a[0] * b[0] + a[1] * b[1] + 2.0 * a[2] * b[2]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::params::Stiffness;

    #[test]
    fn phi_delta_values() {
        assert_eq!(phi_delta(1.0, 0.1).unwrap(), 0.0);
        let d = 0.1f64;
        let reg = RegularizedLog::new(d).unwrap();
        let upper = d * d.ln();
        let lower = d * d.ln() - d / 2.0 + d * d / (2.0 * d);
        assert!((reg.value(d) - upper).abs() < 1e-15 && (upper - lower).abs() < 1e-15);
        assert!((phi_delta(0.0, 0.1).unwrap() + 0.05).abs() < 1e-15);
        let slope_lower = d.ln() + d / d;
        assert!((phi_delta_prime(0.1, 0.1).unwrap() - (d.ln() + 1.0)).abs() < 1e-15);
        assert!((slope_lower - (d.ln() + 1.0)).abs() < 1e-15);
        assert!(phi_delta(0.5, 0.0).is_err());
        assert!(phi_delta(0.5, -1.0).is_err());
    }

    #[test]
    fn poly_values() {
        assert_eq!(chem_poly(&[1.0, 0.0], 1.0), 0.0);
        assert!((chem_poly(&[0.5, 0.5], 1.0) - 0.125).abs() < 1e-15);
        let mut g = [1.0; 2];
        chem_poly_grad(&[1.0, 0.0], 1.0, &mut g);
        assert_eq!(g, [0.0, 0.0]);
    }

    #[test]
    fn log_values() {
        let reg = RegularizedLog::new(0.1).unwrap();
        let a0 = [0.0; 4];
        assert!((chem_log_delta(&[1.0, 0.0], 1.0, &a0, &reg) + 0.05).abs() < 1e-15);
        let mut g = [0.0; 2];
        chem_log_delta_grad(&[0.1, 0.9], 1.0, &a0, &reg, &mut g);
        assert!((g[0] - ((0.1f64).ln() + 1.0)).abs() < 1e-15);
        let a = [-2.0, 0.0, 0.0, -2.0];
        let quad = chem_log_delta(&[0.5, 0.5], 1.0, &a, &reg) - 2.0 * reg.value(0.5);
        assert!((quad + 0.5).abs() < 1e-15);
    }

    fn identity_params() -> MaterialParams {
        let mut p = MaterialParams::binary(2);
        for ph in &mut p.phases {
            ph.stiffness = Stiffness::identity(2, 1.0);
        }
        p
    }

    #[test]
    fn elastic_values() {
        let p = identity_params();
        let e = [1.0, 1.0, 0.0];
        let c = [0.5, 0.5];
        assert!((elastic_density(&e, &c, 1.0, &p).unwrap() - 1.01).abs() < 1e-14);
        assert!((elastic_density(&e, &c, 0.0, &p).unwrap() - 0.01).abs() < 1e-15);
        assert_eq!(elastic_d_z(&e, &c, 0.0, &p).unwrap(), 0.0);
        assert!(elastic_density(&e, &c, 1.5, &p).is_err());
        assert!(elastic_density(&e, &c, -0.1, &p).is_err());
    }

    #[test]
    fn stress_free_at_eigenstrain() {
        let mut p = MaterialParams::binary(2);
        p.phases[0].eigenstrain = vec![0.02, -0.01, 0.005];
        p.phases[1].eigenstrain = vec![-0.01, 0.03, 0.0];
        let c = [0.3, 0.7];
        let e: Vec<f64> = (0..3).map(|i| 0.3 * p.phases[0].eigenstrain[i] + 0.7 * p.phases[1].eigenstrain[i]).collect();
        let pt = p.elastic_point(&e, &c, 0.8, None);
        assert!(pt.density.abs() < 1e-18);
        assert!(pt.stress.iter().all(|s| s.abs() < 1e-15));
    }
}
