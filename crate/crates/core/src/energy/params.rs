use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::sym_len;
use crate::simplex::{validate_mobility, Mobility};

use super::density::RegularizedLog;

/// Chemical free-energy density W^ch.
#[derive(Debug, Clone, PartialEq)]
pub enum ChemicalEnergy {
    /// `scale · Σ c_k² (1 − c_k)²`
    Polynomial { scale: f64 },
    /// `θ Σ φ^δ(c_k) + ½ c·Ac` with `a` stored row-major, N×N.
    Logarithmic { theta: f64, a: Vec<f64>, delta: RegularizedLog },
}

impl ChemicalEnergy {
    pub fn is_log(&self) -> bool {
        matches!(self, ChemicalEnergy::Logarithmic { .. })
    }
}

/// Degradation Φ(z) = z^q with q ≥ 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Degradation {
    pub exponent: f64,
}

impl Default for Degradation {
    fn default() -> Self {
        Self { exponent: 2.0 }
    }
}

impl Degradation {
    #[inline]
    pub fn value(&self, z: f64) -> f64 {
        if self.exponent == 2.0 {
            z * z
        } else {
            z.max(0.0).powf(self.exponent)
        }
    }

    #[inline]
    pub fn derivative(&self, z: f64) -> f64 {
        if self.exponent == 2.0 {
            2.0 * z
        } else {
            self.exponent * z.max(0.0).powf(self.exponent - 1.0)
        }
    }
}

/// Interfacial tensor Γ acting on N×n concentration gradients.
#[derive(Debug, Clone, PartialEq)]
pub enum GradientTensor {
    /// γ·Id
    Isotropic(f64),
    /// Symmetric (N·n)×(N·n) matrix on gradients flattened `[component][axis]`.
    Full(Vec<f64>),
}

/// Stiffness tensor on symmetric tensors in Mandel form (1×1 in 1D, 3×3 in 2D).
#[derive(Debug, Clone, PartialEq)]
pub struct Stiffness {
    m: usize,
    data: Vec<f64>,
}

impl Stiffness {
    pub fn from_mandel(dim: usize, data: Vec<f64>) -> Result<Self> {
        let m = sym_len(dim);
        if data.len() != m * m {
            return Err(Error::param(format!("stiffness needs {} Mandel entries, got {}", m * m, data.len())));
        }
        Ok(Self { m, data })
    }

    /// Isotropic Lamé tensor; in 1D the uniaxial modulus λ + 2μ.
    pub fn isotropic(dim: usize, lambda: f64, mu: f64) -> Self {
        if dim == 1 {
            Self { m: 1, data: vec![lambda + 2.0 * mu] }
        } else {
            let l2m = lambda + 2.0 * mu;
            Self { m: 3, data: vec![l2m, lambda, 0.0, lambda, l2m, 0.0, 0.0, 0.0, 2.0 * mu] }
        }
    }

    /// The identity on symmetric tensors, scaled.
    pub fn identity(dim: usize, scale: f64) -> Self {
        let m = sym_len(dim);
        let mut data = vec![0.0; m * m];
        for i in 0..m {
            data[i * m + i] = scale;
        }
        Self { m, data }
    }

    pub fn mandel(&self) -> &[f64] {
        &self.data
    }

    pub fn size(&self) -> usize {
        self.m
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let mat = DMatrix::from_row_slice(self.m, self.m, &self.data);
        SymmetricEigen::new(mat).eigenvalues.min()
    }

    fn is_symmetric(&self) -> bool {
        (0..self.m).all(|i| (0..self.m).all(|j| (self.data[i * self.m + j] - self.data[j * self.m + i]).abs() <= 1e-12))
    }
}

/// Elastic properties of one phase.
#[derive(Debug, Clone, PartialEq)]
pub struct Phase {
    pub stiffness: Stiffness,
    /// Stress-free strain as tensor components `[xx]` or `[xx, yy, xy]`.
    pub eigenstrain: Vec<f64>,
}

/// All model coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialParams {
    pub dim: usize,
    pub gradient: GradientTensor,
    pub mobility: Mobility,
    pub chemical: ChemicalEnergy,
    /// Damage activation threshold α.
    pub alpha: f64,
    /// Damage viscosity β.
    pub beta: f64,
    /// Regularization weight ε (0 runs the unregularized system).
    pub epsilon: f64,
    /// Exponent of the ε|∇z|^p term.
    pub p: f64,
    pub degradation: Degradation,
    /// Residual stiffness floor η̃.
    pub eta: f64,
    pub phases: Vec<Phase>,
    /// Upper bound δ₀ for the log regularization.
    pub delta0: f64,
}

impl MaterialParams {
    /// Binary defaults: γ = 0.01, default mobility,
    /// polynomial double well, α = β = 1, ε = 0, p = dim + 1, Φ(z) = z²,
    /// η̃ = 0.01, isotropic phases (λ = μ = 1) without eigenstrain.
    pub fn binary(dim: usize) -> Self {
        let phase = Phase { stiffness: Stiffness::isotropic(dim, 1.0, 1.0), eigenstrain: vec![0.0; sym_len(dim)] };
        Self {
            dim,
            gradient: GradientTensor::Isotropic(0.01),
            mobility: Mobility::binary(),
            chemical: ChemicalEnergy::Polynomial { scale: 1.0 },
            alpha: 1.0,
            beta: 1.0,
            epsilon: 0.0,
            p: dim as f64 + 1.0,
            degradation: Degradation::default(),
            eta: 0.01,
            phases: vec![phase.clone(), phase],
            delta0: 0.3,
        }
    }

    pub fn n_phases(&self) -> usize {
        self.phases.len()
    }

    /// Collects every violated model invariant.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let n = self.n_phases();
        if self.dim != 1 && self.dim != 2 {
            v.push(format!("dimension must be 1 or 2, got {}", self.dim));
            return v;
        }
        if n < 2 {
            v.push(format!("need at least 2 phases, got {n}"));
            return v;
        }
        if self.mobility.n() != n {
            v.push(format!("mobility is {}×{0}, expected {n}×{n}", self.mobility.n()));
        } else {
            v.extend(validate_mobility(&self.mobility, 1e-12).violations);
        }
        for (name, val) in [("alpha", self.alpha), ("beta", self.beta), ("eta", self.eta)] {
            if !(val > 0.0 && val.is_finite()) {
                v.push(format!("{name} must be positive, got {val}"));
            }
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            v.push(format!("epsilon must be non-negative, got {}", self.epsilon));
        }
        if !(self.p > self.dim as f64) {
            v.push(format!("p must exceed the dimension {}, got {}", self.dim, self.p));
        }
        if !(self.degradation.exponent >= 1.0) {
            v.push(format!("degradation exponent must be ≥ 1, got {}", self.degradation.exponent));
        }
        match &self.gradient {
            GradientTensor::Isotropic(g) => {
                if !(*g > 0.0) {
                    v.push(format!("gamma must be positive, got {g}"));
                }
            }
            GradientTensor::Full(m) => {
                let k = n * self.dim;
                if m.len() != k * k {
                    v.push(format!("gradient tensor needs {} entries, got {}", k * k, m.len()));
                } else {
                    let mat = DMatrix::from_row_slice(k, k, m);
                    if (&mat - mat.transpose()).amax() > 1e-12 {
                        v.push("gradient tensor is not symmetric".into());
                    } else if SymmetricEigen::new(mat).eigenvalues.min() <= 0.0 {
                        v.push("gradient tensor is not positive definite".into());
                    }
                }
            }
        }
        match &self.chemical {
            ChemicalEnergy::Polynomial { scale } => {
                if !(*scale >= 0.0) {
                    v.push(format!("polynomial scale must be non-negative, got {scale}"));
                }
            }
            ChemicalEnergy::Logarithmic { theta, a, delta } => {
                if !(*theta > 0.0) {
                    v.push(format!("theta must be positive, got {theta}"));
                }
                if a.len() != n * n {
                    v.push(format!("A must be {n}×{n}"));
                } else if (0..n).any(|i| (0..n).any(|j| (a[i * n + j] - a[j * n + i]).abs() > 1e-12)) {
                    v.push("A must be symmetric".into());
                }
                if !(delta.delta() < self.delta0) {
                    v.push(format!("delta must lie in (0, delta0 = {}), got {}", self.delta0, delta.delta()));
                }
                if !matches!(self.gradient, GradientTensor::Isotropic(_)) {
                    v.push("logarithmic chemical energy requires Γ = γ·Id".into());
                }
            }
        }
        let m = sym_len(self.dim);
        for (k, ph) in self.phases.iter().enumerate() {
            if ph.stiffness.size() != m {
                v.push(format!("phase {k}: stiffness must be {m}×{m} in Mandel form"));
                continue;
            }
            if !ph.stiffness.is_symmetric() {
                v.push(format!("phase {k}: stiffness is not symmetric"));
            } else if ph.stiffness.min_eigenvalue() <= 0.0 {
                v.push(format!("phase {k}: stiffness is not positive definite"));
            }
            if ph.eigenstrain.len() != m {
                v.push(format!("phase {k}: eigenstrain needs {m} components, got {}", ph.eigenstrain.len()));
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Param(v.join("; ")))
        }
    }

    /// η̃ times the smallest eigenvalue over the phase stiffnesses; a lower
    /// bound for the monotonicity constant of W_{,e} on the simplex vertices'
    /// convex hull.
    pub fn monotonicity_constant(&self) -> f64 {
        self.eta * self.phases.iter().map(|p| p.stiffness.min_eigenvalue()).fold(f64::INFINITY, f64::min)
    }
}
