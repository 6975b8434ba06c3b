//! Iterative solvers: conjugate gradients, truncated Newton on a linear
//! subspace, and a projected Newton method for box constraints.

use crate::error::{Error, Result};

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOutcome {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Conjugate gradients for a symmetric operator that is positive definite on
/// the range of `project`. `b` must already lie in that range; iterates are
/// re-projected each step. `stop(‖r‖, x)` decides convergence.
pub fn conjugate_gradient(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    project: impl Fn(&mut [f64]),
    b: &[f64],
    x: &mut [f64],
    max_iter: usize,
    stop: impl Fn(f64, &[f64]) -> bool,
) -> CgOutcome {
    let n = b.len();
    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    project(&mut r);
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut ap = vec![0.0; n];
    for it in 0..=max_iter {
        let rn = rr.sqrt();
        if stop(rn, x) {
            return CgOutcome { iterations: it, residual: rn, converged: true };
        }
        if it == max_iter {
            return CgOutcome { iterations: it, residual: rn, converged: false };
        }
        apply(&p, &mut ap);
        project(&mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0 && pap.is_finite()) {
            return CgOutcome { iterations: it, residual: rn, converged: false };
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        project(&mut p);
    }
    unreachable!()
}

/// A smooth function on a linear subspace of ℝⁿ. `gradient` returns the
/// component of the gradient inside the subspace.
pub trait Objective {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], g: &mut [f64]);

    fn hess_vec(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        fd_hess_vec(self, x, v, out);
    }
}

/// Central difference of the gradient along `v`.
pub fn fd_hess_vec<O: Objective + ?Sized>(obj: &O, x: &[f64], v: &[f64], out: &mut [f64]) {
    let vn = norm_inf(v);
    if vn == 0.0 {
        out.iter_mut().for_each(|o| *o = 0.0);
        return;
    }
    let h = 1e-6 * (1.0 + norm_inf(x)) / vn;
    let xp: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + h * b).collect();
    let xm: Vec<f64> = x.iter().zip(v).map(|(a, b)| a - h * b).collect();
    let mut gm = vec![0.0; x.len()];
    obj.gradient(&xp, out);
    obj.gradient(&xm, &mut gm);
    for (o, m) in out.iter_mut().zip(&gm) {
        *o = (*o - m) / (2.0 * h);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    /// Stop once the ℓ² norm of the (projected) gradient is below this.
    pub tol: f64,
    pub max_iter: usize,
    pub cg_max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 100, cg_max_iter: 500 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinReport {
    pub iterations: usize,
    pub grad_norm: f64,
    pub value: f64,
    pub converged: bool,
}

impl MinReport {
    pub fn require(self, what: &str) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::Solver(format!(
                "{what}: no convergence after {} iterations (gradient norm {:.3e})",
                self.iterations, self.grad_norm
            )))
        }
    }
}

/// Values this close are indistinguishable in floating point.
fn within_noise(f_new: f64, f: f64) -> bool {
    f_new <= f + 64.0 * f64::EPSILON * (1.0 + f.abs())
}

/// Approximate Newton direction from truncated CG on `H d = −g`, restricted
/// to coordinates where `free` is true. Falls back to steepest descent on
/// negative curvature at the first iteration.
fn newton_direction<O: Objective + ?Sized>(
    obj: &O,
    x: &[f64],
    g: &[f64],
    free: Option<&[bool]>,
    max_iter: usize,
) -> Vec<f64> {
    let n = g.len();
    let mask = |v: &mut [f64]| {
        if let Some(f) = free {
            for (vi, fi) in v.iter_mut().zip(f) {
                if !fi {
                    *vi = 0.0;
                }
            }
        }
    };
    let mut r: Vec<f64> = g.iter().map(|v| -v).collect();
    mask(&mut r);
    let gn = norm2(&r);
    let forcing = gn.sqrt().min(0.5) * gn;
    let mut d = vec![0.0; n];
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut hp = vec![0.0; n];
    for k in 0..max_iter {
        obj.hess_vec(x, &p, &mut hp);
        mask(&mut hp);
        let curv = dot(&p, &hp);
        if curv <= 1e-14 * dot(&p, &p) {
            if k == 0 {
                return r;
            }
            break;
        }
        let alpha = rr / curv;
        for i in 0..n {
            d[i] += alpha * p[i];
            r[i] -= alpha * hp[i];
        }
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= forcing {
            break;
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    d
}

/// Truncated Newton with Armijo backtracking.
pub fn newton_cg<O: Objective + ?Sized>(obj: &O, x: &mut [f64], opts: &NewtonOptions) -> MinReport {
    let n = obj.dim();
    let mut g = vec![0.0; n];
    let mut f = obj.value(x);
    obj.gradient(x, &mut g);
    let mut gn = norm2(&g);
    let mut xn = vec![0.0; n];
    let mut gnew = vec![0.0; n];
    for it in 0..opts.max_iter {
        if gn <= opts.tol {
            return MinReport { iterations: it, grad_norm: gn, value: f, converged: true };
        }
        let mut d = newton_direction(obj, x, &g, None, opts.cg_max_iter);
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            d = g.iter().map(|v| -v).collect();
            slope = -gn * gn;
        }
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-14 {
            for i in 0..n {
                xn[i] = x[i] + t * d[i];
            }
            let fnew = obj.value(&xn);
            if fnew <= f + 1e-4 * t * slope {
                accepted = true;
            } else if within_noise(fnew, f) {
                obj.gradient(&xn, &mut gnew);
                accepted = norm2(&gnew) < gn;
            }
            if accepted {
                x.copy_from_slice(&xn);
                f = fnew;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return MinReport { iterations: it, grad_norm: gn, value: f, converged: false };
        }
        obj.gradient(x, &mut g);
        gn = norm2(&g);
    }
    MinReport { iterations: opts.max_iter, grad_norm: gn, value: f, converged: gn <= opts.tol }
}

/// Norm of `x − clip(x − g)`, the first-order measure for box constraints.
pub fn projected_gradient_norm(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..x.len() {
        let p = x[i] - (x[i] - g[i]).clamp(lower[i], upper[i].max(lower[i]));
        s += p * p;
    }
    s.sqrt()
}

/// Projected Newton for `lower ≤ x ≤ upper`: Newton-CG on the free variables,
/// projected arc search, active set from the bounds and gradient signs.
pub fn projected_newton<O: Objective + ?Sized>(
    obj: &O,
    x: &mut [f64],
    lower: &[f64],
    upper: &[f64],
    opts: &NewtonOptions,
) -> MinReport {
    let n = obj.dim();
    let clip = |v: &mut [f64]| {
        for i in 0..n {
            v[i] = v[i].clamp(lower[i], upper[i].max(lower[i]));
        }
    };
    clip(x);
    let mut g = vec![0.0; n];
    let mut f = obj.value(x);
    obj.gradient(x, &mut g);
    let mut pg = projected_gradient_norm(x, &g, lower, upper);
    let mut xn = vec![0.0; n];
    let mut gnew = vec![0.0; n];
    for it in 0..opts.max_iter {
        if pg <= opts.tol {
            return MinReport { iterations: it, grad_norm: pg, value: f, converged: true };
        }
        let eps = pg.min(1e-3);
        let free: Vec<bool> = (0..n)
            .map(|i| {
                let fixed = upper[i] - lower[i] <= eps;
                let at_low = x[i] <= lower[i] + eps && g[i] > 0.0;
                let at_up = x[i] >= upper[i] - eps && g[i] < 0.0;
                !(fixed || at_low || at_up)
            })
            .collect();
        let mut d = newton_direction(obj, x, &g, Some(&free), opts.cg_max_iter);
        for i in 0..n {
            if !free[i] {
                d[i] = -g[i];
            }
        }
        if dot(&g, &d) >= 0.0 {
            d = g.iter().map(|v| -v).collect();
        }
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-14 {
            for i in 0..n {
                xn[i] = x[i] + t * d[i];
            }
            clip(&mut xn);
            let slope: f64 = (0..n).map(|i| g[i] * (xn[i] - x[i])).sum();
            let fnew = obj.value(&xn);
            if slope < 0.0 && fnew <= f + 1e-4 * slope {
                accepted = true;
            } else if within_noise(fnew, f) {
                obj.gradient(&xn, &mut gnew);
                accepted = projected_gradient_norm(&xn, &gnew, lower, upper) < pg;
            }
            if accepted {
                x.copy_from_slice(&xn);
                f = fnew;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return MinReport { iterations: it, grad_norm: pg, value: f, converged: false };
        }
        obj.gradient(x, &mut g);
        pg = projected_gradient_norm(x, &g, lower, upper);
    }
    MinReport { iterations: opts.max_iter, grad_norm: pg, value: f, converged: pg <= opts.tol }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quad {
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
    }

    impl Objective for Quad {
        fn dim(&self) -> usize {
            self.b.len()
        }
        fn value(&self, x: &[f64]) -> f64 {
            let mut ax = vec![0.0; x.len()];
            for i in 0..x.len() {
                ax[i] = dot(&self.a[i], x);
            }
            0.5 * dot(x, &ax) - dot(&self.b, x)
        }
        fn gradient(&self, x: &[f64], g: &mut [f64]) {
            for i in 0..x.len() {
                g[i] = dot(&self.a[i], x) - self.b[i];
            }
        }
    }

    fn quad() -> Quad {
        Quad { a: vec![vec![4.0, 1.0, 0.0], vec![1.0, 3.0, 0.5], vec![0.0, 0.5, 2.0]], b: vec![1.0, -2.0, 3.0] }
    }

    #[test]
    fn cg_solves_spd_system() {
        let q = quad();
        let mut x = vec![0.0; 3];
        let out = conjugate_gradient(
            |v, o| {
                for i in 0..3 {
                    o[i] = dot(&q.a[i], v);
                }
            },
            |_| {},
            &q.b,
            &mut x,
            50,
            |r, _| r < 1e-14,
        );
        assert!(out.converged);
        let mut g = vec![0.0; 3];
        q.gradient(&x, &mut g);
        assert!(norm2(&g) < 1e-13);
    }

    #[test]
    fn newton_minimizes_quadratic() {
        let q = quad();
        let mut x = vec![0.0; 3];
        let rep = newton_cg(&q, &mut x, &NewtonOptions { tol: 1e-12, ..Default::default() });
        assert!(rep.converged, "{rep:?}");
    }

    #[test]
    fn rosenbrock_converges() {
        struct Rosen;
        impl Objective for Rosen {
            fn dim(&self) -> usize {
                2
            }
            fn value(&self, x: &[f64]) -> f64 {
                (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
            }
            fn gradient(&self, x: &[f64], g: &mut [f64]) {
                g[0] = -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]);
                g[1] = 200.0 * (x[1] - x[0] * x[0]);
            }
        }
        let mut x = vec![-1.2, 1.0];
        let rep = newton_cg(&Rosen, &mut x, &NewtonOptions { tol: 1e-9, max_iter: 500, cg_max_iter: 10 });
        assert!(rep.converged, "{rep:?}");
        assert!((x[0] - 1.0).abs() < 1e-6 && (x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn projected_newton_respects_bounds() {
        let q = quad();
        let lower = vec![0.0, 0.0, 0.0];
        let upper = vec![1.0, 1.0, 1.0];
        let mut x = vec![0.5; 3];
        let rep = projected_newton(&q, &mut x, &lower, &upper, &NewtonOptions { tol: 1e-12, ..Default::default() });
        assert!(rep.converged, "{rep:?}");
        // KKT: x1 hits 0 (gradient pushes down), x2 hits 1
        assert!(x[1].abs() < 1e-14);
        assert!((x[2] - 1.0).abs() < 1e-14);
        assert!((x[0] - 0.25).abs() < 1e-10);
    }
}
