//! Matrix-free Krylov solvers and a tridiagonal direct solver.

use std::fmt;

use serde::Serialize;

use crate::error::{HomogError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolverKind {
    ConjugateGradient,
    BiCgStab,
    Tridiagonal,
    Trivial,
}

#[derive(Debug, Clone, Serialize)]
pub struct LinearSolveReport {
    pub iterations: usize,
    /// Final relative residual `‖b − Ax‖ / ‖b‖`.
    pub residual: f64,
    pub kind: SolverKind,
}

impl fmt::Display for LinearSolveReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?}: {} iterations, relative residual {:.3e}",
            self.kind, self.iterations, self.residual
        )
    }
}

pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], out: &mut [f64]);
}

#[derive(Debug, Clone, Copy)]
pub struct KrylovSettings {
    pub tol: f64,
    pub max_iter: usize,
    /// Remove the constant vector from iterates and residuals (periodic problems).
    pub project_mean: bool,
}

impl KrylovSettings {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        KrylovSettings {
            tol,
            max_iter,
            project_mean: false,
        }
    }

    pub fn zero_mean(mut self) -> Self {
        self.project_mean = true;
        self
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn remove_mean(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

fn residual(op: &dyn LinearOperator, b: &[f64], x: &[f64], r: &mut [f64]) {
    op.apply(x, r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
}

/// Relative residual of `x` for `op x = b`; `0` when `b = 0` and `x = 0`.
pub fn relative_residual(op: &dyn LinearOperator, b: &[f64], x: &[f64]) -> f64 {
    let mut r = vec![0.0; b.len()];
    residual(op, b, x, &mut r);
    let bn = norm2(b);
    if bn == 0.0 {
        norm2(&r)
    } else {
        norm2(&r) / bn
    }
}

fn trivial_if_zero(b: &[f64], x: &mut [f64]) -> Option<LinearSolveReport> {
    if b.iter().all(|v| *v == 0.0) {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Some(LinearSolveReport {
            iterations: 0,
            residual: 0.0,
            kind: SolverKind::Trivial,
        });
    }
    None
}

/// Conjugate gradients for symmetric positive (semi-)definite operators.
/// `x` holds the initial guess on entry.
pub fn conjugate_gradient(
    op: &dyn LinearOperator,
    b: &[f64],
    x: &mut [f64],
    settings: KrylovSettings,
) -> Result<LinearSolveReport> {
    let mut b = b.to_vec();
    if settings.project_mean {
        remove_mean(&mut b);
        remove_mean(x);
    }
    if let Some(rep) = trivial_if_zero(&b, x) {
        return Ok(rep);
    }
    let n = b.len();
    let bnorm = norm2(&b);
    // Aim below the tolerance so the final check, made after re-projecting x, passes.
    let target = 0.5 * settings.tol * bnorm;
    let mut r = vec![0.0; n];
    residual(op, &b, x, &mut r);
    if settings.project_mean {
        remove_mean(&mut r);
    }
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let mut iterations = 0;
    let true_residual = |x: &[f64], r: &mut [f64]| {
        residual(op, &b, x, r);
        if settings.project_mean {
            remove_mean(r);
        }
        dot(r, r)
    };
    while iterations < settings.max_iter {
        if rr.sqrt() <= target {
            // The recurrence can claim convergence the true residual misses; restart.
            rr = true_residual(x, &mut r);
            if rr.sqrt() <= target {
                break;
            }
            p.copy_from_slice(&r);
        }
        op.apply(&p, &mut ap);
        if settings.project_mean {
            remove_mean(&mut ap);
        }
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
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
        iterations += 1;
        // Recompute the true residual periodically to avoid drift.
        if iterations % 200 == 0 {
            rr = true_residual(x, &mut r);
            p.copy_from_slice(&r);
        }
    }
    finish(op, &b, x, settings, iterations, bnorm, SolverKind::ConjugateGradient)
}

/// BiCGStab for general (non-symmetric) operators.
pub fn bicgstab(
    op: &dyn LinearOperator,
    b: &[f64],
    x: &mut [f64],
    settings: KrylovSettings,
) -> Result<LinearSolveReport> {
    let mut b = b.to_vec();
    if settings.project_mean {
        remove_mean(&mut b);
        remove_mean(x);
    }
    if let Some(rep) = trivial_if_zero(&b, x) {
        return Ok(rep);
    }
    let n = b.len();
    let bnorm = norm2(&b);
    // Aim below the tolerance so the final check, made after re-projecting x, passes.
    let target = 0.5 * settings.tol * bnorm;
    let mut r = vec![0.0; n];
    residual(op, &b, x, &mut r);
    if settings.project_mean {
        remove_mean(&mut r);
    }
    let mut r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut iterations = 0;
    let mut fresh = true;
    while iterations < settings.max_iter {
        let rho_new = dot(&r_hat, &r);
        let breakdown = rho_new.abs() < f64::MIN_POSITIVE || omega == 0.0;
        if norm2(&r) <= target || breakdown {
            residual(op, &b, x, &mut r);
            if settings.project_mean {
                remove_mean(&mut r);
            }
            if norm2(&r) <= target || fresh {
                break;
            }
            r_hat.copy_from_slice(&r);
            (rho, alpha, omega) = (1.0, 1.0, 1.0);
            v.iter_mut().for_each(|e| *e = 0.0);
            p.iter_mut().for_each(|e| *e = 0.0);
            fresh = true;
            continue;
        }
        fresh = false;
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        op.apply(&p, &mut v);
        if settings.project_mean {
            remove_mean(&mut v);
        }
        alpha = rho / dot(&r_hat, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm2(&s) <= target {
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] = s[i];
            }
            iterations += 1;
            continue;
        }
        op.apply(&s, &mut t);
        if settings.project_mean {
            remove_mean(&mut t);
        }
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * p[i] + omega * s[i];
            r[i] = s[i] - omega * t[i];
        }
        iterations += 1;
    }
    finish(op, &b, x, settings, iterations, bnorm, SolverKind::BiCgStab)
}

fn finish(
    op: &dyn LinearOperator,
    b: &[f64],
    x: &mut [f64],
    settings: KrylovSettings,
    iterations: usize,
    bnorm: f64,
    kind: SolverKind,
) -> Result<LinearSolveReport> {
    if settings.project_mean {
        remove_mean(x);
    }
    let mut r = vec![0.0; b.len()];
    residual(op, b, x, &mut r);
    let res = norm2(&r) / bnorm;
    let report = LinearSolveReport {
        iterations,
        residual: res,
        kind,
    };
    if !(res <= settings.tol) {
        return Err(HomogError::SolverDiverged {
            context: format!("tolerance {:.1e}", settings.tol),
            report,
        });
    }
    Ok(report)
}

/// Thomas algorithm for a tridiagonal system. `lower[0]` and `upper[n-1]`
/// are ignored. Requires diagonal dominance (no pivoting).
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64], x: &mut [f64]) {
    let n = diag.len();
    if n == 0 {
        return;
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = upper[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i] * c[i - 1];
        c[i] = if i + 1 < n { upper[i] / m } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / m;
    }
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
}

/// Smallest and largest eigenvalues of a symmetric 2×2 matrix `[[a, b], [b, c]]`.
pub fn sym2_eigenvalues(a: f64, b: f64, c: f64) -> (f64, f64) {
    let mean = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    (mean - rad, mean + rad)
}
