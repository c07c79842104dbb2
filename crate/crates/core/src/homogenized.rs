//! The homogenized problem `−∇·(b∇u(·,t)) = f(·,t)` with zero Dirichlet data,
//! solved independently on each output time slice.

use rayon::prelude::*;

use crate::effective::EffectiveTensor;
use crate::error::{HomogError, Result};
use crate::expr::{Expr, VarSet};
use crate::grid::BoxGrid;
use crate::linalg::{bicgstab, conjugate_gradient, KrylovSettings};
use crate::stencil::FluxStencil;
use crate::tolerances::Tolerances;

/// Macroscopic box, time horizon, source and initial datum.
#[derive(Debug, Clone)]
pub struct MacroDomain {
    pub grid: BoxGrid,
    pub t_final: f64,
    pub n_t: usize,
    pub f: Expr,
    pub u0: Expr,
}

impl MacroDomain {
    /// `n_x` interior nodes per dimension on `Π [lo_d, hi_d]`.
    pub fn new(
        lo: Vec<f64>,
        hi: Vec<f64>,
        n_x: usize,
        t_final: f64,
        n_t: usize,
        f: &str,
        u0: &str,
    ) -> Result<Self> {
        if n_x < 3 {
            return Err(HomogError::config(format!("n_x must be at least 3, got {n_x}")));
        }
        if !(t_final > 0.0) || !t_final.is_finite() {
            return Err(HomogError::config("final time must be positive"));
        }
        if n_t < 2 {
            return Err(HomogError::config("need at least 2 output time slices"));
        }
        let dim = lo.len();
        let grid = BoxGrid::new(lo, hi, vec![n_x + 1; dim])?;
        let vars = VarSet::macroscopic();
        let f = Expr::parse(f, &vars)?;
        let u0 = Expr::parse(u0, &vars)?;
        if u0.depends_on(2) {
            return Err(HomogError::config("initial datum may not depend on t"));
        }
        if dim == 1 && (f.depends_on(1) || u0.depends_on(1)) {
            return Err(HomogError::config("1D domain expressions may not reference x2"));
        }
        Ok(MacroDomain {
            grid,
            t_final,
            n_t,
            f,
            u0,
        })
    }

    pub fn dim(&self) -> usize {
        self.grid.dim
    }

    /// Output times `t_k = k T / (n_t − 1)`.
    pub fn times(&self) -> Vec<f64> {
        (0..self.n_t)
            .map(|k| self.t_final * k as f64 / (self.n_t - 1) as f64)
            .collect()
    }

    pub fn with_grid(&self, grid: BoxGrid) -> Self {
        MacroDomain {
            grid,
            ..self.clone()
        }
    }

    pub fn with_source(&self, f: &str) -> Result<Self> {
        let mut d = self.clone();
        d.f = Expr::parse(f, &VarSet::macroscopic())?;
        Ok(d)
    }

    pub fn with_initial(&self, u0: &str) -> Result<Self> {
        let mut d = self.clone();
        d.u0 = Expr::parse(u0, &VarSet::macroscopic())?;
        Ok(d)
    }

    /// `f(·, t)` at the interior nodes of `grid`.
    pub fn source_on(&self, grid: &BoxGrid, t: f64) -> Vec<f64> {
        grid.interior_points()
            .iter()
            .map(|p| self.f.eval(&[p[0], p[1], t]))
            .collect()
    }

    pub fn initial_on(&self, grid: &BoxGrid) -> Vec<f64> {
        grid.interior_points()
            .iter()
            .map(|p| self.u0.eval(&[p[0], p[1], 0.0]))
            .collect()
    }
}

/// Values on the interior nodes of `grid` at each of `times`; boundary values
/// are zero and not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    pub grid: BoxGrid,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl SpaceTimeField {
    pub fn zeros(grid: BoxGrid, times: Vec<f64>) -> Self {
        let n = grid.unknowns();
        let values = vec![vec![0.0; n]; times.len()];
        SpaceTimeField { grid, times, values }
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        &self.values[k]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Value at lattice node `p` (including boundary nodes, which are zero).
    pub fn node_value(&self, k: usize, p: [usize; 2]) -> f64 {
        let g = &self.grid;
        let interior = (0..g.dim).all(|d| p[d] >= 1 && p[d] < g.cells[d]);
        if !interior {
            return 0.0;
        }
        let idx = if g.dim == 2 {
            (p[0] - 1) * g.interior(1) + (p[1] - 1)
        } else {
            p[0] - 1
        };
        self.values[k][idx]
    }

    /// Multilinear interpolation in space at slice `k`.
    pub fn interpolate(&self, k: usize, x: [f64; 2]) -> f64 {
        let g = &self.grid;
        let mut base = [0usize; 2];
        let mut frac = [0.0; 2];
        for d in 0..g.dim {
            let pos = ((x[d] - g.lo[d]) / g.h(d)).clamp(0.0, g.cells[d] as f64);
            let i = (pos.floor() as usize).min(g.cells[d] - 1);
            base[d] = i;
            frac[d] = pos - i as f64;
        }
        if g.dim == 1 {
            let a = self.node_value(k, [base[0], 0]);
            let b = self.node_value(k, [base[0] + 1, 0]);
            return a + frac[0] * (b - a);
        }
        let v = |di: usize, dj: usize| self.node_value(k, [base[0] + di, base[1] + dj]);
        let lo = v(0, 0) + frac[1] * (v(0, 1) - v(0, 0));
        let hi = v(1, 0) + frac[1] * (v(1, 1) - v(1, 0));
        lo + frac[0] * (hi - lo)
    }

    /// Interpolates in space and linearly in time.
    pub fn interpolate_at(&self, x: [f64; 2], t: f64) -> f64 {
        let n = self.times.len();
        if n == 1 || t <= self.times[0] {
            return self.interpolate(0, x);
        }
        if t >= self.times[n - 1] {
            return self.interpolate(n - 1, x);
        }
        let k = self.times.partition_point(|tk| *tk <= t).saturating_sub(1).min(n - 2);
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let w = (t - t0) / (t1 - t0);
        (1.0 - w) * self.interpolate(k, x) + w * self.interpolate(k + 1, x)
    }

    /// Centered-difference gradient component `d` at interior node `p` of slice `k`.
    pub fn gradient(&self, k: usize, p: [usize; 2], d: usize) -> f64 {
        let mut plus = p;
        let mut minus = p;
        plus[d] += 1;
        minus[d] -= 1;
        (self.node_value(k, plus) - self.node_value(k, minus)) / (2.0 * self.grid.h(d))
    }
}

/// Solves the homogenized problem on every output slice of `dom`.
pub fn solve_homogenized(
    b: &EffectiveTensor,
    dom: &MacroDomain,
    tol: &Tolerances,
) -> Result<SpaceTimeField> {
    if b.dim != dom.dim() {
        return Err(HomogError::config("effective tensor and domain dimensions differ"));
    }
    if !(b.min_sym_eigenvalue() > 0.0) {
        return Err(HomogError::Validation(format!(
            "effective tensor is not positive definite: {:?}",
            b.b
        )));
    }
    let op = FluxStencil::constant(dom.grid.lattice(), b.as_conductivity());
    let settings = KrylovSettings::new(tol.tol_macro, tol.max_iter);
    let times = dom.times();
    let solve_slice = |k: usize| -> Result<Vec<f64>> {
        let rhs = dom.source_on(&dom.grid, times[k]);
        let mut u = vec![0.0; rhs.len()];
        let rep = if op.is_symmetric() {
            conjugate_gradient(&op, &rhs, &mut u, settings)
        } else {
            bicgstab(&op, &rhs, &mut u, settings)
        };
        rep.map_err(|e| e.with_solver_context(format!("homogenized slice t={}", times[k])))?;
        Ok(u)
    };
    let values: Vec<Vec<f64>> = if dom.f.depends_on(2) {
        (0..times.len())
            .into_par_iter()
            .map(solve_slice)
            .collect::<Result<_>>()?
    } else {
        let u = solve_slice(0)?;
        vec![u; times.len()]
    };
    Ok(SpaceTimeField {
        grid: dom.grid.clone(),
        times,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regime::Regime;

    fn dom(f: &str, n_x: usize) -> MacroDomain {
        MacroDomain::new(vec![0.0], vec![1.0], n_x, 1.0, 5, f, "0").unwrap()
    }

    #[test]
    fn quadratic_is_exact() {
        let d = dom("2", 15);
        let u = solve_homogenized(&EffectiveTensor::scalar(1.0, Regime::SubCritical), &d, &Tolerances::default()).unwrap();
        let pts = d.grid.interior_points();
        for k in 0..5 {
            for (v, p) in u.slice(k).iter().zip(&pts) {
                assert!((v - p[0] * (1.0 - p[0])).abs() < 1e-12);
            }
        }
        let s3 = 3f64.sqrt();
        let d = dom(&format!("2*{s3:?}"), 15);
        let u = solve_homogenized(&EffectiveTensor::scalar(s3, Regime::SubCritical), &d, &Tolerances::default()).unwrap();
        for (v, p) in u.slice(2).iter().zip(&pts) {
            assert!((v - p[0] * (1.0 - p[0])).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_in_time_source() {
        let d = dom("2*(1+t)", 15);
        let u = solve_homogenized(&EffectiveTensor::scalar(1.0, Regime::Critical), &d, &Tolerances::default()).unwrap();
        let pts = d.grid.interior_points();
        for (k, t) in d.times().iter().enumerate() {
            for (v, p) in u.slice(k).iter().zip(&pts) {
                assert!((v - (1.0 + t) * p[0] * (1.0 - p[0])).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn two_dimensional_with_cross_terms() {
        // u = sin(πx) sin(πy) solves −∇·(b∇u) = f for the matching f.
        let b = EffectiveTensor::from_matrix(2, [[2.0, 0.3], [0.1, 1.5]], Regime::SubCritical);
        let f = "pi^2*(3.5*sin(pi*x1)*sin(pi*x2) - 0.4*cos(pi*x1)*cos(pi*x2))";
        let mut errs = Vec::new();
        for n in [15, 31] {
            let d = MacroDomain::new(vec![0.0, 0.0], vec![1.0, 1.0], n, 1.0, 2, f, "0").unwrap();
            let u = solve_homogenized(&b, &d, &Tolerances::default()).unwrap();
            let err = d
                .grid
                .interior_points()
                .iter()
                .zip(u.slice(0))
                .map(|(p, v)| (v - (std::f64::consts::PI * p[0]).sin() * (std::f64::consts::PI * p[1]).sin()).abs())
                .fold(0.0, f64::max);
            errs.push(err);
        }
        let order = (errs[0] / errs[1]).log2();
        assert!(order > 1.8, "order {order}, errors {errs:?}");
    }

    #[test]
    fn maximum_principle_and_linearity() {
        let d1 = dom("1 + sin(3*x)^2", 31);
        let d2 = dom("exp(x)", 31);
        let d12 = dom("1 + sin(3*x)^2 + exp(x)", 31);
        let b = EffectiveTensor::scalar(1.7, Regime::SubCritical);
        let t = Tolerances::default();
        let u1 = solve_homogenized(&b, &d1, &t).unwrap();
        let u2 = solve_homogenized(&b, &d2, &t).unwrap();
        let u12 = solve_homogenized(&b, &d12, &t).unwrap();
        assert!(u1.values.iter().flatten().all(|v| *v >= 0.0));
        for ((a, b), c) in u1.slice(0).iter().zip(u2.slice(0)).zip(u12.slice(0)) {
            assert!((a + b - c).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_invalid_inputs() {
        assert!(MacroDomain::new(vec![0.0], vec![1.0], 2, 1.0, 2, "1", "0").is_err());
        assert!(MacroDomain::new(vec![0.0], vec![1.0], 3, 0.0, 2, "1", "0").is_err());
        assert!(MacroDomain::new(vec![0.0], vec![1.0], 3, 1.0, 2, "1", "t").is_err());
        let d = dom("1", 7);
        let neg = EffectiveTensor::scalar(-1.0, Regime::SubCritical);
        assert!(solve_homogenized(&neg, &d, &Tolerances::default()).is_err());
    }

    #[test]
    fn interpolation_is_exact_for_linear_data() {
        let d = dom("0", 7);
        let mut u = SpaceTimeField::zeros(d.grid.clone(), vec![0.0, 1.0]);
        for (k, slice) in u.values.iter_mut().enumerate() {
            for (v, p) in slice.iter_mut().zip(d.grid.interior_points()) {
                *v = (1.0 + k as f64) * p[0].min(1.0 - p[0]);
            }
        }
        assert!((u.interpolate_at([0.3, 0.0], 0.5) - 1.5 * 0.3).abs() < 1e-14);
        assert_eq!(u.interpolate(0, [0.0, 0.0]), 0.0);
    }
}
