//! Direct simulation of `ε^q ∂_t u_ε − ∇·(a(x/ε, t/ε^r)∇u_ε) = f`, `u_ε(·,0) = u₀`,
//! zero Dirichlet data, by implicit Euler on a grid resolving both micro-scales.
//!
//! Space-time integrals over the full step history (energy identity, pairings
//! with oscillating test functions) are accumulated while marching; only
//! the `n_t` output slices are stored.

use num_rational::Rational64;
use num_traits::One;

use crate::coefficients::{CoefficientField, Conductivity};
use crate::error::{HomogError, Result};
use crate::grid::BoxGrid;
use crate::homogenized::{MacroDomain, SpaceTimeField};
use crate::linalg::{
    bicgstab, conjugate_gradient, norm2, solve_tridiagonal, KrylovSettings, LinearSolveReport,
    SolverKind,
};
use crate::regime::{rational_to_f64, rational_to_string, RegimeExponents};
use crate::stencil::FluxStencil;
use crate::tolerances::Tolerances;

pub const DEFAULT_CELLS_PER_PERIOD: usize = 16;
pub const DEFAULT_STEPS_PER_PERIOD: usize = 32;

#[derive(Debug, Clone)]
pub struct FineScaleConfig {
    pub exponents: RegimeExponents,
    pub epsilon: Rational64,
    pub n_x_per_cell: usize,
    pub n_t_per_period: usize,
    pub dom: MacroDomain,
}

impl FineScaleConfig {
    pub fn new(exponents: RegimeExponents, epsilon: Rational64, dom: MacroDomain) -> Result<Self> {
        let cfg = FineScaleConfig {
            exponents,
            epsilon,
            n_x_per_cell: DEFAULT_CELLS_PER_PERIOD,
            n_t_per_period: DEFAULT_STEPS_PER_PERIOD,
            dom,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_resolution(mut self, n_x_per_cell: usize, n_t_per_period: usize) -> Result<Self> {
        self.n_x_per_cell = n_x_per_cell;
        self.n_t_per_period = n_t_per_period;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if *self.epsilon.numer() != 1 || *self.epsilon.denom() < 1 {
            return Err(HomogError::config(format!(
                "epsilon must be 1/k for a positive integer k, got {}",
                rational_to_string(&self.epsilon)
            )));
        }
        if self.epsilon > Rational64::one() {
            return Err(HomogError::config("epsilon must not exceed 1"));
        }
        if self.n_x_per_cell < 2 || self.n_t_per_period < 1 {
            return Err(HomogError::config(
                "need n_x_per_cell >= 2 and n_t_per_period >= 1",
            ));
        }
        let eps = self.eps();
        let g = &self.dom.grid;
        for d in 0..g.dim {
            let periods = g.extent(d) / eps;
            if g.extent(d) < eps || (periods - periods.round()).abs() > 1e-9 * periods {
                return Err(HomogError::config(format!(
                    "epsilon {} does not tile extent {} of dimension {d}",
                    rational_to_string(&self.epsilon),
                    g.extent(d)
                )));
            }
        }
        Ok(())
    }

    pub fn eps(&self) -> f64 {
        rational_to_f64(&self.epsilon)
    }

    /// `ε^q`, the heat capacity.
    pub fn capacity(&self) -> f64 {
        self.eps().powf(self.exponents.q_f64())
    }

    /// `ε^r`, the temporal micro-period.
    pub fn time_period(&self) -> f64 {
        self.eps().powf(self.exponents.r_f64())
    }

    pub fn fine_grid(&self) -> BoxGrid {
        let g = &self.dom.grid;
        let cells = (0..g.dim)
            .map(|d| (g.extent(d) / self.eps()).round() as usize * self.n_x_per_cell)
            .collect();
        BoxGrid::new(g.lo.clone(), g.hi.clone(), cells).expect("validated extents")
    }

    /// Steps between consecutive output slices and the resulting `Δt`.
    /// `Δt = ε^r / n_t_per_period` whenever that divides the output interval,
    /// otherwise the largest step below it that does.
    pub fn time_steps(&self) -> (usize, f64) {
        let interval = self.dom.t_final / (self.dom.n_t - 1) as f64;
        let target = self.time_period() / self.n_t_per_period as f64;
        let ratio = interval / target;
        let m = if (ratio - ratio.round()).abs() <= 1e-9 * ratio {
            ratio.round() as usize
        } else {
            ratio.ceil() as usize
        }
        .max(1);
        (m, interval / m as f64)
    }

    pub fn total_steps(&self) -> usize {
        self.time_steps().0 * (self.dom.n_t - 1)
    }

    /// Discrete Poincaré constant `1/λ_min(−Δ_h)` on the fine grid.
    pub fn poincare_constant(&self) -> f64 {
        let g = self.fine_grid();
        let lambda: f64 = (0..g.dim)
            .map(|d| {
                let h = g.h(d);
                let s = (std::f64::consts::PI * h / (2.0 * g.extent(d))).sin();
                4.0 * s * s / (h * h)
            })
            .sum();
        1.0 / lambda
    }
}

/// State handed to observers after each implicit step `t_prev → t`.
pub struct StepView<'a> {
    pub step: usize,
    pub t_prev: f64,
    pub t: f64,
    pub dt: f64,
    pub u_prev: &'a [f64],
    pub u: &'a [f64],
    pub grid: &'a BoxGrid,
}

/// Accumulates space-time quantities during a fine-scale march.
pub trait StepObserver {
    fn observe(&mut self, view: &StepView<'_>);
}

/// Running sums for the discrete energy identity and the a-priori bound.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnergyLedger {
    pub capacity: f64,
    /// `‖u₀‖²`.
    pub initial_sq: f64,
    /// `‖u(·,T)‖²`.
    pub final_sq: f64,
    /// `Σ Δt (L uⁿ⁺¹, uⁿ⁺¹)`, the discrete `∫ a∇u·∇u`.
    pub dissipated: f64,
    /// `Σ Δt (fⁿ⁺¹, uⁿ⁺¹)`.
    pub work: f64,
    /// `Σ Δt ‖∇_h uⁿ⁺¹‖²`.
    pub grad_sq: f64,
    /// `Σ Δt ‖fⁿ⁺¹‖²`.
    pub source_sq: f64,
    /// Numerical dissipation `ε^q Σ ‖uⁿ⁺¹ − uⁿ‖²` of implicit Euler.
    pub numerical: f64,
}

#[derive(Debug, Clone)]
pub struct FineScaleRun {
    pub field: SpaceTimeField,
    pub energy: EnergyLedger,
    pub steps: usize,
    pub dt: f64,
    pub max_step_residual: f64,
}

enum StepSolver {
    /// 1D: face coefficients per phase.
    Tridiagonal(Vec<Vec<f64>>),
    Krylov(Vec<FluxStencil>),
}

/// Marches the ε-problem to `T`, calling every observer after each step.
pub fn solve_finescale(
    field: &CoefficientField,
    cfg: &FineScaleConfig,
    tol: &Tolerances,
    observers: &mut [&mut dyn StepObserver],
) -> Result<FineScaleRun> {
    cfg.validate()?;
    if field.dim() != cfg.dom.dim() {
        return Err(HomogError::config("coefficient and domain dimensions differ"));
    }
    let grid = cfg.fine_grid();
    let lattice = grid.lattice();
    let eps = cfg.eps();
    let period = cfg.time_period();
    let capacity = cfg.capacity();
    let (per_output, dt) = cfg.time_steps();
    let total = per_output * (cfg.dom.n_t - 1);
    let shift = capacity / dt;
    let vol = grid.cell_volume();

    // Phase index of the coefficient at t_{n+1}: reuse stencils when the
    // step divides the micro-period exactly.
    let steps_per_period = period / dt;
    let cached_phases = if field.is_time_independent() {
        Some(1)
    } else if (steps_per_period - steps_per_period.round()).abs() <= 1e-9 * steps_per_period {
        Some(steps_per_period.round() as usize)
    } else {
        None
    };

    // Face midpoints resolve the fast oscillation far better than node averages.
    let build = |phase: f64| -> StepSolver {
        let st = FluxStencil::from_midpoints(lattice, |x| field.evaluate(&[x[0] / eps, x[1] / eps], phase))
            .with_shift(shift);
        if grid.dim == 1 {
            StepSolver::Tridiagonal(vec![(0..lattice.size() - 1).map(|i| st.face_row(0, i)[0]).collect()])
        } else {
            StepSolver::Krylov(vec![st])
        }
    };
    let mut cache: Option<StepSolver> = cached_phases.map(|p| {
        let phases: Vec<StepSolver> = (0..p).map(|k| build(k as f64 / p as f64)).collect();
        let mut iter = phases.into_iter();
        let mut first = iter.next().expect("at least one phase");
        for next in iter {
            match (&mut first, next) {
                (StepSolver::Tridiagonal(a), StepSolver::Tridiagonal(b)) => a.extend(b),
                (StepSolver::Krylov(a), StepSolver::Krylov(b)) => a.extend(b),
                _ => unreachable!(),
            }
        }
        first
    });
    let identity = FluxStencil::constant(lattice, Conductivity::identity(grid.dim));

    let mut u = cfg.dom.initial_on(&grid);
    let times = cfg.dom.times();
    let mut out = SpaceTimeField::zeros(grid.clone(), times.clone());
    out.values[0] = u.clone();

    let mut ledger = EnergyLedger {
        capacity,
        initial_sq: vol * u.iter().map(|v| v * v).sum::<f64>(),
        ..Default::default()
    };
    let f_const = cfg.dom.f.as_constant();
    let f_static = if cfg.dom.f.depends_on(2) { None } else { Some(cfg.dom.source_on(&grid, 0.0)) };
    let settings = KrylovSettings::new(tol.tol_macro, tol.max_iter);
    let mut max_res: f64 = 0.0;
    let n = u.len();
    let mut rhs = vec![0.0; n];
    let mut next = vec![0.0; n];

    for step in 0..total {
        let t_prev = step as f64 * dt;
        let t = (step + 1) as f64 * dt;
        let f_now: std::borrow::Cow<'_, [f64]> = match (&f_static, f_const) {
            (Some(v), _) => std::borrow::Cow::Borrowed(v.as_slice()),
            (None, Some(c)) => std::borrow::Cow::Owned(vec![c; n]),
            (None, None) => std::borrow::Cow::Owned(cfg.dom.source_on(&grid, t)),
        };
        for i in 0..n {
            rhs[i] = shift * u[i] + f_now[i];
        }
        let fresh;
        let (solver, slot) = match (&cache, cached_phases) {
            (Some(c), Some(p)) => (c, (step + 1) % p),
            _ => {
                fresh = build((t / period).fract());
                cache = None;
                (&fresh, 0)
            }
        };
        let (residual, energy) = match solver {
            StepSolver::Tridiagonal(faces) => {
                let a = &faces[slot];
                let h = grid.h(0);
                let inv_h2 = 1.0 / (h * h);
                let lower: Vec<f64> = (0..n).map(|i| -a[i] * inv_h2).collect();
                let upper: Vec<f64> = (0..n).map(|i| -a[i + 1] * inv_h2).collect();
                let diag: Vec<f64> = (0..n).map(|i| shift + (a[i] + a[i + 1]) * inv_h2).collect();
                next.copy_from_slice(&u);
                solve_tridiagonal(&lower, &diag, &upper, &rhs, &mut next);
                let mut r2 = 0.0;
                for i in 0..n {
                    let mut ax = diag[i] * next[i];
                    if i > 0 {
                        ax += lower[i] * next[i - 1];
                    }
                    if i + 1 < n {
                        ax += upper[i] * next[i + 1];
                    }
                    r2 += (rhs[i] - ax).powi(2);
                }
                let bn = norm2(&rhs);
                let res = if bn > 0.0 { r2.sqrt() / bn } else { r2.sqrt() };
                let mut e = 0.0;
                let mut left = 0.0;
                for i in 0..=n {
                    let right = if i < n { next[i] } else { 0.0 };
                    e += a[i] * (right - left).powi(2) / h;
                    left = right;
                }
                (
                    LinearSolveReport {
                        iterations: 1,
                        residual: res,
                        kind: SolverKind::Tridiagonal,
                    },
                    e,
                )
            }
            StepSolver::Krylov(ops) => {
                let op = &ops[slot];
                next.copy_from_slice(&u);
                let rep = if op.is_symmetric() {
                    conjugate_gradient(op, &rhs, &mut next, settings)
                } else {
                    bicgstab(op, &rhs, &mut next, settings)
                }
                .map_err(|e| e.with_solver_context(format!("fine-scale step {step}")))?;
                (rep, op.energy(&next))
            }
        };
        if !(residual.residual <= tol.tol_macro) {
            return Err(HomogError::SolverDiverged {
                context: format!("fine-scale step {step}"),
                report: residual,
            });
        }
        max_res = max_res.max(residual.residual);

        let grad = if grid.dim == 1 {
            let h = grid.h(0);
            let mut g = 0.0;
            let mut left = 0.0;
            for i in 0..=n {
                let right = if i < n { next[i] } else { 0.0 };
                g += (right - left).powi(2) / h;
                left = right;
            }
            g
        } else {
            identity.energy(&next)
        };
        ledger.dissipated += dt * energy;
        ledger.grad_sq += dt * grad;
        ledger.work += dt * vol * next.iter().zip(f_now.iter()).map(|(a, b)| a * b).sum::<f64>();
        ledger.source_sq += dt * vol * f_now.iter().map(|v| v * v).sum::<f64>();
        ledger.numerical += capacity * vol * next.iter().zip(&u).map(|(a, b)| (a - b).powi(2)).sum::<f64>();

        let view = StepView {
            step,
            t_prev,
            t,
            dt,
            u_prev: &u,
            u: &next,
            grid: &grid,
        };
        for obs in observers.iter_mut() {
            obs.observe(&view);
        }
        std::mem::swap(&mut u, &mut next);
        if (step + 1) % per_output == 0 {
            out.values[(step + 1) / per_output] = u.clone();
        }
    }
    ledger.final_sq = vol * u.iter().map(|v| v * v).sum::<f64>();
    Ok(FineScaleRun {
        field: out,
        energy: ledger,
        steps: total,
        dt,
        max_step_residual: max_res,
    })
}

/// Discrete energy identity and a-priori bound of one run.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct EnergyReport {
    /// `ε^q‖u₀‖² + 2∫fu − ε^q‖u(T)‖² − 2∫a∇u·∇u`; equals the numerical dissipation.
    pub defect: f64,
    pub numerical_dissipation: f64,
    /// `‖u_ε‖²_{L²(0,T;H¹₀)}`.
    pub gradient_norm_sq: f64,
    /// `ε^q C0⁻¹ ‖u₀‖² + C0⁻² C₂ ‖f‖²`.
    pub bound: f64,
    pub c0: f64,
    pub poincare: f64,
    pub defect_ok: bool,
    pub bound_holds: bool,
}

pub fn energy_identity_check(cfg: &FineScaleConfig, run: &FineScaleRun, c0: f64) -> EnergyReport {
    let e = &run.energy;
    let lhs = e.capacity * e.final_sq + 2.0 * e.dissipated;
    let rhs = e.capacity * e.initial_sq + 2.0 * e.work;
    let defect = rhs - lhs;
    let c2 = cfg.poincare_constant();
    let bound = e.capacity / c0 * e.initial_sq + c2 / (c0 * c0) * e.source_sq;
    EnergyReport {
        defect,
        numerical_dissipation: e.numerical,
        gradient_norm_sq: e.grad_sq,
        bound,
        c0,
        poincare: c2,
        defect_ok: defect >= -1e-8,
        bound_holds: e.grad_sq <= bound,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regime::parse_rational;

    fn dom(f: &str, u0: &str, t: f64, n_t: usize) -> MacroDomain {
        MacroDomain::new(vec![0.0], vec![1.0], 7, t, n_t, f, u0).unwrap()
    }

    fn cfg(q: &str, r: &str, eps: &str, d: MacroDomain) -> FineScaleConfig {
        FineScaleConfig::new(RegimeExponents::parse(q, r).unwrap(), parse_rational(eps).unwrap(), d)
            .unwrap()
    }

    #[test]
    fn validation() {
        let d = dom("1", "0", 0.1, 3);
        let ex = RegimeExponents::parse("1", "3").unwrap();
        assert!(FineScaleConfig::new(ex, parse_rational("2/7").unwrap(), d.clone()).is_err());
        assert!(FineScaleConfig::new(ex, parse_rational("2").unwrap(), d.clone()).is_err());
        let d2 = MacroDomain::new(vec![0.0], vec![1.1], 7, 0.1, 3, "1", "0").unwrap();
        assert!(FineScaleConfig::new(ex, parse_rational("1/4").unwrap(), d2).is_err());
        let c = FineScaleConfig::new(ex, parse_rational("1/4").unwrap(), d).unwrap();
        assert_eq!(c.fine_grid().cells, vec![64]);
    }

    #[test]
    fn step_size_tied_to_micro_period() {
        let c = cfg("1", "3", "1/8", dom("1", "0", 0.25, 5));
        let (m, dt) = c.time_steps();
        assert_eq!(dt, 0.125f64.powi(3) / 32.0);
        assert_eq!(m * 4, (0.25 / dt).round() as usize);
        // Irrational ε^r: Δt is the largest step below ε^r/32 dividing the interval.
        let c = cfg("1", "5/2", "1/8", dom("1", "0", 0.25, 5));
        let (m, dt) = c.time_steps();
        assert!(dt <= c.time_period() / 32.0);
        assert!((dt * m as f64 - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let c = cfg("1", "3", "1/4", dom("0", "0", 0.01, 3));
        let field = CoefficientField::scalar_1d("2+sin(2*pi*(y-s))").unwrap();
        let run = solve_finescale(&field, &c, &Tolerances::default(), &mut []).unwrap();
        assert_eq!(run.field.max_abs(), 0.0);
        let rep = energy_identity_check(&c, &run, 1.0);
        assert_eq!(rep.defect, 0.0);
        assert_eq!(rep.gradient_norm_sq, 0.0);
    }

    #[test]
    fn doubling_source_doubles_solution() {
        let field = CoefficientField::scalar_1d("2+sin(2*pi*(y-s))").unwrap();
        let c1 = cfg("1", "3", "1/4", dom("1+x", "0", 0.02, 3));
        let c2 = cfg("1", "3", "1/4", dom("2*(1+x)", "0", 0.02, 3));
        let t = Tolerances::default();
        let a = solve_finescale(&field, &c1, &t, &mut []).unwrap();
        let b = solve_finescale(&field, &c2, &t, &mut []).unwrap();
        for (x, y) in a.field.values.iter().flatten().zip(b.field.values.iter().flatten()) {
            assert!((2.0 * x - y).abs() <= 1e-10 * y.abs().max(1e-300) + 1e-14);
        }
    }

    #[test]
    fn identity_coefficient_is_independent_of_r() {
        // With the same Δt grid the runs coincide exactly.
        let field = CoefficientField::identity(1).unwrap();
        let d = dom("2", "0", 1.0 / 64.0, 3);
        let a = cfg("1", "3", "1/4", d.clone()).with_resolution(4, 32).unwrap();
        let b = cfg("1", "4", "1/4", d).with_resolution(4, 8).unwrap();
        assert_eq!(a.time_steps(), b.time_steps());
        let t = Tolerances::default();
        let ra = solve_finescale(&field, &a, &t, &mut []).unwrap();
        let rb = solve_finescale(&field, &b, &t, &mut []).unwrap();
        assert_eq!(ra.field, rb.field);
    }

    #[test]
    fn energy_defect_is_dissipation_and_shrinks_with_dt() {
        let field = CoefficientField::identity(1).unwrap();
        let d = dom("2", "sin(pi*x)", 0.05, 3);
        let t = Tolerances::default();
        let mut defects = Vec::new();
        for n_tpp in [8, 16] {
            let c = cfg("1", "3", "1/8", d.clone()).with_resolution(8, n_tpp).unwrap();
            let run = solve_finescale(&field, &c, &t, &mut []).unwrap();
            let rep = energy_identity_check(&c, &run, 1.0);
            assert!(rep.defect_ok);
            assert!((rep.defect - rep.numerical_dissipation).abs() < 1e-9 * rep.numerical_dissipation.max(1e-12));
            assert!(rep.bound_holds);
            defects.push(rep.defect);
        }
        let ratio = defects[0] / defects[1];
        assert!((ratio - 2.0).abs() < 0.3, "ratio {ratio}");
    }

    #[test]
    fn two_dimensional_run_satisfies_energy_identity() {
        let field = CoefficientField::analytic(&[
            vec!["2+sin(2*pi*(y1-s))".into(), "0".into()],
            vec!["0".into(), "2+cos(2*pi*y2)".into()],
        ])
        .unwrap();
        let d = MacroDomain::new(vec![0.0, 0.0], vec![1.0, 1.0], 3, 0.002, 3, "1", "0").unwrap();
        let c = cfg("1", "3", "1/2", d).with_resolution(4, 4).unwrap();
        let run = solve_finescale(&field, &c, &Tolerances::default(), &mut []).unwrap();
        assert!(run.field.max_abs() > 0.0);
        let rep = energy_identity_check(&c, &run, 1.0);
        assert!(rep.defect_ok && rep.bound_holds);
        assert!((rep.defect - rep.numerical_dissipation).abs() < 1e-8);
    }
}
