//! Local (cell) problems for the correctors `χ_j`, one per regime.
//!
//! * SubCritical: `−∇_y·(a(y,s)(e_j + ∇_y χ_j)) = 0` independently for every slice `s_k`.
//! * Critical: `∂_s χ_j − ∇_y·(a(y,s)(e_j + ∇_y χ_j)) = 0`, periodic in `s`, found as
//!   the fixed point of the implicit-Euler period map.
//! * SuperCritical: the elliptic problem with `ā(y) = ∫_S a(y,s) ds`.
//!
//! All correctors have zero `y`-mean in every slice.

use rayon::prelude::*;

use crate::coefficients::{time_average, AveragedCoefficient, CoefficientField, Conductivity};
use crate::error::{HomogError, Result};
use crate::grid::CellGrid;
use crate::linalg::{
    bicgstab, conjugate_gradient, norm2, relative_residual, remove_mean, KrylovSettings,
    LinearOperator, LinearSolveReport,
};
use crate::regime::Regime;
use crate::stencil::FluxStencil;
use crate::tolerances::Tolerances;

/// Correctors `χ_j(y, s_k)`: `slices[j][k]` holds the nodal values of slice `k`
/// in lattice order. SuperCritical fields have a single slice.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectorField {
    pub regime: Regime,
    pub grid: CellGrid,
    pub slices: Vec<Vec<Vec<f64>>>,
}

impl CorrectorField {
    pub fn zeros(regime: Regime, grid: CellGrid) -> Self {
        let ns = if regime == Regime::SuperCritical { 1 } else { grid.n_s };
        CorrectorField {
            regime,
            grid,
            slices: vec![vec![vec![0.0; grid.node_count()]; ns]; grid.dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.grid.dim
    }

    /// Number of stored `s` slices (1 for SuperCritical).
    pub fn s_extent(&self) -> usize {
        self.slices.first().map_or(0, |s| s.len())
    }

    pub fn slice(&self, j: usize, k: usize) -> &[f64] {
        &self.slices[j][k]
    }

    pub fn max_abs(&self) -> f64 {
        self.slices
            .iter()
            .flatten()
            .flatten()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Largest `|mean_y χ_j(·, s_k)|` over all directions and slices.
    pub fn max_slice_mean(&self) -> f64 {
        self.slices
            .iter()
            .flatten()
            .map(|s| (s.iter().sum::<f64>() / s.len() as f64).abs())
            .fold(0.0, f64::max)
    }

    /// Cell `L²` norm `(Σ_k Δs Σ_i h^N χ²)^{1/2}` summed over directions.
    pub fn l2_norm(&self) -> f64 {
        let vol = self.grid.h().powi(self.dim() as i32) / self.s_extent() as f64;
        let sq: f64 = self.slices.iter().flatten().flatten().map(|v| v * v).sum();
        (sq * vol).sqrt()
    }

    pub fn l2_distance(&self, other: &CorrectorField) -> f64 {
        let vol = self.grid.h().powi(self.dim() as i32) / self.s_extent() as f64;
        let sq: f64 = self
            .slices
            .iter()
            .flatten()
            .flatten()
            .zip(other.slices.iter().flatten().flatten())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        (sq * vol).sqrt()
    }
}

/// Diagnostics of the period-map iteration of the Critical solve.
#[derive(Debug, Clone, Default)]
pub struct PeriodMapReport {
    pub periods: usize,
    /// Relative change `‖χ_new(·,0) − χ_old(·,0)‖ / ‖χ_new(·,0)‖` after each period, per direction.
    pub residuals: Vec<Vec<f64>>,
}

impl PeriodMapReport {
    /// Ratios of successive period-map residuals.
    pub fn contraction_factors(&self) -> Vec<Vec<f64>> {
        self.residuals
            .iter()
            .map(|r| r.windows(2).filter(|w| w[0] > 0.0).map(|w| w[1] / w[0]).collect())
            .collect()
    }
}

fn unit(j: usize) -> [f64; 2] {
    let mut e = [0.0; 2];
    e[j] = 1.0;
    e
}

fn solve_with(
    op: &FluxStencil,
    rhs: &[f64],
    x: &mut [f64],
    settings: KrylovSettings,
) -> Result<LinearSolveReport> {
    if op.is_symmetric() {
        conjugate_gradient(op, rhs, x, settings)
    } else {
        bicgstab(op, rhs, x, settings)
    }
}

fn krylov(tol: &Tolerances) -> KrylovSettings {
    KrylovSettings::new(tol.tol_cell, tol.max_iter).zero_mean()
}

/// Solves the elliptic cell problem for direction `j` with the nodal
/// coefficient `nodal` (one `s`-slice or the time average).
pub fn solve_elliptic_cell(
    nodal: &[Conductivity],
    grid: &CellGrid,
    j: usize,
    tol: &Tolerances,
) -> Result<(Vec<f64>, LinearSolveReport)> {
    if j >= grid.dim {
        return Err(HomogError::config(format!("direction {j} out of range")));
    }
    let op = FluxStencil::new(grid.lattice(), nodal);
    let rhs = op.background_source(unit(j));
    let mut chi = vec![0.0; op.unknown_count()];
    let report = solve_with(&op, &rhs, &mut chi, krylov(tol))?;
    remove_mean(&mut chi);
    Ok((chi, report))
}

/// Conservative-flux residual `‖−div_h(a(e_j + ∇_h χ))‖ / ‖div_h(a e_j)‖` of a corrector slice.
pub fn flux_residual(nodal: &[Conductivity], grid: &CellGrid, j: usize, chi: &[f64]) -> f64 {
    let op = FluxStencil::new(grid.lattice(), nodal);
    let rhs = op.background_source(unit(j));
    relative_residual(&op, &rhs, chi)
}

/// SubCritical correctors: an independent elliptic solve for each `s_k = k/n_s`.
pub fn solve_elliptic_cell_family(
    field: &CoefficientField,
    grid: &CellGrid,
    tol: &Tolerances,
) -> Result<CorrectorField> {
    check_dims(field, grid)?;
    let tasks: Vec<(usize, usize)> = (0..grid.dim)
        .flat_map(|j| (0..grid.n_s).map(move |k| (j, k)))
        .collect();
    let solved: Vec<Result<((usize, usize), Vec<f64>)>> = tasks
        .par_iter()
        .map(|&(j, k)| {
            let nodal = field.sample_nodes(grid, grid.s_at(k));
            solve_elliptic_cell(&nodal, grid, j, tol)
                .map(|(chi, _)| ((j, k), chi))
                .map_err(|e| e.with_solver_context(format!("elliptic cell j={j} s_k={}", grid.s_at(k))))
        })
        .collect();
    let mut out = CorrectorField::zeros(Regime::SubCritical, *grid);
    for item in solved {
        let ((j, k), chi) = item?;
        out.slices[j][k] = chi;
    }
    Ok(out)
}

/// SuperCritical correctors from the time-averaged coefficient.
pub fn solve_averaged_cell(
    avg: &AveragedCoefficient,
    tol: &Tolerances,
) -> Result<CorrectorField> {
    let grid = avg.grid;
    if !(avg.min_sym_eigenvalue() > 0.0) {
        return Err(HomogError::Validation(
            "time-averaged coefficient is not coercive".into(),
        ));
    }
    let solved: Vec<Result<Vec<f64>>> = (0..grid.dim)
        .into_par_iter()
        .map(|j| {
            solve_elliptic_cell(&avg.values, &grid, j, tol)
                .map(|(chi, _)| chi)
                .map_err(|e| e.with_solver_context(format!("averaged cell j={j}")))
        })
        .collect();
    let mut out = CorrectorField::zeros(Regime::SuperCritical, grid);
    for (j, chi) in solved.into_iter().enumerate() {
        out.slices[j][0] = chi?;
    }
    Ok(out)
}

/// Critical correctors: the `S`-periodic solution of the parabolic cell
/// problem, by iterating the implicit-Euler period map from `χ = 0`.
pub fn solve_parabolic_cell(
    field: &CoefficientField,
    grid: &CellGrid,
    tol: &Tolerances,
) -> Result<(CorrectorField, PeriodMapReport)> {
    check_dims(field, grid)?;
    let ns = grid.n_s;
    let inv_ds = ns as f64;
    let lattice = grid.lattice();
    // Step k advances s_k -> s_{k+1} with the coefficient at s_{k+1}.
    let steps: Vec<FluxStencil> = (0..ns)
        .into_par_iter()
        .map(|k| {
            let nodal = field.sample_nodes(grid, grid.s_at((k + 1) % ns));
            FluxStencil::new(lattice, &nodal).with_shift(inv_ds)
        })
        .collect();
    let settings = krylov(tol);

    let per_direction: Vec<Result<(Vec<Vec<f64>>, Vec<f64>)>> = (0..grid.dim)
        .into_par_iter()
        .map(|j| {
            let sources: Vec<Vec<f64>> = steps.iter().map(|op| op.background_source(unit(j))).collect();
            let n = grid.node_count();
            let mut start = vec![0.0; n];
            let mut history = Vec::new();
            for _period in 0..tol.max_periods {
                let mut slices = Vec::with_capacity(ns);
                let mut chi = start.clone();
                for (k, op) in steps.iter().enumerate() {
                    slices.push(chi.clone());
                    let rhs: Vec<f64> = chi
                        .iter()
                        .zip(&sources[k])
                        .map(|(c, src)| c * inv_ds + src)
                        .collect();
                    let mut next = chi.clone();
                    solve_with(op, &rhs, &mut next, settings).map_err(|e| {
                        e.with_solver_context(format!("parabolic cell j={j} step {k}"))
                    })?;
                    remove_mean(&mut next);
                    chi = next;
                }
                let diff: Vec<f64> = chi.iter().zip(&start).map(|(a, b)| a - b).collect();
                let change = norm2(&diff);
                let scale = norm2(&chi);
                let rel = if scale > 0.0 { change / scale } else { change };
                history.push(rel);
                if change <= tol.tol_period * scale {
                    return Ok((slices, history));
                }
                start = chi;
            }
            Err(HomogError::PeriodMapStalled {
                periods: tol.max_periods,
                history,
            })
        })
        .collect();

    let mut out = CorrectorField::zeros(Regime::Critical, *grid);
    let mut report = PeriodMapReport::default();
    for (j, res) in per_direction.into_iter().enumerate() {
        let (slices, history) = res?;
        report.periods = report.periods.max(history.len());
        report.residuals.push(history);
        out.slices[j] = slices;
    }
    Ok((out, report))
}

/// Dispatches to the local problem selected by `regime`.
pub fn solve_correctors(
    field: &CoefficientField,
    grid: &CellGrid,
    regime: Regime,
    tol: &Tolerances,
) -> Result<CorrectorField> {
    match regime {
        Regime::SubCritical => solve_elliptic_cell_family(field, grid, tol),
        Regime::Critical => solve_parabolic_cell(field, grid, tol).map(|(c, _)| c),
        Regime::SuperCritical => solve_averaged_cell(&time_average(field, grid)?, tol),
    }
}

fn check_dims(field: &CoefficientField, grid: &CellGrid) -> Result<()> {
    if field.dim() != grid.dim {
        return Err(HomogError::config(format!(
            "coefficient is {}D but cell grid is {}D",
            field.dim(),
            grid.dim
        )));
    }
    Ok(())
}

/// Discrete parabolic residual of slice `k → k+1` (for diagnostics and tests).
pub fn parabolic_step_residual(
    field: &CoefficientField,
    correctors: &CorrectorField,
    j: usize,
    k: usize,
) -> f64 {
    let grid = &correctors.grid;
    let ns = grid.n_s;
    let nodal = field.sample_nodes(grid, grid.s_at((k + 1) % ns));
    let op = FluxStencil::new(grid.lattice(), &nodal).with_shift(ns as f64);
    let src = op.background_source(unit(j));
    let prev = correctors.slice(j, k);
    let next = correctors.slice(j, (k + 1) % ns);
    let rhs: Vec<f64> = prev.iter().zip(&src).map(|(c, s)| c * ns as f64 + s).collect();
    let mut lhs = vec![0.0; next.len()];
    op.apply(next, &mut lhs);
    let r: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect();
    norm2(&r) / norm2(&rhs).max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    /// 1D oracle: b = (∫ a⁻¹)⁻¹ by a 10^6-point midpoint rule.
    fn harmonic_mean_oracle(a: impl Fn(f64) -> f64) -> f64 {
        let n = 1_000_000;
        let s: f64 = (0..n).map(|i| 1.0 / a((i as f64 + 0.5) / n as f64)).sum();
        n as f64 / s
    }

    #[test]
    fn identity_gives_zero_corrector() {
        let grid = CellGrid::new(2, 8, 4).unwrap();
        let nodal = vec![Conductivity::identity(2); grid.node_count()];
        for j in 0..2 {
            let (chi, rep) = solve_elliptic_cell(&nodal, &grid, j, &tol()).unwrap();
            assert!(chi.iter().all(|v| *v == 0.0));
            assert_eq!(rep.iterations, 0);
        }
    }

    #[test]
    fn one_dimensional_constant_flux() {
        let b_exact = harmonic_mean_oracle(|y| 2.0 + (2.0 * PI * y).sin());
        assert!((b_exact - 3f64.sqrt()).abs() < 1e-12);
        let mut prev_defect = f64::INFINITY;
        for n_y in [32, 64, 128, 256] {
            let grid = CellGrid::new(1, n_y, 2).unwrap();
            let field = CoefficientField::scalar_1d("2+sin(2*pi*y)").unwrap();
            let nodal = field.sample_nodes(&grid, 0.0);
            let (chi, rep) = solve_elliptic_cell(&nodal, &grid, 0, &tol()).unwrap();
            assert!(rep.residual <= 1e-10);
            assert!(flux_residual(&nodal, &grid, 0, &chi) <= 1e-10);
            let op = FluxStencil::new(grid.lattice(), &nodal);
            let flux = op.fluxes(&chi, [1.0, 0.0]);
            let defect = flux[0].iter().map(|q| (q - b_exact).abs()).fold(0.0, f64::max);
            // Flux is constant across faces up to solver tolerance.
            let spread = flux[0].iter().fold(f64::NEG_INFINITY, |m, q| m.max(*q))
                - flux[0].iter().fold(f64::INFINITY, |m, q| m.min(*q));
            assert!(spread < 1e-8);
            if prev_defect.is_finite() {
                let order = (prev_defect / defect).log2();
                assert!((order - 2.0).abs() < 0.1, "order {order}");
            }
            prev_defect = defect;
        }
    }

    #[test]
    fn laminate_transverse_corrector_vanishes() {
        let grid = CellGrid::new(2, 16, 2).unwrap();
        let field = CoefficientField::analytic(&[
            vec!["2+sin(2*pi*y1)".into(), "0".into()],
            vec!["0".into(), "2+sin(2*pi*y1)".into()],
        ])
        .unwrap();
        let nodal = field.sample_nodes(&grid, 0.0);
        let (chi, _) = solve_elliptic_cell(&nodal, &grid, 1, &tol()).unwrap();
        assert!(chi.iter().all(|v| v.abs() < 1e-14));
        let (chi1, _) = solve_elliptic_cell(&nodal, &grid, 0, &tol()).unwrap();
        assert!(chi1.iter().any(|v| v.abs() > 1e-3));
    }

    #[test]
    fn family_for_s_independent_field_has_identical_slices() {
        let grid = CellGrid::new(1, 32, 8).unwrap();
        let field = CoefficientField::scalar_1d("2+sin(2*pi*y)").unwrap();
        let c = solve_elliptic_cell_family(&field, &grid, &tol()).unwrap();
        for k in 1..8 {
            let d: f64 = c.slice(0, k).iter().zip(c.slice(0, 0)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(d < 1e-9);
        }
    }

    #[test]
    fn family_traveling_wave_is_shifted() {
        // n_y = n_s: slice k is slice 0 translated by k nodes.
        let grid = CellGrid::new(1, 32, 32).unwrap();
        let field = CoefficientField::scalar_1d("2+sin(2*pi*(y-s))").unwrap();
        let c = solve_elliptic_cell_family(&field, &grid, &tol()).unwrap();
        let base = c.slice(0, 0);
        for k in [1, 5, 17] {
            let shifted: Vec<f64> = (0..32).map(|i| base[(i + 32 - k) % 32]).collect();
            let d = c.slice(0, k).iter().zip(&shifted).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(d < 1e-8, "k={k} d={d}");
        }
    }

    #[test]
    fn identity_all_regimes_zero() {
        let grid = CellGrid::new(2, 8, 4).unwrap();
        let field = CoefficientField::identity(2).unwrap();
        for regime in Regime::ALL {
            let c = solve_correctors(&field, &grid, regime, &tol()).unwrap();
            assert_eq!(c.max_abs(), 0.0);
            assert_eq!(c.regime, regime);
        }
    }

    #[test]
    fn parabolic_matches_elliptic_for_s_independent() {
        let grid = CellGrid::new(1, 32, 16).unwrap();
        let field = CoefficientField::scalar_1d("2+sin(2*pi*y)").unwrap();
        let t = tol();
        let (par, rep) = solve_parabolic_cell(&field, &grid, &t).unwrap();
        let ell = solve_elliptic_cell_family(&field, &grid, &t).unwrap();
        assert!(par.l2_distance(&ell) <= 10.0 * t.tol_period * ell.l2_norm().max(1.0));
        assert!(rep.periods >= 1);
        // ∂_s χ = 0 between slices.
        for k in 1..16 {
            let d = par.slice(0, k).iter().zip(par.slice(0, k - 1)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(d < 1e-8);
        }
    }

    #[test]
    fn parabolic_traveling_wave_is_time_dependent_and_periodic() {
        let grid = CellGrid::new(1, 32, 32).unwrap();
        let field = CoefficientField::scalar_1d("2+sin(2*pi*(y-s))").unwrap();
        let t = tol();
        let (par, rep) = solve_parabolic_cell(&field, &grid, &t).unwrap();
        let d01: f64 = par.slice(0, 1).iter().zip(par.slice(0, 0)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(d01 > 1e-3);
        for k in 0..32 {
            assert!(parabolic_step_residual(&field, &par, 0, k) < 1e-8, "k={k}");
        }
        assert!(par.max_slice_mean() <= 1e-10 * par.max_abs());
        for factors in rep.contraction_factors() {
            assert!(factors.iter().all(|f| *f < 1.0), "{factors:?}");
        }
    }

    #[test]
    fn averaged_cell_examples() {
        let grid = CellGrid::new(1, 32, 16).unwrap();
        let tw = CoefficientField::scalar_1d("2+sin(2*pi*(y-s))").unwrap();
        let c = solve_averaged_cell(&time_average(&tw, &grid).unwrap(), &tol()).unwrap();
        assert!(c.max_abs() < 1e-12);
        assert_eq!(c.s_extent(), 1);

        // Scaling by ∫(2+cos 2πs) ds = 2 leaves χ unchanged.
        let sep = CoefficientField::scalar_1d("(2+sin(2*pi*y))*(2+cos(2*pi*s))").unwrap();
        let plain = CoefficientField::scalar_1d("2+sin(2*pi*y)").unwrap();
        let a = solve_averaged_cell(&time_average(&sep, &grid).unwrap(), &tol()).unwrap();
        let (b, _) = solve_elliptic_cell(&plain.sample_nodes(&grid, 0.0), &grid, 0, &tol()).unwrap();
        let d = a.slice(0, 0).iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(d < 1e-9);

        // s-independent field: same as the elliptic solve.
        let e = solve_averaged_cell(&time_average(&plain, &grid).unwrap(), &tol()).unwrap();
        let d = e.slice(0, 0).iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(d < 1e-9);
    }

    #[test]
    fn full_matrix_uses_bicgstab_and_converges() {
        let grid = CellGrid::new(2, 16, 2).unwrap();
        let field = CoefficientField::analytic(&[
            vec!["3+cos(2*pi*y1)".into(), "0.5*sin(2*pi*y2)".into()],
            vec!["0.2".into(), "2+sin(2*pi*(y1+y2))".into()],
        ])
        .unwrap();
        let nodal = field.sample_nodes(&grid, 0.0);
        for j in 0..2 {
            let (chi, rep) = solve_elliptic_cell(&nodal, &grid, j, &tol()).unwrap();
            assert_eq!(rep.kind, crate::linalg::SolverKind::BiCgStab);
            assert!(flux_residual(&nodal, &grid, j, &chi) <= 1e-10);
            let mean = chi.iter().sum::<f64>() / chi.len() as f64;
            let mx = chi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(mean.abs() <= 1e-10 * mx);
        }
    }

    #[test]
    fn scalar_scaling_leaves_correctors_unchanged() {
        let grid = CellGrid::new(1, 32, 8).unwrap();
        let field = CoefficientField::scalar_1d("2+sin(2*pi*(y-s))").unwrap();
        let scaled = field.scaled(3.5).unwrap();
        for regime in [Regime::SubCritical, Regime::SuperCritical] {
            let a = solve_correctors(&field, &grid, regime, &tol()).unwrap();
            let b = solve_correctors(&scaled, &grid, regime, &tol()).unwrap();
            assert!(a.l2_distance(&b) < 1e-8);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let grid = CellGrid::new(2, 8, 4).unwrap();
        let field = CoefficientField::identity(1).unwrap();
        assert!(solve_elliptic_cell_family(&field, &grid, &tol()).is_err());
    }
}
