//! The homogenized conductivity `b` assembled from discrete corrector fluxes.

use serde::Serialize;

use crate::coefficients::{time_average, CoefficientField, Conductivity};
use crate::cellproblems::CorrectorField;
use crate::error::{HomogError, Result};
use crate::grid::CellGrid;
use crate::linalg::sym2_eigenvalues;
use crate::regime::Regime;
use crate::stencil::FluxStencil;
use crate::tolerances::Tolerances;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Provenance {
    pub n_y: usize,
    pub n_s: usize,
    pub tol_cell: f64,
    pub tol_period: f64,
}

/// The effective tensor `b`, stored full (no symmetry imposed).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EffectiveTensor {
    pub dim: usize,
    pub b: [[f64; 2]; 2],
    pub regime: Regime,
    pub provenance: Provenance,
}

impl EffectiveTensor {
    /// A tensor not derived from cell problems (tests, constant-coefficient runs).
    pub fn from_matrix(dim: usize, b: [[f64; 2]; 2], regime: Regime) -> Self {
        EffectiveTensor {
            dim,
            b,
            regime,
            provenance: Provenance {
                n_y: 0,
                n_s: 0,
                tol_cell: 0.0,
                tol_period: 0.0,
            },
        }
    }

    pub fn scalar(b: f64, regime: Regime) -> Self {
        Self::from_matrix(1, [[b, 0.0], [0.0, 0.0]], regime)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.b[i][j]
    }

    pub fn as_conductivity(&self) -> Conductivity {
        Conductivity { dim: self.dim, m: self.b }
    }

    pub fn min_sym_eigenvalue(&self) -> f64 {
        self.as_conductivity().min_sym_eigenvalue()
    }

    /// Row-major entries `b11, b12, …`.
    pub fn entries(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim * self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                v.push(self.b[i][j]);
            }
        }
        v
    }

    /// Minimum of `ξ·bξ` over `n` unit vectors sampled on the circle.
    pub fn sampled_coercivity(&self, n: usize) -> f64 {
        if self.dim == 1 {
            return self.b[0][0];
        }
        (0..n)
            .map(|k| {
                let th = std::f64::consts::PI * k as f64 / n as f64;
                let (c, s) = (th.cos(), th.sin());
                c * c * self.b[0][0] + c * s * (self.b[0][1] + self.b[1][0]) + s * s * self.b[1][1]
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_entry_distance(&self, other: &EffectiveTensor) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                d = d.max((self.b[i][j] - other.b[i][j]).abs());
            }
        }
        d
    }
}

/// Column `j` of `b` is the mean discrete flux `⟨a(e_j + ∇_h χ_j)⟩` over `Y × S`,
/// rectangle rule on the stored slices.
pub fn effective_tensor(
    field: &CoefficientField,
    correctors: &CorrectorField,
    grid: &CellGrid,
    tol: &Tolerances,
) -> Result<EffectiveTensor> {
    if correctors.grid != *grid {
        return Err(HomogError::config("correctors were solved on a different cell grid"));
    }
    if field.dim() != grid.dim {
        return Err(HomogError::config("coefficient and cell grid dimensions differ"));
    }
    let expected_slices = match correctors.regime {
        Regime::SuperCritical => 1,
        _ => grid.n_s,
    };
    if correctors.s_extent() != expected_slices {
        return Err(HomogError::config(format!(
            "{} correctors must have {expected_slices} slices, found {}",
            correctors.regime,
            correctors.s_extent()
        )));
    }
    let lattice = grid.lattice();
    let dim = grid.dim;
    let mut b = [[0.0; 2]; 2];
    let nodal_slices: Vec<Vec<Conductivity>> = match correctors.regime {
        Regime::SuperCritical => vec![time_average(field, grid)?.values],
        _ => (0..grid.n_s).map(|k| field.sample_nodes(grid, grid.s_at(k))).collect(),
    };
    let w = 1.0 / nodal_slices.len() as f64;
    for (k, nodal) in nodal_slices.iter().enumerate() {
        let op = FluxStencil::new(lattice, nodal);
        for j in 0..dim {
            let mut e = [0.0; 2];
            e[j] = 1.0;
            let flux = op.mean_flux(correctors.slice(j, k), e);
            for i in 0..dim {
                b[i][j] += w * flux[i];
            }
        }
    }
    Ok(EffectiveTensor {
        dim,
        b,
        regime: correctors.regime,
        provenance: Provenance {
            n_y: grid.n_y,
            n_s: grid.n_s,
            tol_cell: tol.tol_cell,
            tol_period: tol.tol_period,
        },
    })
}

/// Reuss/Voigt-type sanity bounds in 1D.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundsReport {
    /// `min_s (∫_Y a(·,s)⁻¹ dy)⁻¹`.
    pub lower: f64,
    /// `∫_{Y×S} a dy ds`.
    pub upper: f64,
    pub b: f64,
    pub lower_ok: bool,
    pub upper_ok: bool,
}

impl BoundsReport {
    pub fn passed(&self) -> bool {
        self.lower_ok && self.upper_ok
    }
}

/// Checks `lower − tol ≤ b ≤ upper + tol` with midpoint quadrature on
/// `n_quad` points in `y` and `n_s` slices in `s`.
pub fn check_bounds_1d(
    field: &CoefficientField,
    b: &EffectiveTensor,
    n_quad: usize,
    n_s: usize,
    tol: f64,
) -> Result<BoundsReport> {
    if field.dim() != 1 || b.dim != 1 {
        return Err(HomogError::config("bounds check is only defined in 1D"));
    }
    let mut lower = f64::INFINITY;
    let mut upper = 0.0;
    for k in 0..n_s {
        let s = k as f64 / n_s as f64;
        let (mut inv, mut mean) = (0.0, 0.0);
        for i in 0..n_quad {
            let a = field.evaluate(&[(i as f64 + 0.5) / n_quad as f64], s).m[0][0];
            inv += 1.0 / a;
            mean += a;
        }
        lower = f64::min(lower, n_quad as f64 / inv);
        upper += mean / (n_quad * n_s) as f64;
    }
    let value = b.b[0][0];
    Ok(BoundsReport {
        lower,
        upper,
        b: value,
        lower_ok: value >= lower - tol,
        upper_ok: value <= upper + tol,
    })
}

/// Smallest eigenvalue of `(b + bᵀ)/2` (convenience for reports).
pub fn sym_min_eig(b: &[[f64; 2]; 2], dim: usize) -> f64 {
    if dim == 1 {
        b[0][0]
    } else {
        sym2_eigenvalues(b[0][0], 0.5 * (b[0][1] + b[1][0]), b[1][1]).0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cellproblems::{solve_correctors, solve_elliptic_cell};
    use crate::coefficients::verify_coercivity;
    use proptest::prelude::*;

    const SQRT3: f64 = 1.732_050_807_568_877_2;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    fn tensor(field: &CoefficientField, grid: &CellGrid, regime: Regime) -> EffectiveTensor {
        let c = solve_correctors(field, grid, regime, &tol()).unwrap();
        effective_tensor(field, &c, grid, &tol()).unwrap()
    }

    #[test]
    fn identity_all_regimes() {
        for dim in [1, 2] {
            let grid = CellGrid::new(dim, 8, 4).unwrap();
            let field = CoefficientField::identity(dim).unwrap();
            for regime in Regime::ALL {
                let b = tensor(&field, &grid, regime);
                let id = EffectiveTensor::from_matrix(dim, Conductivity::identity(dim).m, regime);
                assert!(b.max_entry_distance(&id) <= 1e-12);
            }
        }
    }

    #[test]
    fn harmonic_mean_in_1d() {
        let field = CoefficientField::scalar_1d("2+sin(2*pi*y)").unwrap();
        let grid = CellGrid::new(1, 256, 4).unwrap();
        let b = tensor(&field, &grid, Regime::SubCritical);
        assert!((b.get(0, 0) - SQRT3).abs() < 1e-4);
        let rep = check_bounds_1d(&field, &b, 4096, 4, 1e-6).unwrap();
        assert!(rep.passed());
        assert!((rep.lower - SQRT3).abs() < 1e-10);
        assert!((rep.upper - 2.0).abs() < 1e-10);
    }

    #[test]
    fn traveling_wave_supercritical_is_two() {
        let field = CoefficientField::scalar_1d("2+sin(2*pi*(y-s))").unwrap();
        let grid = CellGrid::new(1, 64, 64).unwrap();
        let b = tensor(&field, &grid, Regime::SuperCritical);
        assert!((b.get(0, 0) - 2.0).abs() < 1e-8);
    }

    #[test]
    fn identity_bounds() {
        let field = CoefficientField::identity(1).unwrap();
        let b = EffectiveTensor::scalar(1.0, Regime::SubCritical);
        let rep = check_bounds_1d(&field, &b, 64, 4, 1e-12).unwrap();
        assert!(rep.passed());
        assert_eq!((rep.lower, rep.upper), (1.0, 1.0));
        let bad = EffectiveTensor::scalar(1.5, Regime::SubCritical);
        assert!(!check_bounds_1d(&field, &bad, 64, 4, 1e-12).unwrap().upper_ok);
    }

    #[test]
    fn subcritical_is_mean_of_slice_tensors() {
        let field = CoefficientField::scalar_1d("2+sin(2*pi*y)*(1+0.5*cos(2*pi*s))").unwrap();
        let grid = CellGrid::new(1, 64, 8).unwrap();
        let b = tensor(&field, &grid, Regime::SubCritical);
        let mut mean = 0.0;
        for k in 0..8 {
            let nodal = field.sample_nodes(&grid, grid.s_at(k));
            let (chi, _) = solve_elliptic_cell(&nodal, &grid, 0, &tol()).unwrap();
            let op = FluxStencil::new(grid.lattice(), &nodal);
            mean += op.mean_flux(&chi, [1.0, 0.0])[0] / 8.0;
        }
        assert!((b.get(0, 0) - mean).abs() < 1e-12);
    }

    #[test]
    fn laminate_gives_harmonic_and_arithmetic_means() {
        let field = CoefficientField::analytic(&[
            vec!["2+sin(2*pi*y1)".into(), "0".into()],
            vec!["0".into(), "2+sin(2*pi*y1)".into()],
        ])
        .unwrap();
        let grid = CellGrid::new(2, 32, 2).unwrap();
        let b = tensor(&field, &grid, Regime::SubCritical);
        assert!((b.get(0, 0) - SQRT3).abs() < 5e-3);
        assert!((b.get(1, 1) - 2.0).abs() < 1e-10);
        assert!(b.get(0, 1).abs() < 1e-12 && b.get(1, 0).abs() < 1e-12);
    }

    #[test]
    fn regime_collapse_for_s_independent_field() {
        let field = CoefficientField::analytic(&[
            vec!["2+sin(2*pi*y1)".into(), "0.3*cos(2*pi*y2)".into()],
            vec!["0.3*cos(2*pi*y2)".into(), "3+cos(2*pi*(y1-y2))".into()],
        ])
        .unwrap();
        let grid = CellGrid::new(2, 16, 4).unwrap();
        let t = tol();
        let bs: Vec<EffectiveTensor> = Regime::ALL.iter().map(|r| tensor(&field, &grid, *r)).collect();
        for a in &bs {
            for b in &bs {
                assert!(a.max_entry_distance(b) <= 10.0 * t.tol_cell.max(t.tol_period));
            }
        }
        let c0 = verify_coercivity(&field, 64).unwrap().c0;
        for b in &bs {
            assert!(b.sampled_coercivity(64) >= c0 - t.tol_b);
        }
    }

    #[test]
    fn mismatched_inputs_rejected() {
        let field = CoefficientField::identity(1).unwrap();
        let g1 = CellGrid::new(1, 8, 4).unwrap();
        let g2 = CellGrid::new(1, 16, 4).unwrap();
        let c = solve_correctors(&field, &g1, Regime::SubCritical, &tol()).unwrap();
        assert!(effective_tensor(&field, &c, &g2, &tol()).is_err());
        let mut bad = c.clone();
        bad.regime = Regime::SuperCritical;
        assert!(effective_tensor(&field, &bad, &g1, &tol()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn linear_in_scalar_scale(c in 0.2f64..5.0) {
            let field = CoefficientField::scalar_1d("2+sin(2*pi*(y-s))").unwrap();
            let grid = CellGrid::new(1, 32, 8).unwrap();
            for regime in [Regime::SubCritical, Regime::SuperCritical] {
                let b = tensor(&field, &grid, regime);
                let bc = tensor(&field.scaled(c).unwrap(), &grid, regime);
                prop_assert!((bc.get(0, 0) - c * b.get(0, 0)).abs() < 1e-8 * c);
            }
        }
    }
}
