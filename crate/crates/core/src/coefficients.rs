//! The `Y×S`-periodic conductivity `a(y,s)` and its time average.

use std::path::Path;

use crate::error::{HomogError, Result};
use crate::expr::{Expr, VarSet};
use crate::grid::CellGrid;
use crate::linalg::sym2_eigenvalues;

/// Default validation resolution per dimension for coercivity checks.
pub const DEFAULT_COERCIVITY_GRID: usize = 64;

/// A conductivity matrix at one point; `dim` is 1 or 2 and unused entries are zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conductivity {
    pub dim: usize,
    pub m: [[f64; 2]; 2],
}

impl Conductivity {
    pub fn zero(dim: usize) -> Self {
        Conductivity { dim, m: [[0.0; 2]; 2] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut c = Self::zero(dim);
        for i in 0..dim {
            c.m[i][i] = 1.0;
        }
        c
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[i][j]
    }

    /// Smallest eigenvalue of the symmetric part.
    pub fn min_sym_eigenvalue(&self) -> f64 {
        if self.dim == 1 {
            self.m[0][0]
        } else {
            let off = 0.5 * (self.m[0][1] + self.m[1][0]);
            sym2_eigenvalues(self.m[0][0], off, self.m[1][1]).0
        }
    }

    pub fn max_abs_entry(&self) -> f64 {
        let mut mx: f64 = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                mx = mx.max(self.m[i][j].abs());
            }
        }
        mx
    }

    pub fn add_scaled(&mut self, other: &Conductivity, w: f64) {
        for i in 0..self.dim {
            for j in 0..self.dim {
                self.m[i][j] += w * other.m[i][j];
            }
        }
    }

    pub fn lerp(&self, other: &Conductivity, t: f64) -> Conductivity {
        let mut out = *self;
        for i in 0..self.dim {
            for j in 0..self.dim {
                out.m[i][j] = (1.0 - t) * self.m[i][j] + t * other.m[i][j];
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
enum Kind {
    Analytic { entries: Vec<Vec<Expr>> },
    Tabulated { n_y: usize, n_s: usize, data: Vec<f64> },
}

/// The periodic conductivity field. Immutable once built.
#[derive(Debug, Clone)]
pub struct CoefficientField {
    dim: usize,
    kind: Kind,
    symmetric: bool,
    diagonal: bool,
    time_independent: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoercivityEstimate {
    pub c0: f64,
    pub max_entry: f64,
    pub argmin_y: [f64; 2],
    pub argmin_s: f64,
}

fn wrap(v: f64) -> f64 {
    let w = v.rem_euclid(1.0);
    // rem_euclid can round up to exactly 1.0 for tiny negative inputs.
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

impl CoefficientField {
    /// Builds an analytic field from `dim × dim` expressions in `y1, y2, s`.
    pub fn analytic(entries: &[Vec<String>]) -> Result<Self> {
        let dim = entries.len();
        if !(1..=2).contains(&dim) || entries.iter().any(|row| row.len() != dim) {
            return Err(HomogError::config(
                "coefficient entries must form a 1x1 or 2x2 matrix",
            ));
        }
        let vars = VarSet::cell();
        let periodic = [0, 1, 2];
        let mut parsed = Vec::with_capacity(dim);
        for row in entries {
            let mut prow = Vec::with_capacity(dim);
            for src in row {
                let e = Expr::parse(src, &vars)?;
                e.check_periodic(&periodic)?;
                if dim == 1 && e.depends_on(1) {
                    return Err(HomogError::config(format!(
                        "1D coefficient `{src}` references y2"
                    )));
                }
                prow.push(e);
            }
            parsed.push(prow);
        }
        let symmetric = dim == 1 || parsed[0][1] == parsed[1][0];
        let diagonal = dim == 1
            || (parsed[0][1].as_constant() == Some(0.0) && parsed[1][0].as_constant() == Some(0.0));
        let time_independent = parsed.iter().flatten().all(|e| !e.depends_on(2));
        Ok(CoefficientField {
            dim,
            kind: Kind::Analytic { entries: parsed },
            symmetric,
            diagonal,
            time_independent,
        })
    }

    /// Convenience for the scalar 1D case.
    pub fn scalar_1d(expr: &str) -> Result<Self> {
        Self::analytic(&[vec![expr.to_string()]])
    }

    pub fn identity(dim: usize) -> Result<Self> {
        let entries: Vec<Vec<String>> = (0..dim)
            .map(|i| (0..dim).map(|j| if i == j { "1" } else { "0" }.to_string()).collect())
            .collect();
        Self::analytic(&entries)
    }

    /// Builds a tabulated field from samples at `y = i/n_y` (per dimension) and
    /// `s = k/n_s`. Layout is row-major `[i1][i2][k][row][col]`.
    pub fn tabulated(dim: usize, n_y: usize, n_s: usize, data: Vec<f64>) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(HomogError::config(format!("dimension must be 1 or 2, got {dim}")));
        }
        if n_y == 0 || n_s == 0 {
            return Err(HomogError::config("tabulated grid must be non-empty"));
        }
        let expected = n_y.pow(dim as u32) * n_s * dim * dim;
        if data.len() != expected {
            return Err(HomogError::config(format!(
                "tabulated coefficient has {} values, grid [{n_y}, {n_s}] in {dim}D needs {expected}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(HomogError::config("tabulated coefficient contains non-finite values"));
        }
        let per_point = dim * dim;
        let points = data.len() / per_point;
        let entry = |p: usize, i: usize, j: usize| data[p * per_point + i * dim + j];
        let symmetric = dim == 1 || (0..points).all(|p| entry(p, 0, 1) == entry(p, 1, 0));
        let diagonal = dim == 1 || (0..points).all(|p| entry(p, 0, 1) == 0.0 && entry(p, 1, 0) == 0.0);
        let time_independent = n_s == 1 || {
            let block = n_s * per_point;
            data.chunks(block).all(|c| c.chunks(per_point).all(|m| m == &c[..per_point]))
        };
        Ok(CoefficientField {
            dim,
            kind: Kind::Tabulated { n_y, n_s, data },
            symmetric,
            diagonal,
            time_independent,
        })
    }

    /// Reads little-endian f64 samples from `path`; see [`Self::tabulated`].
    pub fn tabulated_from_file(dim: usize, n_y: usize, n_s: usize, path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        if bytes.len() % 8 != 0 {
            return Err(HomogError::config(format!(
                "{} is not a whole number of f64 values",
                path.display()
            )));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Self::tabulated(dim, n_y, n_s, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// True when off-diagonal entries vanish identically.
    pub fn is_diagonal(&self) -> bool {
        self.diagonal
    }

    pub fn is_time_independent(&self) -> bool {
        self.time_independent
    }

    /// `a(y, s)` with both arguments wrapped into the unit period.
    pub fn evaluate(&self, y: &[f64], s: f64) -> Conductivity {
        let y1 = wrap(y.first().copied().unwrap_or(0.0));
        let y2 = if self.dim == 2 { wrap(y.get(1).copied().unwrap_or(0.0)) } else { 0.0 };
        let s = wrap(s);
        match &self.kind {
            Kind::Analytic { entries } => {
                let args = [y1, y2, s];
                let mut c = Conductivity::zero(self.dim);
                for (i, row) in entries.iter().enumerate() {
                    for (j, e) in row.iter().enumerate() {
                        c.m[i][j] = e.eval(&args);
                    }
                }
                c
            }
            Kind::Tabulated { n_y, n_s, data } => self.interpolate(*n_y, *n_s, data, [y1, y2], s),
        }
    }

    fn sample(&self, n_y: usize, n_s: usize, data: &[f64], i: [usize; 2], k: usize) -> Conductivity {
        let dim = self.dim;
        let point = if dim == 2 { i[0] * n_y + i[1] } else { i[0] };
        let base = (point * n_s + k) * dim * dim;
        let mut c = Conductivity::zero(dim);
        for r in 0..dim {
            for col in 0..dim {
                c.m[r][col] = data[base + r * dim + col];
            }
        }
        c
    }

    /// Periodic multilinear interpolation in `(y, s)`.
    fn interpolate(&self, n_y: usize, n_s: usize, data: &[f64], y: [f64; 2], s: f64) -> Conductivity {
        let locate = |v: f64, n: usize| {
            let x = v * n as f64;
            let i = (x.floor() as usize).min(n - 1);
            (i, (i + 1) % n, x - i as f64)
        };
        let (k0, k1, ts) = locate(s, n_s);
        let (a0, a1, ta) = locate(y[0], n_y);
        let (b0, b1, tb) = if self.dim == 2 { locate(y[1], n_y) } else { (0, 0, 0.0) };
        let at_s = |i: [usize; 2]| {
            self.sample(n_y, n_s, data, i, k0)
                .lerp(&self.sample(n_y, n_s, data, i, k1), ts)
        };
        let row0 = at_s([a0, b0]).lerp(&at_s([a1, b0]), ta);
        if self.dim == 1 {
            return row0;
        }
        let row1 = at_s([a0, b1]).lerp(&at_s([a1, b1]), ta);
        row0.lerp(&row1, tb)
    }

    /// Returns `c · a`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        self.transformed(c, 0.0)
    }

    /// Returns `a + c·I`.
    pub fn shifted(&self, c: f64) -> Result<Self> {
        self.transformed(1.0, c)
    }

    fn transformed(&self, scale: f64, shift: f64) -> Result<Self> {
        match &self.kind {
            Kind::Analytic { entries } => {
                let srcs: Vec<Vec<String>> = entries
                    .iter()
                    .enumerate()
                    .map(|(i, row)| {
                        row.iter()
                            .enumerate()
                            .map(|(j, e)| {
                                let d = if i == j { shift } else { 0.0 };
                                format!("({scale:?})*({}) + ({d:?})", e.source())
                            })
                            .collect()
                    })
                    .collect();
                Self::analytic(&srcs)
            }
            Kind::Tabulated { n_y, n_s, data } => {
                let dim = self.dim;
                let out = data
                    .iter()
                    .enumerate()
                    .map(|(idx, v)| {
                        let e = idx % (dim * dim);
                        let d = if e / dim == e % dim { shift } else { 0.0 };
                        scale * v + d
                    })
                    .collect();
                Self::tabulated(dim, *n_y, *n_s, out)
            }
        }
    }

    /// Nodal values `a(y_i, s)` on the cell lattice, in lattice order.
    pub fn sample_nodes(&self, grid: &CellGrid, s: f64) -> Vec<Conductivity> {
        let lat = grid.lattice();
        (0..lat.size())
            .map(|idx| {
                let c = lat.coords(lat.node(idx));
                self.evaluate(&c[..self.dim], s)
            })
            .collect()
    }
}

/// Minimum over an `n_check^(N+1)` grid of the smallest eigenvalue of the
/// symmetric part of `a`.
pub fn verify_coercivity(field: &CoefficientField, n_check: usize) -> Result<CoercivityEstimate> {
    if n_check < 2 {
        return Err(HomogError::config("coercivity check needs n_check >= 2"));
    }
    let n = n_check as f64;
    let mut est = CoercivityEstimate {
        c0: f64::INFINITY,
        max_entry: 0.0,
        argmin_y: [0.0; 2],
        argmin_s: 0.0,
    };
    let n2 = if field.dim() == 2 { n_check } else { 1 };
    for k in 0..n_check {
        let s = k as f64 / n;
        for i in 0..n_check {
            for j in 0..n2 {
                let y = [i as f64 / n, j as f64 / n];
                let a = field.evaluate(&y, s);
                let lam = a.min_sym_eigenvalue();
                est.max_entry = est.max_entry.max(a.max_abs_entry());
                if lam < est.c0 || lam.is_nan() {
                    est.c0 = lam;
                    est.argmin_y = y;
                    est.argmin_s = s;
                }
            }
        }
    }
    if !est.max_entry.is_finite() {
        return Err(HomogError::config("coefficient is unbounded on the validation grid"));
    }
    if !(est.c0 > 0.0) {
        return Err(HomogError::CoercivityViolation {
            c0: est.c0,
            y: est.argmin_y[..field.dim()].to_vec(),
            s: est.argmin_s,
        });
    }
    Ok(est)
}

/// `ā(y) = ∫_S a(y,s) ds` at the cell nodes, rectangle rule on `grid.n_s` slices.
#[derive(Debug, Clone)]
pub struct AveragedCoefficient {
    pub grid: CellGrid,
    pub values: Vec<Conductivity>,
}

impl AveragedCoefficient {
    pub fn dim(&self) -> usize {
        self.grid.dim
    }

    pub fn min_sym_eigenvalue(&self) -> f64 {
        self.values
            .iter()
            .map(|c| c.min_sym_eigenvalue())
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn time_average(field: &CoefficientField, grid: &CellGrid) -> Result<AveragedCoefficient> {
    if grid.dim != field.dim() {
        return Err(HomogError::config("cell grid and coefficient dimensions differ"));
    }
    let lat = grid.lattice();
    let w = 1.0 / grid.n_s as f64;
    let mut values = vec![Conductivity::zero(field.dim()); lat.size()];
    for k in 0..grid.n_s {
        let slice = field.sample_nodes(grid, grid.s_at(k));
        for (acc, v) in values.iter_mut().zip(&slice) {
            acc.add_scaled(v, w);
        }
    }
    Ok(AveragedCoefficient { grid: *grid, values })
}
