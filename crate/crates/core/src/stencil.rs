//! Conservative flux-form discretization of `−∇·(a ∇u)` on a node lattice.
//!
//! Face coefficients are the average of the two adjacent nodal matrices.
//! The normal flux at face `p + ½e_d` is
//! `q_d = Σ_k a_dk (G_k + g_k)` where `G_d` is the one-sided difference across
//! the face, `G_k` (k ≠ d) the centered difference averaged over both face
//! nodes, and `g` an optional constant background gradient (the `e_j` of the
//! cell problems).

use crate::coefficients::Conductivity;
use crate::grid::Lattice;
use crate::linalg::LinearOperator;

#[derive(Debug, Clone)]
pub struct FluxStencil {
    lattice: Lattice,
    /// `face[d][p]` is row `d` of `a` at the face between `p` and `p + e_d`.
    face: [Vec<[f64; 2]>; 2],
    cross_terms: bool,
    /// Positive diagonal shift (mass term of implicit time steps).
    shift: f64,
    unknowns: Vec<usize>,
}

impl FluxStencil {
    /// `nodal` holds `a` at every lattice node (including Dirichlet boundary nodes);
    /// face coefficients are the average of the two adjacent nodes.
    pub fn new(lattice: Lattice, nodal: &[Conductivity]) -> Self {
        assert_eq!(nodal.len(), lattice.size());
        Self::build(lattice, |idx, q, _| nodal[idx].lerp(&nodal[q], 0.5))
    }

    /// Samples `a` at face midpoints instead of averaging nodes.
    pub fn from_midpoints(lattice: Lattice, a: impl Fn([f64; 2]) -> Conductivity) -> Self {
        Self::build(lattice, |idx, _, d| {
            let mut x = lattice.coords(lattice.node(idx));
            x[d] += 0.5 * lattice.h[d];
            a(x)
        })
    }

    fn build(lattice: Lattice, face_value: impl Fn(usize, usize, usize) -> Conductivity) -> Self {
        let dim = lattice.dim;
        let mut face: [Vec<[f64; 2]>; 2] = [vec![[0.0; 2]; lattice.size()], Vec::new()];
        if dim == 2 {
            face[1] = vec![[0.0; 2]; lattice.size()];
        }
        let mut cross_terms = false;
        for idx in 0..lattice.size() {
            let p = lattice.node(idx);
            for d in 0..dim {
                if let Some(q) = lattice.shift(p, d, 1) {
                    let a = face_value(idx, lattice.index(q), d);
                    let mut row = [0.0; 2];
                    for (k, r) in row.iter_mut().enumerate().take(dim) {
                        *r = a.m[d][k];
                        if k != d && *r != 0.0 {
                            cross_terms = true;
                        }
                    }
                    face[d][idx] = row;
                }
            }
        }
        let unknowns = lattice.unknown_nodes().map(|p| lattice.index(p)).collect();
        FluxStencil {
            lattice,
            face,
            cross_terms,
            shift: 0.0,
            unknowns,
        }
    }

    /// Operator with a spatially constant matrix `a`.
    pub fn constant(lattice: Lattice, a: Conductivity) -> Self {
        Self::new(lattice, &vec![a; lattice.size()])
    }

    pub fn with_shift(mut self, shift: f64) -> Self {
        self.shift = shift;
        self
    }

    pub fn set_shift(&mut self, shift: f64) {
        self.shift = shift;
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    /// True when the operator is symmetric (no cross-derivative terms).
    pub fn is_symmetric(&self) -> bool {
        !self.cross_terms
    }

    pub fn unknown_count(&self) -> usize {
        self.unknowns.len()
    }

    /// Face coefficient row `d` for the face above lattice index `idx`.
    pub fn face_row(&self, d: usize, idx: usize) -> [f64; 2] {
        self.face[d][idx]
    }

    /// Scatters unknowns into a full lattice array with zero Dirichlet values.
    pub fn scatter(&self, u: &[f64]) -> Vec<f64> {
        if self.lattice.periodic {
            return u.to_vec();
        }
        let mut full = vec![0.0; self.lattice.size()];
        for (v, &idx) in u.iter().zip(&self.unknowns) {
            full[idx] = *v;
        }
        full
    }

    fn value(&self, full: &[f64], p: Option<[usize; 2]>) -> f64 {
        p.map(|q| full[self.lattice.index(q)]).unwrap_or(0.0)
    }

    /// Difference quotients `[G_0, G_1]` at the face above `p` in direction `d`,
    /// or `None` when the face leaves the lattice.
    pub fn face_gradient(&self, full: &[f64], p: [usize; 2], d: usize) -> Option<[f64; 2]> {
        let lat = &self.lattice;
        let q = lat.shift(p, d, 1)?;
        let mut g = [0.0; 2];
        let up = full[lat.index(q)];
        let here = full[lat.index(p)];
        g[d] = (up - here) / lat.h[d];
        if lat.dim == 2 {
            let k = 1 - d;
            let plus = self.value(full, lat.shift(p, k, 1)) + self.value(full, lat.shift(q, k, 1));
            let minus = self.value(full, lat.shift(p, k, -1)) + self.value(full, lat.shift(q, k, -1));
            g[k] = (plus - minus) / (4.0 * lat.h[k]);
        }
        Some(g)
    }

    /// Normal fluxes on every face: `flux[d][p]` at the face above node `p`.
    pub fn fluxes(&self, full: &[f64], background: [f64; 2]) -> [Vec<f64>; 2] {
        let lat = &self.lattice;
        let mut out: [Vec<f64>; 2] = [vec![0.0; lat.size()], Vec::new()];
        if lat.dim == 2 {
            out[1] = vec![0.0; lat.size()];
        }
        for idx in 0..lat.size() {
            let p = lat.node(idx);
            for d in 0..lat.dim {
                if let Some(g) = self.face_gradient(full, p, d) {
                    let row = self.face[d][idx];
                    let mut q = 0.0;
                    for k in 0..lat.dim {
                        if k == d || self.cross_terms {
                            q += row[k] * (g[k] + background[k]);
                        }
                    }
                    out[d][idx] = q;
                }
            }
        }
        out
    }

    /// `−div_h flux` at the unknown nodes.
    pub fn neg_divergence(&self, flux: &[Vec<f64>; 2], out: &mut [f64]) {
        let lat = &self.lattice;
        for (o, &idx) in out.iter_mut().zip(&self.unknowns) {
            let p = lat.node(idx);
            let mut acc = 0.0;
            for d in 0..lat.dim {
                let below = lat.shift(p, d, -1).map(|q| flux[d][lat.index(q)]).unwrap_or(0.0);
                acc -= (flux[d][idx] - below) / lat.h[d];
            }
            *o = acc;
        }
    }

    /// Right-hand side `div_h(a g)` of `L u = div_h(a g)` for a constant background gradient.
    pub fn background_source(&self, background: [f64; 2]) -> Vec<f64> {
        let zero = vec![0.0; self.lattice.size()];
        let flux = self.fluxes(&zero, background);
        let mut out = vec![0.0; self.unknowns.len()];
        self.neg_divergence(&flux, &mut out);
        out.iter_mut().for_each(|v| *v = -*v);
        out
    }

    /// Applies `shift·u − div_h(a ∇_h u)`.
    pub fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        let full = self.scatter(u);
        let flux = self.fluxes(&full, [0.0; 2]);
        self.neg_divergence(&flux, out);
        if self.shift != 0.0 {
            for (o, v) in out.iter_mut().zip(u) {
                *o += self.shift * v;
            }
        }
    }

    /// Mean of the face fluxes per direction for state `u` and background `g`.
    pub fn mean_flux(&self, u: &[f64], background: [f64; 2]) -> [f64; 2] {
        let full = self.scatter(u);
        let flux = self.fluxes(&full, background);
        let n = self.lattice.size() as f64;
        let mut m = [0.0; 2];
        for d in 0..self.lattice.dim {
            m[d] = flux[d].iter().sum::<f64>() / n;
        }
        m
    }

    /// Discrete energy `(L u, u)_h` without the shift.
    pub fn energy(&self, u: &[f64]) -> f64 {
        let mut lu = vec![0.0; u.len()];
        let full = self.scatter(u);
        let flux = self.fluxes(&full, [0.0; 2]);
        self.neg_divergence(&flux, &mut lu);
        self.lattice.volume() * lu.iter().zip(u).map(|(a, b)| a * b).sum::<f64>()
    }
}

impl LinearOperator for FluxStencil {
    fn dim(&self) -> usize {
        self.unknowns.len()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.apply_into(x, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{BoxGrid, CellGrid};

    #[test]
    fn constant_coefficient_dirichlet_matches_three_point_laplacian() {
        let g = BoxGrid::new(vec![0.0], vec![1.0], vec![8]).unwrap();
        let st = FluxStencil::constant(g.lattice(), Conductivity::identity(1));
        let u: Vec<f64> = (1..8).map(|i| (i as f64).powi(2)).collect();
        let mut out = vec![0.0; 7];
        st.apply_into(&u, &mut out);
        let h2 = 1.0 / 64.0;
        for i in 0..7 {
            let l = if i > 0 { u[i - 1] } else { 0.0 };
            let r = if i < 6 { u[i + 1] } else { 0.0 };
            assert!((out[i] - (2.0 * u[i] - l - r) / h2).abs() < 1e-10);
        }
    }

    #[test]
    fn periodic_divergence_sums_to_zero() {
        let grid = CellGrid::new(2, 8, 2).unwrap();
        let lat = grid.lattice();
        let nodal: Vec<Conductivity> = (0..lat.size())
            .map(|i| {
                let mut c = Conductivity::identity(2);
                c.m[0][0] = 2.0 + (i as f64 * 0.37).sin();
                c.m[0][1] = 0.3;
                c.m[1][0] = 0.1;
                c
            })
            .collect();
        let st = FluxStencil::new(lat, &nodal);
        assert!(!st.is_symmetric());
        let u: Vec<f64> = (0..64).map(|i| (i as f64 * 0.91).cos()).collect();
        let mut out = vec![0.0; 64];
        st.apply_into(&u, &mut out);
        assert!(out.iter().sum::<f64>().abs() < 1e-10);
        let constant = vec![1.5; 64];
        st.apply_into(&constant, &mut out);
        assert!(out.iter().all(|v| v.abs() < 1e-12));
        let src = st.background_source([1.0, 0.0]);
        assert!(src.iter().sum::<f64>().abs() < 1e-10);
    }

    #[test]
    fn energy_equals_face_sum_in_1d() {
        let g = BoxGrid::new(vec![0.0], vec![2.0], vec![10]).unwrap();
        let lat = g.lattice();
        let nodal: Vec<Conductivity> = (0..lat.size())
            .map(|i| {
                let mut c = Conductivity::zero(1);
                c.m[0][0] = 1.0 + 0.1 * i as f64;
                c
            })
            .collect();
        let st = FluxStencil::new(lat, &nodal);
        let u: Vec<f64> = (1..10).map(|i| (i as f64 * 0.3).sin()).collect();
        let full = st.scatter(&u);
        let h = g.h(0);
        let direct: f64 = (0..10)
            .map(|i| st.face_row(0, i)[0] * ((full[i + 1] - full[i]) / h).powi(2) * h)
            .sum();
        assert!((st.energy(&u) - direct).abs() < 1e-12);
    }

    #[test]
    fn midpoint_faces_sit_halfway_between_nodes() {
        let g = BoxGrid::new(vec![0.0], vec![1.0], vec![4]).unwrap();
        let lat = g.lattice();
        let st = FluxStencil::from_midpoints(lat, |x| {
            let mut c = Conductivity::identity(1);
            c.m[0][0] = 1.0 + x[0];
            c
        });
        for i in 0..4 {
            assert!((st.face_row(0, i)[0] - (1.0 + (i as f64 + 0.5) / 4.0)).abs() < 1e-15);
        }
    }
}
