//! Uniform node lattices: the periodic unit cell and Dirichlet macro boxes.

use serde::{Deserialize, Serialize};

use crate::error::{HomogError, Result};

/// Periodic grid on the unit cell `Y = [0,1)^N` with `n_s` time slices on `S = [0,1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellGrid {
    pub dim: usize,
    pub n_y: usize,
    pub n_s: usize,
}

impl CellGrid {
    pub fn new(dim: usize, n_y: usize, n_s: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(HomogError::config(format!("dimension must be 1 or 2, got {dim}")));
        }
        if n_y < 4 {
            return Err(HomogError::config(format!("cell grid needs n_y >= 4, got {n_y}")));
        }
        if n_s < 2 {
            return Err(HomogError::config(format!("cell grid needs n_s >= 2, got {n_s}")));
        }
        Ok(CellGrid { dim, n_y, n_s })
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n_y as f64
    }

    pub fn ds(&self) -> f64 {
        1.0 / self.n_s as f64
    }

    pub fn s_at(&self, k: usize) -> f64 {
        k as f64 / self.n_s as f64
    }

    pub fn node_count(&self) -> usize {
        self.n_y.pow(self.dim as u32)
    }

    pub fn lattice(&self) -> Lattice {
        let len = [self.n_y, if self.dim == 2 { self.n_y } else { 1 }];
        Lattice {
            dim: self.dim,
            len,
            h: [self.h(), self.h()],
            origin: [0.0, 0.0],
            periodic: true,
        }
    }
}

/// Axis-aligned macroscopic box `Π [lo_d, hi_d]` with `cells` uniform cells per
/// dimension; unknowns are the interior nodes (Dirichlet boundary).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxGrid {
    pub dim: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub cells: Vec<usize>,
}

impl BoxGrid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, cells: Vec<usize>) -> Result<Self> {
        let dim = lo.len();
        if !(1..=2).contains(&dim) || hi.len() != dim || cells.len() != dim {
            return Err(HomogError::config("box grid needs 1 or 2 consistent dimensions"));
        }
        for d in 0..dim {
            if !(hi[d] > lo[d]) {
                return Err(HomogError::config(format!("extent {d} is not positive")));
            }
            if cells[d] < 2 {
                return Err(HomogError::config("box grid needs at least 2 cells per dimension"));
            }
        }
        Ok(BoxGrid { dim, lo, hi, cells })
    }

    pub fn h(&self, d: usize) -> f64 {
        (self.hi[d] - self.lo[d]) / self.cells[d] as f64
    }

    pub fn extent(&self, d: usize) -> f64 {
        self.hi[d] - self.lo[d]
    }

    pub fn interior(&self, d: usize) -> usize {
        self.cells[d] - 1
    }

    pub fn unknowns(&self) -> usize {
        (0..self.dim).map(|d| self.interior(d)).product()
    }

    /// Volume element of one node.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|d| self.h(d)).product()
    }

    pub fn lattice(&self) -> Lattice {
        let len = [
            self.cells[0] + 1,
            if self.dim == 2 { self.cells[1] + 1 } else { 1 },
        ];
        let h = [self.h(0), if self.dim == 2 { self.h(1) } else { 1.0 }];
        let origin = [self.lo[0], if self.dim == 2 { self.lo[1] } else { 0.0 }];
        Lattice {
            dim: self.dim,
            len,
            h,
            origin,
            periodic: false,
        }
    }

    /// Coordinates of the interior nodes, in unknown order.
    pub fn interior_points(&self) -> Vec<[f64; 2]> {
        let lat = self.lattice();
        lat.unknown_nodes().map(|p| lat.coords(p)).collect()
    }

    /// Whether every node of `coarse` is also a node of `self`.
    pub fn refines(&self, coarse: &BoxGrid) -> bool {
        if self.dim != coarse.dim {
            return false;
        }
        (0..self.dim).all(|d| {
            let same = (self.lo[d] - coarse.lo[d]).abs() <= 1e-12 * self.extent(d)
                && (self.hi[d] - coarse.hi[d]).abs() <= 1e-12 * self.extent(d);
            same && self.cells[d].is_multiple_of(coarse.cells[d])
        })
    }
}

/// Node lattice shared by periodic and Dirichlet grids. Nodes are indexed
/// `(i1, i2)` row-major with `i2` fastest; 1D lattices have `len[1] = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    pub dim: usize,
    pub len: [usize; 2],
    pub h: [f64; 2],
    pub origin: [f64; 2],
    pub periodic: bool,
}

impl Lattice {
    pub fn size(&self) -> usize {
        self.len[0] * self.len[1]
    }

    pub fn index(&self, p: [usize; 2]) -> usize {
        p[0] * self.len[1] + p[1]
    }

    pub fn node(&self, idx: usize) -> [usize; 2] {
        [idx / self.len[1], idx % self.len[1]]
    }

    pub fn coords(&self, p: [usize; 2]) -> [f64; 2] {
        [
            self.origin[0] + p[0] as f64 * self.h[0],
            self.origin[1] + p[1] as f64 * self.h[1],
        ]
    }

    /// Neighbor of `p` shifted by `delta` along `d`; wraps when periodic,
    /// `None` outside a Dirichlet lattice.
    pub fn shift(&self, p: [usize; 2], d: usize, delta: isize) -> Option<[usize; 2]> {
        let n = self.len[d] as isize;
        let mut q = p;
        let v = p[d] as isize + delta;
        if self.periodic {
            q[d] = v.rem_euclid(n) as usize;
        } else if v < 0 || v >= n {
            return None;
        } else {
            q[d] = v as usize;
        }
        Some(q)
    }

    pub fn is_unknown(&self, p: [usize; 2]) -> bool {
        if self.periodic {
            return true;
        }
        (0..self.dim).all(|d| p[d] >= 1 && p[d] + 1 < self.len[d])
    }

    pub fn unknown_nodes(&self) -> impl Iterator<Item = [usize; 2]> + '_ {
        (0..self.size())
            .map(|i| self.node(i))
            .filter(move |p| self.is_unknown(*p))
    }

    pub fn unknown_count(&self) -> usize {
        if self.periodic {
            self.size()
        } else {
            (0..self.dim).map(|d| self.len[d] - 2).product()
        }
    }

    /// Volume element per node.
    pub fn volume(&self) -> f64 {
        (0..self.dim).map(|d| self.h[d]).product()
    }
}
