//! Homogenization of the heat equation with vanishing volumetric heat capacity
//!
//! ```text
//! ε^q ∂_t u_ε − ∇·(a(x/ε, t/ε^r) ∇u_ε) = f,   0 < q < r,
//! ```
//!
//! on a box with zero Dirichlet data. The crate solves the regime-dependent
//! cell problems, assembles the effective tensor `b`, solves the limit problem
//! `−∇·(b∇u) = f`, simulates the ε-problem directly and evaluates the
//! multiscale pairings that compare the two.

pub mod cellproblems;
pub mod coefficients;
pub mod config;
pub mod convergence;
pub mod effective;
pub mod error;
pub mod expr;
pub mod finescale;
pub mod grid;
pub mod homogenized;
pub mod io;
pub mod linalg;
pub mod pipeline;
pub mod regime;
pub mod stencil;
pub mod tolerances;

pub use cellproblems::CorrectorField;
pub use coefficients::{AveragedCoefficient, CoefficientField, Conductivity};
pub use effective::EffectiveTensor;
pub use error::{HomogError, Result};
pub use grid::{BoxGrid, CellGrid};
pub use homogenized::{MacroDomain, SpaceTimeField};
pub use regime::{Regime, RegimeExponents};
pub use tolerances::Tolerances;
