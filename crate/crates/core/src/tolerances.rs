use serde::{Deserialize, Serialize};

use crate::error::{HomogError, Result};

/// Solver tolerances and iteration caps. Every field can be overridden from
/// the experiment config or with `--tol-override KEY=VAL`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Relative residual of every cell solve.
    pub tol_cell: f64,
    /// Relative change of `χ(·,0)` over one period at which the period map is a fixed point.
    pub tol_period: f64,
    pub max_periods: usize,
    /// Relative residual of each macroscopic solve (homogenized slices, fine-scale steps).
    pub tol_macro: f64,
    pub max_iter: usize,
    /// Coercivity validation points per dimension.
    pub n_check: usize,
    /// Slack for effective-tensor bound and coercivity checks.
    pub tol_b: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            tol_cell: 1e-10,
            tol_period: 1e-9,
            max_periods: 200,
            tol_macro: 1e-10,
            max_iter: 50_000,
            n_check: 64,
            tol_b: 1e-6,
        }
    }
}

impl Tolerances {
    /// Applies a single `KEY=VAL` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (key, val) = kv
            .split_once('=')
            .ok_or_else(|| HomogError::config(format!("override `{kv}` is not KEY=VAL")))?;
        let bad = || HomogError::config(format!("bad value in override `{kv}`"));
        let as_f64 = || val.trim().parse::<f64>().map_err(|_| bad());
        let as_usize = || val.trim().parse::<usize>().map_err(|_| bad());
        match key.trim() {
            "tol_cell" => self.tol_cell = as_f64()?,
            "tol_period" => self.tol_period = as_f64()?,
            "max_periods" => self.max_periods = as_usize()?,
            "tol_macro" => self.tol_macro = as_f64()?,
            "max_iter" => self.max_iter = as_usize()?,
            "n_check" => self.n_check = as_usize()?,
            "tol_b" => self.tol_b = as_f64()?,
            other => return Err(HomogError::config(format!("unknown tolerance `{other}`"))),
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.tol_cell, self.tol_period, self.tol_macro, self.tol_b];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(HomogError::config("tolerances must be positive and finite"));
        }
        if self.max_periods == 0 || self.max_iter == 0 || self.n_check < 2 {
            return Err(HomogError::config("iteration caps must be positive, n_check >= 2"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides() {
        let mut t = Tolerances::default();
        t.apply_override("tol_cell=1e-8").unwrap();
        assert_eq!(t.tol_cell, 1e-8);
        t.apply_override(" max_periods = 10").unwrap();
        assert_eq!(t.max_periods, 10);
        assert!(t.apply_override("nope=1").is_err());
        assert!(t.apply_override("tol_cell").is_err());
        assert!(t.apply_override("tol_cell=-1").is_err());
    }
}
