//! JSON experiment configuration.
//!
//! ```json
//! {
//!   "id": "resonance",
//!   "coefficient": { "kind": "analytic", "dim": 1, "entries": [["2+sin(2*pi*(y-s))"]] },
//!   "exponents": { "q": "1", "r": "3" },
//!   "cell": { "n_y": 128, "n_s": 128 },
//!   "domain": { "lo": [0], "hi": [1], "T": 0.25, "n_x": 63, "n_t": 33, "f": "2", "u0": "0" },
//!   "finescale": { "epsilons": ["1/8", "1/16", "1/32"] },
//!   "output": "out"
//! }
//! ```
//!
//! `tests` (default: the four-test battery) and `tolerances` are optional.

use std::path::{Path, PathBuf};

use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use crate::coefficients::{verify_coercivity, CoefficientField, CoercivityEstimate};
use crate::convergence::{TestFunctionSpec, TestSpecConfig};
use crate::error::{HomogError, Result};
use crate::finescale::{FineScaleConfig, DEFAULT_CELLS_PER_PERIOD, DEFAULT_STEPS_PER_PERIOD};
use crate::grid::CellGrid;
use crate::homogenized::MacroDomain;
use crate::io::content_hash;
use crate::regime::{parse_rational, Regime, RegimeExponents};
use crate::tolerances::Tolerances;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum CoefficientSpec {
    Analytic {
        dim: usize,
        entries: Vec<Vec<String>>,
    },
    /// Samples `[n_y, n_s]` in a raw little-endian f64 file, relative to the config.
    Tabulated {
        dim: usize,
        grid: [usize; 2],
        data: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentSpec {
    pub q: String,
    pub r: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub n_y: usize,
    pub n_s: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    #[serde(rename = "T")]
    pub t_final: f64,
    pub n_x: usize,
    pub n_t: usize,
    pub f: String,
    #[serde(default = "zero_expr")]
    pub u0: String,
}

fn zero_expr() -> String {
    "0".into()
}

fn default_cells() -> usize {
    DEFAULT_CELLS_PER_PERIOD
}

fn default_steps() -> usize {
    DEFAULT_STEPS_PER_PERIOD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FineScaleSpec {
    /// Rationals `1/k`, strictly descending.
    pub epsilons: Vec<String>,
    #[serde(default = "default_cells")]
    pub n_x_per_cell: usize,
    #[serde(default = "default_steps")]
    pub n_t_per_period: usize,
    /// Second initial datum for the initial-independence check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u0_alt: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub id: String,
    pub coefficient: CoefficientSpec,
    pub exponents: ExponentSpec,
    pub cell: CellSpec,
    pub domain: DomainSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finescale: Option<FineScaleSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tests: Option<Vec<TestSpecConfig>>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

/// A validated experiment with every expression parsed.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub hash: String,
    pub coefficient_hash: String,
    pub field: CoefficientField,
    pub coercivity: CoercivityEstimate,
    pub exponents: RegimeExponents,
    pub cell: CellGrid,
    pub dom: MacroDomain,
    pub epsilons: Vec<Rational64>,
    pub fine: Vec<FineScaleConfig>,
    pub tests: Vec<TestFunctionSpec>,
    pub tol: Tolerances,
}

impl Experiment {
    pub fn regime(&self) -> Regime {
        self.exponents.regime()
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| HomogError::config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HomogError::config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((Self::from_json(&text)?, base))
    }

    /// Canonical JSON echo; its sha256 stamps every artifact.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        crate::io::sha256_hex(self.canonical_json().as_bytes())
    }

    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for kv in overrides {
            self.tolerances.apply_override(kv)?;
        }
        Ok(())
    }

    /// Parses and checks everything; `base` resolves tabulated data paths.
    pub fn validate(&self, base: &Path) -> Result<Experiment> {
        if self.id.is_empty() || self.id.contains(['/', '\\']) {
            return Err(HomogError::config("id must be a non-empty file-name-safe string"));
        }
        self.tolerances.validate()?;
        let exponents = RegimeExponents::parse(&self.exponents.q, &self.exponents.r)?;
        let field = match &self.coefficient {
            CoefficientSpec::Analytic { dim, entries } => {
                let f = CoefficientField::analytic(entries)?;
                if f.dim() != *dim {
                    return Err(HomogError::config(format!(
                        "coefficient dim {dim} does not match a {}x{0} entry matrix",
                        f.dim()
                    )));
                }
                f
            }
            CoefficientSpec::Tabulated { dim, grid, data } => {
                CoefficientField::tabulated_from_file(*dim, grid[0], grid[1], &base.join(data))?
            }
        };
        let coercivity = verify_coercivity(&field, self.tolerances.n_check)?;
        let cell = CellGrid::new(field.dim(), self.cell.n_y, self.cell.n_s)?;
        let d = &self.domain;
        if d.lo.len() != field.dim() || d.hi.len() != field.dim() {
            return Err(HomogError::config("domain bounds must match the coefficient dimension"));
        }
        let dom = MacroDomain::new(d.lo.clone(), d.hi.clone(), d.n_x, d.t_final, d.n_t, &d.f, &d.u0)?;

        let mut epsilons = Vec::new();
        let mut fine = Vec::new();
        if let Some(fs) = &self.finescale {
            for e in &fs.epsilons {
                epsilons.push(parse_rational(e)?);
            }
            if epsilons.windows(2).any(|w| w[1] >= w[0]) {
                return Err(HomogError::config("epsilons must be strictly descending"));
            }
            for e in &epsilons {
                let cfg = FineScaleConfig::new(exponents, *e, dom.clone())?
                    .with_resolution(fs.n_x_per_cell, fs.n_t_per_period)?;
                if !cfg.fine_grid().refines(&dom.grid) {
                    return Err(HomogError::config(format!(
                        "fine grid for epsilon {e} does not refine the macro grid; adjust n_x"
                    )));
                }
                fine.push(cfg);
            }
            if let Some(alt) = &fs.u0_alt {
                dom.with_initial(alt)?;
            }
        }
        let tests = match &self.tests {
            Some(list) => list
                .iter()
                .map(|t| TestFunctionSpec::from_config(t, &dom))
                .collect::<Result<Vec<_>>>()?,
            None => TestFunctionSpec::default_battery(&dom)?,
        };
        // Every battery is evaluated with the very weak pairing.
        for t in &tests {
            t.require_zero_mean(field.dim())?;
        }
        let coefficient_hash =
            content_hash(serde_json::to_string(&self.coefficient).expect("serializes").as_bytes());
        Ok(Experiment {
            config: self.clone(),
            hash: self.hash(),
            coefficient_hash,
            field,
            coercivity,
            exponents,
            cell,
            dom,
            epsilons,
            fine,
            tests,
            tol: self.tolerances,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "id": "identity",
        "coefficient": {"kind": "analytic", "dim": 1, "entries": [["1"]]},
        "exponents": {"q": "1", "r": "5/2"},
        "cell": {"n_y": 16, "n_s": 4},
        "domain": {"lo": [0], "hi": [1], "T": 1, "n_x": 7, "n_t": 3, "f": "2"}
    }"#;

    #[test]
    fn minimal_config_validates() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        let e = c.validate(Path::new(".")).unwrap();
        assert_eq!(e.regime(), Regime::SubCritical);
        assert_eq!(e.tests.len(), 4);
        assert_eq!(e.coercivity.c0, 1.0);
        assert_eq!(e.hash.len(), 64);
    }

    #[test]
    fn rejects_bad_rational_and_unknown_fields() {
        let bad = MINIMAL.replace("\"5/2\"", "\"abc\"");
        let c = ExperimentConfig::from_json(&bad).unwrap();
        assert!(c.validate(Path::new(".")).is_err());
        let extra = MINIMAL.replace("\"id\"", "\"bogus\": 1, \"id\"");
        assert!(ExperimentConfig::from_json(&extra).is_err());
    }

    #[test]
    fn epsilons_must_descend_and_tile() {
        let mut c = ExperimentConfig::from_json(MINIMAL).unwrap();
        c.finescale = Some(FineScaleSpec {
            epsilons: vec!["1/4".into(), "1/8".into()],
            n_x_per_cell: 8,
            n_t_per_period: 4,
            u0_alt: None,
        });
        assert_eq!(c.validate(Path::new(".")).unwrap().fine.len(), 2);
        c.finescale.as_mut().unwrap().epsilons.reverse();
        assert!(c.validate(Path::new(".")).is_err());
        c.finescale.as_mut().unwrap().epsilons = vec!["2/7".into()];
        assert!(c.validate(Path::new(".")).is_err());
    }

    #[test]
    fn nonzero_mean_v2_is_rejected() {
        let mut c = ExperimentConfig::from_json(MINIMAL).unwrap();
        c.tests = Some(vec![TestSpecConfig {
            v1: "sin(pi*x)".into(),
            window: [0.1, 0.9],
            v2: "1+cos(2*pi*y)".into(),
            c2: "1".into(),
        }]);
        assert!(matches!(c.validate(Path::new(".")), Err(HomogError::Validation(_))));
    }

    #[test]
    fn hash_tracks_overrides() {
        let mut c = ExperimentConfig::from_json(MINIMAL).unwrap();
        let h0 = c.hash();
        assert_eq!(h0, ExperimentConfig::from_json(MINIMAL).unwrap().hash());
        c.apply_overrides(&["tol_cell=1e-9".into()]).unwrap();
        assert_ne!(c.hash(), h0);
    }
}
