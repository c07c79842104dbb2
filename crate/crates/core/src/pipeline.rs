//! Stage orchestration: cell problems, effective tensor, homogenized solve,
//! fine-scale sweep and the comparison harness, with artifact output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::cellproblems::{solve_correctors, CorrectorField};
use crate::config::Experiment;
use crate::convergence::{
    decreases, fit_exponent, two_scale_gradient_pairing, very_weak_pairing, weak_pairing,
    OscillatoryPairings, PairingSums, DEFAULT_TIME_SUBSAMPLES,
};
use crate::effective::{check_bounds_1d, effective_tensor, EffectiveTensor};
use crate::error::{HomogError, Result};
use crate::finescale::{energy_identity_check, solve_finescale, EnergyReport, FineScaleRun};
use crate::homogenized::{solve_homogenized, SpaceTimeField};
use crate::io::{self, fmt_f64, CsvTable};
use crate::regime::{rational_to_string, Regime};

pub fn cell_stage(exp: &Experiment, regime: Regime) -> Result<CorrectorField> {
    let t = Instant::now();
    let c = solve_correctors(&exp.field, &exp.cell, regime, &exp.tol)
        .map_err(|e| e.in_stage(format!("cell ({regime}, n_y={}, n_s={})", exp.cell.n_y, exp.cell.n_s)))?;
    info!("cell problems ({regime}) solved in {:.2?}", t.elapsed());
    Ok(c)
}

pub fn effective_stage(exp: &Experiment, corr: &CorrectorField) -> Result<EffectiveTensor> {
    effective_tensor(&exp.field, corr, &exp.cell, &exp.tol)
        .map_err(|e| e.in_stage(format!("effective ({})", corr.regime)))
}

pub fn homogenize_stage(exp: &Experiment, b: &EffectiveTensor) -> Result<SpaceTimeField> {
    solve_homogenized(b, &exp.dom, &exp.tol).map_err(|e| e.in_stage("homogenize"))
}

/// Tensors for all three regimes, in [`Regime::ALL`] order.
pub fn all_regime_tensors(exp: &Experiment) -> Result<Vec<(CorrectorField, EffectiveTensor)>> {
    Regime::ALL
        .par_iter()
        .map(|r| {
            let c = cell_stage(exp, *r)?;
            let b = effective_stage(exp, &c)?;
            Ok((c, b))
        })
        .collect()
}

pub struct FineResult {
    pub epsilon: f64,
    pub label: String,
    pub run: FineScaleRun,
    pub sums: Vec<PairingSums>,
    pub energy: EnergyReport,
    /// Run from the alternative initial datum, when configured.
    pub alt: Option<SpaceTimeField>,
}

pub fn finescale_stage(exp: &Experiment) -> Result<Vec<FineResult>> {
    let alt_u0 = exp.config.finescale.as_ref().and_then(|f| f.u0_alt.clone());
    exp.fine
        .par_iter()
        .zip(exp.epsilons.par_iter())
        .map(|(cfg, eps)| {
            let label = rational_to_string(eps);
            let stage = |e: HomogError| e.in_stage(format!("finescale (epsilon={label})"));
            let t = Instant::now();
            let mut obs = OscillatoryPairings::new(&exp.tests, cfg);
            let run = solve_finescale(&exp.field, cfg, &exp.tol, &mut [&mut obs]).map_err(stage)?;
            let energy = energy_identity_check(cfg, &run, exp.coercivity.c0);
            let alt = match &alt_u0 {
                Some(u0) => {
                    let mut c = cfg.clone();
                    c.dom = c.dom.with_initial(u0)?;
                    Some(solve_finescale(&exp.field, &c, &exp.tol, &mut []).map_err(stage)?.field)
                }
                None => None,
            };
            info!("epsilon={label}: {} steps in {:.2?}", run.steps, t.elapsed());
            Ok(FineResult {
                epsilon: cfg.eps(),
                label,
                run,
                sums: obs.sums,
                energy,
                alt,
            })
        })
        .collect()
}

/// Comparison of fine-scale runs against the homogenized limits.
#[derive(Debug, Clone, Serialize)]
pub struct HarnessReport {
    #[serde(skip)]
    pub table: CsvTable,
    pub id: String,
    pub config_sha256: String,
    pub regime: Regime,
    pub q: String,
    pub r: String,
    pub c0: f64,
    pub b: Vec<f64>,
    pub b_by_regime: BTreeMap<String, Vec<f64>>,
    pub bounds_1d: Option<[f64; 2]>,
    /// Weak-pairing gap at the smallest ε against the Critical solution divided
    /// by the gap against the SubCritical and SuperCritical ones, worst test.
    pub regime_selection: Option<BTreeMap<String, f64>>,
    pub villkor_exponents: Vec<Option<f64>>,
    pub checks: BTreeMap<String, bool>,
}

struct Rows<'a> {
    id: &'a str,
    t: CsvTable,
}

impl Rows<'_> {
    fn add(&mut self, quantity: String, eps: Option<f64>, value: f64, exponent: Option<f64>) {
        self.t.push(vec![
            self.id.to_string(),
            quantity,
            eps.map(fmt_f64).unwrap_or_default(),
            fmt_f64(value),
            exponent.map(fmt_f64).unwrap_or_default(),
        ]);
    }

    /// One row per ε; the fitted exponent goes on the first.
    fn series(&mut self, quantity: &str, eps: &[f64], values: &[f64]) -> Option<f64> {
        let fit = fit_exponent(eps, values);
        for (i, (e, v)) in eps.iter().zip(values).enumerate() {
            self.add(quantity.to_string(), Some(*e), *v, if i == 0 { fit } else { None });
        }
        fit
    }
}

pub fn harness(
    exp: &Experiment,
    tensors: &[(CorrectorField, EffectiveTensor)],
    fine: &[FineResult],
) -> Result<HarnessReport> {
    let regime = exp.regime();
    let own = Regime::ALL.iter().position(|r| *r == regime).expect("regime listed");
    let (corr, b) = &tensors[own];

    let mut rows = Rows {
        id: &exp.config.id,
        t: CsvTable::new(&["experiment_id", "quantity", "epsilon", "value", "fitted_exponent"]),
    };
    let mut checks = BTreeMap::new();
    let mut b_by_regime = BTreeMap::new();
    for (r, (_, bt)) in Regime::ALL.iter().zip(tensors) {
        b_by_regime.insert(r.name().to_string(), bt.entries());
        for (n, v) in bt.entries().iter().enumerate() {
            rows.add(format!("b_{}_{}{}", r.name(), n / b.dim + 1, n % b.dim + 1), None, *v, None);
        }
    }
    let bounds_1d = if exp.field.dim() == 1 {
        let rep = check_bounds_1d(&exp.field, b, 4096, exp.cell.n_s, exp.tol.tol_b)?;
        checks.insert("bounds_1d".into(), rep.passed());
        Some([rep.lower, rep.upper])
    } else {
        None
    };

    let eps: Vec<f64> = fine.iter().map(|f| f.epsilon).collect();
    let mut regime_selection = None;
    let mut villkor_exponents = Vec::new();
    if !fine.is_empty() {
        let n_tests = exp.tests.len();
        // gaps[regime][test][eps]
        // Limits are re-solved on each fine grid so interpolation error does not
        // swamp the small differences between regimes.
        let jobs: Vec<(usize, usize)> = (0..3).flat_map(|ri| (0..fine.len()).map(move |ei| (ri, ei))).collect();
        let per_job: Vec<(Vec<f64>, SpaceTimeField)> = jobs
            .par_iter()
            .map(|&(ri, ei)| {
                let dom = exp.dom.with_grid(exp.fine[ei].fine_grid());
                let lim = solve_homogenized(&tensors[ri].1, &dom, &exp.tol).map_err(|e| e.in_stage("harness"))?;
                let g = exp
                    .tests
                    .iter()
                    .map(|test| weak_pairing(&fine[ei].run.field, &lim, test, DEFAULT_TIME_SUBSAMPLES).map(f64::abs))
                    .collect::<Result<_>>()?;
                Ok((g, lim))
            })
            .collect::<Result<_>>()?;
        let mut gaps = vec![vec![vec![0.0; fine.len()]; n_tests]; 3];
        // The configured regime's limit on each fine grid, for the oscillatory pairings.
        let mut own_limits: Vec<Option<SpaceTimeField>> = vec![None; fine.len()];
        for (&(ri, ei), (g, lim)) in jobs.iter().zip(per_job) {
            for (ti, v) in g.into_iter().enumerate() {
                gaps[ri][ti][ei] = v;
            }
            if ri == own {
                own_limits[ei] = Some(lim);
            }
        }
        let mut weak_ok = true;
        let mut grad_ok = true;
        let mut vw_ok = true;
        let mut villkor_ok = true;
        let mut villkor_exp_ok = true;
        let target = exp.exponents.r_f64() - exp.exponents.q_f64();
        for (ti, test) in exp.tests.iter().enumerate() {
            for (ri, r) in Regime::ALL.iter().enumerate() {
                rows.series(&format!("weak_gap_{}/test{ti}", r.name()), &eps, &gaps[ri][ti]);
            }
            weak_ok &= decreases(&gaps[own][ti]);

            let mut grad = vec![Vec::new(); exp.field.dim()];
            let mut vw = Vec::new();
            let mut villkor = Vec::new();
            for (f, u) in fine.iter().zip(&own_limits) {
                let u = u.as_ref().expect("solved for every epsilon");
                let sums = &f.sums[ti];
                for (i, cmp) in two_scale_gradient_pairing(sums, corr, u, test).iter().enumerate() {
                    grad[i].push(cmp.gap);
                }
                let cmp = very_weak_pairing(sums, corr, u, test)?;
                rows.add(format!("very_weak_lhs/test{ti}"), Some(f.epsilon), cmp.lhs, None);
                rows.add(format!("very_weak_rhs/test{ti}"), Some(f.epsilon), cmp.rhs, None);
                vw.push(cmp.gap);
                villkor.push(sums.villkor);
            }
            for (i, g) in grad.iter().enumerate() {
                rows.series(&format!("gradient_gap/test{ti}/x{}", i + 1), &eps, g);
                grad_ok &= decreases(g);
            }
            rows.series(&format!("very_weak_gap/test{ti}"), &eps, &vw);
            vw_ok &= decreases(&vw);
            let fit = rows.series(&format!("villkor/test{ti}"), &eps, &villkor);
            villkor_ok &= decreases(&villkor);
            villkor_exp_ok &= fit.is_some_and(|e| (e - target).abs() <= 0.5);
            villkor_exponents.push(fit);

            if fine.iter().all(|f| f.alt.is_some()) {
                let ig: Vec<f64> = fine
                    .iter()
                    .map(|f| {
                        weak_pairing(&f.run.field, f.alt.as_ref().expect("checked"), test, DEFAULT_TIME_SUBSAMPLES)
                            .map(f64::abs)
                    })
                    .collect::<Result<_>>()?;
                rows.series(&format!("initial_gap/test{ti}"), &eps, &ig);
                let entry = checks.entry("initial_independence_decreasing".into()).or_insert(true);
                *entry &= decreases(&ig);
            }
        }
        checks.insert("weak_gap_decreasing".into(), weak_ok);
        checks.insert("gradient_gap_decreasing".into(), grad_ok);
        checks.insert("very_weak_gap_decreasing".into(), vw_ok);
        checks.insert("villkor_decreasing".into(), villkor_ok);
        if eps.len() >= 3 {
            checks.insert("villkor_exponent_in_range".into(), villkor_exp_ok);
        }

        let last = fine.len() - 1;
        let mut worst = BTreeMap::new();
        for (ri, r) in Regime::ALL.iter().enumerate() {
            if *r == Regime::Critical {
                continue;
            }
            let ratio = (0..n_tests)
                .map(|ti| gaps[1][ti][last] / gaps[ri][ti][last])
                .fold(0.0, f64::max);
            worst.insert(r.name().to_string(), ratio);
        }
        if regime == Regime::Critical {
            checks.insert("regime_selection".into(), worst.values().all(|v| *v <= 0.5));
        }
        regime_selection = Some(worst);

        let mut bound_ok = true;
        let mut defect_ok = true;
        for f in fine {
            let e = &f.energy;
            rows.add("energy_gradient_norm_sq".into(), Some(f.epsilon), e.gradient_norm_sq, None);
            rows.add("energy_bound".into(), Some(f.epsilon), e.bound, None);
            rows.add("energy_defect".into(), Some(f.epsilon), e.defect, None);
            rows.add("energy_numerical_dissipation".into(), Some(f.epsilon), e.numerical_dissipation, None);
            bound_ok &= e.bound_holds;
            defect_ok &= e.defect_ok;
        }
        checks.insert("energy_bound".into(), bound_ok);
        checks.insert("energy_defect_nonnegative".into(), defect_ok);
    }

    Ok(HarnessReport {
        table: rows.t,
        id: exp.config.id.clone(),
        config_sha256: exp.hash.clone(),
        regime,
        q: rational_to_string(&exp.exponents.q()),
        r: rational_to_string(&exp.exponents.r()),
        c0: exp.coercivity.c0,
        b: b.entries(),
        b_by_regime,
        bounds_1d,
        regime_selection,
        villkor_exponents,
        checks,
    })
}

/// Which stages to run; later stages imply the earlier ones they need.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Cell,
    Effective,
    Homogenize,
    FineScale,
    Harness,
    All,
}

/// Writes artifacts below `out/<id>/` and returns the paths written.
pub fn run(exp: &Experiment, out: &Path, stage: Stage) -> Result<Vec<PathBuf>> {
    let dir = out.join(&exp.config.id);
    let hash = exp.hash.as_str();
    let mut written = Vec::new();
    let mut write = |name: &str, bytes: &[u8]| -> Result<()> {
        let p = dir.join(name);
        io::write_atomic(&p, bytes)?;
        written.push(p);
        Ok(())
    };
    let manifest = json!({
        "config_sha256": hash,
        "coefficient_sha256": exp.coefficient_hash,
        "config": exp.config,
        "regime": exp.regime().name(),
        "c0": exp.coercivity.c0,
        "version": env!("CARGO_PKG_VERSION"),
    });
    write("manifest.json", serde_json::to_string_pretty(&manifest)?.as_bytes())?;

    let needs_fine = matches!(stage, Stage::FineScale | Stage::Harness | Stage::All);
    let fine = if needs_fine && !exp.fine.is_empty() {
        let fine = finescale_stage(exp)?;
        let mut t = CsvTable::new(&[
            "epsilon", "steps", "dt", "gradient_norm_sq", "bound", "defect", "numerical_dissipation",
        ]);
        for f in &fine {
            let den = f.label.trim_start_matches("1/");
            write(&format!("finescale_eps{den}.bin"), &io::encode_field(&f.run.field, Some(hash))?)?;
            t.push(vec![
                fmt_f64(f.epsilon),
                f.run.steps.to_string(),
                fmt_f64(f.run.dt),
                fmt_f64(f.energy.gradient_norm_sq),
                fmt_f64(f.energy.bound),
                fmt_f64(f.energy.defect),
                fmt_f64(f.energy.numerical_dissipation),
            ]);
        }
        write("energy.csv", t.render(hash).as_bytes())?;
        fine
    } else {
        Vec::new()
    };
    if stage == Stage::FineScale {
        return Ok(written);
    }

    let regime = exp.regime();
    let tensors = if matches!(stage, Stage::Harness | Stage::All) {
        all_regime_tensors(exp)?
    } else {
        let c = cell_stage(exp, regime)?;
        let b = effective_stage(exp, &c)?;
        vec![(c, b)]
    };
    let (corr, b) = tensors
        .iter()
        .find(|(c, _)| c.regime == regime)
        .expect("own regime solved");
    write("correctors.bin", &io::encode_correctors(corr, Some(hash))?)?;
    write("correctors_s0.csv", io::corrector_slice_csv(corr, 0).render(hash).as_bytes())?;
    if stage == Stage::Cell {
        return Ok(written);
    }

    let mut header = vec!["regime", "q", "r", "n_y", "n_s"];
    let names: Vec<String> = (0..b.dim * b.dim)
        .map(|n| format!("b{}{}", n / b.dim + 1, n % b.dim + 1))
        .collect();
    header.extend(names.iter().map(String::as_str));
    header.extend(["c0", "min_sym_eig", "lower_bound_ok", "upper_bound_ok"]);
    let mut t = CsvTable::new(&header);
    for (_, bt) in &tensors {
        let bounds = if exp.field.dim() == 1 {
            Some(check_bounds_1d(&exp.field, bt, 4096, exp.cell.n_s, exp.tol.tol_b)?)
        } else {
            None
        };
        let mut row = vec![
            bt.regime.name().to_string(),
            rational_to_string(&exp.exponents.q()),
            rational_to_string(&exp.exponents.r()),
            exp.cell.n_y.to_string(),
            exp.cell.n_s.to_string(),
        ];
        row.extend(bt.entries().into_iter().map(fmt_f64));
        row.push(fmt_f64(exp.coercivity.c0));
        row.push(fmt_f64(bt.min_sym_eigenvalue()));
        row.push(bounds.map(|r| r.lower_ok.to_string()).unwrap_or_default());
        row.push(bounds.map(|r| r.upper_ok.to_string()).unwrap_or_default());
        t.push(row);
    }
    write("effective.csv", t.render(hash).as_bytes())?;
    if stage == Stage::Effective {
        return Ok(written);
    }

    let u = homogenize_stage(exp, b)?;
    write("homogenized.bin", &io::encode_field(&u, Some(hash))?)?;
    write("homogenized.csv", io::field_csv(&u).render(hash).as_bytes())?;
    if stage == Stage::Homogenize {
        return Ok(written);
    }

    let report = harness(exp, &tensors, &fine)?;
    write("harness.csv", report.table.render(hash).as_bytes())?;
    write("summary.json", serde_json::to_string_pretty(&report)?.as_bytes())?;
    Ok(written)
}
