use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{build_system, train, Dataset, RunRecord, StopReason, TrainConfig, INTERPOLATIVE_S};
use crate::error::{Error, Result};
use crate::fci::{dissociation_dataset, h4_dataset};
use crate::geometry::Geometry;
use crate::nn::{Model, Variant};
use crate::scf::{scf_solve_from, transfer_guess, ScfConfig, ScfMode, ScfState, System, XcFunctional};
use crate::stats::second_difference;
use crate::units::KCAL_PER_HARTREE;
use crate::xc::BaseFunctional;

/// Expander seeds drawn at inference, separate from the training stream.
const INFERENCE_STREAM: u64 = 1;
const H4_STREAM: u64 = 2;

/// One point of an energy curve; `error` is kcal/mol against FCI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub method: String,
    pub energy: f64,
    pub error: f64,
    pub atomization: f64,
    pub atomization_error: f64,
    pub converged: bool,
    pub iterations: usize,
    pub interpolative: bool,
}

fn production(scf: &ScfConfig, mode: ScfMode) -> ScfConfig {
    ScfConfig { mode, threshold: ScfConfig::new(mode).threshold, ..scf.clone() }
}

fn xc_for<'a>(base: BaseFunctional, model: Option<&'a Model>, sys: &System) -> Result<XcFunctional<'a>> {
    match model {
        Some(m) => XcFunctional::learned(base, m, sys),
        None => Ok(XcFunctional::plain(base)),
    }
}

/// Non-convergence is data here; divergence is reported as a NaN energy.
fn run_scf(sys: &System, xc: &XcFunctional, scf: &ScfConfig, guess: Option<&[DMatrix<f64>; 2]>) -> Result<Option<ScfState>> {
    match scf_solve_from(sys, xc, scf, guess) {
        Ok(s) => Ok(Some(s)),
        Err(Error::Divergence { .. } | Error::Numerical { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// FCI, base functional and (optionally) model energies along the H₂
/// curve. Each geometry of the model curve gets a fresh expander seed.
pub fn dissociation_experiment(model: Option<&Model>, cfg: &TrainConfig, s_values: &[f64]) -> Result<Vec<CurvePoint>> {
    let fci = dissociation_dataset(s_values, &cfg.basis, 1)?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    rng.set_stream(INFERENCE_STREAM);
    let mol_scf = production(&cfg.scf, cfg.scf.mode);
    let atom_scf = production(&cfg.scf, ScfMode::Uks);
    let mut methods: Vec<(String, Option<&Model>)> = vec![(cfg.base.name().to_string(), None)];
    if let Some(m) = model {
        methods.push((format!("{}-{}", m.config.variant.name(), cfg.base.name()), Some(m)));
    }
    let mut atoms = Vec::new();
    for (_, m) in &methods {
        let sys = build_system(cfg, m.map(|m| &m.config), Geometry::hydrogen_atom(), rng.gen())?;
        let st = run_scf(&sys, &xc_for(cfg.base, *m, &sys)?, &atom_scf, None)?;
        atoms.push(st.map_or((f64::NAN, false), |s| (s.total_energy(), s.converged)));
    }
    let mut out = Vec::new();
    for rec in &fci {
        let interpolative = (INTERPOLATIVE_S.0..=INTERPOLATIVE_S.1).contains(&rec.s);
        out.push(CurvePoint {
            x: rec.s,
            method: "fci".into(),
            energy: rec.e_total,
            error: 0.0,
            atomization: rec.e_atomization,
            atomization_error: 0.0,
            converged: true,
            iterations: 0,
            interpolative,
        });
        for ((name, m), (e_atom, atom_ok)) in methods.iter().zip(&atoms) {
            let sys = build_system(cfg, m.map(|m| &m.config), Geometry::new(rec.geometry.clone()), rng.gen())?;
            let st = run_scf(&sys, &xc_for(cfg.base, *m, &sys)?, &mol_scf, None)?;
            let (e, conv, it) = st.map_or((f64::NAN, false, 0), |s| (s.total_energy(), s.converged, s.iterations));
            let a = 2.0 * e_atom - e;
            out.push(CurvePoint {
                x: rec.s,
                method: name.clone(),
                energy: e,
                error: (e - rec.e_total) * KCAL_PER_HARTREE,
                atomization: a,
                atomization_error: (a - rec.e_atomization) * KCAL_PER_HARTREE,
                converged: conv && *atom_ok,
                iterations: it,
                interpolative,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H4Point {
    pub theta: f64,
    pub method: String,
    /// Index within the unrestricted ensemble.
    pub run: Option<usize>,
    pub energy: f64,
    /// Against the FCI singlet at the same angle, kcal/mol.
    pub error: f64,
    pub converged: bool,
    pub iterations: usize,
    pub final_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H4Summary {
    pub theta: f64,
    pub fci_singlet: f64,
    pub fci_triplet: Option<f64>,
    pub lowest_is_triplet: bool,
    pub base_rks: f64,
    pub model_rks: Option<f64>,
    pub uks_mean: Option<f64>,
    pub uks_min: Option<f64>,
    pub uks_max: Option<f64>,
    pub uks_converged: usize,
}

/// Barrier and curvature of one curve. The barrier is `E(45°) − E(θ₀)`
/// with θ₀ the first angle; second differences use grid neighbours.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveStats {
    pub method: String,
    pub barrier_kcal: Option<f64>,
    pub second_difference_45: Option<f64>,
    pub second_difference_42: Option<f64>,
    /// |Δ²E(45°)| / |Δ²E(42°)|
    pub curvature_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H4Report {
    pub points: Vec<H4Point>,
    pub summary: Vec<H4Summary>,
    pub stats: Vec<CurveStats>,
    /// Restricted base-functional barrier minus the FCI singlet barrier.
    pub base_overshoot_kcal: Option<f64>,
}

fn find(thetas: &[f64], t: f64) -> Option<usize> {
    thetas.iter().position(|x| (x - t).abs() < 1e-9)
}

fn curve_stats(method: &str, thetas: &[f64], e: &[f64]) -> CurveStats {
    let inner = |t: f64| find(thetas, t).filter(|&i| i > 0 && i + 1 < thetas.len());
    let barrier = find(thetas, 45.0).map(|i| (e[i] - e[0]) * KCAL_PER_HARTREE);
    let d45 = inner(45.0).map(|i| second_difference(e, i));
    let d42 = inner(42.0).map(|i| second_difference(e, i));
    let ratio = d45.zip(d42).map(|(a, b)| a.abs() / b.abs());
    CurveStats { method: method.into(), barrier_kcal: barrier, second_difference_45: d45, second_difference_42: d42, curvature_ratio: ratio }
}

/// Restricted sweep in the order given, each angle warm-started from the
/// previous one.
fn restricted_sweep(cfg: &TrainConfig, model: Option<&Model>, base: BaseFunctional, thetas: &[f64], r: f64, rng: &mut ChaCha20Rng) -> Result<Vec<(f64, bool, usize, Option<f64>)>> {
    let scf = production(&cfg.scf, ScfMode::Rks);
    let mut guess: Option<[DMatrix<f64>; 2]> = None;
    let mut out = Vec::new();
    for &t in thetas {
        let sys = build_system(cfg, model.map(|m| &m.config), Geometry::h4(t, r), rng.gen())?;
        let start = guess.as_ref().map(|g| transfer_guess(&sys, g)).transpose()?;
        let st = run_scf(&sys, &xc_for(base, model, &sys)?, &scf, start.as_ref())?;
        guess = st.as_ref().map(|s| s.density.clone());
        out.push(st.map_or((f64::NAN, false, 0, None), |s| (s.total_energy(), s.converged, s.iterations, s.residuals.last().copied())));
    }
    Ok(out)
}

/// Planar H₄ barrier: FCI singlet/triplet references, the restricted base
/// functional and, with a model, one restricted run plus `repeats`
/// unrestricted runs with fresh expander seeds per angle.
pub fn h4_experiment(model: Option<&Model>, cfg: &TrainConfig, thetas: &[f64], repeats: usize, r: f64) -> Result<H4Report> {
    let fci = h4_dataset(thetas, r, &cfg.basis)?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    rng.set_stream(H4_STREAM);
    let mut points = Vec::new();
    let mut push = |theta: f64, method: &str, run: Option<usize>, (energy, converged, iterations, final_residual): (f64, bool, usize, Option<f64>)| {
        points.push(H4Point { theta, method: method.into(), run, energy, error: f64::NAN, converged, iterations, final_residual });
    };
    for f in &fci {
        push(f.theta, "fci-singlet", None, (f.e_total, true, 0, None));
        if let Some(t) = f.e_triplet {
            push(f.theta, "fci-triplet", None, (t, true, 0, None));
        }
    }
    let base_name = format!("{}-rks", cfg.base.name());
    let base = restricted_sweep(cfg, None, cfg.base, thetas, r, &mut rng)?;
    for (t, b) in thetas.iter().zip(&base) {
        push(*t, &base_name, None, *b);
    }
    let mut model_rks = None;
    let mut uks: Vec<Vec<(f64, bool)>> = vec![Vec::new(); thetas.len()];
    if let Some(m) = model {
        let name = m.config.variant.name();
        let rks = restricted_sweep(cfg, Some(m), cfg.base, thetas, r, &mut rng)?;
        for (t, b) in thetas.iter().zip(&rks) {
            push(*t, &format!("{name}-rks"), None, *b);
        }
        model_rks = Some(rks);
        let scf = ScfConfig { break_symmetry: true, ..production(&cfg.scf, ScfMode::Uks) };
        for (i, &t) in thetas.iter().enumerate() {
            for k in 0..repeats {
                let sys = build_system(cfg, Some(&m.config), Geometry::h4(t, r), rng.gen())?;
                let st = run_scf(&sys, &XcFunctional::learned(cfg.base, m, &sys)?, &scf, None)?;
                let v = st.map_or((f64::NAN, false, 0, None), |s| (s.total_energy(), s.converged, s.iterations, s.residuals.last().copied()));
                uks[i].push((v.0, v.1));
                push(t, &format!("{name}-uks"), Some(k), v);
            }
        }
    }
    for p in &mut points {
        if let Some(i) = find(thetas, p.theta) {
            p.error = (p.energy - fci[i].e_total) * KCAL_PER_HARTREE;
        }
    }
    let summary: Vec<H4Summary> = fci
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let finite: Vec<f64> = uks[i].iter().map(|u| u.0).filter(|e| e.is_finite()).collect();
            let stat = |g: fn(f64, f64) -> f64, init: f64| (!finite.is_empty()).then(|| finite.iter().copied().fold(init, g));
            H4Summary {
                theta: f.theta,
                fci_singlet: f.e_total,
                fci_triplet: f.e_triplet,
                lowest_is_triplet: f.lowest_is_triplet,
                base_rks: base[i].0,
                model_rks: model_rks.as_ref().map(|m| m[i].0),
                uks_mean: (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64),
                uks_min: stat(f64::min, f64::INFINITY),
                uks_max: stat(f64::max, f64::NEG_INFINITY),
                uks_converged: uks[i].iter().filter(|u| u.1).count(),
            }
        })
        .collect();
    let singlet: Vec<f64> = summary.iter().map(|s| s.fci_singlet).collect();
    let base_e: Vec<f64> = summary.iter().map(|s| s.base_rks).collect();
    let mut stats = vec![curve_stats("fci-singlet", thetas, &singlet), curve_stats(&base_name, thetas, &base_e)];
    if let Some(m) = model {
        let rks: Vec<f64> = summary.iter().map(|s| s.model_rks.unwrap_or(f64::NAN)).collect();
        stats.push(curve_stats(&format!("{}-rks", m.config.variant.name()), thetas, &rks));
        if repeats > 0 {
            let mean: Vec<f64> = summary.iter().map(|s| s.uks_mean.unwrap_or(f64::NAN)).collect();
            stats.push(curve_stats(&format!("{}-uks-mean", m.config.variant.name()), thetas, &mean));
        }
    }
    let base_overshoot_kcal = stats[1].barrier_kcal.zip(stats[0].barrier_kcal).map(|(b, f)| b - f);
    Ok(H4Report { points, summary, stats, base_overshoot_kcal })
}

/// One row of the ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub epochs_to_threshold: Option<usize>,
    pub final_train_mae: Option<f64>,
    pub min_train_mae: Option<f64>,
    pub best_val_mae: Option<f64>,
    pub epochs_run: usize,
    pub stop_reason: Option<StopReason>,
    pub failed_epochs: usize,
    pub error: Option<String>,
}

/// Trains every variant in `variants` with otherwise identical settings.
/// A failing row records its error and the matrix continues.
pub fn ablation_matrix(cfg: &TrainConfig, data: &Dataset, variants: &[Variant]) -> (Vec<AblationRow>, Vec<RunRecord>) {
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for &v in variants {
        let mut c = cfg.clone();
        c.model.variant = v;
        match train(&c, data) {
            Ok(t) => {
                let r = t.record;
                rows.push(AblationRow {
                    variant: v,
                    epochs_to_threshold: r.epochs_to_threshold,
                    final_train_mae: Some(r.final_train_mae),
                    min_train_mae: Some(r.min_train_mae),
                    best_val_mae: Some(r.best_val_mae),
                    epochs_run: r.epochs.len(),
                    stop_reason: Some(r.stop_reason),
                    failed_epochs: r.epochs.iter().filter(|e| !e.failures.is_empty()).count(),
                    error: None,
                });
                records.push(r);
            }
            Err(e) => rows.push(AblationRow {
                variant: v,
                epochs_to_threshold: None,
                final_train_mae: None,
                min_train_mae: None,
                best_val_mae: None,
                epochs_run: 0,
                stop_reason: None,
                failed_epochs: 0,
                error: Some(e.to_string()),
            }),
        }
    }
    (rows, records)
}

/// CSV with a header row taken from the field names.
pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}
