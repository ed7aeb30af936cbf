//! Training loop for the learned functionals (ADAM, losses, early
//! stopping) and the experiment drivers built on it.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ad::Tensor;
use crate::error::{Error, Result};
use crate::fci::{dissociation_dataset, hydrogen_atom_energy, DissociationRecord};
use crate::geometry::Geometry;
use crate::graph::GraphConfig;
use crate::grid::GridPreset;
use crate::nn::{GraphInputs, Model, ModelConfig, Variant};
use crate::scf::{differentiable_run, model_inputs, scf_solve_from, xc_param_gradient, DensityTarget, ScfConfig, ScfMode, System, XcFunctional};
use crate::units::KCAL_PER_HARTREE;
use crate::xc::BaseFunctional;

mod adam;
mod experiments;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use experiments::{ablation_matrix, dissociation_experiment, h4_experiment, to_csv, AblationRow, CurvePoint, CurveStats, H4Point, H4Report, H4Summary};

pub const TRAIN_S: [f64; 6] = [1.0, 1.7, 2.4, 3.1, 3.8, 4.5];
pub const VALIDATION_S: [f64; 3] = [1.35, 2.75, 4.15];
/// Interpolative regime of the H₂ curve.
pub const INTERPOLATIVE_S: (f64, f64) = (1.0, 4.5);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub total: f64,
    pub atomization: f64,
    /// Grid-weighted density MSE against the FCI density.
    pub aux_density: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { total: 1.0, atomization: 1.0, aux_density: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub base: BaseFunctional,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub decoupled_weight_decay: bool,
    pub loss: LossWeights,
    pub train_s: Vec<f64>,
    pub val_s: Vec<f64>,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Unrolled SCF steps in the gradient; 0 differentiates at the
    /// converged density.
    pub unroll: usize,
    pub scf: ScfConfig,
    pub basis: String,
    pub grid: GridPreset,
    pub graph: GraphConfig,
    /// Training MAE (kcal/mol) whose first crossing is reported.
    pub threshold_kcal: f64,
    /// Stop as soon as the training MAE reaches this (kcal/mol).
    pub stop_at_kcal: Option<f64>,
    /// Per-target error (kcal/mol) charged for a failed SCF.
    pub divergence_penalty_kcal: f64,
    pub freeze_beta: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::new(Variant::ExphormerFull)
    }
}

impl TrainConfig {
    pub fn new(variant: Variant) -> Self {
        TrainConfig {
            model: ModelConfig::new(variant),
            base: BaseFunctional::Pw92,
            learning_rate: 5e-4,
            weight_decay: 5e-5,
            decoupled_weight_decay: false,
            loss: LossWeights::default(),
            train_s: TRAIN_S.to_vec(),
            val_s: VALIDATION_S.to_vec(),
            patience: 500,
            max_epochs: 2000,
            seed: 0,
            unroll: 0,
            scf: ScfConfig { break_symmetry: true, ..ScfConfig::training(ScfMode::Uks) },
            basis: "6-31g".into(),
            grid: GridPreset::Coarse,
            graph: GraphConfig::default(),
            threshold_kcal: 1.0,
            stop_at_kcal: None,
            divergence_penalty_kcal: 1e6,
            freeze_beta: false,
        }
    }

    pub fn variant(&self) -> Variant {
        self.model.variant
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.loss;
        if self.patience == 0 || self.max_epochs == 0 {
            return Err(Error::Config("patience and max_epochs must be positive".into()));
        }
        if [w.total, w.atomization, w.aux_density].iter().any(|x| !(x.is_finite() && *x >= 0.0)) || w.total + w.atomization + w.aux_density <= 0.0 {
            return Err(Error::Config(format!("loss weights must be non-negative with one positive, got {w:?}")));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("learning rate {} / weight decay {} out of range", self.learning_rate, self.weight_decay)));
        }
        if self.train_s.is_empty() || self.val_s.is_empty() {
            return Err(Error::Config("training and validation sets must be non-empty".into()));
        }
        if w.aux_density > 0.0 && self.unroll == 0 {
            return Err(Error::Config("the aux-density loss needs unroll ≥ 1 (the density response is not available at unroll 0)".into()));
        }
        self.scf.validate()
    }

    fn atom_scf(&self) -> ScfConfig {
        ScfConfig { mode: ScfMode::Uks, ..self.scf.clone() }
    }
}

/// FCI references for training and validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub basis: String,
    pub atom_energy: f64,
    pub train: Vec<DissociationRecord>,
    pub val: Vec<DissociationRecord>,
}

impl Dataset {
    pub fn build(cfg: &TrainConfig) -> Result<Self> {
        Ok(Dataset {
            basis: cfg.basis.clone(),
            atom_energy: hydrogen_atom_energy(&cfg.basis)?,
            train: dissociation_dataset(&cfg.train_s, &cfg.basis, 1)?,
            val: dissociation_dataset(&cfg.val_s, &cfg.basis, 1)?,
        })
    }
}

/// Loss terms in Hartree (the density term in a.u.); `weighted` is their
/// weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub atomization: f64,
    pub aux_density: f64,
    pub weighted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossParts,
    /// Mean absolute error over total and atomization energies, kcal/mol.
    pub train_mae: f64,
    pub train_mae_total: f64,
    pub train_mae_atomization: f64,
    pub val_mae: f64,
    pub failures: Vec<String>,
    /// Set when the optimizer step of this epoch was not taken.
    pub step_skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub split: String,
    pub s: f64,
    pub e_total: f64,
    pub e_reference: f64,
    pub e_atomization: f64,
    pub atomization_reference: f64,
    /// kcal/mol
    pub error_total: f64,
    pub error_atomization: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    TargetReached,
    EarlyStopped,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub variant: Variant,
    pub config: TrainConfig,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mae: f64,
    /// First epoch with training MAE at or below `threshold_kcal`.
    pub epochs_to_threshold: Option<usize>,
    pub final_train_mae: f64,
    pub min_train_mae: f64,
    pub stop_reason: StopReason,
    pub checkpoint_id: String,
    /// Model H-atom energy at the best epoch.
    pub atom_energy: f64,
    /// Per-geometry results at the best epoch.
    pub predictions: Vec<Prediction>,
}

/// A finished run with its best-validation checkpoint.
#[derive(Debug, Clone)]
pub struct Trained {
    pub record: RunRecord,
    pub model: Model,
}

struct Sample {
    label: String,
    s: f64,
    n_atoms: usize,
    sys: System,
    inputs: GraphInputs,
    e_ref: f64,
    a_ref: f64,
    density_ref: Option<Vec<f64>>,
    warm: Option<[DMatrix<f64>; 2]>,
}

#[derive(Debug, Clone)]
struct Eval {
    energy: f64,
    iterations: usize,
    failure: Option<String>,
    density: Option<[DMatrix<f64>; 2]>,
}

fn record_density(rec: &DissociationRecord) -> [DMatrix<f64>; 2] {
    let m = |rows: &Vec<Vec<f64>>| DMatrix::from_fn(rows.len(), rows.len(), |i, j| rows[i][j]);
    [m(&rec.density_alpha), m(&rec.density_beta)]
}

/// A system on the configured basis and grid, with a graph when `model`
/// needs one; `seed` is its expander seed.
pub fn build_system(cfg: &TrainConfig, model: Option<&ModelConfig>, geometry: Geometry, seed: u64) -> Result<System> {
    let sys = System::new(geometry, &cfg.basis, &cfg.grid)?;
    match model {
        Some(m) if m.variant.uses_graph() => {
            let g = GraphConfig { seed, n_global: m.n_global, ..cfg.graph };
            sys.with_graph(&m.variant.graph_config(&g))
        }
        _ => Ok(sys),
    }
}

/// Systems with cached graphs: one expander per geometry for the whole run.
fn prepare(cfg: &TrainConfig, data: &Dataset, model: &Model) -> Result<(Vec<Sample>, Vec<Sample>, Sample)> {
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut make = |label: String, s: f64, geometry: Geometry, e_ref: f64, a_ref: f64, rec: Option<&DissociationRecord>| -> Result<Sample> {
        let sys = build_system(cfg, Some(&model.config), geometry, rng.gen())?;
        let inputs = model_inputs(model, &sys)?;
        let density_ref = match rec {
            Some(r) if cfg.loss.aux_density > 0.0 => Some(sys.density_on_grid(&record_density(r))),
            _ => None,
        };
        Ok(Sample { label, s, n_atoms: sys.geometry.n_atoms(), sys, inputs, e_ref, a_ref, density_ref, warm: None })
    };
    let mut split = |name: &str, recs: &[DissociationRecord]| -> Result<Vec<Sample>> {
        recs.iter().map(|r| make(format!("{name} S={}", r.s), r.s, Geometry::new(r.geometry.clone()), r.e_total, r.e_atomization, Some(r))).collect()
    };
    let train = split("train", &data.train)?;
    let val = split("val", &data.val)?;
    let atom = make("H atom".into(), 0.0, Geometry::hydrogen_atom(), data.atom_energy, 0.0, None)?;
    Ok((train, val, atom))
}

fn solve(sample: &Sample, xc: &XcFunctional, scf: &ScfConfig) -> Result<Eval> {
    let attempt = |guess: Option<&[DMatrix<f64>; 2]>| -> Result<Eval> {
        match scf_solve_from(&sample.sys, xc, scf, guess) {
            Ok(st) => Ok(Eval {
                energy: st.total_energy(),
                iterations: st.iterations,
                failure: (!st.converged).then(|| format!("{}: not converged after {} iterations", sample.label, st.iterations)),
                density: Some(st.density),
            }),
            Err(e @ (Error::Divergence { .. } | Error::Numerical { .. })) => {
                Ok(Eval { energy: f64::NAN, iterations: 0, failure: Some(format!("{}: {e}", sample.label)), density: None })
            }
            Err(e) => Err(e),
        }
    };
    if let Some(w) = &sample.warm {
        let e = attempt(Some(w))?;
        if e.failure.is_none() {
            return Ok(e);
        }
    }
    attempt(None)
}

struct Scored {
    train_err: Vec<(f64, f64)>,
    val_err: Vec<(f64, f64)>,
    loss: LossParts,
}

fn mae_kcal(errs: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = errs.len() as f64;
    let t = errs.iter().map(|e| e.0.abs()).sum::<f64>() / n * KCAL_PER_HARTREE;
    let a = errs.iter().map(|e| e.1.abs()).sum::<f64>() / n * KCAL_PER_HARTREE;
    (0.5 * (t + a), t, a)
}

/// Signed errors `(E − E_ref, A − A_ref)`; a failed system is charged the
/// penalty and contributes no gradient.
fn errors(samples: &[Sample], evals: &[Eval], atom: &Eval, penalty: f64) -> Vec<(f64, f64)> {
    samples
        .iter()
        .zip(evals)
        .map(|(s, e)| {
            if e.failure.is_some() {
                return (penalty, penalty);
            }
            let de = e.energy - s.e_ref;
            let da = if atom.failure.is_some() { penalty } else { (s.n_atoms as f64 * atom.energy - e.energy) - s.a_ref };
            (de, da)
        })
        .collect()
}

fn score(cfg: &TrainConfig, train: &[Sample], val: &[Sample], ev_train: &[Eval], ev_val: &[Eval], ev_atom: &Eval) -> Scored {
    let penalty = cfg.divergence_penalty_kcal / KCAL_PER_HARTREE;
    let train_err = errors(train, ev_train, ev_atom, penalty);
    let val_err = errors(val, ev_val, ev_atom, penalty);
    let aux: Vec<f64> = train
        .iter()
        .zip(ev_train)
        .map(|(s, e)| match (&s.density_ref, &e.density) {
            (Some(r), Some(d)) if e.failure.is_none() => {
                let n = s.sys.density_on_grid(d);
                n.iter().zip(r).zip(s.sys.weights.iter()).map(|((a, b), w)| w * (a - b) * (a - b)).sum()
            }
            _ => 0.0,
        })
        .collect();
    let n = train.len() as f64;
    let total = train_err.iter().map(|e| e.0.abs()).sum::<f64>() / n;
    let atomization = train_err.iter().map(|e| e.1.abs()).sum::<f64>() / n;
    let aux_density = aux.iter().sum::<f64>() / n;
    let w = &cfg.loss;
    let weighted = w.total * total + w.atomization * atomization + w.aux_density * aux_density;
    Scored { train_err, val_err, loss: LossParts { total, atomization, aux_density, weighted } }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Gradient of `energy_weight · E + aux` for one system.
fn system_gradient(cfg: &TrainConfig, sample: &Sample, xc: &XcFunctional, density: &[DMatrix<f64>; 2], energy_weight: f64, aux_weight: f64, scf: &ScfConfig) -> Result<Vec<Tensor<f64>>> {
    if cfg.unroll == 0 {
        let mut g = xc_param_gradient(&sample.sys, xc, density)?.1;
        g.iter_mut().for_each(|t| t.data.iter_mut().for_each(|x| *x *= energy_weight));
        return Ok(g);
    }
    let target = sample.density_ref.as_deref().filter(|_| aux_weight > 0.0).map(|density| DensityTarget { density, weight: aux_weight });
    Ok(differentiable_run(&sample.sys, xc, scf, density, cfg.unroll, energy_weight, target)?.grad)
}

fn predictions(split: &str, samples: &[Sample], evals: &[Eval], errs: &[(f64, f64)], atom: &Eval) -> Vec<Prediction> {
    samples
        .iter()
        .zip(evals)
        .zip(errs)
        .map(|((s, e), err)| Prediction {
            split: split.into(),
            s: s.s,
            e_total: e.energy,
            e_reference: s.e_ref,
            e_atomization: s.n_atoms as f64 * atom.energy - e.energy,
            atomization_reference: s.a_ref,
            error_total: err.0 * KCAL_PER_HARTREE,
            error_atomization: err.1 * KCAL_PER_HARTREE,
            converged: e.failure.is_none(),
            iterations: e.iterations,
        })
        .collect()
}

struct Evaluated {
    train: Vec<Eval>,
    val: Vec<Eval>,
    atom: Eval,
    scored: Scored,
}

/// The systems of one run with their cached graphs and warm starts.
struct Trainer<'c> {
    cfg: &'c TrainConfig,
    train: Vec<Sample>,
    val: Vec<Sample>,
    atom: Sample,
    atom_scf: ScfConfig,
}

impl<'c> Trainer<'c> {
    fn new(cfg: &'c TrainConfig, data: &Dataset, model: &Model) -> Result<Self> {
        let (train, val, atom) = prepare(cfg, data, model)?;
        Ok(Trainer { cfg, train, val, atom, atom_scf: cfg.atom_scf() })
    }

    fn xc<'m>(&self, model: &'m Model, s: &Sample) -> XcFunctional<'m> {
        XcFunctional::with_inputs(self.cfg.base, model, s.inputs.clone())
    }

    fn evaluate(&self, model: &Model) -> Result<Evaluated> {
        let run = |samples: &[Sample]| -> Result<Vec<Eval>> { samples.par_iter().map(|s| solve(s, &self.xc(model, s), &self.cfg.scf)).collect() };
        let train = run(&self.train)?;
        let val = run(&self.val)?;
        let atom = solve(&self.atom, &self.xc(model, &self.atom), &self.atom_scf)?;
        let scored = score(self.cfg, &self.train, &self.val, &train, &val, &atom);
        Ok(Evaluated { train, val, atom, scored })
    }

    fn keep_warm(&mut self, ev: &Evaluated) {
        let samples = self.train.iter_mut().chain(self.val.iter_mut()).chain([&mut self.atom]);
        for (s, e) in samples.zip(ev.train.iter().chain(&ev.val).chain([&ev.atom])) {
            s.warm = if e.failure.is_none() { e.density.clone() } else { None };
        }
    }

    /// dL/dθ = Σ_i c_i ∂E_i/∂θ + c_H ∂E_H/∂θ (+ density terms), summed in
    /// a fixed order.
    fn gradient(&self, model: &Model, ev: &Evaluated) -> Result<Vec<Tensor<f64>>> {
        let w = &self.cfg.loss;
        let n = self.train.len() as f64;
        let atom_ok = ev.atom.failure.is_none();
        let mut c_atom = 0.0;
        let mut jobs = Vec::new();
        for (i, (e, err)) in ev.train.iter().zip(&ev.scored.train_err).enumerate() {
            if e.failure.is_some() {
                continue;
            }
            let mut c = w.total / n * sign(err.0);
            if atom_ok {
                c -= w.atomization / n * sign(err.1);
                c_atom += w.atomization / n * self.train[i].n_atoms as f64 * sign(err.1);
            }
            let aux_w = w.aux_density / n;
            if c != 0.0 || aux_w > 0.0 {
                jobs.push((i, c, aux_w));
            }
        }
        let mut grads: Vec<Vec<Tensor<f64>>> = jobs
            .par_iter()
            .map(|&(i, c, aux_w)| {
                let s = &self.train[i];
                system_gradient(self.cfg, s, &self.xc(model, s), ev.train[i].density.as_ref().unwrap(), c, aux_w, &self.cfg.scf)
            })
            .collect::<Result<_>>()?;
        if atom_ok && c_atom != 0.0 {
            grads.push(system_gradient(self.cfg, &self.atom, &self.xc(model, &self.atom), ev.atom.density.as_ref().unwrap(), c_atom, 0.0, &self.atom_scf)?);
        }
        let mut total: Vec<Tensor<f64>> = model.params.values().iter().map(|p| Tensor::zeros(p.rows, p.cols)).collect();
        for g in &grads {
            for (t, x) in total.iter_mut().zip(g) {
                t.add_assign(x);
            }
        }
        Ok(total)
    }
}

pub fn train(cfg: &TrainConfig, data: &Dataset) -> Result<Trained> {
    train_with_progress(cfg, data, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with_progress(cfg: &TrainConfig, data: &Dataset, mut progress: impl FnMut(&EpochRecord)) -> Result<Trained> {
    cfg.validate()?;
    if data.basis != cfg.basis {
        return Err(Error::Config(format!("dataset basis {} differs from config basis {}", data.basis, cfg.basis)));
    }
    let mut model = Model::init(cfg.model.clone(), cfg.seed)?;
    let mut trainer = Trainer::new(cfg, data, &model)?;
    let frozen: Vec<bool> = model.params.names().iter().map(|n| cfg.freeze_beta && n == "beta").collect();
    let mut adam = AdamState::new(model.params.values());

    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64, Model, f64, Vec<Prediction>)> = None;
    let mut since_best = 0;
    let mut stop_reason = StopReason::MaxEpochs;
    for epoch in 1..=cfg.max_epochs {
        let ev = trainer.evaluate(&model)?;
        let sc = &ev.scored;
        let (train_mae, train_mae_total, train_mae_atomization) = mae_kcal(&sc.train_err);
        let val_mae = mae_kcal(&sc.val_err).0;
        let failures: Vec<String> = ev.train.iter().chain(&ev.val).chain([&ev.atom]).filter_map(|e| e.failure.clone()).collect();

        if best.as_ref().is_none_or(|b| val_mae < b.1) {
            let mut preds = predictions("train", &trainer.train, &ev.train, &sc.train_err, &ev.atom);
            preds.extend(predictions("val", &trainer.val, &ev.val, &sc.val_err, &ev.atom));
            best = Some((epoch, val_mae, model.clone(), ev.atom.energy, preds));
            since_best = 0;
        } else {
            since_best += 1;
        }
        trainer.keep_warm(&ev);

        let stop = if cfg.stop_at_kcal.is_some_and(|t| train_mae <= t) {
            Some(StopReason::TargetReached)
        } else if since_best >= cfg.patience {
            Some(StopReason::EarlyStopped)
        } else if epoch == cfg.max_epochs {
            Some(StopReason::MaxEpochs)
        } else {
            None
        };
        let mut step_skipped = None;
        if stop.is_none() {
            let g = trainer.gradient(&model, &ev)?;
            if let Err(e) = adam_step(model.params.values_mut(), &g, &mut adam, cfg.learning_rate, cfg.weight_decay, cfg.decoupled_weight_decay, &frozen) {
                step_skipped = Some(e.to_string());
            }
        }
        let rec = EpochRecord { epoch, loss: sc.loss, train_mae, train_mae_total, train_mae_atomization, val_mae, failures, step_skipped };
        progress(&rec);
        epochs.push(rec);
        if let Some(r) = stop {
            stop_reason = r;
            break;
        }
    }
    let (best_epoch, best_val_mae, best_model, atom_energy, predictions) = best.ok_or_else(|| Error::Config("max_epochs must be positive".into()))?;
    let epochs_to_threshold = epochs.iter().find(|e| e.train_mae <= cfg.threshold_kcal).map(|e| e.epoch);
    let final_train_mae = epochs.last().map_or(f64::NAN, |e| e.train_mae);
    let min_train_mae = epochs.iter().map(|e| e.train_mae).fold(f64::INFINITY, f64::min);
    let record = RunRecord {
        variant: cfg.variant(),
        config: cfg.clone(),
        epochs,
        best_epoch,
        best_val_mae,
        epochs_to_threshold,
        final_train_mae,
        min_train_mae,
        stop_reason,
        checkpoint_id: format!("{}-seed{}-epoch{}", cfg.variant().name(), cfg.seed, best_epoch),
        atom_energy,
        predictions,
    };
    Ok(Trained { record, model: best_model })
}
