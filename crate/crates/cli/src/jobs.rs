//! One serializable job per subcommand. The resolved job is what gets
//! embedded in every output.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use exphormer_xc::fci::{dissociation_dataset, fci_geometry, h4_dataset, to_jsonl};
use exphormer_xc::graph::{assemble, expander_edges, spectral_gap, EdgeKind, GraphConfig};
use exphormer_xc::grid::{build_grid, GridPreset};
use exphormer_xc::nn::{Model, ModelConfig, Variant};
use exphormer_xc::scf::{scf_solve, ScfConfig, ScfMode, System, XcFunctional};
use exphormer_xc::train::{
    ablation_matrix, dissociation_experiment, h4_experiment, to_csv, train_with_progress, Dataset,
    TrainConfig,
};
use exphormer_xc::xc::{BaseFunctional, XcKind};
use exphormer_xc::Geometry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GeometrySpec {
    Atom,
    /// H₂ at a multiple of the equilibrium bond length.
    H2 { s: f64 },
    /// Planar H₄ on a circle of radius `r` Bohr.
    H4 { theta: f64, r: f64 },
    Chain { n: usize, spacing: f64 },
    /// Angstrom XYZ file.
    Xyz { path: PathBuf },
    /// Bohr positions.
    Explicit(Geometry),
}

impl Default for GeometrySpec {
    fn default() -> Self {
        GeometrySpec::H2 { s: 1.0 }
    }
}

impl GeometrySpec {
    pub fn build(&self) -> Result<Geometry> {
        Ok(match self {
            GeometrySpec::Atom => Geometry::hydrogen_atom(),
            GeometrySpec::H2 { s } => Geometry::h2_scaled(*s),
            GeometrySpec::H4 { theta, r } => Geometry::h4(*theta, *r),
            GeometrySpec::Chain { n, spacing } => Geometry::chain(*n, *spacing),
            GeometrySpec::Xyz { path } => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                Geometry::from_xyz(&text)?
            }
            GeometrySpec::Explicit(g) => g.clone(),
        })
    }
}

fn coarse() -> GridPreset {
    GridPreset::Coarse
}
fn basis() -> String {
    "6-31g".into()
}

/// Pretty JSON document `{config, <key>: value}` with a trailing newline.
pub fn document(config: &impl Serialize, key: &str, value: impl Serialize) -> Result<String> {
    let mut m = serde_json::Map::new();
    m.insert("config".into(), serde_json::to_value(config)?);
    m.insert(key.into(), serde_json::to_value(value)?);
    Ok(serde_json::to_string_pretty(&Value::Object(m))? + "\n")
}

/// CSV preceded by a `# config` comment line.
pub fn csv_document(config: &impl Serialize, csv: &str) -> Result<String> {
    Ok(format!("# config {}\n{csv}", serde_json::to_string(config)?))
}

/// JSON lines preceded by a `{"config": ...}` line.
pub fn jsonl_document(config: &impl Serialize, body: &str) -> Result<String> {
    Ok(format!("{}\n{body}", serde_json::to_string(&json!({ "config": config }))?))
}

pub fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, text).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write_in(dir: &Path, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let p = dir.join(name);
    fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridJob {
    pub geometry: GeometrySpec,
    pub grid: GridPreset,
}

impl Default for GridJob {
    fn default() -> Self {
        GridJob { geometry: GeometrySpec::default(), grid: coarse() }
    }
}

pub fn grid_build(job: &GridJob) -> Result<String> {
    let geometry = job.geometry.build()?;
    let grid = build_grid(&geometry, &job.grid)?;
    let points: Vec<[f64; 4]> = (0..grid.len()).map(|i| [grid.points[i][0], grid.points[i][1], grid.points[i][2], grid.weights[i]]).collect();
    let per_atom: Vec<usize> = (0..geometry.n_atoms()).map(|a| grid.atom_shells(a).map(|s| grid.angular(s.order).len()).sum()).collect();
    document(job, "grid", json!({
        "geometry": geometry,
        "n_points": grid.len(),
        "points_per_atom": per_atom,
        "weight_sum": grid.weights.iter().sum::<f64>(),
        "points": points,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphJob {
    pub geometry: GeometrySpec,
    pub grid: GridPreset,
    pub graph: GraphConfig,
    /// Include the full edge list in the output.
    pub edges: bool,
}

impl Default for GraphJob {
    fn default() -> Self {
        GraphJob { geometry: GeometrySpec::default(), grid: coarse(), graph: GraphConfig::default(), edges: true }
    }
}

pub fn graph_build(job: &GraphJob) -> Result<String> {
    let geometry = job.geometry.build()?;
    let grid = build_grid(&geometry, &job.grid)?;
    let g = assemble(&grid, &job.graph)?;
    g.validate()?;
    let n_vertices = g.n_vertices();
    let counts: Vec<(EdgeKind, usize)> = [EdgeKind::Local, EdgeKind::Expander, EdgeKind::Global].iter().map(|&k| (k, g.count(k))).collect();
    let total: usize = counts.iter().map(|c| c.1).sum();
    let mut summary = json!({
        "n_grid": g.n_grid,
        "n_vertices": n_vertices,
        "edge_counts": counts.iter().map(|(k, c)| (format!("{k:?}").to_lowercase(), Value::from(*c))).collect::<serde_json::Map<_, _>>(),
        "total_edges": total,
        "mean_degree": 2.0 * total as f64 / n_vertices as f64,
    });
    if job.edges {
        summary["edges"] = serde_json::to_value(&g.edges)?;
    }
    document(job, "graph", summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateJob {
    pub n_vertices: usize,
    pub degree: usize,
    pub instances: usize,
    /// Instance `i` uses seed `seed + i`.
    pub seed: u64,
}

impl Default for ValidateJob {
    fn default() -> Self {
        ValidateJob { n_vertices: 7094, degree: 6, instances: 10, seed: 0 }
    }
}

pub fn graph_validate(job: &ValidateJob) -> Result<(String, bool)> {
    if job.instances == 0 {
        bail!("instances must be positive");
    }
    let reports = (0..job.instances as u64)
        .map(|i| {
            let seed = job.seed + i;
            let pairs = expander_edges(job.n_vertices, job.degree, seed)?;
            let r = spectral_gap(&pairs, job.n_vertices, job.degree)?;
            Ok(json!({ "seed": seed, "report": r }))
        })
        .collect::<Result<Vec<_>>>()?;
    let pass = reports.iter().all(|r| r["report"]["pass"] == Value::Bool(true));
    Ok((document(job, "validation", json!({ "all_pass": pass, "instances": reports }))?, pass))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScfJob {
    pub geometry: GeometrySpec,
    pub grid: GridPreset,
    pub basis: String,
    pub xc: XcKind,
    pub scf: ScfConfig,
    /// Learned functionals only; without it a fresh exphormer-full model
    /// seeded with `graph.seed` is used.
    pub checkpoint: Option<PathBuf>,
    /// `graph.seed` also seeds a fresh model.
    pub graph: GraphConfig,
}

impl Default for ScfJob {
    fn default() -> Self {
        ScfJob {
            geometry: GeometrySpec::default(),
            grid: coarse(),
            basis: basis(),
            xc: XcKind::Pw92,
            scf: ScfConfig::new(ScfMode::Rks),
            checkpoint: None,
            graph: GraphConfig::default(),
        }
    }
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, Value)> {
    let bytes = fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    Ok(Model::load(&bytes)?)
}

pub fn scf_run(job: &ScfJob) -> Result<String> {
    job.scf.validate()?;
    let geometry = job.geometry.build()?;
    let mut sys = System::new(geometry.clone(), &job.basis, &job.grid)?;
    let model = match (job.xc.is_learned(), &job.checkpoint) {
        (false, Some(_)) => bail!("a checkpoint needs a learned functional (exphormer-pw92 or exphormer-pbe)"),
        (false, None) => None,
        (true, Some(p)) => Some(load_checkpoint(p)?.0),
        (true, None) => Some(Model::init(ModelConfig::new(Variant::ExphormerFull), job.graph.seed)?),
    };
    if let Some(m) = &model {
        if m.config.variant.uses_graph() {
            let g = GraphConfig { n_global: m.config.n_global, ..job.graph };
            sys = sys.with_graph(&m.config.variant.graph_config(&g))?;
        }
    }
    let xc = match &model {
        Some(m) => XcFunctional::learned(job.xc.base(), m, &sys)?,
        None => XcFunctional::plain(job.xc.base()),
    };
    let st = scf_solve(&sys, &xc, &job.scf)?;
    let mut result = st.summary();
    result["geometry"] = serde_json::to_value(&geometry)?;
    result["n_grid"] = Value::from(sys.grid.len());
    result["n_basis"] = Value::from(sys.n_basis());
    document(job, "scf", result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FciJob {
    pub geometry: GeometrySpec,
    pub basis: String,
    /// Roots to report; 0 reports the full spectrum.
    pub roots: usize,
}

impl Default for FciJob {
    fn default() -> Self {
        FciJob { geometry: GeometrySpec::default(), basis: basis(), roots: 2 }
    }
}

pub fn fci_run(job: &FciJob) -> Result<String> {
    let geometry = job.geometry.build()?;
    let f = fci_geometry(&geometry, &job.basis, job.roots)?;
    document(job, "fci", json!({
        "geometry": geometry,
        "dimension": f.space.dim(),
        "ground_energy": f.ground_energy(),
        "energies": f.energies,
        "s2": f.s2,
        "singlet": f.singlet().map(|(k, e)| json!({ "root": k, "energy": e })),
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    H2,
    H4,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepJob {
    pub sweep: SweepKind,
    /// Scale factors for H₂, angles in degrees for H₄.
    pub values: Vec<f64>,
    /// H₄ circle radius, Bohr.
    pub r: f64,
    pub basis: String,
    /// H₂ roots per geometry.
    pub roots: usize,
}

impl Default for SweepJob {
    fn default() -> Self {
        SweepJob { sweep: SweepKind::H2, values: Vec::new(), r: 2.0, basis: basis(), roots: 2 }
    }
}

/// 0.5 to 5.0 in steps of 0.25.
pub fn default_s_values() -> Vec<f64> {
    (0..=18).map(|i| 0.5 + 0.25 * i as f64).collect()
}

/// 40° to 50° in 1° steps.
pub fn default_thetas() -> Vec<f64> {
    (40..=50).map(f64::from).collect()
}

pub fn fci_sweep(job: &SweepJob) -> Result<String> {
    let body = match job.sweep {
        SweepKind::H2 => {
            let s = if job.values.is_empty() { default_s_values() } else { job.values.clone() };
            to_jsonl(&dissociation_dataset(&s, &job.basis, job.roots)?)?
        }
        SweepKind::H4 => {
            let t = if job.values.is_empty() { default_thetas() } else { job.values.clone() };
            to_jsonl(&h4_dataset(&t, job.r, &job.basis)?)?
        }
    };
    jsonl_document(job, &body)
}

pub fn train_run(cfg: &TrainConfig, out_dir: &Path, quiet: bool) -> Result<String> {
    let data = Dataset::build(cfg)?;
    let out = train_with_progress(cfg, &data, |e| {
        if !quiet {
            eprintln!("epoch {:>5}  train {:>10.4}  val {:>10.4} kcal/mol{}", e.epoch, e.train_mae, e.val_mae, if e.failures.is_empty() { String::new() } else { format!("  failures {:?}", e.failures) });
        }
    })?;
    let r = &out.record;
    write_in(out_dir, "record.json", document(cfg, "record", r)?)?;
    write_in(out_dir, "epochs.csv", csv_document(cfg, &to_csv(&epoch_rows(r))?)?)?;
    write_in(out_dir, "predictions.csv", csv_document(cfg, &to_csv(&r.predictions)?)?)?;
    let meta = json!({ "config": cfg, "checkpoint_id": r.checkpoint_id });
    write_in(out_dir, "checkpoint.bin", out.model.save(meta)?)?;
    Ok(format!(
        "{}: stopped ({:?}) after {} epochs; best validation MAE {:.4} kcal/mol at epoch {}; final train MAE {:.4}\n",
        r.checkpoint_id,
        r.stop_reason,
        r.epochs.len(),
        r.best_val_mae,
        r.best_epoch,
        r.final_train_mae
    ))
}

#[derive(Serialize)]
struct EpochRow {
    epoch: usize,
    loss: f64,
    loss_total: f64,
    loss_atomization: f64,
    loss_aux_density: f64,
    train_mae: f64,
    train_mae_total: f64,
    train_mae_atomization: f64,
    val_mae: f64,
    failures: usize,
    step_skipped: bool,
}

fn epoch_rows(r: &exphormer_xc::train::RunRecord) -> Vec<EpochRow> {
    r.epochs
        .iter()
        .map(|e| EpochRow {
            epoch: e.epoch,
            loss: e.loss.weighted,
            loss_total: e.loss.total,
            loss_atomization: e.loss.atomization,
            loss_aux_density: e.loss.aux_density,
            train_mae: e.train_mae,
            train_mae_total: e.train_mae_total,
            train_mae_atomization: e.train_mae_atomization,
            val_mae: e.val_mae,
            failures: e.failures.len(),
            step_skipped: e.step_skipped.is_some(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DissociationJob {
    pub train: TrainConfig,
    pub checkpoint: Option<PathBuf>,
    /// Evaluate a freshly initialized model (β = 0) instead of a checkpoint.
    pub untrained: bool,
    pub s_values: Vec<f64>,
}

impl Default for DissociationJob {
    fn default() -> Self {
        DissociationJob { train: TrainConfig::default(), checkpoint: None, untrained: false, s_values: default_s_values() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct H4Job {
    pub train: TrainConfig,
    pub checkpoint: Option<PathBuf>,
    pub untrained: bool,
    pub thetas: Vec<f64>,
    pub repeats: usize,
    pub r: f64,
}

impl Default for H4Job {
    fn default() -> Self {
        let train = TrainConfig { base: BaseFunctional::Pbe, ..TrainConfig::default() };
        H4Job { train, checkpoint: None, untrained: false, thetas: default_thetas(), repeats: 10, r: 2.0 }
    }
}

fn eval_model(cfg: &TrainConfig, checkpoint: &Option<PathBuf>, untrained: bool) -> Result<Option<Model>> {
    match (checkpoint, untrained) {
        (Some(_), true) => bail!("choose either a checkpoint or an untrained model"),
        (Some(p), false) => {
            let m = load_checkpoint(p)?.0;
            if m.config != cfg.model {
                bail!("checkpoint model {} does not match the configured model", serde_json::to_string(&m.config)?);
            }
            Ok(Some(m))
        }
        (None, true) => Ok(Some(Model::init(cfg.model.clone(), cfg.seed)?)),
        (None, false) => Ok(None),
    }
}

pub fn eval_dissociation(job: &DissociationJob, out_dir: &Path) -> Result<String> {
    let cfg = &job.train;
    let model = eval_model(cfg, &job.checkpoint, job.untrained)?;
    let pts = dissociation_experiment(model.as_ref(), cfg, &job.s_values)?;
    write_in(out_dir, "dissociation.csv", csv_document(job, &to_csv(&pts)?)?)?;
    write_in(out_dir, "dissociation.json", document(job, "points", &pts)?)?;
    let worst = pts
        .iter()
        .filter(|p| p.interpolative && p.method != "fci")
        .fold(std::collections::BTreeMap::<&str, f64>::new(), |mut m, p| {
            let e = m.entry(p.method.as_str()).or_insert(0.0);
            *e = e.max(p.error.abs());
            m
        });
    Ok(worst.iter().map(|(k, v)| format!("{k}: max |error| in [1, 4.5] = {v:.4} kcal/mol\n")).collect())
}

pub fn eval_h4(job: &H4Job, out_dir: &Path) -> Result<String> {
    let cfg = &job.train;
    let model = eval_model(cfg, &job.checkpoint, job.untrained)?;
    let rep = h4_experiment(model.as_ref(), cfg, &job.thetas, job.repeats, job.r)?;
    write_in(out_dir, "h4.csv", csv_document(job, &to_csv(&rep.points)?)?)?;
    write_in(out_dir, "h4_summary.csv", csv_document(job, &to_csv(&rep.summary)?)?)?;
    write_in(out_dir, "h4.json", document(job, "report", &rep)?)?;
    let mut s = String::new();
    for st in &rep.stats {
        s += &format!("{}: barrier {:?} kcal/mol, curvature ratio 45°/42° {:?}\n", st.method, st.barrier_kcal, st.curvature_ratio);
    }
    if let Some(o) = rep.base_overshoot_kcal {
        s += &format!("restricted {} overshoot vs FCI singlet: {o:.3} kcal/mol\n", cfg.base.name());
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateJob {
    pub train: TrainConfig,
    pub variants: Vec<Variant>,
}

impl Default for AblateJob {
    fn default() -> Self {
        AblateJob { train: TrainConfig::default(), variants: Variant::ALL.to_vec() }
    }
}

pub fn ablate(job: &AblateJob, out_dir: &Path) -> Result<String> {
    if job.variants.is_empty() {
        bail!("no variants to run");
    }
    let data = Dataset::build(&job.train)?;
    let (rows, runs) = ablation_matrix(&job.train, &data, &job.variants);
    write_in(out_dir, "ablation.csv", csv_document(job, &to_csv(&rows)?)?)?;
    write_in(out_dir, "ablation.json", document(job, "rows", &rows)?)?;
    write_in(out_dir, "runs.jsonl", jsonl_document(job, &to_jsonl(&runs)?)?)?;
    Ok(rows
        .iter()
        .map(|r| match &r.error {
            Some(e) => format!("{:<22} error: {e}\n", r.variant.name()),
            None => format!(
                "{:<22} epochs to threshold {:>6}  final train MAE {:>10.4}\n",
                r.variant.name(),
                r.epochs_to_threshold.map_or("-".into(), |e| e.to_string()),
                r.final_train_mae.unwrap_or(f64::NAN)
            ),
        })
        .collect())
}
