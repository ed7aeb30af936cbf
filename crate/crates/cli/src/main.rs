//! `exc`: command-line harness for the Exphormer-XC stack.
//!
//! Every subcommand resolves a JSON job from defaults, `--config FILE`,
//! `EXC_SEED` (when the file leaves the seed unset) and flags, in that
//! order. `--set path=value` overrides any field, including those without
//! a dedicated flag.

mod config;
mod jobs;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use config::{parse_set, resolve, Layers};
use jobs::*;

#[derive(Parser)]
#[command(name = "exc", version, about = "Differentiable Kohn-Sham DFT with an expander-graph XC functional")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Molecular quadrature grids.
    #[command(subcommand)]
    Grid(GridCmd),
    /// Electron graphs and expander validation.
    #[command(subcommand)]
    Graph(GraphCmd),
    /// Kohn-Sham SCF.
    #[command(subcommand)]
    Scf(ScfCmd),
    /// Full configuration interaction references.
    #[command(subcommand)]
    Fci(FciCmd),
    /// Train one model variant on the H2 dissociation set.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Train every variant with the same seed and budget.
    Ablate(AblateArgs),
}

#[derive(Subcommand)]
enum GridCmd {
    Build(GridBuildArgs),
}

#[derive(Subcommand)]
enum GraphCmd {
    Build(GraphBuildArgs),
    /// Spectral check of seeded expander instances.
    Validate(ValidateArgs),
}

#[derive(Subcommand)]
enum ScfCmd {
    Run(ScfArgs),
}

#[derive(Subcommand)]
enum FciCmd {
    Run(FciArgs),
    /// H2 dissociation or H4 rectangle sweep as JSON lines.
    Sweep(SweepArgs),
}

#[derive(Subcommand)]
enum EvalCmd {
    /// H2 curve against FCI.
    Dissociation(DissociationArgs),
    /// Planar H4 barrier.
    H4(H4Args),
}

#[derive(Args)]
struct Common {
    /// JSON job file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override any field: --set scf.threshold=1e-9
    #[arg(long = "set", value_name = "PATH=JSON")]
    set: Vec<String>,
    /// Print the resolved job and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct FileOut {
    /// Output file; stdout if absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DirOut {
    #[arg(long, default_value = "exc-out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct GeomArgs {
    /// XYZ file (Angstrom).
    xyz: Option<PathBuf>,
    /// H2 at S times the equilibrium bond length.
    #[arg(long, conflicts_with_all = ["xyz", "h4", "chain", "atom"])]
    h2: Option<f64>,
    /// Planar H4 at this angle in degrees.
    #[arg(long, conflicts_with_all = ["xyz", "chain", "atom"])]
    h4: Option<f64>,
    /// H4 circle radius in Bohr.
    #[arg(long, requires = "h4")]
    radius: Option<f64>,
    /// Linear H chain of N atoms.
    #[arg(long, conflicts_with_all = ["xyz", "atom"])]
    chain: Option<usize>,
    /// Chain spacing in Bohr.
    #[arg(long, requires = "chain")]
    spacing: Option<f64>,
    /// A single H atom.
    #[arg(long)]
    atom: bool,
}

impl GeomArgs {
    fn overrides(&self, o: &mut Vec<(String, Value)>) {
        let g = if let Some(p) = &self.xyz {
            json!({ "kind": "xyz", "path": p })
        } else if let Some(s) = self.h2 {
            json!({ "kind": "h2", "s": s })
        } else if let Some(t) = self.h4 {
            json!({ "kind": "h4", "theta": t, "r": self.radius.unwrap_or(2.0) })
        } else if let Some(n) = self.chain {
            json!({ "kind": "chain", "n": n, "spacing": self.spacing.unwrap_or(2.0) })
        } else if self.atom {
            json!({ "kind": "atom" })
        } else {
            return;
        };
        o.push(("geometry".into(), g));
    }
}

#[derive(Args)]
struct GridArgs {
    /// paper-like, coarse or custom.
    #[arg(long)]
    grid: Option<String>,
    /// Custom grid: radial points per atom.
    #[arg(long)]
    radial_points: Option<usize>,
    /// Custom grid: Lebedev orders, one per shell or a single one for all.
    #[arg(long, value_delimiter = ',')]
    lebedev_schedule: Option<Vec<usize>>,
}

impl GridArgs {
    fn overrides(&self, prefix: &str, o: &mut Vec<(String, Value)>) {
        let custom = self.grid.as_deref() == Some("custom") || self.radial_points.is_some() || self.lebedev_schedule.is_some();
        let v = if custom {
            let mut v = json!({ "preset": "custom" });
            if let Some(n) = self.radial_points {
                v["radial_points"] = json!(n);
            }
            if let Some(s) = &self.lebedev_schedule {
                v["lebedev_schedule"] = json!(s);
            }
            v
        } else if let Some(g) = &self.grid {
            json!({ "preset": g })
        } else {
            return;
        };
        o.push((format!("{prefix}grid"), v));
    }
}

#[derive(Args)]
struct GraphArgs {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    expander_degree: Option<usize>,
    /// Number of global vertices.
    #[arg(long)]
    globals: Option<usize>,
}

#[derive(Args)]
struct GridBuildArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    geom: GeomArgs,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    out: FileOut,
}

#[derive(Args)]
struct GraphBuildArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    geom: GeomArgs,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long)]
    seed: Option<u64>,
    /// Omit the edge list from the output.
    #[arg(long)]
    summary_only: bool,
    #[command(flatten)]
    out: FileOut,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long)]
    n_vertices: Option<usize>,
    #[arg(long)]
    degree: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    out: FileOut,
}

#[derive(Args)]
struct ScfArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    geom: GeomArgs,
    #[command(flatten)]
    grid: GridArgs,
    /// pw92, pbe, exphormer-pw92 or exphormer-pbe.
    #[arg(long)]
    xc: Option<String>,
    /// rks or uks.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    basis: Option<String>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    break_symmetry: bool,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; stdout if absent.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct FciArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    geom: GeomArgs,
    #[arg(long)]
    basis: Option<String>,
    /// Roots to report, 0 for all.
    #[arg(long)]
    roots: Option<usize>,
    #[command(flatten)]
    out: FileOut,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// h2 or h4.
    #[arg(long)]
    kind: Option<String>,
    /// Scale factors (h2) or angles in degrees (h4).
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
    /// H4 circle radius in Bohr.
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    basis: Option<String>,
    #[arg(long)]
    roots: Option<usize>,
    #[command(flatten)]
    out: FileOut,
}

/// Training settings shared by train, eval and ablate.
#[derive(Args)]
struct TrainFlags {
    #[arg(long)]
    variant: Option<String>,
    /// pw92 or pbe.
    #[arg(long)]
    base: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    decoupled_weight_decay: bool,
    #[arg(long)]
    patience: Option<usize>,
    /// Maximum epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// SCF iterations differentiated through; 0 uses the converged
    /// Hellmann-Feynman gradient.
    #[arg(long)]
    unroll: Option<usize>,
    #[arg(long)]
    aux_weight: Option<f64>,
    /// Stop once the training MAE falls to this value (kcal/mol).
    #[arg(long)]
    stop_at: Option<f64>,
    #[arg(long)]
    basis: Option<String>,
    #[arg(long)]
    scf_threshold: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    graph: GraphArgs,
}

impl TrainFlags {
    fn overrides(&self, prefix: &str, o: &mut Vec<(String, Value)>) {
        let mut put = |k: &str, v: Value| o.push((format!("{prefix}{k}"), v));
        if let Some(v) = &self.variant {
            put("model.variant", json!(v));
        }
        if let Some(v) = &self.base {
            put("base", json!(v));
        }
        if let Some(v) = self.lr {
            put("learning_rate", json!(v));
        }
        if let Some(v) = self.weight_decay {
            put("weight_decay", json!(v));
        }
        if self.decoupled_weight_decay {
            put("decoupled_weight_decay", json!(true));
        }
        if let Some(v) = self.patience {
            put("patience", json!(v));
        }
        if let Some(v) = self.epochs {
            put("max_epochs", json!(v));
        }
        if let Some(v) = self.unroll {
            put("unroll", json!(v));
        }
        if let Some(v) = self.aux_weight {
            put("loss.aux_density", json!(v));
        }
        if let Some(v) = self.stop_at {
            put("stop_at_kcal", json!(v));
        }
        if let Some(v) = &self.basis {
            put("basis", json!(v));
        }
        if let Some(v) = self.scf_threshold {
            put("scf.threshold", json!(v));
        }
        if let Some(v) = self.seed {
            put("seed", json!(v));
        }
        self.grid.overrides(prefix, o);
        graph_overrides(&self.graph, &format!("{prefix}graph."), o);
    }
}

fn graph_overrides(g: &GraphArgs, prefix: &str, o: &mut Vec<(String, Value)>) {
    if let Some(v) = g.alpha {
        o.push((format!("{prefix}alpha"), json!(v)));
    }
    if let Some(v) = g.expander_degree {
        o.push((format!("{prefix}expander_degree"), json!(v)));
    }
    if let Some(v) = g.globals {
        o.push((format!("{prefix}n_global"), json!(v)));
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    out: DirOut,
    /// No per-epoch progress on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct DissociationArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Use a freshly initialized model instead of a checkpoint.
    #[arg(long)]
    untrained: bool,
    #[arg(long, value_delimiter = ',')]
    s_values: Option<Vec<f64>>,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    out: DirOut,
}

#[derive(Args)]
struct H4Args {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    untrained: bool,
    #[arg(long, value_delimiter = ',')]
    thetas: Option<Vec<f64>>,
    /// Unrestricted runs per angle.
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    radius: Option<f64>,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    out: DirOut,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<String>>,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    out: DirOut,
}

fn flag<T: Serialize>(o: &mut Vec<(String, Value)>, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        o.push((key.into(), json!(v)));
    }
}

/// Resolves a job, or prints it and returns `None` under `--print-config`.
fn job<T: Serialize + DeserializeOwned + Default>(
    common: &Common,
    seed_path: Option<&str>,
    checkpoint: Option<(&str, Value)>,
    mut flags: Vec<(String, Value)>,
) -> Result<Option<T>> {
    let mut overrides = common.set.iter().map(|s| parse_set(s)).collect::<Result<Vec<_>>>()?;
    // Dedicated flags win over --set.
    overrides.append(&mut flags);
    let t: T = resolve(Layers { file: common.config.as_deref(), checkpoint, seed_path, overrides })?;
    if common.print_config {
        println!("{}", serde_json::to_string_pretty(&t)?);
        return Ok(None);
    }
    Ok(Some(t))
}

/// Training config stored in a checkpoint, used as the defaults for eval.
/// The path may come from the flag or from the job file.
fn checkpoint_config(flag: &Option<PathBuf>, common: &Common) -> Result<Option<Value>> {
    let path = match flag {
        Some(p) => Some(p.clone()),
        None => match &common.config {
            Some(f) => config::read_file(f)?.get("checkpoint").and_then(|v| v.as_str()).map(PathBuf::from),
            None => None,
        },
    };
    let Some(path) = path else { return Ok(None) };
    let (_, meta) = load_checkpoint(&path)?;
    Ok(meta.get("config").cloned())
}

fn say(s: &str) {
    eprint!("{s}");
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Grid(GridCmd::Build(a)) => {
            let mut o = Vec::new();
            a.geom.overrides(&mut o);
            a.grid.overrides("", &mut o);
            let Some(j) = job::<GridJob>(&a.common, None, None, o)? else { return Ok(true) };
            emit(a.out.out.as_deref(), &grid_build(&j)?)?;
        }
        Cmd::Graph(GraphCmd::Build(a)) => {
            let mut o = Vec::new();
            a.geom.overrides(&mut o);
            a.grid.overrides("", &mut o);
            graph_overrides(&a.graph, "graph.", &mut o);
            flag(&mut o, "graph.seed", &a.seed);
            if a.summary_only {
                o.push(("edges".into(), json!(false)));
            }
            let Some(j) = job::<GraphJob>(&a.common, Some("graph.seed"), None, o)? else { return Ok(true) };
            emit(a.out.out.as_deref(), &graph_build(&j)?)?;
        }
        Cmd::Graph(GraphCmd::Validate(a)) => {
            let mut o = Vec::new();
            flag(&mut o, "instances", &a.instances);
            flag(&mut o, "n_vertices", &a.n_vertices);
            flag(&mut o, "degree", &a.degree);
            flag(&mut o, "seed", &a.seed);
            let Some(j) = job::<ValidateJob>(&a.common, Some("seed"), None, o)? else { return Ok(true) };
            let (text, pass) = graph_validate(&j)?;
            emit(a.out.out.as_deref(), &text)?;
            say(&format!("{} of {} instances: {}\n", j.instances, j.n_vertices, if pass { "all pass" } else { "FAIL" }));
            return Ok(pass);
        }
        Cmd::Scf(ScfCmd::Run(a)) => {
            let mut o = Vec::new();
            a.geom.overrides(&mut o);
            a.grid.overrides("", &mut o);
            flag(&mut o, "xc", &a.xc);
            flag(&mut o, "scf.mode", &a.mode);
            flag(&mut o, "basis", &a.basis);
            flag(&mut o, "scf.threshold", &a.threshold);
            flag(&mut o, "scf.max_iterations", &a.max_iterations);
            if a.break_symmetry {
                o.push(("scf.break_symmetry".into(), json!(true)));
            }
            flag(&mut o, "checkpoint", &a.checkpoint);
            graph_overrides(&a.graph, "graph.", &mut o);
            flag(&mut o, "graph.seed", &a.seed);
            let Some(j) = job::<ScfJob>(&a.common, Some("graph.seed"), None, o)? else { return Ok(true) };
            emit(a.json.as_deref(), &scf_run(&j)?)?;
        }
        Cmd::Fci(FciCmd::Run(a)) => {
            let mut o = Vec::new();
            a.geom.overrides(&mut o);
            flag(&mut o, "basis", &a.basis);
            flag(&mut o, "roots", &a.roots);
            let Some(j) = job::<FciJob>(&a.common, None, None, o)? else { return Ok(true) };
            emit(a.out.out.as_deref(), &fci_run(&j)?)?;
        }
        Cmd::Fci(FciCmd::Sweep(a)) => {
            let mut o = Vec::new();
            flag(&mut o, "sweep", &a.kind);
            flag(&mut o, "values", &a.values);
            flag(&mut o, "r", &a.radius);
            flag(&mut o, "basis", &a.basis);
            flag(&mut o, "roots", &a.roots);
            let Some(j) = job::<SweepJob>(&a.common, None, None, o)? else { return Ok(true) };
            emit(a.out.out.as_deref(), &fci_sweep(&j)?)?;
        }
        Cmd::Train(a) => {
            let mut o = Vec::new();
            a.train.overrides("", &mut o);
            let Some(cfg) = job::<exphormer_xc::train::TrainConfig>(&a.common, Some("seed"), None, o)? else { return Ok(true) };
            say(&train_run(&cfg, &a.out.out_dir, a.quiet)?);
        }
        Cmd::Eval(EvalCmd::Dissociation(a)) => {
            let mut o = Vec::new();
            a.train.overrides("train.", &mut o);
            flag(&mut o, "checkpoint", &a.checkpoint);
            flag(&mut o, "s_values", &a.s_values);
            if a.untrained {
                o.push(("untrained".into(), json!(true)));
            }
            let ck = checkpoint_config(&a.checkpoint, &a.common)?.map(|v| ("train", v));
            let Some(j) = job::<DissociationJob>(&a.common, Some("train.seed"), ck, o)? else { return Ok(true) };
            say(&eval_dissociation(&j, &a.out.out_dir)?);
        }
        Cmd::Eval(EvalCmd::H4(a)) => {
            let mut o = Vec::new();
            a.train.overrides("train.", &mut o);
            flag(&mut o, "checkpoint", &a.checkpoint);
            flag(&mut o, "thetas", &a.thetas);
            flag(&mut o, "repeats", &a.repeats);
            flag(&mut o, "r", &a.radius);
            if a.untrained {
                o.push(("untrained".into(), json!(true)));
            }
            let ck = checkpoint_config(&a.checkpoint, &a.common)?.map(|v| ("train", v));
            let Some(j) = job::<H4Job>(&a.common, Some("train.seed"), ck, o)? else { return Ok(true) };
            say(&eval_h4(&j, &a.out.out_dir)?);
        }
        Cmd::Ablate(a) => {
            let mut o = Vec::new();
            a.train.overrides("train.", &mut o);
            flag(&mut o, "variants", &a.variants);
            let Some(j) = job::<AblateJob>(&a.common, Some("train.seed"), None, o)? else { return Ok(true) };
            say(&ablate(&j, &a.out.out_dir)?);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
