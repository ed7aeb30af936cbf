//! Learned enhancement-factor networks: the expander-graph transformer and
//! the ablation architectures, all built from tape ops.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::ad::{AttentionIndex, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{EdgeKind, ElectronGraph, GraphConfig, MessageGraph};

mod layers;
mod params;

pub use layers::{attention_layer, dropout, gcn_layer, layer_norm, linear, nnconv_layer, AttentionWeights, GcnNorm, Messages, NnConvWeights};
pub use params::{Bound, Params, CHECKPOINT_VERSION};

/// Edge feature width: one-hot edge type plus distance.
pub const EDGE_FEATURES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    NnLda,
    Gcn,
    GcnDistance,
    Nnconv,
    Transformerconv,
    ExphormerNoDist,
    ExphormerNoGlobals,
    ExphormerFull,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::NnLda,
        Variant::Gcn,
        Variant::GcnDistance,
        Variant::Nnconv,
        Variant::Transformerconv,
        Variant::ExphormerNoDist,
        Variant::ExphormerNoGlobals,
        Variant::ExphormerFull,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::NnLda => "nn-lda",
            Variant::Gcn => "gcn",
            Variant::GcnDistance => "gcn-distance",
            Variant::Nnconv => "nnconv",
            Variant::Transformerconv => "transformerconv",
            Variant::ExphormerNoDist => "exphormer-no-dist",
            Variant::ExphormerNoGlobals => "exphormer-no-globals",
            Variant::ExphormerFull => "exphormer-full",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| Error::Config(format!("unknown model variant '{s}'")))
    }

    pub fn uses_graph(self) -> bool {
        self != Variant::NnLda
    }

    pub fn uses_expander(self) -> bool {
        matches!(self, Variant::ExphormerNoDist | Variant::ExphormerNoGlobals | Variant::ExphormerFull)
    }

    pub fn uses_globals(self) -> bool {
        matches!(self, Variant::ExphormerNoDist | Variant::ExphormerFull)
    }

    pub fn uses_distance(self) -> bool {
        self != Variant::ExphormerNoDist
    }

    fn is_attention(self) -> bool {
        matches!(self, Variant::Transformerconv | Variant::ExphormerNoDist | Variant::ExphormerNoGlobals | Variant::ExphormerFull)
    }

    /// Graph settings this variant needs, starting from `base`.
    pub fn graph_config(self, base: &GraphConfig) -> GraphConfig {
        let mut g = base.clone();
        if !self.uses_expander() {
            g.expander_degree = 0;
        }
        if !self.uses_globals() {
            g.n_global = 0;
        }
        g
    }

    fn keeps(self, kind: EdgeKind) -> bool {
        match kind {
            EdgeKind::Local => true,
            EdgeKind::Expander => self.uses_expander(),
            EdgeKind::Global => self.uses_globals(),
        }
    }
}

fn default_channels() -> usize {
    32
}
fn default_layers() -> usize {
    4
}
fn default_heads() -> usize {
    3
}
fn default_n_global() -> usize {
    10
}
fn default_true() -> bool {
    true
}
fn default_edge_hidden() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    /// Global vertices expected in the graph (variants with globals only).
    #[serde(default = "default_n_global")]
    pub n_global: usize,
    #[serde(default = "default_true")]
    pub interlayer_activation: bool,
    #[serde(default)]
    pub layer_norm: bool,
    #[serde(default)]
    pub dropout: f64,
    /// Hidden width of the NNConv edge network.
    #[serde(default = "default_edge_hidden")]
    pub edge_hidden: usize,
}

impl ModelConfig {
    pub fn new(variant: Variant) -> Self {
        ModelConfig {
            variant,
            channels: default_channels(),
            layers: default_layers(),
            heads: default_heads(),
            n_global: default_n_global(),
            interlayer_activation: true,
            layer_norm: false,
            dropout: 0.0,
            edge_hidden: default_edge_hidden(),
        }
    }

    fn check(&self) -> Result<()> {
        if self.channels == 0 || self.layers == 0 || self.heads == 0 {
            return Err(Error::Config("channels, layers and heads must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Per-graph constants consumed by the forward pass.
#[derive(Debug, Clone)]
pub struct GraphInputs {
    pub n_grid: usize,
    pub n_global: usize,
    pub messages: Messages,
    pub attention: Arc<AttentionIndex>,
    pub gcn: GcnNorm,
    /// messages × [`EDGE_FEATURES`]
    pub edge_features: Tensor<f64>,
}

impl GraphInputs {
    /// Restricts `graph` to the edge kinds the variant uses.
    pub fn new(graph: &ElectronGraph, config: &ModelConfig) -> Result<Self> {
        let v = config.variant;
        let n_global = if v.uses_globals() { graph.n_global } else { 0 };
        if v.uses_globals() && graph.n_global != config.n_global {
            return Err(Error::dim("graph_inputs", format!("graph has {} global vertices, model expects {}", graph.n_global, config.n_global)));
        }
        let mut msgs = graph.messages().filter(|k| v.keeps(k));
        msgs.n_vertices = graph.n_grid + n_global;
        Self::from_messages(&msgs, graph.n_grid, config)
    }

    /// From an explicit message list sorted by destination.
    pub fn from_messages(msgs: &MessageGraph, n_grid: usize, config: &ModelConfig) -> Result<Self> {
        if msgs.n_vertices < n_grid {
            return Err(Error::dim("graph_inputs", "fewer vertices than grid points"));
        }
        let n = msgs.n_vertices;
        let attention = Arc::new(AttentionIndex::new(n, config.heads, msgs.src.clone(), msgs.dst.clone())?);
        let use_r = config.variant.uses_distance();
        let mut feat = Vec::with_capacity(msgs.n_messages() * EDGE_FEATURES);
        for (k, r) in msgs.kind.iter().zip(&msgs.distance) {
            let mut row = [0.0; EDGE_FEATURES];
            row[k.index()] = 1.0;
            row[3] = if use_r { *r } else { 0.0 };
            feat.extend_from_slice(&row);
        }
        let weights: Vec<f64> = match config.variant {
            Variant::GcnDistance => msgs.distance.iter().map(|r| 1.0 / r.max(1e-12).sqrt()).collect(),
            _ => vec![1.0; msgs.n_messages()],
        };
        let gcn = GcnNorm::new(n, msgs.src.clone(), msgs.dst.clone(), &weights)?;
        Ok(GraphInputs {
            n_grid,
            n_global: n - n_grid,
            messages: Messages { n_vertices: n, src: Arc::new(msgs.src.clone()), dst: Arc::new(msgs.dst.clone()) },
            attention,
            gcn,
            edge_features: Tensor { rows: msgs.n_messages(), cols: EDGE_FEATURES, data: feat },
        })
    }

    /// Graph-free inputs for the pointwise model.
    pub fn pointwise(n_grid: usize, config: &ModelConfig) -> Result<Self> {
        let msgs = MessageGraph { n_vertices: n_grid, src: vec![], dst: vec![], kind: vec![], distance: vec![] };
        Self::from_messages(&msgs, n_grid, config)
    }
}

/// A network plus its parameters, including the enhancement scale β.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Params,
}

impl Model {
    /// Seeded initialization: uniform ±1/√fan_in weights, zero biases and
    /// β = 0. The readout weight is random too, so that β receives a
    /// nonzero gradient at the start.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.check()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let c = config.channels;
        let h = config.heads;
        let mut p = Params::new();
        let zeros = |r, c| Tensor::<f64>::zeros(r, c);
        match config.variant {
            Variant::NnLda => {
                let mut fan = 2;
                for l in 0..config.layers {
                    p.insert(format!("mlp{l}.w"), params::uniform(&mut rng, fan, c, fan));
                    p.insert(format!("mlp{l}.b"), zeros(1, c));
                    fan = c;
                }
            }
            v => {
                p.insert("input.w", params::uniform(&mut rng, 2, c, 2));
                p.insert("input.b", zeros(1, c));
                if v.uses_globals() {
                    p.insert("global.embed", params::uniform(&mut rng, config.n_global, c, c));
                }
                for l in 0..config.layers {
                    let n = |s: &str| format!("layer{l}.{s}");
                    if v.is_attention() {
                        p.insert(n("w1"), params::uniform(&mut rng, c, c, c));
                        for s in ["wq", "wk", "wv"] {
                            p.insert(n(s), params::uniform(&mut rng, c, h * c, c));
                        }
                        p.insert(n("we"), params::uniform(&mut rng, EDGE_FEATURES, h * c, EDGE_FEATURES));
                        p.insert(n("wo"), params::uniform(&mut rng, h * c, c, h * c));
                    } else if v == Variant::Nnconv {
                        let eh = config.edge_hidden;
                        p.insert(n("theta"), params::uniform(&mut rng, c, c, c));
                        p.insert(n("g1.w"), params::uniform(&mut rng, EDGE_FEATURES, eh, EDGE_FEATURES));
                        p.insert(n("g1.b"), zeros(1, eh));
                        p.insert(n("g2.w"), params::uniform(&mut rng, eh, c * c, eh * c));
                        p.insert(n("g2.b"), zeros(1, c * c));
                        p.insert(n("b"), zeros(1, c));
                    } else {
                        p.insert(n("w"), params::uniform(&mut rng, c, c, c));
                        p.insert(n("b"), zeros(1, c));
                    }
                    if config.layer_norm {
                        p.insert(n("ln.gain"), Tensor::new(1, c, vec![1.0; c])?);
                        p.insert(n("ln.bias"), zeros(1, c));
                    }
                }
            }
        }
        p.insert("readout.w", params::uniform(&mut rng, c, 1, c));
        p.insert("readout.b", zeros(1, 1));
        p.insert("beta", zeros(1, 1));
        Ok(Model { config, params: p })
    }

    pub fn beta(&self) -> f64 {
        self.params.get("beta").map_or(0.0, |t| t.data[0])
    }

    /// F per grid point (n_grid×1) from density and spin-polarization
    /// columns. `dropout_seed` enables dropout for this pass.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, n: Var, zeta: Var, g: &GraphInputs, dropout_seed: Option<u64>) -> Result<Var> {
        let cfg = &self.config;
        if tape.shape(n) != (g.n_grid, 1) || tape.shape(zeta) != (g.n_grid, 1) {
            return Err(Error::dim("forward", format!("density {:?} for {} grid vertices", tape.shape(n), g.n_grid)));
        }
        let mut rng = dropout_seed.map(ChaCha20Rng::seed_from_u64);
        let input = tape.concat_cols(&[n, zeta])?;
        let x = if cfg.variant == Variant::NnLda {
            let mut x = input;
            for l in 0..cfg.layers {
                let y = linear(tape, x, p.get(&format!("mlp{l}.w"))?, p.get(&format!("mlp{l}.b"))?)?;
                x = tape.softplus(y)?;
                if let Some(r) = rng.as_mut() {
                    x = dropout(tape, x, cfg.dropout, r)?;
                }
            }
            x
        } else {
            let mut x = linear(tape, input, p.get("input.w")?, p.get("input.b")?)?;
            if cfg.variant.uses_globals() {
                if g.n_global != cfg.n_global {
                    return Err(Error::dim("forward", format!("graph has {} global vertices, model expects {}", g.n_global, cfg.n_global)));
                }
                x = tape.concat_rows(&[x, p.get("global.embed")?])?;
            } else if g.n_global != 0 {
                return Err(Error::dim("forward", "graph carries global vertices the variant does not use"));
            }
            let needs_edges = cfg.variant.is_attention() || cfg.variant == Variant::Nnconv;
            let edge = if needs_edges { Some(tape.constant(Tensor::from_f64(&g.edge_features))) } else { None };
            for l in 0..cfg.layers {
                let pn = |s: &str| format!("layer{l}.{s}");
                x = if cfg.variant.is_attention() {
                    let w = AttentionWeights {
                        w1: p.get(&pn("w1"))?,
                        wq: p.get(&pn("wq"))?,
                        wk: p.get(&pn("wk"))?,
                        wv: p.get(&pn("wv"))?,
                        we: p.get(&pn("we"))?,
                        wo: p.get(&pn("wo"))?,
                    };
                    attention_layer(tape, x, &w, edge.expect("edge features"), &g.attention)?
                } else if cfg.variant == Variant::Nnconv {
                    let w = NnConvWeights {
                        theta: p.get(&pn("theta"))?,
                        g1_w: p.get(&pn("g1.w"))?,
                        g1_b: p.get(&pn("g1.b"))?,
                        g2_w: p.get(&pn("g2.w"))?,
                        g2_b: p.get(&pn("g2.b"))?,
                        b: p.get(&pn("b"))?,
                    };
                    nnconv_layer(tape, x, &w, edge.expect("edge features"), &g.messages)?
                } else {
                    gcn_layer(tape, x, p.get(&pn("w"))?, p.get(&pn("b"))?, &g.gcn)?
                };
                if cfg.layer_norm {
                    x = layer_norm(tape, x, p.get(&pn("ln.gain"))?, p.get(&pn("ln.bias"))?)?;
                }
                if cfg.interlayer_activation && l + 1 < cfg.layers {
                    x = tape.relu(x)?;
                }
                if let Some(r) = rng.as_mut() {
                    x = dropout(tape, x, cfg.dropout, r)?;
                }
            }
            if g.n_global > 0 {
                tape.slice_rows(x, g.n_grid)?
            } else {
                x
            }
        };
        linear(tape, x, p.get("readout.w")?, p.get("readout.b")?)
    }

    /// Plain evaluation of F on fixed inputs.
    pub fn evaluate(&self, n: &[f64], zeta: &[f64], g: &GraphInputs) -> Result<Vec<f64>> {
        let mut tape = Tape::<f64>::new();
        let p = self.params.bind(&mut tape, false);
        let nv = tape.constant(Tensor::column(n.to_vec()));
        let zv = tape.constant(Tensor::column(zeta.to_vec()));
        let f = self.forward(&mut tape, &p, nv, zv, g, None)?;
        Ok(tape.value(f).data.clone())
    }

    pub fn save(&self, metadata: serde_json::Value) -> Result<Vec<u8>> {
        let meta = serde_json::json!({ "model": self.config, "extra": metadata });
        self.params.to_bytes(&meta)
    }

    pub fn load(bytes: &[u8]) -> Result<(Self, serde_json::Value)> {
        let (params, meta) = Params::read_from(&mut &bytes[..])?;
        let config: ModelConfig = serde_json::from_value(meta.get("model").cloned().ok_or_else(|| Error::Parse("checkpoint lacks model config".into()))?)?;
        let fresh = Model::init(config.clone(), 0)?;
        if fresh.params.names() != params.names() || fresh.params.values().iter().zip(params.values()).any(|(a, b)| a.shape() != b.shape()) {
            return Err(Error::Parse("checkpoint arrays do not match the model layout".into()));
        }
        let extra = meta.get("extra").cloned().unwrap_or(serde_json::Value::Null);
        Ok((Model { config, params }, extra))
    }
}

#[cfg(test)]
mod tests;
