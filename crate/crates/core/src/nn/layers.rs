use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::ad::{AttentionIndex, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Weights of one graph-attention layer. Per-head projections are stacked
/// column-wise: `wq`, `wk`, `wv` are C×(H·C), `we` is 4×(H·C) and `wo`
/// mixes the concatenated heads back to C.
#[derive(Debug, Clone, Copy)]
pub struct AttentionWeights {
    pub w1: Var,
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub we: Var,
    pub wo: Var,
}

/// `x_i W1 + [Σ_j softmax_j(q_i·(k_j + e_ij)/√d_h)(v_j + e_ij)]_heads Wo`.
pub fn attention_layer<T: Scalar>(tape: &mut Tape<T>, x: Var, w: &AttentionWeights, edge_feat: Var, index: &Arc<AttentionIndex>) -> Result<Var> {
    if tape.shape(x).0 != index.n_vertices {
        return Err(Error::dim("attention_layer", format!("{} rows for a {}-vertex graph", tape.shape(x).0, index.n_vertices)));
    }
    let skip = tape.matmul(x, w.w1)?;
    let q = tape.matmul(x, w.wq)?;
    let k = tape.matmul(x, w.wk)?;
    let v = tape.matmul(x, w.wv)?;
    let heads = tape.attention_projected(q, k, v, edge_feat, w.we, index.clone())?;
    let mixed = tape.matmul(heads, w.wo)?;
    tape.add(skip, mixed)
}

/// Symmetric normalization `w_ij/√(d_i d_j)` with a unit self-loop.
#[derive(Debug, Clone)]
pub struct GcnNorm {
    pub n_vertices: usize,
    pub src: Arc<Vec<usize>>,
    pub dst: Arc<Vec<usize>>,
    pub coef: Arc<Vec<f64>>,
    pub self_coef: Arc<Vec<f64>>,
}

impl GcnNorm {
    pub fn new(n_vertices: usize, src: Vec<usize>, dst: Vec<usize>, weights: &[f64]) -> Result<Self> {
        if src.len() != dst.len() || weights.len() != src.len() {
            return Err(Error::dim("gcn_norm", "message arrays differ in length"));
        }
        let mut deg = vec![1.0; n_vertices];
        for (&d, &w) in dst.iter().zip(weights) {
            deg[d] += w;
        }
        let coef = src.iter().zip(&dst).zip(weights).map(|((&s, &d), &w)| w / (deg[s] * deg[d]).sqrt()).collect();
        let self_coef = deg.iter().map(|d| 1.0 / d).collect();
        Ok(GcnNorm { n_vertices, src: Arc::new(src), dst: Arc::new(dst), coef: Arc::new(coef), self_coef: Arc::new(self_coef) })
    }
}

/// `(Â x) W + b` with Â the normalized adjacency plus self-loop.
pub fn gcn_layer<T: Scalar>(tape: &mut Tape<T>, x: Var, w: Var, b: Var, norm: &GcnNorm) -> Result<Var> {
    if tape.shape(x).0 != norm.n_vertices {
        return Err(Error::dim("gcn_layer", format!("{} rows for a {}-vertex graph", tape.shape(x).0, norm.n_vertices)));
    }
    let xj = tape.gather(x, norm.src.clone())?;
    let msg = tape.scale_rows(xj, norm.coef.clone())?;
    let agg = tape.scatter_add(msg, norm.dst.clone(), norm.n_vertices)?;
    let own = tape.scale_rows(x, norm.self_coef.clone())?;
    let ax = tape.add(agg, own)?;
    let y = tape.matmul(ax, w)?;
    tape.add_row(y, b)
}

/// Edge network and root weights of an NNConv layer; `g2_w` maps the
/// hidden edge code to a flattened C×C matrix.
#[derive(Debug, Clone, Copy)]
pub struct NnConvWeights {
    pub theta: Var,
    pub g1_w: Var,
    pub g1_b: Var,
    pub g2_w: Var,
    pub g2_b: Var,
    pub b: Var,
}

/// Message topology shared by the message-passing layers.
#[derive(Debug, Clone)]
pub struct Messages {
    pub n_vertices: usize,
    pub src: Arc<Vec<usize>>,
    pub dst: Arc<Vec<usize>>,
}

/// `x_i Θ + Σ_j x_j·g(e_ij) + b` with `g` a one-hidden-layer ReLU network.
pub fn nnconv_layer<T: Scalar>(tape: &mut Tape<T>, x: Var, w: &NnConvWeights, edge_feat: Var, m: &Messages) -> Result<Var> {
    if tape.shape(x).0 != m.n_vertices {
        return Err(Error::dim("nnconv_layer", format!("{} rows for a {}-vertex graph", tape.shape(x).0, m.n_vertices)));
    }
    let h = tape.matmul(edge_feat, w.g1_w)?;
    let h = tape.add_row(h, w.g1_b)?;
    let h = tape.relu(h)?;
    let g = tape.matmul(h, w.g2_w)?;
    let g = tape.add_row(g, w.g2_b)?;
    let xj = tape.gather(x, m.src.clone())?;
    let msg = tape.edge_matvec(xj, g)?;
    let agg = tape.scatter_add(msg, m.dst.clone(), m.n_vertices)?;
    let root = tape.matmul(x, w.theta)?;
    let y = tape.add(root, agg)?;
    tape.add_row(y, w.b)
}

/// `x W + b`.
pub fn linear<T: Scalar>(tape: &mut Tape<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add_row(y, b)
}

fn filled<T: Scalar>(tape: &mut Tape<T>, rows: usize, cols: usize, v: f64) -> Var {
    tape.constant(Tensor { rows, cols, data: vec![T::from_f64(v); rows * cols] })
}

/// Row-wise layer normalization with learned gain and bias (1×C each).
pub fn layer_norm<T: Scalar>(tape: &mut Tape<T>, x: Var, gain: Var, bias: Var) -> Result<Var> {
    let (n, c) = tape.shape(x);
    let avg = filled(tape, c, 1, 1.0 / c as f64);
    let ones_row = filled(tape, 1, c, 1.0);
    let mean = tape.matmul(x, avg)?;
    let mean_b = tape.matmul(mean, ones_row)?;
    let centered = tape.sub(x, mean_b)?;
    let sq = tape.mul(centered, centered)?;
    let var = tape.matmul(sq, avg)?;
    let inv = tape.pointwise(&[var], |v| (v[0] + crate::ad::Dual::constant(T::from_f64(1e-5))).powf(-0.5))?;
    let inv_b = tape.matmul(inv, ones_row)?;
    let normed = tape.mul(centered, inv_b)?;
    let ones_col = filled(tape, n, 1, 1.0);
    let gain_b = tape.matmul(ones_col, gain)?;
    let scaled = tape.mul(normed, gain_b)?;
    tape.add_row(scaled, bias)
}

/// Inverted dropout with a fixed mask drawn from `rng`.
pub fn dropout<T: Scalar>(tape: &mut Tape<T>, x: Var, p: f64, rng: &mut ChaCha20Rng) -> Result<Var> {
    if p <= 0.0 {
        return Ok(x);
    }
    if p >= 1.0 {
        return Err(Error::Config(format!("dropout probability {p} must be below 1")));
    }
    let (n, c) = tape.shape(x);
    let keep = 1.0 / (1.0 - p);
    let data = (0..n * c).map(|_| T::from_f64(if rng.gen::<f64>() < p { 0.0 } else { keep })).collect();
    let mask = tape.constant(Tensor { rows: n, cols: c, data });
    tape.mul(x, mask)
}
