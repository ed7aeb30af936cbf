use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Messages j → i grouped by destination, for fused attention.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionIndex {
    pub n_vertices: usize,
    pub heads: usize,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    /// Messages of vertex i are `offsets[i]..offsets[i+1]`.
    pub offsets: Vec<usize>,
}

impl AttentionIndex {
    /// `dst` must be non-decreasing.
    pub fn new(n_vertices: usize, heads: usize, src: Vec<usize>, dst: Vec<usize>) -> Result<Self> {
        if heads == 0 {
            return Err(Error::Config("attention needs at least one head".into()));
        }
        if src.len() != dst.len() || dst.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::dim("attention_index", "messages must be sorted by destination"));
        }
        if src.iter().chain(&dst).any(|&v| v >= n_vertices) {
            return Err(Error::dim("attention_index", "vertex index out of range"));
        }
        let mut offsets = vec![0; n_vertices + 1];
        for &d in &dst {
            offsets[d + 1] += 1;
        }
        for i in 0..n_vertices {
            offsets[i + 1] += offsets[i];
        }
        Ok(AttentionIndex { n_vertices, heads, src, dst, offsets })
    }

    pub fn n_messages(&self) -> usize {
        self.src.len()
    }
}

fn dot_sum<T: Scalar>(a: &[T], b: &[T], c: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let (a4, b4, c4) = (a.chunks_exact(4), b.chunks_exact(4), c.chunks_exact(4));
    let tail = a4.remainder().iter().zip(b4.remainder()).zip(c4.remainder()).fold(T::zero(), |s, ((&x, &y), &z)| s + x * (y + z));
    for ((x, y), z) in a4.zip(b4).zip(c4) {
        for l in 0..4 {
            acc[l] += x[l] * (y[l] + z[l]);
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Additive edge terms: either one row per message, or per-message
/// features projected by a shared weight matrix on the fly.
#[derive(Clone, Copy)]
pub(crate) enum Edges<'a, T> {
    Dense(&'a Tensor<T>),
    Projected { feat: &'a Tensor<T>, w: &'a Tensor<T> },
}

impl<T: Scalar> Edges<'_, T> {
    fn fill(&self, m: usize, out: &mut [T]) {
        match self {
            Edges::Dense(e) => out.copy_from_slice(e.row(m)),
            Edges::Projected { feat, w } => {
                out.iter_mut().for_each(|x| *x = T::zero());
                for (f, &x) in feat.row(m).iter().enumerate() {
                    if x == T::zero() {
                        continue;
                    }
                    for (o, &wv) in out.iter_mut().zip(w.row(f)) {
                        *o += x * wv;
                    }
                }
            }
        }
    }

    /// Edge rows for messages `lo..hi`, packed.
    fn block(&self, lo: usize, hi: usize, c: usize, buf: &mut Vec<T>) {
        buf.clear();
        buf.resize((hi - lo) * c, T::zero());
        for (n, m) in (lo..hi).enumerate() {
            self.fill(m, &mut buf[n * c..(n + 1) * c]);
        }
    }
}

/// Gradients with respect to the edge terms, in the layout of [`Edges`].
pub(crate) enum EdgeGrads<T> {
    Dense(Tensor<T>),
    Projected { feat: Tensor<T>, w: Tensor<T> },
}

impl<T: Scalar> EdgeGrads<T> {
    fn new(e: &Edges<T>, c: usize) -> Self {
        match e {
            Edges::Dense(t) => EdgeGrads::Dense(Tensor::zeros(t.rows, c)),
            Edges::Projected { feat, w } => EdgeGrads::Projected { feat: Tensor::zeros(feat.rows, feat.cols), w: Tensor::zeros(w.rows, w.cols) },
        }
    }

    fn add(&mut self, edges: &Edges<T>, m: usize, g: &[T], want: [bool; 2]) {
        match (self, edges) {
            (EdgeGrads::Dense(t), _) => t.data[m * g.len()..(m + 1) * g.len()].iter_mut().zip(g).for_each(|(x, &y)| *x += y),
            (EdgeGrads::Projected { feat: gf, w: gw }, Edges::Projected { feat, w }) => {
                let nf = feat.cols;
                for f in 0..nf {
                    let x = feat.data[m * nf + f];
                    if want[1] && x != T::zero() {
                        for (o, &y) in gw.data[f * g.len()..(f + 1) * g.len()].iter_mut().zip(g) {
                            *o += x * y;
                        }
                    }
                    if want[0] {
                        let s = w.row(f).iter().zip(g).fold(T::zero(), |s, (&a, &b)| s + a * b);
                        gf.data[m * nf + f] += s;
                    }
                }
            }
            _ => unreachable!("edge layouts match"),
        }
    }
}

/// Returns the output and the attention weights (messages × heads).
pub(crate) fn attention_forward<T: Scalar>(idx: &AttentionIndex, q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, edges: Edges<T>) -> (Tensor<T>, Vec<T>) {
    let c = q.cols;
    let h = idx.heads;
    let dh = c / h;
    let inv = 1.0 / (dh as f64).sqrt();
    let mut out = Tensor::zeros(idx.n_vertices, c);
    let mut alpha = vec![T::zero(); idx.n_messages() * h];
    let mut mx = vec![f64::NEG_INFINITY; h];
    let mut tot = vec![T::zero(); h];
    let mut eb = Vec::new();
    for i in 0..idx.n_vertices {
        let (lo, hi) = (idx.offsets[i], idx.offsets[i + 1]);
        if lo == hi {
            continue;
        }
        edges.block(lo, hi, c, &mut eb);
        let qi = q.row(i);
        mx.iter_mut().for_each(|x| *x = f64::NEG_INFINITY);
        for m in lo..hi {
            let (kj, em) = (k.row(idx.src[m]), &eb[(m - lo) * c..(m - lo + 1) * c]);
            for hd in 0..h {
                let r = hd * dh..(hd + 1) * dh;
                let s = dot_sum(&qi[r.clone()], &kj[r.clone()], &em[r]).scale(inv);
                mx[hd] = mx[hd].max(s.re());
                alpha[m * h + hd] = s;
            }
        }
        tot.iter_mut().for_each(|x| *x = T::zero());
        for m in lo..hi {
            for hd in 0..h {
                let a = (alpha[m * h + hd] - T::from_f64(mx[hd])).exp();
                alpha[m * h + hd] = a;
                tot[hd] += a;
            }
        }
        let orow = &mut out.data[i * c..(i + 1) * c];
        for m in lo..hi {
            let (vj, em) = (v.row(idx.src[m]), &eb[(m - lo) * c..(m - lo + 1) * c]);
            for hd in 0..h {
                let a = alpha[m * h + hd] / tot[hd];
                alpha[m * h + hd] = a;
                let r = hd * dh..(hd + 1) * dh;
                for ((o, &x), &y) in orow[r.clone()].iter_mut().zip(&vj[r.clone()]).zip(&em[r]) {
                    *o += a * (x + y);
                }
            }
        }
    }
    (out, alpha)
}

/// Gradients for q, k, v and the edge terms; `want` selects the feature
/// and projection parts of a projected edge gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_backward<T: Scalar>(
    idx: &AttentionIndex,
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    edges: Edges<T>,
    alpha: &[T],
    gy: &Tensor<T>,
    want: [bool; 2],
) -> ([Tensor<T>; 3], EdgeGrads<T>) {
    let c = q.cols;
    let h = idx.heads;
    let dh = c / h;
    let inv = 1.0 / (dh as f64).sqrt();
    let mut gq = Tensor::zeros(q.rows, c);
    let mut gk = Tensor::zeros(k.rows, c);
    let mut gv = Tensor::zeros(v.rows, c);
    let mut ge = EdgeGrads::new(&edges, c);
    let mut abar: Vec<T> = Vec::new();
    let mut dot = vec![T::zero(); h];
    let (mut eb, mut gb) = (Vec::new(), Vec::new());
    for i in 0..idx.n_vertices {
        let (lo, hi) = (idx.offsets[i], idx.offsets[i + 1]);
        if lo == hi {
            continue;
        }
        edges.block(lo, hi, c, &mut eb);
        gb.clear();
        gb.resize((hi - lo) * c, T::zero());
        let go = gy.row(i);
        let qi = q.row(i);
        abar.clear();
        dot.iter_mut().for_each(|x| *x = T::zero());
        for m in lo..hi {
            let j = idx.src[m];
            let n = m - lo;
            let (vj, em) = (v.row(j), &eb[n * c..(n + 1) * c]);
            for hd in 0..h {
                let r = hd * dh..(hd + 1) * dh;
                let s = dot_sum(&go[r.clone()], &vj[r.clone()], &em[r.clone()]);
                let a = alpha[m * h + hd];
                dot[hd] += a * s;
                abar.push(s);
                for (x, &g) in gv.data[j * c..(j + 1) * c][r.clone()].iter_mut().zip(&go[r.clone()]) {
                    *x += a * g;
                }
                for (x, &g) in gb[n * c..(n + 1) * c][r.clone()].iter_mut().zip(&go[r]) {
                    *x += a * g;
                }
            }
        }
        for m in lo..hi {
            let j = idx.src[m];
            let n = m - lo;
            for hd in 0..h {
                let sbar = (alpha[m * h + hd] * (abar[n * h + hd] - dot[hd])).scale(inv);
                let r = hd * dh..(hd + 1) * dh;
                let (kj, em) = (&k.data[j * c..(j + 1) * c][r.clone()], &eb[n * c..(n + 1) * c][r.clone()]);
                for ((g, &x), &y) in gq.data[i * c..(i + 1) * c][r.clone()].iter_mut().zip(kj).zip(em) {
                    *g += sbar * (x + y);
                }
                let qh = &qi[r.clone()];
                for (g, &x) in gk.data[j * c..(j + 1) * c][r.clone()].iter_mut().zip(qh) {
                    *g += sbar * x;
                }
                for (g, &x) in gb[n * c..(n + 1) * c][r].iter_mut().zip(qh) {
                    *g += sbar * x;
                }
            }
            ge.add(&edges, m, &gb[n * c..(n + 1) * c], want);
        }
    }
    ([gq, gk, gv], ge)
}
