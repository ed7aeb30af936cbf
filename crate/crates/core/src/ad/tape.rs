use std::sync::Arc;

use super::attention::{attention_backward, attention_forward, AttentionIndex, EdgeGrads, Edges};
use super::{Dual, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    MulScalar(Var, Var),
    AddConst(Var),
    Matmul(Var, Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Relu(Var),
    Sum(Var),
    WeightedSum(Var, Arc<Vec<f64>>),
    ScaleRows(Var, Arc<Vec<f64>>),
    Gather(Var, Arc<Vec<usize>>),
    ScatterAdd(Var, Arc<Vec<usize>>),
    SegmentSoftmax(Var, Arc<Vec<usize>>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var),
    EdgeMatvec(Var, Var),
    /// `w` set: `e` holds per-message features projected by `w`.
    Attention { q: Var, k: Var, v: Var, e: Var, w: Option<Var>, index: Arc<AttentionIndex>, alpha: Vec<T> },
    Pointwise { inputs: Vec<Var>, partials: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    grad: bool,
}

/// Reverse-mode tape over scalar type `T`.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

/// Adjoints indexed by tape variable.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adjoint of `v`, zeros of the given shape if `v` did not influence the output.
    pub fn get_or_zeros(&self, v: Var, rows: usize, cols: usize) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(rows, cols))
    }
}

fn same_shape(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::dim(op, format!("{}x{} vs {}x{}", a.0, a.1, b.0, b.1)));
    }
    Ok(())
}

fn softplus<T: Scalar>(x: T) -> T {
    if x.re() > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].grad
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Result<Var> {
        if let Some(bad) = value.data.iter().position(|x| !x.is_finite()) {
            return Err(Error::numerical(name, format!("non-finite value at flat index {bad}")));
        }
        let grad = parents.iter().any(|p| self.nodes[p.0].grad);
        self.nodes.push(Node { value, op, grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, grad: false });
        Var(self.nodes.len() - 1)
    }

    fn map(&mut self, name: &'static str, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let x = self.value(a);
        let value = Tensor { rows: x.rows, cols: x.cols, data: x.data.iter().map(|&v| f(v)).collect() };
        self.push(name, value, op, &[a])
    }

    fn zip(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape(name, x.shape(), y.shape())?;
        let value = Tensor { rows: x.rows, cols: x.cols, data: x.data.iter().zip(&y.data).map(|(&p, &q)| f(p, q)).collect() };
        self.push(name, value, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `a` (m×n) plus row vector `b` (1×n) on every row.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(b));
        if r.rows != 1 || r.cols != x.cols {
            return Err(Error::dim("add_row", format!("{}x{} plus {}x{}", x.rows, x.cols, r.rows, r.cols)));
        }
        let mut data = x.data.clone();
        for row in data.chunks_exact_mut(x.cols.max(1)) {
            row.iter_mut().zip(&r.data).for_each(|(v, &b)| *v += b);
        }
        self.push("add_row", Tensor { rows: x.rows, cols: x.cols, data }, Op::AddRow(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map("scale", a, |x| x.scale(c), Op::Scale(a, c))
    }

    /// `a` times the 1×1 variable `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.shape(s) != (1, 1) {
            return Err(Error::dim("mul_scalar", "multiplier must be 1x1"));
        }
        let c = self.value(s).item();
        self.map("mul_scalar", a, |x| x * c, Op::MulScalar(a, s))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Result<Var> {
        let c = T::from_f64(c);
        self.map("add_const", a, |x| x + c, Op::AddConst(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols != y.rows {
            return Err(Error::dim("matmul", format!("{}x{} times {}x{}", x.rows, x.cols, y.rows, y.cols)));
        }
        let (m, k, n) = (x.rows, x.cols, y.cols);
        let mut c = vec![T::zero(); m * n];
        T::gemm(m, k, n, &x.data, k, 1, &y.data, n, 1, &mut c, false);
        self.push("matmul", Tensor { rows: m, cols: n, data: c }, Op::Matmul(a, b), &[a, b])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.map("exp", a, |x| x.exp(), Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(v) = self.value(a).data.iter().find(|x| x.re() <= 0.0) {
            return Err(Error::numerical("log", format!("argument {:e} is not positive", v.re())));
        }
        self.map("log", a, |x| x.ln(), Op::Log(a))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.map("softplus", a, softplus, Op::Softplus(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map("relu", a, |x| if x.re() > 0.0 { x } else { T::zero() }, Op::Relu(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data.iter().fold(T::zero(), |acc, &x| acc + x);
        self.push("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Σ_i w_i a_i for a column `a`.
    pub fn weighted_sum(&mut self, a: Var, w: Arc<Vec<f64>>) -> Result<Var> {
        let x = self.value(a);
        if x.cols != 1 || x.rows != w.len() {
            return Err(Error::dim("weighted_sum", format!("{}x{} against {} weights", x.rows, x.cols, w.len())));
        }
        let s = x.data.iter().zip(w.iter()).fold(T::zero(), |acc, (&v, &c)| acc + v.scale(c));
        self.push("weighted_sum", Tensor::scalar(s), Op::WeightedSum(a, w), &[a])
    }

    /// Row i of `a` multiplied by `s[i]`.
    pub fn scale_rows(&mut self, a: Var, s: Arc<Vec<f64>>) -> Result<Var> {
        let x = self.value(a);
        if x.rows != s.len() {
            return Err(Error::dim("scale_rows", format!("{} rows against {} factors", x.rows, s.len())));
        }
        let c = x.cols;
        let data = x.data.iter().enumerate().map(|(i, &v)| v.scale(s[i / c])).collect();
        self.push("scale_rows", Tensor { rows: x.rows, cols: c, data }, Op::ScaleRows(a, s), &[a])
    }

    /// Rows `a[idx[m]]`.
    pub fn gather(&mut self, a: Var, idx: Arc<Vec<usize>>) -> Result<Var> {
        let x = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= x.rows) {
            return Err(Error::dim("gather", format!("row {bad} out of {}", x.rows)));
        }
        let c = x.cols;
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            data.extend_from_slice(x.row(i));
        }
        self.push("gather", Tensor { rows: idx.len(), cols: c, data }, Op::Gather(a, idx), &[a])
    }

    /// out[idx[m]] += a[m] into `n_out` rows.
    pub fn scatter_add(&mut self, a: Var, idx: Arc<Vec<usize>>, n_out: usize) -> Result<Var> {
        let x = self.value(a);
        if x.rows != idx.len() {
            return Err(Error::dim("scatter_add", format!("{} rows against {} indices", x.rows, idx.len())));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n_out) {
            return Err(Error::dim("scatter_add", format!("target {bad} out of {n_out}")));
        }
        let c = x.cols;
        let mut out = Tensor::zeros(n_out, c);
        for (m, &i) in idx.iter().enumerate() {
            for k in 0..c {
                out.data[i * c + k] += x.data[m * c + k];
            }
        }
        self.push("scatter_add", out, Op::ScatterAdd(a, idx), &[a])
    }

    /// Column-wise softmax within groups of rows sharing `seg[m]`.
    pub fn segment_softmax(&mut self, a: Var, seg: Arc<Vec<usize>>) -> Result<Var> {
        let x = self.value(a);
        if x.rows != seg.len() {
            return Err(Error::dim("segment_softmax", format!("{} rows against {} segment ids", x.rows, seg.len())));
        }
        let n_seg = seg.iter().max().map_or(0, |m| m + 1);
        let c = x.cols;
        let mut max = vec![f64::NEG_INFINITY; n_seg * c];
        for (m, &s) in seg.iter().enumerate() {
            for k in 0..c {
                max[s * c + k] = max[s * c + k].max(x.data[m * c + k].re());
            }
        }
        let mut data: Vec<T> = (0..x.len()).map(|i| (x.data[i] - T::from_f64(max[seg[i / c] * c + i % c])).exp()).collect();
        let mut tot = vec![T::zero(); n_seg * c];
        for (i, v) in data.iter().enumerate() {
            tot[seg[i / c] * c + i % c] += *v;
        }
        for (i, v) in data.iter_mut().enumerate() {
            *v = *v / tot[seg[i / c] * c + i % c];
        }
        self.push("segment_softmax", Tensor { rows: x.rows, cols: c, data }, Op::SegmentSoftmax(a, seg), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.shape(parts[0]).0;
        if parts.iter().any(|&p| self.shape(p).0 != rows) {
            return Err(Error::dim("concat_cols", "row counts differ"));
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        self.push("concat_cols", Tensor { rows, cols, data }, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.shape(parts[0]).1;
        if parts.iter().any(|&p| self.shape(p).1 != cols) {
            return Err(Error::dim("concat_rows", "column counts differ"));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(&self.value(p).data);
        }
        let rows = data.len() / cols.max(1);
        self.push("concat_rows", Tensor { rows, cols, data }, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// First `n` rows.
    pub fn slice_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let x = self.value(a);
        if n > x.rows {
            return Err(Error::dim("slice_rows", format!("{n} of {} rows", x.rows)));
        }
        let value = Tensor { rows: n, cols: x.cols, data: x.data[..n * x.cols].to_vec() };
        self.push("slice_rows", value, Op::SliceRows(a), &[a])
    }

    /// Per-row matrix-vector product: out[m] = x[m] · W_m with W_m the
    /// row `w[m]` reshaped to c_in × c_out.
    pub fn edge_matvec(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (m, ci) = xv.shape();
        if wv.rows != m || wv.cols % ci.max(1) != 0 {
            return Err(Error::dim("edge_matvec", format!("{m}x{ci} against {}x{}", wv.rows, wv.cols)));
        }
        let co = wv.cols / ci;
        let mut out = Tensor::zeros(m, co);
        for r in 0..m {
            for a in 0..ci {
                let xa = xv.data[r * ci + a];
                let wrow = &wv.data[r * wv.cols + a * co..r * wv.cols + (a + 1) * co];
                for (o, &wb) in out.data[r * co..(r + 1) * co].iter_mut().zip(wrow) {
                    *o += xa * wb;
                }
            }
        }
        self.push("edge_matvec", out, Op::EdgeMatvec(x, w), &[x, w])
    }

    /// Fused multi-head graph attention with additive edge terms.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, e: Var, index: Arc<AttentionIndex>) -> Result<Var> {
        self.attention_impl(q, k, v, e, None, index)
    }

    /// As [`Tape::attention`] with edge terms `feat · w`, projected per
    /// message instead of materialised.
    pub fn attention_projected(&mut self, q: Var, k: Var, v: Var, feat: Var, w: Var, index: Arc<AttentionIndex>) -> Result<Var> {
        self.attention_impl(q, k, v, feat, Some(w), index)
    }

    fn attention_impl(&mut self, q: Var, k: Var, v: Var, e: Var, w: Option<Var>, index: Arc<AttentionIndex>) -> Result<Var> {
        let (qs, ks, vs, es) = (self.shape(q), self.shape(k), self.shape(v), self.shape(e));
        same_shape("attention", qs, ks)?;
        same_shape("attention", qs, vs)?;
        let e_cols = match w {
            Some(w) => {
                let ws = self.shape(w);
                if ws.0 != es.1 {
                    return Err(Error::dim("attention", format!("features {}x{} against projection {}x{}", es.0, es.1, ws.0, ws.1)));
                }
                ws.1
            }
            None => es.1,
        };
        if qs.0 != index.n_vertices || es.0 != index.n_messages() || e_cols != qs.1 || qs.1 % index.heads != 0 {
            return Err(Error::dim(
                "attention",
                format!("q {}x{}, edge terms {}x{}, graph {} vertices / {} messages / {} heads", qs.0, qs.1, es.0, e_cols, index.n_vertices, index.n_messages(), index.heads),
            ));
        }
        let edges = self.edges(e, w);
        let (out, alpha) = attention_forward(&index, self.value(q), self.value(k), self.value(v), edges);
        let parents: Vec<Var> = [q, k, v, e].into_iter().chain(w).collect();
        self.push("attention", out, Op::Attention { q, k, v, e, w, index, alpha }, &parents)
    }

    fn edges(&self, e: Var, w: Option<Var>) -> Edges<'_, T> {
        match w {
            Some(w) => Edges::Projected { feat: self.value(e), w: self.value(w) },
            None => Edges::Dense(self.value(e)),
        }
    }

    /// Per-row scalar function of several n×1 columns. Partial derivatives
    /// come from forward-mode duals and are stored for the backward pass.
    pub fn pointwise(&mut self, inputs: &[Var], f: impl Fn(&[Dual<T>]) -> Dual<T>) -> Result<Var> {
        let n = self.shape(inputs[0]).0;
        if inputs.iter().any(|&v| self.shape(v) != (n, 1)) {
            return Err(Error::dim("pointwise", "inputs must be equal-length columns"));
        }
        let k = inputs.len();
        let mut out = Vec::with_capacity(n);
        let mut partials = Vec::with_capacity(n * k);
        let mut args = vec![Dual::constant(T::zero()); k];
        for r in 0..n {
            let mut val = T::zero();
            for j in 0..k {
                for (a, &v) in args.iter_mut().zip(inputs) {
                    *a = Dual::constant(self.value(v).data[r]);
                }
                args[j].du = T::one();
                let y = f(&args);
                val = y.re;
                partials.push(y.du);
            }
            if k == 0 {
                val = f(&args).re;
            }
            out.push(val);
        }
        if let Some(bad) = partials.iter().position(|x| !x.is_finite()) {
            return Err(Error::numerical("pointwise", format!("non-finite derivative at row {}", bad / k)));
        }
        self.push("pointwise", Tensor::column(out), Op::Pointwise { inputs: inputs.to_vec(), partials }, inputs)
    }

    /// Adjoints of every grad-requiring node for scalar output `out`.
    pub fn backward(&self, out: Var) -> Result<Gradients<T>> {
        if self.shape(out) != (1, 1) {
            return Err(Error::dim("backward", "output must be 1x1"));
        }
        self.backward_with(out, Tensor::scalar(T::one()))
    }

    /// Backward pass from an arbitrary seed adjoint for `out`.
    pub fn backward_with(&self, out: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        same_shape("backward", self.shape(out), seed.shape())?;
        let mut g: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        g[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.grad {
                continue;
            }
            let Some(gi) = g[i].take() else { continue };
            self.propagate(node, &gi, &mut g);
            g[i] = Some(gi);
        }
        Ok(Gradients { grads: g })
    }

    fn propagate(&self, node: &Node<T>, gy: &Tensor<T>, g: &mut [Option<Tensor<T>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut Tensor<T>)| {
            if !nodes[v.0].grad {
                return;
            }
            let (r, c) = nodes[v.0].value.shape();
            let slot = g[v.0].get_or_insert_with(|| Tensor::zeros(r, c));
            f(slot);
        };
        let val = |v: Var| &nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |t| t.add_assign(gy));
                acc(*b, &mut |t| t.add_assign(gy));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |t| t.add_assign(gy));
                acc(*b, &mut |t| t.data.iter_mut().zip(&gy.data).for_each(|(x, &y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (x, y) = (val(*a), val(*b));
                acc(*a, &mut |t| (0..t.len()).for_each(|i| t.data[i] += gy.data[i] * y.data[i]));
                acc(*b, &mut |t| (0..t.len()).for_each(|i| t.data[i] += gy.data[i] * x.data[i]));
            }
            Op::AddRow(a, b) => {
                acc(*a, &mut |t| t.add_assign(gy));
                acc(*b, &mut |t| {
                    for row in gy.data.chunks_exact(gy.cols.max(1)) {
                        t.data.iter_mut().zip(row).for_each(|(x, &v)| *x += v);
                    }
                });
            }
            Op::Scale(a, c) => {
                acc(*a, &mut |t| t.data.iter_mut().zip(&gy.data).for_each(|(x, &y)| *x += y.scale(*c)));
            }
            Op::MulScalar(a, s) => {
                let c = val(*s).item();
                let x = val(*a);
                acc(*a, &mut |t| t.data.iter_mut().zip(&gy.data).for_each(|(p, &y)| *p += y * c));
                acc(*s, &mut |t| {
                    let d = x.data.iter().zip(&gy.data).fold(T::zero(), |s, (&p, &y)| s + p * y);
                    t.data[0] += d;
                });
            }
            Op::AddConst(a) => acc(*a, &mut |t| t.add_assign(gy)),
            Op::Matmul(a, b) => {
                let (x, y) = (val(*a), val(*b));
                let (m, k, n) = (x.rows, x.cols, y.cols);
                // dA = dC · Bᵀ, dB = Aᵀ · dC
                acc(*a, &mut |t| T::gemm(m, n, k, &gy.data, n, 1, &y.data, 1, n, &mut t.data, true));
                acc(*b, &mut |t| T::gemm(k, m, n, &x.data, 1, k, &gy.data, n, 1, &mut t.data, true));
            }
            Op::Exp(a) => {
                let y = &node.value;
                acc(*a, &mut |t| (0..t.len()).for_each(|i| t.data[i] += gy.data[i] * y.data[i]));
            }
            Op::Log(a) => {
                let x = val(*a);
                acc(*a, &mut |t| (0..t.len()).for_each(|i| t.data[i] += gy.data[i] / x.data[i]));
            }
            Op::Softplus(a) => {
                let x = val(*a);
                acc(*a, &mut |t| (0..t.len()).for_each(|i| t.data[i] += gy.data[i] * sigmoid(x.data[i])));
            }
            Op::Relu(a) => {
                let x = val(*a);
                acc(*a, &mut |t| {
                    (0..t.len()).filter(|&i| x.data[i].re() > 0.0).for_each(|i| t.data[i] += gy.data[i])
                });
            }
            Op::Sum(a) => {
                let s = gy.item();
                acc(*a, &mut |t| t.data.iter_mut().for_each(|x| *x += s));
            }
            Op::WeightedSum(a, w) => {
                let s = gy.item();
                acc(*a, &mut |t| t.data.iter_mut().zip(w.iter()).for_each(|(x, &c)| *x += s.scale(c)));
            }
            Op::ScaleRows(a, s) => {
                let c = gy.cols;
                acc(*a, &mut |t| t.data.iter_mut().enumerate().for_each(|(i, x)| *x += gy.data[i].scale(s[i / c])));
            }
            Op::Gather(a, idx) => {
                let c = gy.cols;
                acc(*a, &mut |t| {
                    for (m, &i) in idx.iter().enumerate() {
                        for k in 0..c {
                            t.data[i * c + k] += gy.data[m * c + k];
                        }
                    }
                });
            }
            Op::ScatterAdd(a, idx) => {
                let c = gy.cols;
                acc(*a, &mut |t| {
                    for (m, &i) in idx.iter().enumerate() {
                        for k in 0..c {
                            t.data[m * c + k] += gy.data[i * c + k];
                        }
                    }
                });
            }
            Op::SegmentSoftmax(a, seg) => {
                let y = &node.value;
                let c = y.cols;
                let n_seg = seg.iter().max().map_or(0, |m| m + 1);
                let mut dot = vec![T::zero(); n_seg * c];
                for i in 0..y.len() {
                    dot[seg[i / c] * c + i % c] += y.data[i] * gy.data[i];
                }
                acc(*a, &mut |t| {
                    for i in 0..y.len() {
                        t.data[i] += y.data[i] * (gy.data[i] - dot[seg[i / c] * c + i % c]);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pc = val(p).cols;
                    acc(p, &mut |t| {
                        for r in 0..t.rows {
                            for k in 0..pc {
                                t.data[r * pc + k] += gy.data[r * gy.cols + off + k];
                            }
                        }
                    });
                    off += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = val(p).len();
                    acc(p, &mut |t| t.data.iter_mut().zip(&gy.data[off..off + len]).for_each(|(x, &y)| *x += y));
                    off += len;
                }
            }
            Op::SliceRows(a) => {
                acc(*a, &mut |t| t.data.iter_mut().zip(&gy.data).for_each(|(x, &y)| *x += y));
            }
            Op::EdgeMatvec(x, w) => {
                let (xv, wv) = (val(*x), val(*w));
                let (m, ci) = xv.shape();
                let co = wv.cols / ci;
                acc(*x, &mut |t| {
                    for r in 0..m {
                        for a in 0..ci {
                            let mut s = T::zero();
                            for b in 0..co {
                                s += gy.data[r * co + b] * wv.data[r * wv.cols + a * co + b];
                            }
                            t.data[r * ci + a] += s;
                        }
                    }
                });
                acc(*w, &mut |t| {
                    for r in 0..m {
                        for a in 0..ci {
                            let xa = xv.data[r * ci + a];
                            for b in 0..co {
                                t.data[r * wv.cols + a * co + b] += xa * gy.data[r * co + b];
                            }
                        }
                    }
                });
            }
            Op::Attention { q, k, v, e, w, index, alpha } => {
                let edges = self.edges(*e, *w);
                let ([gq, gk, gv], ge) = attention_backward(index, val(*q), val(*k), val(*v), edges, alpha, gy, [nodes[e.0].grad, w.is_some_and(|w| nodes[w.0].grad)]);
                for (var, gr) in [(*q, gq), (*k, gk), (*v, gv)] {
                    acc(var, &mut |t| t.add_assign(&gr));
                }
                match ge {
                    EdgeGrads::Dense(gr) => acc(*e, &mut |t| t.add_assign(&gr)),
                    EdgeGrads::Projected { feat, w: gw } => {
                        acc(*e, &mut |t| t.add_assign(&feat));
                        if let Some(w) = w {
                            acc(*w, &mut |t| t.add_assign(&gw));
                        }
                    }
                }
            }
            Op::Pointwise { inputs, partials } => {
                let k = inputs.len();
                for (j, &inp) in inputs.iter().enumerate() {
                    acc(inp, &mut |t| {
                        for r in 0..t.rows {
                            t.data[r] += gy.data[r] * partials[r * k + j];
                        }
                    });
                }
            }
        }
    }
}
