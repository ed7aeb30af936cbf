//! Finite-difference gradient checks and random op compositions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Largest relative deviation between tape gradients and central
/// differences with step `h`, over every entry of every input.
pub fn gradient_error<F>(build: F, inputs: &[Tensor<f64>], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone())).collect();
        let out = build(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let mut worst: f64 = 0.0;
    for (i, x) in inputs.iter().enumerate() {
        let g = grads.get_or_zeros(vars[i], x.rows, x.cols);
        for k in 0..x.len() {
            let mut xs = inputs.to_vec();
            xs[i].data[k] = x.data[k] + h;
            let up = eval(&xs)?;
            xs[i].data[k] = x.data[k] - h;
            let dn = eval(&xs)?;
            let fd = (up - dn) / (2.0 * h);
            let scale = fd.abs().max(g.data[k].abs()).max(1e-3);
            worst = worst.max((g.data[k] - fd).abs() / scale);
        }
    }
    Ok(worst)
}

/// Operations drawn by [`random_composition`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RandomOp {
    Add,
    Mul,
    Matmul,
    Exp,
    Log,
    Softplus,
    Relu,
    Gather,
    SegmentSoftmax,
}

const OPS: [RandomOp; 9] = [
    RandomOp::Add,
    RandomOp::Mul,
    RandomOp::Matmul,
    RandomOp::Exp,
    RandomOp::Log,
    RandomOp::Softplus,
    RandomOp::Relu,
    RandomOp::Gather,
    RandomOp::SegmentSoftmax,
];

/// A seeded chain of `n_ops` operations on a 4×3 input, reduced by `sum`.
#[derive(Debug, Clone)]
pub struct RandomComposition {
    pub ops: Vec<RandomOp>,
    pub inputs: Vec<Tensor<f64>>,
}

pub fn random_composition(seed: u64, n_ops: usize) -> RandomComposition {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let ops = (0..n_ops).map(|_| OPS[rng.gen_range(0..OPS.len())]).collect();
    // x (4×3), y (4×3), w (3×3); kept away from ReLU kinks
    let mut draw = |r: usize, c: usize| {
        let data = (0..r * c)
            .map(|_| {
                let v: f64 = rng.gen_range(0.2..1.2);
                if rng.gen_bool(0.5) {
                    v
                } else {
                    -v
                }
            })
            .collect();
        Tensor { rows: r, cols: c, data }
    };
    let inputs = vec![draw(4, 3), draw(4, 3), draw(3, 3)];
    RandomComposition { ops, inputs }
}

impl RandomComposition {
    pub fn build(&self, tape: &mut Tape<f64>, v: &[Var]) -> Result<Var> {
        use std::sync::Arc;
        let (x, y, w) = (v[0], v[1], v[2]);
        let mut cur = x;
        for op in &self.ops {
            cur = match op {
                RandomOp::Add => tape.add(cur, y)?,
                RandomOp::Mul => tape.mul(cur, y)?,
                RandomOp::Matmul => tape.matmul(cur, w)?,
                RandomOp::Exp => {
                    let s = tape.scale(cur, 0.5)?;
                    tape.exp(s)?
                }
                RandomOp::Log => {
                    let sq = tape.mul(cur, cur)?;
                    let p = tape.add_const(sq, 0.5)?;
                    tape.log(p)?
                }
                RandomOp::Softplus => tape.softplus(cur)?,
                RandomOp::Relu => {
                    let s = tape.add_const(cur, 0.05)?;
                    tape.relu(s)?
                }
                RandomOp::Gather => tape.gather(cur, Arc::new(vec![3, 0, 0, 2]))?,
                RandomOp::SegmentSoftmax => tape.segment_softmax(cur, Arc::new(vec![0, 0, 1, 1]))?,
            };
        }
        let wsum = tape.mul(cur, y)?;
        tape.sum(wsum)
    }

    pub fn gradient_error(&self, h: f64) -> Result<f64> {
        gradient_error(|t, v| self.build(t, v), &self.inputs, h)
    }
}
