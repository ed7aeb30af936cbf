use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

/// Pulay extrapolation over stored Fock matrices and commutator errors.
#[derive(Debug, Clone)]
pub(crate) struct Diis {
    depth: usize,
    focks: VecDeque<[DMatrix<f64>; 2]>,
    errors: VecDeque<Vec<f64>>,
}

impl Diis {
    pub fn new(depth: usize) -> Self {
        Diis { depth, focks: VecDeque::new(), errors: VecDeque::new() }
    }

    pub fn clear(&mut self) {
        self.focks.clear();
        self.errors.clear();
    }

    pub fn push(&mut self, fock: [DMatrix<f64>; 2], error: Vec<f64>) {
        if self.depth == 0 {
            return;
        }
        if self.focks.len() == self.depth {
            self.focks.pop_front();
            self.errors.pop_front();
        }
        self.focks.push_back(fock);
        self.errors.push_back(error);
    }

    /// `None` on breakdown (singular or wildly extrapolating system).
    pub fn extrapolate(&self) -> Option<[DMatrix<f64>; 2]> {
        let m = self.focks.len();
        if m == 0 {
            return None;
        }
        if m == 1 {
            return Some(self.focks[0].clone());
        }
        let mut b = DMatrix::zeros(m + 1, m + 1);
        for i in 0..m {
            for j in 0..=i {
                let v: f64 = self.errors[i].iter().zip(&self.errors[j]).map(|(a, b)| a * b).sum();
                b[(i, j)] = v;
                b[(j, i)] = v;
            }
            b[(i, m)] = -1.0;
            b[(m, i)] = -1.0;
        }
        // Rescale so the smallest errors do not underflow the solve.
        let scale = (0..m).map(|i| b[(i, i)]).fold(0.0, f64::max);
        if !(scale > 0.0) {
            return Some(self.focks[m - 1].clone());
        }
        for i in 0..m {
            for j in 0..m {
                b[(i, j)] /= scale;
            }
        }
        let mut rhs = DVector::zeros(m + 1);
        rhs[m] = -1.0;
        let c = b.lu().solve(&rhs)?;
        if c.iter().any(|x| !x.is_finite()) || c.iter().take(m).map(|x| x.abs()).sum::<f64>() > 1e4 {
            return None;
        }
        let mut out = [DMatrix::zeros(self.focks[0][0].nrows(), self.focks[0][0].ncols()), DMatrix::zeros(self.focks[0][1].nrows(), self.focks[0][1].ncols())];
        for (ci, f) in c.iter().zip(&self.focks) {
            out[0] += &f[0] * *ci;
            out[1] += &f[1] * *ci;
        }
        Some(out)
    }
}
