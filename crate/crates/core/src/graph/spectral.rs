use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::edges::Pair;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub n: usize,
    pub degree: usize,
    pub mean_degree: f64,
    pub lambda_1: f64,
    pub lambda_2: f64,
    pub lambda_min: f64,
    /// max over i > 1 of |lambda_i|.
    pub second_abs: f64,
    /// lambda_1 - second_abs.
    pub gap: f64,
    /// 2 sqrt(d - 1).
    pub ramanujan: f64,
    pub threshold: f64,
    pub pass: bool,
    pub lanczos_steps: usize,
}

/// Symmetric adjacency in compressed row form.
pub struct Adjacency {
    offsets: Vec<usize>,
    cols: Vec<usize>,
}

impl Adjacency {
    pub fn from_pairs(n: usize, pairs: &[Pair]) -> Self {
        let mut deg = vec![0usize; n];
        for &(a, b) in pairs {
            deg[a] += 1;
            deg[b] += 1;
        }
        let mut offsets = vec![0usize; n + 1];
        for i in 0..n {
            offsets[i + 1] = offsets[i] + deg[i];
        }
        let mut fill = offsets.clone();
        let mut cols = vec![0usize; offsets[n]];
        for &(a, b) in pairs {
            cols[fill[a]] = b;
            fill[a] += 1;
            cols[fill[b]] = a;
            fill[b] += 1;
        }
        Adjacency { offsets, cols }
    }

    pub fn n(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.cols[self.offsets[i]..self.offsets[i + 1]].iter().map(|&j| x[j]).sum();
        }
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for &j in &self.cols[self.offsets[i]..self.offsets[i + 1]] {
                m[(i, j)] += 1.0;
            }
        }
        m
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn normalize(x: &mut [f64]) -> f64 {
    let n = dot(x, x).sqrt();
    if n > 0.0 {
        x.iter_mut().for_each(|v| *v /= n);
    }
    n
}

/// Extremal Ritz pairs of a Lanczos run.
struct LanczosOutcome {
    top: f64,
    bottom: f64,
    top_vector: Vec<f64>,
    steps: usize,
}

/// Lanczos with full reorthogonalization, restricted to the orthogonal
/// complement of `deflate`. Stops when both extremal Ritz values have
/// residual below `tol` or the Krylov space becomes invariant.
fn lanczos(a: &Adjacency, deflate: &[Vec<f64>], seed: u64, tol: f64, max_steps: usize) -> Result<LanczosOutcome> {
    let n = a.n();
    let project = |v: &mut Vec<f64>| {
        for u in deflate {
            let c = dot(u, v);
            axpy(-c, u, v);
        }
    };
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut q: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
    project(&mut q);
    if normalize(&mut q) == 0.0 {
        return Err(Error::numerical("lanczos", "start vector vanished after deflation"));
    }
    let limit = max_steps.min(n - deflate.len()).max(1);
    let mut basis: Vec<Vec<f64>> = vec![q];
    let (mut alphas, mut betas) = (Vec::new(), Vec::new());
    let mut w = vec![0.0; n];
    loop {
        let k = basis.len();
        a.apply(&basis[k - 1], &mut w);
        let alpha = dot(&w, &basis[k - 1]);
        alphas.push(alpha);
        let mut r = w.clone();
        project(&mut r);
        for _ in 0..2 {
            for v in &basis {
                let c = dot(v, &r);
                axpy(-c, v, &mut r);
            }
        }
        let beta = dot(&r, &r).sqrt();
        let invariant = beta < 1e-10;
        let check = invariant || k == limit || k % 10 == 0;
        if check {
            let t = DMatrix::from_fn(k, k, |i, j| {
                if i == j {
                    alphas[i]
                } else if i + 1 == j {
                    betas[i]
                } else if j + 1 == i {
                    betas[j]
                } else {
                    0.0
                }
            });
            let eig = SymmetricEigen::new(t);
            let (mut hi, mut lo) = (0, 0);
            for i in 0..k {
                if eig.eigenvalues[i] > eig.eigenvalues[hi] {
                    hi = i;
                }
                if eig.eigenvalues[i] < eig.eigenvalues[lo] {
                    lo = i;
                }
            }
            let res = |i: usize| (beta * eig.eigenvectors[(k - 1, i)]).abs();
            if invariant || (res(hi) < tol && res(lo) < tol) {
                let mut top_vector = vec![0.0; n];
                for (j, v) in basis.iter().enumerate() {
                    axpy(eig.eigenvectors[(j, hi)], v, &mut top_vector);
                }
                normalize(&mut top_vector);
                return Ok(LanczosOutcome {
                    top: eig.eigenvalues[hi],
                    bottom: eig.eigenvalues[lo],
                    top_vector,
                    steps: k,
                });
            }
            if k == limit {
                return Err(Error::numerical(
                    "lanczos",
                    format!("no convergence after {k} iterations (residuals {:.2e}, {:.2e})", res(hi), res(lo)),
                ));
            }
        }
        betas.push(beta);
        r.iter_mut().for_each(|x| *x /= beta);
        basis.push(r);
    }
}

/// A vanishing gap means a disconnected or bipartite graph.
const GAP_FLOOR: f64 = 1e-6;
const LANCZOS_TOL: f64 = 1e-8;
const LANCZOS_MAX: usize = 1500;

/// Extremal adjacency spectrum of the simple graph on `pairs`, checked
/// against the near-Ramanujan bound `2 sqrt(d-1)` with 5% slack.
pub fn spectral_gap(pairs: &[Pair], n: usize, d: usize) -> Result<SpectralReport> {
    if n < 2 {
        return Err(Error::Config("spectral check needs at least two vertices".into()));
    }
    let a = Adjacency::from_pairs(n, pairs);
    let first = lanczos(&a, &[], 0x5eed, LANCZOS_TOL, LANCZOS_MAX)?;
    let rest = lanczos(&a, &[first.top_vector.clone()], 0x5eed + 1, LANCZOS_TOL, LANCZOS_MAX)?;
    let lambda_min = first.bottom.min(rest.bottom);
    Ok(report(n, d, 2.0 * pairs.len() as f64 / n as f64, first.top, rest.top, lambda_min, first.steps + rest.steps))
}

/// Same report from a dense eigensolve; for small graphs and cross-checks.
pub fn spectral_gap_dense(pairs: &[Pair], n: usize, d: usize) -> Result<SpectralReport> {
    if n < 2 {
        return Err(Error::Config("spectral check needs at least two vertices".into()));
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(Adjacency::from_pairs(n, pairs).dense()).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    Ok(report(n, d, 2.0 * pairs.len() as f64 / n as f64, ev[0], ev[1], ev[n - 1], 0))
}

fn report(n: usize, d: usize, mean_degree: f64, l1: f64, l2: f64, lmin: f64, steps: usize) -> SpectralReport {
    let second_abs = l2.abs().max(lmin.abs());
    let ramanujan = 2.0 * ((d.max(1) - 1) as f64).sqrt();
    let threshold = 1.05 * ramanujan;
    SpectralReport {
        n,
        degree: d,
        mean_degree,
        lambda_1: l1,
        lambda_2: l2,
        lambda_min: lmin,
        second_abs,
        gap: l1 - second_abs,
        ramanujan,
        threshold,
        pass: second_abs <= threshold && l1 - second_abs > GAP_FLOOR,
        lanczos_steps: steps,
    }
}
