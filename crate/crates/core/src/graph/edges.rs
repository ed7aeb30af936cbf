use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::grid::MolecularGrid;

/// Undirected vertex pair, smaller index first.
pub type Pair = (usize, usize);

fn ordered(a: usize, b: usize) -> Pair {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Great-circle distance on the unit sphere from polar angle `theta` and
/// azimuth `phi`, via the haversine formula in latitude form.
pub fn haversine(theta1: f64, phi1: f64, theta2: f64, phi2: f64) -> f64 {
    let lat1 = std::f64::consts::FRAC_PI_2 - theta1;
    let lat2 = std::f64::consts::FRAC_PI_2 - theta2;
    let h = (0.5 * (lat2 - lat1)).sin().powi(2) + lat1.cos() * lat2.cos() * (0.5 * (phi2 - phi1)).sin().powi(2);
    2.0 * h.clamp(0.0, 1.0).sqrt().asin()
}

/// Links each point to the next shell outward. Equal orders pair identical
/// angular indices; otherwise each inner point goes to its angularly
/// nearest outer point (lowest index on ties).
pub fn radial_edges(grid: &MolecularGrid) -> Vec<Pair> {
    let mut out = Vec::new();
    for pair in grid.shells.windows(2) {
        let (inner, outer) = (&pair[0], &pair[1]);
        if inner.atom != outer.atom {
            continue;
        }
        if inner.order == outer.order {
            out.extend((0..inner.order).map(|c| (inner.start + c, outer.start + c)));
            continue;
        }
        let a = grid.angular(inner.order);
        let b = grid.angular(outer.order);
        for c in 0..inner.order {
            let mut best = (f64::INFINITY, 0);
            for k in 0..outer.order {
                let d = haversine(a.theta[c], a.phi[c], b.theta[k], b.phi[k]);
                if d < best.0 - 1e-12 {
                    best = (d, k);
                }
            }
            out.push((inner.start + c, outer.start + best.1));
        }
    }
    out
}

/// Relative slack on the cutoff so symmetry-equivalent ties survive rounding.
const TIE_TOL: f64 = 1e-9;

/// Edges of a single shell as local index pairs.
pub fn shell_angular_pairs(theta: &[f64], phi: &[f64], alpha: f64) -> BTreeSet<Pair> {
    let n = theta.len();
    let mut set = BTreeSet::new();
    if n < 2 {
        return set;
    }
    let mut d = vec![0.0; n * n];
    for k in 0..n {
        for c in 0..n {
            d[k * n + c] = haversine(theta[k], phi[k], theta[c], phi[c]);
        }
    }
    for k in 0..n {
        let min = (0..n).filter(|&l| l != k).map(|l| d[k * n + l]).fold(f64::INFINITY, f64::min);
        let cutoff = (1.0 + alpha) * min * (1.0 + TIE_TOL);
        for c in 0..n {
            if c != k && d[k * n + c] <= cutoff {
                set.insert(ordered(k, c));
            }
        }
    }
    set
}

/// Haversine-cutoff edges within every shell, symmetrized by union.
pub fn angular_edges(grid: &MolecularGrid, alpha: f64) -> Result<Vec<Pair>> {
    if !(alpha >= 0.0) {
        return Err(Error::Config(format!("alpha must be >= 0, got {alpha}")));
    }
    let mut cache = std::collections::BTreeMap::new();
    let mut out = Vec::new();
    for shell in &grid.shells {
        let pairs = cache.entry(shell.order).or_insert_with(|| {
            let a = grid.angular(shell.order);
            shell_angular_pairs(&a.theta, &a.phi, alpha)
        });
        out.extend(pairs.iter().map(|&(i, j)| (shell.start + i, shell.start + j)));
    }
    Ok(out)
}

/// Mean degree of the angular graph on one Lebedev shell.
pub fn mean_angular_degree(order: usize, alpha: f64) -> Result<f64> {
    let shell = crate::grid::lebedev(order)?;
    let pairs = shell_angular_pairs(&shell.theta, &shell.phi, alpha);
    Ok(2.0 * pairs.len() as f64 / order as f64)
}

/// Permutation-model multigraph: `d/2` copies of the vertex list matched by
/// a uniform random permutation. Every vertex has degree exactly `d`,
/// counting self-loops twice.
pub fn expander_multigraph(n_grid: usize, d: usize, seed: u64) -> Result<Vec<Pair>> {
    if d % 2 == 1 {
        return Err(Error::Config(format!("expander degree must be even, got {d}")));
    }
    let s: Vec<usize> = (0..d / 2).flat_map(|_| 0..n_grid).collect();
    let mut perm: Vec<usize> = (0..s.len()).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    perm.shuffle(&mut rng);
    // (s_i, s_pi(i)) and (s_i, s_pi^-1(i)) are the same undirected edges.
    Ok(s.iter().zip(&perm).map(|(&a, &p)| (a, s[p])).collect())
}

/// Expander edges after dropping self-loops and parallel edges.
pub fn expander_edges(n_grid: usize, d: usize, seed: u64) -> Result<Vec<Pair>> {
    let multi = expander_multigraph(n_grid, d, seed)?;
    let set: BTreeSet<Pair> = multi.into_iter().filter(|(a, b)| a != b).map(|(a, b)| ordered(a, b)).collect();
    Ok(set.into_iter().collect())
}

/// Every grid vertex joined to each of `k` global vertices `n_grid..n_grid+k`.
pub fn global_edges(n_grid: usize, k: usize) -> Vec<Pair> {
    (0..k).flat_map(|g| (0..n_grid).map(move |i| (i, n_grid + g))).collect()
}
