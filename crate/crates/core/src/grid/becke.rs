//! Becke fuzzy-cell partition weights (homonuclear, no size adjustment).

use crate::error::{Error, Result};
use crate::geometry::{distance, Vec3};

/// Three nested applications of p(μ) = ½μ(3 − μ²).
#[inline]
pub fn becke_step(mu: f64) -> f64 {
    let mut f = mu;
    for _ in 0..3 {
        f = 0.5 * f * (3.0 - f * f);
    }
    0.5 * (1.0 - f)
}

/// Partition weights of `point` over all atoms; they sum to one.
pub fn becke_weights(point: &Vec3, atoms: &[Vec3]) -> Result<Vec<f64>> {
    if atoms.is_empty() {
        return Err(Error::Geometry("Becke partition needs at least one atom".into()));
    }
    if atoms.len() == 1 {
        return Ok(vec![1.0]);
    }
    let dist: Vec<f64> = atoms.iter().map(|a| distance(point, a)).collect();
    let mut cell = vec![1.0; atoms.len()];
    for i in 0..atoms.len() {
        for j in 0..atoms.len() {
            if i == j {
                continue;
            }
            let rij = distance(&atoms[i], &atoms[j]);
            if rij < 1e-12 {
                return Err(Error::Geometry(format!(
                    "undefined partition: point coincides with two nuclei ({i} and {j} overlap)"
                )));
            }
            cell[i] *= becke_step((dist[i] - dist[j]) / rij);
        }
    }
    let total: f64 = cell.iter().sum();
    if total <= 0.0 {
        return Err(Error::Geometry("undefined partition: all cell functions vanish".into()));
    }
    Ok(cell.into_iter().map(|p| p / total).collect())
}
