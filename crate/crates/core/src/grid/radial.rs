//! Double-exponential radial quadrature.
//!
//! Nodes r(x) = exp(α·sinh(βx)) on a uniform x grid; the weights carry the
//! trapezoid step, the mapping Jacobian dr/dx and the r² volume factor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialSpec {
    pub alpha: f64,
    pub beta: f64,
    pub r_min: f64,
    pub r_max: f64,
}

impl Default for RadialSpec {
    fn default() -> Self {
        RadialSpec { alpha: 1.0, beta: 1.0, r_min: 1e-5, r_max: 40.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadialScheme {
    pub spec: RadialSpec,
    pub r: Vec<f64>,
    /// Includes the r² Jacobian: Σ w_b f(r_b) ≈ ∫ r² f(r) dr.
    pub w: Vec<f64>,
}

impl RadialScheme {
    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }
}

pub fn build_radial(spec: RadialSpec, n_points: usize) -> Result<RadialScheme> {
    if n_points < 2 {
        return Err(Error::Config(format!("radial scheme needs at least 2 points, got {n_points}")));
    }
    if !(spec.alpha > 0.0 && spec.beta > 0.0) {
        return Err(Error::Config("radial scale parameters must be positive".into()));
    }
    if !(spec.r_min > 0.0 && spec.r_max > spec.r_min) {
        return Err(Error::Config(format!(
            "radial range must satisfy 0 < r_min < r_max, got [{}, {}]",
            spec.r_min, spec.r_max
        )));
    }
    let RadialSpec { alpha, beta, .. } = spec;
    let x_of = |r: f64| (r.ln() / alpha).asinh() / beta;
    let (x0, x1) = (x_of(spec.r_min), x_of(spec.r_max));
    let h = (x1 - x0) / (n_points - 1) as f64;
    let mut r = Vec::with_capacity(n_points);
    let mut w = Vec::with_capacity(n_points);
    for i in 0..n_points {
        let x = x0 + h * i as f64;
        let ri = (alpha * (beta * x).sinh()).exp();
        let drdx = ri * alpha * beta * (beta * x).cosh();
        r.push(ri);
        w.push(h * drdx * ri * ri);
    }
    Ok(RadialScheme { spec, r, w })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_points_are_increasing_and_positive() {
        let s = build_radial(RadialSpec::default(), 2).unwrap();
        assert!(s.r[0] > 0.0 && s.r[1] > s.r[0]);
    }

    #[test]
    fn hydrogenic_density_integral() {
        // ∫ r² e^{-2r} dr = 1/4
        for n in [40, 75, 120] {
            let s = build_radial(RadialSpec::default(), n).unwrap();
            let q: f64 = s.r.iter().zip(&s.w).map(|(r, w)| w * (-2.0 * r).exp()).sum();
            assert!((q - 0.25).abs() < 1e-8, "n={n}: {q}");
        }
    }

    #[test]
    fn weights_positive_and_nodes_monotone() {
        let s = build_radial(RadialSpec::default(), 75).unwrap();
        assert!(s.w.iter().all(|&w| w > 0.0));
        assert!(s.r.windows(2).all(|p| p[1] > p[0]));
        assert!((s.r[0] - 1e-5).abs() < 1e-15 && (s.r[74] - 40.0).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_parameters() {
        let bad = RadialSpec { alpha: 0.0, ..Default::default() };
        assert!(matches!(build_radial(bad, 10), Err(Error::Config(_))));
        let bad = RadialSpec { beta: -1.0, ..Default::default() };
        assert!(build_radial(bad, 10).is_err());
        assert!(build_radial(RadialSpec::default(), 1).is_err());
    }
}
