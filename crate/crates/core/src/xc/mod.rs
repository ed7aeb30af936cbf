//! Exchange-correlation energy densities: PW92 LDA, PBE, and the learned
//! multiplicative enhancement `ε·(1 + β·F)`.
//!
//! The scalar kernels return energy per unit volume `n·ε_xc` and are generic
//! over [`Scalar`], so the same code runs on plain floats, on the tape's
//! pointwise op, and under nested duals for Hessian-vector products.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ad::{Scalar, Tape, Var};
use crate::error::{Error, Result};

mod kernels;

pub use kernels::{lda_exchange, pbe_correlation, pbe_energy, pbe_exchange, pw92_correlation_eps, pw92_energy, PwParams, KAPPA, MU, PW92, PW92_MOD};

/// Below this total density the energy density and its derivatives are zero.
pub const DENSITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaseFunctional {
    Pw92,
    Pbe,
}

impl BaseFunctional {
    pub fn is_gga(self) -> bool {
        self == BaseFunctional::Pbe
    }

    pub fn name(self) -> &'static str {
        match self {
            BaseFunctional::Pw92 => "pw92",
            BaseFunctional::Pbe => "pbe",
        }
    }

    /// Energy per volume at one point; `sigma` is `(σ↑↑, σ↓↓, σ)` and is
    /// ignored for LDA.
    pub fn energy<S: Scalar>(self, na: S, nb: S, sigma: [S; 3]) -> S {
        match self {
            BaseFunctional::Pw92 => pw92_energy(na, nb),
            BaseFunctional::Pbe => pbe_energy(na, nb, sigma[0], sigma[1], sigma[2]),
        }
    }
}

/// Functional selection as exposed on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum XcKind {
    Pw92,
    Pbe,
    ExphormerPw92,
    ExphormerPbe,
}

impl XcKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pw92" => Ok(XcKind::Pw92),
            "pbe" => Ok(XcKind::Pbe),
            "exphormer-pw92" => Ok(XcKind::ExphormerPw92),
            "exphormer-pbe" => Ok(XcKind::ExphormerPbe),
            _ => Err(Error::Config(format!("unknown functional '{s}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            XcKind::Pw92 => "pw92",
            XcKind::Pbe => "pbe",
            XcKind::ExphormerPw92 => "exphormer-pw92",
            XcKind::ExphormerPbe => "exphormer-pbe",
        }
    }

    pub fn base(self) -> BaseFunctional {
        match self {
            XcKind::Pw92 | XcKind::ExphormerPw92 => BaseFunctional::Pw92,
            XcKind::Pbe | XcKind::ExphormerPbe => BaseFunctional::Pbe,
        }
    }

    pub fn is_learned(self) -> bool {
        matches!(self, XcKind::ExphormerPw92 | XcKind::ExphormerPbe)
    }
}

/// Local density data at one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DensityPoint {
    pub n_up: f64,
    pub n_dn: f64,
    /// |∇n↑|
    pub grad_up: f64,
    /// |∇n↓|
    pub grad_dn: f64,
    /// |∇n|
    pub grad: f64,
}

impl DensityPoint {
    pub fn unpolarized(n: f64, grad: f64) -> Self {
        DensityPoint { n_up: n / 2.0, n_dn: n / 2.0, grad_up: grad / 2.0, grad_dn: grad / 2.0, grad }
    }

    pub fn density(&self) -> f64 {
        self.n_up + self.n_dn
    }

    fn check(&self) -> Result<()> {
        let vals = [self.n_up, self.n_dn, self.grad_up, self.grad_dn, self.grad];
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain(format!("invalid density point {self:?}")));
        }
        Ok(())
    }
}

/// Per-point energy per electron and the quadrature total.
#[derive(Debug, Clone, PartialEq)]
pub struct XcResult {
    pub eps: Vec<f64>,
    pub energy: f64,
}

fn eps_of(base: BaseFunctional, points: &[DensityPoint]) -> Result<Vec<f64>> {
    points
        .iter()
        .map(|p| {
            p.check()?;
            let n = p.density();
            if n < DENSITY_FLOOR {
                return Ok(0.0);
            }
            let sig = [p.grad_up * p.grad_up, p.grad_dn * p.grad_dn, p.grad * p.grad];
            Ok(base.energy(p.n_up, p.n_dn, sig) / n)
        })
        .collect()
}

/// PW92 LDA (Slater exchange plus PW92 correlation), ε_xc per point.
pub fn pw92_lda(points: &[DensityPoint]) -> Result<Vec<f64>> {
    eps_of(BaseFunctional::Pw92, points)
}

/// PBE exchange-correlation, ε_xc per point.
pub fn pbe(points: &[DensityPoint]) -> Result<Vec<f64>> {
    eps_of(BaseFunctional::Pbe, points)
}

/// Enhanced functional evaluated on fixed data: ε̃ = ε·(1 + β·F) and
/// E = Σ w·ε̃·n.
pub fn exphormer_xc(base: BaseFunctional, points: &[DensityPoint], weights: &[f64], f_exp: &[f64], beta: f64) -> Result<XcResult> {
    if weights.len() != points.len() || f_exp.len() != points.len() {
        return Err(Error::dim(
            "exphormer_xc",
            format!("{} points, {} weights, {} network outputs", points.len(), weights.len(), f_exp.len()),
        ));
    }
    let mut eps = eps_of(base, points)?;
    for (e, f) in eps.iter_mut().zip(f_exp) {
        *e *= 1.0 + beta * f;
    }
    let energy = eps.iter().zip(points).zip(weights).map(|((e, p), w)| w * e * p.density()).sum();
    Ok(XcResult { eps, energy })
}

/// Spin-density columns (n×1) on a tape. Gradient components are needed for
/// GGA bases only.
#[derive(Debug, Clone, Copy)]
pub struct SpinColumns {
    pub n_up: Var,
    pub n_dn: Var,
    pub grad_up: Option<[Var; 3]>,
    pub grad_dn: Option<[Var; 3]>,
}

fn sum_squares<T: Scalar>(tape: &mut Tape<T>, g: [Var; 3]) -> Result<Var> {
    let mut acc = tape.mul(g[0], g[0])?;
    for &c in &g[1..] {
        let sq = tape.mul(c, c)?;
        acc = tape.add(acc, sq)?;
    }
    Ok(acc)
}

/// Base energy density per volume, one row per grid point.
pub fn base_energy_density<T: Scalar>(tape: &mut Tape<T>, base: BaseFunctional, cols: &SpinColumns) -> Result<Var> {
    if !base.is_gga() {
        return tape.pointwise(&[cols.n_up, cols.n_dn], |x| pw92_energy(x[0], x[1]));
    }
    let (Some(gu), Some(gd)) = (cols.grad_up, cols.grad_dn) else {
        return Err(Error::Config("PBE needs density gradients".into()));
    };
    let s_up = sum_squares(tape, gu)?;
    let s_dn = sum_squares(tape, gd)?;
    let mut gt = [cols.n_up; 3];
    for k in 0..3 {
        gt[k] = tape.add(gu[k], gd[k])?;
    }
    let s_tot = sum_squares(tape, gt)?;
    tape.pointwise(&[cols.n_up, cols.n_dn, s_up, s_dn, s_tot], |x| pbe_energy(x[0], x[1], x[2], x[3], x[4]))
}

/// Spin polarization (n↑ − n↓)/n, zero below the density floor.
pub fn zeta_column<T: Scalar>(tape: &mut Tape<T>, n_up: Var, n_dn: Var) -> Result<Var> {
    tape.pointwise(&[n_up, n_dn], |x| kernels::zeta(x[0], x[1]))
}

/// `E = Σ_g w_g·e_g·(1 + β·F_g)`; with no network this is `Σ w·e`.
pub fn enhanced_energy<T: Scalar>(tape: &mut Tape<T>, e_base: Var, enhancement: Option<(Var, Var)>, weights: Arc<Vec<f64>>) -> Result<Var> {
    let e = match enhancement {
        None => e_base,
        Some((f, beta)) => {
            if tape.shape(f) != tape.shape(e_base) {
                return Err(Error::dim("enhanced_energy", format!("network output {:?} vs grid {:?}", tape.shape(f), tape.shape(e_base))));
            }
            let bf = tape.mul_scalar(f, beta)?;
            let factor = tape.add_const(bf, 1.0)?;
            tape.mul(e_base, factor)?
        }
    };
    tape.weighted_sum(e, weights)
}

/// Slater exchange coefficient (3/4)(3/π)^{1/3}.
pub fn slater_cx() -> f64 {
    0.75 * (3.0 / PI).powf(1.0 / 3.0)
}
