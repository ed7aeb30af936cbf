use std::f64::consts::PI;

use super::DENSITY_FLOOR;
use crate::ad::Scalar;

pub const KAPPA: f64 = 0.804;
pub const MU: f64 = 0.219_514_972_764_517_1;
const BETA: f64 = 0.066_724_550_603_149_22;

fn gamma() -> f64 {
    (1.0 - 2f64.ln()) / (PI * PI)
}

/// Parameter sets of the PW92 interpolation: rows are ε_c(ζ=0),
/// ε_c(ζ=1) and −α_c.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PwParams {
    pub a: [f64; 3],
    pub alpha1: [f64; 3],
    pub beta: [[f64; 4]; 3],
    pub fz20: f64,
}

const PW_ALPHA1: [f64; 3] = [0.21370, 0.20548, 0.11125];
const PW_BETA: [[f64; 4]; 3] = [
    [7.5957, 3.5876, 1.6382, 0.49294],
    [14.1189, 6.1977, 3.3662, 0.62517],
    [10.357, 3.6231, 0.88026, 0.49671],
];

/// Published PW92 constants.
pub const PW92: PwParams = PwParams { a: [0.031091, 0.015545, 0.016887], alpha1: PW_ALPHA1, beta: PW_BETA, fz20: 1.709921 };

/// Higher-precision variant used inside PBE correlation.
pub const PW92_MOD: PwParams = PwParams {
    a: [0.0310907, 0.01554535, 0.0168869],
    alpha1: PW_ALPHA1,
    beta: PW_BETA,
    fz20: 1.709_920_934_161_365_6,
};

/// `x^p`, taken as zero (with zero derivatives) at x ≤ 0.
fn spow<S: Scalar>(x: S, p: f64) -> S {
    if x.re() <= 0.0 {
        S::zero()
    } else {
        x.powf(p)
    }
}

pub(crate) fn zeta<S: Scalar>(na: S, nb: S) -> S {
    let n = na + nb;
    if n.re() < DENSITY_FLOOR {
        return S::zero();
    }
    let z = (na - nb) / n;
    if z.re() > 1.0 {
        S::one()
    } else if z.re() < -1.0 {
        -S::one()
    } else {
        z
    }
}

/// Exchange of an unpolarized density, per volume.
fn ex_unpolarized<S: Scalar>(n: S) -> S {
    -spow(n, 4.0 / 3.0).scale(super::slater_cx())
}

/// Spin-scaled Slater exchange per volume.
pub fn lda_exchange<S: Scalar>(na: S, nb: S) -> S {
    (ex_unpolarized(na.scale(2.0)) + ex_unpolarized(nb.scale(2.0))).scale(0.5)
}

fn pw_g<S: Scalar>(rs: S, srs: S, i: usize, p: &PwParams) -> S {
    let a = p.a[i];
    let b = p.beta[i];
    let den = (srs.scale(b[0]) + rs.scale(b[1]) + (rs * srs).scale(b[2]) + (rs * rs).scale(b[3])).scale(2.0 * a);
    -(S::one() + rs.scale(p.alpha1[i])).scale(2.0 * a) * (S::one() / den).ln_1p()
}

/// PW92 correlation energy per electron at total density `n > 0`.
pub fn pw92_correlation_eps<S: Scalar>(n: S, zeta: S, p: &PwParams) -> S {
    let rs = n.scale(4.0 * PI / 3.0).powf(-1.0 / 3.0);
    let srs = rs.sqrt();
    let ec0 = pw_g(rs, srs, 0, p);
    let ec1 = pw_g(rs, srs, 1, p);
    let ac = -pw_g(rs, srs, 2, p);
    let one = S::one();
    let fz = (spow(one + zeta, 4.0 / 3.0) + spow(one - zeta, 4.0 / 3.0) - S::from_f64(2.0)).scale(1.0 / (2f64.powf(4.0 / 3.0) - 2.0));
    let z2 = zeta * zeta;
    let z4 = z2 * z2;
    ec0 + (ac * fz * (one - z4)).scale(1.0 / p.fz20) + (ec1 - ec0) * fz * z4
}

/// PW92 LDA energy per volume.
pub fn pw92_energy<S: Scalar>(na: S, nb: S) -> S {
    let n = na + nb;
    if n.re() < DENSITY_FLOOR {
        return S::zero();
    }
    lda_exchange(na, nb) + n * pw92_correlation_eps(n, zeta(na, nb), &PW92)
}

/// PBE exchange of an unpolarized density with |∇n|² = sigma, per volume.
fn pbe_x_unpolarized<S: Scalar>(n: S, sigma: S) -> S {
    if n.re() < DENSITY_FLOOR {
        return S::zero();
    }
    let kf2 = n.scale(3.0 * PI * PI).powf(2.0 / 3.0);
    let s2 = sigma / (kf2 * n * n).scale(4.0);
    let fx = S::from_f64(1.0 + KAPPA) - S::from_f64(KAPPA) / (S::one() + s2.scale(MU / KAPPA));
    ex_unpolarized(n) * fx
}

/// Spin-scaled PBE exchange per volume.
pub fn pbe_exchange<S: Scalar>(na: S, nb: S, saa: S, sbb: S) -> S {
    (pbe_x_unpolarized(na.scale(2.0), saa.scale(4.0)) + pbe_x_unpolarized(nb.scale(2.0), sbb.scale(4.0))).scale(0.5)
}

/// PBE correlation per volume; `sigma` is |∇n|² of the total density.
pub fn pbe_correlation<S: Scalar>(na: S, nb: S, sigma: S) -> S {
    let n = na + nb;
    if n.re() < DENSITY_FLOOR {
        return S::zero();
    }
    let z = zeta(na, nb);
    let ec = pw92_correlation_eps(n, z, &PW92_MOD);
    let one = S::one();
    let phi = (spow(one + z, 2.0 / 3.0) + spow(one - z, 2.0 / 3.0)).scale(0.5);
    let phi3 = phi * phi * phi;
    let kf = n.scale(3.0 * PI * PI).powf(1.0 / 3.0);
    let ks2 = kf.scale(4.0 / PI);
    let t2 = sigma / (phi * phi * ks2 * n * n).scale(4.0);
    let g = gamma();
    let a = S::from_f64(BETA / g) / ((-ec / phi3.scale(g)).exp() - one);
    let at2 = a * t2;
    let frac = t2 * (one + at2) / (one + at2 + at2 * at2);
    let h = phi3.scale(g) * frac.scale(BETA / g).ln_1p();
    n * (ec + h)
}

/// Full PBE energy per volume from `σ↑↑`, `σ↓↓` and total `σ`.
pub fn pbe_energy<S: Scalar>(na: S, nb: S, saa: S, sbb: S, sigma: S) -> S {
    if (na + nb).re() < DENSITY_FLOOR {
        return S::zero();
    }
    pbe_exchange(na, nb, saa, sbb) + pbe_correlation(na, nb, sigma)
}
