//! Lebedev–Laikov angular quadrature on the unit sphere.
//!
//! Each rule is stored as its octahedral orbit generators; `expand_orbit`
//! reproduces the full point set. Weights are normalized to sum to one.

use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{Error, Result};

/// Point counts of the supported rules.
pub const SUPPORTED_ORDERS: [usize; 10] = [6, 14, 26, 38, 50, 74, 86, 110, 146, 194];

/// (orbit code, a, b, weight). Orbit codes follow the classic generator
/// naming: 1 = (1,0,0), 2 = (0,a,a), 3 = (a,a,a), 4 = (a,a,b), 5 = (a,b,0),
/// 6 = (a,b,c).
type Generator = (u8, f64, f64, f64);

const RULES: &[(usize, &[Generator])] = &[
    (6, &[
        (1, 0.0, 0.0, 0.16666666666666666),
    ]),
    (14, &[
        (1, 0.0, 0.0, 0.06666666666666667),
        (3, 0.0, 0.0, 0.075),
    ]),
    (26, &[
        (1, 0.0, 0.0, 0.04761904761904762),
        (2, 0.0, 0.0, 0.03809523809523809),
        (3, 0.0, 0.0, 0.03214285714285714),
    ]),
    (38, &[
        (1, 0.0, 0.0, 0.009523809523809525),
        (3, 0.0, 0.0, 0.03214285714285714),
        (5, 0.4597008433809831, 0.0, 0.02857142857142857),
    ]),
    (50, &[
        (1, 0.0, 0.0, 0.0126984126984127),
        (2, 0.0, 0.0, 0.02257495590828924),
        (3, 0.0, 0.0, 0.02109375),
        (4, 0.30151134457776346, 0.0, 0.02017333553791887),
    ]),
    (74, &[
        (1, 0.0, 0.0, 0.0005130671797338465),
        (2, 0.0, 0.0, 0.01660406956574204),
        (3, 0.0, 0.0, -0.02958603896103896),
        (4, 0.4803844614152612, 0.0, 0.02657620708215946),
        (5, 0.32077264898077645, 0.0, 0.01652217099371571),
    ]),
    (86, &[
        (1, 0.0, 0.0, 0.011544011544011539),
        (3, 0.0, 0.0, 0.011943909085856278),
        (4, 0.3696028464541501, 0.0, 0.011110555710603398),
        (4, 0.6943540066026661, 0.0, 0.011876501294537137),
        (5, 0.3742430390903413, 0.0, 0.011812303746904479),
    ]),
    (110, &[
        (1, 0.0, 0.0, 0.003828270494937161),
        (3, 0.0, 0.0, 0.009793737512487511),
        (4, 0.18511563534473618, 0.0, 0.00821173728319111),
        (4, 0.3956894730559419, 0.0, 0.00959547133607096),
        (4, 0.6904210483822925, 0.0, 0.009942814891178101),
        (5, 0.47836902881215, 0.0, 0.009694996361663027),
    ]),
    (146, &[
        (1, 0.0, 0.0, 0.0005996313688621381),
        (2, 0.0, 0.0, 0.007372999718620755),
        (3, 0.0, 0.0, 0.007210515360144488),
        (4, 0.15746766720390817, 0.0, 0.007574394159054035),
        (4, 0.41749612279654547, 0.0, 0.006753829486314477),
        (4, 0.6764410400114262, 0.0, 0.007116355493117555),
        (6, 0.14035538117131816, 0.4493328323269558, 0.006991087353303262),
    ]),
    (194, &[
        (1, 0.0, 0.0, 0.0017823404472446112),
        (2, 0.0, 0.0, 0.005716905949977103),
        (3, 0.0, 0.0, 0.005573383178848737),
        (4, 0.1299335447650067, 0.0, 0.004106777028169394),
        (4, 0.28924656275754396, 0.0, 0.005158237711805383),
        (4, 0.4446933178717439, 0.0, 0.005518771467273614),
        (4, 0.6712973442695224, 0.0, 0.005608704082587997),
        (5, 0.3457702197611283, 0.0, 0.005051846064614808),
        (6, 0.15904171053835287, 0.5251185724436419, 0.005530248916233094),
    ]),
];

/// A single Lebedev shell.
#[derive(Debug, Clone, PartialEq)]
pub struct LebedevShell {
    /// Number of points (the rule's conventional name).
    pub order: usize,
    /// Highest spherical-harmonic degree integrated exactly.
    pub degree: usize,
    pub unit_points: Vec<[f64; 3]>,
    /// Polar angle θ ∈ [0, π].
    pub theta: Vec<f64>,
    /// Azimuth φ ∈ (−π, π].
    pub phi: Vec<f64>,
    pub weights: Vec<f64>,
}

impl LebedevShell {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

pub fn degree_of(order: usize) -> Option<usize> {
    let degrees = [3, 5, 7, 9, 11, 13, 15, 17, 19, 23];
    SUPPORTED_ORDERS.iter().position(|&o| o == order).map(|i| degrees[i])
}

/// Builds the Lebedev rule with `order` points.
pub fn lebedev(order: usize) -> Result<LebedevShell> {
    let gens = RULES
        .iter()
        .find(|(n, _)| *n == order)
        .map(|(_, g)| *g)
        .ok_or_else(|| {
            Error::Config(format!(
                "unsupported Lebedev order {order}; supported orders are {SUPPORTED_ORDERS:?}"
            ))
        })?;
    let mut unit_points = Vec::with_capacity(order);
    let mut weights = Vec::with_capacity(order);
    for &(code, a, b, w) in gens {
        for p in expand_orbit(code, a, b) {
            unit_points.push(p);
            weights.push(w);
        }
    }
    debug_assert_eq!(unit_points.len(), order);
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    let theta = unit_points.iter().map(|p| p[2].clamp(-1.0, 1.0).acos()).collect();
    let phi = unit_points.iter().map(|p| p[1].atan2(p[0])).collect();
    Ok(LebedevShell { order, degree: degree_of(order).unwrap_or(0), unit_points, theta, phi, weights })
}

fn expand_orbit(code: u8, a: f64, b: f64) -> Vec<[f64; 3]> {
    let signs = |v: [f64; 3]| -> Vec<[f64; 3]> {
        let mut out = Vec::new();
        for sx in [1.0, -1.0] {
            for sy in [1.0, -1.0] {
                for sz in [1.0, -1.0] {
                    let p = [v[0] * sx, v[1] * sy, v[2] * sz];
                    // Zero components only contribute one sign.
                    if (v[0] == 0.0 && sx < 0.0) || (v[1] == 0.0 && sy < 0.0) || (v[2] == 0.0 && sz < 0.0) {
                        continue;
                    }
                    out.push(p);
                }
            }
        }
        out
    };
    let perms = |v: [f64; 3]| -> Vec<[f64; 3]> {
        let all = [
            [v[0], v[1], v[2]],
            [v[0], v[2], v[1]],
            [v[1], v[0], v[2]],
            [v[1], v[2], v[0]],
            [v[2], v[0], v[1]],
            [v[2], v[1], v[0]],
        ];
        let mut out: Vec<[f64; 3]> = Vec::new();
        for p in all {
            if !out.contains(&p) {
                out.push(p);
            }
        }
        out
    };
    let base: [f64; 3] = match code {
        1 => [1.0, 0.0, 0.0],
        2 => [0.0, FRAC_1_SQRT_2, FRAC_1_SQRT_2],
        3 => {
            let s = 1.0 / 3f64.sqrt();
            [s, s, s]
        }
        4 => [a, a, (1.0 - 2.0 * a * a).sqrt()],
        5 => [a, (1.0 - a * a).sqrt(), 0.0],
        6 => [a, b, (1.0 - a * a - b * b).sqrt()],
        _ => unreachable!("unknown Lebedev orbit code {code}"),
    };
    perms(base).into_iter().flat_map(signs).collect()
}
