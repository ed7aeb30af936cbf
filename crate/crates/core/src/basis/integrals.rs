use std::f64::consts::PI;

use nalgebra::DMatrix;

use super::{sq_dist, BasisSet, Contracted};
use crate::error::{Error, Result};
use crate::geometry::{Geometry, Vec3};

/// Largest basis for which the dense n^4 ERI array is built.
pub const MAX_DENSE_BASIS: usize = 32;

/// F0(x) = ∫₀¹ exp(-x t²) dt.
pub fn boys_f0(x: f64) -> f64 {
    if x < 0.1 {
        // Σ (-x)^k / (k! (2k+1))
        let (mut term, mut sum, mut k) = (1.0, 1.0, 0.0);
        loop {
            k += 1.0;
            term *= -x / k;
            let t = term / (2.0 * k + 1.0);
            sum += t;
            if t.abs() < 1e-17 {
                return sum;
            }
        }
    }
    let s = x.sqrt();
    0.5 * (PI / x).sqrt() * libm::erf(s)
}

fn gaussian_product(a: f64, pa: &Vec3, b: f64, pb: &Vec3) -> (f64, Vec3, f64) {
    let p = a + b;
    let center = [(a * pa[0] + b * pb[0]) / p, (a * pa[1] + b * pb[1]) / p, (a * pa[2] + b * pb[2]) / p];
    (p, center, (-a * b / p * sq_dist(pa, pb)).exp())
}

fn contract2(f: &Contracted, g: &Contracted, prim: impl Fn(f64, f64) -> f64) -> f64 {
    let mut s = 0.0;
    for (a, ca) in f.primitives() {
        for (b, cb) in g.primitives() {
            s += ca * cb * prim(a, b);
        }
    }
    s
}

pub fn overlap(f: &Contracted, g: &Contracted) -> f64 {
    let r2 = sq_dist(&f.center, &g.center);
    contract2(f, g, |a, b| {
        let p = a + b;
        (PI / p).powf(1.5) * (-a * b / p * r2).exp()
    })
}

pub fn kinetic(f: &Contracted, g: &Contracted) -> f64 {
    let r2 = sq_dist(&f.center, &g.center);
    contract2(f, g, |a, b| {
        let p = a + b;
        let mu = a * b / p;
        mu * (3.0 - 2.0 * mu * r2) * (PI / p).powf(1.5) * (-mu * r2).exp()
    })
}

/// ⟨f| -Z/|r-C| |g⟩ summed over unit charges at `nuclei`.
pub fn nuclear_attraction(f: &Contracted, g: &Contracted, nuclei: &[Vec3]) -> f64 {
    let mut s = 0.0;
    for (a, ca) in f.primitives() {
        for (b, cb) in g.primitives() {
            let (p, center, k) = gaussian_product(a, &f.center, b, &g.center);
            for c in nuclei {
                s -= ca * cb * 2.0 * PI / p * k * boys_f0(p * sq_dist(&center, c));
            }
        }
    }
    s
}

/// (fg|hk) in chemists' notation.
pub fn eri(f: &Contracted, g: &Contracted, h: &Contracted, k: &Contracted) -> f64 {
    let mut s = 0.0;
    for (a, ca) in f.primitives() {
        for (b, cb) in g.primitives() {
            let (p, pc, kab) = gaussian_product(a, &f.center, b, &g.center);
            for (c, cc) in h.primitives() {
                for (d, cd) in k.primitives() {
                    let (q, qc, kcd) = gaussian_product(c, &h.center, d, &k.center);
                    let pre = 2.0 * PI.powf(2.5) / (p * q * (p + q).sqrt());
                    s += ca * cb * cc * cd * pre * kab * kcd * boys_f0(p * q / (p + q) * sq_dist(&pc, &qc));
                }
            }
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct OneElectron {
    pub s: DMatrix<f64>,
    pub t: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub e_nn: f64,
}

impl OneElectron {
    pub fn core_hamiltonian(&self) -> DMatrix<f64> {
        &self.t + &self.v
    }
}

pub fn one_electron(basis: &BasisSet, geometry: &Geometry) -> Result<OneElectron> {
    geometry.check_distinct()?;
    let n = basis.n_basis();
    let f = &basis.functions;
    let mut s = DMatrix::zeros(n, n);
    let mut t = DMatrix::zeros(n, n);
    let mut v = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let (a, b, c) = (overlap(&f[i], &f[j]), kinetic(&f[i], &f[j]), nuclear_attraction(&f[i], &f[j], &geometry.positions));
            s[(i, j)] = a;
            s[(j, i)] = a;
            t[(i, j)] = b;
            t[(j, i)] = b;
            v[(i, j)] = c;
            v[(j, i)] = c;
        }
    }
    Ok(OneElectron { s, t, v, e_nn: geometry.nuclear_repulsion()? })
}

pub fn eri_index(n: usize, i: usize, j: usize, k: usize, l: usize) -> usize {
    ((i * n + j) * n + k) * n + l
}

/// Dense ERI array (μν|λσ) with exact 8-fold symmetry.
#[derive(Debug, Clone, PartialEq)]
pub struct Eri {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Eri {
    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.data[eri_index(self.n, i, j, k, l)]
    }

    /// J[μν] = Σ (μν|λσ) D[λσ].
    pub fn coulomb(&self, d: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n;
        let n2 = n * n;
        DMatrix::from_fn(n, n, |i, j| {
            let row = &self.data[(i * n + j) * n2..(i * n + j + 1) * n2];
            let mut s = 0.0;
            for k in 0..n {
                for l in 0..n {
                    s += row[k * n + l] * d[(k, l)];
                }
            }
            s
        })
    }

    /// K[μν] = Σ (μλ|νσ) D[λσ].
    pub fn exchange(&self, d: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n;
        DMatrix::from_fn(n, n, |i, j| {
            let mut s = 0.0;
            for k in 0..n {
                for l in 0..n {
                    s += self.get(i, k, j, l) * d[(k, l)];
                }
            }
            s
        })
    }
}

pub fn two_electron(basis: &BasisSet) -> Result<Eri> {
    let n = basis.n_basis();
    if n > MAX_DENSE_BASIS {
        return Err(Error::Capacity(format!("{n} basis functions exceed dense ERI limit {MAX_DENSE_BASIS}")));
    }
    let f = &basis.functions;
    let mut data = vec![0.0; n.pow(4)];
    for i in 0..n {
        for j in 0..=i {
            let ij = i * (i + 1) / 2 + j;
            for k in 0..n {
                for l in 0..=k {
                    if k * (k + 1) / 2 + l > ij {
                        continue;
                    }
                    let v = eri(&f[i], &f[j], &f[k], &f[l]);
                    for (a, b, c, d) in [(i, j, k, l), (j, i, k, l), (i, j, l, k), (j, i, l, k)] {
                        data[eri_index(n, a, b, c, d)] = v;
                        data[eri_index(n, c, d, a, b)] = v;
                    }
                }
            }
        }
    }
    Ok(Eri { n, data })
}

#[cfg(test)]
mod tests {
    use super::super::{load_basis, ShellSpec};
    use super::*;

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn boys_values() {
        assert_eq!(boys_f0(0.0), 1.0);
        for x in [1e-8, 0.05, 0.0999, 0.1, 0.5, 1.0, 3.0, 10.0, 40.0] {
            let q = simpson(|t| (-x * t * t).exp(), 0.0, 1.0, 20_000);
            assert!(((boys_f0(x) - q) / q).abs() < 1e-12, "x={x}");
        }
        let x = 200.0;
        assert!((boys_f0(x) / (0.5 * (PI / x).sqrt()) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn single_primitive_overlap_and_kinetic() {
        let g = Geometry::hydrogen_atom();
        for a in [0.3, 1.0, 7.5] {
            let b = BasisSet::from_shells("x", &[ShellSpec { exponents: vec![a], coefficients: vec![1.0] }], &g).unwrap();
            let one = one_electron(&b, &g).unwrap();
            assert!((one.s[(0, 0)] - 1.0).abs() < 1e-14);
            assert!((one.t[(0, 0)] - 1.5 * a).abs() < 1e-12);
            // <g|-1/r|g> = -2 sqrt(2a/pi)
            assert!((one.v[(0, 0)] + 2.0 * (2.0 * a / PI).sqrt()).abs() < 1e-12);
            // (gg|gg) = 2 sqrt(a/pi)
            let e = two_electron(&b).unwrap();
            assert!((e.get(0, 0, 0, 0) - 2.0 * (a / PI).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn nuclear_repulsion_h2() {
        let g = Geometry::h2(1.4);
        let one = one_electron(&load_basis("6-31G", &g).unwrap(), &g).unwrap();
        assert!((one.e_nn - 0.714_285_714_285_714_3).abs() < 1e-15);
    }

    #[test]
    fn h2_sto3g_matches_textbook_tables() {
        // Minimal-basis H2 at R = 1.4 Bohr, four-decimal textbook values.
        let g = Geometry::h2(1.4);
        let b = load_basis("STO-3G", &g).unwrap();
        let one = one_electron(&b, &g).unwrap();
        let h = one.core_hamiltonian();
        let e = two_electron(&b).unwrap();
        let close = |x: f64, y: f64| (x - y).abs() < 1e-4;
        assert!(close(one.s[(0, 1)], 0.6593));
        assert!(close(one.t[(0, 0)], 0.7600));
        assert!(close(one.t[(0, 1)], 0.2365));
        assert!(close(h[(0, 0)], -1.1204));
        assert!(close(h[(0, 1)], -0.9584));
        assert!(close(e.get(0, 0, 0, 0), 0.7746));
        assert!(close(e.get(0, 0, 1, 1), 0.5697));
        assert!(close(e.get(1, 0, 0, 0), 0.4441));
        assert!(close(e.get(1, 0, 1, 0), 0.2970));
    }

    #[test]
    fn eri_symmetry_is_exact() {
        let g = Geometry::h4(42.0, 2.0);
        let e = two_electron(&load_basis("6-31G", &g).unwrap()).unwrap();
        let n = e.n;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let v = e.get(i, j, k, l);
                        assert_eq!(v, e.get(j, i, k, l));
                        assert_eq!(v, e.get(i, j, l, k));
                        assert_eq!(v, e.get(k, l, i, j));
                    }
                }
            }
        }
    }

    #[test]
    fn overlap_positive_definite_and_symmetric() {
        let g = Geometry::h4(45.0, 2.0);
        let one = one_electron(&load_basis("6-31G", &g).unwrap(), &g).unwrap();
        assert_eq!(one.s, one.s.transpose());
        assert_eq!(one.v, one.v.transpose());
        assert!(one.s.clone().symmetric_eigenvalues().min() > 0.0);
    }

    #[test]
    fn capacity_limit() {
        let g = Geometry::chain(17, 1.4);
        let b = load_basis("6-31G", &g).unwrap();
        assert!(matches!(two_electron(&b), Err(Error::Capacity(_))));
    }

    #[test]
    fn coulomb_and_exchange_contractions() {
        let g = Geometry::h2(1.4);
        let e = two_electron(&load_basis("6-31G", &g).unwrap()).unwrap();
        let d = DMatrix::from_fn(4, 4, |i, j| 0.1 * (i + j) as f64 + if i == j { 0.3 } else { 0.0 });
        let (j, k) = (e.coulomb(&d), e.exchange(&d));
        for a in 0..4 {
            for b in 0..4 {
                let (mut sj, mut sk) = (0.0, 0.0);
                for c in 0..4 {
                    for x in 0..4 {
                        sj += e.get(a, b, c, x) * d[(c, x)];
                        sk += e.get(a, c, b, x) * d[(c, x)];
                    }
                }
                assert!((j[(a, b)] - sj).abs() < 1e-14 && (k[(a, b)] - sk).abs() < 1e-14);
            }
        }
    }
}
