//! Dense full configuration interaction in a small Gaussian basis.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{load_basis, one_electron, two_electron, Eri, OneElectron};
use crate::error::{Error, Result};
use crate::geometry::{Geometry, Vec3};
use crate::scf::linalg::{eigh, inv_sqrt};
use crate::units::H2_EQUILIBRIUM_BOHR;

/// Largest determinant space handled by the dense path.
pub const MAX_DIMENSION: usize = 10_000;

/// Roots closer than this are treated as one degenerate level when spin
/// labels are assigned.
const DEGENERACY: f64 = 1e-8;

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

fn strings(n_orb: usize, n_el: usize) -> Vec<u64> {
    let mut out: Vec<u64> = (0u64..(1u64 << n_orb)).filter(|s| s.count_ones() as usize == n_el).collect();
    out.sort_unstable();
    out
}

/// All (α string, β string) pairs with the given electron counts; determinant
/// `i·n_β_strings + j` pairs α string `i` with β string `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeterminantSpace {
    pub n_orb: usize,
    pub n_alpha: usize,
    pub n_beta: usize,
    pub alpha: Vec<u64>,
    pub beta: Vec<u64>,
}

impl DeterminantSpace {
    pub fn new(n_orb: usize, n_alpha: usize, n_beta: usize) -> Result<Self> {
        if n_orb > 31 || n_alpha > n_orb || n_beta > n_orb {
            return Err(Error::Config(format!("{n_alpha}α/{n_beta}β electrons in {n_orb} orbitals")));
        }
        let dim = binomial(n_orb, n_alpha).saturating_mul(binomial(n_orb, n_beta));
        if dim > MAX_DIMENSION {
            return Err(Error::Capacity(format!("determinant space of dimension {dim} exceeds {MAX_DIMENSION}")));
        }
        Ok(DeterminantSpace { n_orb, n_alpha, n_beta, alpha: strings(n_orb, n_alpha), beta: strings(n_orb, n_beta) })
    }

    pub fn dim(&self) -> usize {
        self.alpha.len() * self.beta.len()
    }

    /// Spin-orbital bitmask: α orbitals in the low bits, β above them.
    fn det(&self, k: usize) -> u64 {
        let nb = self.beta.len();
        self.alpha[k / nb] | (self.beta[k % nb] << self.n_orb)
    }
}

/// Integrals in the Löwdin-orthonormalised basis.
#[derive(Debug, Clone)]
pub struct OrthoIntegrals {
    pub n: usize,
    pub h: DMatrix<f64>,
    /// (pq|rs), dense n⁴.
    pub eri: Vec<f64>,
    pub e_nn: f64,
    /// AO coefficients of the orthonormal orbitals (S^{-1/2}).
    pub c: DMatrix<f64>,
}

impl OrthoIntegrals {
    pub fn new(ints: &OneElectron, eri: &Eri) -> Result<Self> {
        let c = inv_sqrt(&ints.s)?;
        let n = c.ncols();
        let h = c.transpose() * ints.core_hamiltonian() * &c;
        let mut t = vec![0.0; n * n * n * n];
        for (i, x) in t.iter_mut().enumerate() {
            let (a, b, cc, d) = (i / (n * n * n), (i / (n * n)) % n, (i / n) % n, i % n);
            *x = eri.get(a, b, cc, d);
        }
        // One index at a time: n⁵.
        for axis in 0..4 {
            let mut out = vec![0.0; t.len()];
            let stride = n.pow(3 - axis as u32);
            for (i, o) in out.iter_mut().enumerate() {
                let p = (i / stride) % n;
                let base = i - p * stride;
                *o = (0..n).map(|m| c[(m, p)] * t[base + m * stride]).sum();
            }
            t = out;
        }
        Ok(OrthoIntegrals { n, h, eri: t, e_nn: ints.e_nn, c })
    }

    pub fn get(&self, p: usize, q: usize, r: usize, s: usize) -> f64 {
        let n = self.n;
        self.eri[((p * n + q) * n + r) * n + s]
    }

    /// ⟨pq||rs⟩ over spin orbitals (spatial index `x % n`, spin `x / n`).
    fn antisym(&self, p: usize, q: usize, r: usize, s: usize) -> f64 {
        let n = self.n;
        let (sp, sq, sr, ss) = (p / n, q / n, r / n, s / n);
        let (p, q, r, s) = (p % n, q % n, r % n, s % n);
        let direct = if sp == sr && sq == ss { self.get(p, r, q, s) } else { 0.0 };
        let exch = if sp == ss && sq == sr { self.get(p, s, q, r) } else { 0.0 };
        direct - exch
    }

    fn one(&self, p: usize, q: usize) -> f64 {
        let n = self.n;
        if p / n == q / n {
            self.h[(p % n, q % n)]
        } else {
            0.0
        }
    }
}

/// Applies `a_p` (create = false) or `a†_p` to `det`, returning the new
/// determinant and sign, or `None` if the result vanishes.
fn apply(det: u64, p: usize, create: bool) -> Option<(u64, f64)> {
    let bit = 1u64 << p;
    if (det & bit != 0) == create {
        return None;
    }
    let sign = if (det & (bit - 1)).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
    Some((det ^ bit, sign))
}

fn bits(mut x: u64) -> impl Iterator<Item = usize> {
    std::iter::from_fn(move || {
        if x == 0 {
            return None;
        }
        let p = x.trailing_zeros() as usize;
        x &= x - 1;
        Some(p)
    })
}

/// ⟨bra|H|ket⟩ (electronic part) by the Slater–Condon rules.
fn matrix_element(ints: &OrthoIntegrals, bra: u64, ket: u64) -> f64 {
    let diff = bra ^ ket;
    match diff.count_ones() {
        0 => {
            let occ: Vec<usize> = bits(ket).collect();
            let mut e = 0.0;
            for (k, &i) in occ.iter().enumerate() {
                e += ints.one(i, i);
                for &j in &occ[..k] {
                    e += ints.antisym(i, j, i, j);
                }
            }
            e
        }
        2 => {
            let i = (ket & diff).trailing_zeros() as usize;
            let a = (bra & diff).trailing_zeros() as usize;
            let (d1, s1) = apply(ket, i, false).expect("occupied");
            let (_, s2) = apply(d1, a, true).expect("empty");
            let mut v = ints.one(a, i);
            for j in bits(ket & bra) {
                v += ints.antisym(a, j, i, j);
            }
            s1 * s2 * v
        }
        4 => {
            let mut holes = bits(ket & diff);
            let mut parts = bits(bra & diff);
            let (i, j) = (holes.next().unwrap(), holes.next().unwrap());
            let (a, b) = (parts.next().unwrap(), parts.next().unwrap());
            // a†_a a†_b a_j a_i |ket⟩
            let (d, s1) = apply(ket, i, false).unwrap();
            let (d, s2) = apply(d, j, false).unwrap();
            let (d, s3) = apply(d, b, true).unwrap();
            let (_, s4) = apply(d, a, true).unwrap();
            s1 * s2 * s3 * s4 * ints.antisym(a, b, i, j)
        }
        _ => 0.0,
    }
}

/// Electronic Hamiltonian over the determinant space.
pub fn hamiltonian(space: &DeterminantSpace, ints: &OrthoIntegrals) -> Result<DMatrix<f64>> {
    if space.n_orb != ints.n {
        return Err(Error::dim("fci_hamiltonian", format!("space has {} orbitals, integrals {}", space.n_orb, ints.n)));
    }
    let dim = space.dim();
    let dets: Vec<u64> = (0..dim).map(|k| space.det(k)).collect();
    let mut h = DMatrix::zeros(dim, dim);
    for a in 0..dim {
        for b in 0..=a {
            let v = matrix_element(ints, dets[a], dets[b]);
            h[(a, b)] = v;
            h[(b, a)] = v;
        }
    }
    Ok(h)
}

/// `S₊|ψ⟩` as a sparse map over determinants.
fn raise(space: &DeterminantSpace, v: &[f64]) -> BTreeMap<u64, f64> {
    let n = space.n_orb;
    let mut out = BTreeMap::new();
    for (k, &c) in v.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let det = space.det(k);
        for p in 0..n {
            // a†_{pα} a_{pβ}
            if let Some((d, s1)) = apply(det, p + n, false) {
                if let Some((d, s2)) = apply(d, p, true) {
                    *out.entry(d).or_insert(0.0) += s1 * s2 * c;
                }
            }
        }
    }
    out
}

fn overlap(a: &BTreeMap<u64, f64>, b: &BTreeMap<u64, f64>) -> f64 {
    a.iter().filter_map(|(k, x)| b.get(k).map(|y| x * y)).sum()
}

/// ⟨ψ_k|S²|ψ_l⟩ for the given columns, using S² = S₋S₊ + S_z(S_z + 1).
fn s2_matrix(space: &DeterminantSpace, vecs: &[Vec<f64>]) -> DMatrix<f64> {
    let sz = (space.n_alpha as f64 - space.n_beta as f64) / 2.0;
    let raised: Vec<_> = vecs.iter().map(|v| raise(space, v)).collect();
    DMatrix::from_fn(vecs.len(), vecs.len(), |k, l| {
        let dotv: f64 = vecs[k].iter().zip(&vecs[l]).map(|(a, b)| a * b).sum();
        overlap(&raised[k], &raised[l]) + sz * (sz + 1.0) * dotv
    })
}

/// Spin-resolved one-particle density matrices in the orthonormal basis.
fn rdm1(space: &DeterminantSpace, v: &[f64]) -> [DMatrix<f64>; 2] {
    let n = space.n_orb;
    let index: BTreeMap<u64, usize> = (0..space.dim()).map(|k| (space.det(k), k)).collect();
    let mut g = [DMatrix::zeros(n, n), DMatrix::zeros(n, n)];
    for (k, &c) in v.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let det = space.det(k);
        for (spin, gs) in g.iter_mut().enumerate() {
            for q in 0..n {
                let Some((d, s1)) = apply(det, q + spin * n, false) else { continue };
                for p in 0..n {
                    let Some((d2, s2)) = apply(d, p + spin * n, true) else { continue };
                    if let Some(&m) = index.get(&d2) {
                        gs[(p, q)] += v[m] * s1 * s2 * c;
                    }
                }
            }
        }
    }
    g
}

#[derive(Debug, Clone)]
pub struct FciResult {
    pub space: DeterminantSpace,
    /// Total energies (electronic + nuclear), ascending.
    pub energies: Vec<f64>,
    pub s2: Vec<f64>,
    /// Eigenvectors as columns (one per reported root).
    pub vectors: DMatrix<f64>,
    /// Ground-state spin density matrices in the AO basis.
    pub density: [DMatrix<f64>; 2],
}

impl FciResult {
    pub fn ground_energy(&self) -> f64 {
        self.energies[0]
    }

    /// Lowest root with ⟨S²⟩ below 1e-3.
    pub fn singlet(&self) -> Option<(usize, f64)> {
        self.s2.iter().position(|&s| s < 1e-3).map(|k| (k, self.energies[k]))
    }
}

/// Lowest `n_roots` FCI states (`0` requests all of them).
pub fn fci_solve(ints: &OneElectron, eri: &Eri, n_alpha: usize, n_beta: usize, n_roots: usize) -> Result<FciResult> {
    let oi = OrthoIntegrals::new(ints, eri)?;
    let space = DeterminantSpace::new(oi.n, n_alpha, n_beta)?;
    let h = hamiltonian(&space, &oi)?;
    let eig = eigh(&h)?;
    let dim = space.dim();
    let take = if n_roots == 0 { dim } else { n_roots.min(dim) };
    let mut vectors = eig.vectors.clone();
    let mut s2 = vec![0.0; dim];
    // Resolve spin within each degenerate block before truncating.
    let mut start = 0;
    while start < take {
        let mut end = start + 1;
        while end < dim && eig.values[end] - eig.values[start] < DEGENERACY {
            end += 1;
        }
        let cols: Vec<Vec<f64>> = (start..end).map(|k| vectors.column(k).iter().copied().collect()).collect();
        let m = s2_matrix(&space, &cols);
        if end - start == 1 {
            s2[start] = m[(0, 0)];
        } else {
            let se = eigh(&m)?;
            let block = DMatrix::from_fn(dim, end - start, |r, c| cols[c][r]) * &se.vectors;
            for c in 0..end - start {
                vectors.set_column(start + c, &block.column(c));
                s2[start + c] = se.values[c];
            }
        }
        start = end;
    }
    s2.truncate(take);
    let energies = eig.values.iter().take(take).map(|e| e + oi.e_nn).collect();
    let v0: Vec<f64> = vectors.column(0).iter().copied().collect();
    let g = rdm1(&space, &v0);
    let density = g.map(|gs| &oi.c * gs * oi.c.transpose());
    Ok(FciResult { space, energies, s2, vectors: vectors.columns(0, take).into_owned(), density })
}

/// FCI for a geometry in a named basis, with the spin state from the
/// geometry's charge and multiplicity.
pub fn fci_geometry(geometry: &Geometry, basis: &str, n_roots: usize) -> Result<FciResult> {
    let (na, nb) = geometry.spin_counts()?;
    let b = load_basis(basis, geometry)?;
    fci_solve(&one_electron(&b, geometry)?, &two_electron(&b)?, na, nb, n_roots)
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissociationRecord {
    pub s: f64,
    pub r: f64,
    pub geometry: Vec<Vec3>,
    pub e_total: f64,
    pub e_atomization: f64,
    pub root_energies: Vec<f64>,
    pub s2: Vec<f64>,
    pub density_alpha: Vec<Vec<f64>>,
    pub density_beta: Vec<Vec<f64>>,
}

/// FCI energy of one H atom in `basis`.
pub fn hydrogen_atom_energy(basis: &str) -> Result<f64> {
    Ok(fci_geometry(&Geometry::hydrogen_atom(), basis, 1)?.ground_energy())
}

pub fn dissociation_dataset(s_values: &[f64], basis: &str, n_roots: usize) -> Result<Vec<DissociationRecord>> {
    let e_h = hydrogen_atom_energy(basis)?;
    s_values
        .iter()
        .map(|&s| {
            if !(0.5..=5.0).contains(&s) {
                return Err(Error::Config(format!("scale factor {s} outside [0.5, 5]")));
            }
            let g = Geometry::h2_scaled(s);
            let f = fci_geometry(&g, basis, n_roots)?;
            Ok(DissociationRecord {
                s,
                r: s * H2_EQUILIBRIUM_BOHR,
                geometry: g.positions.clone(),
                e_total: f.ground_energy(),
                e_atomization: 2.0 * e_h - f.ground_energy(),
                root_energies: f.energies.clone(),
                s2: f.s2.clone(),
                density_alpha: matrix_rows(&f.density[0]),
                density_beta: matrix_rows(&f.density[1]),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H4Record {
    pub theta: f64,
    pub r: f64,
    pub geometry: Vec<Vec3>,
    /// Tracked singlet energy.
    pub e_total: f64,
    pub e_atomization: f64,
    /// Two lowest roots.
    pub root_energies: Vec<f64>,
    pub s2: Vec<f64>,
    pub singlet_root: usize,
    pub lowest_is_triplet: bool,
    /// Lowest root with ⟨S²⟩ ≈ 2.
    pub e_triplet: Option<f64>,
}

pub fn h4_dataset(thetas: &[f64], r: f64, basis: &str) -> Result<Vec<H4Record>> {
    let e_h = hydrogen_atom_energy(basis)?;
    thetas
        .iter()
        .map(|&theta| {
            if !(40.0..=50.0).contains(&theta) {
                return Err(Error::Config(format!("θ = {theta}° outside [40°, 50°]")));
            }
            let g = Geometry::h4(theta, r);
            let f = fci_geometry(&g, basis, 0)?;
            let (k, e) = f.singlet().ok_or_else(|| Error::numerical("h4_dataset", "no singlet root"))?;
            Ok(H4Record {
                theta,
                r,
                geometry: g.positions.clone(),
                e_total: e,
                e_atomization: 4.0 * e_h - e,
                root_energies: f.energies[..2].to_vec(),
                s2: f.s2[..2].to_vec(),
                singlet_root: k,
                lowest_is_triplet: (f.s2[0] - 2.0).abs() < 1e-3,
                e_triplet: f.energies.iter().zip(&f.s2).find(|(_, s)| (*s - 2.0).abs() < 1e-3).map(|(e, _)| *e),
            })
        })
        .collect()
}

/// One JSON object per line.
pub fn to_jsonl<T: Serialize>(records: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
