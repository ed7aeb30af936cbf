use super::*;
use crate::grid::GridPreset;
use crate::scf::{scf_solve, ScfConfig, ScfMode, System, XcFunctional};
use crate::xc::BaseFunctional;

fn ints(g: &Geometry, basis: &str) -> (OneElectron, Eri) {
    let b = load_basis(basis, g).unwrap();
    (one_electron(&b, g).unwrap(), two_electron(&b).unwrap())
}

/// Fock-space operators written out independently of the Slater–Condon code.
mod brute {
    pub fn annihilate(state: u32, p: usize) -> Option<(u32, f64)> {
        if state >> p & 1 == 0 {
            return None;
        }
        let below = (0..p).filter(|&q| state >> q & 1 == 1).count();
        Some((state & !(1 << p), if below % 2 == 0 { 1.0 } else { -1.0 }))
    }

    pub fn create(state: u32, p: usize) -> Option<(u32, f64)> {
        if state >> p & 1 == 1 {
            return None;
        }
        let below = (0..p).filter(|&q| state >> q & 1 == 1).count();
        Some((state | (1 << p), if below % 2 == 0 { 1.0 } else { -1.0 }))
    }

    /// Applies a†_{ops[0]} … in right-to-left order: ops are (orbital, create).
    pub fn string(state: u32, ops: &[(usize, bool)]) -> Option<(u32, f64)> {
        let mut s = state;
        let mut sign = 1.0;
        for &(p, c) in ops.iter().rev() {
            let (t, f) = if c { create(s, p)? } else { annihilate(s, p)? };
            s = t;
            sign *= f;
        }
        Some((s, sign))
    }
}

#[test]
fn slater_condon_matches_second_quantised_hamiltonian() {
    let g = Geometry::h2(1.6);
    let (one, eri) = ints(&g, "6-31g");
    let oi = OrthoIntegrals::new(&one, &eri).unwrap();
    let n = oi.n;
    // Spin orbital 2p = pα, 2p+1 = pβ (different layout from the solver).
    let states: Vec<u32> = (0u32..1 << (2 * n))
        .filter(|s| s.count_ones() == 2 && (0..n).filter(|p| s >> (2 * p) & 1 == 1).count() == 1)
        .collect();
    let index = |s: u32| states.iter().position(|&x| x == s);
    let dim = states.len();
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    for (k, &s) in states.iter().enumerate() {
        for sig in 0..2 {
            for p in 0..n {
                for q in 0..n {
                    if let Some((t, f)) = brute::string(s, &[(2 * p + sig, true), (2 * q + sig, false)]) {
                        h[(index(t).unwrap(), k)] += f * oi.h[(p, q)];
                    }
                }
            }
        }
        for sig in 0..2 {
            for tau in 0..2 {
                for p in 0..n {
                    for q in 0..n {
                        for r in 0..n {
                            for u in 0..n {
                                let ops = [(2 * p + sig, true), (2 * r + tau, true), (2 * u + tau, false), (2 * q + sig, false)];
                                if let Some((t, f)) = brute::string(s, &ops) {
                                    h[(index(t).unwrap(), k)] += 0.5 * f * oi.get(p, q, r, u);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let want = eigh(&h).unwrap().values;
    let got = fci_solve(&one, &eri, 1, 1, 0).unwrap();
    assert_eq!(got.energies.len(), dim);
    for (a, b) in got.energies.iter().zip(want.iter()) {
        assert!((a - (b + oi.e_nn)).abs() < 1e-10, "{a} vs {}", b + oi.e_nn);
    }
}

#[test]
fn minimal_basis_h2_two_by_two() {
    let g = Geometry::h2(1.4);
    let (one, eri) = ints(&g, "sto-3g");
    // σg/σu from the symmetric and antisymmetric combinations.
    let s12 = one.s[(0, 1)];
    let cg = 1.0 / (2.0 * (1.0 + s12)).sqrt();
    let cu = 1.0 / (2.0 * (1.0 - s12)).sqrt();
    let c = [[cg, cg], [cu, -cu]];
    let h = one.core_hamiltonian();
    let hmo = |a: usize, b: usize| (0..2).flat_map(|i| (0..2).map(move |j| (i, j))).map(|(i, j)| c[a][i] * c[b][j] * h[(i, j)]).sum::<f64>();
    let gmo = |a: usize, b: usize, x: usize, y: usize| {
        let mut s = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        s += c[a][i] * c[b][j] * c[x][k] * c[y][l] * eri.get(i, j, k, l);
                    }
                }
            }
        }
        s
    };
    let h11 = 2.0 * hmo(0, 0) + gmo(0, 0, 0, 0);
    let h22 = 2.0 * hmo(1, 1) + gmo(1, 1, 1, 1);
    let h12 = gmo(0, 1, 0, 1);
    let e = 0.5 * (h11 + h22) - (0.25 * (h11 - h22).powi(2) + h12 * h12).sqrt() + one.e_nn;
    let f = fci_solve(&one, &eri, 1, 1, 1).unwrap();
    assert!((f.ground_energy() - e).abs() < 1e-12);
    // Textbook minimal-basis value, four decimals.
    assert!((e + 1.1373).abs() < 5e-5, "{e}");
}

#[test]
fn one_electron_is_core_eigenvalue() {
    let g = Geometry::hydrogen_atom();
    let (one, eri) = ints(&g, "6-31g");
    let f = fci_solve(&one, &eri, 1, 0, 1).unwrap();
    let x = inv_sqrt(&one.s).unwrap();
    let e = eigh(&(&x * one.core_hamiltonian() * &x)).unwrap().values[0];
    assert!((f.ground_energy() - e).abs() < 1e-12);
    // pyscf 6-31G H atom.
    assert!((f.ground_energy() + 0.4982329107).abs() < 1e-8);
    assert!((f.s2[0] - 0.75).abs() < 1e-12);
}

#[test]
fn variational_against_kohn_sham() {
    let sys = System::new(Geometry::h2(1.4), "6-31g", &GridPreset::Coarse).unwrap();
    let xc = XcFunctional::plain(BaseFunctional::Pw92);
    let rks = scf_solve(&sys, &xc, &ScfConfig::new(ScfMode::Rks)).unwrap();
    let uks = scf_solve(&sys, &xc, &ScfConfig::new(ScfMode::Uks)).unwrap();
    let f = fci_solve(&sys.ints, &sys.eri, 1, 1, 1).unwrap();
    assert!(f.ground_energy() < rks.total_energy());
    assert!(f.ground_energy() < uks.total_energy());
    // Hartree–Fock from the same integrals is a mean-field upper bound too.
    let hf = crate_hf(&sys.ints, &sys.eri);
    assert!(f.ground_energy() < hf);
}

fn crate_hf(one: &OneElectron, eri: &Eri) -> f64 {
    let x = inv_sqrt(&one.s).unwrap();
    let h = one.core_hamiltonian();
    let mut d = DMatrix::zeros(h.nrows(), h.ncols());
    let mut e = 0.0;
    for _ in 0..200 {
        let f = &h + eri.coulomb(&d) * 2.0 - eri.exchange(&d);
        e = d.component_mul(&(&h + &f)).sum() + one.e_nn;
        let c = &x * eigh(&(&x * f * &x)).unwrap().vectors;
        d = c.columns(0, 1) * c.columns(0, 1).transpose();
    }
    e
}

#[test]
fn dissociation_limit_is_size_consistent() {
    let e_h = hydrogen_atom_energy("6-31g").unwrap();
    let f = fci_geometry(&Geometry::h2(14.0), "6-31g", 1).unwrap();
    assert!((f.ground_energy() - 2.0 * e_h).abs() < 1e-6);
}

#[test]
fn capacity_is_enforced() {
    assert!(matches!(DeterminantSpace::new(16, 4, 4), Err(Error::Capacity(_))));
    let s = DeterminantSpace::new(8, 2, 2).unwrap();
    assert_eq!(s.dim(), 784);
    assert_eq!(DeterminantSpace::new(4, 1, 1).unwrap().dim(), 16);
}

#[test]
fn spin_labels_and_density() {
    let f = fci_geometry(&Geometry::h2(1.4), "6-31g", 0).unwrap();
    for s in &f.s2 {
        assert!(s.abs() < 1e-6 || (s - 2.0).abs() < 1e-6, "{s}");
    }
    assert!(f.s2[0].abs() < 1e-6);
    assert!(f.s2.iter().any(|s| (s - 2.0).abs() < 1e-6));
    let b = load_basis("6-31g", &Geometry::h2(1.4)).unwrap();
    let s = one_electron(&b, &Geometry::h2(1.4)).unwrap().s;
    for d in &f.density {
        assert!((d.component_mul(&s).sum() - 1.0).abs() < 1e-10);
        assert!((d - d.transpose()).amax() < 1e-12);
    }
    // High-spin pair: every state is a triplet.
    let (one, eri) = ints(&Geometry::h2(1.4), "6-31g");
    let t = fci_solve(&one, &eri, 2, 0, 0).unwrap();
    assert!(t.s2.iter().all(|s| (s - 2.0).abs() < 1e-10));
}

#[test]
fn h4_spin_purity_and_reflection() {
    let a = fci_geometry(&Geometry::h4(40.0, 2.0), "6-31g", 0).unwrap();
    let b = fci_geometry(&Geometry::h4(50.0, 2.0), "6-31g", 0).unwrap();
    for (x, y) in a.energies.iter().zip(&b.energies) {
        assert!((x - y).abs() < 1e-10);
    }
    let sq = fci_geometry(&Geometry::h4(45.0, 2.0), "6-31g", 0).unwrap();
    for f in [&a, &sq] {
        for s in &f.s2 {
            let ss = (0..4).map(|k| k as f64 * (k as f64 + 1.0)).map(|v| (s - v).abs()).fold(f64::INFINITY, f64::min);
            assert!(ss < 1e-6, "⟨S²⟩ = {s}");
        }
    }
}

#[test]
fn dissociation_records() {
    let recs = dissociation_dataset(&[0.5, 1.0, 5.0], "6-31g", 2).unwrap();
    assert_eq!(recs[0].r, 0.7);
    assert_eq!(recs[1].r, 1.4);
    // pyscf FCI, same basis.
    for (r, want) in recs.iter().zip([-0.888442, -1.151679, -0.996586]) {
        assert!((r.e_total - want).abs() < 1e-6, "{} {}", r.e_total, want);
    }
    assert!(recs[1].e_total < recs[0].e_total && recs[1].e_total < recs[2].e_total);
    assert!(recs[1].e_atomization > 0.0);
    assert_eq!(recs[0].root_energies.len(), 2);
    let text = to_jsonl(&recs).unwrap();
    assert_eq!(text.lines().count(), 3);
    let back: DissociationRecord = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(back, recs[0]);
    assert!(dissociation_dataset(&[6.0], "6-31g", 1).is_err());
}

#[test]
fn h4_records() {
    let recs = h4_dataset(&[44.0, 45.0, 46.0], 2.0, "6-31g").unwrap();
    assert!((recs[0].e_total - recs[2].e_total).abs() < 1e-10);
    assert!(recs[1].e_total > recs[0].e_total);
    for r in &recs {
        assert_eq!(r.root_energies.len(), 2);
        assert!(r.e_total >= r.root_energies[0] - 1e-12);
    }
    assert!(h4_dataset(&[39.0], 2.0, "6-31g").is_err());
}
