use super::*;
use crate::nn::{GraphInputs, Model, ModelConfig, Variant};
use crate::xc::{pw92_lda, DensityPoint};
use crate::graph::GraphConfig;
use crate::xc::BaseFunctional;
use rand::{Rng, SeedableRng};

fn h2(r: f64) -> System {
    System::new(Geometry::h2(r), "6-31g", &GridPreset::Coarse).unwrap()
}

fn h_atom() -> System {
    System::new(Geometry::hydrogen_atom(), "6-31g", &GridPreset::Coarse).unwrap()
}

fn pw92() -> XcFunctional<'static> {
    XcFunctional::plain(BaseFunctional::Pw92)
}

/// Closed-shell LDA SCF written from scratch: Cholesky orthogonalisation,
/// damped plain iteration, analytic Slater + PW92 potentials.
mod textbook {
    use nalgebra::DMatrix;

    const A: f64 = 0.0310907;
    const A1: f64 = 0.21370;
    const B: [f64; 4] = [7.5957, 3.5876, 1.6382, 0.49294];

    /// (energy per volume, potential) of unpolarised Slater + PW92.
    fn lda(n: f64) -> (f64, f64) {
        if n <= 1e-12 {
            return (0.0, 0.0);
        }
        let cx = 0.75 * (3.0 / std::f64::consts::PI).powf(1.0 / 3.0);
        let ex = -cx * n.powf(4.0 / 3.0);
        let vx = -(4.0 / 3.0) * cx * n.powf(1.0 / 3.0);
        let rs = (3.0 / (4.0 * std::f64::consts::PI * n)).powf(1.0 / 3.0);
        let q0 = -2.0 * A * (1.0 + A1 * rs);
        let q1 = 2.0 * A * (B[0] * rs.sqrt() + B[1] * rs + B[2] * rs.powf(1.5) + B[3] * rs * rs);
        let q1p = A * (B[0] / rs.sqrt() + 2.0 * B[1] + 3.0 * B[2] * rs.sqrt() + 4.0 * B[3] * rs);
        let l = (1.0 + 1.0 / q1).ln();
        let ec = q0 * l;
        let dec = -2.0 * A * A1 * l - q0 * q1p / (q1 * q1 + q1);
        (ex + n * ec, vx + ec - rs / 3.0 * dec)
    }

    pub fn energy(sys: &super::System) -> f64 {
        let nb = sys.n_basis();
        let h = &sys.ints.t + &sys.ints.v;
        let linv = sys.ints.s.clone().cholesky().unwrap().l().try_inverse().unwrap();
        let phi = &sys.phi.values;
        let w = &sys.grid.weights;
        let mut p = DMatrix::<f64>::zeros(nb, nb);
        let mut e_old = 0.0;
        for _ in 0..500 {
            let n: Vec<f64> = (0..phi.nrows()).map(|g| (phi.row(g) * &p * phi.row(g).transpose())[(0, 0)]).collect();
            let mut vxc = DMatrix::zeros(nb, nb);
            let mut exc = 0.0;
            for g in 0..n.len() {
                let (e, v) = lda(n[g]);
                exc += w[g] * e;
                vxc += phi.row(g).transpose() * phi.row(g) * (w[g] * v);
            }
            let mut j = DMatrix::zeros(nb, nb);
            for a in 0..nb {
                for b in 0..nb {
                    for c in 0..nb {
                        for d in 0..nb {
                            j[(a, b)] += sys.eri.get(a, b, c, d) * p[(c, d)];
                        }
                    }
                }
            }
            let e = p.component_mul(&h).sum() + 0.5 * p.component_mul(&j).sum() + exc + sys.ints.e_nn;
            let f = &h + &j + vxc;
            let eig = (&linv * f * linv.transpose()).symmetric_eigen();
            let k = eig.eigenvalues.imin();
            let c = linv.transpose() * eig.eigenvectors.column(k);
            let p_new = &c * c.transpose() * 2.0;
            p = &p * 0.5 + p_new * 0.5;
            if (e - e_old).abs() < 1e-12 {
                return e;
            }
            e_old = e;
        }
        panic!("textbook SCF did not converge");
    }
}

#[test]
fn h_atom_uks_bounded_and_reproducible() {
    let sys = h_atom();
    let cfg = ScfConfig::new(ScfMode::Uks);
    let a = scf_solve(&sys, &pw92(), &cfg).unwrap();
    let b = scf_solve(&sys, &pw92(), &cfg).unwrap();
    assert!(a.converged);
    let e = a.total_energy();
    assert!(e < 0.0 && e > -1.0, "{e}");
    assert_eq!(e.to_bits(), b.total_energy().to_bits());
    assert_eq!(a.residuals, b.residuals);
}

#[test]
fn h2_rks_matches_textbook_implementation() {
    let sys = h2(1.4);
    let s = scf_solve(&sys, &pw92(), &ScfConfig::new(ScfMode::Rks)).unwrap();
    assert!(s.converged);
    let oracle = textbook::energy(&sys);
    assert!((s.total_energy() - oracle).abs() < 1e-6, "{} vs {oracle}", s.total_energy());
}

#[test]
fn state_invariants() {
    let sys = h2(1.4);
    for mode in [ScfMode::Rks, ScfMode::Uks] {
        let s = scf_solve(&sys, &pw92(), &ScfConfig::new(mode)).unwrap();
        let e = &s.energies;
        assert_eq!(e.total, e.kinetic + e.external + e.hartree + e.xc + e.nuclear);
        for (d, n) in s.density.iter().zip([sys.n_alpha, sys.n_beta]) {
            assert!((dot(d, &sys.ints.s) - n as f64).abs() < 1e-8);
            assert!((d - d.transpose()).amax() < 1e-14);
            let m = &sys.x * d * &sys.x;
            assert!(eigh(&m).unwrap().values.iter().all(|&v| v > -1e-10));
        }
        assert_eq!(s.residuals.len(), s.iterations);
        assert!(*s.residuals.last().unwrap() < 1e-7);
    }
}

#[test]
fn restricted_mode_has_zero_polarisation() {
    let sys = h2(2.0);
    let s = scf_solve(&sys, &pw92(), &ScfConfig::new(ScfMode::Rks)).unwrap();
    let (a, b) = (sys.phi.density(&s.density[0]), sys.phi.density(&s.density[1]));
    assert_eq!(a, b);
}

#[test]
fn stationarity_after_convergence() {
    let sys = h2(1.4);
    let cfg = ScfConfig::new(ScfMode::Rks);
    let s = scf_solve(&sys, &pw92(), &cfg).unwrap();
    let e = next_iteration_energy(&sys, &pw92(), &s).unwrap();
    assert!((e - s.total_energy()).abs() < 10.0 * cfg.threshold);
}

#[test]
fn diis_and_plain_mixing_agree() {
    let sys = h2(1.4);
    let a = scf_solve(&sys, &pw92(), &ScfConfig::new(ScfMode::Rks)).unwrap();
    // Damped steps understate the distance to the fixed point, so tighten.
    let cfg = ScfConfig { diis_depth: 0, threshold: 1e-10, ..ScfConfig::new(ScfMode::Rks) };
    let b = scf_solve(&sys, &pw92(), &cfg).unwrap();
    assert!(b.converged);
    assert!((a.total_energy() - b.total_energy()).abs() < 1e-9, "{} {}", a.total_energy(), b.total_energy());
    assert!(b.iterations > a.iterations);
}

#[test]
fn warm_start_converges_immediately() {
    let sys = h2(1.4);
    let cfg = ScfConfig::new(ScfMode::Rks);
    let a = scf_solve(&sys, &pw92(), &cfg).unwrap();
    let b = scf_solve_from(&sys, &pw92(), &cfg, Some(&a.density)).unwrap();
    assert!(b.iterations <= 2);
    assert!((a.total_energy() - b.total_energy()).abs() < 1e-9);
}

#[test]
fn exphormer_at_zero_beta_follows_base_trajectory() {
    let sys = h2(1.4).with_graph(&GraphConfig::default()).unwrap();
    let model = Model::init(ModelConfig::new(Variant::ExphormerFull), 3).unwrap();
    assert_eq!(model.beta(), 0.0);
    let xc = XcFunctional::learned(BaseFunctional::Pw92, &model, &sys).unwrap();
    let cfg = ScfConfig::new(ScfMode::Rks);
    let a = scf_solve(&sys, &pw92(), &cfg).unwrap();
    let b = scf_solve(&sys, &xc, &cfg).unwrap();
    assert_eq!(a.energy_history.len(), b.energy_history.len());
    for (x, y) in a.energy_history.iter().zip(&b.energy_history) {
        assert!((x - y).abs() < 1e-10);
    }
    assert!((a.total_energy() - b.total_energy()).abs() < 1e-10);
}

#[test]
fn symmetry_breaking_lowers_stretched_energy() {
    let sys = h2(7.0);
    let atom = scf_solve(&h_atom(), &pw92(), &ScfConfig::new(ScfMode::Uks)).unwrap();
    let rks = scf_solve(&sys, &pw92(), &ScfConfig::new(ScfMode::Rks)).unwrap();
    let cfg = ScfConfig { break_symmetry: true, ..ScfConfig::new(ScfMode::Uks) };
    let uks = scf_solve(&sys, &pw92(), &cfg).unwrap();
    assert!(rks.converged && uks.converged);
    assert!(uks.total_energy() < rks.total_energy() - 1e-3, "{} vs {}", uks.total_energy(), rks.total_energy());
    // Broken-symmetry state dissociates to two neutral atoms, not H⁺H⁻.
    assert!((uks.total_energy() - 2.0 * atom.total_energy()).abs() < 0.01);
}

#[test]
fn guess_rotation_properties() {
    let sys = h2(3.0);
    let base = core_guess(&sys, &ScfConfig::new(ScfMode::Uks)).unwrap();
    let zero = ScfConfig { break_symmetry: true, mixing_angle_deg: 0.0, ..ScfConfig::new(ScfMode::Uks) };
    let g0 = core_guess(&sys, &zero).unwrap();
    assert_eq!(g0, base);
    let rot = ScfConfig { break_symmetry: true, ..ScfConfig::new(ScfMode::Uks) };
    let g = core_guess(&sys, &rot).unwrap();
    assert!((&g[0] - &base[0]).amax() > 1e-3);
    assert_eq!(g[1], base[1]);
    let s = &sys.ints.s;
    assert!((&g[0] * s * &g[0] - &g[0]).amax() < 1e-12);
    assert!((dot(&g[0], s) - 1.0).abs() < 1e-12);
}

#[test]
fn atomization_conventions() {
    let atom = scf_solve(&h_atom(), &pw92(), &ScfConfig::new(ScfMode::Uks)).unwrap();
    let single = atomization_energy(&atom, &[&atom]);
    assert_eq!(single.energy, 0.0);
    assert!(single.converged);
    let mol = scf_solve(&h2(1.4), &pw92(), &ScfConfig::new(ScfMode::Rks)).unwrap();
    let a = atomization_energy(&mol, &[&atom, &atom]);
    assert!(a.energy > 0.0 && a.converged);
    let mut stalled = mol.clone();
    stalled.converged = false;
    assert!(!atomization_energy(&stalled, &[&atom, &atom]).converged);
}

#[test]
fn bad_configs_are_rejected() {
    let sys = h_atom();
    let cfg = ScfConfig { threshold: 0.0, ..ScfConfig::new(ScfMode::Uks) };
    assert!(matches!(scf_solve(&sys, &pw92(), &cfg), Err(Error::Config(_))));
    assert!(matches!(scf_solve(&sys, &pw92(), &ScfConfig::new(ScfMode::Rks)), Err(Error::Config(_))));
    let model = Model::init(ModelConfig::new(Variant::ExphormerFull), 0).unwrap();
    assert!(XcFunctional::learned(BaseFunctional::Pw92, &model, &sys).is_err());
    let start = core_guess(&sys, &ScfConfig::new(ScfMode::Uks)).unwrap();
    assert!(differentiable_run(&sys, &pw92(), &ScfConfig::new(ScfMode::Uks), &start, 0, 1.0, None).is_err());
}

#[test]
fn unrolled_beta_gradient_is_direct_term() {
    let sys = h2(1.4).with_graph(&GraphConfig::default()).unwrap();
    let cfg = ScfConfig::new(ScfMode::Rks);
    let conv = scf_solve(&sys, &pw92(), &cfg).unwrap();
    let model = Model::init(ModelConfig::new(Variant::ExphormerFull), 5).unwrap();
    let xc = XcFunctional::learned(BaseFunctional::Pw92, &model, &sys).unwrap();
    let run = differentiable_run(&sys, &xc, &cfg, &conv.density, 1, 1.0, None).unwrap();
    let ib = model.params.index("beta").unwrap();
    let got = run.grad[ib].data[0];

    let d = &run.density;
    let (na, nb) = (sys.phi.density(&d[0]), sys.phi.density(&d[1]));
    let points: Vec<DensityPoint> = na.iter().zip(&nb).map(|(&a, &b)| DensityPoint { n_up: a, n_dn: b, ..Default::default() }).collect();
    let eps = pw92_lda(&points).unwrap();
    let n: Vec<f64> = na.iter().zip(&nb).map(|(a, b)| a + b).collect();
    let inputs = GraphInputs::new(sys.graph.as_ref().unwrap(), &model.config).unwrap();
    let f = model.evaluate(&n, &vec![0.0; n.len()], &inputs).unwrap();
    let want: f64 = (0..n.len()).map(|g| sys.weights[g] * eps[g] * n[g] * f[g]).sum();
    assert!((got - want).abs() < 1e-6 * want.abs(), "{got} vs {want}");
}

fn fd_check(sys: &System, model: &Model, base: BaseFunctional, cfg: &ScfConfig, start: &[DMatrix<f64>; 2], unroll: usize, target: Option<DensityTarget>, seed: u64) {
    let xc = XcFunctional::learned(base, model, sys).unwrap();
    let run = differentiable_run(sys, &xc, cfg, start, unroll, 1.0, target).unwrap();
    let loss = |m: &Model| {
        let xc = XcFunctional::learned(base, m, sys).unwrap();
        let r = differentiable_run(sys, &xc, cfg, start, unroll, 1.0, target).unwrap();
        r.energy + r.aux
    };
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    let total = model.params.n_scalars();
    let mut picks: Vec<usize> = (0..5).map(|_| rng.gen_range(0..total)).collect();
    picks.push(total - 1);
    for k in picks {
        let (i, o) = model.params.locate(k).unwrap();
        let h = 1e-5;
        let mut mp = model.clone();
        mp.params.values_mut()[i].data[o] += h;
        let mut mm = model.clone();
        mm.params.values_mut()[i].data[o] -= h;
        let fd = (loss(&mp) - loss(&mm)) / (2.0 * h);
        let g = run.grad[i].data[o];
        let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
        assert!(rel < 1e-4, "{}[{o}]: tape {g:e} fd {fd:e} rel {rel:e}", model.params.names()[i]);
    }
}

fn perturbed(model: &mut Model, beta: f64) {
    model.params.get_mut("beta").unwrap().data[0] = beta;
    let b = model.params.get_mut("readout.b").unwrap();
    b.data[0] = 0.3;
}

#[test]
fn unrolled_gradient_matches_finite_differences() {
    let sys = h2(1.4).with_graph(&GraphConfig::default()).unwrap();
    let cfg = ScfConfig::new(ScfMode::Rks);
    let conv = scf_solve(&sys, &pw92(), &cfg).unwrap();
    let mut model = Model::init(ModelConfig::new(Variant::ExphormerFull), 11).unwrap();
    perturbed(&mut model, 0.2);
    fd_check(&sys, &model, BaseFunctional::Pw92, &cfg, &conv.density, 1, None, 1);
}

#[test]
fn multi_step_uks_gga_gradient_with_density_target() {
    let sys = h2(2.5);
    let cfg = ScfConfig { break_symmetry: true, mixing: 0.5, ..ScfConfig::new(ScfMode::Uks) };
    let start = core_guess(&sys, &cfg).unwrap();
    let reference = sys.density_on_grid(&scf_solve(&sys, &pw92(), &ScfConfig::new(ScfMode::Rks)).unwrap().density);
    let mut model = Model::init(ModelConfig::new(Variant::NnLda), 2).unwrap();
    perturbed(&mut model, -0.3);
    let target = DensityTarget { density: &reference, weight: 2.0 };
    fd_check(&sys, &model, BaseFunctional::Pbe, &cfg, &start, 3, Some(target), 2);
}

