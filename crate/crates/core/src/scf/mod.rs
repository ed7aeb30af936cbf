//! Restricted and unrestricted Kohn–Sham SCF with DIIS, plus the
//! differentiable unrolled variant used for training.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{basis_on_grid, load_basis, one_electron, two_electron, BasisOnGrid, BasisSet, Eri, OneElectron};
use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::graph::{assemble, ElectronGraph, GraphConfig};
use crate::grid::{build_grid, GridPreset, MolecularGrid};

mod diff;
mod diis;
pub mod linalg;
mod potential;

pub use diff::{differentiable_run, energy_gradient, DensityTarget, DiffRun};
pub use potential::{model_inputs, xc_hvp, xc_param_gradient, xc_potential, XcFunctional, XcHvp, XcPotential};

use linalg::{dot, eigh, inv_sqrt, projector, Eigh};

/// |E| above this (Hartree) aborts the SCF as diverged.
pub const DIVERGENCE_ENERGY: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScfMode {
    Rks,
    Uks,
}

impl ScfMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rks" => Ok(ScfMode::Rks),
            "uks" => Ok(ScfMode::Uks),
            _ => Err(Error::Config(format!("unknown SCF mode '{s}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScfMode::Rks => "rks",
            ScfMode::Uks => "uks",
        }
    }
}

fn d_max_iter() -> usize {
    150
}
fn d_depth() -> usize {
    8
}
fn d_mixing() -> f64 {
    0.3
}
fn d_threshold() -> f64 {
    1e-7
}
fn d_angle() -> f64 {
    30.0
}
fn d_diis_start() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScfConfig {
    pub mode: ScfMode,
    #[serde(default = "d_max_iter")]
    pub max_iterations: usize,
    #[serde(default = "d_depth")]
    pub diis_depth: usize,
    /// Linear density mixing used on DIIS breakdown and in unrolled runs.
    #[serde(default = "d_mixing")]
    pub mixing: f64,
    /// Convergence threshold on the Frobenius norm of the density change.
    #[serde(default = "d_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub break_symmetry: bool,
    /// HOMO/LUMO rotation applied to the α guess when breaking symmetry.
    #[serde(default = "d_angle")]
    pub mixing_angle_deg: f64,
    /// DIIS takes over from linear mixing once the largest commutator
    /// element falls below this.
    #[serde(default = "d_diis_start")]
    pub diis_start: f64,
}

impl ScfConfig {
    pub fn new(mode: ScfMode) -> Self {
        ScfConfig {
            mode,
            max_iterations: d_max_iter(),
            diis_depth: d_depth(),
            mixing: d_mixing(),
            threshold: d_threshold(),
            break_symmetry: false,
            mixing_angle_deg: d_angle(),
            diis_start: d_diis_start(),
        }
    }

    /// Looser threshold used inside training loops.
    pub fn training(mode: ScfMode) -> Self {
        ScfConfig { threshold: 1e-5, ..Self::new(mode) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0) || !(self.mixing > 0.0 && self.mixing <= 1.0) || self.max_iterations == 0 {
            return Err(Error::Config(format!("invalid SCF settings: threshold {}, mixing {}, max_iterations {}", self.threshold, self.mixing, self.max_iterations)));
        }
        Ok(())
    }
}

/// Everything about one geometry that does not depend on the density.
#[derive(Debug, Clone)]
pub struct System {
    pub geometry: Geometry,
    pub basis: BasisSet,
    pub ints: OneElectron,
    pub hcore: DMatrix<f64>,
    pub eri: Eri,
    pub grid: MolecularGrid,
    pub phi: BasisOnGrid,
    pub weights: Arc<Vec<f64>>,
    /// Löwdin S^{-1/2}.
    pub x: DMatrix<f64>,
    pub n_alpha: usize,
    pub n_beta: usize,
    pub graph: Option<ElectronGraph>,
}

impl System {
    pub fn new(geometry: Geometry, basis: &str, grid: &GridPreset) -> Result<Self> {
        let (n_alpha, n_beta) = geometry.spin_counts()?;
        let basis = load_basis(basis, &geometry)?;
        if n_alpha > basis.n_basis() {
            return Err(Error::Config(format!("{n_alpha} α electrons do not fit in {} orbitals", basis.n_basis())));
        }
        let ints = one_electron(&basis, &geometry)?;
        let eri = two_electron(&basis)?;
        let grid = build_grid(&geometry, grid)?;
        let phi = basis_on_grid(&basis, &grid);
        let x = inv_sqrt(&ints.s)?;
        let hcore = ints.core_hamiltonian();
        let weights = Arc::new(grid.weights.clone());
        Ok(System { geometry, basis, ints, hcore, eri, grid, phi, weights, x, n_alpha, n_beta, graph: None })
    }

    pub fn with_graph(mut self, cfg: &GraphConfig) -> Result<Self> {
        self.graph = Some(assemble(&self.grid, cfg)?);
        Ok(self)
    }

    pub fn n_basis(&self) -> usize {
        self.basis.n_basis()
    }

    fn occupations(&self) -> [usize; 2] {
        [self.n_alpha, self.n_beta]
    }

    /// Orbital energies and AO coefficients of `F C = S C ε`, with the
    /// orthonormal-basis eigenpairs.
    pub(crate) fn diagonalize(&self, fock: &DMatrix<f64>) -> Result<(Eigh, DMatrix<f64>)> {
        let e = eigh(&(&self.x * fock * &self.x))?;
        let c = &self.x * &e.vectors;
        Ok((e, c))
    }

    /// Total density on the grid.
    pub fn density_on_grid(&self, d: &[DMatrix<f64>; 2]) -> Vec<f64> {
        self.phi.density(&(&d[0] + &d[1]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Energies {
    pub total: f64,
    pub kinetic: f64,
    pub external: f64,
    pub hartree: f64,
    pub xc: f64,
    pub nuclear: f64,
}

/// Result of an SCF run; non-converged runs are reported, not discarded.
#[derive(Debug, Clone)]
pub struct ScfState {
    pub mode: ScfMode,
    pub density: [DMatrix<f64>; 2],
    pub coefficients: [DMatrix<f64>; 2],
    pub orbital_energies: [DVector<f64>; 2],
    pub energies: Energies,
    pub converged: bool,
    pub iterations: usize,
    pub residuals: Vec<f64>,
    pub energy_history: Vec<f64>,
    pub diis_fallbacks: usize,
}

impl ScfState {
    pub fn total_energy(&self) -> f64 {
        self.energies.total
    }

    /// Summary without matrices.
    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "mode": self.mode,
            "converged": self.converged,
            "iterations": self.iterations,
            "energies": self.energies,
            "residuals": self.residuals,
            "energy_history": self.energy_history,
            "diis_fallbacks": self.diis_fallbacks,
            "orbital_energies": [self.orbital_energies[0].as_slice(), self.orbital_energies[1].as_slice()],
        })
    }
}

pub(crate) struct FockBuild {
    pub fock: [DMatrix<f64>; 2],
    pub energies: Energies,
}

pub(crate) fn build_fock(sys: &System, xc: &XcFunctional, d: &[DMatrix<f64>; 2]) -> Result<FockBuild> {
    let dt = &d[0] + &d[1];
    let j = sys.eri.coulomb(&dt);
    let p = xc_potential(sys, xc, d)?;
    let base = &sys.hcore + &j;
    let fock = [&base + &p.v[0], &base + &p.v[1]];
    let kinetic = dot(&dt, &sys.ints.t);
    let external = dot(&dt, &sys.ints.v);
    let hartree = 0.5 * dot(&dt, &j);
    let nuclear = sys.ints.e_nn;
    let total = kinetic + external + hartree + p.energy + nuclear;
    Ok(FockBuild { fock, energies: Energies { total, kinetic, external, hartree, xc: p.energy, nuclear } })
}

struct Occupied {
    density: [DMatrix<f64>; 2],
    coefficients: [DMatrix<f64>; 2],
    energies: [DVector<f64>; 2],
}

fn occupy(sys: &System, mode: ScfMode, fock: &[DMatrix<f64>; 2]) -> Result<Occupied> {
    let occ = sys.occupations();
    match mode {
        ScfMode::Rks => {
            if occ[0] != occ[1] {
                return Err(Error::Config("restricted mode needs a closed-shell system".into()));
            }
            let (e, c) = sys.diagonalize(&fock[0])?;
            let d = projector(&c, occ[0]);
            Ok(Occupied { density: [d.clone(), d], coefficients: [c.clone(), c], energies: [e.values.clone(), e.values] })
        }
        ScfMode::Uks => {
            let (ea, ca) = sys.diagonalize(&fock[0])?;
            let (eb, cb) = sys.diagonalize(&fock[1])?;
            Ok(Occupied { density: [projector(&ca, occ[0]), projector(&cb, occ[1])], coefficients: [ca, cb], energies: [ea.values, eb.values] })
        }
    }
}

/// Rotates HOMO into LUMO by `angle_rad` in the given coefficients and
/// returns the resulting density.
pub fn symmetry_breaking_guess(c: &DMatrix<f64>, n_occ: usize, angle_rad: f64) -> DMatrix<f64> {
    if n_occ == 0 || n_occ >= c.ncols() || angle_rad == 0.0 {
        return projector(c, n_occ);
    }
    let mut c = c.clone();
    let (h, l) = (c.column(n_occ - 1).clone_owned(), c.column(n_occ).clone_owned());
    let (s, co) = angle_rad.sin_cos();
    c.set_column(n_occ - 1, &(&h * co + &l * s));
    c.set_column(n_occ, &(&l * co - &h * s));
    projector(&c, n_occ)
}

/// Core-Hamiltonian guess, with the α HOMO/LUMO rotation when requested.
pub fn core_guess(sys: &System, cfg: &ScfConfig) -> Result<[DMatrix<f64>; 2]> {
    let h = [sys.hcore.clone(), sys.hcore.clone()];
    let mut occ = occupy(sys, cfg.mode, &h)?;
    if cfg.mode == ScfMode::Uks && cfg.break_symmetry {
        occ.density[0] = symmetry_breaking_guess(&occ.coefficients[0], sys.n_alpha, cfg.mixing_angle_deg.to_radians());
    }
    Ok(occ.density)
}

/// Carries a density from a neighbouring geometry over to `sys`: the
/// occupied natural orbitals of `S^{1/2} D S^{1/2}` in the new metric.
pub fn transfer_guess(sys: &System, d: &[DMatrix<f64>; 2]) -> Result<[DMatrix<f64>; 2]> {
    let n = sys.n_basis();
    if d.iter().any(|m| m.shape() != (n, n)) {
        return Err(Error::dim("transfer_guess", format!("guess is {:?}, basis has {n} functions", d[0].shape())));
    }
    let e = eigh(&sys.ints.s)?;
    let s_half = &e.vectors * DMatrix::from_diagonal(&e.values.map(f64::sqrt)) * e.vectors.transpose();
    let occ = sys.occupations();
    let mut out = [DMatrix::zeros(n, n), DMatrix::zeros(n, n)];
    for s in 0..2 {
        // Negated so the most occupied natural orbitals come first.
        let nat = eigh(&-(&s_half * &d[s] * &s_half))?;
        out[s] = projector(&(&sys.x * nat.vectors), occ[s]);
    }
    Ok(out)
}

fn check_counts(sys: &System, d: &[DMatrix<f64>; 2]) -> Result<()> {
    for (dm, n) in d.iter().zip(sys.occupations()) {
        let tr = dot(dm, &sys.ints.s);
        if (tr - n as f64).abs() > 1e-8 {
            return Err(Error::numerical("scf", format!("electron count {tr} instead of {n}")));
        }
    }
    Ok(())
}

fn commutator_error(sys: &System, fock: &[DMatrix<f64>; 2], d: &[DMatrix<f64>; 2]) -> Vec<f64> {
    let s = &sys.ints.s;
    let mut out = Vec::new();
    for (f, dm) in fock.iter().zip(d) {
        let fds = f * dm * s;
        let e = &sys.x * (&fds - fds.transpose()) * &sys.x;
        out.extend_from_slice(e.as_slice());
    }
    out
}

fn residual(a: &[DMatrix<f64>; 2], b: &[DMatrix<f64>; 2]) -> f64 {
    ((&a[0] - &b[0]).norm_squared() + (&a[1] - &b[1]).norm_squared()).sqrt()
}

pub fn scf_solve(sys: &System, xc: &XcFunctional, cfg: &ScfConfig) -> Result<ScfState> {
    scf_solve_from(sys, xc, cfg, None)
}

/// SCF from an explicit starting density (warm start) or the core guess.
pub fn scf_solve_from(sys: &System, xc: &XcFunctional, cfg: &ScfConfig, guess: Option<&[DMatrix<f64>; 2]>) -> Result<ScfState> {
    cfg.validate()?;
    let mut d = match guess {
        Some(g) => g.clone(),
        None => core_guess(sys, cfg)?,
    };
    if cfg.mode == ScfMode::Rks {
        let avg = (&d[0] + &d[1]) * 0.5;
        d = [avg.clone(), avg];
    }
    check_counts(sys, &d)?;
    let mut diis = diis::Diis::new(cfg.diis_depth);
    let (mut residuals, mut history) = (Vec::new(), Vec::new());
    let mut fallbacks = 0;
    let mut diis_on = false;
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=cfg.max_iterations {
        iterations = it;
        let fb = build_fock(sys, xc, &d)?;
        let e = fb.energies.total;
        history.push(e);
        if !e.is_finite() || e.abs() > DIVERGENCE_ENERGY {
            return Err(Error::Divergence { iteration: it, energy: e });
        }
        let err = commutator_error(sys, &fb.fock, &d);
        let use_diis = cfg.diis_depth > 0 && (diis_on || err.iter().fold(0.0f64, |m, x| m.max(x.abs())) < cfg.diis_start);
        let extrapolated = if use_diis {
            diis_on = true;
            diis.push(fb.fock.clone(), err);
            diis.extrapolate()
        } else {
            None
        };
        let mut next = occupy(sys, cfg.mode, extrapolated.as_ref().unwrap_or(&fb.fock))?.density;
        if extrapolated.is_none() {
            if use_diis {
                fallbacks += 1;
                diis.clear();
            }
            let a = cfg.mixing;
            next = [&d[0] * (1.0 - a) + &next[0] * a, &d[1] * (1.0 - a) + &next[1] * a];
        }
        check_counts(sys, &next)?;
        let r = residual(&next, &d);
        residuals.push(r);
        d = next;
        if r < cfg.threshold {
            converged = true;
            break;
        }
    }
    let fb = build_fock(sys, xc, &d)?;
    if !fb.energies.total.is_finite() || fb.energies.total.abs() > DIVERGENCE_ENERGY {
        return Err(Error::Divergence { iteration: iterations + 1, energy: fb.energies.total });
    }
    let occ = occupy(sys, cfg.mode, &fb.fock)?;
    Ok(ScfState {
        mode: cfg.mode,
        density: d,
        coefficients: occ.coefficients,
        orbital_energies: occ.energies,
        energies: fb.energies,
        converged,
        iterations,
        residuals,
        energy_history: history,
        diis_fallbacks: fallbacks,
    })
}

/// Energy after one further undamped iteration from `state`.
pub fn next_iteration_energy(sys: &System, xc: &XcFunctional, state: &ScfState) -> Result<f64> {
    let fb = build_fock(sys, xc, &state.density)?;
    let occ = occupy(sys, state.mode, &fb.fock)?;
    Ok(build_fock(sys, xc, &occ.density)?.energies.total)
}

/// Σ E_atoms − E_molecule, flagged when any input did not converge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atomization {
    pub energy: f64,
    pub converged: bool,
}

pub fn atomization_energy(molecule: &ScfState, atoms: &[&ScfState]) -> Atomization {
    let e_atoms: f64 = atoms.iter().map(|a| a.energies.total).sum();
    Atomization { energy: e_atoms - molecule.energies.total, converged: molecule.converged && atoms.iter().all(|a| a.converged) }
}

#[cfg(test)]
mod tests;
