use nalgebra::DMatrix;

use super::linalg::{eigh, projector, Eigh};
use super::potential::{potential_matrix, xc_hvp, xc_param_gradient, XcFunctional};
use super::{build_fock, ScfConfig, ScfMode, ScfState, System};
use crate::ad::Tensor;
use crate::error::{Error, Result};

/// Reference density for the auxiliary loss `weight · Σ_g w_g (n_g − ref_g)²`.
#[derive(Debug, Clone, Copy)]
pub struct DensityTarget<'a> {
    pub density: &'a [f64],
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct DiffRun {
    pub energy: f64,
    pub aux: f64,
    pub density: [DMatrix<f64>; 2],
    /// Gradient of `energy_weight · E + aux` per parameter array.
    pub grad: Vec<Tensor<f64>>,
}

/// Hellmann–Feynman gradient `∂E/∂θ` at a converged density.
pub fn energy_gradient(sys: &System, xc: &XcFunctional, state: &ScfState) -> Result<Vec<Tensor<f64>>> {
    Ok(xc_param_gradient(sys, xc, &state.density)?.1)
}

struct Step {
    eig: [Eigh; 2],
}

/// VJP of `P = X U_occ U_occᵀ X` with respect to F, where `eig` diagonalises
/// `X F X`.
fn projector_vjp(x: &DMatrix<f64>, eig: &Eigh, n_occ: usize, pbar: &DMatrix<f64>) -> DMatrix<f64> {
    let n = eig.values.len();
    let u = &eig.vectors;
    let a = u.transpose() * (x * pbar * x) * u;
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n_occ {
        for v in n_occ..n {
            let gap = eig.values[i] - eig.values[v];
            c[(v, i)] = (a[(v, i)] + a[(i, v)]) / gap;
        }
    }
    let m = u * c * u.transpose();
    let sym = (&m + m.transpose()) * 0.5;
    x * sym * x
}

fn check_gaps(eig: &Eigh, n_occ: usize) -> Result<()> {
    if n_occ > 0 && n_occ < eig.values.len() {
        let gap = eig.values[n_occ] - eig.values[n_occ - 1];
        if gap.abs() < 1e-10 {
            return Err(Error::numerical("differentiable_run", format!("degenerate HOMO/LUMO (gap {gap:e})")));
        }
    }
    Ok(())
}

/// `unroll` damped fixed-point steps `D ← (1−α)D + α P(F(D))` from `start`,
/// with the exact reverse-mode gradient through every step.
pub fn differentiable_run(
    sys: &System,
    xc: &XcFunctional,
    cfg: &ScfConfig,
    start: &[DMatrix<f64>; 2],
    unroll: usize,
    energy_weight: f64,
    target: Option<DensityTarget>,
) -> Result<DiffRun> {
    cfg.validate()?;
    if unroll == 0 {
        return Err(Error::Config("differentiable_run needs unroll ≥ 1".into()));
    }
    let occ = [sys.n_alpha, sys.n_beta];
    let alpha = cfg.mixing;
    let mut ds = vec![start.clone()];
    let mut steps = Vec::with_capacity(unroll);
    for k in 0..unroll {
        let fb = build_fock(sys, xc, &ds[k])?;
        let fx = |f: &DMatrix<f64>| eigh(&(&sys.x * f * &sys.x));
        let eig = match cfg.mode {
            ScfMode::Rks => {
                let e = fx(&fb.fock[0])?;
                [e.clone(), e]
            }
            ScfMode::Uks => [fx(&fb.fock[0])?, fx(&fb.fock[1])?],
        };
        let p = [0, 1].map(|s| {
            check_gaps(&eig[s], occ[s])?;
            Ok::<_, Error>(projector(&(&sys.x * &eig[s].vectors), occ[s]))
        });
        let [pa, pb] = p;
        let (pa, pb) = (pa?, pb?);
        let d = &ds[k];
        ds.push([&d[0] * (1.0 - alpha) + pa * alpha, &d[1] * (1.0 - alpha) + pb * alpha]);
        steps.push(Step { eig });
    }
    let d_final = ds[unroll].clone();
    let fb = build_fock(sys, xc, &d_final)?;
    let (_, mut grad) = xc_param_gradient(sys, xc, &d_final)?;
    for g in &mut grad {
        g.data.iter_mut().for_each(|x| *x *= energy_weight);
    }
    let mut dbar = [&fb.fock[0] * energy_weight, &fb.fock[1] * energy_weight];
    let mut aux = 0.0;
    if let Some(t) = target {
        let n = sys.density_on_grid(&d_final);
        if t.density.len() != n.len() {
            return Err(Error::dim("differentiable_run", format!("target has {} points, grid has {}", t.density.len(), n.len())));
        }
        let mut nbar = Vec::with_capacity(n.len());
        for ((ni, ri), wi) in n.iter().zip(t.density).zip(sys.weights.iter()) {
            let r = ni - ri;
            aux += t.weight * wi * r * r;
            nbar.push(2.0 * t.weight * wi * r);
        }
        let v = potential_matrix(&sys.phi, &nbar, None);
        dbar[0] += &v;
        dbar[1] += &v;
    }
    for k in (0..unroll).rev() {
        let pbar = [&dbar[0] * alpha, &dbar[1] * alpha];
        let mut prev = [&dbar[0] * (1.0 - alpha), &dbar[1] * (1.0 - alpha)];
        let eig = &steps[k].eig;
        let fbar = match cfg.mode {
            ScfMode::Rks => {
                let f = projector_vjp(&sys.x, &eig[0], occ[0], &(&pbar[0] + &pbar[1]));
                let z = DMatrix::zeros(f.nrows(), f.ncols());
                [f, z]
            }
            ScfMode::Uks => [projector_vjp(&sys.x, &eig[0], occ[0], &pbar[0]), projector_vjp(&sys.x, &eig[1], occ[1], &pbar[1])],
        };
        let jbar = sys.eri.coulomb(&(&fbar[0] + &fbar[1]));
        let h = xc_hvp(sys, xc, &ds[k], &fbar)?;
        for s in 0..2 {
            prev[s] += &jbar + &h.hv[s];
        }
        if let Some(dp) = h.dparams {
            for (g, d) in grad.iter_mut().zip(&dp) {
                g.add_assign(d);
            }
        }
        dbar = prev;
    }
    Ok(DiffRun { energy: fb.energies.total, aux, density: d_final, grad })
}
