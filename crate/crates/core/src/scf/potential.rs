use nalgebra::DMatrix;

use super::System;
use crate::ad::{Dual, Scalar, Tape, Tensor, Var};
use crate::basis::BasisOnGrid;
use crate::error::{Error, Result};
use crate::nn::{Bound, GraphInputs, Model};
use crate::xc::{base_energy_density, enhanced_energy, zeta_column, BaseFunctional, SpinColumns};

/// A base functional, optionally multiplied by a learned enhancement.
#[derive(Debug, Clone)]
pub struct XcFunctional<'a> {
    pub base: BaseFunctional,
    learned: Option<(&'a Model, GraphInputs)>,
}

impl<'a> XcFunctional<'a> {
    pub fn plain(base: BaseFunctional) -> Self {
        XcFunctional { base, learned: None }
    }

    /// Binds `model` to the grid (and graph, for graph variants) of `sys`.
    pub fn learned(base: BaseFunctional, model: &'a Model, sys: &System) -> Result<Self> {
        Ok(Self::with_inputs(base, model, model_inputs(model, sys)?))
    }

    /// As [`XcFunctional::learned`] with inputs prepared by [`model_inputs`].
    pub fn with_inputs(base: BaseFunctional, model: &'a Model, inputs: GraphInputs) -> Self {
        XcFunctional { base, learned: Some((model, inputs)) }
    }

    pub fn model(&self) -> Option<&'a Model> {
        self.learned.as_ref().map(|(m, _)| *m)
    }
}

/// Network inputs for `model` on the grid and graph of `sys`.
pub fn model_inputs(model: &Model, sys: &System) -> Result<GraphInputs> {
    if !model.config.variant.uses_graph() {
        return GraphInputs::pointwise(sys.grid.len(), &model.config);
    }
    let graph = sys.graph.as_ref().ok_or_else(|| Error::Config(format!("variant {} needs a graph on the system", model.config.variant.name())))?;
    if graph.n_grid != sys.grid.len() {
        return Err(Error::dim("xc_functional", format!("graph has {} grid vertices, grid has {} points", graph.n_grid, sys.grid.len())));
    }
    GraphInputs::new(graph, &model.config)
}

/// Spin densities and (for GGA) their gradients on the grid.
pub(crate) struct GridDensity {
    pub n: [Vec<f64>; 2],
    pub grad: Option<[[Vec<f64>; 3]; 2]>,
}

pub(crate) fn grid_density(phi: &BasisOnGrid, d: &[DMatrix<f64>; 2], gga: bool) -> GridDensity {
    GridDensity {
        n: [phi.density(&d[0]), phi.density(&d[1])],
        grad: gga.then(|| [phi.density_gradient(&d[0]), phi.density_gradient(&d[1])]),
    }
}

fn xc_graph<T: Scalar>(tape: &mut Tape<T>, sys: &System, xc: &XcFunctional, cols: &SpinColumns, params: Option<&Bound>) -> Result<Var> {
    let e = base_energy_density(tape, xc.base, cols)?;
    let enh = match (&xc.learned, params) {
        (Some((model, inputs)), Some(p)) => {
            let n = tape.add(cols.n_up, cols.n_dn)?;
            let zeta = zeta_column(tape, cols.n_up, cols.n_dn)?;
            let f = model.forward(tape, p, n, zeta, inputs, None)?;
            Some((f, p.get("beta")?))
        }
        _ => None,
    };
    enhanced_energy(tape, e, enh, sys.weights.clone())
}

fn leaves<T: Scalar>(tape: &mut Tape<T>, cols: [Tensor<T>; 2], grads: Option<[[Tensor<T>; 3]; 2]>, trainable: bool) -> SpinColumns {
    let mut leaf = |t: Tensor<T>| if trainable { tape.param(t) } else { tape.constant(t) };
    let [a, b] = cols;
    let (n_up, n_dn) = (leaf(a), leaf(b));
    let (grad_up, grad_dn) = match grads {
        Some([gu, gd]) => (Some(gu.map(&mut leaf)), Some(gd.map(&mut leaf))),
        None => (None, None),
    };
    SpinColumns { n_up, n_dn, grad_up, grad_dn }
}

/// `Φᵀ diag(n̄) Φ + ΦᵀG + GᵀΦ` with `G = Σ_k diag(ḡ_k) ∂_kΦ`.
pub(crate) fn potential_matrix(phi: &BasisOnGrid, nbar: &[f64], gbar: Option<[&[f64]; 3]>) -> DMatrix<f64> {
    let mut wphi = phi.values.clone();
    for (g, w) in nbar.iter().enumerate() {
        wphi.row_mut(g).scale_mut(*w);
    }
    let mut v = phi.values.transpose() * wphi;
    if let Some(gb) = gbar {
        let mut gm = DMatrix::zeros(phi.values.nrows(), phi.values.ncols());
        for (k, gk) in gb.iter().enumerate() {
            for (g, w) in gk.iter().enumerate() {
                let row = phi.grad[k].row(g) * *w;
                let mut dst = gm.row_mut(g);
                dst += row;
            }
        }
        let m = phi.values.transpose() * gm;
        v += &m + m.transpose();
    }
    v
}

/// E_xc and the spin potentials `∂E_xc/∂D_σ`.
#[derive(Debug, Clone)]
pub struct XcPotential {
    pub energy: f64,
    pub v: [DMatrix<f64>; 2],
}

fn adjoints<T: Scalar>(grads: &crate::ad::Gradients<T>, v: Var, n: usize, part: impl Fn(T) -> f64) -> Vec<f64> {
    grads.get_or_zeros(v, n, 1).data.into_iter().map(part).collect()
}

fn spin_potentials<T: Scalar>(sys: &System, grads: &crate::ad::Gradients<T>, cols: &SpinColumns, part: impl Fn(T) -> f64 + Copy) -> [DMatrix<f64>; 2] {
    let ng = sys.grid.len();
    let one = |nv: Var, gv: Option<[Var; 3]>| {
        let nbar = adjoints(grads, nv, ng, part);
        let gbar = gv.map(|g| g.map(|x| adjoints(grads, x, ng, part)));
        potential_matrix(&sys.phi, &nbar, gbar.as_ref().map(|g| [&g[0][..], &g[1][..], &g[2][..]]))
    };
    [one(cols.n_up, cols.grad_up), one(cols.n_dn, cols.grad_dn)]
}

pub fn xc_potential(sys: &System, xc: &XcFunctional, d: &[DMatrix<f64>; 2]) -> Result<XcPotential> {
    let gd = grid_density(&sys.phi, d, xc.base.is_gga());
    let mut tape = Tape::<f64>::new();
    let params = xc.model().map(|m| m.params.bind(&mut tape, false));
    let cols = leaves(
        &mut tape,
        gd.n.clone().map(Tensor::column),
        gd.grad.clone().map(|s| s.map(|g| g.map(Tensor::column))),
        true,
    );
    let e = xc_graph(&mut tape, sys, xc, &cols, params.as_ref())?;
    let grads = tape.backward(e)?;
    Ok(XcPotential { energy: tape.value(e).item(), v: spin_potentials(sys, &grads, &cols, |x| x) })
}

/// E_xc and its gradient with respect to every parameter array at fixed D.
pub fn xc_param_gradient(sys: &System, xc: &XcFunctional, d: &[DMatrix<f64>; 2]) -> Result<(f64, Vec<Tensor<f64>>)> {
    let model = xc.model().ok_or_else(|| Error::Config("parameter gradient needs a learned functional".into()))?;
    let gd = grid_density(&sys.phi, d, xc.base.is_gga());
    let mut tape = Tape::<f64>::new();
    let params = model.params.bind(&mut tape, true);
    let cols = leaves(&mut tape, gd.n.map(Tensor::column), gd.grad.map(|s| s.map(|g| g.map(Tensor::column))), false);
    let e = xc_graph(&mut tape, sys, xc, &cols, Some(&params))?;
    let grads = tape.backward(e)?;
    let g = params.vars.iter().zip(model.params.values()).map(|(&v, t)| grads.get_or_zeros(v, t.rows, t.cols)).collect();
    Ok((tape.value(e).item(), g))
}

/// Potentials at D plus their directional derivative along `t`:
/// `hv_σ = Σ_τ ∂²E_xc/∂D_σ∂D_τ · t_τ`, and `dparams = ∂/∂θ Σ_σ ⟨t_σ, V_σ⟩`.
#[derive(Debug, Clone)]
pub struct XcHvp {
    pub energy: f64,
    pub v: [DMatrix<f64>; 2],
    pub hv: [DMatrix<f64>; 2],
    pub dparams: Option<Vec<Tensor<f64>>>,
}

pub fn xc_hvp(sys: &System, xc: &XcFunctional, d: &[DMatrix<f64>; 2], t: &[DMatrix<f64>; 2]) -> Result<XcHvp> {
    let gga = xc.base.is_gga();
    let re = grid_density(&sys.phi, d, gga);
    let du = grid_density(&sys.phi, t, gga);
    let dual = |a: &[f64], b: &[f64]| Tensor::column(a.iter().zip(b).map(|(&x, &y)| Dual::new(x, y)).collect());
    let mut tape = Tape::<Dual<f64>>::new();
    let params = xc.model().map(|m| m.params.bind(&mut tape, true));
    let cols_t = [dual(&re.n[0], &du.n[0]), dual(&re.n[1], &du.n[1])];
    let grads_t = match (&re.grad, &du.grad) {
        (Some(a), Some(b)) => Some([0, 1].map(|s| [0, 1, 2].map(|k| dual(&a[s][k], &b[s][k])))),
        _ => None,
    };
    let cols = leaves(&mut tape, cols_t, grads_t, true);
    let e = xc_graph(&mut tape, sys, xc, &cols, params.as_ref())?;
    let grads = tape.backward(e)?;
    let v = spin_potentials(sys, &grads, &cols, |x: Dual<f64>| x.re);
    let hv = spin_potentials(sys, &grads, &cols, |x: Dual<f64>| x.du);
    let dparams = match (xc.model(), params) {
        (Some(m), Some(p)) => Some(
            p.vars
                .iter()
                .zip(m.params.values())
                .map(|(&v, t)| {
                    let g = grads.get_or_zeros(v, t.rows, t.cols);
                    Tensor { rows: t.rows, cols: t.cols, data: g.data.iter().map(|x| x.du).collect() }
                })
                .collect(),
        ),
        _ => None,
    };
    Ok(XcHvp { energy: tape.value(e).item().re, v, hv, dparams })
}
