use nalgebra::DMatrix;

use super::BasisSet;
use crate::grid::MolecularGrid;

/// φ_μ and ∇φ_μ tabulated on grid points (rows) for each function (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct BasisOnGrid {
    pub values: DMatrix<f64>,
    pub grad: [DMatrix<f64>; 3],
}

pub fn basis_on_grid(basis: &BasisSet, grid: &MolecularGrid) -> BasisOnGrid {
    let (ng, nb) = (grid.len(), basis.n_basis());
    let mut values = DMatrix::zeros(ng, nb);
    let mut grad = [DMatrix::zeros(ng, nb), DMatrix::zeros(ng, nb), DMatrix::zeros(ng, nb)];
    for (mu, f) in basis.functions.iter().enumerate() {
        for (g, p) in grid.points.iter().enumerate() {
            let d = [p[0] - f.center[0], p[1] - f.center[1], p[2] - f.center[2]];
            let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
            let (mut v, mut dv) = (0.0, 0.0);
            for (a, c) in f.primitives() {
                let e = c * (-a * r2).exp();
                v += e;
                dv -= 2.0 * a * e;
            }
            values[(g, mu)] = v;
            for k in 0..3 {
                grad[k][(g, mu)] = dv * d[k];
            }
        }
    }
    BasisOnGrid { values, grad }
}

fn row_sums(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.nrows()).map(|i| m.row(i).sum()).collect()
}

impl BasisOnGrid {
    pub fn n_points(&self) -> usize {
        self.values.nrows()
    }

    /// n(g) = Σ D_μν φ_μ(g) φ_ν(g).
    pub fn density(&self, d: &DMatrix<f64>) -> Vec<f64> {
        row_sums(&(&self.values * d).component_mul(&self.values))
    }

    /// ∇n(g) = 2 Σ D_μν φ_μ(g) ∇φ_ν(g) for symmetric D.
    pub fn density_gradient(&self, d: &DMatrix<f64>) -> [Vec<f64>; 3] {
        let pd = &self.values * d;
        let f = |k: usize| row_sums(&pd.component_mul(&self.grad[k])).into_iter().map(|x| 2.0 * x).collect();
        [f(0), f(1), f(2)]
    }

    /// Σ_g w_g φ_μ φ_ν.
    pub fn overlap(&self, weights: &[f64]) -> DMatrix<f64> {
        let mut wp = self.values.clone();
        for (g, w) in weights.iter().enumerate() {
            wp.row_mut(g).scale_mut(*w);
        }
        self.values.transpose() * wp
    }
}
