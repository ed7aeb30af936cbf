use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenpairs of a symmetric matrix, ascending.
#[derive(Debug, Clone)]
pub struct Eigh {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

pub fn eigh(m: &DMatrix<f64>) -> Result<Eigh> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::numerical("eigh", "non-finite matrix"));
    }
    let sym = (m + m.transpose()) * 0.5;
    let e = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..e.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| e.eigenvalues[a].total_cmp(&e.eigenvalues[b]).then(a.cmp(&b)));
    let values = DVector::from_iterator(order.len(), order.iter().map(|&i| e.eigenvalues[i]));
    let mut vectors = DMatrix::from_fn(m.nrows(), order.len(), |r, c| e.eigenvectors[(r, order[c])]);
    // Fix the sign so the largest-magnitude component is positive.
    for mut col in vectors.column_iter_mut() {
        let k = col.iamax();
        if col[k] < 0.0 {
            col.neg_mut();
        }
    }
    Ok(Eigh { values, vectors })
}

/// Symmetric (Löwdin) S^{-1/2}.
pub fn inv_sqrt(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let e = eigh(s)?;
    if e.values[0] <= 1e-10 {
        return Err(Error::numerical("inv_sqrt", format!("overlap nearly singular (λmin = {:e})", e.values[0])));
    }
    let d = DMatrix::from_diagonal(&e.values.map(|v| 1.0 / v.sqrt()));
    Ok(&e.vectors * d * e.vectors.transpose())
}

/// `C_occ C_occᵀ` from the first `n_occ` columns.
pub fn projector(c: &DMatrix<f64>, n_occ: usize) -> DMatrix<f64> {
    let occ = c.columns(0, n_occ);
    &occ * occ.transpose()
}

/// ⟨A, B⟩ = Σ A_ij B_ij.
pub fn dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(b).sum()
}
