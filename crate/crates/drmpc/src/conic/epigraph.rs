//! Second-order-cone epigraph encoding of convex quadratic costs.

use super::{ConicError, ProgramBuilder};
use nalgebra::{DMatrix, DVector};

/// A positive semidefinite quadratic form `v' M v`, pre-factored so it can
/// be appended to conic programs as an epigraph variable.
#[derive(Debug, Clone)]
pub struct QuadraticCost {
    /// rows of E with M = E'E (only directions with nonzero curvature)
    factor: DMatrix<f64>,
    dim: usize,
}

impl QuadraticCost {
    pub fn new(matrix: &DMatrix<f64>) -> Result<Self, ConicError> {
        let d = matrix.nrows();
        if matrix.ncols() != d {
            return Err(ConicError::InvalidData);
        }
        let sym = (matrix + matrix.transpose()) * 0.5;
        let eig = sym.symmetric_eigen();
        let max_eig = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let cut = 1e-12 * max_eig.max(1.0);
        let mut rows: Vec<DVector<f64>> = Vec::new();
        for (k, &lam) in eig.eigenvalues.iter().enumerate() {
            if lam < -cut {
                return Err(ConicError::IndefiniteCost(lam));
            }
            if lam > cut {
                let v = eig.eigenvectors.column(k).clone_owned();
                rows.push(v * lam.sqrt());
            }
        }
        let r = rows.len();
        let mut factor = DMatrix::zeros(r, d);
        for (i, row) in rows.iter().enumerate() {
            factor.row_mut(i).copy_from(&row.transpose());
        }
        Ok(QuadraticCost { factor, dim: d })
    }

    /// Evaluate `(v - offset)' M (v - offset)` directly.
    pub fn eval(&self, v: &DVector<f64>, offset: &DVector<f64>) -> f64 {
        let d = v - offset;
        let e = &self.factor * d;
        e.norm_squared()
    }

    /// Append `t >= (vars - offset)' M (vars - offset)` to the builder and
    /// return the index of the epigraph variable t (a nonnegative variable).
    pub fn append_epigraph(
        &self,
        b: &mut ProgramBuilder,
        vars: &[usize],
        offset: &DVector<f64>,
    ) -> usize {
        assert_eq!(vars.len(), self.dim, "epigraph variable count mismatch");
        assert_eq!(offset.len(), self.dim);
        let t = b.nonneg_vars(1);
        let r = self.factor.nrows();
        if r == 0 {
            return t; // zero form: t >= 0 suffices
        }
        // (1 + t, 2 E (x - off), 1 - t) in SOC(r + 2)
        let s = b.soc_vars(r + 2);
        b.add_row(&[(s, 1.0), (t, -1.0)], 1.0);
        b.add_row(&[(s + r + 1, 1.0), (t, 1.0)], 1.0);
        let e_off = &self.factor * offset;
        for i in 0..r {
            let mut entries = vec![(s + 1 + i, 1.0)];
            for (j, &vj) in vars.iter().enumerate() {
                let coef = -2.0 * self.factor[(i, j)];
                if coef != 0.0 {
                    entries.push((vj, coef));
                }
            }
            b.add_row(&entries, -2.0 * e_off[i]);
        }
        t
    }
}
