use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Cholesky factor of a symmetric matrix, retried once with a
/// `1e-8 · trace / dim` ridge when the plain factorization fails.
pub(crate) struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    pub ridged: bool,
}

impl SpdFactor {
    pub fn new(dim: usize, row_major: &[f64]) -> Option<Self> {
        let m = DMatrix::from_row_slice(dim, dim, row_major);
        if let Some(chol) = Cholesky::new(m.clone()) {
            return Some(SpdFactor { chol, ridged: false });
        }
        let ridge = 1e-8 * m.trace() / dim as f64;
        if !(ridge.is_finite() && ridge > 0.0) {
            return None;
        }
        let mut m = m;
        for i in 0..dim {
            m[(i, i)] += ridge;
        }
        Cholesky::new(m).map(|chol| SpdFactor { chol, ridged: true })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let b = DVector::from_column_slice(rhs);
        self.chol.solve(&b).as_slice().to_vec()
    }

    /// Inverse as a row-major vector, symmetrized.
    pub fn inverse(&self) -> Vec<f64> {
        let inv = self.chol.inverse();
        let n = inv.nrows();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = 0.5 * (inv[(i, j)] + inv[(j, i)]);
            }
        }
        out
    }
}

/// `a · x` for a row-major square matrix.
pub(crate) fn mat_vec(a: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| a[i * n..(i + 1) * n].iter().zip(x).map(|(u, v)| u * v).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_and_inverts_spd() {
        let a = [4.0, 1.0, 1.0, 3.0];
        let f = SpdFactor::new(2, &a).unwrap();
        assert!(!f.ridged);
        let x = f.solve(&[1.0, 2.0]);
        let back = mat_vec(&a, &x);
        assert!((back[0] - 1.0).abs() < 1e-14 && (back[1] - 2.0).abs() < 1e-14);
        let inv = f.inverse();
        assert!((inv[0] - 3.0 / 11.0).abs() < 1e-14);
        assert_eq!(inv[1], inv[2]);
    }

    #[test]
    fn ridge_rescues_singular_psd() {
        let a = [1.0, 1.0, 1.0, 1.0];
        let f = SpdFactor::new(2, &a).unwrap();
        assert!(f.ridged);
        assert!(SpdFactor::new(2, &[0.0; 4]).is_none());
    }
}
