//! Small dense linear-algebra helpers shared by the numerical modules.

use nalgebra::{DMatrix, DVector};

/// Dimension up to which the operator norm is computed exactly from singular values.
pub const SPECTRAL_NORM_MAX_DIM: usize = 4;

/// Operator norm of a matrix.
///
/// Uses the largest singular value for matrices of dimension at most
/// [`SPECTRAL_NORM_MAX_DIM`] and the Frobenius norm (an upper bound of the
/// spectral norm) for larger ones.
pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 && m.ncols() == 1 {
        return m[(0, 0)].abs();
    }
    if m.nrows().max(m.ncols()) <= SPECTRAL_NORM_MAX_DIM {
        if m.iter().all(|v| *v == 0.0) {
            return 0.0;
        }
        m.clone()
            .svd(false, false)
            .singular_values
            .iter()
            .fold(0.0_f64, |acc, v| acc.max(*v))
    } else {
        m.norm()
    }
}

/// Euclidean norm of a state vector.
pub fn vector_norm(v: &DVector<f64>) -> f64 {
    v.norm()
}

/// Largest absolute entry of a matrix.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Solve `X · B = A` for `X`, i.e. `X = A · B⁻¹`, without forming the inverse.
///
/// Returns `None` when `B` is numerically singular.
pub fn right_divide(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if b.nrows() == 1 {
        let d = b[(0, 0)];
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        return Some(a / d);
    }
    // X B = A  <=>  Bᵀ Xᵀ = Aᵀ
    let lu = b.transpose().lu();
    lu.solve(&a.transpose()).map(|xt| xt.transpose())
}

/// Inverse of a square matrix through an LU solve against the identity.
pub fn inverse(b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = b.nrows();
    if n == 1 {
        let d = b[(0, 0)];
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        return Some(DMatrix::from_element(1, 1, 1.0 / d));
    }
    b.clone().lu().solve(&DMatrix::identity(n, n))
}

/// Solve `B · x = v`.
pub fn solve(b: &DMatrix<f64>, v: &DVector<f64>) -> Option<DVector<f64>> {
    if b.nrows() == 1 {
        let d = b[(0, 0)];
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        return Some(v / d);
    }
    b.clone().lu().solve(v)
}

/// Diagonal 0/1 matrix with ones on `[start, start + len)`.
pub fn block_projection(n: usize, start: usize, len: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for i in start..(start + len).min(n) {
        m[(i, i)] = 1.0;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_norm_of_rotation_is_one() {
        let (s, c) = 0.3_f64.sin_cos();
        let m = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        assert!((operator_norm(&m) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn spectral_norm_of_diagonal_is_largest_entry() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, -5.0, 0.0, 0.0, 0.0, 1.0]);
        assert!((operator_norm(&m) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn frobenius_bound_for_large_matrices() {
        let m = DMatrix::<f64>::identity(5, 5);
        assert!((operator_norm(&m) - 5.0_f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn right_divide_matches_inverse() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let x = right_divide(&a, &b).unwrap();
        let expected = &a * inverse(&b).unwrap();
        assert!(max_abs(&(x - expected)) < 1e-14);
    }

    #[test]
    fn singular_divisor_is_rejected() {
        let a = DMatrix::<f64>::identity(2, 2);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(right_divide(&a, &b).is_none());
        assert!(inverse(&DMatrix::from_element(1, 1, 0.0)).is_none());
    }
}
