//! Small dense linear-algebra helpers shared by the solvers.
//!
//! Samples are stored row-wise: an `n × k` matrix holds `n` observations of a
//! `k`-vector.

use nalgebra::{DMatrix, DVector};

use crate::error::{DressError, Result};

/// Relative singular-value cutoff used for every rank decision.
pub const RANK_TOL: f64 = 1e-10;

/// Newton Jacobians with a larger condition number are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Ratio of the largest to the smallest singular value (`inf` when singular).
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Number of singular values above `RANK_TOL` times the largest one.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.singular_values();
    let max = sv.max();
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * max).count()
}

/// Solve `a x = b`, refusing systems whose condition number exceeds `max_cond`.
pub fn solve_checked(a: &DMatrix<f64>, b: &DVector<f64>, max_cond: f64) -> Result<DVector<f64>> {
    let condition = condition_number(a);
    if !condition.is_finite() || condition > max_cond {
        return Err(DressError::SingularSystem { condition });
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or(DressError::SingularSystem { condition })
}

/// Solve `a X = b` for a matrix right-hand side under the same rule.
pub fn solve_matrix_checked(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    max_cond: f64,
) -> Result<DMatrix<f64>> {
    let condition = condition_number(a);
    if !condition.is_finite() || condition > max_cond {
        return Err(DressError::SingularSystem { condition });
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or(DressError::SingularSystem { condition })
}

/// `(1/n) Σ aᵢ bᵢᵀ` over matching rows of `a` (n×p) and `b` (n×q).
pub fn mean_cross(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    debug_assert_eq!(a.nrows(), b.nrows());
    a.transpose() * b / a.nrows() as f64
}

/// Column means of a row-sample matrix.
pub fn column_means(a: &DMatrix<f64>) -> DVector<f64> {
    let n = a.nrows() as f64;
    DVector::from_iterator(a.ncols(), a.column_iter().map(|c| c.sum() / n))
}

/// Subtract the column means from every row.
pub fn center_columns(a: &DMatrix<f64>) -> DMatrix<f64> {
    let means = column_means(a);
    let mut out = a.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    out
}

/// Mean-subtracted covariance `(1/n) Σ (aᵢ − ā)(aᵢ − ā)ᵀ`.
pub fn covariance(a: &DMatrix<f64>) -> DMatrix<f64> {
    let c = center_columns(a);
    mean_cross(&c, &c)
}

/// `(m + mᵀ)/2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m).symmetric_eigenvalues().min()
}

/// Row `i` of a sample matrix as an owned vector.
pub fn row(m: &DMatrix<f64>, i: usize) -> DVector<f64> {
    m.row(i).transpose()
}

/// Build a row-sample matrix from a list of equally sized vectors.
pub fn stack_rows(rows: &[DVector<f64>], ncols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rank_of_outer_product() {
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let m = &v * v.transpose();
        assert_eq!(numerical_rank(&m), 1);
        assert_eq!(numerical_rank(&DMatrix::identity(4, 4)), 4);
    }

    #[test]
    fn singular_solve_reports_condition() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let b = DVector::from_vec(vec![1.0, 1.0]);
        match solve_checked(&a, &b, MAX_CONDITION) {
            Err(DressError::SingularSystem { condition }) => assert!(condition.is_infinite()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn covariance_is_mean_subtracted() {
        let a = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        assert_abs_diff_eq!(covariance(&a)[(0, 0)], 2.0 / 3.0, epsilon = 1e-15);
    }
}

/// Serialize a matrix as a list of rows.
pub mod serde_rows {
    use nalgebra::DMatrix;
    use serde::ser::SerializeSeq;
    use serde::Serializer;

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(m.nrows()))?;
        for r in m.row_iter() {
            let row: Vec<f64> = r.iter().copied().collect();
            seq.serialize_element(&row)?;
        }
        seq.end()
    }
}
