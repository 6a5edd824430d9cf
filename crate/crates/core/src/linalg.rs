//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SVD};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Spectral norm (largest singular value). Zero for empty matrices.
pub fn op_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    SVD::new(m.clone(), false, false).singular_values.max()
}

/// Ratio of largest to smallest singular value; infinite when rank deficient.
pub fn condition_number(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let sv = SVD::new(m.clone(), false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Orthonormal basis for the column span of `m`.
///
/// Returns the basis (d × rank), the numerical rank and the condition number
/// of `m` itself (σ_max/σ_min over all of its columns).
pub fn orthonormal_basis(m: &Matrix, rel_tol: f64) -> (Matrix, usize, f64) {
    let d = m.nrows();
    if m.ncols() == 0 || d == 0 {
        return (Matrix::zeros(d, 0), 0, 1.0);
    }
    let svd = SVD::new(m.clone(), true, false);
    let sv = &svd.singular_values;
    let max = sv.max();
    let min = sv.min();
    let cond = if min == 0.0 { f64::INFINITY } else { max / min };
    let u = svd.u.expect("left singular vectors requested");
    let rank = sv.iter().filter(|&&s| s > rel_tol * max && s > 0.0).count();
    let mut basis = Matrix::zeros(d, rank);
    let mut col = 0;
    for (i, &s) in sv.iter().enumerate() {
        if s > rel_tol * max && s > 0.0 {
            basis.set_column(col, &u.column(i));
            col += 1;
        }
    }
    (basis, rank, cond)
}

/// Largest deviation of `b^T b` from the identity.
pub fn orthonormality_defect(b: &Matrix) -> f64 {
    if b.ncols() == 0 {
        return 0.0;
    }
    let g = b.transpose() * b;
    let id = Matrix::identity(b.ncols(), b.ncols());
    (g - id).amax()
}

/// Smallest principal angle between two subspaces given by orthonormal
/// bases. Returns π/2 when either is trivial.
pub fn min_principal_angle(a: &Matrix, b: &Matrix) -> f64 {
    if a.ncols() == 0 || b.ncols() == 0 {
        return std::f64::consts::FRAC_PI_2;
    }
    // sin θ_min = min over unit u in span(b) of |(I - A A^T) u|
    let resid = b - a * (a.transpose() * b);
    let sv = SVD::new(resid, false, false).singular_values;
    sv.min().clamp(0.0, 1.0).asin()
}

/// Largest principal angle between two subspaces of equal dimension.
pub fn max_principal_angle(a: &Matrix, b: &Matrix) -> f64 {
    if a.ncols() != b.ncols() {
        return std::f64::consts::FRAC_PI_2;
    }
    if a.ncols() == 0 {
        return 0.0;
    }
    let resid = b - a * (a.transpose() * b);
    op_norm(&resid).clamp(0.0, 1.0).asin()
}

pub fn unit(d: usize, i: usize) -> Vector {
    let mut v = Vector::zeros(d);
    v[i] = 1.0;
    v
}

/// Converts a matrix into row-major nested vectors (for serialization).
pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn from_rows(rows: &[Vec<f64>], ncols: usize) -> Matrix {
    let nrows = rows.len();
    Matrix::from_fn(nrows, ncols, |i, j| rows[i][j])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_of_rank_deficient_matrix() {
        let m = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let (b, rank, cond) = orthonormal_basis(&m, 1e-12);
        assert_eq!(rank, 1);
        assert!(cond > 1e12);
        assert!(orthonormality_defect(&b) < 1e-14);
    }

    #[test]
    fn principal_angles() {
        let e1 = Matrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let e2 = Matrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let diag = Matrix::from_column_slice(2, 1, &[1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt()]);
        assert!((min_principal_angle(&e1, &e2) - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!((max_principal_angle(&e1, &diag) - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
        assert!(min_principal_angle(&e1, &e1) < 1e-12);
    }
}
