//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector};

/// `(A + Aᵀ) / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return f64::INFINITY;
    }
    symmetrize(a)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Raises every eigenvalue of the symmetric matrix `a` to at least `floor`.
pub fn floor_eigenvalues(a: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = symmetrize(a).symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return symmetrize(a);
    }
    let clamped = eig.eigenvalues.map(|l| l.max(floor));
    let q = &eig.eigenvectors;
    symmetrize(&(q * DMatrix::from_diagonal(&clamped) * q.transpose()))
}

pub fn all_finite_mat(a: &DMatrix<f64>) -> bool {
    a.iter().all(|x| x.is_finite())
}

pub fn all_finite_vec(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Stacks `[a; b]` into one column vector.
pub fn concat(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(a.len() + b.len());
    out.rows_mut(0, a.len()).copy_from(a);
    out.rows_mut(a.len(), b.len()).copy_from(b);
    out
}

/// `½ zᵀ C z + zᵀ c + cc`.
pub fn quadratic_form(
    c_mat: &DMatrix<f64>,
    c_vec: &DVector<f64>,
    cc: f64,
    z: &DVector<f64>,
) -> f64 {
    0.5 * z.dot(&(c_mat * z)) + z.dot(c_vec) + cc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floor_lifts_negative_eigenvalues() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let b = floor_eigenvalues(&a, 0.5);
        assert!(min_eigenvalue(&b) >= 0.5 - 1e-12);
        // eigenvalue 3 untouched
        let max = b.symmetric_eigenvalues().max();
        assert!((max - 3.0).abs() < 1e-12);
    }

    #[test]
    fn quadratic_form_matches_hand_value() {
        let c = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]);
        let z = DVector::from_vec(vec![1.0, 2.0]);
        assert_eq!(quadratic_form(&c, &DVector::zeros(2), 0.0, &z), 5.0);
    }
}
