//! Small complex dense helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CVec = DVector<C64>;
pub type CMat = DMatrix<C64>;

pub fn czero() -> C64 {
    C64::new(0.0, 0.0)
}

/// Relative ridge added when a Hermitian system is numerically singular.
pub const RIDGE: f64 = 1e-12;

/// Cholesky factor of a Hermitian PSD matrix; retries with a
/// `RIDGE * trace` diagonal shift if the plain factorization fails.
pub fn hermitian_cholesky(mut m: CMat) -> Option<Cholesky<C64, Dyn>> {
    let n = m.nrows();
    if n == 0 {
        return None;
    }
    let trace: f64 = (0..n).map(|i| m[(i, i)].re).sum();
    match Cholesky::new(m.clone()) {
        Some(c) => Some(c),
        None => {
            let shift = RIDGE * trace.abs().max(f64::MIN_POSITIVE);
            for i in 0..n {
                m[(i, i)] += C64::new(shift, 0.0);
            }
            Cholesky::new(m)
        }
    }
}

/// Solves `m x = rhs` for Hermitian PSD `m`.
pub fn hermitian_solve(m: CMat, rhs: &CVec) -> CVec {
    if rhs.iter().all(|v| *v == czero()) {
        return CVec::zeros(rhs.len());
    }
    match hermitian_cholesky(m.clone()) {
        Some(c) => c.solve(rhs),
        None => m.pseudo_inverse(1e-14).map(|p| p * rhs).unwrap_or_else(|_| CVec::zeros(rhs.len())),
    }
}

/// `x^H m x`, real part.
pub fn quad_form(m: &CMat, x: &CVec) -> f64 {
    x.dotc(&(m * x)).re
}

/// Unit-norm principal right singular vector of `block` (the direction that
/// maximizes `||block v||`). Returns `None` for an all-zero block.
pub fn principal_right_singular_vector(block: &CMat) -> Option<CVec> {
    let gram = block.adjoint() * block;
    if gram.iter().all(|v| v.norm() == 0.0) {
        return None;
    }
    let eig = SymmetricEigen::new(gram);
    let (idx, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
    let v = eig.eigenvectors.column(idx).into_owned();
    let norm = v.norm();
    Some(v / C64::new(norm, 0.0))
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(m: &CMat) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Largest absolute deviation from Hermitian symmetry.
pub fn hermitian_defect(m: &CMat) -> f64 {
    (m - m.adjoint()).iter().map(|v| v.norm()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_pd_system() {
        let m = CMat::from_row_slice(
            2,
            2,
            &[C64::new(2.0, 0.0), C64::new(0.0, 1.0), C64::new(0.0, -1.0), C64::new(3.0, 0.0)],
        );
        let rhs = CVec::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.0, 2.0)]);
        let x = hermitian_solve(m.clone(), &rhs);
        assert!((&m * x - rhs).norm() < 1e-12);
    }

    #[test]
    fn singular_rank_one_gets_ridge() {
        let v = CVec::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.0, 1.0)]);
        let m = &v * v.adjoint();
        let x = hermitian_solve(m.clone(), &v);
        // b is in range(m): residual stays small relative to the ridge
        assert!((&m * &x - &v).norm() < 1e-6);
    }

    #[test]
    fn principal_direction() {
        let block = CMat::from_row_slice(1, 2, &[C64::new(3.0, 0.0), C64::new(0.0, 4.0)]);
        let v = principal_right_singular_vector(&block).unwrap();
        assert!(((&block * &v).norm() - 5.0).abs() < 1e-12);
        assert!(principal_right_singular_vector(&CMat::zeros(2, 3)).is_none());
    }
}
