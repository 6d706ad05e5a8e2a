//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{ComplexField, DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Eigen-decomposition of a Hermitian matrix with eigenvalues sorted ascending.
///
/// Eigenvector phases are fixed so that the largest-magnitude component of
/// each vector is real and positive, which keeps results reproducible.
pub fn eigh<T>(m: DMatrix<T>) -> Result<(Vec<f64>, DMatrix<T>)>
where
    T: ComplexField<RealField = f64>,
{
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "eigh needs a square matrix, got {}x{}",
            n,
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.clone().is_finite()) {
        return Err(Error::Eigensolver("matrix has non-finite entries".into()));
    }
    let eig = SymmetricEigen::try_new(m, f64::EPSILON, 0)
        .ok_or_else(|| Error::Eigensolver(format!("no convergence for {n}x{n} matrix")))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::<T>::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(src);
        let mut best = 0;
        let mut best_mag = -1.0;
        for (r, x) in v.iter().enumerate() {
            let mag = x.clone().modulus();
            if mag > best_mag * (1.0 + 1e-12) {
                best = r;
                best_mag = mag;
            }
        }
        let pivot = v[best].clone();
        let phase = if best_mag > 0.0 {
            pivot.clone().conjugate().unscale(best_mag)
        } else {
            T::one()
        };
        for r in 0..n {
            vectors[(r, col)] = v[r].clone() * phase.clone();
        }
    }
    Ok((values, vectors))
}

/// Largest entry of `|m − m†|`.
pub fn hermitian_deviation(m: &DMatrix<C64>) -> f64 {
    let n = m.nrows();
    let mut dev: f64 = 0.0;
    for i in 0..n {
        for j in 0..=i {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    dev
}

/// `(m + m†)/2`.
pub fn hermitize(m: &DMatrix<C64>) -> DMatrix<C64> {
    (m + m.adjoint()).scale(0.5)
}

pub fn max_abs_diff(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorted_real_eigenpairs() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, -1.0]);
        let (vals, vecs) = eigh(m.clone()).unwrap();
        assert!((vals[0] + 1.0).abs() < 1e-12);
        assert!((vals[1] - 1.0).abs() < 1e-12);
        assert!((vals[2] - 3.0).abs() < 1e-12);
        let resid = &m * &vecs - &vecs * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vals));
        assert!(resid.amax() < 1e-12);
        for c in 0..3 {
            assert!(vecs.column(c).iter().cloned().fold(f64::MIN, f64::max) > 0.0);
        }
    }

    #[test]
    fn complex_hermitian_eigenpairs() {
        let i = C64::new(0.0, 1.0);
        let m = DMatrix::from_row_slice(2, 2, &[C64::from(1.0), -i, i, C64::from(1.0)]);
        let (vals, vecs) = eigh(m.clone()).unwrap();
        assert!(vals[0].abs() < 1e-12 && (vals[1] - 2.0).abs() < 1e-12);
        let v0 = vecs.column(0);
        let mv = &m * v0;
        assert!(mv.iter().all(|x| x.norm() < 1e-12));
        assert_eq!(hermitian_deviation(&m), 0.0);
    }
}
