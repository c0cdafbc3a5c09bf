//! Dense symmetric solvers used by the least-squares and logistic fitters.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix (row-major, `d x d`).
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    l: Vec<T>,
    dim: usize,
}

impl<T: Scalar> Cholesky<T> {
    /// Factorizes `a`. A pivot at or below `d * eps * max_diag` counts as a failure.
    pub fn factor(a: &[T], dim: usize) -> Result<Self> {
        assert_eq!(a.len(), dim * dim, "matrix must be d x d");
        let max_diag = (0..dim).map(|i| a[i * dim + i].abs()).fold(T::zero(), T::max);
        let tol = T::epsilon() * T::of_usize(dim.max(1)) * max_diag;
        let mut l = vec![T::zero(); dim * dim];
        for j in 0..dim {
            let mut diag = a[j * dim + j];
            for k in 0..j {
                diag -= l[j * dim + k] * l[j * dim + k];
            }
            if !(diag > tol) {
                return Err(Error::NotPositiveDefinite { pivot: j });
            }
            let djj = diag.sqrt();
            l[j * dim + j] = djj;
            for i in j + 1..dim {
                let mut s = a[i * dim + j];
                for k in 0..j {
                    s -= l[i * dim + k] * l[j * dim + k];
                }
                l[i * dim + j] = s / djj;
            }
        }
        Ok(Self { l, dim })
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let d = self.dim;
        let mut y = b.to_vec();
        for i in 0..d {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[i * d + k] * y[k];
            }
            y[i] = s / self.l[i * d + i];
        }
        for i in (0..d).rev() {
            let mut s = y[i];
            for k in i + 1..d {
                s -= self.l[k * d + i] * y[k];
            }
            y[i] = s / self.l[i * d + i];
        }
        y
    }
}

/// `a * x` for a row-major `d x d` matrix.
pub fn mat_vec<T: Scalar>(a: &[T], x: &[T]) -> Vec<T> {
    let d = x.len();
    (0..d).map(|i| (0..d).map(|j| a[i * d + j] * x[j]).sum()).collect()
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues<T: Scalar>(a: &[T], dim: usize) -> Vec<T> {
    let mut m = a.to_vec();
    let two = T::of(2.0);
    for _sweep in 0..100 {
        let off: T = (0..dim)
            .flat_map(|i| (0..dim).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * dim + j] * m[i * dim + j])
            .sum();
        let scale: T = (0..dim).map(|i| m[i * dim + i] * m[i * dim + i]).sum::<T>() + T::min_positive_value();
        if off <= T::epsilon() * T::epsilon() * scale {
            break;
        }
        for p in 0..dim {
            for q in p + 1..dim {
                let apq = m[p * dim + q];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[q * dim + q] - m[p * dim + p]) / (two * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..dim {
                    let akp = m[k * dim + p];
                    let akq = m[k * dim + q];
                    m[k * dim + p] = c * akp - s * akq;
                    m[k * dim + q] = s * akp + c * akq;
                }
                for k in 0..dim {
                    let apk = m[p * dim + k];
                    let aqk = m[q * dim + k];
                    m[p * dim + k] = c * apk - s * aqk;
                    m[q * dim + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<T> = (0..dim).map(|i| m[i * dim + i]).collect();
    eig.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    eig
}
