//! Small dense linear-algebra routines for the filtering module.
//!
//! Systems there are tiny (a handful of state dimensions), so plain LU and
//! Cholesky factorizations are sufficient and keep the kernels generic over
//! the scalar type.

use ndarray::{Array1, Array2};

use crate::error::{PcError, Result};
use crate::scalar::Scalar;

/// LU factorization with partial pivoting; returns (LU, permutation).
fn lu_decompose<F: Scalar>(a: &Array2<F>) -> Result<(Array2<F>, Vec<usize>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(PcError::shape("lu", &[n, n], &[a.nrows(), a.ncols()]));
    }
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if lu[[row, col]].abs() > lu[[pivot, col]].abs() {
                pivot = row;
            }
        }
        if lu[[pivot, col]].abs() < F::c(1e-300) {
            return Err(PcError::Singular("lu_decompose"));
        }
        if pivot != col {
            perm.swap(pivot, col);
            for k in 0..n {
                let tmp = lu[[pivot, k]];
                lu[[pivot, k]] = lu[[col, k]];
                lu[[col, k]] = tmp;
            }
        }
        for row in col + 1..n {
            let factor = lu[[row, col]] / lu[[col, col]];
            lu[[row, col]] = factor;
            for k in col + 1..n {
                let sub = factor * lu[[col, k]];
                lu[[row, k]] = lu[[row, k]] - sub;
            }
        }
    }
    Ok((lu, perm))
}

fn lu_solve_one<F: Scalar>(lu: &Array2<F>, perm: &[usize], b: &Array1<F>) -> Array1<F> {
    let n = lu.nrows();
    let mut x = Array1::zeros(n);
    for i in 0..n {
        x[i] = b[perm[i]];
        for j in 0..i {
            let sub = lu[[i, j]] * x[j];
            x[i] = x[i] - sub;
        }
    }
    for i in (0..n).rev() {
        for j in i + 1..n {
            let sub = lu[[i, j]] * x[j];
            x[i] = x[i] - sub;
        }
        x[i] = x[i] / lu[[i, i]];
    }
    x
}

/// Solve `a x = b`.
pub fn solve<F: Scalar>(a: &Array2<F>, b: &Array1<F>) -> Result<Array1<F>> {
    if b.len() != a.nrows() {
        return Err(PcError::shape("solve", &[a.nrows()], &[b.len()]));
    }
    let (lu, perm) = lu_decompose(a)?;
    Ok(lu_solve_one(&lu, &perm, b))
}

/// Matrix inverse via LU.
pub fn inverse<F: Scalar>(a: &Array2<F>) -> Result<Array2<F>> {
    let n = a.nrows();
    let (lu, perm) = lu_decompose(a)?;
    let mut inv = Array2::zeros((n, n));
    for col in 0..n {
        let mut e = Array1::zeros(n);
        e[col] = F::one();
        let x = lu_solve_one(&lu, &perm, &e);
        for row in 0..n {
            inv[[row, col]] = x[row];
        }
    }
    Ok(inv)
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky<F: Scalar>(a: &Array2<F>) -> Result<Array2<F>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(PcError::shape("cholesky", &[n, n], &[a.nrows(), a.ncols()]));
    }
    let mut l = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                let sub = l[[i, k]] * l[[j, k]];
                sum = sum - sub;
            }
            if i == j {
                if sum <= F::zero() {
                    return Err(PcError::NotPositiveDefinite("cholesky"));
                }
                l[[i, j]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// `(a + aᵀ)/2`.
pub fn symmetrize<F: Scalar>(a: &Array2<F>) -> Array2<F> {
    (a + &a.t()) * F::c(0.5)
}
