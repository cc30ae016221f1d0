//! Dense reference eigensolver for small pencils: cyclic Jacobi rotations on
//! `M^{-1/2} L M^{-1/2}`. Quadratic memory, cubic time per sweep.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Largest matrix the oracle accepts.
pub const MAX_DIM: usize = 200;

/// Eigenvalues of a dense symmetric matrix (row-major `n × n`), ascending.
pub fn symmetric_eigenvalues<T: Real>(a: &[T], n: usize) -> Result<Vec<T>> {
    if a.len() != n * n {
        return Err(Error::invalid("matrix is not n × n"));
    }
    if n > MAX_DIM {
        return Err(Error::invalid(format!("dense oracle limited to {MAX_DIM} rows")));
    }
    let mut m = a.to_vec();
    let eps = T::epsilon();
    let frob: T = m.iter().map(|&x| x * x).sum::<T>().sqrt();
    for _sweep in 0..100 {
        let mut off = T::zero();
        for p in 0..n {
            for q in p + 1..n {
                off += m[p * n + q] * m[p * n + q];
            }
        }
        if off.sqrt() <= eps * frob || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (T::of(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = (t * t + T::one()).sqrt().recip();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<T> = (0..n).map(|i| m[i * n + i]).collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(ev)
}

/// Eigenvalues of `L f = λ M f` for a weighted graph on `n` vertices with
/// edges `(a, b, conductance)` and positive diagonal masses; vertices listed
/// in `removed` are constrained to zero.
pub fn pencil_eigenvalues<T: Real>(
    n: usize,
    edges: &[(usize, usize, T)],
    mass: &[T],
    removed: &[usize],
) -> Result<Vec<T>> {
    let mut keep = vec![usize::MAX; n];
    let mut dim = 0;
    for v in 0..n {
        if !removed.contains(&v) {
            keep[v] = dim;
            dim += 1;
        }
    }
    if dim > MAX_DIM {
        return Err(Error::invalid(format!("dense oracle limited to {MAX_DIM} rows")));
    }
    let mut l = vec![T::zero(); dim * dim];
    for &(a, b, c) in edges {
        let (ia, ib) = (keep[a], keep[b]);
        if ia != usize::MAX {
            l[ia * dim + ia] += c;
        }
        if ib != usize::MAX {
            l[ib * dim + ib] += c;
        }
        if ia != usize::MAX && ib != usize::MAX {
            l[ia * dim + ib] -= c;
            l[ib * dim + ia] -= c;
        }
    }
    let mut scale = vec![T::zero(); dim];
    for v in 0..n {
        if keep[v] != usize::MAX {
            if !(mass[v] > T::zero()) {
                return Err(Error::invalid("dense oracle needs positive masses"));
            }
            scale[keep[v]] = mass[v].sqrt().recip();
        }
    }
    for i in 0..dim {
        for j in 0..dim {
            l[i * dim + j] *= scale[i] * scale[j];
        }
    }
    symmetric_eigenvalues(&l, dim)
}
