//! Matrix-free iterative solvers for symmetric operators: projected
//! conjugate gradients and Lanczos with full reorthogonalization.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

/// Remove the components along each of the orthonormal vectors `basis`.
pub fn project_out<T: Real>(v: &mut [T], basis: &[&[T]]) {
    for u in basis {
        let c = dot(v, u);
        axpy(-c, u, v);
    }
}

#[derive(Debug, Clone)]
pub struct CgOutcome<T> {
    pub x: Vec<T>,
    pub iterations: usize,
    /// Final relative residual `‖b − Ax‖ / ‖b‖`.
    pub residual: T,
}

/// Solve `A x = b` for symmetric positive semidefinite `A` whose kernel is
/// spanned by the orthonormal vectors `kernel`; `b` and the iterates are kept
/// orthogonal to the kernel.
pub fn conjugate_gradient<T: Real, A: Fn(&[T], &mut [T])>(
    apply: A,
    b: &[T],
    kernel: &[&[T]],
    tol: T,
    max_iter: usize,
) -> Result<CgOutcome<T>> {
    let n = b.len();
    let mut r = b.to_vec();
    project_out(&mut r, kernel);
    let b_norm = norm(&r);
    let mut x = vec![T::zero(); n];
    if b_norm == T::zero() {
        return Ok(CgOutcome {
            x,
            iterations: 0,
            residual: T::zero(),
        });
    }
    let mut p = r.clone();
    let mut ap = vec![T::zero(); n];
    let mut rr = dot(&r, &r);
    for it in 1..=max_iter {
        apply(&p, &mut ap);
        project_out(&mut ap, kernel);
        let pap = dot(&p, &ap);
        if pap <= T::zero() {
            return Err(Error::NonConvergence {
                method: "conjugate gradient (indefinite direction)",
                achieved: (rr.sqrt() / b_norm).as_f64(),
            });
        }
        let alpha = rr / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= tol * b_norm {
            // confirm against the true residual
            apply(&x, &mut ap);
            let mut true_r: Vec<T> = b.iter().zip(&ap).map(|(&bi, &ai)| bi - ai).collect();
            project_out(&mut true_r, kernel);
            let res = norm(&true_r) / b_norm;
            if res <= tol * T::of(10.0) {
                project_out(&mut x, kernel);
                return Ok(CgOutcome {
                    x,
                    iterations: it,
                    residual: res,
                });
            }
            r = true_r;
            p = r.clone();
            rr = dot(&r, &r);
            continue;
        }
        let beta = rr_new / rr;
        for (pi, &ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rr = rr_new;
    }
    Err(Error::NonConvergence {
        method: "conjugate gradient",
        achieved: (rr.sqrt() / b_norm).as_f64(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenEstimate {
    pub value: f64,
    /// `‖A v − θ v‖` for the returned Ritz pair.
    pub residual: f64,
    pub iterations: usize,
}

/// Lowest eigenvalue of a symmetric operator on the orthogonal complement of
/// the orthonormal vectors `deflate`, by Lanczos with full
/// reorthogonalization. The start vector is drawn from `seed`.
pub fn lanczos_lowest<A: Fn(&[f64], &mut [f64])>(
    apply: A,
    n: usize,
    deflate: &[&[f64]],
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<EigenEstimate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    project_out(&mut v, deflate);
    let nv = norm(&v);
    if nv == 0.0 {
        return Err(Error::InvalidArgument("deflated space is empty".into()));
    }
    v.iter_mut().for_each(|x| *x /= nv);
    let dim = n.saturating_sub(deflate.len()).max(1);
    let max_iter = max_iter.min(dim);
    let mut basis: Vec<Vec<f64>> = vec![v];
    let mut alphas = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut w = vec![0.0; n];
    let mut last = EigenEstimate {
        value: f64::NAN,
        residual: f64::INFINITY,
        iterations: 0,
    };
    for j in 0..max_iter {
        apply(&basis[j], &mut w);
        let a = dot(&w, &basis[j]);
        alphas.push(a);
        // two passes of classical Gram-Schmidt against everything kept
        for _ in 0..2 {
            project_out(&mut w, deflate);
            for q in &basis {
                let c = dot(&w, q);
                axpy(-c, q, &mut w);
            }
        }
        let b = norm(&w);
        let m = alphas.len();
        let check = m == max_iter || b <= 1e-14 * a.abs().max(1.0) || m % 5 == 0 || m < 5;
        if check {
            let t = DMatrix::from_fn(m, m, |i, k| {
                if i == k {
                    alphas[i]
                } else if i + 1 == k {
                    betas[i]
                } else if k + 1 == i {
                    betas[k]
                } else {
                    0.0
                }
            });
            let eig = SymmetricEigen::new(t);
            let (idx, &theta) = eig
                .eigenvalues
                .iter()
                .enumerate()
                .min_by(|x, y| x.1.total_cmp(y.1))
                .expect("nonempty");
            let residual = (b * eig.eigenvectors[(m - 1, idx)]).abs();
            last = EigenEstimate {
                value: theta,
                residual,
                iterations: m,
            };
            if residual <= tol * theta.abs().max(1e-300) || b <= 1e-14 * a.abs().max(1.0) {
                return Ok(last);
            }
        }
        if m == max_iter {
            break;
        }
        betas.push(b);
        w.iter_mut().for_each(|x| *x /= b);
        basis.push(std::mem::replace(&mut w, vec![0.0; n]));
    }
    if last.residual <= tol * last.value.abs().max(1e-300) {
        Ok(last)
    } else {
        Err(Error::NonConvergence {
            method: "Lanczos",
            achieved: last.residual,
        })
    }
}
