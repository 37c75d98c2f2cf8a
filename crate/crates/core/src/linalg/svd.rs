use super::{canonical_sign, complete_orthonormal, DenseMatrix};
use crate::{Error, Result, Scalar};

const MAX_SWEEPS: usize = 100;

/// Thin singular value decomposition `A = U · diag(σ) · Vᵀ`.
///
/// `u` is `n × p`, `vt` is `p × d` with `p = min(n, d)`. Columns of `u` that
/// belong to numerically zero singular values are filled in with an
/// orthonormal completion, so `u` always has orthonormal columns.
#[derive(Debug, Clone)]
pub struct SvdResult<T> {
    pub u: DenseMatrix<T>,
    pub sigma: Vec<T>,
    pub vt: DenseMatrix<T>,
}

impl<T: Scalar> SvdResult<T> {
    /// Singular values below `1e-10 · σ₀` count as zero.
    pub fn rank_cutoff(&self) -> T {
        self.sigma.first().copied().unwrap_or(T::zero()) * T::c(1e-10)
    }

    pub fn rank(&self) -> usize {
        let cut = self.rank_cutoff();
        self.sigma.iter().filter(|&&s| s > cut).count()
    }

    pub fn reconstruct(&self) -> DenseMatrix<T> {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (j, &s) in self.sigma.iter().enumerate() {
                us[(i, j)] *= s;
            }
        }
        us.matmul(&self.vt).expect("svd factors are conformable")
    }

    /// `V` as a `d × p` matrix.
    pub fn v(&self) -> DenseMatrix<T> {
        self.vt.transpose()
    }
}

/// One-sided (Hestenes) Jacobi SVD.
pub fn svd<T: Scalar>(a: &DenseMatrix<T>) -> Result<SvdResult<T>> {
    if a.rows() == 0 || a.cols() == 0 {
        return Err(Error::Contract("svd of an empty matrix".into()));
    }
    a.ensure_finite("svd input")?;
    if a.rows() >= a.cols() {
        jacobi_tall(a)
    } else {
        // A = (Aᵀ)ᵀ = (U' Σ V'ᵀ)ᵀ = V' Σ U'ᵀ
        let t = jacobi_tall(&a.transpose())?;
        let mut res = SvdResult {
            u: t.vt.transpose(),
            sigma: t.sigma,
            vt: t.u.transpose(),
        };
        fix_signs(&mut res);
        Ok(res)
    }
}

fn jacobi_tall<T: Scalar>(a: &DenseMatrix<T>) -> Result<SvdResult<T>> {
    let (n, d) = a.shape();
    // cols[j] is column j of the working matrix, v[j] column j of V
    let mut cols: Vec<Vec<T>> = (0..d).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<T>> = (0..d)
        .map(|j| {
            let mut e = vec![T::zero(); d];
            e[j] = T::one();
            e
        })
        .collect();

    let tol = T::c(1e-12).max(T::epsilon() * T::c(8.0));
    let total: T = a.data().iter().map(|&x| x * x).sum();
    let tiny = total * T::epsilon() * T::epsilon();

    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..d {
            for q in (p + 1)..d {
                let alpha: T = cols[p].iter().map(|&x| x * x).sum();
                let beta: T = cols[q].iter().map(|&x| x * x).sum();
                let gamma: T = cols[p].iter().zip(&cols[q]).map(|(&x, &y)| x * y).sum();
                if alpha <= tiny || beta <= tiny {
                    continue;
                }
                if gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::c(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numeric(format!(
            "Jacobi SVD did not converge within {MAX_SWEEPS} sweeps"
        )));
    }

    let mut order: Vec<(T, usize)> = cols
        .iter()
        .enumerate()
        .map(|(j, c)| (c.iter().map(|&x| x * x).sum::<T>().sqrt(), j))
        .collect();
    order.sort_by(|x, y| y.0.partial_cmp(&x.0).expect("finite norms").then(x.1.cmp(&y.1)));

    let sigma: Vec<T> = order.iter().map(|&(s, _)| s).collect();
    let cut = sigma[0] * T::c(1e-10);
    let rank = sigma.iter().filter(|&&s| s > cut && s > T::zero()).count();

    let mut u_rank = DenseMatrix::zeros(n, rank);
    for (slot, &(s, j)) in order.iter().take(rank).enumerate() {
        let col: Vec<T> = cols[j].iter().map(|&x| x / s).collect();
        u_rank.set_column(slot, &col);
    }
    let u = if rank < d {
        complete_orthonormal(&u_rank, d)
    } else {
        u_rank
    };
    let mut vt = DenseMatrix::zeros(d, d);
    for (slot, &(_, j)) in order.iter().enumerate() {
        vt.row_mut(slot).copy_from_slice(&v[j]);
    }
    let mut res = SvdResult { u, sigma, vt };
    fix_signs(&mut res);
    Ok(res)
}

fn rotate<T: Scalar>(cols: &mut [Vec<T>], p: usize, q: usize, c: T, s: T) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, yq) = (*x, *y);
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

fn fix_signs<T: Scalar>(res: &mut SvdResult<T>) {
    for j in 0..res.u.cols() {
        if canonical_sign(&mut res.u, j, T::c(1e-12)) {
            for x in res.vt.row_mut(j) {
                *x = -*x;
            }
        }
    }
}
