use super::{canonical_sign, DenseMatrix};
use crate::{Error, Result, Scalar};

const MAX_SWEEPS: usize = 100;

/// Spectral decomposition `A = V · diag(λ) · Vᵀ` of a symmetric matrix,
/// eigenvalues in descending order.
#[derive(Debug, Clone)]
pub struct SymEigResult<T> {
    pub vectors: DenseMatrix<T>,
    pub values: Vec<T>,
}

impl<T: Scalar> SymEigResult<T> {
    pub fn reconstruct(&self) -> DenseMatrix<T> {
        let n = self.values.len();
        let mut vl = self.vectors.clone();
        for i in 0..n {
            for (j, &l) in self.values.iter().enumerate() {
                vl[(i, j)] *= l;
            }
        }
        vl.matmul_t(&self.vectors).expect("square factors")
    }
}

/// Cyclic Jacobi eigenvalue iteration.
pub fn sym_eig<T: Scalar>(a: &DenseMatrix<T>) -> Result<SymEigResult<T>> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Contract(format!(
            "sym_eig needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    a.ensure_finite("sym_eig input")?;
    if !a.is_symmetric(T::c(1e-10)) {
        return Err(Error::Contract("sym_eig input is not symmetric".into()));
    }
    // symmetrize exactly; the tolerance above admits tiny asymmetry
    let mut m = DenseMatrix::from_fn(n, n, |i, j| (a[(i, j)] + a[(j, i)]) / T::c(2.0));
    let mut v = DenseMatrix::<T>::identity(n);

    let norm = m.frobenius_norm();
    let tol = T::c(1e-12).max(T::epsilon() * T::c(8.0)) * norm;

    let off = |m: &DenseMatrix<T>| -> T {
        let mut s = T::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                s += m[(i, j)] * m[(i, j)];
            }
        }
        (s * T::c(2.0)).sqrt()
    };

    let mut converged = off(&m) <= tol;
    let mut sweeps = 0;
    while !converged && sweeps < MAX_SWEEPS {
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (T::c(2.0) * apq);
                let t = if theta.is_infinite() {
                    T::zero()
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt())
                };
                if t == T::zero() {
                    m[(p, q)] = T::zero();
                    m[(q, p)] = T::zero();
                    continue;
                }
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                // M ← Jᵀ M J with J the (p, q) Givens rotation
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                m[(p, q)] = T::zero();
                m[(q, p)] = T::zero();
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        converged = off(&m) <= tol;
    }
    if !converged {
        return Err(Error::Numeric(format!(
            "Jacobi eigensolver did not converge within {MAX_SWEEPS} sweeps"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| {
        m[(y, y)]
            .partial_cmp(&m[(x, x)])
            .expect("finite eigenvalues")
            .then(x.cmp(&y))
    });
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = DenseMatrix::zeros(n, n);
    for (slot, &i) in order.iter().enumerate() {
        vectors.set_column(slot, &v.column(i));
    }
    for j in 0..n {
        canonical_sign(&mut vectors, j, T::c(1e-12));
    }
    Ok(SymEigResult { vectors, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sym(rng: &mut ChaCha8Rng, n: usize) -> DenseMatrix<f64> {
        let g = DenseMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        g.add(&g.transpose()).unwrap()
    }

    fn residual(a: &DenseMatrix<f64>, r: &SymEigResult<f64>) -> f64 {
        let av = a.matmul(&r.vectors).unwrap();
        let vl = r.vectors.matmul(&DenseMatrix::diag(&r.values)).unwrap();
        av.sub(&vl).unwrap().frobenius_norm() / a.frobenius_norm().max(1.0)
    }

    #[test]
    fn diagonal_values_sorted() {
        let a = DenseMatrix::diag(&[2.0, 5.0, -1.0]);
        let r = sym_eig(&a).unwrap();
        assert_eq!(r.values, vec![5.0, 2.0, -1.0]);
    }

    #[test]
    fn swap_matrix() {
        let a = DenseMatrix::<f64>::from_rows(&[[0.0, 1.0], [1.0, 0.0]]);
        let r = sym_eig(&a).unwrap();
        assert!((r.values[0] - 1.0).abs() < 1e-14 && (r.values[1] + 1.0).abs() < 1e-14);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((r.vectors[(0, 0)] - h).abs() < 1e-14 && (r.vectors[(1, 0)] - h).abs() < 1e-14);
        assert!((r.vectors[(0, 1)] - h).abs() < 1e-14 && (r.vectors[(1, 1)] + h).abs() < 1e-14);
    }

    #[test]
    fn random_symmetric_8x8() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_sym(&mut rng, 8);
        let r = sym_eig(&a).unwrap();
        assert!(residual(&a, &r) <= 1e-8);
        let vtv = r.vectors.t_matmul(&r.vectors).unwrap();
        assert!(vtv.max_abs_diff(&DenseMatrix::identity(8)) <= 1e-8);
        assert!(r.values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn reconstruction_over_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for n in 1..25 {
            let a = random_sym(&mut rng, n);
            let r = sym_eig(&a).unwrap();
            let rel = r.reconstruct().sub(&a).unwrap().frobenius_norm() / a.frobenius_norm();
            assert!(rel <= 1e-8, "n={n} rel={rel}");
        }
    }

    #[test]
    fn asymmetric_rejected() {
        let a = DenseMatrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]]);
        assert!(matches!(sym_eig(&a), Err(Error::Contract(_))));
        assert!(sym_eig(&DenseMatrix::<f64>::zeros(2, 3)).is_err());
    }
}
