//! Dense row-major matrices and the small set of factorizations the engine
//! needs: products, Frobenius geometry, one-sided Jacobi SVD and the cyclic
//! Jacobi symmetric eigensolver.

mod eig;
mod svd;

use std::fmt;
use std::ops::{Index, IndexMut};

use rayon::prelude::*;

use crate::{Error, Result, Scalar};

pub use eig::{sym_eig, SymEigResult};
pub use svd::{svd, SvdResult};

/// Products with at least this many multiply-adds are split across threads
/// by output row. Each row is reduced in a fixed order either way.
const PAR_FLOPS: usize = 1 << 18;

#[derive(Clone, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "DenseMatrix::new",
                format!("{} values for a {rows}x{cols} matrix", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn filled(rows: usize, cols: usize, v: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from nested rows. Panics on ragged input; meant for
    /// literals in tests and examples.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.as_ref().len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.as_ref().len(), c, "ragged rows");
            data.extend_from_slice(row.as_ref());
        }
        Self { rows: r, cols: c, data }
    }

    pub fn diag(values: &[T]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self.data[i * self.cols + j]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[T]) {
        debug_assert_eq!(values.len(), self.rows);
        for (i, &v) in values.iter().enumerate() {
            self.data[i * self.cols + j] = v;
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::Numeric(format!("non-finite entries in {what}")))
        }
    }

    /// `self · b`.
    pub fn matmul(&self, b: &Self) -> Result<Self> {
        if self.cols != b.rows {
            return Err(Error::shape(
                "matmul",
                format!("{}x{} times {}x{}", self.rows, self.cols, b.rows, b.cols),
            ));
        }
        let (n, k, m) = (self.rows, self.cols, b.cols);
        let mut out = Self::zeros(n, m);
        if m == 0 {
            return Ok(out);
        }
        let kernel = |(i, out_row): (usize, &mut [T])| {
            let a_row = &self.data[i * k..(i + 1) * k];
            for (p, &a) in a_row.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let b_row = &b.data[p * m..(p + 1) * m];
                for (o, &bv) in out_row.iter_mut().zip(b_row) {
                    *o += a * bv;
                }
            }
        };
        if n * k * m >= PAR_FLOPS {
            out.data.par_chunks_mut(m).enumerate().for_each(kernel);
        } else {
            out.data.chunks_mut(m).enumerate().for_each(kernel);
        }
        out.ensure_finite("matmul result")?;
        Ok(out)
    }

    /// `selfᵀ · b` without materializing the transpose.
    pub fn t_matmul(&self, b: &Self) -> Result<Self> {
        if self.rows != b.rows {
            return Err(Error::shape(
                "t_matmul",
                format!("({}x{})ᵀ times {}x{}", self.rows, self.cols, b.rows, b.cols),
            ));
        }
        let (k, n, m) = (self.rows, self.cols, b.cols);
        let mut out = Self::zeros(n, m);
        for p in 0..k {
            let a_row = &self.data[p * n..(p + 1) * n];
            let b_row = &b.data[p * m..(p + 1) * m];
            for (i, &a) in a_row.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let out_row = &mut out.data[i * m..(i + 1) * m];
                for (o, &bv) in out_row.iter_mut().zip(b_row) {
                    *o += a * bv;
                }
            }
        }
        out.ensure_finite("t_matmul result")?;
        Ok(out)
    }

    /// `self · bᵀ`.
    pub fn matmul_t(&self, b: &Self) -> Result<Self> {
        if self.cols != b.cols {
            return Err(Error::shape(
                "matmul_t",
                format!("{}x{} times ({}x{})ᵀ", self.rows, self.cols, b.rows, b.cols),
            ));
        }
        let (n, k, m) = (self.rows, self.cols, b.rows);
        let mut out = Self::zeros(n, m);
        if m == 0 {
            return Ok(out);
        }
        let kernel = |(i, out_row): (usize, &mut [T])| {
            let a_row = &self.data[i * k..(i + 1) * k];
            for (j, o) in out_row.iter_mut().enumerate() {
                let b_row = &b.data[j * k..(j + 1) * k];
                *o = a_row.iter().zip(b_row).map(|(&x, &y)| x * y).sum();
            }
        };
        if n * k * m >= PAR_FLOPS {
            out.data.par_chunks_mut(m).enumerate().for_each(kernel);
        } else {
            out.data.chunks_mut(m).enumerate().for_each(kernel);
        }
        out.ensure_finite("matmul_t result")?;
        Ok(out)
    }

    fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    /// `self += alpha · other`.
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                "axpy",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    /// Entrywise (trace) inner product `⟨A, B⟩ = Σ aᵢⱼ bᵢⱼ`.
    pub fn inner(&self, other: &Self) -> Result<T> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                "inner",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape");
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        if self.rows != self.cols {
            return false;
        }
        let scale = T::one().max(self.max_abs());
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                if (self[(i, j)] - self[(j, i)]).abs() > tol * scale {
                    return false;
                }
            }
        }
        true
    }

    /// Copies the listed rows, in order, into a new `rows.len() × cols` matrix.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let mut out = Self::zeros(rows.len(), self.cols);
        for (o, &r) in rows.iter().enumerate() {
            if r >= self.rows {
                return Err(Error::Contract(format!(
                    "row index {r} out of range for {} rows",
                    self.rows
                )));
            }
            out.row_mut(o).copy_from_slice(self.row(r));
        }
        Ok(out)
    }

    /// Leading `cols` columns.
    pub fn take_cols(&self, cols: usize) -> Self {
        assert!(cols <= self.cols);
        Self::from_fn(self.rows, cols, |i, j| self[(i, j)])
    }

    pub fn is_identity(&self) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| {
                (0..self.cols).all(|j| {
                    let v = self.data[i * self.cols + j];
                    if i == j {
                        v == T::one()
                    } else {
                        v == T::zero()
                    }
                })
            })
    }

    pub fn cast<U: Scalar>(&self) -> DenseMatrix<U> {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::c(v.as_f64())).collect(),
        }
    }
}

impl<T> Index<(usize, usize)> for DenseMatrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for DenseMatrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl<T: fmt::Debug> fmt::Debug for DenseMatrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            writeln!(f, "  {:?}", &row[..row.len().min(8)])?;
        }
        write!(f, "]")
    }
}

pub fn matmul<T: Scalar>(a: &DenseMatrix<T>, b: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    a.matmul(b)
}

pub fn frobenius_norm<T: Scalar>(a: &DenseMatrix<T>) -> T {
    a.frobenius_norm()
}

/// Angle between two equal-shape matrices under the trace inner product,
/// in `[0, π]`.
pub fn matrix_angle<T: Scalar>(b1: &DenseMatrix<T>, b2: &DenseMatrix<T>) -> Result<T> {
    let inner = b1.inner(b2)?;
    let (n1, n2) = (b1.frobenius_norm(), b2.frobenius_norm());
    if n1 == T::zero() || n2 == T::zero() {
        return Err(Error::Contract("matrix_angle of a zero-norm matrix".into()));
    }
    let cos = (inner / (n1 * n2)).max(-T::one()).min(T::one());
    Ok(cos.acos())
}

/// Extends `basis` (orthonormal columns) to `target` orthonormal columns by
/// Gram–Schmidt against the canonical unit vectors.
pub fn complete_orthonormal<T: Scalar>(basis: &DenseMatrix<T>, target: usize) -> DenseMatrix<T> {
    let n = basis.rows();
    assert!(target <= n, "cannot hold {target} orthonormal columns in R^{n}");
    let mut cols: Vec<Vec<T>> = (0..basis.cols()).map(|j| basis.column(j)).collect();
    let mut candidate = 0;
    while cols.len() < target && candidate < n {
        let mut v = vec![T::zero(); n];
        v[candidate] = T::one();
        candidate += 1;
        // two passes of modified Gram–Schmidt
        for _ in 0..2 {
            for c in &cols {
                let d: T = c.iter().zip(&v).map(|(&a, &b)| a * b).sum();
                for (x, &y) in v.iter_mut().zip(c) {
                    *x -= d * y;
                }
            }
        }
        let norm = v.iter().map(|&x| x * x).sum::<T>().sqrt();
        if norm > T::c(1e-6) {
            for x in &mut v {
                *x /= norm;
            }
            cols.push(v);
        }
    }
    debug_assert_eq!(cols.len(), target);
    let mut out = DenseMatrix::zeros(n, target);
    for (j, c) in cols.iter().enumerate() {
        out.set_column(j, c);
    }
    out
}

/// Flips a column so its first entry with magnitude above `tol` is positive.
/// Returns whether a flip happened.
pub(crate) fn canonical_sign<T: Scalar>(m: &mut DenseMatrix<T>, j: usize, tol: T) -> bool {
    let lead = (0..m.rows()).map(|i| m[(i, j)]).find(|v| v.abs() > tol);
    if matches!(lead, Some(v) if v < T::zero()) {
        for i in 0..m.rows() {
            m[(i, j)] = -m[(i, j)];
        }
        true
    } else {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DenseMatrix<f64> {
        DenseMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn naive(a: &DenseMatrix<f64>, b: &DenseMatrix<f64>) -> DenseMatrix<f64> {
        let mut out = DenseMatrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for p in 0..a.cols() {
                    s += a[(i, p)] * b[(p, j)];
                }
                out[(i, j)] = s;
            }
        }
        out
    }

    #[test]
    fn new_rejects_wrong_length() {
        assert!(DenseMatrix::<f64>::new(2, 2, vec![1.0; 3]).is_err());
    }

    #[test]
    fn identity_times_b_is_b() {
        let b = DenseMatrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        assert_eq!(DenseMatrix::identity(2).matmul(&b).unwrap(), b);
    }

    #[test]
    fn hand_product() {
        let a = DenseMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let b = DenseMatrix::from_rows(&[[0.0], [1.0]]);
        assert_eq!(a.matmul(&b).unwrap(), DenseMatrix::from_rows(&[[2.0], [4.0]]));
    }

    #[test]
    fn matmul_shape_error() {
        let a = DenseMatrix::<f64>::zeros(2, 3);
        let b = DenseMatrix::<f64>::zeros(2, 3);
        assert!(matches!(a.matmul(&b), Err(Error::Shape { .. })));
    }

    #[test]
    fn random_5x7_by_7x3_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(&mut rng, 5, 7);
        let b = random(&mut rng, 7, 3);
        let fast = a.matmul(&b).unwrap();
        assert!(fast.max_abs_diff(&naive(&a, &b)) <= 1e-12);
    }

    #[test]
    fn matmul_agrees_with_oracle_on_200_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let (n, k, m) = (
                rng.random_range(1..12),
                rng.random_range(1..12),
                rng.random_range(1..12),
            );
            let a = random(&mut rng, n, k);
            let b = random(&mut rng, k, m);
            let want = naive(&a, &b);
            let got = a.matmul(&b).unwrap();
            let scale = want.frobenius_norm().max(1e-300);
            assert!(got.sub(&want).unwrap().frobenius_norm() / scale <= 1e-12);
            // transposed variants route through different loops
            let got_tn = a.transpose().t_matmul(&b).unwrap();
            let got_nt = a.matmul_t(&b.transpose()).unwrap();
            assert!(got_tn.sub(&want).unwrap().frobenius_norm() / scale <= 1e-12);
            assert!(got_nt.sub(&want).unwrap().frobenius_norm() / scale <= 1e-12);
        }
    }

    #[test]
    fn parallel_path_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, 130, 70);
        let b = random(&mut rng, 70, 40);
        assert!(a.matmul(&b).unwrap().max_abs_diff(&naive(&a, &b)) <= 1e-12);
    }

    #[test]
    fn frobenius_examples() {
        assert_eq!(frobenius_norm(&DenseMatrix::<f64>::zeros(3, 4)), 0.0);
        assert!((frobenius_norm(&DenseMatrix::<f64>::identity(3)) - 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(frobenius_norm(&DenseMatrix::from_rows(&[[3.0, 4.0]])), 5.0);
    }

    #[test]
    fn matrix_angle_examples() {
        let b = DenseMatrix::<f64>::from_rows(&[[1.0, -2.0], [0.5, 3.0]]);
        assert!(matrix_angle(&b, &b).unwrap().abs() < 1e-7);
        assert!((matrix_angle(&b, &b.scale(-1.0)).unwrap() - std::f64::consts::PI).abs() < 1e-7);
        let swap = DenseMatrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]);
        let ang = matrix_angle(&DenseMatrix::identity(2), &swap).unwrap();
        assert!((ang - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert!(matrix_angle(&b, &DenseMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn select_rows_bounds() {
        let m = DenseMatrix::<f64>::identity(3);
        assert!(m.select_rows(&[3]).is_err());
        assert_eq!(m.select_rows(&[]).unwrap().shape(), (0, 3));
        assert_eq!(m.select_rows(&[2]).unwrap().row(0), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn completion_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random(&mut rng, 9, 3);
        let u = svd(&a).unwrap().u;
        let full = complete_orthonormal(&u, 9);
        let gram = full.t_matmul(&full).unwrap();
        assert!(gram.max_abs_diff(&DenseMatrix::identity(9)) < 1e-12);
    }

    #[test]
    fn f32_matrices_work() {
        let a = DenseMatrix::<f32>::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let p = a.matmul(&DenseMatrix::identity(2)).unwrap();
        assert_eq!(p, a);
        assert_eq!(a.cast::<f64>()[(1, 1)], 4.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn mat(r: usize, c: usize) -> impl Strategy<Value = DenseMatrix<f64>> {
            prop::collection::vec(-10.0..10.0f64, r * c)
                .prop_map(move |d| DenseMatrix::new(r, c, d).unwrap())
        }

        proptest! {
            #[test]
            fn angle_symmetric_and_scale_invariant(
                a in mat(3, 4), b in mat(3, 4), s in 0.01..100.0f64, t in 0.01..100.0f64
            ) {
                prop_assume!(a.frobenius_norm() > 1e-6 && b.frobenius_norm() > 1e-6);
                let ab = matrix_angle(&a, &b).unwrap();
                let ba = matrix_angle(&b, &a).unwrap();
                let scaled = matrix_angle(&a.scale(s), &b.scale(t)).unwrap();
                prop_assert!((ab - ba).abs() < 1e-12);
                prop_assert!((ab - scaled).abs() < 1e-7);
                prop_assert!((0.0..=std::f64::consts::PI).contains(&ab));
            }
        }
    }
}
