//! Sparse adjacency storage and the parameter-free propagation operators.
//!
//! A [`Propagator`] holds `P = D^{-1/2}(A + I)D^{-1/2}` in CSR form together
//! with how it is applied to features: once (`P·X`), `m` times (`Pᵐ·X`), or
//! as the averaged multi-hop filter `(1/m)·Σₗ ((1−α)·Pˡ·X + α·X)`. Powers are
//! always evaluated as repeated sparse-dense products.

use rayon::prelude::*;

use crate::linalg::DenseMatrix;
use crate::{Error, Result, Scalar};

/// Rows × feature-width above which sparse products fan out across threads.
const PAR_WORK: usize = 1 << 16;

/// Symmetric CSR adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraph<T> {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> SparseGraph<T> {
    /// Validates and wraps raw CSR arrays.
    pub fn new(n: usize, row_ptr: Vec<usize>, col_idx: Vec<usize>, values: Vec<T>) -> Result<Self> {
        if row_ptr.len() != n + 1 {
            return Err(Error::Contract(format!(
                "row_ptr has {} entries, expected {}",
                row_ptr.len(),
                n + 1
            )));
        }
        if row_ptr[0] != 0 || row_ptr[n] != col_idx.len() || col_idx.len() != values.len() {
            return Err(Error::Contract("row_ptr does not bracket col_idx/values".into()));
        }
        for i in 0..n {
            if row_ptr[i] > row_ptr[i + 1] {
                return Err(Error::Contract(format!("row_ptr decreases at row {i}")));
            }
            let cols = &col_idx[row_ptr[i]..row_ptr[i + 1]];
            if let Some(&bad) = cols.iter().find(|&&c| c >= n) {
                return Err(Error::Contract(format!("column {bad} out of range in row {i}")));
            }
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Contract(format!("row {i} not strictly sorted")));
            }
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Contract(format!("non-finite edge weight {v}")));
        }
        let g = Self {
            n,
            row_ptr,
            col_idx,
            values,
        };
        for i in 0..n {
            for (j, w) in g.neighbors(i) {
                match g.weight(j, i) {
                    Some(back) if back == w => {}
                    _ => {
                        return Err(Error::Contract(format!(
                            "adjacency not symmetric at ({i}, {j})"
                        )))
                    }
                }
            }
        }
        Ok(g)
    }

    /// Builds a graph from an edge list. With `symmetrize`, each edge is
    /// inserted in both directions; repeated edges must agree on weight.
    pub fn from_edges(n: usize, edges: &[(usize, usize, T)], symmetrize: bool) -> Result<Self> {
        let mut triples: Vec<(usize, usize, T)> = Vec::with_capacity(edges.len() * 2);
        for &(s, d, w) in edges {
            if s >= n || d >= n {
                return Err(Error::Contract(format!(
                    "edge ({s}, {d}) out of range for {n} nodes"
                )));
            }
            triples.push((s, d, w));
            if symmetrize && s != d {
                triples.push((d, s, w));
            }
        }
        triples.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(triples.len());
        let mut values = Vec::with_capacity(triples.len());
        let mut last: Option<(usize, usize)> = None;
        for (s, d, w) in triples {
            if last == Some((s, d)) {
                let prev = *values.last().expect("previous entry");
                if prev != w {
                    return Err(Error::Contract(format!(
                        "edge ({s}, {d}) listed with weights {prev} and {w}"
                    )));
                }
                continue;
            }
            last = Some((s, d));
            row_ptr[s + 1] += 1;
            col_idx.push(d);
            values.push(w);
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self::new(n, row_ptr, col_idx, values)
    }

    pub fn edgeless(n: usize) -> Self {
        Self {
            n,
            row_ptr: vec![0; n + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Stored nonzeros, i.e. `‖A‖₀` (each undirected edge counts twice).
    #[inline]
    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    pub fn degree(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    pub fn weight(&self, i: usize, j: usize) -> Option<T> {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()]
            .binary_search(&j)
            .ok()
            .map(|k| self.values[r.start + k])
    }

    pub fn to_dense(&self) -> DenseMatrix<T> {
        let mut m = DenseMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, w) in self.neighbors(i) {
                m[(i, j)] = w;
            }
        }
        m
    }

    /// Upper-triangle edge list `(i, j, w)` with `i ≤ j`.
    pub fn edges(&self) -> Vec<(usize, usize, T)> {
        (0..self.n)
            .flat_map(|i| {
                self.neighbors(i)
                    .filter(move |&(j, _)| j >= i)
                    .map(move |(j, w)| (i, j, w))
            })
            .collect()
    }

    /// Sparse–dense product for a single output row.
    #[inline]
    fn row_times(&self, i: usize, x: &DenseMatrix<T>, out: &mut [T]) {
        out.iter_mut().for_each(|o| *o = T::zero());
        for (j, w) in self.neighbors(i) {
            for (o, &xv) in out.iter_mut().zip(x.row(j)) {
                *o += w * xv;
            }
        }
    }

    /// `self · x`, reduced per row in CSR order.
    pub fn spmm(&self, x: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        if x.rows() != self.n {
            return Err(Error::shape(
                "spmm",
                format!("{n}x{n} sparse times {}x{}", x.rows(), x.cols(), n = self.n),
            ));
        }
        let d = x.cols();
        let mut out = DenseMatrix::zeros(self.n, d);
        if d == 0 {
            return Ok(out);
        }
        if self.n * d >= PAR_WORK {
            out.data_mut()
                .par_chunks_mut(d)
                .enumerate()
                .for_each(|(i, row)| self.row_times(i, x, row));
        } else {
            out.data_mut()
                .chunks_mut(d)
                .enumerate()
                .for_each(|(i, row)| self.row_times(i, x, row));
        }
        Ok(out)
    }
}

/// How the normalized operator is applied to features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PropKind {
    /// `P·X`
    GcnFirstOrder,
    /// `Pᵐ·X`
    GcnPower(usize),
    /// `(1/m)·Σₗ₌₁..ₘ ((1−α)·Pˡ·X + α·X)`
    SsgcAverage { m: usize, alpha: f64 },
}

impl PropKind {
    /// Multi-hop averaging defaults.
    pub const SSGC_DEFAULT: PropKind = PropKind::SsgcAverage { m: 16, alpha: 0.05 };

    pub fn validate(&self) -> Result<()> {
        match *self {
            PropKind::GcnFirstOrder => Ok(()),
            PropKind::GcnPower(0) => Err(Error::Config("gcn_power needs m ≥ 1".into())),
            PropKind::GcnPower(_) => Ok(()),
            PropKind::SsgcAverage { m, alpha } => {
                if m == 0 {
                    Err(Error::Config("ssgc_average needs m ≥ 1".into()))
                } else if !(0.0..=1.0).contains(&alpha) {
                    Err(Error::Config(format!("ssgc_average alpha {alpha} outside [0, 1]")))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// The normalized propagation matrix and its application rule.
#[derive(Debug, Clone)]
pub struct Propagator<T> {
    matrix: SparseGraph<T>,
    kind: PropKind,
}

impl<T: Scalar> Propagator<T> {
    pub fn matrix(&self) -> &SparseGraph<T> {
        &self.matrix
    }

    pub fn kind(&self) -> PropKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.matrix.n
    }

    pub fn with_kind(mut self, kind: PropKind) -> Result<Self> {
        kind.validate()?;
        self.kind = kind;
        Ok(self)
    }

    /// `f₀(A, X)` for the configured kind.
    pub fn propagate(&self, x: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        self.check_rows(x)?;
        match self.kind {
            PropKind::GcnFirstOrder => self.matrix.spmm(x),
            PropKind::GcnPower(m) => {
                let mut cur = self.matrix.spmm(x)?;
                for _ in 1..m {
                    cur = self.matrix.spmm(&cur)?;
                }
                Ok(cur)
            }
            PropKind::SsgcAverage { m, alpha } => {
                let mut cur = x.clone();
                let mut acc = DenseMatrix::zeros(x.rows(), x.cols());
                for _ in 0..m {
                    cur = self.matrix.spmm(&cur)?;
                    ssgc_accumulate(acc.data_mut(), cur.data(), x.data(), alpha);
                }
                Ok(ssgc_finish(acc, m))
            }
        }
    }

    /// Selected rows of [`propagate`](Self::propagate), bit-identical to
    /// slicing the full product. Only the final hop is restricted to `rows`.
    pub fn spmm_rows(&self, x: &DenseMatrix<T>, rows: &[usize]) -> Result<DenseMatrix<T>> {
        self.check_rows(x)?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.n()) {
            return Err(Error::Contract(format!(
                "row {bad} out of range for {} nodes",
                self.n()
            )));
        }
        let d = x.cols();
        let last_hop = |src: &DenseMatrix<T>| {
            let mut out = DenseMatrix::zeros(rows.len(), d);
            for (o, &r) in rows.iter().enumerate() {
                self.matrix.row_times(r, src, out.row_mut(o));
            }
            out
        };
        match self.kind {
            PropKind::GcnFirstOrder => Ok(last_hop(x)),
            PropKind::GcnPower(m) => {
                let mut cur = x.clone();
                for _ in 1..m {
                    cur = self.matrix.spmm(&cur)?;
                }
                Ok(last_hop(&cur))
            }
            PropKind::SsgcAverage { m, alpha } => {
                let x_rows = x.select_rows(rows)?;
                let mut cur = x.clone();
                let mut acc = DenseMatrix::zeros(rows.len(), d);
                for _ in 0..m {
                    ssgc_accumulate(acc.data_mut(), last_hop(&cur).data(), x_rows.data(), alpha);
                    if acc.rows() > 0 {
                        cur = self.matrix.spmm(&cur)?;
                    }
                }
                Ok(ssgc_finish(acc, m))
            }
        }
    }

    fn check_rows(&self, x: &DenseMatrix<T>) -> Result<()> {
        if x.rows() != self.n() {
            Err(Error::shape(
                "propagate",
                format!("{} feature rows for {} nodes", x.rows(), self.n()),
            ))
        } else {
            Ok(())
        }
    }
}

fn ssgc_accumulate<T: Scalar>(acc: &mut [T], hop: &[T], x: &[T], alpha: f64) {
    let (a, keep) = (T::c(alpha), T::c(1.0 - alpha));
    for ((o, &h), &xv) in acc.iter_mut().zip(hop).zip(x) {
        *o += keep * h + a * xv;
    }
}

fn ssgc_finish<T: Scalar>(acc: DenseMatrix<T>, m: usize) -> DenseMatrix<T> {
    let inv = T::one() / T::c(m as f64);
    acc.map(|v| v * inv)
}

/// `P = D^{-1/2}(A + I)D^{-1/2}` with `D` the degree matrix of `A + I`.
pub fn normalize_gcn<T: Scalar>(g: &SparseGraph<T>) -> Result<Propagator<T>> {
    if let Some(w) = g.values.iter().find(|&&w| w < T::zero()) {
        return Err(Error::Contract(format!("negative edge weight {w}")));
    }
    let n = g.n;
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::with_capacity(g.nnz() + n);
    let mut values = Vec::with_capacity(g.nnz() + n);
    row_ptr.push(0);
    for i in 0..n {
        let mut placed_diag = false;
        for (j, w) in g.neighbors(i) {
            if !placed_diag && j >= i {
                if j == i {
                    col_idx.push(i);
                    values.push(w + T::one());
                    placed_diag = true;
                    continue;
                }
                col_idx.push(i);
                values.push(T::one());
                placed_diag = true;
            }
            col_idx.push(j);
            values.push(w);
        }
        if !placed_diag {
            col_idx.push(i);
            values.push(T::one());
        }
        row_ptr.push(col_idx.len());
    }
    let deg: Vec<T> = (0..n)
        .map(|i| values[row_ptr[i]..row_ptr[i + 1]].iter().copied().sum())
        .collect();
    // one rounding in the square root keeps symmetric entries exact
    for i in 0..n {
        for k in row_ptr[i]..row_ptr[i + 1] {
            let j = col_idx[k];
            values[k] = values[k] / (deg[i] * deg[j]).sqrt();
        }
    }
    Ok(Propagator {
        matrix: SparseGraph {
            n,
            row_ptr,
            col_idx,
            values,
        },
        kind: PropKind::GcnFirstOrder,
    })
}

/// Convenience: normalize and apply.
pub fn propagate<T: Scalar>(p: &Propagator<T>, x: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    p.propagate(x)
}

pub fn spmm_rows<T: Scalar>(
    p: &Propagator<T>,
    x: &DenseMatrix<T>,
    rows: &[usize],
) -> Result<DenseMatrix<T>> {
    p.spmm_rows(x, rows)
}
