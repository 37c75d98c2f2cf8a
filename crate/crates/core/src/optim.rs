//! Seeded mini-batch machinery: SGD/Adam updates and batch iteration.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::linalg::DenseMatrix;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimKind {
    pub const ADAM: OptimKind = OptimKind::Adam {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
}

impl Default for OptimKind {
    fn default() -> Self {
        Self::ADAM
    }
}

/// Per-tensor optimizer state.
#[derive(Debug, Clone)]
pub struct OptimState<T> {
    pub kind: OptimKind,
    pub lr: f64,
    pub weight_decay: f64,
    first: Option<DenseMatrix<T>>,
    second: Option<DenseMatrix<T>>,
    step_count: u64,
}

impl<T: Scalar> OptimState<T> {
    pub fn new(kind: OptimKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            weight_decay: 0.0,
            first: None,
            second: None,
            step_count: 0,
        }
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn reset(&mut self) {
        self.first = None;
        self.second = None;
        self.step_count = 0;
    }

    /// Applies one update in place. `name` identifies the tensor in errors.
    pub fn apply_update(&mut self, param: &mut DenseMatrix<T>, grad: &DenseMatrix<T>, name: &str) -> Result<()> {
        if param.shape() != grad.shape() {
            return Err(Error::shape(
                "apply_update",
                format!("{name}: param {:?} vs grad {:?}", param.shape(), grad.shape()),
            ));
        }
        if !grad.is_finite() {
            return Err(Error::Numeric(format!("non-finite gradient for {name}")));
        }
        self.step_count += 1;
        let lr = T::c(self.lr);
        let wd = T::c(self.weight_decay);
        match self.kind {
            OptimKind::Sgd => {
                for (p, &g) in param.data_mut().iter_mut().zip(grad.data()) {
                    let g = g + wd * *p;
                    *p -= lr * g;
                }
            }
            OptimKind::Adam { beta1, beta2, eps } => {
                let (rows, cols) = param.shape();
                let m = self.first.get_or_insert_with(|| DenseMatrix::zeros(rows, cols));
                let v = self.second.get_or_insert_with(|| DenseMatrix::zeros(rows, cols));
                let t = self.step_count as i32;
                let (b1, b2) = (T::c(beta1), T::c(beta2));
                let bc1 = T::one() - b1.powi(t);
                let bc2 = T::one() - b2.powi(t);
                let eps = T::c(eps);
                for (((p, &g), mi), vi) in param
                    .data_mut()
                    .iter_mut()
                    .zip(grad.data())
                    .zip(m.data_mut())
                    .zip(v.data_mut())
                {
                    let g = g + wd * *p;
                    *mi = b1 * *mi + (T::one() - b1) * g;
                    *vi = b2 * *vi + (T::one() - b2) * g * g;
                    let m_hat = *mi / bc1;
                    let v_hat = *vi / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        param.ensure_finite(name)
    }
}

/// A seeded permutation of `0..n` chunked into `⌈n/m⌉` batches; the last may
/// be short. The permutation is a pure function of `(seed, epoch)`.
pub fn batch_iterator(n: usize, m: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if m == 0 {
        return Err(Error::Config("batch size must be ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    Ok(perm.chunks(m).map(<[usize]>::to_vec).collect())
}

/// SplitMix64 finalizer, for deriving independent sub-seeds.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Endless batch supply: successive passes of [`batch_iterator`] under one
/// derived seed.
#[derive(Debug)]
pub struct BatchStream {
    n: usize,
    m: usize,
    seed: u64,
    pass: u64,
    queue: VecDeque<Vec<usize>>,
}

impl BatchStream {
    pub fn new(n: usize, m: usize, seed: u64) -> Result<Self> {
        if m == 0 {
            return Err(Error::Config("batch size must be ≥ 1".into()));
        }
        if n == 0 {
            return Err(Error::Contract("cannot draw batches from zero nodes".into()));
        }
        Ok(Self {
            n,
            m,
            seed,
            pass: 0,
            queue: VecDeque::new(),
        })
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.queue.is_empty() {
            let batches = batch_iterator(self.n, self.m, self.seed, self.pass).expect("validated in new");
            self.queue.extend(batches);
            self.pass += 1;
        }
        self.queue.pop_front().expect("non-empty pass")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step() {
        let mut s = OptimState::<f64>::new(OptimKind::Sgd, 0.1);
        let mut p = DenseMatrix::filled(1, 1, 1.0);
        s.apply_update(&mut p, &DenseMatrix::filled(1, 1, 1.0), "p").unwrap();
        assert!((p[(0, 0)] - 0.9).abs() < 1e-15);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + eps)
        for g in [3.0, -0.02, 250.0] {
            let lr = 0.001;
            let mut s = OptimState::<f64>::new(OptimKind::ADAM, lr);
            let mut p = DenseMatrix::filled(1, 1, 0.5);
            s.apply_update(&mut p, &DenseMatrix::filled(1, 1, g), "p").unwrap();
            let want = 0.5 - lr * g / (g.abs() + 1e-8);
            assert!((p[(0, 0)] - want).abs() < 1e-15);
            assert!(((0.5 - p[(0, 0)]).abs() - lr).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_gradient() {
        let mut sgd = OptimState::<f64>::new(OptimKind::Sgd, 0.5);
        let mut p = DenseMatrix::filled(2, 2, 1.5);
        sgd.apply_update(&mut p, &DenseMatrix::zeros(2, 2), "p").unwrap();
        assert_eq!(p, DenseMatrix::filled(2, 2, 1.5));
        let mut adam = OptimState::<f64>::new(OptimKind::ADAM, 0.5);
        adam.apply_update(&mut p, &DenseMatrix::zeros(2, 2), "p").unwrap();
        assert!(p.max_abs_diff(&DenseMatrix::filled(2, 2, 1.5)) <= 1e-8);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = OptimState::<f64>::new(OptimKind::ADAM, 0.1);
        let mut p = DenseMatrix::zeros(1, 2);
        let g = DenseMatrix::from_rows(&[[0.0, f64::NAN]]);
        match s.apply_update(&mut p, &g, "W_2") {
            Err(Error::Numeric(msg)) => assert!(msg.contains("W_2")),
            other => panic!("{other:?}"),
        }
        assert!(s.apply_update(&mut p, &DenseMatrix::zeros(2, 1), "W_2").is_err());
    }

    #[test]
    fn batches_partition_indices() {
        let b = batch_iterator(4, 2, 7, 0).unwrap();
        assert_eq!(b.len(), 2);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3]);
    }

    #[test]
    fn batches_deterministic_and_epoch_dependent() {
        assert_eq!(batch_iterator(50, 8, 3, 2).unwrap(), batch_iterator(50, 8, 3, 2).unwrap());
        assert_ne!(batch_iterator(50, 8, 3, 2).unwrap(), batch_iterator(50, 8, 3, 3).unwrap());
    }

    #[test]
    fn short_last_batch() {
        let sizes: Vec<usize> = batch_iterator(5, 2, 0, 0).unwrap().iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![2, 2, 1]);
        assert!(batch_iterator(5, 0, 0, 0).is_err());
    }

    #[test]
    fn stream_cycles_through_passes() {
        let mut s = BatchStream::new(5, 2, 9).unwrap();
        let first: Vec<Vec<usize>> = (0..3).map(|_| s.next_batch()).collect();
        assert_eq!(first, batch_iterator(5, 2, 9, 0).unwrap());
        let second: Vec<Vec<usize>> = (0..3).map(|_| s.next_batch()).collect();
        assert_eq!(second, batch_iterator(5, 2, 9, 1).unwrap());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn every_index_once_per_epoch(n in 0usize..300, m in 1usize..64, seed: u64, epoch in 0u64..100) {
                let batches = batch_iterator(n, m, seed, epoch).unwrap();
                prop_assert_eq!(batches.len(), n.div_ceil(m));
                let mut seen = vec![0u8; n];
                for b in &batches {
                    prop_assert!(!b.is_empty() && b.len() <= m);
                    for &i in b { seen[i] += 1; }
                }
                prop_assert!(seen.iter().all(|&c| c == 1));
            }
        }
    }
}
