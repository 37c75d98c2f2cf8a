//! Clustering and classification metrics: k-means, Hungarian-matched
//! accuracy, NMI and argmax accuracy.

use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix as PfMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::linalg::DenseMatrix;
use crate::{Error, Result, Scalar};

pub const KMEANS_RESTARTS: usize = 10;
pub const KMEANS_MAX_ITERS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    pub assignments: Vec<usize>,
    pub centroids: DenseMatrix<f64>,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(row: &[f64], centroids: &DenseMatrix<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.rows() {
        let d = sq_dist(row, centroids.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_pp(x: &DenseMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> DenseMatrix<f64> {
    let n = x.rows();
    let mut centroids = DenseMatrix::zeros(k, x.cols());
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(x.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            // every point already coincides with a centroid
            rng.random_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(x.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), centroids.row(c)));
        }
    }
    centroids
}

fn lloyd(x: &DenseMatrix<f64>, mut centroids: DenseMatrix<f64>, max_iters: usize) -> ClusterResult {
    let (n, d) = x.shape();
    let k = centroids.rows();
    let mut assignments = vec![usize::MAX; n];
    let mut inertia = f64::INFINITY;
    for _ in 0..max_iters {
        let mut changed = false;
        let mut new_inertia = 0.0;
        for (i, a) in assignments.iter_mut().enumerate() {
            let (c, dist) = nearest(x.row(i), &centroids);
            if *a != c {
                *a = c;
                changed = true;
            }
            new_inertia += dist;
        }
        assert!(
            new_inertia <= inertia * (1.0 + 1e-12) + 1e-12,
            "k-means inertia increased: {inertia} -> {new_inertia}"
        );
        inertia = new_inertia;
        if !changed {
            break;
        }
        let mut sums: DenseMatrix<f64> = DenseMatrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &a) in assignments.iter().enumerate() {
            counts[a] += 1;
            for (s, &v) in sums.row_mut(a).iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            // an emptied cluster keeps its old centroid
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, &s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            }
        }
    }
    // final inertia against the final centroids
    let inertia = (0..n).map(|i| sq_dist(x.row(i), centroids.row(assignments[i]))).sum();
    ClusterResult {
        assignments,
        centroids,
        inertia,
    }
}

/// Best-inertia k-means over `restarts` k-means++ seedings; restart `r` uses
/// seed `seed + r`.
pub fn kmeans<T: Scalar>(x: &DenseMatrix<T>, k: usize, seed: u64, restarts: usize) -> Result<ClusterResult> {
    let n = x.rows();
    if k == 0 || k > n {
        return Err(Error::Contract(format!("k-means needs 1 ≤ k ≤ rows, got k = {k}, rows = {n}")));
    }
    x.ensure_finite("k-means input")?;
    let x: DenseMatrix<f64> = x.cast();
    let runs: Vec<ClusterResult> = (0..restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r as u64));
            lloyd(&x, kmeans_pp(&x, k, &mut rng), KMEANS_MAX_ITERS)
        })
        .collect();
    // ties go to the earliest restart
    let best = runs
        .into_iter()
        .reduce(|a, b| if b.inertia < a.inertia { b } else { a })
        .expect("at least one restart");
    Ok(best)
}

fn check_lengths(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Contract(format!(
            "label vectors differ in length: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

fn relabel(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut ids: Vec<usize> = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let dense = labels.iter().map(|l| ids.binary_search(l).expect("present")).collect();
    (dense, ids.len())
}

fn contingency(pred: &[usize], truth: &[usize]) -> (Vec<Vec<usize>>, usize, usize) {
    let (p, kp) = relabel(pred);
    let (t, kt) = relabel(truth);
    let mut table = vec![vec![0usize; kt]; kp];
    for (&a, &b) in p.iter().zip(&t) {
        table[a][b] += 1;
    }
    (table, kp, kt)
}

/// Fraction of matches under the best one-to-one map from predicted clusters
/// to classes, solved exactly on the confusion matrix.
pub fn clustering_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(pred, truth)?;
    if pred.is_empty() {
        return Err(Error::Contract("clustering accuracy of zero items".into()));
    }
    let (table, kp, kt) = contingency(pred, truth);
    let size = kp.max(kt);
    let rows: Vec<Vec<i64>> = (0..size)
        .map(|a| (0..size).map(|b| if a < kp && b < kt { table[a][b] as i64 } else { 0 }).collect())
        .collect();
    let weights = PfMatrix::from_rows(rows).expect("square table");
    let (matched, _) = kuhn_munkres(&weights);
    Ok(matched as f64 / pred.len() as f64)
}

/// Mutual information over the arithmetic mean of the two entropies; two
/// single-cluster partitions give 0.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(pred, truth)?;
    if pred.is_empty() {
        return Err(Error::Contract("NMI of zero items".into()));
    }
    let n = pred.len() as f64;
    let (table, kp, kt) = contingency(pred, truth);
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum::<usize>() as f64).collect();
    let cols: Vec<f64> = (0..kt).map(|b| (0..kp).map(|a| table[a][b]).sum::<usize>() as f64).collect();
    let entropy = |counts: &[f64]| -> f64 {
        counts
            .iter()
            .filter(|&&c| c > 0.0)
            .map(|&c| {
                let p = c / n;
                -p * p.ln()
            })
            .sum()
    };
    let (hp, ht) = (entropy(&rows), entropy(&cols));
    let mut mi = 0.0;
    for a in 0..kp {
        for b in 0..kt {
            let c = table[a][b] as f64;
            if c > 0.0 {
                mi += c / n * (c * n / (rows[a] * cols[b])).ln();
            }
        }
    }
    let denom = 0.5 * (hp + ht);
    if denom <= 0.0 {
        return Ok(0.0);
    }
    Ok((mi / denom).clamp(0.0, 1.0))
}

/// Row-wise argmax; ties resolve to the lowest index.
pub fn argmax_rows<T: Scalar>(logits: &DenseMatrix<T>) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Accuracy of row-wise argmax predictions over `index_set`.
pub fn classification_accuracy<T: Scalar>(logits: &DenseMatrix<T>, truth: &[usize], index_set: &[usize]) -> Result<f64> {
    if logits.rows() != truth.len() {
        return Err(Error::shape(
            "classification_accuracy",
            format!("{} rows of scores for {} labels", logits.rows(), truth.len()),
        ));
    }
    label_accuracy(&argmax_rows(logits), truth, index_set)
}

/// Accuracy of already-decided labels over `index_set`.
pub fn label_accuracy(pred: &[usize], truth: &[usize], index_set: &[usize]) -> Result<f64> {
    check_lengths(pred, truth)?;
    if index_set.is_empty() {
        return Err(Error::Contract("accuracy over an empty index set".into()));
    }
    let mut hits = 0usize;
    for &i in index_set {
        if i >= truth.len() {
            return Err(Error::Contract(format!("index {i} out of range for {} rows", truth.len())));
        }
        hits += (pred[i] == truth[i]) as usize;
    }
    Ok(hits as f64 / index_set.len() as f64)
}
