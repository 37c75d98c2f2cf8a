//! Plain-text dataset formats and the stochastic block model generator.
//!
//! Formats (all UTF-8, decimal point only):
//!
//! - graph: one edge per line, `src<TAB>dst[<TAB>weight]`, 0-indexed, lines
//!   starting with `#` ignored. Reverse edges are added on load.
//! - features: CSV of reals, row `i` is node `i`, no header.
//! - labels: one integer per line.
//! - split: three lines `train: …`, `val: …`, `test: …` of space-separated
//!   indices.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::graph::SparseGraph;
use crate::linalg::DenseMatrix;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Dataset<T> {
    pub graph: SparseGraph<T>,
    pub features: DenseMatrix<T>,
    pub labels: Option<Vec<usize>>,
    pub split: Option<Split>,
    pub num_classes: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.graph.n();
        if self.features.rows() != n {
            return Err(Error::Contract(format!(
                "{} feature rows for {n} nodes",
                self.features.rows()
            )));
        }
        self.features.ensure_finite("features")?;
        if let Some(labels) = &self.labels {
            if labels.len() != n {
                return Err(Error::Contract(format!("{} labels for {n} nodes", labels.len())));
            }
            if let Some(&bad) = labels.iter().find(|&&l| l >= self.num_classes) {
                return Err(Error::Contract(format!(
                    "label {bad} outside [0, {})",
                    self.num_classes
                )));
            }
        }
        if let Some(split) = &self.split {
            let mut seen = vec![false; n];
            for &i in split.train.iter().chain(&split.val).chain(&split.test) {
                if i >= n {
                    return Err(Error::Contract(format!("split index {i} out of range")));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Contract(format!("split index {i} listed twice")));
                }
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        let g = &self.graph;
        let graph = SparseGraph::new(
            g.n(),
            g.row_ptr().to_vec(),
            g.col_idx().to_vec(),
            g.values().iter().map(|v| U::c(v.as_f64())).collect(),
        )
        .expect("casting preserves CSR validity");
        Dataset {
            graph,
            features: self.features.cast(),
            labels: self.labels.clone(),
            split: self.split.clone(),
            num_classes: self.num_classes,
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Reads a headerless CSV of reals.
pub fn read_matrix_csv<T: Scalar>(path: &Path) -> Result<DenseMatrix<T>> {
    let text = read(path)?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut count = 0;
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(path, ln + 1, format!("not a number: {field:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(path, ln + 1, "non-finite value"));
            }
            data.push(T::c(v));
            count += 1;
        }
        match cols {
            None => cols = Some(count),
            Some(c) if c != count => {
                return Err(parse_err(path, ln + 1, format!("{count} columns, expected {c}")))
            }
            _ => {}
        }
        rows += 1;
    }
    DenseMatrix::new(rows, cols.unwrap_or(0), data)
}

pub fn format_matrix_csv<T: Scalar>(m: &DenseMatrix<T>) -> String {
    let mut out = String::with_capacity(m.rows() * m.cols() * 12);
    for i in 0..m.rows() {
        for (j, v) in m.row(i).iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            // Display prints the shortest representation that round-trips
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

/// Writes through a sibling temp file and renames into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let mut tmp: PathBuf = path.to_path_buf();
    let name = path
        .file_name()
        .map(|n| format!(".{}.tmp", n.to_string_lossy()))
        .unwrap_or_else(|| ".tmp".into());
    tmp.set_file_name(name);
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_matrix_csv<T: Scalar>(path: &Path, m: &DenseMatrix<T>) -> Result<()> {
    write_atomic(path, format_matrix_csv(m).as_bytes())
}

fn read_edges<T: Scalar>(path: &Path, n: usize) -> Result<Vec<(usize, usize, T)>> {
    let text = read(path)?;
    let mut edges = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = t.split_whitespace().collect();
        if !(2..=3).contains(&fields.len()) {
            return Err(parse_err(path, ln + 1, "expected `src<TAB>dst[<TAB>weight]`"));
        }
        let idx = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| parse_err(path, ln + 1, format!("bad node index {s:?}")))
        };
        let (s, d) = (idx(fields[0])?, idx(fields[1])?);
        if s >= n || d >= n {
            return Err(parse_err(
                path,
                ln + 1,
                format!("edge {s} {d} references a node outside [0, {n}) (features have {n} rows)"),
            ));
        }
        if s == d {
            return Err(parse_err(
                path,
                ln + 1,
                format!("self-loop on node {s}; self-loops are added during normalization"),
            ));
        }
        let w = match fields.get(2) {
            Some(w) => w
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(path, ln + 1, format!("bad weight {w:?}")))?,
            None => 1.0,
        };
        edges.push((s, d, T::c(w)));
    }
    Ok(edges)
}

fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = read(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(ln, l)| {
            l.trim()
                .parse()
                .map_err(|_| parse_err(path, ln + 1, format!("bad label {l:?}")))
        })
        .collect()
}

fn read_split(path: &Path) -> Result<Split> {
    let text = read(path)?;
    let mut split = Split::default();
    let mut seen = [false; 3];
    for (ln, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let (key, rest) = t
            .split_once(':')
            .ok_or_else(|| parse_err(path, ln + 1, "expected `train:`, `val:` or `test:`"))?;
        let (slot, list) = match key.trim() {
            "train" => (0, &mut split.train),
            "val" => (1, &mut split.val),
            "test" => (2, &mut split.test),
            other => return Err(parse_err(path, ln + 1, format!("unknown split {other:?}"))),
        };
        if std::mem::replace(&mut seen[slot], true) {
            return Err(parse_err(path, ln + 1, format!("split {key:?} repeated")));
        }
        for tok in rest.split_whitespace() {
            list.push(
                tok.parse()
                    .map_err(|_| parse_err(path, ln + 1, format!("bad index {tok:?}")))?,
            );
        }
    }
    if seen != [true; 3] {
        return Err(parse_err(path, 0, "split file needs train, val and test lines"));
    }
    Ok(split)
}

/// Loads and validates a dataset; the adjacency is symmetrized.
pub fn load_dataset<T: Scalar>(
    graph_path: &Path,
    features_path: &Path,
    labels_path: Option<&Path>,
    split_path: Option<&Path>,
) -> Result<Dataset<T>> {
    let features: DenseMatrix<T> = read_matrix_csv(features_path)?;
    let n = features.rows();
    let edges = read_edges(graph_path, n)?;
    let graph = SparseGraph::from_edges(n, &edges, true)?;
    let labels = labels_path.map(read_labels).transpose()?;
    if let Some(l) = &labels {
        if l.len() != n {
            return Err(Error::Contract(format!(
                "{} has {} labels but features have {n} rows",
                labels_path.unwrap().display(),
                l.len()
            )));
        }
    }
    let num_classes = labels
        .as_ref()
        .and_then(|l| l.iter().max().map(|&m| m + 1))
        .unwrap_or(0);
    let split = split_path.map(read_split).transpose()?;
    let ds = Dataset {
        graph,
        features,
        labels,
        split,
        num_classes,
    };
    ds.validate()?;
    Ok(ds)
}

/// Paths written by [`save_dataset`].
#[derive(Debug, Clone)]
pub struct DatasetFiles {
    pub graph: PathBuf,
    pub features: PathBuf,
    pub labels: Option<PathBuf>,
    pub split: Option<PathBuf>,
}

impl DatasetFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            graph: dir.join("graph.tsv"),
            features: dir.join("features.csv"),
            labels: Some(dir.join("labels.txt")),
            split: Some(dir.join("split.txt")),
        }
    }
}

pub fn save_dataset<T: Scalar>(ds: &Dataset<T>, dir: &Path) -> Result<DatasetFiles> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = DatasetFiles::in_dir(dir);

    let mut g = String::from("# src\tdst[\tweight]\n");
    for (i, j, w) in ds.graph.edges() {
        if w == T::one() {
            let _ = writeln!(g, "{i}\t{j}");
        } else {
            let _ = writeln!(g, "{i}\t{j}\t{w}");
        }
    }
    write_atomic(&files.graph, g.as_bytes())?;
    write_matrix_csv(&files.features, &ds.features)?;

    match &ds.labels {
        Some(labels) => {
            let text: String = labels.iter().map(|l| format!("{l}\n")).collect();
            write_atomic(files.labels.as_ref().unwrap(), text.as_bytes())?;
        }
        None => files.labels = None,
    }
    match &ds.split {
        Some(split) => {
            let join = |v: &[usize]| v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ");
            let text = format!(
                "train: {}\nval: {}\ntest: {}\n",
                join(&split.train),
                join(&split.val),
                join(&split.test)
            );
            write_atomic(files.split.as_ref().unwrap(), text.as_bytes())?;
        }
        None => files.split = None,
    }
    Ok(files)
}

pub fn load_saved<T: Scalar>(files: &DatasetFiles) -> Result<Dataset<T>> {
    load_dataset(
        &files.graph,
        &files.features,
        files.labels.as_deref(),
        files.split.as_deref(),
    )
}

/// Planted-partition graph parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SbmSpec {
    pub blocks: usize,
    pub nodes_per_block: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub feature_noise: f64,
    pub seed: u64,
}

impl SbmSpec {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.nodes_per_block == 0 {
            return Err(Error::Config("SBM needs at least one block and one node".into()));
        }
        if !(0.0 <= self.p_out && self.p_out < self.p_in && self.p_in <= 1.0) {
            return Err(Error::Config(format!(
                "SBM probabilities must satisfy 0 ≤ p_out < p_in ≤ 1 (got p_in={}, p_out={})",
                self.p_in, self.p_out
            )));
        }
        if self.feature_dim < self.blocks {
            return Err(Error::Config(format!(
                "feature_dim {} cannot hold {} one-hot block centroids",
                self.feature_dim, self.blocks
            )));
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return Err(Error::Config("feature_noise must be a finite non-negative std".into()));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.blocks * self.nodes_per_block
    }
}

/// Samples an SBM instance. Node `i` belongs to block `i / nodes_per_block`.
pub fn generate_sbm<T: Scalar>(spec: &SbmSpec) -> Result<Dataset<T>> {
    spec.validate()?;
    let n = spec.n();
    let k = spec.nodes_per_block;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if i / k == j / k { spec.p_in } else { spec.p_out };
            if p > 0.0 && rng.random::<f64>() < p {
                edges.push((i, j, T::one()));
            }
        }
    }
    let graph = SparseGraph::from_edges(n, &edges, true)?;

    let labels: Vec<usize> = (0..n).map(|i| i / k).collect();
    let noise = Normal::new(0.0, spec.feature_noise)
        .map_err(|e| Error::Config(format!("feature noise: {e}")))?;
    let mut features = DenseMatrix::zeros(n, spec.feature_dim);
    for i in 0..n {
        let row = features.row_mut(i);
        for (j, v) in row.iter_mut().enumerate() {
            let centroid = if j == labels[i] { 1.0 } else { 0.0 };
            let eps = if spec.feature_noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            *v = T::c(centroid + eps);
        }
    }

    let mut split = Split::default();
    for b in 0..spec.blocks {
        let mut members: Vec<usize> = (b * k..(b + 1) * k).collect();
        members.shuffle(&mut rng);
        let tenth = ((k as f64 * 0.1).round() as usize).max(1);
        let n_train = tenth.min(k);
        let n_val = tenth.min(k - n_train);
        split.train.extend_from_slice(&members[..n_train]);
        split.val.extend_from_slice(&members[n_train..n_train + n_val]);
        split.test.extend_from_slice(&members[n_train + n_val..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();

    let ds = Dataset {
        graph,
        features,
        labels: Some(labels),
        split: Some(split),
        num_classes: spec.blocks,
    };
    ds.validate()?;
    Ok(ds)
}
