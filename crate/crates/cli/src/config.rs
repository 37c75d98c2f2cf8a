//! Run configuration: a TOML file with `[dataset]`, `[train]`, `[eval]`,
//! `[bench]` and `[theory]` sections, patched by `--set section.key=value`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sgnn_core::dataset::{generate_sbm, load_dataset, DatasetFiles};
use sgnn_core::module::{Activation, Psi};
use sgnn_core::optim::OptimKind;
use sgnn_core::{Data, LossKind, PropKind, SbmSpec, StackConfig};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub bench: BenchSection,
    pub theory: TheorySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: DatasetSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
            bench: BenchSection::default(),
            theory: TheorySection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// `sbm` or `files`.
    pub source: String,
    /// Directory holding `graph.tsv`, `features.csv` and optionally
    /// `labels.txt` and `split.txt`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub graph: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub features: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<PathBuf>,
    pub blocks: usize,
    pub nodes_per_block: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub feature_noise: f64,
    /// Generator seed; the run seed when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            source: "sbm".into(),
            dir: None,
            graph: None,
            features: None,
            labels: None,
            split: None,
            blocks: 4,
            nodes_per_block: 250,
            p_in: 0.1,
            p_out: 0.01,
            feature_dim: 32,
            feature_noise: 1.0,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// Module output widths `d₁..d_L`; `d₀` comes from the features.
    pub dims: Vec<usize>,
    pub eta: f64,
    /// Outer epochs; `⌈100 / L⌉` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    /// Steps per module visit; one pass `⌈n / batch_size⌉` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inner_iters: Option<usize>,
    pub batch_size: usize,
    pub lr: f64,
    /// `adam` or `sgd`.
    pub optimizer: String,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// `gae` or `classification`.
    pub loss: String,
    /// `gcn`, `gcn_power` or `ssgc`.
    pub prop: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prop_m: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prop_alpha: Option<f64>,
    /// One per module (`linear`, `relu`, `tanh`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub activations: Option<Vec<String>>,
    /// `identity` or `tanh`.
    pub psi: String,
    pub bt_rounds: usize,
    /// Fill the `wall_ms` trace column. Off by default so traces are
    /// reproducible byte for byte.
    pub trace_timing: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            dims: vec![128, 64],
            eta: 1e3,
            epochs: None,
            inner_iters: None,
            batch_size: 128,
            lr: 1e-3,
            optimizer: "adam".into(),
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            loss: "gae".into(),
            prop: "gcn".into(),
            prop_m: None,
            prop_alpha: None,
            activations: None,
            psi: "identity".into(),
            bt_rounds: 5,
            trace_timing: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// `clustering` or `classification`; follows the loss when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    pub kmeans_restarts: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            task: None,
            kmeans_restarts: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    /// Node counts; each is split evenly over `dataset.blocks`.
    pub sizes: Vec<usize>,
    /// Outer epochs per size.
    pub epochs: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            sizes: vec![1000, 10000],
            epochs: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TheorySection {
    pub trials: usize,
    pub n: usize,
    pub d: usize,
    pub k: usize,
    /// `all`, `theorem1`, `corollary_lowrank`, `theorem2` or `generic`.
    pub plant: String,
}

impl Default for TheorySection {
    fn default() -> Self {
        Self {
            trials: 100,
            n: 60,
            d: 20,
            k: 8,
            plant: "all".into(),
        }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Parses an override value as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_err(format!("--set expects key=value, got {assignment:?}")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(config_err(format!("bad key {key:?}")));
    }
    let mut cur = table;
    for part in &path[..path.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| config_err(format!("{part} in {key:?} is not a section")))?;
    }
    cur.insert(path[path.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    /// Reads `path` (if any), applies overrides and the seed flag, and
    /// rejects unknown keys.
    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| config_err(format!("cannot read {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| config_err(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        if let Some(s) = seed {
            let s = i64::try_from(s).map_err(|_| config_err("seed must fit in a signed 64-bit integer"))?;
            table.insert("seed".into(), toml::Value::Integer(s));
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| config_err(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the resolved configuration text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn sbm_spec(&self, nodes_per_block: Option<usize>) -> SbmSpec {
        let d = &self.dataset;
        SbmSpec {
            blocks: d.blocks,
            nodes_per_block: nodes_per_block.unwrap_or(d.nodes_per_block),
            p_in: d.p_in,
            p_out: d.p_out,
            feature_dim: d.feature_dim,
            feature_noise: d.feature_noise,
            seed: d.seed.unwrap_or(self.seed),
        }
    }

    pub fn load_data(&self) -> Result<Data, CliError> {
        let d = &self.dataset;
        match d.source.as_str() {
            "sbm" => Ok(generate_sbm(&self.sbm_spec(None))?),
            "files" => {
                let base = d.dir.as_deref().map(DatasetFiles::in_dir);
                let pick = |explicit: &Option<PathBuf>, fallback: Option<PathBuf>| explicit.clone().or(fallback);
                let graph = pick(&d.graph, base.as_ref().map(|b| b.graph.clone()))
                    .ok_or_else(|| config_err("dataset.graph (or dataset.dir) is required"))?;
                let features = pick(&d.features, base.as_ref().map(|b| b.features.clone()))
                    .ok_or_else(|| config_err("dataset.features (or dataset.dir) is required"))?;
                // optional files in a directory are used only when present
                let optional = |explicit: &Option<PathBuf>, fallback: Option<PathBuf>| match explicit {
                    Some(p) => Some(p.clone()),
                    None => fallback.filter(|p| p.exists()),
                };
                let labels = optional(&d.labels, base.as_ref().and_then(|b| b.labels.clone()));
                let split = optional(&d.split, base.as_ref().and_then(|b| b.split.clone()));
                Ok(load_dataset(&graph, &features, labels.as_deref(), split.as_deref())?)
            }
            other => Err(config_err(format!("dataset.source must be sbm or files, got {other:?}"))),
        }
    }

    pub fn loss(&self) -> Result<LossKind, CliError> {
        LossKind::parse(&self.train.loss)
            .ok_or_else(|| config_err(format!("train.loss must be gae or classification, got {:?}", self.train.loss)))
    }

    pub fn prop(&self) -> Result<PropKind, CliError> {
        let t = &self.train;
        let kind = match t.prop.as_str() {
            "gcn" => {
                if t.prop_m.is_some() || t.prop_alpha.is_some() {
                    return Err(config_err("train.prop_m / prop_alpha need prop = gcn_power or ssgc"));
                }
                PropKind::GcnFirstOrder
            }
            "gcn_power" => PropKind::GcnPower(t.prop_m.unwrap_or(2)),
            "ssgc" => match PropKind::SSGC_DEFAULT {
                PropKind::SsgcAverage { m, alpha } => PropKind::SsgcAverage {
                    m: t.prop_m.unwrap_or(m),
                    alpha: t.prop_alpha.unwrap_or(alpha),
                },
                _ => unreachable!(),
            },
            other => return Err(config_err(format!("train.prop must be gcn, gcn_power or ssgc, got {other:?}"))),
        };
        kind.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(kind)
    }

    /// The trainer configuration for features of width `input_dim`.
    pub fn stack_config(&self, input_dim: usize) -> Result<StackConfig, CliError> {
        let t = &self.train;
        let loss = self.loss()?;
        let mut dims = vec![input_dim];
        dims.extend(&t.dims);
        let l = t.dims.len().max(1);
        let optimizer = match t.optimizer.as_str() {
            "adam" => OptimKind::Adam {
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.adam_eps,
            },
            "sgd" => OptimKind::Sgd,
            other => return Err(config_err(format!("train.optimizer must be adam or sgd, got {other:?}"))),
        };
        let activations = t
            .activations
            .as_ref()
            .map(|names| {
                names
                    .iter()
                    .map(|n| Activation::parse(n).ok_or_else(|| config_err(format!("unknown activation {n:?}"))))
                    .collect::<Result<Vec<_>, _>>()
            })
            .transpose()?;
        let psi = match t.psi.as_str() {
            "identity" => Psi::Identity,
            "tanh" => Psi::Tanh,
            other => return Err(config_err(format!("train.psi must be identity or tanh, got {other:?}"))),
        };
        let cfg = StackConfig {
            dims,
            eta: t.eta,
            epochs: t.epochs.unwrap_or(100usize.div_ceil(l)),
            inner_iters: t.inner_iters,
            batch_size: t.batch_size,
            lr: t.lr,
            optimizer,
            weight_decay: t.weight_decay,
            loss,
            prop: self.prop()?,
            activations,
            psi,
            seed: self.seed,
            bt_rounds: t.bt_rounds,
            record_timing: t.trace_timing,
        };
        cfg.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(cfg)
    }

    pub fn eval_task(&self) -> Result<EvalTask, CliError> {
        match self.eval.task.as_deref() {
            Some("clustering") => Ok(EvalTask::Clustering),
            Some("classification") => Ok(EvalTask::Classification),
            Some(other) => Err(config_err(format!(
                "eval.task must be clustering or classification, got {other:?}"
            ))),
            None => Ok(match self.loss()? {
                LossKind::Gae => EvalTask::Clustering,
                LossKind::Classification => EvalTask::Classification,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalTask {
    Clustering,
    Classification,
}
