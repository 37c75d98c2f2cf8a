//! Stacked training schedule.
//!
//! Each outer epoch runs
//!
//! 1. a forward sweep over modules `1..L−1`: feed the previous output in,
//!    reset `U` to the identity, propagate once, fit `W` by mini-batch steps
//!    (forward loss only on the first epoch, forward + `η`·backward loss
//!    afterwards) and recompute the full-graph output;
//! 2. the last module, fitting `W` and `U` on the forward loss;
//! 3. `bt_rounds` backward sweeps over modules `L−1..1`: module `t+1`
//!    publishes `Z = ψ(X_{t+1}·U_{t+1})` and module `t` fits `W` and `U` on
//!    forward loss + `η`·`‖H_t − Z‖²`.
//!
//! Mini-batches are rows of the cached propagated input; the graph is never
//! sampled.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use crate::dataset::Dataset;
use crate::graph::{normalize_gcn, PropKind, Propagator, SparseGraph};
use crate::linalg::DenseMatrix;
use crate::losses::{bt_loss, chain_to_params, gae_loss, softmax_ce_loss, LossValueGrad};
use crate::module::{init_module, Activation, Psi, SeparableModule};
use crate::optim::{mix_seed, BatchStream, OptimKind, OptimState};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Graph auto-encoder: reconstruct `A[B,B]` from `σ(H_B·H_Bᵀ)`.
    Gae,
    /// Softmax regression of training labels through a per-module head.
    Classification,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Gae => "gae",
            LossKind::Classification => "classification",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gae" => Some(LossKind::Gae),
            "classification" => Some(LossKind::Classification),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Ft,
    Bt,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Ft => "FT",
            Phase::Bt => "BT",
        })
    }
}

/// Hyperparameters of a stacked run.
#[derive(Debug, Clone, PartialEq)]
pub struct StackConfig {
    /// `[d₀, d₁, …, d_L]`; `d₀` must equal the feature width.
    pub dims: Vec<usize>,
    pub eta: f64,
    /// Outer epochs `K`.
    pub epochs: usize,
    /// Mini-batch steps per module visit; `None` means one pass, `⌈n/m⌉`.
    pub inner_iters: Option<usize>,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimKind,
    pub weight_decay: f64,
    pub loss: LossKind,
    pub prop: PropKind,
    /// One per module; `None` picks relu everywhere except a linear final
    /// module for the auto-encoder loss.
    pub activations: Option<Vec<Activation>>,
    pub psi: Psi,
    pub seed: u64,
    pub bt_rounds: usize,
    /// Record per-update wall time in the trace.
    pub record_timing: bool,
}

impl StackConfig {
    /// Defaults: widths 128/64, `η = 10³`, batch 128, lr 1e-3, Adam, five
    /// backward rounds and `K = ⌈100 / L⌉`.
    pub fn new(input_dim: usize, loss: LossKind) -> Self {
        let dims = vec![input_dim, 128, 64];
        let layers = dims.len() - 1;
        Self {
            dims,
            eta: 1e3,
            epochs: 100usize.div_ceil(layers),
            inner_iters: None,
            batch_size: 128,
            lr: 1e-3,
            optimizer: OptimKind::ADAM,
            weight_decay: 0.0,
            loss,
            prop: PropKind::GcnFirstOrder,
            activations: None,
            psi: Psi::Identity,
            seed: 0,
            bt_rounds: 5,
            record_timing: false,
        }
    }

    pub fn num_modules(&self) -> usize {
        self.dims.len().saturating_sub(1)
    }

    pub fn activations(&self) -> Vec<Activation> {
        if let Some(a) = &self.activations {
            return a.clone();
        }
        let l = self.num_modules();
        (0..l)
            .map(|t| match self.loss {
                LossKind::Gae if t + 1 == l => Activation::Linear,
                _ => Activation::Relu,
            })
            .collect()
    }

    pub fn inner_iters_for(&self, n: usize) -> usize {
        self.inner_iters.unwrap_or_else(|| n.div_ceil(self.batch_size.max(1)))
    }

    /// Mini-batch updates a full run performs when no step is skipped.
    pub fn expected_updates(&self, n: usize) -> usize {
        let l = self.num_modules();
        let e = self.inner_iters_for(n);
        self.epochs * (l * e + self.bt_rounds * (l - 1) * e)
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.num_modules();
        if l == 0 {
            return Err(Error::Config("need at least one module (dims = [d0, d1, ...])".into()));
        }
        if let Some(t) = self.dims.iter().position(|&d| d == 0) {
            return Err(Error::Config(format!("dims[{t}] is zero")));
        }
        // module t emits d_t columns, module t+1 consumes d_t columns, so its
        // expected features Z_{t+1} (n × d_t) line up with H_t by construction
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("eta must be finite and ≥ 0, got {}", self.eta)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be ≥ 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.inner_iters == Some(0) {
            return Err(Error::Config("inner_iters must be ≥ 1".into()));
        }
        if let Some(a) = &self.activations {
            if a.len() != l {
                return Err(Error::Config(format!("{} activations for {l} modules", a.len())));
            }
        }
        self.prop.validate()
    }

    /// Checks this config against a dataset before any training starts.
    pub fn validate_for<T: Scalar>(&self, data: &Dataset<T>) -> Result<()> {
        self.validate()?;
        data.validate()?;
        if self.dims[0] != data.feature_dim() {
            return Err(Error::Config(format!(
                "dims[0] = {} but the features have {} columns",
                self.dims[0],
                data.feature_dim()
            )));
        }
        if self.loss == LossKind::Classification {
            if data.labels.is_none() {
                return Err(Error::Config("classification loss needs node labels".into()));
            }
            match &data.split {
                Some(s) if !s.train.is_empty() => {}
                _ => return Err(Error::Config("classification loss needs a non-empty train split".into())),
            }
            if data.num_classes == 0 {
                return Err(Error::Config("classification loss needs at least one class".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    /// 1-based outer epoch.
    pub epoch: usize,
    /// 1-based module index.
    pub module: usize,
    pub phase: Phase,
    /// Inner iteration within the module visit.
    pub iter: usize,
    pub loss: f64,
    /// Duration of this update, when timing is recorded.
    pub wall_ms: Option<f64>,
    /// Time since training started, when timing is recorded.
    pub at_ms: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
    /// Cumulative graph propagation time.
    pub preprocess_ms: f64,
    pub num_modules: usize,
}

impl TrainTrace {
    pub fn update_count(&self) -> usize {
        self.records.len()
    }

    /// Loss curve of the final module.
    pub fn final_module_curve(&self) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.module == self.num_modules)
            .map(|r| r.loss)
            .collect()
    }

    /// Per-update durations in milliseconds (empty unless timing was on).
    pub fn update_times_ms(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.wall_ms).collect()
    }

    /// `epoch,module,phase,iter,loss,wall_ms`; `wall_ms` is left empty when
    /// timing was not recorded.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,module,phase,iter,loss,wall_ms\n");
        for r in &self.records {
            let wall = r.wall_ms.map(|w| format!("{w:.6}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{:e},{}\n",
                r.epoch, r.module, r.phase, r.iter, r.loss, wall
            ));
        }
        out
    }
}

/// A trained stack: modules in order plus what is needed to run them.
#[derive(Debug, Clone)]
pub struct TrainedStack<T> {
    pub modules: Vec<SeparableModule<T>>,
    pub loss: LossKind,
    pub prop: PropKind,
}

impl<T: Scalar> TrainedStack<T> {
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.modules[0].in_dim()];
        dims.extend(self.modules.iter().map(|m| m.out_dim()));
        dims
    }
}

/// Full-graph forward chain with every `U = I`; returns the last module's
/// output `H_L`.
pub fn embed<T: Scalar>(stack: &TrainedStack<T>, data: &Dataset<T>) -> Result<DenseMatrix<T>> {
    let prop = normalize_gcn(&data.graph)?.with_kind(stack.prop)?;
    embed_with(stack, &prop, &data.features)
}

pub fn embed_with<T: Scalar>(
    stack: &TrainedStack<T>,
    prop: &Propagator<T>,
    features: &DenseMatrix<T>,
) -> Result<DenseMatrix<T>> {
    let mut x = features.clone();
    for m in &stack.modules {
        let xp = prop.propagate(&x)?;
        x = m.forward(&xp, false)?;
    }
    Ok(x)
}

/// Class scores `H_L·R_L` of a classification stack.
pub fn predict_logits<T: Scalar>(stack: &TrainedStack<T>, data: &Dataset<T>) -> Result<DenseMatrix<T>> {
    let h = embed(stack, data)?;
    let head = stack
        .modules
        .last()
        .and_then(|m| m.head.as_ref())
        .ok_or_else(|| Error::Config("stack has no classification head".into()))?;
    h.matmul(head)
}

/// `(n² − nnz) / nnz`, the positive-entry weight of the auto-encoder loss.
pub fn gae_pos_weight<T: Scalar>(graph: &SparseGraph<T>) -> T {
    let n = graph.n() as f64;
    let nnz = graph.nnz() as f64;
    if nnz == 0.0 {
        T::one()
    } else {
        T::c((n * n - nnz) / nnz)
    }
}

/// Dense `A[B,B]` with a unit diagonal. `pos` is scratch of length `n`
/// holding `usize::MAX` everywhere; it is restored before returning.
pub fn adjacency_block<T: Scalar>(graph: &SparseGraph<T>, batch: &[usize], pos: &mut [usize]) -> DenseMatrix<T> {
    let m = batch.len();
    for (slot, &i) in batch.iter().enumerate() {
        pos[i] = slot;
    }
    let mut adj = DenseMatrix::identity(m);
    for (a, &i) in batch.iter().enumerate() {
        for (j, _) in graph.neighbors(i) {
            let b = pos[j];
            if b != usize::MAX {
                adj[(a, b)] = T::one();
            }
        }
    }
    for &i in batch {
        pos[i] = usize::MAX;
    }
    adj
}

/// Auto-encoder loss over the whole graph, evaluated row by row so the dense
/// `n × n` logits are never held at once.
pub fn gae_full_loss<T: Scalar>(h: &DenseMatrix<T>, graph: &SparseGraph<T>, pos_weight: T) -> Result<T> {
    let n = h.rows();
    if n != graph.n() {
        return Err(Error::shape("gae_full_loss", format!("{n} rows for {} nodes", graph.n())));
    }
    let mut total = T::zero();
    let mut is_edge = vec![false; n];
    for i in 0..n {
        is_edge[i] = true;
        for (j, _) in graph.neighbors(i) {
            is_edge[j] = true;
        }
        let hi = h.row(i);
        let mut row_sum = T::zero();
        for (j, &edge) in is_edge.iter().enumerate() {
            let s: T = hi.iter().zip(h.row(j)).map(|(&a, &b)| a * b).sum();
            row_sum += if edge {
                pos_weight * softplus(-s)
            } else {
                softplus(s)
            };
        }
        total += row_sum;
        is_edge[i] = false;
        for (j, _) in graph.neighbors(i) {
            is_edge[j] = false;
        }
    }
    Ok(total / T::c((n * n) as f64))
}

#[inline]
fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Final-module forward loss at termination, over the whole graph: the
/// auto-encoder loss on all `n²` pairs, or training-split cross-entropy.
pub fn final_ft_loss<T: Scalar>(stack: &TrainedStack<T>, data: &Dataset<T>) -> Result<T> {
    let h = embed(stack, data)?;
    match stack.loss {
        LossKind::Gae => gae_full_loss(&h, &data.graph, gae_pos_weight(&data.graph)),
        LossKind::Classification => {
            let split = data.split.as_ref().ok_or_else(|| Error::Config("no split".into()))?;
            let labels = data.labels.as_ref().ok_or_else(|| Error::Config("no labels".into()))?;
            let head = stack.modules.last().and_then(|m| m.head.as_ref()).expect("classification head");
            let hb = h.select_rows(&split.train)?;
            let yb: Vec<usize> = split.train.iter().map(|&i| labels[i]).collect();
            Ok(softmax_ce_loss(&hb, head, &yb)?.value)
        }
    }
}

/// What the forward objective needs besides the module output.
#[derive(Debug)]
pub struct FtContext<'a, T> {
    pub kind: LossKind,
    pub graph: &'a SparseGraph<T>,
    pub pos_weight: T,
    pub labels: Option<&'a [usize]>,
    pub train_mask: Option<Vec<bool>>,
    scratch: Vec<usize>,
}

impl<'a, T: Scalar> FtContext<'a, T> {
    pub fn new(kind: LossKind, data: &'a Dataset<T>) -> Self {
        let train_mask = data.split.as_ref().map(|s| {
            let mut mask = vec![false; data.n()];
            for &i in &s.train {
                mask[i] = true;
            }
            mask
        });
        Self {
            kind,
            graph: &data.graph,
            pos_weight: gae_pos_weight(&data.graph),
            labels: data.labels.as_deref(),
            train_mask,
            scratch: vec![usize::MAX; data.n()],
        }
    }
}

/// Forward-objective value with gradients w.r.t. the module output and head.
#[derive(Debug, Clone)]
pub struct FtTerm<T> {
    pub value: T,
    pub grad_h: DenseMatrix<T>,
    pub grad_r: Option<DenseMatrix<T>>,
}

/// Result of asking for a forward-loss step on one batch.
#[derive(Debug, Clone)]
pub enum FtStep<T> {
    Step(LossValueGrad<T>),
    /// No term applies to this batch (no training nodes, or fewer than two
    /// rows for the auto-encoder loss).
    Skip,
}

fn ft_term<T: Scalar>(
    module: &SeparableModule<T>,
    h: &DenseMatrix<T>,
    batch: &[usize],
    ctx: &mut FtContext<'_, T>,
) -> Result<Option<FtTerm<T>>> {
    match ctx.kind {
        LossKind::Gae => {
            if batch.len() < 2 {
                return Ok(None);
            }
            let adj = adjacency_block(ctx.graph, batch, &mut ctx.scratch);
            let l = gae_loss(h, &adj, ctx.pos_weight)?;
            Ok(Some(FtTerm {
                value: l.value,
                grad_h: l.grad_h,
                grad_r: None,
            }))
        }
        LossKind::Classification => {
            let (labels, mask) = match (ctx.labels, ctx.train_mask.as_ref()) {
                (Some(l), Some(m)) => (l, m),
                _ => return Err(Error::Config("classification loss needs labels and a split".into())),
            };
            let slots: Vec<usize> = (0..batch.len()).filter(|&s| mask[batch[s]]).collect();
            if slots.is_empty() {
                return Ok(None);
            }
            let head = module
                .head
                .as_ref()
                .ok_or_else(|| Error::Config("classification module has no head".into()))?;
            let hb = h.select_rows(&slots)?;
            let yb: Vec<usize> = slots.iter().map(|&s| labels[batch[s]]).collect();
            let l = softmax_ce_loss(&hb, head, &yb)?;
            let mut grad_h = DenseMatrix::zeros(h.rows(), h.cols());
            for (k, &s) in slots.iter().enumerate() {
                grad_h.row_mut(s).copy_from_slice(l.grad_h.row(k));
            }
            Ok(Some(FtTerm {
                value: l.value,
                grad_h,
                grad_r: Some(l.grad_r),
            }))
        }
    }
}

/// The configured forward objective of `module` on one batch of propagated
/// rows, chained back to the module's parameters.
pub fn ft_loss_for<T: Scalar>(
    module: &SeparableModule<T>,
    x_prop_rows: &DenseMatrix<T>,
    batch: &[usize],
    use_u: bool,
    ctx: &mut FtContext<'_, T>,
) -> Result<FtStep<T>> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let h = module.forward(x_prop_rows, use_u)?;
    match ft_term(module, &h, batch, ctx)? {
        None => Ok(FtStep::Skip),
        Some(term) => {
            let mut g = chain_to_params(term.value, &term.grad_h, module, x_prop_rows, use_u)?;
            g.grad_r = term.grad_r;
            Ok(FtStep::Step(g))
        }
    }
}

struct ModuleSlot<T> {
    module: SeparableModule<T>,
    w_opt: OptimState<T>,
    u_opt: OptimState<T>,
    r_opt: OptimState<T>,
    /// Input features `X_t` fed during the latest forward sweep.
    input: Option<Arc<DenseMatrix<T>>>,
    /// `f₀(A, X_t)`.
    x_prop: Option<Arc<DenseMatrix<T>>>,
    /// Expected features `Z_{t+1}` from the latest backward visit.
    target: Option<DenseMatrix<T>>,
}

struct Visit {
    epoch: usize,
    t: usize,
    phase: Phase,
    round: usize,
    use_u: bool,
    with_bt: bool,
}

fn numeric(v: &Visit, e: Error) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!(
            "epoch {}, module {}, phase {}: {msg}",
            v.epoch,
            v.t + 1,
            v.phase
        )),
        other => other,
    }
}

struct Trainer<'a, T: Scalar> {
    cfg: &'a StackConfig,
    data: &'a Dataset<T>,
    prop: Propagator<T>,
    slots: Vec<ModuleSlot<T>>,
    ctx: FtContext<'a, T>,
    trace: TrainTrace,
    start: Instant,
}

impl<'a, T: Scalar> Trainer<'a, T> {
    fn new(cfg: &'a StackConfig, data: &'a Dataset<T>) -> Result<Self> {
        let prop = normalize_gcn(&data.graph)?.with_kind(cfg.prop)?;
        let acts = cfg.activations();
        let head = match cfg.loss {
            LossKind::Classification => Some(data.num_classes),
            LossKind::Gae => None,
        };
        let l = cfg.num_modules();
        let mut slots = Vec::with_capacity(l);
        for t in 0..l {
            let mut module = init_module(
                cfg.dims[t],
                cfg.dims[t + 1],
                acts[t],
                cfg.prop,
                mix_seed(cfg.seed, 0x5EED_0000 + t as u64),
                head,
            )?;
            module.psi = cfg.psi;
            let opt = || OptimState::new(cfg.optimizer, cfg.lr).with_weight_decay(cfg.weight_decay);
            slots.push(ModuleSlot {
                module,
                w_opt: opt(),
                u_opt: opt(),
                r_opt: opt(),
                input: None,
                x_prop: None,
                target: None,
            });
        }
        Ok(Self {
            cfg,
            data,
            prop,
            slots,
            ctx: FtContext::new(cfg.loss, data),
            trace: TrainTrace {
                num_modules: l,
                ..Default::default()
            },
            start: Instant::now(),
        })
    }

    /// Feeds `x` to module `t`: reset `U`, propagate once.
    fn feed(&mut self, t: usize, x: Arc<DenseMatrix<T>>) -> Result<()> {
        let started = Instant::now();
        let slot = &mut self.slots[t];
        slot.module.reset_u();
        slot.u_opt.reset();
        let xp = slot.module.preprocess(&self.prop, &x)?;
        slot.input = Some(x);
        slot.x_prop = Some(xp);
        self.trace.preprocess_ms += started.elapsed().as_secs_f64() * 1e3;
        Ok(())
    }

    fn visit(&mut self, v: Visit) -> Result<()> {
        let n = self.data.n();
        let cfg = self.cfg;
        let iters = cfg.inner_iters_for(n);
        let salt = ((((v.epoch as u64) << 20) | ((v.t as u64) << 8) | ((v.phase == Phase::Bt) as u64)) << 16)
            | v.round as u64;
        let mut stream = BatchStream::new(n, cfg.batch_size, mix_seed(cfg.seed, salt))?;
        let eta = T::c(cfg.eta);
        let last = v.t + 1 == self.slots.len();
        if v.phase == Phase::Ft && !last {
            assert!(
                self.slots[v.t].module.u.is_identity(),
                "U must stay the identity during forward training"
            );
        }

        for iter in 0..iters {
            let batch = stream.next_batch();
            let step_start = Instant::now();
            let slot = &mut self.slots[v.t];
            let x_prop = slot.x_prop.as_ref().expect("module fed before training");
            let xb = x_prop.select_rows(&batch)?;
            debug_assert!(v.use_u || slot.module.u.is_identity());
            let h = slot.module.forward(&xb, v.use_u).map_err(|e| numeric(&v, e))?;

            let ft = ft_term(&slot.module, &h, &batch, &mut self.ctx).map_err(|e| numeric(&v, e))?;
            let mut value = T::zero();
            let mut grad_h = DenseMatrix::zeros(h.rows(), h.cols());
            let mut grad_r = None;
            let mut active = false;
            if let Some(term) = ft {
                value += term.value;
                grad_h = term.grad_h;
                grad_r = term.grad_r;
                active = true;
            }
            if v.with_bt && cfg.eta > 0.0 {
                let slot = &self.slots[v.t];
                if let Some(z) = &slot.target {
                    let zb = z.select_rows(&batch)?;
                    let bt = bt_loss(&h, &zb)?;
                    value += eta * bt.value;
                    grad_h.axpy(eta, &bt.grad_h)?;
                    active = true;
                }
            }
            if !active {
                continue;
            }
            if !value.is_finite() {
                return Err(numeric(&v, Error::Numeric(format!("loss became {value}"))));
            }

            let slot = &mut self.slots[v.t];
            let grads = chain_to_params(value, &grad_h, &slot.module, &xb, v.use_u)
                .map_err(|e| numeric(&v, e))?;
            let tag = v.t + 1;
            slot.w_opt
                .apply_update(&mut slot.module.w, &grads.grad_w, &format!("W_{tag}"))
                .map_err(|e| numeric(&v, e))?;
            if let Some(gu) = &grads.grad_u {
                slot.u_opt
                    .apply_update(&mut slot.module.u, gu, &format!("U_{tag}"))
                    .map_err(|e| numeric(&v, e))?;
            }
            if let (Some(gr), Some(r)) = (&grad_r, slot.module.head.as_mut()) {
                slot.r_opt
                    .apply_update(r, gr, &format!("R_{tag}"))
                    .map_err(|e| numeric(&v, e))?;
            }

            let (wall_ms, at_ms) = if cfg.record_timing {
                (
                    Some(step_start.elapsed().as_secs_f64() * 1e3),
                    Some(self.start.elapsed().as_secs_f64() * 1e3),
                )
            } else {
                (None, None)
            };
            self.trace.records.push(TraceRecord {
                epoch: v.epoch,
                module: tag,
                phase: v.phase,
                iter,
                loss: value.as_f64(),
                wall_ms,
                at_ms,
            });
        }
        Ok(())
    }

    fn full_output(&self, t: usize) -> Result<DenseMatrix<T>> {
        let slot = &self.slots[t];
        debug_assert!(slot.module.u.is_identity() || t + 1 == self.slots.len());
        slot.module.forward(slot.x_prop.as_ref().expect("fed"), false)
    }

    fn run(mut self) -> Result<(TrainedStack<T>, TrainTrace)> {
        let l = self.slots.len();
        let features = Arc::new(self.data.features.clone());
        for epoch in 1..=self.cfg.epochs {
            // forward sweep
            let mut x = Arc::clone(&features);
            for t in 0..l - 1 {
                self.feed(t, x)?;
                self.visit(Visit {
                    epoch,
                    t,
                    phase: Phase::Ft,
                    round: 0,
                    use_u: false,
                    with_bt: epoch > 1,
                })?;
                x = Arc::new(self.full_output(t)?);
            }
            self.feed(l - 1, x)?;
            self.visit(Visit {
                epoch,
                t: l - 1,
                phase: Phase::Ft,
                round: 0,
                use_u: true,
                with_bt: false,
            })?;

            // backward sweeps
            for round in 0..self.cfg.bt_rounds {
                for t in (0..l - 1).rev() {
                    let next = &self.slots[t + 1];
                    let z = next
                        .module
                        .expected_features(next.input.as_ref().expect("fed in forward sweep"))?;
                    self.slots[t].target = Some(z);
                    self.visit(Visit {
                        epoch,
                        t,
                        phase: Phase::Bt,
                        round,
                        use_u: true,
                        with_bt: true,
                    })?;
                }
            }
        }
        for slot in &self.slots {
            slot.module.ensure_finite()?;
        }
        let modules = self
            .slots
            .into_iter()
            .map(|mut s| {
                s.module.clear_cache();
                s.module
            })
            .collect();
        Ok((
            TrainedStack {
                modules,
                loss: self.cfg.loss,
                prop: self.cfg.prop,
            },
            self.trace,
        ))
    }
}

/// Runs the full stacked schedule.
pub fn train_stack<T: Scalar>(cfg: &StackConfig, data: &Dataset<T>) -> Result<(TrainedStack<T>, TrainTrace)> {
    cfg.validate_for(data)?;
    Trainer::new(cfg, data)?.run()
}
