//! Numerical checks of the error non-accumulation bounds for one linear
//! module `H = P·X·W` fitted to `‖P − H·Hᵀ‖`.
//!
//! With `E = P − X·Xᵀ`, `ε = ‖E‖`, `X = U·Σ·Vᵀ` and `o = min(rank X, k)`:
//!
//! - if `X·Xᵀ` and `E` do not commute, `W₀ = V_o·Σ_o⁻²` gives
//!   `‖P − H·Hᵀ‖ ≤ (1−δ)·ε + √o·ε²/σ_o² + √(n−k)·σ*²`, which is `≤ ε` once
//!   the last two terms are small against `δ·ε`;
//! - if they commute, `E = U·Λ·Uᵀ` and `W = V_o·(Σ_o³ + Λ_o·Σ_o)^†·(Σ_o² + Λ_o)^{1/2}`
//!   (negative directions dropped) leaves `‖P − H·Hᵀ‖ ≤ ε + √(n−k)·σ*²`,
//!   or `≤ ε` when `rank X ≤ k`.
//!
//! Here `δ = 1 − cos(θ*/2)`, `θ*` is the angle between `E·Q` and `Q·E` with
//! `Q = U_o·U_oᵀ − I/2`, and `σ*` is the `(o+1)`-th singular value of `X`.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::dataset::write_matrix_csv;
use crate::linalg::{matrix_angle, svd, sym_eig, DenseMatrix, SvdResult};
use crate::optim::mix_seed;
use crate::{Error, Result};

type M = DenseMatrix<f64>;

/// Relative threshold on the commutator norm.
pub const COMMUTE_TOL: f64 = 1e-8;
/// Absolute slack allowed when comparing a residual with its bound.
pub const BOUND_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct TheoremInstance {
    pub p: M,
    pub x: M,
    pub k: usize,
}

impl TheoremInstance {
    pub fn new(p: M, x: M, k: usize) -> Result<Self> {
        let n = x.rows();
        if p.shape() != (n, n) {
            return Err(Error::shape("TheoremInstance", format!("P is {:?}, X has {n} rows", p.shape())));
        }
        if !p.is_symmetric(1e-10) {
            return Err(Error::Contract("P must be symmetric".into()));
        }
        if k == 0 || k > x.cols() {
            return Err(Error::Contract(format!("need 1 ≤ k ≤ d, got k = {k}, d = {}", x.cols())));
        }
        p.ensure_finite("P")?;
        x.ensure_finite("X")?;
        Ok(Self { p, x, k })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }

    /// `E = P − X·Xᵀ`.
    pub fn residual_matrix(&self) -> M {
        let xxt = self.x.matmul_t(&self.x).expect("shapes checked");
        self.p.sub(&xxt).expect("shapes checked")
    }

    /// `‖P − H·Hᵀ‖` at `H = P·X·W`.
    pub fn residual_at(&self, w: &M) -> Result<f64> {
        let h = self.p.matmul(&self.x)?.matmul(w)?;
        Ok(self.p.sub(&h.matmul_t(&h)?)?.frobenius_norm())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    /// Non-commuting residual.
    Theorem1,
    /// Commuting residual with `rank X ≤ k`.
    CorollaryLowRank,
    /// Commuting residual with `rank X > k`.
    Theorem2,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Theorem1, Regime::CorollaryLowRank, Regime::Theorem2];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Theorem1 => "theorem1",
            Regime::CorollaryLowRank => "corollary_lowrank",
            Regime::Theorem2 => "theorem2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Holds,
    Violated,
    /// The sufficient condition of the regime is not met, so the bound
    /// promises nothing.
    NotApplicable,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Holds => "holds",
            Verdict::Violated => "violated",
            Verdict::NotApplicable => "not_applicable",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assumption1 {
    pub holds: bool,
    /// `‖X·Xᵀ·E − E·X·Xᵀ‖`.
    pub commutator_norm: f64,
    /// The threshold it was compared against.
    pub threshold: f64,
}

/// Holds when `X·Xᵀ` and `E = P − X·Xᵀ` fail to commute, i.e. share no
/// eigenbasis.
pub fn check_assumption1(p: &M, x: &M) -> Result<Assumption1> {
    let xxt = x.matmul_t(x)?;
    let e = p.sub(&xxt)?;
    let c = xxt.matmul(&e)?.sub(&e.matmul(&xxt)?)?;
    let norm = c.frobenius_norm();
    let threshold = COMMUTE_TOL * xxt.frobenius_norm() * e.frobenius_norm();
    Ok(Assumption1 {
        holds: norm > threshold,
        commutator_norm: norm,
        threshold,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoremReport {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub rank: usize,
    pub o: usize,
    pub epsilon: f64,
    pub theta_star: f64,
    pub delta: f64,
    /// `θ*` undefined because `E = 0`; `δ` set to 1.
    pub degenerate: bool,
    /// Smallest retained singular value `σ_o`.
    pub sigma_o: f64,
    /// `(o+1)`-th singular value, zero if there is none.
    pub sigma_star: f64,
    pub assumption1: Assumption1,
    pub regime: Regime,
    /// `ε ≤ δ·σ_o²/(2√o)` and `√(n−k)·σ*² ≤ δ/2` (first regime only).
    pub stated_preconditions: Option<bool>,
    /// `(1−δ)·ε + √o·ε²/σ_o² + √(n−k)·σ*²`.
    pub decomposed_bound: f64,
    /// Right-hand side the residual is held to in this regime.
    pub bound: f64,
    /// Whether the regime's bound is promised for this instance.
    pub applicable: bool,
    pub w0_residual: f64,
    /// Residual at the regime's construction.
    pub constructed_residual: f64,
    pub verdict: Verdict,
}

/// Partial report: everything that does not need a construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantities {
    pub epsilon: f64,
    pub rank: usize,
    pub o: usize,
    pub q: M,
    pub theta_star: f64,
    pub delta: f64,
    pub degenerate: bool,
    pub sigma_o: f64,
    pub sigma_star: f64,
}

fn effective_rank(s: &SvdResult<f64>) -> usize {
    s.rank()
}

fn leading_u(s: &SvdResult<f64>, o: usize) -> M {
    DenseMatrix::from_fn(s.u.rows(), o, |i, j| s.u[(i, j)])
}

/// `Q = U_o·U_oᵀ − I/2`.
fn q_matrix(u_o: &M) -> M {
    let n = u_o.rows();
    let mut q = u_o.matmul_t(u_o).expect("same basis");
    for i in 0..n {
        q[(i, i)] -= 0.5;
    }
    q
}

/// `(θ*, δ, degenerate)` for residual `e` and projector basis `u_o`.
pub fn angle_slack(e: &M, u_o: &M) -> Result<(f64, f64, bool)> {
    let q = q_matrix(u_o);
    let eq = e.matmul(&q)?;
    let qe = q.matmul(e)?;
    let scale = e.frobenius_norm().max(f64::MIN_POSITIVE);
    if eq.frobenius_norm() <= 1e-14 * scale.max(1.0) || e.frobenius_norm() == 0.0 {
        return Ok((f64::NAN, 1.0, true));
    }
    let theta = matrix_angle(&eq, &qe)?;
    Ok((theta, 1.0 - (theta / 2.0).cos(), false))
}

pub fn compute_report_quantities(inst: &TheoremInstance) -> Result<Quantities> {
    let e = inst.residual_matrix();
    let epsilon = e.frobenius_norm();
    let s = svd(&inst.x)?;
    let rank = effective_rank(&s);
    let o = rank.min(inst.k);
    let u_o = leading_u(&s, o);
    let q = q_matrix(&u_o);
    let degenerate_eps = epsilon <= 1e-14 * inst.p.frobenius_norm().max(1.0);
    let (theta_star, delta, degenerate) = if degenerate_eps || o == 0 {
        (f64::NAN, 1.0, true)
    } else {
        angle_slack(&e, &u_o)?
    };
    let sigma_o = if o > 0 { s.sigma[o - 1] } else { 0.0 };
    let sigma_star = if rank > o { s.sigma[o] } else { 0.0 };
    Ok(Quantities {
        epsilon,
        rank,
        o,
        q,
        theta_star,
        delta,
        degenerate,
        sigma_o,
        sigma_star,
    })
}

/// `W₀ = V_o·Σ_o⁻²`, zero-padded to `d×k`, so `V_oᵀ·W₀ = Σ_o⁻²` (in its
/// first `o` columns) and `V_eᵀ·W₀ = 0`.
pub fn construct_w0(inst: &TheoremInstance) -> Result<M> {
    let s = svd(&inst.x)?;
    let o = effective_rank(&s).min(inst.k);
    if o == 0 {
        return Err(Error::Contract("X is numerically zero; no W₀ exists".into()));
    }
    let v = s.v();
    let d = inst.d();
    Ok(DenseMatrix::from_fn(d, inst.k, |i, j| {
        if j < o {
            v[(i, j)] / (s.sigma[j] * s.sigma[j])
        } else {
            0.0
        }
    }))
}

/// Singular basis of `X` rotated within equal-`σ` groups so that the leading
/// `o` left vectors also diagonalize `E`. Returns `(U_o, V_o, σ_o, λ_o)`.
fn commuting_basis(inst: &TheoremInstance, e: &M) -> Result<(M, M, Vec<f64>, Vec<f64>)> {
    let s = svd(&inst.x)?;
    let o = effective_rank(&s).min(inst.k);
    if o == 0 {
        return Err(Error::Contract("X is numerically zero".into()));
    }
    let mut u = leading_u(&s, o);
    let v_full = s.v();
    let mut v = DenseMatrix::from_fn(inst.d(), o, |i, j| v_full[(i, j)]);
    let sigma: Vec<f64> = s.sigma[..o].to_vec();
    let mut lambda = vec![0.0; o];
    let tie = 1e-10 * sigma[0];
    let mut start = 0;
    while start < o {
        let mut end = start + 1;
        while end < o && (sigma[end - 1] - sigma[end]).abs() <= tie {
            end += 1;
        }
        let g = end - start;
        let ug = DenseMatrix::from_fn(u.rows(), g, |i, j| u[(i, start + j)]);
        let block = ug.t_matmul(&e.matmul(&ug)?)?;
        // symmetrize away round-off before the eigensolver's symmetry check
        let block = DenseMatrix::from_fn(g, g, |i, j| 0.5 * (block[(i, j)] + block[(j, i)]));
        let eig = sym_eig(&block)?;
        let ur = ug.matmul(&eig.vectors)?;
        let vg = DenseMatrix::from_fn(v.rows(), g, |i, j| v[(i, start + j)]);
        let vr = vg.matmul(&eig.vectors)?;
        for j in 0..g {
            u.set_column(start + j, &ur.column(j));
            v.set_column(start + j, &vr.column(j));
            lambda[start + j] = eig.values[j];
        }
        start = end;
    }
    Ok((u, v, sigma, lambda))
}

/// The commuting-case construction: on each retained direction,
/// `V_oᵀ·W = (σ³ + λσ)^†·(σ² + λ)^{1/2}`, with directions where `σ² + λ ≤ 0`
/// left at zero.
pub fn construct_w_commuting(inst: &TheoremInstance) -> Result<M> {
    let a = check_assumption1(&inst.p, &inst.x)?;
    if a.holds {
        return Err(Error::Contract(
            "X·Xᵀ and P − X·Xᵀ do not commute; use construct_w0 instead".into(),
        ));
    }
    let e = inst.residual_matrix();
    let (_, v, sigma, lambda) = commuting_basis(inst, &e)?;
    let o = sigma.len();
    let coef: Vec<f64> = (0..o)
        .map(|j| {
            let (s, l) = (sigma[j], lambda[j]);
            let m = s * s + l;
            if m > 1e-14 * s * s {
                m.sqrt() / (s * m)
            } else {
                0.0
            }
        })
        .collect();
    Ok(DenseMatrix::from_fn(inst.d(), inst.k, |i, j| {
        if j < o {
            v[(i, j)] * coef[j]
        } else {
            0.0
        }
    }))
}

/// Full check: picks the regime, builds its `W` and compares the residual
/// with the regime's bound. Never fails on unmet preconditions; those give
/// [`Verdict::NotApplicable`].
pub fn verify_bounds(inst: &TheoremInstance) -> Result<TheoremReport> {
    let q = compute_report_quantities(inst)?;
    let a1 = check_assumption1(&inst.p, &inst.x)?;
    let (n, k) = (inst.n(), inst.k);
    let tail = ((n - k) as f64).sqrt() * q.sigma_star * q.sigma_star;
    let eps = q.epsilon;
    let decomposed_bound = if q.o > 0 {
        (1.0 - q.delta) * eps + (q.o as f64).sqrt() * eps * eps / (q.sigma_o * q.sigma_o) + tail
    } else {
        f64::INFINITY
    };
    let w0_residual = match construct_w0(inst) {
        Ok(w) => inst.residual_at(&w)?,
        Err(_) => inst.p.frobenius_norm(),
    };

    let regime = if a1.holds {
        Regime::Theorem1
    } else if q.rank <= k {
        Regime::CorollaryLowRank
    } else {
        Regime::Theorem2
    };

    let (stated, bound, applicable, constructed) = match regime {
        Regime::Theorem1 => {
            let stated = q.o > 0
                && eps <= q.delta * q.sigma_o * q.sigma_o / (2.0 * (q.o as f64).sqrt())
                && tail <= q.delta / 2.0;
            // the proof closes only when its three terms sum to at most ε
            let applicable = !q.degenerate && decomposed_bound <= eps;
            (Some(stated), eps, applicable, w0_residual)
        }
        Regime::CorollaryLowRank | Regime::Theorem2 => {
            let bound = if regime == Regime::Theorem2 { eps + tail } else { eps };
            let constructed = match construct_w_commuting(inst) {
                Ok(w) => inst.residual_at(&w)?,
                // rank 0: H = 0, residual is ‖P‖ = ‖E‖
                Err(_) => inst.p.frobenius_norm(),
            };
            (None, bound, true, constructed)
        }
    };
    let verdict = if !applicable {
        Verdict::NotApplicable
    } else if constructed <= bound + BOUND_TOL {
        Verdict::Holds
    } else {
        Verdict::Violated
    };
    Ok(TheoremReport {
        n,
        d: inst.d(),
        k,
        rank: q.rank,
        o: q.o,
        epsilon: eps,
        theta_star: q.theta_star,
        delta: q.delta,
        degenerate: q.degenerate,
        sigma_o: q.sigma_o,
        sigma_star: q.sigma_star,
        assumption1: a1,
        regime,
        stated_preconditions: stated,
        decomposed_bound,
        bound,
        applicable,
        w0_residual,
        constructed_residual: constructed,
        verdict,
    })
}

/// Both sides of the two norm identities used by the first-regime proof.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityCheck {
    pub epsilon: f64,
    /// `‖E·Q‖`, expected `ε/2`.
    pub eq_norm: f64,
    /// `‖E·U·Uᵀ + U·Uᵀ·E − E‖`.
    pub sym_norm: f64,
    /// `√((1+s)/2)·ε` with `s = cos θ(E·Q, Q·E)`.
    pub sym_expected: f64,
}

pub fn identity_check(inst: &TheoremInstance) -> Result<IdentityCheck> {
    let e = inst.residual_matrix();
    let s = svd(&inst.x)?;
    let o = effective_rank(&s).min(inst.k);
    let u = leading_u(&s, o);
    let q = q_matrix(&u);
    let eq = e.matmul(&q)?;
    let qe = q.matmul(&e)?;
    let uut = u.matmul_t(&u)?;
    let sym = e.matmul(&uut)?.add(&uut.matmul(&e)?)?.sub(&e)?;
    let epsilon = e.frobenius_norm();
    let cos = eq.inner(&qe)? / (eq.frobenius_norm() * qe.frobenius_norm());
    Ok(IdentityCheck {
        epsilon,
        eq_norm: eq.frobenius_norm(),
        sym_norm: sym.frobenius_norm(),
        sym_expected: ((1.0 + cos) / 2.0).max(0.0).sqrt() * epsilon,
    })
}

/// What the instance generator plants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Plant {
    /// Non-commuting residual scaled so the first-regime bound applies.
    Theorem1,
    /// Residual diagonal in `X`'s left basis, `rank X ≤ k`.
    CorollaryLowRank,
    /// Residual diagonal in `X`'s left basis, `rank X = d > k`.
    Theorem2,
    /// Gaussian `X`, Gaussian symmetric residual of random size.
    Generic,
}

impl Plant {
    pub const ALL: [Plant; 4] = [Plant::Theorem1, Plant::CorollaryLowRank, Plant::Theorem2, Plant::Generic];

    pub fn name(self) -> &'static str {
        match self {
            Plant::Theorem1 => "theorem1",
            Plant::CorollaryLowRank => "corollary_lowrank",
            Plant::Theorem2 => "theorem2",
            Plant::Generic => "generic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> M {
    DenseMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Haar-ish random orthogonal matrix: Gram–Schmidt on a Gaussian matrix.
pub fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> M {
    let g = gaussian(n, n, rng);
    let mut q = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut v = g.column(j);
        for _ in 0..2 {
            for c in 0..j {
                let d: f64 = (0..n).map(|i| q[(i, c)] * v[i]).sum();
                for (i, x) in v.iter_mut().enumerate() {
                    *x -= d * q[(i, c)];
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in &mut v {
            *x /= norm;
        }
        q.set_column(j, &v);
    }
    q
}

fn random_symmetric_unit(n: usize, rng: &mut ChaCha8Rng) -> M {
    let g = gaussian(n, n, rng);
    let s = DenseMatrix::from_fn(n, n, |i, j| 0.5 * (g[(i, j)] + g[(j, i)]));
    let norm = s.frobenius_norm();
    s.scale(1.0 / norm)
}

/// Descending values in `[lo, hi]`.
fn sorted_uniform(count: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..count).map(|_| rng.random_range(lo..hi)).collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// `X = O[:, :d]·diag(σ)·Vᵀ`.
fn assemble_x(o: &M, sigma: &[f64], v: &M) -> M {
    let (n, d) = (o.rows(), v.rows());
    let left = DenseMatrix::from_fn(n, d, |i, j| o[(i, j)] * sigma[j]);
    left.matmul_t(v).expect("d columns")
}

fn symmetrize(m: &M) -> M {
    DenseMatrix::from_fn(m.rows(), m.cols(), |i, j| 0.5 * (m[(i, j)] + m[(j, i)]))
}

/// Draws one instance of the given kind.
pub fn generate_instance(plant: Plant, n: usize, d: usize, k: usize, seed: u64) -> Result<TheoremInstance> {
    if !(1 <= k && k < d && d <= n) {
        return Err(Error::Config(format!("need 1 ≤ k < d ≤ n, got n={n}, d={d}, k={k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = random_orthogonal(n, &mut rng);
    let v = random_orthogonal(d, &mut rng);
    match plant {
        Plant::Theorem1 => {
            let head = sorted_uniform(k, 1.0, 2.0, &mut rng);
            let dir = random_symmetric_unit(n, &mut rng);
            let u_k = DenseMatrix::from_fn(n, k, |i, j| basis[(i, j)]);
            let (_, delta, _) = angle_slack(&dir, &u_k)?;
            let sk = head[k - 1];
            let eps = 0.5 * delta * sk * sk / (2.0 * (k as f64).sqrt());
            // tail small enough that √(n−k)·σ*² ≤ δ·ε/4
            let star = (delta * eps / (4.0 * ((n - k) as f64).sqrt())).sqrt();
            let mut sigma = head;
            let tail = sorted_uniform(d - k - 1, 0.5 * star, star, &mut rng);
            sigma.push(star);
            sigma.extend(tail);
            let x = assemble_x(&basis, &sigma, &v);
            let p = symmetrize(&x.matmul_t(&x)?.add(&dir.scale(eps))?);
            TheoremInstance::new(p, x, k)
        }
        Plant::CorollaryLowRank | Plant::Theorem2 => {
            let mut sigma = if plant == Plant::CorollaryLowRank {
                let r = rng.random_range(1..=k);
                let mut s = sorted_uniform(r, 1.0, 2.0, &mut rng);
                s.resize(d, 0.0);
                s
            } else {
                let mut s = sorted_uniform(k, 1.0, 2.0, &mut rng);
                s.extend(sorted_uniform(d - k, 0.05, 0.5, &mut rng));
                s
            };
            sigma.sort_by(|a, b| b.total_cmp(a));
            let eps = rng.random_range(0.05..1.5);
            let raw: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
            let lambda: Vec<f64> = raw.iter().map(|x| x * eps / norm).collect();
            let x = assemble_x(&basis, &sigma, &v);
            let scaled = DenseMatrix::from_fn(n, n, |i, j| basis[(i, j)] * lambda[j]);
            let e = symmetrize(&scaled.matmul_t(&basis)?);
            let p = symmetrize(&x.matmul_t(&x)?.add(&e)?);
            TheoremInstance::new(p, x, k)
        }
        Plant::Generic => {
            let x = gaussian(n, d, &mut rng).scale(1.0 / (d as f64).sqrt());
            let eps = rng.random_range(0.01..1.0);
            let e = random_symmetric_unit(n, &mut rng).scale(eps);
            let p = symmetrize(&x.matmul_t(&x)?.add(&e)?);
            TheoremInstance::new(p, x, k)
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub trials: usize,
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub seed: u64,
    /// `None` cycles through every [`Plant`].
    pub plant: Option<Plant>,
    /// Directory for reproduction files of violating instances.
    pub dump_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RegimeCounts {
    pub holds: usize,
    pub violated: usize,
    pub not_applicable: usize,
}

#[derive(Debug, Clone)]
pub struct SweepTrial {
    pub trial: usize,
    pub plant: Plant,
    pub seed: u64,
    pub report: TheoremReport,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub trials: Vec<SweepTrial>,
    pub dumps: Vec<PathBuf>,
}

impl SweepReport {
    pub fn counts(&self, regime: Regime) -> RegimeCounts {
        let mut c = RegimeCounts::default();
        for t in self.trials.iter().filter(|t| t.report.regime == regime) {
            match t.report.verdict {
                Verdict::Holds => c.holds += 1,
                Verdict::Violated => c.violated += 1,
                Verdict::NotApplicable => c.not_applicable += 1,
            }
        }
        c
    }

    pub fn violations(&self) -> usize {
        self.trials.iter().filter(|t| t.report.verdict == Verdict::Violated).count()
    }
}

fn dump_instance(dir: &Path, trial: usize, inst: &TheoremInstance) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p_path = dir.join(format!("violation_{trial}_p.csv"));
    let x_path = dir.join(format!("violation_{trial}_x.csv"));
    write_matrix_csv(&p_path, &inst.p)?;
    write_matrix_csv(&x_path, &inst.x)?;
    Ok(vec![p_path, x_path])
}

/// Runs `trials` seeded instances; trial `i` uses seed `mix(seed, i)`.
pub fn sweep(spec: &SweepSpec) -> Result<SweepReport> {
    if spec.trials == 0 {
        return Err(Error::Config("trials must be ≥ 1".into()));
    }
    let results: Vec<Result<(SweepTrial, TheoremInstance)>> = (0..spec.trials)
        .into_par_iter()
        .map(|trial| {
            let plant = spec.plant.unwrap_or(Plant::ALL[trial % Plant::ALL.len()]);
            let seed = mix_seed(spec.seed, trial as u64);
            let inst = generate_instance(plant, spec.n, spec.d, spec.k, seed)?;
            let report = verify_bounds(&inst)?;
            Ok((
                SweepTrial {
                    trial,
                    plant,
                    seed,
                    report,
                },
                inst,
            ))
        })
        .collect();
    let mut trials = Vec::with_capacity(spec.trials);
    let mut dumps = Vec::new();
    for r in results {
        let (t, inst) = r?;
        if t.report.verdict == Verdict::Violated {
            if let Some(dir) = &spec.dump_dir {
                dumps.extend(dump_instance(dir, t.trial, &inst)?);
            }
        }
        trials.push(t);
    }
    Ok(SweepReport { trials, dumps })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(plant: Plant, seed: u64) -> TheoremInstance {
        generate_instance(plant, 30, 10, 4, seed).unwrap()
    }

    #[test]
    fn self_commuting_residual_fails_assumption() {
        let x = gaussian(8, 3, &mut ChaCha8Rng::seed_from_u64(1));
        let p = x.matmul_t(&x).unwrap().scale(2.0);
        assert!(!check_assumption1(&p, &x).unwrap().holds);
    }

    #[test]
    fn diagonal_pair_fails_assumption() {
        let x = DenseMatrix::from_rows(&[[2.0, 0.0], [0.0, 1.0], [0.0, 0.0]]);
        let p = DenseMatrix::diag(&[5.0, -1.0, 0.3]);
        assert!(!check_assumption1(&p, &x).unwrap().holds);
    }

    #[test]
    fn generic_pairs_satisfy_assumption() {
        for seed in 0..10 {
            let i = inst(Plant::Generic, seed);
            let a = check_assumption1(&i.p, &i.x).unwrap();
            assert!(a.holds);
            assert!(a.commutator_norm > 1e3 * a.threshold);
        }
    }

    #[test]
    fn exact_fit_is_degenerate() {
        let x = gaussian(6, 3, &mut ChaCha8Rng::seed_from_u64(2));
        let p = x.matmul_t(&x).unwrap();
        let i = TheoremInstance::new(p, x, 2).unwrap();
        let q = compute_report_quantities(&i).unwrap();
        assert!(q.epsilon < 1e-12);
        assert!(q.degenerate);
        assert_eq!(q.delta, 1.0);
    }

    #[test]
    fn o_is_rank_capped_by_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = gaussian(10, 3, &mut rng);
        let b = gaussian(3, 5, &mut rng);
        let x = a.matmul(&b).unwrap();
        let p = DenseMatrix::identity(10);
        let q = compute_report_quantities(&TheoremInstance::new(p.clone(), x.clone(), 2).unwrap()).unwrap();
        assert_eq!((q.rank, q.o), (3, 2));
        let q = compute_report_quantities(&TheoremInstance::new(p, x, 4).unwrap()).unwrap();
        assert_eq!(q.o, 3);
        assert_eq!(q.sigma_star, 0.0);
    }

    #[test]
    fn w0_for_orthonormal_square_input() {
        let x = DenseMatrix::identity(4);
        let i = TheoremInstance::new(DenseMatrix::identity(4), x, 4).unwrap();
        let w = construct_w0(&i).unwrap();
        assert!(w.max_abs_diff(&DenseMatrix::identity(4)) < 1e-12);
    }

    #[test]
    fn w0_solves_its_defining_equations() {
        for seed in 0..5 {
            let i = inst(Plant::Generic, seed);
            let w = construct_w0(&i).unwrap();
            let s = svd(&i.x).unwrap();
            let v = s.v();
            let vtw = v.t_matmul(&w).unwrap();
            for a in 0..i.d() {
                for b in 0..i.k {
                    let want = if a == b { 1.0 / (s.sigma[a] * s.sigma[a]) } else { 0.0 };
                    assert!((vtw[(a, b)] - want).abs() < 1e-10, "{a},{b}");
                }
            }
        }
    }

    #[test]
    fn commuting_construction_refuses_generic_pairs() {
        assert!(construct_w_commuting(&inst(Plant::Generic, 0)).is_err());
    }

    #[test]
    fn commuting_construction_with_zero_residual_matches_w0() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = gaussian(12, 5, &mut rng);
        let p = x.matmul_t(&x).unwrap();
        let i = TheoremInstance::new(p, x, 3).unwrap();
        let w = construct_w_commuting(&i).unwrap();
        let w0 = construct_w0(&i).unwrap();
        assert!(w.max_abs_diff(&w0) < 1e-9 * w0.max_abs());
    }

    #[test]
    fn commuting_construction_reproduces_planted_spectrum() {
        for seed in 0..5 {
            let i = inst(Plant::Theorem2, seed);
            let e = i.residual_matrix();
            let (u, _, sigma, lambda) = commuting_basis(&i, &e).unwrap();
            let w = construct_w_commuting(&i).unwrap();
            let h = i.p.matmul(&i.x).unwrap().matmul(&w).unwrap();
            let hht = h.matmul_t(&h).unwrap();
            let kept: Vec<f64> = sigma.iter().zip(&lambda).map(|(s, l)| (s * s + l).max(0.0)).collect();
            let want = DenseMatrix::from_fn(u.rows(), u.cols(), |a, b| u[(a, b)] * kept[b])
                .matmul_t(&u)
                .unwrap();
            assert!(hht.max_abs_diff(&want) < 1e-8);
            // what is left is P outside the retained directions
            let rest = i.p.sub(&want).unwrap().frobenius_norm();
            assert!((i.residual_at(&w).unwrap() - rest).abs() < 1e-8);
        }
    }

    #[test]
    fn regimes_are_recognized() {
        for seed in 0..5 {
            assert_eq!(verify_bounds(&inst(Plant::Theorem1, seed)).unwrap().regime, Regime::Theorem1);
            assert_eq!(
                verify_bounds(&inst(Plant::CorollaryLowRank, seed)).unwrap().regime,
                Regime::CorollaryLowRank
            );
            assert_eq!(verify_bounds(&inst(Plant::Theorem2, seed)).unwrap().regime, Regime::Theorem2);
        }
    }

    #[test]
    fn planted_instances_hold() {
        for plant in [Plant::Theorem1, Plant::CorollaryLowRank, Plant::Theorem2] {
            for seed in 0..10 {
                let r = verify_bounds(&inst(plant, seed)).unwrap();
                assert_eq!(r.verdict, Verdict::Holds, "{plant:?} seed {seed}: {r:?}");
                if plant == Plant::Theorem1 {
                    assert_eq!(r.stated_preconditions, Some(true));
                }
            }
        }
    }

    #[test]
    fn degenerate_corollary_instance_has_zero_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = gaussian(9, 2, &mut rng);
        let x = a.matmul(&gaussian(2, 4, &mut rng)).unwrap();
        let p = x.matmul_t(&x).unwrap();
        let r = verify_bounds(&TheoremInstance::new(p, x, 3).unwrap()).unwrap();
        assert_eq!(r.regime, Regime::CorollaryLowRank);
        assert!(r.degenerate);
        assert!(r.constructed_residual < 1e-10);
        assert!(r.w0_residual < 1e-10);
    }

    #[test]
    fn decomposed_bound_dominates_w0_residual() {
        for seed in 0..20 {
            let i = inst(Plant::Generic, seed);
            let r = verify_bounds(&i).unwrap();
            assert!(r.w0_residual <= r.decomposed_bound + 1e-9, "{r:?}");
        }
    }

    #[test]
    fn identities_hold() {
        for seed in 0..10 {
            let c = identity_check(&inst(Plant::Generic, seed)).unwrap();
            assert!((c.eq_norm - c.epsilon / 2.0).abs() < 1e-10);
            assert!((c.sym_norm - c.sym_expected).abs() < 1e-8);
        }
    }

    #[test]
    fn sweep_counts_and_determinism() {
        let spec = SweepSpec {
            trials: 8,
            n: 20,
            d: 8,
            k: 3,
            seed: 1,
            plant: None,
            dump_dir: None,
        };
        let a = sweep(&spec).unwrap();
        let b = sweep(&spec).unwrap();
        assert_eq!(a.violations(), 0);
        let total: usize = Regime::ALL
            .iter()
            .map(|&r| {
                let c = a.counts(r);
                c.holds + c.violated + c.not_applicable
            })
            .sum();
        assert_eq!(total, 8);
        for (x, y) in a.trials.iter().zip(&b.trials) {
            assert_eq!(x.report, y.report);
        }
    }

    #[test]
    fn generator_rejects_bad_shapes() {
        assert!(generate_instance(Plant::Generic, 5, 6, 2, 0).is_err());
        assert!(generate_instance(Plant::Generic, 10, 4, 4, 0).is_err());
    }

    #[test]
    fn joint_eigenbasis_of_commuting_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..5 {
            let o = random_orthogonal(7, &mut rng);
            let d1: Vec<f64> = (0..7).map(|i| 7.0 - i as f64).collect();
            let d2: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
            let build = |d: &[f64]| {
                DenseMatrix::from_fn(7, 7, |i, j| o[(i, j)] * d[j]).matmul_t(&o).unwrap()
            };
            let (a, b) = (symmetrize(&build(&d1)), symmetrize(&build(&d2)));
            let eig = sym_eig(&a).unwrap();
            let t = eig.vectors.t_matmul(&b.matmul(&eig.vectors).unwrap()).unwrap();
            for i in 0..7 {
                for j in 0..7 {
                    if i != j {
                        assert!(t[(i, j)].abs() < 1e-8);
                    }
                }
            }
            let c = a.matmul(&b).unwrap().sub(&b.matmul(&a).unwrap()).unwrap();
            assert!(c.frobenius_norm() < 1e-10);
        }
        let a = symmetrize(&gaussian(7, 7, &mut rng));
        let b = symmetrize(&gaussian(7, 7, &mut rng));
        let c = a.matmul(&b).unwrap().sub(&b.matmul(&a).unwrap()).unwrap();
        assert!(c.frobenius_norm() > 1e-6);
    }
}
