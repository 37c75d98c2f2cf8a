//! A single separable GNN module.
//!
//! The module computes `H = φ(f₀(A, X) · U · W)`. The graph operation `f₀`
//! carries no parameters, so `X' = f₀(A, X)` is computed once and cached;
//! every mini-batch step afterwards only reads rows of `X'`. The square matrix
//! `U` parameterizes the expected features `Z = ψ(X·U)` this module asks of
//! its predecessor. For linear propagation `P·(X·U) = (P·X)·U`, which is why
//! `U` may be applied to the cached rows.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{PropKind, Propagator};
use crate::linalg::DenseMatrix;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, v: T) -> T {
        match self {
            Activation::Linear => v,
            Activation::Relu => v.max(T::zero()),
            Activation::Tanh => v.tanh(),
        }
    }

    /// `φ′` evaluated at the pre-activation.
    #[inline]
    pub fn derivative<T: Scalar>(self, pre: T) -> T {
        match self {
            Activation::Linear => T::one(),
            Activation::Relu => {
                if pre > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                T::one() - t * t
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linear" => Some(Activation::Linear),
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// The non-parametric map applied to `X·U` when forming expected features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Psi {
    #[default]
    Identity,
    Tanh,
}

/// Cached input and propagated input of a module.
#[derive(Debug, Clone)]
pub struct ModuleIO<T> {
    pub x_in: Arc<DenseMatrix<T>>,
    pub x_prop: Arc<DenseMatrix<T>>,
    prop_kind: PropKind,
}

#[derive(Debug, Clone)]
pub struct SeparableModule<T> {
    pub w: DenseMatrix<T>,
    pub u: DenseMatrix<T>,
    pub head: Option<DenseMatrix<T>>,
    pub activation: Activation,
    pub psi: Psi,
    pub prop: PropKind,
    io: Option<ModuleIO<T>>,
}

fn glorot<T: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix<T> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    DenseMatrix::from_fn(rows, cols, |_, _| T::c(rng.random_range(-bound..=bound)))
}

/// Fresh module with `U = I`, Glorot-uniform `W` and, when `head_classes` is
/// given, a Glorot-uniform `k × c` classification head.
pub fn init_module<T: Scalar>(
    d: usize,
    k: usize,
    activation: Activation,
    prop: PropKind,
    seed: u64,
    head_classes: Option<usize>,
) -> Result<SeparableModule<T>> {
    if d == 0 || k == 0 {
        return Err(Error::Config(format!("module dims must be ≥ 1 (got {d}x{k})")));
    }
    prop.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = glorot(&mut rng, d, k);
    let head = match head_classes {
        Some(0) => return Err(Error::Config("classification head needs c ≥ 1".into())),
        Some(c) => Some(glorot(&mut rng, k, c)),
        None => None,
    };
    Ok(SeparableModule {
        w,
        u: DenseMatrix::identity(d),
        head,
        activation,
        psi: Psi::Identity,
        prop,
        io: None,
    })
}

impl<T: Scalar> SeparableModule<T> {
    /// Assembles a module from explicit parameters (checkpoint loading).
    pub fn from_parts(
        w: DenseMatrix<T>,
        u: DenseMatrix<T>,
        head: Option<DenseMatrix<T>>,
        activation: Activation,
        prop: PropKind,
    ) -> Result<Self> {
        let (d, k) = w.shape();
        if u.shape() != (d, d) {
            return Err(Error::shape("SeparableModule", format!("U is {:?}, W is {d}x{k}", u.shape())));
        }
        if let Some(r) = &head {
            if r.rows() != k {
                return Err(Error::shape("SeparableModule", format!("head has {} rows, k = {k}", r.rows())));
            }
        }
        Ok(Self {
            w,
            u,
            head,
            activation,
            psi: Psi::Identity,
            prop,
            io: None,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn reset_u(&mut self) {
        self.u = DenseMatrix::identity(self.in_dim());
    }

    pub fn io(&self) -> Option<&ModuleIO<T>> {
        self.io.as_ref()
    }

    pub fn clear_cache(&mut self) {
        self.io = None;
    }

    /// Computes and caches `X' = f₀(A, x)`. A repeated call with the same
    /// input and operator returns the cached storage.
    pub fn preprocess(&mut self, p: &Propagator<T>, x: &DenseMatrix<T>) -> Result<Arc<DenseMatrix<T>>> {
        if x.rows() != p.n() || x.cols() != self.in_dim() {
            return Err(Error::shape(
                "preprocess",
                format!(
                    "input {}x{} for a {}-node graph and in_dim {}",
                    x.rows(),
                    x.cols(),
                    p.n(),
                    self.in_dim()
                ),
            ));
        }
        if let Some(io) = &self.io {
            if io.prop_kind == p.kind() && *io.x_in == *x {
                return Ok(Arc::clone(&io.x_prop));
            }
        }
        let x_prop = Arc::new(p.propagate(x)?);
        self.io = Some(ModuleIO {
            x_in: Arc::new(x.clone()),
            x_prop: Arc::clone(&x_prop),
            prop_kind: p.kind(),
        });
        Ok(x_prop)
    }

    /// `X'·U` (or `X'` alone) for a block of propagated rows.
    pub fn mixed_input(&self, x_prop_rows: &DenseMatrix<T>, use_u: bool) -> Result<DenseMatrix<T>> {
        if x_prop_rows.cols() != self.in_dim() {
            return Err(Error::shape(
                "forward",
                format!("{} input columns, in_dim {}", x_prop_rows.cols(), self.in_dim()),
            ));
        }
        if use_u {
            x_prop_rows.matmul(&self.u)
        } else {
            Ok(x_prop_rows.clone())
        }
    }

    /// Pre-activation and activation for a block of propagated rows.
    pub fn forward_parts(
        &self,
        x_prop_rows: &DenseMatrix<T>,
        use_u: bool,
    ) -> Result<(DenseMatrix<T>, DenseMatrix<T>)> {
        if x_prop_rows.cols() != self.in_dim() {
            return Err(Error::shape(
                "forward",
                format!("{} input columns, in_dim {}", x_prop_rows.cols(), self.in_dim()),
            ));
        }
        let pre = if use_u {
            x_prop_rows.matmul(&self.u)?.matmul(&self.w)?
        } else {
            x_prop_rows.matmul(&self.w)?
        };
        let act = self.activation;
        let h = pre.map(|v| act.apply(v));
        Ok((pre, h))
    }

    /// `φ(X'_B·W)` or `φ(X'_B·U·W)`.
    pub fn forward(&self, x_prop_rows: &DenseMatrix<T>, use_u: bool) -> Result<DenseMatrix<T>> {
        Ok(self.forward_parts(x_prop_rows, use_u)?.1)
    }

    /// Expected features `Z = ψ(x_in·U)`.
    pub fn expected_features(&self, x_in: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        if x_in.cols() != self.in_dim() {
            return Err(Error::shape(
                "expected_features",
                format!("{} columns, in_dim {}", x_in.cols(), self.in_dim()),
            ));
        }
        let z = x_in.matmul(&self.u)?;
        Ok(match self.psi {
            Psi::Identity => z,
            Psi::Tanh => z.map(|v| v.tanh()),
        })
    }

    pub fn ensure_finite(&self) -> Result<()> {
        self.w.ensure_finite("W")?;
        self.u.ensure_finite("U")?;
        if let Some(r) = &self.head {
            r.ensure_finite("R")?;
        }
        Ok(())
    }
}
