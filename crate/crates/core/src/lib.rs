//! Stacked separable graph neural networks.
//!
//! An `L`-layer GNN is split into `L` single-layer modules whose graph
//! operation does not depend on learnable parameters. Each module's
//! propagation is computed once per forward sweep, after which its weights are
//! fitted by plain mini-batch SGD over rows of the propagated features: no
//! neighbor sampling, no sub-graph partitioning. A backward sweep lets later
//! modules publish the input features they would prefer, and earlier modules
//! are penalized for deviating from them.
//!
//! The numeric core is generic over the scalar type (`f32`/`f64`); the aliases
//! at the crate root fix it to `f64`, which is what the trainer and CLI use.
//! The [`theory`] lab is `f64` only since its tolerances sit near 1e-10.
//!
//! Module map:
//!
//! - [`linalg`]: dense matrices, Jacobi SVD and symmetric eigensolver.
//! - [`graph`]: CSR adjacency, GCN normalization, propagation operators.
//! - [`dataset`]: text formats and the stochastic block model generator.
//! - [`module`]: the separable module `H = φ(f₀(A, X)·U·W)`.
//! - [`losses`]: forward/backward training objectives with analytic gradients.
//! - [`optim`]: SGD/Adam and the seeded batch iterator.
//! - [`trainer`]: the forward/backward training schedule.
//! - [`metrics`]: k-means, Hungarian accuracy, NMI.
//! - [`checkpoint`]: binary parameter checkpoints.
//! - [`theory`]: numerical checks of the error non-accumulation bounds.

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod module;
pub mod optim;
pub mod scalar;
pub mod theory;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use dataset::{Dataset, SbmSpec, Split};
pub use graph::{PropKind, Propagator, SparseGraph};
pub use linalg::{DenseMatrix, SvdResult, SymEigResult};
pub use module::{Activation, SeparableModule};
pub use trainer::{LossKind, StackConfig, TrainTrace, TrainedStack};

/// Row-major `f64` matrix, the default carrier everywhere.
pub type Matrix = DenseMatrix<f64>;
/// Single-precision matrix.
pub type Matrix32 = DenseMatrix<f32>;
pub type Graph = SparseGraph<f64>;
pub type Prop = Propagator<f64>;
pub type Module = SeparableModule<f64>;
pub type Data = Dataset<f64>;
pub type Stack = TrainedStack<f64>;
