//! Adaptive randomized construction of hierarchically semi-separable (HSS)
//! matrices.
//!
//! The crate is organised bottom-up:
//!
//! * [`dense`] holds the dense kernels (QR, pivoted QR, interpolative
//!   decomposition, Gram–Schmidt) and the reproducible Gaussian stream.
//! * [`tree`] builds the binary cluster tree.
//! * [`operators`] defines the partially matrix-free [`MatrixSource`] contract
//!   and a few built-in kernels.
//! * [`hss`] is the compressed container with matvec and reconstruction.
//! * [`compress`] drives the adaptive construction.
//! * [`adaptive`], [`bounds`] and [`cost`] are the standalone range finders,
//!   probabilistic tail bounds and analytic cost model.

pub mod adaptive;
pub mod bounds;
pub mod compress;
pub mod cost;
pub mod dense;
pub mod error;
pub mod flops;
pub mod hss;
pub mod operators;
pub mod tree;

pub use compress::{
    compress, compress_hard_restart, compress_known_rank, CompressionConfig, CompressionReport, Criterion, Strategy,
};
pub use dense::{DenseMatrix, IdResult, RngStream};
pub use error::{HssError, Result};
pub use flops::{Phase, PhaseFlops};
pub use hss::{HssMatrix, HssNode, NodeState};
pub use operators::{ExplicitDense, MatrixSource, ParamKernel, ToeplitzKernel};
pub use tree::{ClusterNode, ClusterTree, Partition};
