//! Dense kernels shared by every higher-level module.

mod gs;
mod id;
mod matrix;
mod qr;
mod rng;

pub use gs::block_gram_schmidt;
pub use id::{interp_decomp, HmtParams, IdOptions, IdOutcome, IdResult, R1_GUARD};
pub use matrix::{dot, norm2, DenseMatrix};
pub use qr::{hmt_factor, qr, qr_counted, rrqr, rrqr_hmt, rrqr_scaled, RrqrResult};
pub use rng::{randn, RngStream};
