//! Spectral low-rank adaptation of frozen weight matrices, with LoRA and DoRA
//! baselines, evaluated on a small hand-differentiated transformer encoder
//! over synthetic speaker-verification tasks.
//!
//! * [`mat`]: dense matrices and a deterministic Jacobi SVD.
//! * [`adapters`]: LoRA, DoRA, spectral adapters and frozen ablation variants.
//! * [`nn`]: the encoder, AAM-Softmax loss, manual backprop and Adam.
//! * [`eval`]: cosine scoring, EER and minDCF.
//! * [`harness`]: synthetic corpora, experiments, sweeps and persistence.

pub mod adapters;
pub mod error;
pub mod eval;
pub mod harness;
pub mod mat;
pub mod nn;

pub use error::{Error, Result};
pub use mat::{Matrix, SvdFactors, TruncatedSvd};
