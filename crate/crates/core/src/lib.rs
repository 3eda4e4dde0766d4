//! Cross-fitted, norm-clipped covariance estimation with computable
//! empirical-Bernstein error certificates and data-driven tuning.

pub mod bench;
pub mod certify;
pub mod cli;
pub mod clipcov;
pub mod error;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod select;
pub mod symmat;
pub mod synth;
pub mod validate;

pub use error::{Error, Result};
pub use pipeline::{run_pipeline, Centering, PipelineConfig, PipelineOutput};
pub use select::Method;
pub use symmat::SymMatrix;
