//! Counterfactual-explanation engine: data loading, models, explainers,
//! evaluation, and the file-mediated experiment pipeline.

pub mod amortized;
pub mod cfproto;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod models;
pub mod pgm;
pub mod pipeline;
pub mod record;

pub use cfx_tensor as tensor;
pub use error::{CoreError, Result};
