//! probekit trains and evaluates probe heads over frozen-encoder embedding
//! banks. It ships a minimal f64 tensor core with hand-written backward
//! passes, a bit-exact on-disk bank format with a planted-signal synthetic
//! generator, linear and attention probe heads with multi-layer adapters and
//! learnable layer weights, an AdamW training engine with a warmup-cosine
//! schedule, top-1 / macro-mAP evaluation, and a CLI tying it together.

pub mod bank;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
