//! Speculative training for small trainable systems.
//!
//! A training run is viewed as a trajectory of parameter vectors. At every
//! checkpoint the run is classified into a regime from the cosine similarity of
//! consecutive activation fingerprints. In favorable regimes analytic
//! predictors (Adam-moment, linear and quadratic extrapolation) propose the
//! parameters `K` steps ahead, and a proposal is only adopted when its held-out
//! loss passes an acceptance criterion. Rejected proposals leave the run
//! untouched.
//!
//! The crate is split along those lines:
//!
//! - [`param`]: flat parameter vectors and the vector math everything else uses
//! - [`tasks`]: built-in trainable systems (quadratic bowl, MLP regression,
//!   tiny next-token model)
//! - [`optim`]: AdamW with warmup and cosine decay
//! - [`trajectory`]: checkpoints, the rolling history window, binary persistence
//! - [`regime`]: fingerprint similarity, threshold calibration, classification
//! - [`predict`]: the weight predictors
//! - [`verify`]: strict / adaptive / proximity acceptance
//! - [`engine`]: training loop with live leaps and cascaded speculation
//! - [`harness`]: the multi-seed train / K-sweep / cascade protocol and reports
//! - [`config`]: the run configuration shared by the harness and the CLI

pub mod config;
pub mod engine;
pub mod error;
mod fsutil;
mod serde_f64;
pub mod harness;
pub mod optim;
pub mod param;
pub mod predict;
pub mod regime;
pub mod tasks;
pub mod trajectory;
pub mod verify;

pub use error::{Error, Result};
pub use fsutil::write_atomic;
pub use param::ParamVector;
