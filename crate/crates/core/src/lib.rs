//! Referring video shadow detection.
//!
//! The crate bundles the pieces of a query-based referring shadow segmenter:
//!
//! - [`msa`]: a colour-space shadow prior (grey and S/V thresholds, binary
//!   opening, union) used to emphasise candidate shadow pixels,
//! - [`tsm`]: intra-clip and hierarchical inter-clip memory over the five
//!   most recent clips, with memory embedding, read and propagation,
//! - [`model`]: a small transformer segmenter that wires both together,
//! - [`losses`] and [`metrics`]: the box/mask training objective and the
//!   Precision@K, IoU and mAP evaluation protocol,
//! - [`dataset`]: manifest schema, validation, statistics and a synthetic
//!   video generator.
//!
//! Everything runs on a small `f64` tensor tape ([`autograd`]).

pub mod autograd;
pub mod config;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod gradsuite;
pub mod image;
pub mod imageio;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod msa;
pub mod nn;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod text;
pub mod tsm;

pub use error::{Error, Result};
pub use tensor::Tensor;
