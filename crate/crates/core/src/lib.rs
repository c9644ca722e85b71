//! Two-stage salient object detection: a siamese ranker orders object
//! proposals by semantic saliency, then candidate saliency maps are fused
//! inside the top-ranked boxes.

// `!(x > 0.0)` style checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fusion;
pub mod io;
pub mod localization;
pub mod metrics;
pub mod pairgen;
pub mod pipeline;
pub mod par;
pub mod proposals;
pub mod ranker;
pub mod retrieval;
pub mod synth;

pub use error::{Error, Result};
pub use io::{BBox, SaliencyMap};
pub use par::Exec;
