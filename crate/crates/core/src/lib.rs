//! Zero-shot human-object interaction detection with top-down object and
//! verb nomination, asymmetric co-attention, a compact DETR-style detector
//! and an object-regulated focal loss.

pub mod coattention;
pub mod dataset_eval;
pub mod detr_lite;
pub mod error;
pub mod matching_losses;
pub mod nominators;
pub mod numerics;
pub mod pipeline;
pub mod semantics;
mod wire;

pub use error::{Error, Result};
