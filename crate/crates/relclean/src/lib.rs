//! Detection and correction of noisy predicate labels in relation-triplet
//! datasets.
//!
//! The cleaning pipeline runs three stages over user-supplied embeddings:
//!
//! 1. [`neg_nsd`] recovers missing annotations among un-annotated pairs with
//!    a confidence-branch classifier trained on the annotated positives.
//! 2. [`pos_nsd`] flags low-density annotations inside each predicate class.
//! 3. [`nsc`] relabels flagged annotations by a weighted nearest-neighbour
//!    vote among clean samples with the same subject and object classes.
//!
//! [`synth`] generates datasets with planted noise and scores pipeline
//! output against the hidden truth; [`pipeline`] wires everything together.

// Range checks are written as `!(x > lo)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dataset;
pub mod error;
pub mod neg_nsd;
pub mod nsc;
pub mod pipeline;
pub mod pos_nsd;
pub mod synth;

pub use error::{Error, Result};
