#![allow(clippy::needless_range_loop, clippy::too_many_arguments)]

//! Multi-domain active learning.
//!
//! Each original domain is paired with a surrogate built as a similarity
//! weighted mixture of the labeled domains. An encoder is trained so the
//! surrogates match their original domains under a conditional
//! discriminator, the similarity weights are learned jointly, and their column
//! means drive how the labeling budget is split across domains.

pub mod bound;
pub mod cal;
pub mod data;
pub mod error;
pub mod harness;
pub mod nn;
pub mod par;
pub mod query;
pub mod rng;
pub mod simplex;
pub mod table;

pub use error::{MudalError, Result};
