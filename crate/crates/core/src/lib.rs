//! Audio-visual embedding fusion for identity verification.
//!
//! Three fusion heads (mean, MLP, multi-view) sit on top of fixed-size
//! audio and video backbone outputs and are trained with an arc-margin
//! loss. Mean and MLP heads learn a "null" representation for a missing
//! modality through random masking of their inputs. The evaluation side
//! scores verification trials under six modality modes and measures how the
//! learned embeddings are distributed.

pub mod arc_margin;
pub mod data;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod gradcheck;
pub mod io;
pub mod math;
pub mod par;
pub mod pipeline;
pub mod rng;
pub mod training;

pub use error::{Error, ErrorClass, FormatError, Result};
