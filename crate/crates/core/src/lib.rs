//! Collaborative attention network (CAN) for person re-identification.
//!
//! Everything is built from scratch on a small `f64` reverse-mode autodiff
//! core: a miniature residual backbone, per-branch final stages, adaptive
//! max+avg pooling, adjacent-slice collaborative attention, a shared
//! embedding, cosine-softmax heads, and the CE + batch-hard triplet + center
//! objective. Retrieval quality is measured with mAP and CMC.

pub mod autodiff;
pub mod bench;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod nn;
pub mod optim;
pub mod tensor;
pub mod train;

pub use error::{CanError, Result};
pub use tensor::{ReduceMode, Tensor};
