//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] is rebuilt for every forward pass. Parameters live in a
//! [`ParamStore`] and are copied onto the tape as leaves; [`Tape::backward`]
//! accumulates into their `grad` tensors and returns gradients for plain
//! (non-parameter) leaves.

mod param;
mod tape;

pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var, PROB_FLOOR};
