//! Desk-scale laboratory for transferable adversarial attacks.
//!
//! The crate trains small CNN classifiers from scratch, runs the iterative
//! sign-method attack family against them (momentum, input diversity,
//! translation smoothing, scale copies, admix), and augments any of those
//! attacks with style-injected surrogate models: per-channel normalization
//! statistics synthesized from other images are spliced into the surrogate at
//! a split point, and gradients from the resulting stylized models are
//! accumulated alongside the vanilla gradient. A harness measures transfer
//! success rates across independently trained targets and emits
//! deterministic reports.

pub mod attack;
pub mod harness;
pub mod nn;
pub mod rng;
pub mod stylize;
pub mod tensor;

pub use tensor::{Tape, Tensor, TensorError, TensorId};
