//! Progressive depth-expansion training at desk scale.
//!
//! A small reverse-mode autodiff engine drives two model families (a residual
//! MLP and a tiny pre-norm transformer) initialized under the spectral muP
//! condition. Models can be grown in depth mid-run with seven expansion
//! methods, trained with Muon-NSGD, AdamW or SGD under WSD/cosine/constant
//! schedules, and compared through FLOP accounting and mixing-time detection.
//! The `convex` module checks the convergence bounds of progressive training
//! numerically on planted convex problems.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod checkpoint;
pub mod convex;
pub mod expansion;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod tensor;
