//! Rothe-type time discretization of second-order evolution inclusions
//! `u'' + A u' + B u + ι*∂j(ιu') ∋ f` on finite-dimensional Galerkin spaces.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod hypotheses;
pub mod inclusion;
pub mod interpolants;
mod linalg;
pub mod problems;
pub mod spaces;
pub mod stepper;
pub mod timegrid;

pub use error::{Error, Result};
