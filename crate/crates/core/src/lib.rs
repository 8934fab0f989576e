//! Differentiable rule-list learning.
//!
//! Interval predicates are relaxed into a three-way softmax, conjunctions into
//! a weighted harmonic mean with slack, and rule selection into a
//! Gumbel-Softmax over priorities. Training anneals both temperatures so the
//! soft model converges to a crisp if/else-if rule list, which [`extraction`]
//! turns into readable rules over the original feature units.

pub mod conjunction;
pub mod data;
mod ddouble;
pub mod document;
pub mod error;
pub mod evaluation;
pub mod extraction;
pub mod model;
pub mod predicate;
mod reference;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
