//! Differentiable reasoning over function-free first-order knowledge bases.
//!
//! Formulas are evaluated as fuzzy truth degrees under the product t-norm
//! with the Reichenbach implication ("Product Real Logic"), turned into
//! losses over parameterized predicate models, and checked against exact
//! possible-world enumeration on small domains.

mod config;
pub mod cli;
pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod fol;
pub mod grounding;
pub mod model;
pub mod oracle;
pub mod prl;
pub mod synth;
pub mod tape;
pub mod train;

pub use error::{Error, Result};
