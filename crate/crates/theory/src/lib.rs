//! Brute-force checks of the variational rate-distortion bound and the
//! cross-entropy surrogate identity on one-dimensional toy Bayes models.
//!
//! Every density involved is piecewise constant in `ỹ`, so all integrals
//! are evaluated exactly as finite sums over segments.

pub mod bound;
pub mod campaign;
mod error;
pub mod model;
pub mod random;
pub mod segments;

pub use bound::{bound_terms, eval_lhs, eval_rhs, verify_lemma1, verify_proposition1, BoundTerms, Lemma1Check, Proposition1Check};
pub use campaign::{run, LemmaReport, PropositionReport, TheoryReport};
pub use error::{Result, TheoryError};
pub use model::{RateDensity, Task, ToyBayesModel};
