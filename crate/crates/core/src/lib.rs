//! Regenerative mixtures of region laws over a finite alphabet.
//!
//! A model assigns a Markov region law to every start symbol. Regions end at
//! the first hit of a start symbol from a different class, where the law of
//! the hit symbol takes over. This crate computes the first-passage
//! quantities of such models exactly, builds the weighted global law and
//! checks its stationarity, samples from it (including the stationary
//! regime), and provides the randomly accepted variant and the
//! reverse-complement parity tools used on genomic sequences.

pub mod chargaff;
pub mod cli;
pub mod dagger;
pub mod error;
pub mod first_passage;
pub mod io;
pub mod kac;
pub mod lifted;
pub mod linalg;
pub mod model;
pub mod regeneration;
pub mod rng;
#[doc(hidden)]
pub mod testing;

pub use error::{Error, Result};
pub use model::{build_model, ModelConfig, ModelSpec, Symbol};
