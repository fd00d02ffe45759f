//! Latent concept transfer for weak-to-strong generalization.
//!
//! The crate simulates source and target domains generated by softmax-gated
//! mixtures of linear-Gaussian experts, fits them by EM, and implements three
//! weak-to-strong strategies (weak training, label refinement and latent
//! concept identification) together with the population oracles used to
//! score them. A mixture-of-HMMs laboratory covers identifiability checks for
//! sequence models, and [`harness`] wires everything into reproducible
//! experiments.

pub mod em;
pub mod error;
pub mod harness;
pub mod hmm;
pub mod mixture;
pub mod numeric;
pub mod strategies;

pub use error::{Error, Result};
pub use mixture::{
    canonical_benchmark, gate_weights, CovariateLaw, ExpertParams, GatingKind, GatingParams, LatentConceptSystem,
    SourceDataset, TargetDataset,
};
