//! Weak-to-strong procedures and their population-level oracles.

mod identify;
mod refine;
mod weak_train;

pub use identify::{assign_components, latent_concept_identification, Assignment, Identification};
pub use refine::{
    calibrate_wli_constant, label_posterior, refine_labels, refine_observed, refinement_posterior, wli_bound,
    RefinedLabels, RefinementMode, RefinementPosterior, WliCheck,
};
pub use weak_train::{
    effective_eta, source_weight, weak_train, weak_train_limit_risk, BoundCoefficient, LimitRisk, WeakTrainConfig,
};

use crate::error::Result;
use crate::mixture::LatentConceptSystem;

/// `‖f - q‖_{2,Q}` under the covariate law, by tensor Gauss–Hermite quadrature,
/// with `q` the target regression of `system`.
pub fn l2q_distance<F: Fn(&[f64]) -> f64>(system: &LatentConceptSystem, f: F) -> Result<f64> {
    let d = system.x_dim();
    let (nodes, weights) = system.x_law().quadrature_rule(d)?;
    let mut total = 0.0;
    for (x, w) in nodes.chunks_exact(d).zip(&weights) {
        total += w * (f(x) - system.target_regression(x)?).powi(2);
    }
    Ok(total.sqrt())
}
