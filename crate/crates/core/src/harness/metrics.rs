use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::em::FittedMixture;
use crate::error::{Error, Result};
use crate::mixture::{sample_covariates, LatentConceptSystem};
use crate::numeric::stats::mean_and_se;

/// Largest K for which parameter errors enumerate every permutation.
pub const MAX_ALIGN_K: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct L2Estimate {
    pub value: f64,
    /// Standard error by the delta method on the mean squared difference.
    pub se: f64,
}

/// Monte Carlo `‖f − q‖_{2,Q}` with `q` the target regression of `system`.
pub fn metric_l2q<F: Fn(&[f64]) -> f64>(
    f: F,
    system: &LatentConceptSystem,
    mc_points: usize,
    seed: u64,
) -> Result<L2Estimate> {
    if mc_points < 100 {
        return Err(Error::invalid("mc_points must be at least 100"));
    }
    let d = system.x_dim();
    let xs = sample_covariates(system, mc_points, seed)?;
    let sq =
        xs.chunks_exact(d).map(|x| Ok((f(x) - system.target_regression(x)?).powi(2))).collect::<Result<Vec<f64>>>()?;
    let (m, se_m) = mean_and_se(&sq);
    if !m.is_finite() {
        return Err(Error::NonFinite("L2(Q) metric".into()));
    }
    let value = m.sqrt();
    let se = if value > 0.0 { se_m / (2.0 * value) } else { 0.0 };
    Ok(L2Estimate { value, se })
}

/// Which generating parameters a fit is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamFamily {
    /// `π^p`, strong experts and source weak experts.
    Source,
    /// `π^q`, strong experts and target weak experts.
    Target,
}

fn component_distance(
    fit: &FittedMixture,
    system: &LatentConceptSystem,
    family: ParamFamily,
    i: usize,
    t: usize,
) -> f64 {
    let norm = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
    let (pi, weak) = match family {
        ParamFamily::Source => (system.pi_p(), &system.weak_p().beta),
        ParamFamily::Target => (system.pi_q(), &system.weak_q().beta),
    };
    let mut e = (fit.pi[i] - pi[t]).abs();
    if let Some(s) = &fit.strong {
        e = e.max(norm(&s[i], &system.strong().beta[t]));
    }
    if let Some(w) = &fit.weak {
        e = e.max(norm(&w[i], &weak[t]));
    }
    e
}

/// Best alignment of fitted components to true concepts: `perm[t]` is the
/// fitted index matched to concept `t`, and the error is the largest
/// per-component distance (prior difference, Euclidean coefficient
/// distances) under that alignment. Ties go to the lexicographically first
/// permutation.
pub fn align_to_truth(
    fit: &FittedMixture,
    system: &LatentConceptSystem,
    family: ParamFamily,
) -> Result<(Vec<usize>, f64)> {
    let k = system.k();
    if fit.k() != k {
        return Err(Error::DimensionMismatch { expected: k, got: fit.k() });
    }
    if k > MAX_ALIGN_K {
        return Err(Error::invalid(format!(
            "parameter alignment enumerates K! permutations; K = {k} exceeds {MAX_ALIGN_K}"
        )));
    }
    let mut best = (Vec::new(), f64::INFINITY);
    for perm in (0..k).permutations(k) {
        let e = (0..k).map(|t| component_distance(fit, system, family, perm[t], t)).fold(0.0, f64::max);
        if e < best.1 {
            best = (perm, e);
        }
    }
    if best.0.is_empty() {
        return Err(Error::NonFinite("parameter error".into()));
    }
    Ok(best)
}

/// Permutation-aligned parameter error of `fit` against `system`.
pub fn metric_param_error(fit: &FittedMixture, system: &LatentConceptSystem, family: ParamFamily) -> Result<f64> {
    align_to_truth(fit, system, family).map(|(_, e)| e)
}
