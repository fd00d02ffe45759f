use serde::{Deserialize, Serialize};

use crate::em::{fit_source_mle, fit_target_mle, EmConfig, FittedMixture};
use crate::error::{Error, Result};
use crate::mixture::{ExpertParams, SourceDataset, TargetDataset};
use crate::numeric::squared_distance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// `a[t]` is the source component matched to target component `t`.
    pub a: Vec<usize>,
    /// `distances[t][s] = ‖β^{w_q}_t - β^{w_p}_s‖²`
    pub distances: Vec<Vec<f64>>,
    pub is_permutation: bool,
}

impl Assignment {
    /// Inverse map (source to target); `None` unless bijective.
    pub fn inverse(&self) -> Option<Vec<usize>> {
        if !self.is_permutation {
            return None;
        }
        let mut inv = vec![0; self.a.len()];
        for (t, &s) in self.a.iter().enumerate() {
            inv[s] = t;
        }
        Some(inv)
    }
}

/// Matches every target weak component to the nearest source weak component
/// in squared Euclidean distance; ties go to the lowest source index.
pub fn assign_components(weak_p_hat: &ExpertParams, weak_q_hat: &ExpertParams) -> Result<Assignment> {
    assign_betas(&weak_p_hat.beta, &weak_q_hat.beta)
}

pub(crate) fn assign_betas(weak_p: &[Vec<f64>], weak_q: &[Vec<f64>]) -> Result<Assignment> {
    if weak_p.len() != weak_q.len() {
        return Err(Error::DimensionMismatch { expected: weak_p.len(), got: weak_q.len() });
    }
    if weak_p.iter().chain(weak_q).any(|b| b.len() != weak_p[0].len()) {
        return Err(Error::invalid("expert coefficient vectors differ in length"));
    }
    let distances: Vec<Vec<f64>> =
        weak_q.iter().map(|t| weak_p.iter().map(|s| squared_distance(t, s)).collect()).collect();
    let a: Vec<usize> = distances
        .iter()
        .map(|row| {
            let mut best = 0;
            for (s, v) in row.iter().enumerate() {
                if *v < row[best] {
                    best = s;
                }
            }
            best
        })
        .collect();
    let is_permutation = crate::mixture::is_permutation(&a, weak_p.len());
    Ok(Assignment { a, distances, is_permutation })
}

/// Output of latent concept identification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Identification {
    /// Estimated target model in source labelling: source gating and strong
    /// experts, target prior and target weak experts transported through the
    /// assignment.
    pub target_model: FittedMixture,
    pub assignment: Assignment,
    pub source_fit: FittedMixture,
    pub target_fit: FittedMixture,
}

impl Identification {
    /// Plug-in estimate of the target regression `E_Q[Y|x]`.
    pub fn regression(&self, x: &[f64]) -> f64 {
        self.target_model.strong_regression(x).expect("target model carries strong experts")
    }
}

/// Fits source and target mixtures, matches components through their weak
/// experts, and moves the target prior onto the source strong experts.
///
/// Source component `s` receives `π̂^q_t` for the target component `t` with
/// `a(t) = s`. A non-bijective assignment is an error carrying the distance
/// matrix.
pub fn latent_concept_identification(
    source: &SourceDataset,
    target: &TargetDataset,
    k: usize,
    cfg: &EmConfig,
) -> Result<Identification> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let source_fit = fit_source_mle(source, k, cfg)?;
    let target_fit = fit_target_mle(target, k, cfg, Some(&source_fit.gating))?;
    let weak_p = source_fit.weak.as_ref().expect("source fit has weak experts");
    let weak_q = target_fit.weak.as_ref().expect("target fit has weak experts");
    let assignment = assign_betas(weak_p, weak_q)?;
    let inv = assignment.inverse().ok_or_else(|| Error::NonBijectiveAssignment {
        assignment: assignment.a.clone(),
        distances: assignment.distances.clone(),
    })?;
    let mut target_model = FittedMixture::from_parts(
        inv.iter().map(|&t| target_fit.pi[t]).collect(),
        source_fit.gating.clone(),
        source_fit.strong.clone(),
        Some(inv.iter().map(|&t| weak_q[t].clone()).collect()),
        source_fit.sigma,
    );
    target_model.eta_estimated = source_fit.eta_estimated;
    target_model.converged = source_fit.converged && target_fit.converged;
    Ok(Identification { target_model, assignment, source_fit, target_fit })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_estimates_give_identity() {
        let e = ExpertParams::new(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![3.0, 3.0]], 1.0).unwrap();
        let a = assign_components(&e, &e).unwrap();
        assert_eq!(a.a, vec![0, 1, 2]);
        assert!(a.is_permutation);
    }

    #[test]
    fn nearest_neighbour_swap() {
        let p = ExpertParams::new(vec![vec![0.0], vec![10.0]], 1.0).unwrap();
        let q = ExpertParams::new(vec![vec![9.9], vec![0.1]], 1.0).unwrap();
        let a = assign_components(&p, &q).unwrap();
        assert_eq!(a.a, vec![1, 0]);
        assert!(a.is_permutation);
        assert_eq!(a.inverse(), Some(vec![1, 0]));
    }

    #[test]
    fn ties_go_to_lowest_index_and_collisions_are_flagged() {
        let p = ExpertParams::new(vec![vec![-1.0], vec![1.0]], 1.0).unwrap();
        let q = ExpertParams::new(vec![vec![0.0], vec![0.5]], 1.0).unwrap();
        let a = assign_components(&p, &q).unwrap();
        assert_eq!(a.a, vec![0, 1]);
        let q = ExpertParams::new(vec![vec![0.9], vec![1.1]], 1.0).unwrap();
        let a = assign_components(&p, &q).unwrap();
        assert_eq!(a.a, vec![1, 1]);
        assert!(!a.is_permutation);
        assert!(a.inverse().is_none());
    }

    #[test]
    fn mismatched_sizes_error() {
        let p = ExpertParams::new(vec![vec![0.0], vec![1.0]], 1.0).unwrap();
        let q = ExpertParams::new(vec![vec![0.0]], 1.0).unwrap();
        assert!(assign_components(&p, &q).is_err());
    }
}
