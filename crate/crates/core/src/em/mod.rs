//! Maximum-likelihood fitting of gated linear-expert mixtures by EM.
//!
//! Source records carry two label channels (`y` from the strong experts,
//! `y'` from the weak ones) that share a single latent concept per record;
//! target records carry only `y'`. Every fit uses one noise scale shared by
//! all components and channels.

mod fit;
mod gating;
mod init;

pub use fit::{fit_source_mle, fit_target_mle};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::{log_gate_into, GatingKind, GatingParams, LatentConceptSystem, SourceDataset, TargetDataset};
use crate::numeric::{dot, logsumexp, normal_logpdf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitMethod {
    /// k-means++ seeding plus Lloyd iterations on the standardized joint
    /// vector of covariates and labels; clusters become the initial responsibilities.
    #[default]
    KMeansPlusPlus,
    /// Uniformly chosen centers and a single nearest-center assignment.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Stop once the relative log-likelihood improvement falls below this.
    pub tol: f64,
    pub restarts: usize,
    pub init: InitMethod,
    /// Ridge added to every M-step least-squares system.
    pub ridge: f64,
    pub seed: u64,
    /// Kernel family of the gating network. Gaussian kernels have a known,
    /// shared variance; their locations are estimated.
    pub gating: GatingKind,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tol: 1e-8,
            restarts: 10,
            init: InitMethod::KMeansPlusPlus,
            ridge: 1e-8,
            seed: 0,
            gating: GatingKind::Constant,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::invalid("EM tolerance must be positive"));
        }
        if self.restarts == 0 {
            return Err(Error::invalid("EM needs at least one restart"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("EM needs at least one iteration"));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::invalid("ridge must be non-negative"));
        }
        if let GatingKind::Gaussian { variance } = self.gating {
            if !(variance > 0.0 && variance.is_finite()) {
                return Err(Error::invalid("gaussian gating variance must be positive"));
            }
        }
        Ok(())
    }
}

/// Result of one maximum-likelihood fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedMixture {
    pub pi: Vec<f64>,
    pub gating: GatingParams,
    /// False when the gating locations were held fixed (target fits reuse the
    /// source estimate) or the gating is constant.
    pub eta_estimated: bool,
    /// Strong-expert coefficients (source fits only).
    pub strong: Option<Vec<Vec<f64>>>,
    /// Weak-expert coefficients.
    pub weak: Option<Vec<Vec<f64>>>,
    pub sigma: f64,
    pub loglik: f64,
    pub n_iters: usize,
    pub restarts_used: usize,
    pub converged: bool,
    #[serde(default)]
    pub loglik_trace: Vec<f64>,
}

impl FittedMixture {
    pub fn k(&self) -> usize {
        self.pi.len()
    }

    pub fn x_dim(&self) -> usize {
        self.gating.dim()
    }

    /// Gate weights `π_k g(x|η_k) / Σ_j π_j g(x|η_j)`.
    pub fn gate(&self, x: &[f64]) -> Vec<f64> {
        let log_pi: Vec<f64> = self.pi.iter().map(|p| p.ln()).collect();
        let mut w = vec![0.0; self.k()];
        log_gate_into(x, &log_pi, &self.gating, &mut w);
        w.iter_mut().for_each(|v| *v = v.exp());
        w
    }

    fn mixture_mean(&self, family: &[Vec<f64>], x: &[f64]) -> f64 {
        self.gate(x).iter().zip(family).map(|(w, b)| w * dot(b, x)).sum()
    }

    /// Plug-in regression `Σ_k w_k(x) β̂_kᵀx` over the strong experts.
    pub fn strong_regression(&self, x: &[f64]) -> Option<f64> {
        self.strong.as_ref().map(|b| self.mixture_mean(b, x))
    }

    pub fn weak_regression(&self, x: &[f64]) -> Option<f64> {
        self.weak.as_ref().map(|b| self.mixture_mean(b, x))
    }

    /// Component `i` of the result is component `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if !crate::mixture::is_permutation(perm, self.k()) {
            return Err(Error::invalid("not a permutation of the components"));
        }
        let pick = |v: &Vec<Vec<f64>>| perm.iter().map(|&p| v[p].clone()).collect::<Vec<_>>();
        Ok(Self {
            pi: perm.iter().map(|&p| self.pi[p]).collect(),
            gating: self.gating.permuted(perm),
            strong: self.strong.as_ref().map(pick),
            weak: self.weak.as_ref().map(pick),
            ..self.clone()
        })
    }

    /// The generating source parameters of `system` in fit form (for
    /// likelihood comparisons). Uses the strong noise scale.
    pub fn source_truth(system: &LatentConceptSystem) -> Self {
        Self::from_parts(
            system.pi_p().to_vec(),
            system.gating().clone(),
            Some(system.strong().beta.clone()),
            Some(system.weak_p().beta.clone()),
            system.strong().noise_sd,
        )
    }

    /// The generating target weak-label parameters of `system` in fit form.
    pub fn target_truth(system: &LatentConceptSystem) -> Self {
        Self::from_parts(
            system.pi_q().to_vec(),
            system.gating().clone(),
            None,
            Some(system.weak_q().beta.clone()),
            system.weak_q().noise_sd,
        )
    }

    pub fn from_parts(
        pi: Vec<f64>,
        gating: GatingParams,
        strong: Option<Vec<Vec<f64>>>,
        weak: Option<Vec<Vec<f64>>>,
        sigma: f64,
    ) -> Self {
        Self {
            pi,
            gating,
            eta_estimated: false,
            strong,
            weak,
            sigma,
            loglik: f64::NAN,
            n_iters: 0,
            restarts_used: 0,
            converged: false,
            loglik_trace: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit serializes")
    }
}

/// Data accepted by [`loglikelihood`].
#[derive(Debug, Clone, Copy)]
pub enum Observations<'a> {
    Source(&'a SourceDataset),
    Target(&'a TargetDataset),
}

impl<'a> Observations<'a> {
    pub(crate) fn x_dim(&self) -> usize {
        match self {
            Observations::Source(d) => d.x_dim(),
            Observations::Target(d) => d.x_dim(),
        }
    }
    pub(crate) fn len(&self) -> usize {
        match self {
            Observations::Source(d) => d.len(),
            Observations::Target(d) => d.len(),
        }
    }
    pub(crate) fn x_flat(&self) -> &'a [f64] {
        match self {
            Observations::Source(d) => d.x_flat(),
            Observations::Target(d) => d.x_flat(),
        }
    }
    pub(crate) fn channels(&self) -> Vec<&'a [f64]> {
        match self {
            Observations::Source(d) => vec![d.y(), d.y_weak()],
            Observations::Target(d) => vec![d.y_weak()],
        }
    }
}

pub(crate) fn check_finite(obs: &Observations<'_>) -> Result<()> {
    if obs.x_flat().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("covariates".into()));
    }
    if obs.channels().iter().any(|c| c.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("labels".into()));
    }
    Ok(())
}

/// Exact observed-data log-likelihood of `data` under `params`, summed over
/// records with a per-record log-sum-exp over concepts.
pub fn loglikelihood(data: Observations<'_>, params: &FittedMixture) -> Result<f64> {
    check_finite(&data)?;
    let d = data.x_dim();
    if params.x_dim() != d {
        return Err(Error::DimensionMismatch { expected: params.x_dim(), got: d });
    }
    let families: Vec<&Vec<Vec<f64>>> = match data {
        Observations::Source(_) => vec![
            params.strong.as_ref().ok_or_else(|| Error::invalid("fit has no strong experts"))?,
            params.weak.as_ref().ok_or_else(|| Error::invalid("fit has no weak experts"))?,
        ],
        Observations::Target(_) => {
            vec![params.weak.as_ref().ok_or_else(|| Error::invalid("fit has no weak experts"))?]
        }
    };
    let k = params.k();
    for fam in &families {
        if fam.len() != k || fam.iter().any(|b| b.len() != d) {
            return Err(Error::DimensionMismatch { expected: k, got: fam.len() });
        }
    }
    if !(params.sigma > 0.0) {
        return Err(Error::invalid("noise scale must be positive"));
    }
    let log_pi: Vec<f64> = params.pi.iter().map(|p| p.ln()).collect();
    let channels = data.channels();
    let mut lw = vec![0.0; k];
    let mut total = 0.0;
    for (i, x) in data.x_flat().chunks_exact(d).enumerate() {
        log_gate_into(x, &log_pi, &params.gating, &mut lw);
        for (c, fam) in channels.iter().zip(&families) {
            for j in 0..k {
                lw[j] += normal_logpdf(c[i], dot(&fam[j], x), params.sigma);
            }
        }
        total += logsumexp(&lw);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::{canonical_benchmark, sample_source, CovariateLaw, ExpertParams};
    use crate::numeric::normal_pdf;

    #[test]
    fn single_record_single_component_closed_form() {
        let d = SourceDataset::new(1, vec![2.0], vec![1.0], vec![3.5], None).unwrap();
        let fit = FittedMixture::from_parts(
            vec![1.0],
            GatingParams::constant(1, 1),
            Some(vec![vec![0.4]]),
            Some(vec![vec![1.5]]),
            0.7,
        );
        let ll = loglikelihood(Observations::Source(&d), &fit).unwrap();
        let expected = normal_pdf(1.0, 0.8, 0.7).ln() + normal_pdf(3.5, 3.0, 0.7).ln();
        assert!((ll - expected).abs() < 1e-12);
    }

    #[test]
    fn equal_experts_collapse_to_one_component() {
        let s = canonical_benchmark();
        let data = sample_source(&s, 200, 3).unwrap();
        let one = FittedMixture::from_parts(
            vec![1.0],
            GatingParams::constant(1, 1),
            Some(vec![vec![0.5]]),
            Some(vec![vec![-0.2]]),
            0.9,
        );
        let base = loglikelihood(Observations::Source(&data), &one).unwrap();
        for pi in [[0.5, 0.5], [0.9, 0.1], [0.01, 0.99]] {
            let two = FittedMixture::from_parts(
                pi.to_vec(),
                GatingParams::gaussian(vec![vec![-1.0], vec![2.0]], 1.5).unwrap(),
                Some(vec![vec![0.5], vec![0.5]]),
                Some(vec![vec![-0.2], vec![-0.2]]),
                0.9,
            );
            let ll = loglikelihood(Observations::Source(&data), &two).unwrap();
            assert!((ll - base).abs() < 1e-9 * base.abs());
        }
    }

    #[test]
    fn matches_direct_enumeration() {
        let s = LatentConceptSystem::new(
            GatingParams::gaussian(vec![vec![-1.0, 0.0], vec![1.0, 0.5], vec![0.0, -1.0]], 0.8).unwrap(),
            vec![0.2, 0.5, 0.3],
            vec![0.6, 0.2, 0.2],
            ExpertParams::new(vec![vec![1.0, 0.0], vec![-1.0, 2.0], vec![0.5, 0.5]], 0.4).unwrap(),
            ExpertParams::new(vec![vec![1.2, 0.0], vec![-1.0, 2.5], vec![0.0, 0.5]], 0.4).unwrap(),
            ExpertParams::new(vec![vec![1.4, 0.0], vec![-1.0, 2.0], vec![0.5, 0.0]], 0.4).unwrap(),
            CovariateLaw::StandardNormal,
        )
        .unwrap();
        let data = sample_source(&s, 50, 11).unwrap();
        let fit = FittedMixture::source_truth(&s);
        let ll = loglikelihood(Observations::Source(&data), &fit).unwrap();
        // brute force: explicit densities and gate from the definition
        let mut brute = 0.0;
        for i in 0..data.len() {
            let x = data.x(i);
            let g: Vec<f64> = (0..3)
                .map(|k| {
                    let e = &s.gating().eta()[k];
                    let d2 = (x[0] - e[0]).powi(2) + (x[1] - e[1]).powi(2);
                    s.pi_p()[k] * (-d2 / 1.6).exp()
                })
                .collect();
            let z: f64 = g.iter().sum();
            let mut p = 0.0;
            for k in 0..3 {
                p += g[k] / z
                    * normal_pdf(data.y()[i], dot(&s.strong().beta[k], x), 0.4)
                    * normal_pdf(data.y_weak()[i], dot(&s.weak_p().beta[k], x), 0.4);
            }
            brute += p.ln();
        }
        assert!((ll - brute).abs() < 1e-10 * brute.abs(), "{ll} vs {brute}");
    }

    #[test]
    fn rejects_non_finite_and_mismatched_inputs() {
        let d = SourceDataset::new(1, vec![f64::NAN], vec![1.0], vec![1.0], None).unwrap();
        let fit = FittedMixture::source_truth(&canonical_benchmark());
        assert!(matches!(loglikelihood(Observations::Source(&d), &fit), Err(Error::NonFinite(_))));
        let d2 = SourceDataset::new(2, vec![0.0, 1.0], vec![1.0], vec![1.0], None).unwrap();
        assert!(loglikelihood(Observations::Source(&d2), &fit).is_err());
        let t = d2.to_target();
        assert!(loglikelihood(Observations::Target(&t), &FittedMixture::target_truth(&canonical_benchmark())).is_err());
    }
}
