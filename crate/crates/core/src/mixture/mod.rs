//! Softmax-gated mixtures of linear-Gaussian experts over a source and a
//! target domain that share covariate law and strong experts but differ in
//! concept prior and weak-expert parameters.

mod bias;
mod config;
mod dataset;
mod sample;

pub use bias::{conditional_bias_vectors, population_bias, PopulationBias};
pub use config::{ExpertsFile, GatingFile, SystemFile, SystemSection};
pub use dataset::{SourceDataset, TargetDataset};
pub use sample::{sample_covariates, sample_oracle_target, sample_source, sample_source_with_latent, sample_target};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{dot, logsumexp, quadrature, squared_distance};

/// Tolerance used when checking that a prior lies on the simplex.
pub const SIMPLEX_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GatingKind {
    /// `g(x|η) ≡ 1`: gate weights equal the prior.
    Constant,
    /// Isotropic Gaussian kernel `g(x|η) ∝ exp(-‖x-η‖²/(2·variance))`.
    Gaussian { variance: f64 },
}

/// Gating locations `η_k` and the kernel they parameterize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatingParams {
    eta: Vec<Vec<f64>>,
    kind: GatingKind,
}

impl GatingParams {
    pub fn new(kind: GatingKind, eta: Vec<Vec<f64>>) -> Result<Self> {
        if eta.is_empty() {
            return Err(Error::invalid("gating needs at least one component"));
        }
        let d = eta[0].len();
        if eta.iter().any(|e| e.len() != d) {
            return Err(Error::invalid("gating locations have inconsistent dimension"));
        }
        if eta.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gating locations".into()));
        }
        if let GatingKind::Gaussian { variance } = kind {
            if !(variance > 0.0 && variance.is_finite()) {
                return Err(Error::invalid("gaussian gating variance must be positive"));
            }
            for i in 0..eta.len() {
                for j in 0..i {
                    if squared_distance(&eta[i], &eta[j]) == 0.0 {
                        return Err(Error::invalid(format!("gating locations {j} and {i} coincide")));
                    }
                }
            }
        }
        Ok(Self { eta, kind })
    }

    /// Constant gating for `k` components in dimension `dim`.
    pub fn constant(k: usize, dim: usize) -> Self {
        Self { eta: vec![vec![0.0; dim]; k.max(1)], kind: GatingKind::Constant }
    }

    pub fn gaussian(eta: Vec<Vec<f64>>, variance: f64) -> Result<Self> {
        Self::new(GatingKind::Gaussian { variance }, eta)
    }

    pub fn k(&self) -> usize {
        self.eta.len()
    }

    pub fn dim(&self) -> usize {
        self.eta[0].len()
    }

    pub fn eta(&self) -> &[Vec<f64>] {
        &self.eta
    }

    pub fn kind(&self) -> GatingKind {
        self.kind
    }

    /// `ln g(x|η_k)` up to an additive constant shared by all `k`.
    #[inline]
    pub fn log_kernel(&self, k: usize, x: &[f64]) -> f64 {
        match self.kind {
            GatingKind::Constant => 0.0,
            GatingKind::Gaussian { variance } => -squared_distance(x, &self.eta[k]) / (2.0 * variance),
        }
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self { eta: perm.iter().map(|&p| self.eta[p].clone()).collect(), kind: self.kind }
    }
}

/// Writes `ln(π_k g(x|η_k)) - ln Σ_j π_j g(x|η_j)` into `out`.
#[inline]
pub(crate) fn log_gate_into(x: &[f64], log_pi: &[f64], gating: &GatingParams, out: &mut [f64]) {
    for k in 0..log_pi.len() {
        out[k] = log_pi[k] + gating.log_kernel(k, x);
    }
    let lse = logsumexp(out);
    for v in out.iter_mut() {
        *v -= lse;
    }
}

/// Normalized gate weights `w_k ∝ π_k g(x|η_k)`, computed in log space.
pub fn gate_weights(x: &[f64], pi: &[f64], gating: &GatingParams) -> Result<Vec<f64>> {
    if x.len() != gating.dim() {
        return Err(Error::DimensionMismatch { expected: gating.dim(), got: x.len() });
    }
    if pi.len() != gating.k() {
        return Err(Error::DimensionMismatch { expected: gating.k(), got: pi.len() });
    }
    check_simplex(pi, SIMPLEX_TOL, "prior")?;
    let log_pi: Vec<f64> = pi.iter().map(|p| p.ln()).collect();
    let mut w = vec![0.0; pi.len()];
    log_gate_into(x, &log_pi, gating, &mut w);
    for v in w.iter_mut() {
        *v = v.exp();
    }
    Ok(w)
}

pub(crate) fn check_simplex(pi: &[f64], tol: f64, what: &str) -> Result<()> {
    if pi.is_empty() {
        return Err(Error::invalid(format!("{what} is empty")));
    }
    if pi.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::invalid(format!("{what} has negative or non-finite entries")));
    }
    let s: f64 = pi.iter().sum();
    if (s - 1.0).abs() > tol {
        return Err(Error::invalid(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

/// Linear experts `μ(x; β_k) = β_kᵀx` with Gaussian noise of a shared scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertParams {
    pub beta: Vec<Vec<f64>>,
    /// Zero is accepted for noiseless simulation; densities need it positive.
    pub noise_sd: f64,
}

impl ExpertParams {
    pub fn new(beta: Vec<Vec<f64>>, noise_sd: f64) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::invalid("experts need at least one component"));
        }
        let d = beta[0].len();
        if d == 0 || beta.iter().any(|b| b.len() != d) {
            return Err(Error::invalid("expert coefficients have inconsistent dimension"));
        }
        if beta.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("expert coefficients".into()));
        }
        if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
            return Err(Error::invalid("noise sd must be non-negative and finite"));
        }
        Ok(Self { beta, noise_sd })
    }

    pub fn k(&self) -> usize {
        self.beta.len()
    }

    pub fn dim(&self) -> usize {
        self.beta[0].len()
    }

    #[inline]
    pub fn mean(&self, k: usize, x: &[f64]) -> f64 {
        dot(&self.beta[k], x)
    }

    /// Pairs of components whose coefficient vectors coincide. Identifiability
    /// of the mixture needs distinct experts, so callers surface these as warnings.
    pub fn coincident_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.k() {
            for j in (i + 1)..self.k() {
                if squared_distance(&self.beta[i], &self.beta[j]) == 0.0 {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self { beta: perm.iter().map(|&p| self.beta[p].clone()).collect(), noise_sd: self.noise_sd }
    }
}

/// Covariate law, shared by source and target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateLaw {
    #[default]
    StandardNormal,
    IsotropicNormal {
        mean: Vec<f64>,
        sd: f64,
    },
}

impl CovariateLaw {
    fn validate(&self, dim: usize) -> Result<()> {
        if let CovariateLaw::IsotropicNormal { mean, sd } = self {
            if mean.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: mean.len() });
            }
            if !(*sd > 0.0 && sd.is_finite()) || mean.iter().any(|m| !m.is_finite()) {
                return Err(Error::invalid("covariate law needs finite mean and positive sd"));
            }
        }
        Ok(())
    }

    /// Maps a standard normal draw onto this law.
    #[inline]
    pub(crate) fn transform(&self, z: &mut [f64]) {
        if let CovariateLaw::IsotropicNormal { mean, sd } = self {
            for (v, m) in z.iter_mut().zip(mean) {
                *v = m + sd * *v;
            }
        }
    }

    /// Quadrature rule for expectations under this law in `dim` dimensions:
    /// row-major nodes plus weights summing to one.
    pub fn quadrature_rule(&self, dim: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let per_axis = match dim {
            1 => 120,
            2 => 60,
            3 => 30,
            _ => ((2.0e6f64).powf(1.0 / dim as f64).floor() as usize).clamp(4, 16),
        };
        let (mut nodes, weights) = quadrature::gauss_hermite_tensor(dim, per_axis)?;
        for chunk in nodes.chunks_exact_mut(dim) {
            self.transform(chunk);
        }
        Ok((nodes, weights))
    }

    /// `E[f(X)]` by tensor Gauss–Hermite quadrature.
    pub fn expectation<F: FnMut(&[f64]) -> f64>(&self, dim: usize, mut f: F) -> Result<f64> {
        let (nodes, weights) = self.quadrature_rule(dim)?;
        Ok(nodes.chunks_exact(dim).zip(&weights).map(|(x, w)| w * f(x)).sum())
    }
}

/// The full generative specification of source and target domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentConceptSystem {
    k: usize,
    x_dim: usize,
    gating: GatingParams,
    pi_p: Vec<f64>,
    pi_q: Vec<f64>,
    strong: ExpertParams,
    weak_p: ExpertParams,
    weak_q: ExpertParams,
    x_law: CovariateLaw,
}

impl LatentConceptSystem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        gating: GatingParams,
        pi_p: Vec<f64>,
        pi_q: Vec<f64>,
        strong: ExpertParams,
        weak_p: ExpertParams,
        weak_q: ExpertParams,
        x_law: CovariateLaw,
    ) -> Result<Self> {
        let k = gating.k();
        let x_dim = strong.dim();
        check_simplex(&pi_p, SIMPLEX_TOL, "source prior")?;
        check_simplex(&pi_q, SIMPLEX_TOL, "target prior")?;
        for (name, len) in [
            ("source prior", pi_p.len()),
            ("target prior", pi_q.len()),
            ("strong experts", strong.k()),
            ("source weak experts", weak_p.k()),
            ("target weak experts", weak_q.k()),
        ] {
            if len != k {
                return Err(Error::invalid(format!("{name} has {len} components, gating has {k}")));
            }
        }
        for e in [&weak_p, &weak_q] {
            if e.dim() != x_dim {
                return Err(Error::DimensionMismatch { expected: x_dim, got: e.dim() });
            }
        }
        if gating.dim() != x_dim {
            return Err(Error::DimensionMismatch { expected: x_dim, got: gating.dim() });
        }
        x_law.validate(x_dim)?;
        Ok(Self { k, x_dim, gating, pi_p, pi_q, strong, weak_p, weak_q, x_law })
    }

    pub fn k(&self) -> usize {
        self.k
    }
    pub fn x_dim(&self) -> usize {
        self.x_dim
    }
    pub fn gating(&self) -> &GatingParams {
        &self.gating
    }
    pub fn pi_p(&self) -> &[f64] {
        &self.pi_p
    }
    pub fn pi_q(&self) -> &[f64] {
        &self.pi_q
    }
    pub fn strong(&self) -> &ExpertParams {
        &self.strong
    }
    pub fn weak_p(&self) -> &ExpertParams {
        &self.weak_p
    }
    pub fn weak_q(&self) -> &ExpertParams {
        &self.weak_q
    }
    pub fn x_law(&self) -> &CovariateLaw {
        &self.x_law
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.x_dim {
            return Err(Error::DimensionMismatch { expected: self.x_dim, got: x.len() });
        }
        Ok(())
    }

    /// `p(k|x)`.
    pub fn source_gate(&self, x: &[f64]) -> Result<Vec<f64>> {
        gate_weights(x, &self.pi_p, &self.gating)
    }

    /// `q(k|x)`.
    pub fn target_gate(&self, x: &[f64]) -> Result<Vec<f64>> {
        gate_weights(x, &self.pi_q, &self.gating)
    }

    /// Ground-truth target regression `E_Q[Y|x] = Σ_k q(k|x) β_kᵀx`.
    pub fn target_regression(&self, x: &[f64]) -> Result<f64> {
        self.check_x(x)?;
        let w = self.target_gate(x)?;
        Ok(w.iter().enumerate().map(|(k, wk)| wk * self.strong.mean(k, x)).sum())
    }

    /// Source regression `E_P[Y|x]`.
    pub fn source_regression(&self, x: &[f64]) -> Result<f64> {
        self.check_x(x)?;
        let w = self.source_gate(x)?;
        Ok(w.iter().enumerate().map(|(k, wk)| wk * self.strong.mean(k, x)).sum())
    }

    /// Weak-label regression on the target domain `E_Q[Y'|x]`.
    pub fn weak_target_regression(&self, x: &[f64]) -> Result<f64> {
        self.check_x(x)?;
        let w = self.target_gate(x)?;
        Ok(w.iter().enumerate().map(|(k, wk)| wk * self.weak_q.mean(k, x)).sum())
    }

    /// Relabels every component family jointly: component `i` of the result
    /// is component `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if !is_permutation(perm, self.k) {
            return Err(Error::invalid("not a permutation of the components"));
        }
        Ok(Self {
            k: self.k,
            x_dim: self.x_dim,
            gating: self.gating.permuted(perm),
            pi_p: perm.iter().map(|&p| self.pi_p[p]).collect(),
            pi_q: perm.iter().map(|&p| self.pi_q[p]).collect(),
            strong: self.strong.permuted(perm),
            weak_p: self.weak_p.permuted(perm),
            weak_q: self.weak_q.permuted(perm),
            x_law: self.x_law.clone(),
        })
    }

    /// Copy with a different target prior.
    pub fn with_pi_q(&self, pi_q: Vec<f64>) -> Result<Self> {
        Self::new(
            self.gating.clone(),
            self.pi_p.clone(),
            pi_q,
            self.strong.clone(),
            self.weak_p.clone(),
            self.weak_q.clone(),
            self.x_law.clone(),
        )
    }

    /// Copy with different weak experts.
    pub fn with_weak(&self, weak_p: ExpertParams, weak_q: ExpertParams) -> Result<Self> {
        Self::new(
            self.gating.clone(),
            self.pi_p.clone(),
            self.pi_q.clone(),
            self.strong.clone(),
            weak_p,
            weak_q,
            self.x_law.clone(),
        )
    }

    /// Warnings about parameter configurations that defeat identifiability.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, e) in [("strong", &self.strong), ("weak_p", &self.weak_p), ("weak_q", &self.weak_q)] {
            for (i, j) in e.coincident_pairs() {
                out.push(format!("{name} experts {i} and {j} coincide; components are not identifiable"));
            }
        }
        out
    }
}

pub(crate) fn is_permutation(perm: &[usize], k: usize) -> bool {
    if perm.len() != k {
        return false;
    }
    let mut seen = vec![false; k];
    for &p in perm {
        if p >= k || seen[p] {
            return false;
        }
        seen[p] = true;
    }
    true
}

/// The two-concept, one-dimensional benchmark used throughout the tests and
/// the default experiment: constant gating, `π^p = (0.6, 0.4)`,
/// `π^q = (0.1, 0.9)`, strong slopes `(1, -1)`, source weak slopes
/// `(1.5, -1.5)`, target weak slopes `(1.7, -1.3)`, noise sd 0.3.
pub fn canonical_benchmark() -> LatentConceptSystem {
    let noise = 0.3;
    LatentConceptSystem::new(
        GatingParams::constant(2, 1),
        vec![0.6, 0.4],
        vec![0.1, 0.9],
        ExpertParams::new(vec![vec![1.0], vec![-1.0]], noise).unwrap(),
        ExpertParams::new(vec![vec![1.5], vec![-1.5]], noise).unwrap(),
        ExpertParams::new(vec![vec![1.7], vec![-1.3]], noise).unwrap(),
        CovariateLaw::StandardNormal,
    )
    .expect("canonical benchmark is valid")
}
