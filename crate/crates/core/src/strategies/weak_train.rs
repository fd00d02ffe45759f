use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::em::{EmConfig, FittedMixture};
use crate::error::{Error, Result};
use crate::mixture::{
    population_bias, GatingParams, LatentConceptSystem, PopulationBias, SourceDataset, TargetDataset,
};
use crate::numeric::linalg::{solve_symmetric, NormalEquations};
use crate::numeric::{dot, seeding, LN_SQRT_2PI};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeakTrainConfig {
    /// Weight of each source record relative to a weak target record.
    pub lambda: f64,
    pub k_fit: usize,
    /// Restart count, iteration cap, tolerance, ridge and seed are taken from here.
    pub em: EmConfig,
}

impl Default for WeakTrainConfig {
    fn default() -> Self {
        Self { lambda: 1.0, k_fit: 2, em: EmConfig::default() }
    }
}

/// Pseudo-label weight of the source labels: with equal sample sizes the
/// weak-training loss equals least squares against `η y + (1-η) y'`.
pub fn source_weight(lambda: f64) -> f64 {
    lambda / (1.0 + lambda)
}

/// Source weight for unequal sample sizes.
pub fn effective_eta(lambda: f64, n_p: usize, n_q: usize) -> f64 {
    let a = lambda * n_p as f64;
    a / (a + n_q as f64)
}

fn project_to_simplex(v: &mut [f64]) {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

struct Quadratic {
    gram: nalgebra::DMatrix<f64>,
    rhs: Vec<f64>,
    weight: f64,
    sum_sq: f64,
}

impl Quadratic {
    /// Weighted mean squared error of the linear function `b`.
    fn mse(&self, b: &[f64]) -> f64 {
        let gb = &self.gram * nalgebra::DVector::from_column_slice(b);
        (dot(b, gb.as_slice()) - 2.0 * dot(b, &self.rhs) + self.sum_sq) / self.weight
    }

    fn grad(&self, b: &[f64]) -> Vec<f64> {
        let gb = &self.gram * nalgebra::DVector::from_column_slice(b);
        gb.iter().zip(&self.rhs).map(|(g, r)| 2.0 * (g - r) / self.weight).collect()
    }
}

fn combine(pi: &[f64], beta: &[Vec<f64>]) -> Vec<f64> {
    let mut b = vec![0.0; beta[0].len()];
    for (p, bk) in pi.iter().zip(beta) {
        for (acc, v) in b.iter_mut().zip(bk) {
            *acc += p * v;
        }
    }
    b
}

/// Projected gradient descent on `(π, β)`; returns the final objective.
fn descend(q: &Quadratic, pi: &mut [f64], beta: &mut [Vec<f64>], cfg: &EmConfig) -> f64 {
    let mut f = q.mse(&combine(pi, beta));
    let mut step = 1.0;
    for _ in 0..cfg.max_iters * 20 {
        let g = q.grad(&combine(pi, beta));
        let gpi: Vec<f64> = beta.iter().map(|b| dot(b, &g)).collect();
        let mut improved = false;
        while step > 1e-14 {
            let mut npi: Vec<f64> = pi.iter().zip(&gpi).map(|(p, d)| p - step * d).collect();
            project_to_simplex(&mut npi);
            let nbeta: Vec<Vec<f64>> = beta
                .iter()
                .zip(pi.iter())
                .map(|(b, p)| b.iter().zip(&g).map(|(v, gv)| v - step * p * gv).collect())
                .collect();
            let nf = q.mse(&combine(&npi, &nbeta));
            if nf < f {
                pi.copy_from_slice(&npi);
                beta.clone_from_slice(&nbeta);
                let gain = f - nf;
                f = nf;
                improved = gain > cfg.tol * f.abs().max(1e-300);
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    f
}

/// Weak training: least squares of the mixture mean `Σ_k π_k β_kᵀx` against
/// the weak target labels (weight 1) and the source labels (weight λ).
///
/// The fitted experts are returned in the `strong` slot of a constant-gated
/// fit. `loglik` is the weighted Gaussian log-likelihood of the fitted mean
/// function at the fitted residual scale.
pub fn weak_train(source: &SourceDataset, target: &TargetDataset, cfg: &WeakTrainConfig) -> Result<FittedMixture> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(cfg.lambda >= 0.0 && cfg.lambda.is_finite()) {
        return Err(Error::invalid("lambda must be non-negative"));
    }
    if cfg.k_fit == 0 {
        return Err(Error::invalid("K_fit must be at least 1"));
    }
    cfg.em.validate()?;
    let d = source.x_dim();
    if target.x_dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: target.x_dim() });
    }
    let mut ne = NormalEquations::new(d);
    let mut sum_sq = 0.0;
    for (x, y) in target.xs().zip(target.y_weak()) {
        ne.add(x, *y, 1.0);
        sum_sq += y * y;
    }
    if cfg.lambda > 0.0 {
        for (x, y) in source.xs().zip(source.y()) {
            ne.add(x, *y, cfg.lambda);
            sum_sq += cfg.lambda * y * y;
        }
    }
    if [sum_sq, ne.total_weight()].iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training data".into()));
    }
    let mut gram = ne.gram();
    for i in 0..d {
        gram[(i, i)] += cfg.em.ridge;
    }
    let q = Quadratic { gram, rhs: ne.rhs().to_vec(), weight: ne.total_weight(), sum_sq };
    let k = cfg.k_fit;
    let (pi, beta, mse) = if k == 1 {
        let b = solve_symmetric(q.gram.clone(), &q.rhs)?;
        let mse = q.mse(&b);
        (vec![1.0], vec![b], mse)
    } else {
        let mut best: Option<(Vec<f64>, Vec<Vec<f64>>, f64)> = None;
        for r in 0..cfg.em.restarts as u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seeding::derive(cfg.em.seed, r));
            let mut pi: Vec<f64> = (0..k).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
            let s: f64 = pi.iter().sum();
            pi.iter_mut().for_each(|p| *p /= s);
            let mut beta: Vec<Vec<f64>> =
                (0..k).map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect()).collect();
            descend(&q, &mut pi, &mut beta, &cfg.em);
            // the loss depends on the experts only through Σ_k π_k β_k, so
            // shifting every expert by the same vector is an exact final step
            let b = combine(&pi, &beta);
            let target = solve_symmetric(q.gram.clone(), &q.rhs)?;
            for bk in beta.iter_mut() {
                for ((v, t), c) in bk.iter_mut().zip(&target).zip(&b) {
                    *v += t - c;
                }
            }
            let f = q.mse(&combine(&pi, &beta));
            if best.as_ref().is_none_or(|b| f < b.2) {
                best = Some((pi, beta, f));
            }
        }
        best.expect("at least one restart")
    };
    let sigma = mse.max(0.0).sqrt().max(1e-150);
    let mut fit = FittedMixture::from_parts(pi, GatingParams::constant(k, d), Some(beta), None, sigma);
    fit.loglik = -q.weight * (LN_SQRT_2PI + sigma.ln() + 0.5 * mse / (sigma * sigma));
    fit.converged = true;
    fit.restarts_used = if k == 1 { 1 } else { cfg.em.restarts };
    Ok(fit)
}

/// Which coefficient on the source term makes the bias expansion match the
/// quadrature oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundCoefficient {
    Eta,
    EtaSquared,
    /// Both readings agree at this η (η ∈ {0, 1} or zero source bias).
    Indistinguishable,
    Neither,
}

/// Population analysis of weak training at source weight `eta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitRisk {
    pub eta: f64,
    /// `η‖ε_P‖² + (1-η)²‖ε_Q'‖² + η(1-η)ε_Pᵀε_Q'` with per-concept bias norms.
    pub printed_bound: f64,
    /// Same expansion over the aggregate bias functions with source
    /// coefficient `η` and cross coefficient `2η(1-η)`.
    pub expansion_eta: f64,
    /// Exact expansion: source coefficient `η²`, cross `2η(1-η)`.
    pub expansion_eta_sq: f64,
    /// `E[(q(X) - h(X))²]` for the pseudo-label regression
    /// `h = η E_P[Y|x] + (1-η) E_Q[Y'|x]`, by quadrature.
    pub pseudo_label_risk: f64,
    /// `E[(q(X) - f*(X))²]` where `f*` is the limit of the weak-training
    /// estimator: the L2 projection of `h` onto linear functions of `x`.
    pub limit_risk: f64,
    /// Coefficients of `f*`.
    pub limit_coefficients: Vec<f64>,
    pub verdict: BoundCoefficient,
    pub bias: PopulationBias,
}

/// Limit risk of weak training, evaluated by quadrature alongside the
/// bias-expansion bound.
pub fn weak_train_limit_risk(system: &LatentConceptSystem, eta: f64) -> Result<LimitRisk> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::invalid(format!("eta = {eta} is outside [0, 1]")));
    }
    let bias = population_bias(system)?;
    let norm_p: f64 = bias.eps_p.iter().map(|v| v * v).sum();
    let norm_q: f64 = bias.eps_q.iter().map(|v| v * v).sum();
    let inner: f64 = bias.eps_p.iter().zip(&bias.eps_q).map(|(a, b)| a * b).sum();
    let printed_bound = eta * norm_p + (1.0 - eta).powi(2) * norm_q + eta * (1.0 - eta) * inner;
    let rest = (1.0 - eta).powi(2) * bias.weak_sq + 2.0 * eta * (1.0 - eta) * bias.cross;
    let expansion_eta = eta * bias.source_sq + rest;
    let expansion_eta_sq = eta * eta * bias.source_sq + rest;

    let d = system.x_dim();
    let (nodes, weights) = system.x_law().quadrature_rule(d)?;
    let mut ne = NormalEquations::new(d);
    let mut pseudo_label_risk = 0.0;
    let mut cache = Vec::with_capacity(weights.len());
    for (x, w) in nodes.chunks_exact(d).zip(&weights) {
        let q = system.target_regression(x)?;
        let h = eta * system.source_regression(x)? + (1.0 - eta) * system.weak_target_regression(x)?;
        ne.add(x, h, *w);
        pseudo_label_risk += w * (q - h).powi(2);
        cache.push(q);
    }
    let coef = ne.solve(0.0)?;
    let limit_risk: f64 =
        nodes.chunks_exact(d).zip(&weights).zip(&cache).map(|((x, w), q)| w * (q - dot(&coef, x)).powi(2)).sum();

    let tol = 1e-9 * pseudo_label_risk.max(1e-12);
    let hit = |v: f64| (v - pseudo_label_risk).abs() <= tol;
    let verdict = match (hit(expansion_eta), hit(expansion_eta_sq)) {
        (true, true) => BoundCoefficient::Indistinguishable,
        (true, false) => BoundCoefficient::Eta,
        (false, true) => BoundCoefficient::EtaSquared,
        (false, false) => BoundCoefficient::Neither,
    };
    Ok(LimitRisk {
        eta,
        printed_bound,
        expansion_eta,
        expansion_eta_sq,
        pseudo_label_risk,
        limit_risk,
        limit_coefficients: coef,
        verdict,
        bias,
    })
}
