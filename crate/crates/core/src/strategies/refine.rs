use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::em::FittedMixture;
use crate::error::{Error, Result};
use crate::mixture::{LatentConceptSystem, TargetDataset};
use crate::numeric::quadrature::{integrate_with_breaks, QuadratureConfig};
use crate::numeric::{dot, normal_logpdf, seeding, softmax_in_place};

/// Half-width of the weak-label integration range in target noise units.
const Y_RANGE_SDS: f64 = 12.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RefinementMode {
    /// One weak label per query.
    SingleLabel,
    /// `m` weakly labelled demonstrations per query, treated as independent.
    Icl { m: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementPosterior {
    pub x: Vec<f64>,
    /// Updated concept weights `q̂(k|x)`.
    pub q_hat: Vec<f64>,
    /// `confusion[k'][k] = P{k | x, k'}`.
    pub confusion: Vec<Vec<f64>>,
    /// Monte Carlo standard errors of the confusion entries (ICL mode only).
    pub confusion_se: Option<Vec<Vec<f64>>>,
    /// `q(k|x)`.
    pub target_gate: Vec<f64>,
    /// `p(k|x)`.
    pub source_gate: Vec<f64>,
    pub mode: RefinementMode,
}

impl RefinementPosterior {
    /// Largest `|q̂(k|x) - q(k|x)|`.
    pub fn max_gap(&self) -> f64 {
        self.q_hat.iter().zip(&self.target_gate).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

fn posterior_row(log_prior: &[f64], means: &[f64], sd: f64, y: f64, out: &mut [f64]) {
    for k in 0..out.len() {
        out[k] = log_prior[k] + normal_logpdf(y, means[k], sd);
    }
    softmax_in_place(out);
}

/// `p(k | x, y')` under the source weak-label law of `system`.
pub fn label_posterior(system: &LatentConceptSystem, x: &[f64], y_weak: f64) -> Result<Vec<f64>> {
    let sd = system.weak_p().noise_sd;
    if !(sd > 0.0) {
        return Err(Error::invalid("source weak noise sd must be positive"));
    }
    let log_prior: Vec<f64> = system.source_gate(x)?.iter().map(|p| p.ln()).collect();
    let means: Vec<f64> = (0..system.k()).map(|k| system.weak_p().mean(k, x)).collect();
    let mut out = vec![0.0; system.k()];
    posterior_row(&log_prior, &means, sd, y_weak, &mut out);
    Ok(out)
}

fn single_label_confusion(
    system: &LatentConceptSystem,
    x: &[f64],
    log_prior: &[f64],
    quad: &QuadratureConfig,
) -> Result<Vec<Vec<f64>>> {
    let k = system.k();
    let sd_p = system.weak_p().noise_sd;
    let sd_q = system.weak_q().noise_sd;
    let mp: Vec<f64> = (0..k).map(|j| system.weak_p().mean(j, x)).collect();
    let mut confusion = vec![vec![0.0; k]; k];
    for (kq, row) in confusion.iter_mut().enumerate() {
        let mq = system.weak_q().mean(kq, x);
        if sd_q == 0.0 {
            posterior_row(log_prior, &mp, sd_p, mq, row);
            continue;
        }
        let (lo, hi) = (mq - Y_RANGE_SDS * sd_q, mq + Y_RANGE_SDS * sd_q);
        // sharp features sit at the source weak means and between them
        let mut breaks = vec![lo, hi, mq - sd_q, mq, mq + sd_q];
        let mut sorted = mp.clone();
        sorted.sort_by(f64::total_cmp);
        breaks.extend(&sorted);
        breaks.extend(sorted.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        breaks.retain(|b| *b >= lo && *b <= hi);
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        for (kp, entry) in row.iter_mut().enumerate() {
            let f = |y: f64| {
                let mut post = vec![0.0; k];
                posterior_row(log_prior, &mp, sd_p, y, &mut post);
                post[kp] * normal_logpdf(y, mq, sd_q).exp()
            };
            *entry = integrate_with_breaks(f, &breaks, quad)?.value;
        }
    }
    Ok(confusion)
}

fn icl_confusion(
    system: &LatentConceptSystem,
    log_prior: &[f64],
    m: usize,
    quad: &QuadratureConfig,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let k = system.k();
    let d = system.x_dim();
    let sd_p = system.weak_p().noise_sd;
    let sd_q = system.weak_q().noise_sd;
    let s = quad.mc_samples;
    if s < 2 {
        return Err(Error::invalid("Monte Carlo estimate needs at least two samples"));
    }
    let mut mean = vec![vec![0.0; k]; k];
    let mut se = vec![vec![0.0; k]; k];
    let mut xj = vec![0.0; d];
    let mut lw = vec![0.0; k];
    for kq in 0..k {
        let mut rng = ChaCha8Rng::seed_from_u64(seeding::derive(quad.seed, kq as u64));
        let mut sum = vec![0.0; k];
        let mut sum_sq = vec![0.0; k];
        for _ in 0..s {
            lw.copy_from_slice(log_prior);
            for _ in 0..m {
                for v in xj.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                system.x_law().transform(&mut xj);
                let z: f64 = rng.sample(StandardNormal);
                let y = system.weak_q().mean(kq, &xj) + sd_q * z;
                for j in 0..k {
                    lw[j] += normal_logpdf(y, system.weak_p().mean(j, &xj), sd_p);
                }
            }
            softmax_in_place(&mut lw);
            for j in 0..k {
                sum[j] += lw[j];
                sum_sq[j] += lw[j] * lw[j];
            }
        }
        let n = s as f64;
        for j in 0..k {
            let mu = sum[j] / n;
            let var = ((sum_sq[j] - n * mu * mu) / (n - 1.0)).max(0.0);
            mean[kq][j] = mu;
            se[kq][j] = (var / n).sqrt();
        }
    }
    Ok((mean, se))
}

/// Concept posterior after refinement at query `x`:
/// `q̂(k|x) = Σ_k' q(k'|x) P{k | x, k'}`.
///
/// Single-label confusion entries are integrals over the weak label computed
/// by adaptive quadrature; ICL entries are Monte Carlo averages over
/// demonstration sets (seeded by `quad.seed`, `quad.mc_samples` draws).
pub fn refinement_posterior(
    system: &LatentConceptSystem,
    x: &[f64],
    mode: RefinementMode,
    quad: &QuadratureConfig,
) -> Result<RefinementPosterior> {
    if x.len() != system.x_dim() {
        return Err(Error::DimensionMismatch { expected: system.x_dim(), got: x.len() });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("query".into()));
    }
    if !(system.weak_p().noise_sd > 0.0) {
        return Err(Error::invalid("source weak noise sd must be positive"));
    }
    let source_gate = system.source_gate(x)?;
    let target_gate = system.target_gate(x)?;
    let log_prior: Vec<f64> = source_gate.iter().map(|p| p.ln()).collect();
    let (confusion, confusion_se) = match mode {
        RefinementMode::SingleLabel => (single_label_confusion(system, x, &log_prior, quad)?, None),
        RefinementMode::Icl { m } => {
            if m == 0 {
                return Err(Error::invalid("ICL refinement needs at least one demonstration"));
            }
            let (c, se) = icl_confusion(system, &log_prior, m, quad)?;
            (c, Some(se))
        }
    };
    let k = system.k();
    let q_hat = (0..k).map(|j| (0..k).map(|kq| target_gate[kq] * confusion[kq][j]).sum()).collect();
    Ok(RefinementPosterior { x: x.to_vec(), q_hat, confusion, confusion_se, target_gate, source_gate, mode })
}

/// Covariates with one refined label each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedLabels {
    pub x_dim: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl RefinedLabels {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.x[i * self.x_dim..(i + 1) * self.x_dim]
    }

    /// Least-squares slope vector of `y` on `x` (the strong model retrained
    /// on refined labels).
    pub fn least_squares(&self, ridge: f64) -> Result<Vec<f64>> {
        let mut ne = crate::numeric::linalg::NormalEquations::new(self.x_dim);
        for i in 0..self.len() {
            ne.add(self.x(i), self.y[i], 1.0);
        }
        ne.solve(ridge)
    }
}

fn draw_index<R: Rng>(rng: &mut R, w: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (j, p) in w.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    w.len() - 1
}

/// Draws `ŷ | x ~ Σ_k p(y|x,k) q̂(k|x)` for every query in `xs` (row-major).
pub fn refine_labels(
    system: &LatentConceptSystem,
    xs: &[f64],
    mode: RefinementMode,
    quad: &QuadratureConfig,
    seed: u64,
) -> Result<RefinedLabels> {
    let d = system.x_dim();
    if xs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if xs.len() % d != 0 {
        return Err(Error::DimensionMismatch { expected: d, got: xs.len() % d });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = system.strong().noise_sd;
    let mut y = Vec::with_capacity(xs.len() / d);
    // consecutive repeats of a query reuse its posterior
    let mut cached: Option<(&[f64], Vec<f64>)> = None;
    for x in xs.chunks_exact(d) {
        if cached.as_ref().is_none_or(|(cx, _)| *cx != x) {
            cached = Some((x, refinement_posterior(system, x, mode, quad)?.q_hat));
        }
        let q_hat = &cached.as_ref().expect("posterior cached").1;
        let k = draw_index(&mut rng, q_hat);
        let z: f64 = rng.sample(StandardNormal);
        y.push(system.strong().mean(k, x) + sd * z);
    }
    Ok(RefinedLabels { x_dim: d, x: xs.to_vec(), y })
}

/// Per-record refinement of observed weak labels under a fitted source model:
/// `k ~ p̂(k|x, y')`, then `ŷ ~ N(β̂_kᵀx, σ̂²)`.
pub fn refine_observed(source_fit: &FittedMixture, target: &TargetDataset, seed: u64) -> Result<RefinedLabels> {
    if target.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = target.x_dim();
    if source_fit.x_dim() != d {
        return Err(Error::DimensionMismatch { expected: source_fit.x_dim(), got: d });
    }
    let strong = source_fit.strong.as_ref().ok_or_else(|| Error::invalid("source fit has no strong experts"))?;
    let weak = source_fit.weak.as_ref().ok_or_else(|| Error::invalid("source fit has no weak experts"))?;
    let k = source_fit.k();
    let sd = source_fit.sigma;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = Vec::with_capacity(target.len());
    let mut post = vec![0.0; k];
    for (x, yw) in target.xs().zip(target.y_weak()) {
        let gate = source_fit.gate(x);
        for j in 0..k {
            post[j] = gate[j].ln() + normal_logpdf(*yw, dot(&weak[j], x), sd);
        }
        softmax_in_place(&mut post);
        let j = draw_index(&mut rng, &post);
        let z: f64 = rng.sample(StandardNormal);
        y.push(dot(&strong[j], x) + sd * z);
    }
    Ok(RefinedLabels { x_dim: d, x: target.x_flat().to_vec(), y })
}

/// Pointwise check of the weak-label-improvement bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WliCheck {
    /// `p(k|x) exp(-c Δ²_k(x))`
    pub bound: f64,
    /// Exact `q̂(k|x)` when the target concept is `k_star`.
    pub q_hat: f64,
    pub source_gate: f64,
    pub delta_sq: f64,
}

impl WliCheck {
    pub fn holds(&self) -> bool {
        self.q_hat <= self.bound
    }
}

/// Evaluates `p(k|x) e^{-cΔ²_k(x)}` with `Δ_k(x) = β^{w_p}_kᵀx - β^{w_q}_{k*}ᵀx`
/// next to the exact refined weight `q̂(k|x) = P{k | x, k*}`.
pub fn wli_bound(
    system: &LatentConceptSystem,
    x: &[f64],
    k: usize,
    k_star: usize,
    c: f64,
    quad: &QuadratureConfig,
) -> Result<WliCheck> {
    if k == k_star {
        return Err(Error::invalid("the bound concerns concepts other than k*"));
    }
    if k >= system.k() || k_star >= system.k() {
        return Err(Error::invalid("concept index out of range"));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::invalid("c must be positive"));
    }
    let post = refinement_posterior(system, x, RefinementMode::SingleLabel, quad)?;
    let delta_sq = (system.weak_p().mean(k, x) - system.weak_q().mean(k_star, x)).powi(2);
    let p = post.source_gate[k];
    Ok(WliCheck { bound: p * (-c * delta_sq).exp(), q_hat: post.confusion[k_star][k], source_gate: p, delta_sq })
}

/// Largest `c` for which the WLI bound holds at every point of `xs`
/// (row-major): `min ln(p(k|x)/q̂(k|x)) / Δ²_k(x)` over points with `Δ² > 0`.
/// Points with `q̂ = 0` impose no constraint. Returns infinity when nothing
/// constrains `c`.
pub fn calibrate_wli_constant(
    system: &LatentConceptSystem,
    xs: &[f64],
    k: usize,
    k_star: usize,
    quad: &QuadratureConfig,
) -> Result<f64> {
    let d = system.x_dim();
    let mut c = f64::INFINITY;
    for x in xs.chunks_exact(d) {
        let w = wli_bound(system, x, k, k_star, 1.0, quad)?;
        if w.delta_sq > 0.0 && w.q_hat > 0.0 {
            c = c.min((w.source_gate / w.q_hat).ln() / w.delta_sq);
        }
    }
    Ok(c)
}
