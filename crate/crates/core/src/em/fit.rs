use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::gating::{logits_to_prior_and_locations, SoftmaxProblem};
use super::init::initial_responsibilities;
use super::{check_finite, EmConfig, FittedMixture, Observations};
use crate::error::{Error, Result};
use crate::mixture::{GatingKind, GatingParams, SourceDataset, TargetDataset};
use crate::numeric::linalg::NormalEquations;
use crate::numeric::{dot, logsumexp, normal_logpdf, seeding};

/// A component whose total responsibility drops below this fraction of `n`
/// aborts the restart.
const MIN_COMPONENT_MASS: f64 = 1e-6;
/// Fresh initializations tried per restart after a collapse.
const MAX_REINIT: u64 = 5;
const SIGMA_FLOOR: f64 = 1e-150;
const NEWTON_STEPS: usize = 8;

#[derive(Debug, Clone)]
enum GateModel {
    /// Constant kernel: the prior has a closed-form update.
    Prior,
    /// Kernel locations held fixed; only the prior is estimated.
    FixedKernel(GatingParams),
    /// Free gaussian kernel locations with known variance.
    FreeGaussian { variance: f64 },
}

#[derive(Debug, Clone)]
enum GateState {
    LogPrior {
        log_pi: Vec<f64>,
        kernel: GatingParams,
    },
    /// Row-major `k × (d+1)` logits `a_k + b_kᵀx`.
    Logits(Vec<f64>),
}

#[derive(Debug, Clone)]
struct Params {
    gate: GateState,
    /// `[channel][component][coefficient]`
    betas: Vec<Vec<Vec<f64>>>,
    sigma: f64,
}

struct Problem<'a> {
    n: usize,
    d: usize,
    k: usize,
    x: &'a [f64],
    channels: Vec<&'a [f64]>,
    model: GateModel,
    ridge: f64,
    /// `[1, x_i]` rows for the free-gaussian gate.
    features: Vec<f64>,
    /// Fixed log-kernel terms for the fixed-kernel gate.
    offsets: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn new(obs: Observations<'a>, k: usize, model: GateModel, ridge: f64) -> Self {
        let n = obs.len();
        let d = obs.x_dim();
        let x = obs.x_flat();
        let features = match model {
            GateModel::FreeGaussian { .. } => {
                let mut f = Vec::with_capacity(n * (d + 1));
                for xi in x.chunks_exact(d) {
                    f.push(1.0);
                    f.extend_from_slice(xi);
                }
                f
            }
            _ => vec![1.0; n],
        };
        let offsets = match &model {
            GateModel::FixedKernel(g) => {
                let mut o = Vec::with_capacity(n * k);
                for xi in x.chunks_exact(d) {
                    o.extend((0..k).map(|j| g.log_kernel(j, xi)));
                }
                o
            }
            _ => Vec::new(),
        };
        Self { n, d, k, x, channels: obs.channels(), model, ridge, features, offsets }
    }

    fn xi(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    fn gate_logits(&self, gate: &GateState, i: usize, out: &mut [f64]) {
        match gate {
            GateState::LogPrior { log_pi, kernel } => {
                let x = self.xi(i);
                for j in 0..self.k {
                    out[j] = log_pi[j] + kernel.log_kernel(j, x);
                }
            }
            GateState::Logits(coef) => {
                let p = self.d + 1;
                let phi = &self.features[i * p..(i + 1) * p];
                for j in 0..self.k {
                    out[j] = dot(&coef[j * p..(j + 1) * p], phi);
                }
            }
        }
    }

    /// Fills responsibilities; returns the observed-data log-likelihood.
    fn e_step(&self, params: &Params, resp: &mut [f64]) -> Result<f64> {
        let k = self.k;
        let mut lw = vec![0.0; k];
        let mut total = 0.0;
        for i in 0..self.n {
            self.gate_logits(&params.gate, i, &mut lw);
            let g = logsumexp(&lw);
            let x = self.xi(i);
            for (c, ch) in self.channels.iter().enumerate() {
                for j in 0..k {
                    lw[j] += normal_logpdf(ch[i], dot(&params.betas[c][j], x), params.sigma);
                }
            }
            let l = logsumexp(&lw);
            if !l.is_finite() {
                return Err(Error::EmFailure(format!("non-finite likelihood at record {i}")));
            }
            total += l - g;
            for j in 0..k {
                resp[i * k + j] = (lw[j] - l).exp();
            }
        }
        Ok(total)
    }

    fn m_step(&self, resp: &[f64], previous: Option<&GateState>) -> Result<Params> {
        let (n, k, d) = (self.n, self.k, self.d);
        let mass: Vec<f64> = (0..k).map(|j| (0..n).map(|i| resp[i * k + j]).sum()).collect();
        let gate = match &self.model {
            GateModel::Prior => GateState::LogPrior {
                log_pi: mass.iter().map(|m| (m / n as f64).ln()).collect(),
                kernel: GatingParams::constant(k, d),
            },
            GateModel::FixedKernel(kernel) => {
                let mut coef: Vec<f64> = match previous {
                    Some(GateState::LogPrior { log_pi, .. }) => log_pi.iter().map(|v| v.max(-700.0)).collect(),
                    _ => mass.iter().map(|m| (m / n as f64).max(1e-300).ln()).collect(),
                };
                if matches!(kernel.kind(), GatingKind::Constant) {
                    coef = mass.iter().map(|m| (m / n as f64).ln()).collect();
                } else {
                    let prob =
                        SoftmaxProblem { n, k, p: 1, features: &self.features, offsets: Some(&self.offsets), resp };
                    prob.maximize(&mut coef, NEWTON_STEPS);
                    let lse = logsumexp(&coef);
                    coef.iter_mut().for_each(|c| *c -= lse);
                }
                GateState::LogPrior { log_pi: coef, kernel: kernel.clone() }
            }
            GateModel::FreeGaussian { .. } => {
                let mut coef = match previous {
                    Some(GateState::Logits(c)) => c.clone(),
                    _ => vec![0.0; k * (d + 1)],
                };
                let prob = SoftmaxProblem { n, k, p: d + 1, features: &self.features, offsets: None, resp };
                prob.maximize(&mut coef, NEWTON_STEPS);
                GateState::Logits(coef)
            }
        };
        let mut betas = Vec::with_capacity(self.channels.len());
        let mut sse = 0.0;
        for ch in &self.channels {
            let mut fam = Vec::with_capacity(k);
            for j in 0..k {
                let mut ne = NormalEquations::new(d);
                for i in 0..n {
                    let r = resp[i * k + j];
                    if r > 0.0 {
                        ne.add(self.xi(i), ch[i], r);
                    }
                }
                fam.push(ne.solve(self.ridge)?);
            }
            for i in 0..n {
                let x = self.xi(i);
                for j in 0..k {
                    let r = resp[i * k + j];
                    if r > 0.0 {
                        let e = ch[i] - dot(&fam[j], x);
                        sse += r * e * e;
                    }
                }
            }
            betas.push(fam);
        }
        let sigma = (sse / (n * self.channels.len()) as f64).sqrt().max(SIGMA_FLOOR);
        Ok(Params { gate, betas, sigma })
    }

    fn min_mass(&self, resp: &[f64]) -> f64 {
        (0..self.k).map(|j| (0..self.n).map(|i| resp[i * self.k + j]).sum::<f64>()).fold(f64::INFINITY, f64::min)
    }
}

struct RestartOutcome {
    params: Params,
    loglik: f64,
    trace: Vec<f64>,
    n_iters: usize,
    converged: bool,
}

enum Attempt {
    Done(RestartOutcome),
    Collapsed,
}

fn run_attempt(prob: &Problem<'_>, cfg: &EmConfig, seed: u64) -> Result<Attempt> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut resp = if prob.k == 1 {
        vec![1.0; prob.n]
    } else {
        initial_responsibilities(cfg.init, prob.n, prob.d, prob.k, prob.x, &prob.channels, &mut rng)
    };
    let threshold = MIN_COMPONENT_MASS * prob.n as f64;
    if prob.min_mass(&resp) < threshold {
        return Ok(Attempt::Collapsed);
    }
    let mut params = prob.m_step(&resp, None)?;
    let mut loglik = prob.e_step(&params, &mut resp)?;
    let mut trace = vec![loglik];
    let mut converged = false;
    let mut n_iters = 0;
    for it in 1..=cfg.max_iters {
        if prob.min_mass(&resp) < threshold {
            return Ok(Attempt::Collapsed);
        }
        let next = prob.m_step(&resp, Some(&params.gate))?;
        let next_ll = prob.e_step(&next, &mut resp)?;
        debug_assert!(
            next_ll >= loglik - (1e-9 * prob.n as f64).max(1e-12 * loglik.abs()),
            "EM decreased the log-likelihood: {loglik} -> {next_ll}"
        );
        let gain = next_ll - loglik;
        params = next;
        loglik = next_ll;
        trace.push(loglik);
        n_iters = it;
        if gain <= cfg.tol * loglik.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    if prob.min_mass(&resp) < threshold {
        return Ok(Attempt::Collapsed);
    }
    Ok(Attempt::Done(RestartOutcome { params, loglik, trace, n_iters, converged }))
}

fn run_em(obs: Observations<'_>, k: usize, cfg: &EmConfig, model: GateModel) -> Result<FittedMixture> {
    cfg.validate()?;
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    let n = obs.len();
    let d = obs.x_dim();
    let required = 5 * k * d;
    if n < required {
        return Err(Error::InsufficientData { n, required });
    }
    check_finite(&obs)?;
    let prob = Problem::new(obs, k, model, cfg.ridge);
    let outcomes: Vec<Result<Option<RestartOutcome>>> = (0..cfg.restarts as u64)
        .into_par_iter()
        .map(|r| {
            for attempt in 0..MAX_REINIT {
                let seed = seeding::derive(seeding::derive(cfg.seed, r), attempt);
                if let Attempt::Done(o) = run_attempt(&prob, cfg, seed)? {
                    return Ok(Some(o));
                }
            }
            Ok(None)
        })
        .collect();
    let mut best: Option<RestartOutcome> = None;
    let mut used = 0;
    let mut last_err = None;
    for o in outcomes {
        match o {
            Ok(Some(o)) => {
                used += 1;
                // strict comparison keeps the lowest restart index on ties
                if best.as_ref().is_none_or(|b| o.loglik > b.loglik) {
                    best = Some(o);
                }
            }
            Ok(None) => {}
            Err(e) => last_err = Some(e),
        }
    }
    let best = match (best, last_err) {
        (Some(b), _) => b,
        (None, Some(e)) => return Err(e),
        (None, None) => {
            return Err(Error::EmFailure(format!(
                "every restart collapsed a component below {MIN_COMPONENT_MASS}·n responsibility"
            )))
        }
    };
    let (pi, gating, eta_estimated) = match (&best.params.gate, &prob.model) {
        (GateState::LogPrior { log_pi, kernel }, _) => {
            (log_pi.iter().map(|v| v.exp()).collect::<Vec<f64>>(), kernel.clone(), false)
        }
        (GateState::Logits(coef), GateModel::FreeGaussian { variance }) => {
            let center: Vec<f64> = (0..d).map(|a| (0..n).map(|i| prob.x[i * d + a]).sum::<f64>() / n as f64).collect();
            let (pi, eta) = logits_to_prior_and_locations(coef, k, d, *variance, &center);
            let gating = GatingParams::gaussian(eta, *variance)
                .map_err(|e| Error::EmFailure(format!("degenerate gating estimate: {e}")))?;
            (pi, gating, true)
        }
        _ => unreachable!("logit gate only arises from the free gaussian model"),
    };
    let s: f64 = pi.iter().sum();
    let pi: Vec<f64> = pi.iter().map(|p| p / s).collect();
    let mut families = best.params.betas.into_iter();
    let (strong, weak) = match obs {
        Observations::Source(_) => (families.next(), families.next()),
        Observations::Target(_) => (None, families.next()),
    };
    let mut fit = FittedMixture {
        pi,
        gating,
        eta_estimated,
        strong,
        weak,
        sigma: best.params.sigma,
        loglik: best.loglik,
        n_iters: best.n_iters,
        restarts_used: used,
        converged: best.converged,
        loglik_trace: best.trace,
    };
    fit.loglik = super::loglikelihood(obs, &fit)?;
    Ok(fit)
}

/// Fits `(π^p, η, β, β^{w_p}, σ)` on source triples. The gating family is
/// taken from `cfg.gating`.
pub fn fit_source_mle(data: &SourceDataset, k: usize, cfg: &EmConfig) -> Result<FittedMixture> {
    let model = match cfg.gating {
        GatingKind::Constant => GateModel::Prior,
        GatingKind::Gaussian { variance } => GateModel::FreeGaussian { variance },
    };
    run_em(Observations::Source(data), k, cfg, model)
}

/// Fits `(π^q, β^{w_q}, σ)` on target weak pairs.
///
/// With `gating_fixed` (normally the source estimate) the kernel locations are
/// held fixed and only the prior is updated; without it the gating family of
/// `cfg.gating` is estimated from scratch.
pub fn fit_target_mle(
    data: &TargetDataset,
    k: usize,
    cfg: &EmConfig,
    gating_fixed: Option<&GatingParams>,
) -> Result<FittedMixture> {
    let model = match gating_fixed {
        Some(g) => {
            if g.dim() != data.x_dim() {
                return Err(Error::DimensionMismatch { expected: data.x_dim(), got: g.dim() });
            }
            if g.k() != k {
                return Err(Error::DimensionMismatch { expected: k, got: g.k() });
            }
            GateModel::FixedKernel(g.clone())
        }
        None => match cfg.gating {
            GatingKind::Constant => GateModel::Prior,
            GatingKind::Gaussian { variance } => GateModel::FreeGaussian { variance },
        },
    };
    run_em(Observations::Target(data), k, cfg, model)
}
