use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HmmMixture;
use crate::error::{Error, Result};
use crate::numeric::{logsumexp, softmax_in_place};

fn draw<R: Rng>(rng: &mut R, p: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|v| *v > 0.0).unwrap_or(p.len() - 1)
}

impl HmmMixture {
    /// Draws a query of length `len` and its label from component `k`.
    pub fn sample_component<R: Rng>(&self, k: usize, len: usize, rng: &mut R) -> (Vec<usize>, usize) {
        let c = &self.components[k];
        let mut h = draw(rng, &c.start);
        let mut tokens = Vec::with_capacity(len);
        for j in 0..len {
            if j > 0 {
                h = draw(rng, &c.transition[h]);
            }
            tokens.push(draw(rng, &self.emission_x.matrix()[h]));
        }
        h = draw(rng, &c.transition[h]);
        (tokens, draw(rng, &self.emission_y.matrix()[h]))
    }

    /// Draws a component from the prior, then a record from it.
    pub fn sample<R: Rng>(&self, len: usize, rng: &mut R) -> (Vec<usize>, usize) {
        let k = draw(rng, &self.pi);
        self.sample_component(k, len, rng)
    }

    /// `ln p(x | k)` for the query alone.
    pub fn query_loglik(&self, k: usize, tokens: &[usize]) -> Result<f64> {
        self.check_tokens(tokens, 0)?;
        Ok(logsumexp(&self.forward(k, tokens)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IclPosterior {
    pub q_hat: Vec<f64>,
    /// Monte Carlo standard errors of `q_hat`.
    pub se: Vec<f64>,
    pub m: usize,
    pub samples: usize,
    pub seed: u64,
}

/// Refined concept weights for query `x` after `m` in-context
/// demonstrations: `q̂(k|x) = E_V p(k | x, v)`, with the demonstration set
/// `v` drawn from `target_mix` (one concept per set, pairs independent) and
/// the posterior taken under `source_mix`:
/// `p(k|x,v) ∝ π^p_k p_k(x) Π_j p_k(x_j, y'_j)`.
/// Demonstration queries have the length of `x`.
pub fn icl_refinement_posterior_hmm(
    source_mix: &HmmMixture,
    target_mix: &HmmMixture,
    m: usize,
    x: &[usize],
    samples: usize,
    seed: u64,
) -> Result<IclPosterior> {
    if m == 0 {
        return Err(Error::invalid("ICL refinement needs at least one demonstration"));
    }
    if samples < 2 {
        return Err(Error::invalid("Monte Carlo estimate needs at least two samples"));
    }
    if source_mix.n_tokens() != target_mix.n_tokens() {
        return Err(Error::invalid("source and target mixtures use different alphabets"));
    }
    let k = source_mix.k();
    let base: Vec<f64> =
        (0..k).map(|j| Ok(source_mix.pi[j].ln() + source_mix.query_loglik(j, x)?)).collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws = Vec::with_capacity(samples * k);
    let mut lw = vec![0.0; k];
    for _ in 0..samples {
        lw.copy_from_slice(&base);
        let kq = draw(&mut rng, &target_mix.pi);
        for _ in 0..m {
            let (tokens, y) = target_mix.sample_component(kq, x.len(), &mut rng);
            for (j, w) in lw.iter_mut().enumerate() {
                *w += source_mix.component_loglik_unchecked(j, &tokens, y);
            }
        }
        if lw.iter().all(|v| *v == f64::NEG_INFINITY) {
            return Err(Error::NonFinite("demonstrations impossible under every source component".into()));
        }
        softmax_in_place(&mut lw);
        draws.extend_from_slice(&lw);
    }
    let n = samples as f64;
    let q_hat: Vec<f64> = (0..k).map(|j| draws.chunks(k).map(|d| d[j]).sum::<f64>() / n).collect();
    let se = (0..k)
        .map(|j| {
            let ss: f64 = draws.chunks(k).map(|d| (d[j] - q_hat[j]).powi(2)).sum();
            (ss / (n - 1.0) / n).sqrt()
        })
        .collect();
    Ok(IclPosterior { q_hat, se, m, samples, seed })
}
