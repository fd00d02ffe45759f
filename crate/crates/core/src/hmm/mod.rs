//! Mixtures of hidden Markov models over a finite alphabet.
//!
//! A record is a token sequence `x = (x^1, …, x^l)` followed by one label
//! token `y`. Under component `k` the hidden chain starts from `start_k`,
//! moves by `θ_k`, emits each `x^j` through `τ_x` and, one step after the
//! last query token, emits `y` through `τ_y`.

mod checks;
mod config;
mod icl;

pub use checks::{
    anchor_word_check, cycle_witness, independence_certificate, AnchorVerdict, Cycle, IndependenceCertificate,
    CERTIFICATE_LIMIT,
};
pub use config::{HmmFile, MixtureSection};
pub use icl::{icl_refinement_posterior_hmm, IclPosterior};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::logsumexp;

const STOCHASTIC_TOL: f64 = 1e-12;

fn check_stochastic_rows(m: &[Vec<f64>], cols: usize, what: &str) -> Result<()> {
    for (i, row) in m.iter().enumerate() {
        if row.len() != cols {
            return Err(Error::DimensionMismatch { expected: cols, got: row.len() });
        }
        if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(format!("{what} row {i} has negative or non-finite entries")));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::invalid(format!("{what} row {i} sums to {s}")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmParams {
    transition: Vec<Vec<f64>>,
    start: Vec<f64>,
}

impl HmmParams {
    pub fn new(transition: Vec<Vec<f64>>, start: Vec<f64>) -> Result<Self> {
        let h = transition.len();
        if h == 0 {
            return Err(Error::invalid("an HMM needs at least one state"));
        }
        check_stochastic_rows(&transition, h, "transition")?;
        if start.len() != h {
            return Err(Error::DimensionMismatch { expected: h, got: start.len() });
        }
        check_stochastic_rows(std::slice::from_ref(&start), h, "start distribution")?;
        Ok(Self { transition, start })
    }

    /// Uniform start distribution.
    pub fn with_uniform_start(transition: Vec<Vec<f64>>) -> Result<Self> {
        let h = transition.len().max(1);
        Self::new(transition, vec![1.0 / h as f64; h])
    }

    pub fn n_states(&self) -> usize {
        self.transition.len()
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn start(&self) -> &[f64] {
        &self.start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionParams {
    emission: Vec<Vec<f64>>,
}

impl EmissionParams {
    pub fn new(emission: Vec<Vec<f64>>) -> Result<Self> {
        if emission.is_empty() || emission[0].is_empty() {
            return Err(Error::invalid("emission matrix is empty"));
        }
        check_stochastic_rows(&emission, emission[0].len(), "emission")?;
        Ok(Self { emission })
    }

    pub fn n_states(&self) -> usize {
        self.emission.len()
    }

    pub fn n_tokens(&self) -> usize {
        self.emission[0].len()
    }

    pub fn matrix(&self) -> &[Vec<f64>] {
        &self.emission
    }

    #[inline]
    pub fn prob(&self, state: usize, token: usize) -> f64 {
        self.emission[state][token]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmMixture {
    components: Vec<HmmParams>,
    pi: Vec<f64>,
    emission_x: EmissionParams,
    emission_y: EmissionParams,
}

impl HmmMixture {
    pub fn new(
        components: Vec<HmmParams>,
        pi: Vec<f64>,
        emission_x: EmissionParams,
        emission_y: EmissionParams,
    ) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        let h = components[0].n_states();
        if components.iter().any(|c| c.n_states() != h) {
            return Err(Error::invalid("components must share one state space"));
        }
        for e in [&emission_x, &emission_y] {
            if e.n_states() != h {
                return Err(Error::DimensionMismatch { expected: h, got: e.n_states() });
            }
        }
        if emission_x.n_tokens() != emission_y.n_tokens() {
            return Err(Error::invalid("query and label emissions must share one alphabet"));
        }
        if pi.len() != components.len() {
            return Err(Error::DimensionMismatch { expected: components.len(), got: pi.len() });
        }
        crate::mixture::check_simplex(&pi, STOCHASTIC_TOL, "mixture prior")?;
        Ok(Self { components, pi, emission_x, emission_y })
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn n_states(&self) -> usize {
        self.components[0].n_states()
    }

    pub fn n_tokens(&self) -> usize {
        self.emission_x.n_tokens()
    }

    pub fn components(&self) -> &[HmmParams] {
        &self.components
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn emission_x(&self) -> &EmissionParams {
        &self.emission_x
    }

    pub fn emission_y(&self) -> &EmissionParams {
        &self.emission_y
    }

    /// Copy with a different mixture prior.
    pub fn with_pi(&self, pi: Vec<f64>) -> Result<Self> {
        Self::new(self.components.clone(), pi, self.emission_x.clone(), self.emission_y.clone())
    }

    fn check_tokens(&self, tokens: &[usize], final_token: usize) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::invalid("query sequence is empty"));
        }
        let size = self.n_tokens();
        for &t in tokens.iter().chain(std::iter::once(&final_token)) {
            if t >= size {
                return Err(Error::TokenOutOfAlphabet { token: t, size });
            }
        }
        Ok(())
    }

    /// Log forward variables after the query: `ln p(x^1..x^l, h_l = h | k)`.
    fn forward(&self, k: usize, tokens: &[usize]) -> Vec<f64> {
        let c = &self.components[k];
        let h = self.n_states();
        let mut alpha: Vec<f64> = (0..h).map(|s| c.start[s].ln() + self.emission_x.prob(s, tokens[0]).ln()).collect();
        let mut next = vec![0.0; h];
        let mut terms = vec![0.0; h];
        for &tok in &tokens[1..] {
            for (s2, n) in next.iter_mut().enumerate() {
                for s in 0..h {
                    terms[s] = alpha[s] + c.transition[s][s2].ln();
                }
                *n = logsumexp(&terms) + self.emission_x.prob(s2, tok).ln();
            }
            std::mem::swap(&mut alpha, &mut next);
        }
        alpha
    }

    /// `ln p(x, y | k)`.
    pub fn component_loglik(&self, k: usize, tokens: &[usize], final_token: usize) -> Result<f64> {
        self.check_tokens(tokens, final_token)?;
        if k >= self.k() {
            return Err(Error::invalid(format!("component {k} out of range")));
        }
        Ok(self.component_loglik_unchecked(k, tokens, final_token))
    }

    fn component_loglik_unchecked(&self, k: usize, tokens: &[usize], final_token: usize) -> f64 {
        let c = &self.components[k];
        let h = self.n_states();
        let alpha = self.forward(k, tokens);
        let mut terms = Vec::with_capacity(h * h);
        for s in 0..h {
            for s2 in 0..h {
                terms.push(alpha[s] + c.transition[s][s2].ln() + self.emission_y.prob(s2, final_token).ln());
            }
        }
        logsumexp(&terms)
    }

    /// `ln Σ_k π_k p(x, y | k)` with every component's forward pass in log
    /// space. Impossible records give negative infinity.
    pub fn loglik(&self, tokens: &[usize], final_token: usize) -> Result<f64> {
        self.check_tokens(tokens, final_token)?;
        let terms: Vec<f64> =
            (0..self.k()).map(|k| self.pi[k].ln() + self.component_loglik_unchecked(k, tokens, final_token)).collect();
        Ok(logsumexp(&terms))
    }
}

/// Joint log-probability of a query sequence and its label token under `mix`.
pub fn mixture_loglik(mix: &HmmMixture, tokens: &[usize], final_token: usize) -> Result<f64> {
    mix.loglik(tokens, final_token)
}
