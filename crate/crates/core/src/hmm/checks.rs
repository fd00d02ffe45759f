use std::fmt::{self, Write as _};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{EmissionParams, HmmMixture, HmmParams};
use crate::error::{Error, Result};
use crate::numeric::linalg::singular_values;

/// Largest number of (sequence, label) pairs the certificate will enumerate.
pub const CERTIFICATE_LIMIT: u128 = 1_000_000;
const RANK_TOL: f64 = 1e-10;
const CYCLE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorVerdict {
    /// Lowest-index anchor token of each state, if any.
    pub anchors: Vec<Option<usize>>,
    /// States without an anchor token.
    pub missing: Vec<usize>,
}

impl AnchorVerdict {
    pub fn passed(&self) -> bool {
        self.missing.is_empty()
    }
}

impl fmt::Display for AnchorVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed() {
            let list: Vec<String> =
                self.anchors.iter().enumerate().map(|(h, o)| format!("h{h}->o{}", o.unwrap())).collect();
            write!(f, "pass ({})", list.join(", "))
        } else {
            let list: Vec<String> = self.missing.iter().map(|h| format!("h{h}")).collect();
            write!(f, "fail (no anchor for {})", list.join(", "))
        }
    }
}

/// Looks for tokens emitted by exactly one state: `o*_h` with
/// `τ[h][o*_h] > 0` and `τ[h'][o*_h] = 0` for every other state.
pub fn anchor_word_check(em: &EmissionParams) -> AnchorVerdict {
    let m = em.matrix();
    let anchors: Vec<Option<usize>> = (0..em.n_states())
        .map(|h| (0..em.n_tokens()).find(|&o| m[h][o] > 0.0 && (0..em.n_states()).all(|h2| h2 == h || m[h2][o] == 0.0)))
        .collect();
    let missing = anchors.iter().enumerate().filter(|(_, a)| a.is_none()).map(|(h, _)| h).collect();
    AnchorVerdict { anchors, missing }
}

/// A closed state path `states[0] → … → states[m-1] → states[0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cycle {
    pub states: Vec<usize>,
    pub prob_theta: f64,
    pub prob_theta_prime: f64,
}

impl fmt::Display for Cycle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.states {
            write!(f, "h{s} -> ")?;
        }
        write!(f, "h{} ({:.6e} > {:.6e})", self.states[0], self.prob_theta, self.prob_theta_prime)
    }
}

fn cycle_prob(t: &[Vec<f64>], states: &[usize]) -> f64 {
    let m = states.len();
    (0..m).map(|i| t[states[i]][states[(i + 1) % m]]).product()
}

/// Searches simple state cycles, shortest first and lexicographically within
/// a length, for one that is more probable under `theta` than under
/// `theta_prime` (by more than 1e-12). Each cycle is visited once, starting
/// from its smallest state.
pub fn cycle_witness(theta: &HmmParams, theta_prime: &HmmParams, max_len: usize) -> Result<Option<Cycle>> {
    let h = theta.n_states();
    if theta_prime.n_states() != h {
        return Err(Error::DimensionMismatch { expected: h, got: theta_prime.n_states() });
    }
    if max_len < h {
        return Err(Error::invalid(format!("max_len {max_len} is shorter than the {h} states")));
    }
    let (a, b) = (theta.transition(), theta_prime.transition());
    for len in 1..=h.min(max_len) {
        let mut path = Vec::with_capacity(len);
        let mut used = vec![false; h];
        if let Some(c) = search(a, b, len, &mut path, &mut used) {
            return Ok(Some(c));
        }
    }
    Ok(None)
}

fn search(a: &[Vec<f64>], b: &[Vec<f64>], len: usize, path: &mut Vec<usize>, used: &mut [bool]) -> Option<Cycle> {
    if path.len() == len {
        let (pa, pb) = (cycle_prob(a, path), cycle_prob(b, path));
        return (pa > pb + CYCLE_TOL).then(|| Cycle { states: path.clone(), prob_theta: pa, prob_theta_prime: pb });
    }
    let lo = path.first().map_or(0, |s| s + 1);
    let candidates: Vec<usize> = if path.is_empty() { (0..a.len()).collect() } else { (lo..a.len()).collect() };
    for s in candidates {
        if used[s] {
            continue;
        }
        used[s] = true;
        path.push(s);
        let found = search(a, b, len, path, used);
        path.pop();
        used[s] = false;
        if found.is_some() {
            return found;
        }
    }
    None
}

/// Numerical linear-independence check of the joint laws `p(x, y)` of
/// several mixtures, restricted to query lengths `1..=max_seq_len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependenceCertificate {
    pub max_seq_len: usize,
    pub n_records: usize,
    /// Singular values of the Gram matrix, descending.
    pub singular_values: Vec<f64>,
    pub rank: usize,
    pub n_mixtures: usize,
    /// Anchor verdicts per mixture for the query and label emissions.
    pub anchors: Vec<(AnchorVerdict, AnchorVerdict)>,
}

impl IndependenceCertificate {
    pub fn full_rank(&self) -> bool {
        self.rank == self.n_mixtures
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "independence certificate (support restricted to query lengths 1..={}, {} records)",
            self.max_seq_len, self.n_records
        );
        let _ = writeln!(s, "mixtures: {}", self.n_mixtures);
        let _ = writeln!(
            s,
            "gram rank: {} ({})",
            self.rank,
            if self.full_rank() { "linearly independent on the enumerated support" } else { "dependent" }
        );
        for (i, v) in self.singular_values.iter().enumerate() {
            let _ = writeln!(s, "  sigma_{i} = {v:.6e}");
        }
        for (i, (x, y)) in self.anchors.iter().enumerate() {
            let _ = writeln!(s, "mixture {i}: query anchors {x}; label anchors {y}");
        }
        s
    }

    pub fn singular_values_csv(&self) -> String {
        let mut s = String::from("index,singular_value\n");
        for (i, v) in self.singular_values.iter().enumerate() {
            let _ = writeln!(s, "{i},{v:e}");
        }
        s
    }
}

/// Steps `seq` to the next sequence in lexicographic order; false after the last.
pub(crate) fn advance(seq: &mut [usize], alphabet: usize) -> bool {
    for v in seq.iter_mut().rev() {
        *v += 1;
        if *v < alphabet {
            return true;
        }
        *v = 0;
    }
    false
}

/// Enumerates every query of length `1..=max_seq_len` with every label
/// token, evaluates each mixture's joint probability, and reports the rank
/// of the Gram matrix of those vectors (singular values below 1e-10 of the
/// largest count as zero).
pub fn independence_certificate(mixes: &[HmmMixture], max_seq_len: usize) -> Result<IndependenceCertificate> {
    if mixes.is_empty() {
        return Err(Error::invalid("no mixtures to certify"));
    }
    if max_seq_len == 0 {
        return Err(Error::invalid("max_seq_len must be at least 1"));
    }
    let o = mixes[0].n_tokens();
    if mixes.iter().any(|m| m.n_tokens() != o) {
        return Err(Error::invalid("mixtures must share one alphabet"));
    }
    let mut count: u128 = 0;
    let mut per_len: u128 = 1;
    for _ in 0..max_seq_len {
        per_len = per_len.saturating_mul(o as u128);
        count = count.saturating_add(per_len.saturating_mul(o as u128));
    }
    if count > CERTIFICATE_LIMIT {
        return Err(Error::EnumerationGuard { count, limit: CERTIFICATE_LIMIT });
    }
    let n = count as usize;
    let mut vectors = vec![Vec::with_capacity(n); mixes.len()];
    for len in 1..=max_seq_len {
        let mut seq = vec![0usize; len];
        loop {
            for y in 0..o {
                for (v, m) in vectors.iter_mut().zip(mixes) {
                    v.push(m.loglik(&seq, y)?.exp());
                }
            }
            if !advance(&mut seq, o) {
                break;
            }
        }
    }
    let m = mixes.len();
    let gram = DMatrix::from_fn(m, m, |i, j| vectors[i].iter().zip(&vectors[j]).map(|(a, b)| a * b).sum());
    let sv = singular_values(&gram);
    let top = sv.first().copied().unwrap_or(0.0);
    let rank = sv.iter().filter(|s| **s > RANK_TOL * top).count();
    let anchors =
        mixes.iter().map(|mx| (anchor_word_check(mx.emission_x()), anchor_word_check(mx.emission_y()))).collect();
    Ok(IndependenceCertificate { max_seq_len, n_records: n, singular_values: sv, rank, n_mixtures: m, anchors })
}
