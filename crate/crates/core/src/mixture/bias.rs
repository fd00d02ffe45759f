use serde::{Deserialize, Serialize};

use super::LatentConceptSystem;
use crate::error::Result;

/// Population bias of the two single-source regressions relative to the
/// target regression `q(x)`, computed by quadrature over the covariate law.
///
/// Per concept `k` the source bias component is `(p(k|x) - q(k|x)) β_kᵀx` and
/// the weak-target bias component is `q(k|x) (β^{w_q}_k - β_k)ᵀx`; the vectors
/// hold their L2 norms. The aggregate bias functions are the sums over `k`:
/// `b_P = E_P[Y|x] - q(x)` and `b_Q = E_Q[Y'|x] - q(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationBias {
    pub eps_p: Vec<f64>,
    pub eps_q: Vec<f64>,
    /// `E[b_P(X)²]`
    pub source_sq: f64,
    /// `E[b_Q(X)²]`
    pub weak_sq: f64,
    /// `E[b_P(X) b_Q(X)]`
    pub cross: f64,
}

pub fn population_bias(system: &LatentConceptSystem) -> Result<PopulationBias> {
    let k = system.k();
    let d = system.x_dim();
    let (nodes, weights) = system.x_law().quadrature_rule(d)?;
    let mut eps_p = vec![0.0; k];
    let mut eps_q = vec![0.0; k];
    let (mut source_sq, mut weak_sq, mut cross) = (0.0, 0.0, 0.0);
    for (x, w) in nodes.chunks_exact(d).zip(&weights) {
        let p = system.source_gate(x)?;
        let q = system.target_gate(x)?;
        let (mut bp, mut bq) = (0.0, 0.0);
        for j in 0..k {
            let strong = system.strong().mean(j, x);
            let ep = (p[j] - q[j]) * strong;
            let eq = q[j] * (system.weak_q().mean(j, x) - strong);
            eps_p[j] += w * ep * ep;
            eps_q[j] += w * eq * eq;
            bp += ep;
            bq += eq;
        }
        source_sq += w * bp * bp;
        weak_sq += w * bq * bq;
        cross += w * bp * bq;
    }
    for v in eps_p.iter_mut().chain(eps_q.iter_mut()) {
        *v = v.sqrt();
    }
    Ok(PopulationBias { eps_p, eps_q, source_sq, weak_sq, cross })
}

/// Per-concept bias vectors `(ε_P, ε_Q')` (see [`PopulationBias`]).
pub fn conditional_bias_vectors(system: &LatentConceptSystem) -> Result<(Vec<f64>, Vec<f64>)> {
    let b = population_bias(system)?;
    Ok((b.eps_p, b.eps_q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::{canonical_benchmark, CovariateLaw, ExpertParams, GatingParams};

    #[test]
    fn unbiased_system_has_zero_vectors() {
        let s = canonical_benchmark().with_pi_q(vec![0.6, 0.4]).unwrap();
        let s = s.with_weak(s.strong().clone(), s.strong().clone()).unwrap();
        let (p, q) = conditional_bias_vectors(&s).unwrap();
        assert!(p.iter().chain(&q).all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn single_concept_weak_bias_is_slope_gap() {
        let s = LatentConceptSystem::new(
            GatingParams::constant(1, 1),
            vec![1.0],
            vec![1.0],
            ExpertParams::new(vec![vec![1.0]], 1.0).unwrap(),
            ExpertParams::new(vec![vec![1.0]], 1.0).unwrap(),
            ExpertParams::new(vec![vec![2.0]], 1.0).unwrap(),
            CovariateLaw::StandardNormal,
        )
        .unwrap();
        let (p, q) = conditional_bias_vectors(&s).unwrap();
        assert!(p[0].abs() < 1e-15);
        assert!((q[0] - 1.0).abs() < 1e-12, "{}", q[0]);
    }

    #[test]
    fn constant_gating_closed_form() {
        // With constant gating and x ~ N(0, 1), each component is a multiple of x.
        let s = canonical_benchmark();
        let b = population_bias(&s).unwrap();
        let ep = [(0.6f64 - 0.1) * 1.0, (0.4f64 - 0.9) * -1.0];
        let eq = [0.1f64 * (1.7 - 1.0), 0.9f64 * (-1.3 + 1.0)];
        for j in 0..2 {
            assert!((b.eps_p[j] - ep[j].abs()).abs() < 1e-12);
            assert!((b.eps_q[j] - eq[j].abs()).abs() < 1e-12);
        }
        // b_P = 1.0 x, b_Q = -0.2 x
        assert!((b.source_sq - 1.0).abs() < 1e-12);
        assert!((b.weak_sq - 0.04).abs() < 1e-12);
        assert!((b.cross + 0.2).abs() < 1e-12);
    }
}
