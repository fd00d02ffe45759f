use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{log_gate_into, ExpertParams, LatentConceptSystem, SourceDataset, TargetDataset};
use crate::error::{Error, Result};

/// Draws one concept index from log gate weights.
fn draw_concept(log_w: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, lw) in log_w.iter().enumerate() {
        acc += lw.exp();
        if u < acc {
            return k;
        }
    }
    // rounding can leave acc fractionally below one; fall back to the last
    // component that has positive mass
    log_w.iter().rposition(|lw| *lw > f64::NEG_INFINITY).unwrap_or(log_w.len() - 1)
}

struct Draw {
    k: usize,
    y: f64,
    y_weak: f64,
}

/// Ancestral sampler shared by every public entry point so that all of them
/// consume the random stream identically: per record, `x_dim` normals for x,
/// one uniform for the concept, then one normal each for y and y'.
fn sample_records(
    system: &LatentConceptSystem,
    pi: &[f64],
    label: &ExpertParams,
    weak: &ExpertParams,
    n: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<Draw>)> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let d = system.x_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let log_pi: Vec<f64> = pi.iter().map(|p| p.ln()).collect();
    let mut log_w = vec![0.0; system.k()];
    let mut xs = Vec::with_capacity(n * d);
    let mut draws = Vec::with_capacity(n);
    let mut x = vec![0.0; d];
    for _ in 0..n {
        for v in x.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        system.x_law().transform(&mut x);
        log_gate_into(&x, &log_pi, system.gating(), &mut log_w);
        let k = draw_concept(&log_w, rng.random::<f64>());
        let zy: f64 = rng.sample(StandardNormal);
        let zw: f64 = rng.sample(StandardNormal);
        let y = label.mean(k, &x) + label.noise_sd * zy;
        let y_weak = weak.mean(k, &x) + weak.noise_sd * zw;
        xs.extend_from_slice(&x);
        draws.push(Draw { k, y, y_weak });
    }
    Ok((xs, draws))
}

/// Draws `n` covariates from the system's law (row-major).
pub fn sample_covariates(system: &LatentConceptSystem, n: usize, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let d = system.x_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
    for x in xs.chunks_exact_mut(d) {
        system.x_law().transform(x);
    }
    Ok(xs)
}

/// Samples `n` source triples `(x, y, y')`; the concept is discarded.
pub fn sample_source(system: &LatentConceptSystem, n: usize, seed: u64) -> Result<SourceDataset> {
    sample_source_with_latent(system, n, seed).map(|(d, _)| d)
}

/// Same stream as [`sample_source`] but also returns the latent concepts.
/// Meant for oracle checks in tests; estimators never see these.
pub fn sample_source_with_latent(
    system: &LatentConceptSystem,
    n: usize,
    seed: u64,
) -> Result<(SourceDataset, Vec<usize>)> {
    let (x, draws) = sample_records(system, system.pi_p(), system.strong(), system.weak_p(), n, seed)?;
    let latent = draws.iter().map(|d| d.k).collect();
    let y = draws.iter().map(|d| d.y).collect();
    let y_weak = draws.iter().map(|d| d.y_weak).collect();
    Ok((SourceDataset::new(system.x_dim(), x, y, y_weak, Some(seed))?, latent))
}

/// Samples `n` target pairs `(x, y')`. Strong labels are never produced.
pub fn sample_target(system: &LatentConceptSystem, n: usize, seed: u64) -> Result<TargetDataset> {
    let (x, draws) = sample_records(system, system.pi_q(), system.strong(), system.weak_q(), n, seed)?;
    let y_weak = draws.iter().map(|d| d.y_weak).collect();
    TargetDataset::new(system.x_dim(), x, y_weak, Some(seed))
}

/// Hypothetical gold-standard target sample: `y` from the strong experts under
/// the target prior, `y'` from the target weak experts. Not available to any
/// strategy; used to validate oracles.
pub fn sample_oracle_target(system: &LatentConceptSystem, n: usize, seed: u64) -> Result<SourceDataset> {
    let (x, draws) = sample_records(system, system.pi_q(), system.strong(), system.weak_q(), n, seed)?;
    let y = draws.iter().map(|d| d.y).collect();
    let y_weak = draws.iter().map(|d| d.y_weak).collect();
    SourceDataset::new(system.x_dim(), x, y, y_weak, Some(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::{canonical_benchmark, CovariateLaw, GatingParams};

    fn noiseless_single() -> LatentConceptSystem {
        LatentConceptSystem::new(
            GatingParams::constant(1, 1),
            vec![1.0],
            vec![1.0],
            ExpertParams::new(vec![vec![2.0]], 0.0).unwrap(),
            ExpertParams::new(vec![vec![3.0]], 0.0).unwrap(),
            ExpertParams::new(vec![vec![-1.0]], 0.0).unwrap(),
            CovariateLaw::StandardNormal,
        )
        .unwrap()
    }

    #[test]
    fn noiseless_records_lie_on_the_line() {
        let s = noiseless_single();
        let d = sample_source(&s, 500, 9).unwrap();
        for i in 0..d.len() {
            assert_eq!(d.y()[i], 2.0 * d.x(i)[0]);
            assert_eq!(d.y_weak()[i], 3.0 * d.x(i)[0]);
        }
    }

    #[test]
    fn one_hot_target_prior_uses_that_expert() {
        let s = canonical_benchmark().with_pi_q(vec![0.0, 1.0]).unwrap();
        let s = s.with_weak(s.weak_p().clone(), ExpertParams::new(vec![vec![1.7], vec![-1.3]], 0.0).unwrap()).unwrap();
        let t = sample_target(&s, 300, 4).unwrap();
        for i in 0..t.len() {
            assert_eq!(t.y_weak()[i], -1.3 * t.x(i)[0]);
        }
    }

    #[test]
    fn zero_records_is_an_error() {
        let s = canonical_benchmark();
        assert!(matches!(sample_source(&s, 0, 1), Err(Error::EmptyDataset)));
        assert!(matches!(sample_target(&s, 0, 1), Err(Error::EmptyDataset)));
    }

    #[test]
    fn sampling_is_deterministic() {
        let s = canonical_benchmark();
        assert_eq!(sample_source(&s, 1000, 77).unwrap(), sample_source(&s, 1000, 77).unwrap());
        assert_eq!(sample_target(&s, 1000, 77).unwrap(), sample_target(&s, 1000, 77).unwrap());
        assert_ne!(sample_source(&s, 1000, 77).unwrap(), sample_source(&s, 1000, 78).unwrap());
    }

    #[test]
    fn latent_variant_shares_the_stream() {
        let s = canonical_benchmark();
        let (d, ks) = sample_source_with_latent(&s, 200, 5).unwrap();
        assert_eq!(d, sample_source(&s, 200, 5).unwrap());
        assert!(ks.iter().all(|&k| k < 2));
    }
}
