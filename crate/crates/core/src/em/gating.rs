//! M-step for the gating network: weighted multinomial logistic regression
//! with logits `o_ik + c_kᵀφ_i`, solved by damped Newton with the last
//! component's coefficients pinned at zero.

use nalgebra::{DMatrix, DVector};

use crate::numeric::logsumexp;

/// Inputs of the gating M-step. `features` is row-major `n × p`; `offsets`
/// (row-major `n × k`) are fixed per-component log-kernel terms.
pub(crate) struct SoftmaxProblem<'a> {
    pub n: usize,
    pub k: usize,
    pub p: usize,
    pub features: &'a [f64],
    pub offsets: Option<&'a [f64]>,
    pub resp: &'a [f64],
}

impl SoftmaxProblem<'_> {
    fn logits(&self, coef: &[f64], i: usize, out: &mut [f64]) {
        let phi = &self.features[i * self.p..(i + 1) * self.p];
        for j in 0..self.k {
            let c = &coef[j * self.p..(j + 1) * self.p];
            let mut v: f64 = c.iter().zip(phi).map(|(a, b)| a * b).sum();
            if let Some(o) = self.offsets {
                v += o[i * self.k + j];
            }
            out[j] = v;
        }
    }

    /// Expected complete-data log-likelihood of the gate.
    pub fn objective(&self, coef: &[f64]) -> f64 {
        let mut u = vec![0.0; self.k];
        let mut total = 0.0;
        for i in 0..self.n {
            self.logits(coef, i, &mut u);
            let lse = logsumexp(&u);
            let r = &self.resp[i * self.k..(i + 1) * self.k];
            for j in 0..self.k {
                if r[j] > 0.0 {
                    total += r[j] * (u[j] - lse);
                }
            }
        }
        total
    }

    /// Improves `coef` in place; never decreases the objective.
    pub fn maximize(&self, coef: &mut [f64], max_steps: usize) {
        let (k, p) = (self.k, self.p);
        if k < 2 {
            return;
        }
        // pin the reference component
        let last = coef[(k - 1) * p..].to_vec();
        for j in 0..k {
            for a in 0..p {
                coef[j * p + a] -= last[a];
            }
        }
        let m = (k - 1) * p;
        let mut current = self.objective(coef);
        let mut u = vec![0.0; k];
        for _ in 0..max_steps {
            let mut grad = DVector::<f64>::zeros(m);
            let mut hess = DMatrix::<f64>::zeros(m, m);
            for i in 0..self.n {
                self.logits(coef, i, &mut u);
                let lse = logsumexp(&u);
                for v in u.iter_mut() {
                    *v = (*v - lse).exp();
                }
                let phi = &self.features[i * p..(i + 1) * p];
                let r = &self.resp[i * k..(i + 1) * k];
                let rsum: f64 = r.iter().sum();
                for j in 0..k - 1 {
                    let gj = r[j] - rsum * u[j];
                    for a in 0..p {
                        grad[j * p + a] += gj * phi[a];
                    }
                    for l in 0..k - 1 {
                        let w = rsum * u[j] * (if j == l { 1.0 } else { 0.0 } - u[l]);
                        if w == 0.0 {
                            continue;
                        }
                        for a in 0..p {
                            for b in 0..p {
                                hess[(j * p + a, l * p + b)] += w * phi[a] * phi[b];
                            }
                        }
                    }
                }
            }
            if grad.amax() < 1e-12 * (self.n as f64).max(1.0) {
                break;
            }
            for d in 0..m {
                hess[(d, d)] += 1e-9 * (self.n as f64).max(1.0);
            }
            let step = match hess.clone().cholesky() {
                Some(ch) => ch.solve(&grad),
                None => grad.clone() / (self.n as f64).max(1.0),
            };
            let mut t = 1.0;
            let mut improved = false;
            let mut trial = coef.to_vec();
            for _ in 0..40 {
                for d in 0..m {
                    trial[d] = coef[d] + t * step[d];
                }
                let val = self.objective(&trial);
                if val.is_finite() && val >= current {
                    let gain = val - current;
                    coef[..m].copy_from_slice(&trial[..m]);
                    current = val;
                    improved = gain > 1e-12 * current.abs().max(1.0);
                    break;
                }
                t *= 0.5;
            }
            if !improved {
                break;
            }
        }
    }
}

/// Converts free softmax logits `a_k + b_kᵀx` into a prior and Gaussian
/// kernel locations with variance `s2`.
///
/// Kernel locations are only determined up to a common translation by the
/// conditional gate; the translation is fixed so that `Σ_k π_k η_k = center`.
pub(crate) fn logits_to_prior_and_locations(
    coef: &[f64],
    k: usize,
    dim: usize,
    s2: f64,
    center: &[f64],
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let p = dim + 1;
    let a: Vec<f64> = (0..k).map(|j| coef[j * p]).collect();
    let b: Vec<Vec<f64>> = (0..k).map(|j| coef[j * p + 1..(j + 1) * p].to_vec()).collect();
    let weights = |v: &[f64]| -> (Vec<f64>, Vec<Vec<f64>>) {
        let eta: Vec<Vec<f64>> = b.iter().map(|bj| bj.iter().zip(v).map(|(x, y)| s2 * (x + y)).collect()).collect();
        let mut logw: Vec<f64> =
            (0..k).map(|j| a[j] + eta[j].iter().map(|e| e * e).sum::<f64>() / (2.0 * s2)).collect();
        let lse = logsumexp(&logw);
        logw.iter_mut().for_each(|l| *l = (*l - lse).exp());
        (logw, eta)
    };
    // Newton on the strictly convex potential whose gradient is Σπ_kη_k - center
    let mut v = vec![0.0; dim];
    for _ in 0..100 {
        let (pi, eta) = weights(&v);
        let mut grad = DVector::<f64>::zeros(dim);
        let mut mean = vec![0.0; dim];
        for j in 0..k {
            for a in 0..dim {
                mean[a] += pi[j] * eta[j][a];
            }
        }
        for a in 0..dim {
            grad[a] = mean[a] - center[a];
        }
        if grad.amax() < 1e-14 * (1.0 + center.iter().fold(0.0f64, |m, c| m.max(c.abs()))) {
            break;
        }
        let mut hess = DMatrix::<f64>::identity(dim, dim) * s2;
        for j in 0..k {
            for a in 0..dim {
                for c in 0..dim {
                    hess[(a, c)] += pi[j] * (eta[j][a] - mean[a]) * (eta[j][c] - mean[c]);
                }
            }
        }
        let step = hess.cholesky().map(|ch| ch.solve(&grad)).unwrap_or_else(|| grad.clone() / s2);
        for a in 0..dim {
            v[a] -= step[a];
        }
    }
    weights(&v)
}

/// Inverse of [`logits_to_prior_and_locations`]: logits of a prior and kernel
/// locations, with the last component as reference.
#[cfg(test)]
pub(crate) fn prior_and_locations_to_logits(pi: &[f64], eta: &[Vec<f64>], s2: f64) -> Vec<f64> {
    let k = pi.len();
    let dim = eta[0].len();
    let p = dim + 1;
    let mut coef = vec![0.0; k * p];
    for j in 0..k {
        let norm: f64 = eta[j].iter().map(|e| e * e).sum();
        coef[j * p] = pi[j].max(1e-300).ln() - norm / (2.0 * s2);
        for a in 0..dim {
            coef[j * p + 1 + a] = eta[j][a] / s2;
        }
    }
    coef
}
