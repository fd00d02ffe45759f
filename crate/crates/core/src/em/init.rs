use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::InitMethod;
use crate::numeric::squared_distance;

/// Standardizes each column of the joint vector `(x, labels...)`.
fn joint_features(n: usize, d: usize, x: &[f64], channels: &[&[f64]]) -> (Vec<f64>, usize) {
    let p = d + channels.len();
    let mut f = Vec::with_capacity(n * p);
    for i in 0..n {
        f.extend_from_slice(&x[i * d..(i + 1) * d]);
        f.extend(channels.iter().map(|c| c[i]));
    }
    for a in 0..p {
        let mean = (0..n).map(|i| f[i * p + a]).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (f[i * p + a] - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        for i in 0..n {
            f[i * p + a] = (f[i * p + a] - mean) / sd;
        }
    }
    (f, p)
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d2 = squared_distance(point, c);
        if d2 < best.1 {
            best = (j, d2);
        }
    }
    best
}

/// Hard initial responsibilities (row-major `n × k`).
pub(crate) fn initial_responsibilities(
    method: InitMethod,
    n: usize,
    d: usize,
    k: usize,
    x: &[f64],
    channels: &[&[f64]],
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let (f, p) = joint_features(n, d, x, channels);
    let row = |i: usize| &f[i * p..(i + 1) * p];
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    match method {
        InitMethod::Random => {
            for _ in 0..k {
                centers.push(row(rng.random_range(0..n)).to_vec());
            }
        }
        InitMethod::KMeansPlusPlus => {
            centers.push(row(rng.random_range(0..n)).to_vec());
            let mut dist: Vec<f64> = (0..n).map(|i| squared_distance(row(i), &centers[0])).collect();
            while centers.len() < k {
                let total: f64 = dist.iter().sum();
                let next = if total > 0.0 {
                    let target = rng.random::<f64>() * total;
                    let mut acc = 0.0;
                    let mut pick = n - 1;
                    for (i, dv) in dist.iter().enumerate() {
                        acc += dv;
                        if acc > target {
                            pick = i;
                            break;
                        }
                    }
                    pick
                } else {
                    rng.random_range(0..n)
                };
                centers.push(row(next).to_vec());
                let c = centers.last().expect("just pushed");
                for (i, dv) in dist.iter_mut().enumerate() {
                    *dv = dv.min(squared_distance(row(i), c));
                }
            }
        }
    }
    let mut labels: Vec<usize> = (0..n).map(|i| nearest(row(i), &centers).0).collect();
    if method == InitMethod::KMeansPlusPlus {
        for _ in 0..100 {
            let mut sums = vec![vec![0.0; p]; k];
            let mut counts = vec![0usize; k];
            for i in 0..n {
                counts[labels[i]] += 1;
                for (s, v) in sums[labels[i]].iter_mut().zip(row(i)) {
                    *s += v;
                }
            }
            for j in 0..k {
                if counts[j] > 0 {
                    centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
                }
            }
            let mut changed = false;
            for i in 0..n {
                let l = nearest(row(i), &centers).0;
                if l != labels[i] {
                    labels[i] = l;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
    }
    let mut resp = vec![0.0; n * k];
    for (i, l) in labels.iter().enumerate() {
        resp[i * k + l] = 1.0;
    }
    resp
}
