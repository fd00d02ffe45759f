//! Adaptive Gauss–Kronrod integration on finite intervals and Gauss–Hermite
//! rules for expectations under the standard normal law.

use crate::error::{Error, Result};

// G7–K15 abscissae on [0, 1], outermost first; odd indices are the Gauss nodes.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Tolerances for [`integrate`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct QuadratureConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
    /// Monte Carlo draws for estimators that have no quadrature form.
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self { abs_tol: 1e-13, rel_tol: 1e-11, max_intervals: 500, mc_samples: 2000, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadratureResult {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

/// Globally adaptive G7–K15 quadrature of `f` over `[a, b]`.
///
/// Bisects the segment with the largest error estimate until the summed
/// estimate falls below `max(abs_tol, rel_tol·|I|)`. Running out of
/// intervals is reported as [`Error::QuadratureNonConvergence`].
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, cfg: &QuadratureConfig) -> Result<QuadratureResult> {
    integrate_with_breaks(f, &[a, b], cfg)
}

/// Like [`integrate`], but the initial partition is given by `breaks`
/// (ascending, first and last are the limits). Put a break at every sharp
/// feature of the integrand: a peak narrower than the initial segments can
/// be missed entirely by the first Kronrod evaluation.
pub fn integrate_with_breaks<F: Fn(f64) -> f64>(
    f: F,
    breaks: &[f64],
    cfg: &QuadratureConfig,
) -> Result<QuadratureResult> {
    if breaks.len() < 2 || breaks.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("integration needs at least two finite limits"));
    }
    if breaks.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("integration breaks must be ascending"));
    }
    let mut segments = Vec::with_capacity(breaks.len());
    let mut evaluations = 0;
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            let (value, error) = gk15(&f, w[0], w[1]);
            segments.push(Segment { a: w[0], b: w[1], value, error });
            evaluations += 15;
        }
    }
    if segments.is_empty() {
        return Ok(QuadratureResult { value: 0.0, error: 0.0, evaluations: 0 });
    }
    let max_intervals = cfg.max_intervals.max(segments.len());
    loop {
        let total: f64 = segments.iter().map(|s| s.value).sum();
        let err: f64 = segments.iter().map(|s| s.error).sum();
        if !total.is_finite() {
            return Err(Error::NonFinite("integrand".into()));
        }
        if err <= cfg.abs_tol.max(cfg.rel_tol * total.abs()) {
            return Ok(QuadratureResult { value: total, error: err, evaluations });
        }
        if segments.len() >= max_intervals {
            return Err(Error::QuadratureNonConvergence { estimate: total, error: err });
        }
        let worst = segments
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .map(|(i, _)| i)
            .expect("at least one segment");
        let seg = segments.swap_remove(worst);
        let mid = 0.5 * (seg.a + seg.b);
        if mid <= seg.a || mid >= seg.b {
            // interval can no longer be split in floating point
            return Err(Error::QuadratureNonConvergence { estimate: total, error: err });
        }
        for (lo, hi) in [(seg.a, mid), (mid, seg.b)] {
            let (value, error) = gk15(&f, lo, hi);
            segments.push(Segment { a: lo, b: hi, value, error });
        }
        evaluations += 30;
    }
}

/// Gauss–Hermite rule for `E[f(Z)]`, `Z ~ N(0, 1)`: returns `(nodes, weights)`
/// with weights summing to one.
pub fn gauss_hermite_normal(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss–Hermite rule needs at least one node");
    const PIM4: f64 = 0.751_125_544_464_942_5; // π^(-1/4)
    let nf = n as f64;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-0.166_67),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    let scale = std::f64::consts::PI.sqrt();
    let nodes = x.iter().map(|v| v * std::f64::consts::SQRT_2).collect();
    let weights = w.iter().map(|v| v / scale).collect();
    (nodes, weights)
}

/// Tensor-product Gauss–Hermite rule in `dim` dimensions. Nodes are returned
/// row-major (`len = weights.len() * dim`).
pub fn gauss_hermite_tensor(dim: usize, per_axis: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let total = (per_axis as u128).checked_pow(dim as u32).unwrap_or(u128::MAX);
    const LIMIT: u128 = 2_000_000;
    if total > LIMIT {
        return Err(Error::EnumerationGuard { count: total, limit: LIMIT });
    }
    let (x1, w1) = gauss_hermite_normal(per_axis);
    let total = total as usize;
    let mut nodes = Vec::with_capacity(total * dim);
    let mut weights = Vec::with_capacity(total);
    let mut idx = vec![0usize; dim];
    for _ in 0..total {
        let mut w = 1.0;
        for &i in &idx {
            nodes.push(x1[i]);
            w *= w1[i];
        }
        weights.push(w);
        for slot in idx.iter_mut().rev() {
            *slot += 1;
            if *slot < per_axis {
                break;
            }
            *slot = 0;
        }
    }
    Ok((nodes, weights))
}
