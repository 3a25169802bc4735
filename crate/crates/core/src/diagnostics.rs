//! FCP bounds, the exact variance of the conformal ECDF, calibration-conditional
//! (CCV) p-value thresholds, and the Benjamini-Hochberg step-up rule.

use serde::{Deserialize, Serialize};

use crate::envelope::{Direction, EnvelopeFunction};
use crate::error::{config, contract, Error, Result};
use crate::fdp::PValueVector;

/// Simultaneous bound on the false coverage proportion at miscoverage level
/// `alpha`: `FCP(alpha) = F(alpha) <= G(alpha)`.
pub fn fcp_bound(g: &EnvelopeFunction, alpha: f64) -> f64 {
    g.to_proportion_scale().eval(alpha).clamp(0.0, 1.0)
}

/// Linear baseline `G(t) = t + lambda`, clipped to `[0, 1]`. The constant is
/// supplied by the caller.
pub fn linear_bound(lambda: f64, alpha: f64) -> f64 {
    (alpha + lambda).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceQuery {
    pub n: usize,
    pub m: usize,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceResult {
    pub var: f64,
    pub c: f64,
    pub rho: f64,
}

impl VarianceQuery {
    pub fn new(n: usize, m: usize, t: f64) -> Self {
        Self { n, m, t }
    }

    /// `(k, gamma)` with `k = floor((n+1) t)` and `gamma = (n+1) t - k`.
    pub fn split(&self) -> (f64, f64) {
        let a = (self.n + 1) as f64 * self.t;
        let k = a.floor();
        (k, a - k)
    }
}

/// `rho_n(t) = ((n+1)(k + g^2) - (k + g)^2) / ((n+2)(k + g)(n+1-k-g))`.
///
/// The numerator is expanded to `k (n+1-k-2g) + n g^2`, which has no
/// cancellation between large terms.
pub fn rho(n: usize, t: f64) -> f64 {
    let q = VarianceQuery::new(n, 1, t);
    let (k, g) = q.split();
    let nf = n as f64;
    let a = k + g;
    let denom = (nf + 2.0) * a * (nf + 1.0 - a);
    if denom <= 0.0 {
        return 0.0;
    }
    (k * (nf + 1.0 - k - 2.0 * g) + nf * g * g) / denom
}

/// `Var F_{n,m}(t) = c_{n,m}(t) t (1 - t)` with `c = 1/m + (1 - 1/m) rho_n(t)`.
pub fn ecdf_variance(q: VarianceQuery) -> Result<VarianceResult> {
    if q.n == 0 || q.m == 0 {
        return config("variance needs n >= 1 and m >= 1");
    }
    if !(0.0..=1.0).contains(&q.t) {
        return config(format!("variance needs t in [0, 1], got {}", q.t));
    }
    let mf = q.m as f64;
    let rho = rho(q.n, q.t);
    let c = 1.0 / mf + (1.0 - 1.0 / mf) * rho;
    let var = if q.t == 0.0 || q.t == 1.0 {
        0.0
    } else {
        c * q.t * (1.0 - q.t)
    };
    Ok(VarianceResult { var, c, rho })
}

/// Thresholds `0 = b_0 <= b_1 <= ... <= b_n <= b_{n+1} = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcvThresholds {
    b: Vec<f64>,
    n: usize,
    delta: f64,
}

impl CcvThresholds {
    /// Wrap `b_1..b_n`; the end points are added here.
    pub fn new(inner: Vec<f64>, delta: f64) -> Result<Self> {
        let n = inner.len();
        let mut b = Vec::with_capacity(n + 2);
        b.push(0.0);
        b.extend(inner);
        b.push(1.0);
        if b.iter().any(|v| !(0.0..=1.0).contains(v)) || b.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Numeric("CCV thresholds are not nondecreasing in [0, 1]".into()));
        }
        Ok(Self { b, n, delta })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn delta(&self) -> f64 {
        self.delta
    }
    /// All `n + 2` thresholds, `b_0` through `b_{n+1}`.
    pub fn values(&self) -> &[f64] {
        &self.b
    }

    /// Whether the calibration set is one on which `h(u_hat)` is conditionally
    /// super-uniform. Given sorted calibration scores `T_(1..n)` (as uniforms),
    /// `P(h(u_hat) <= t | calib) = T_(j)` with `j = max{i : b_i <= t}`, so
    /// validity at every level is exactly `T_(i) <= b_i` for all `i`.
    pub fn conditionally_valid(&self, sorted_calib: &[f64]) -> Result<bool> {
        if sorted_calib.len() != self.n {
            return contract(format!(
                "{} calibration scores for thresholds built with n = {}",
                sorted_calib.len(),
                self.n
            ));
        }
        Ok(sorted_calib.iter().zip(&self.b[1..]).all(|(t, b)| t <= b))
    }

    /// Exact conditional CDF `P(h(u_hat) <= t | calib)`.
    pub fn conditional_cdf(&self, sorted_calib: &[f64], t: f64) -> f64 {
        let j = self.b.partition_point(|&b| b <= t);
        match j {
            0 => 0.0,
            j if j - 1 == 0 => 0.0,
            j if j - 1 > self.n => 1.0,
            j => sorted_calib[j - 2],
        }
    }
}

/// Tolerance of the bisection that inverts the lower envelope.
pub const CCV_BISECTION_TOL: f64 = 1e-10;

/// `b_i = inf{t : L(t) >= i/n}` for a nondecreasing lower bound `L` on the
/// ECDF of `n` i.i.d. uniforms. Returns the upper end of the bisection
/// bracket, so `L(b_i) >= i/n` holds exactly.
pub fn ccv_thresholds_from_fn<F: Fn(f64) -> f64>(n: usize, delta: f64, lower: F) -> Result<CcvThresholds> {
    if n == 0 {
        return config("CCV thresholds need n >= 1");
    }
    let nf = n as f64;
    let mut inner = Vec::with_capacity(n);
    let mut prev = 0.0;
    for i in 1..=n {
        let level = i as f64 / nf;
        let b = if lower(prev) >= level {
            prev
        } else if lower(1.0) < level {
            1.0
        } else {
            let (mut lo, mut hi) = (prev, 1.0);
            while hi - lo > CCV_BISECTION_TOL {
                let mid = 0.5 * (lo + hi);
                if lower(mid) >= level {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            hi
        };
        inner.push(b);
        prev = b;
    }
    CcvThresholds::new(inner, delta)
}

/// CCV thresholds from a lower envelope calibrated on `n` i.i.d. uniforms.
/// The envelope is monotonized (running maximum) before inversion.
pub fn ccv_thresholds(l: &EnvelopeFunction) -> Result<CcvThresholds> {
    if l.direction() != Direction::Lower {
        return contract("CCV thresholds need a lower envelope");
    }
    let l = l.to_proportion_scale();
    ccv_thresholds_from_fn(l.m(), l.delta(), |t| l.monotone_eval(t))
}

/// `h(p) = b_{ceil((n+1) p)}`.
pub fn ccv_adjust(p_marginal: f64, thresholds: &CcvThresholds) -> f64 {
    let n1 = (thresholds.n + 1) as f64;
    let x = n1 * p_marginal.clamp(0.0, 1.0);
    let r = x.round();
    let idx = if (x - r).abs() < 1e-9 { r } else { x.ceil() };
    thresholds.b[(idx as usize).min(thresholds.n + 1)]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BhResult {
    pub threshold: f64,
    pub rejections: usize,
}

/// Step-up rule: `k* = max{k : p_(k) <= k alpha / m}`, threshold `p_(k*)`
/// (0 when nothing is rejected).
pub fn bh_threshold(p: &PValueVector, alpha: f64) -> Result<BhResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return config(format!("BH level must be in (0, 1), got {alpha}"));
    }
    Ok(bh_sorted(&p.sorted(), alpha))
}

fn bh_sorted(sorted: &[f64], alpha: f64) -> BhResult {
    let m = sorted.len() as f64;
    let k = (1..=sorted.len())
        .rev()
        .find(|&k| sorted[k - 1] <= k as f64 * alpha / m)
        .unwrap_or(0);
    BhResult {
        threshold: if k == 0 { 0.0 } else { sorted[k - 1] },
        rejections: k,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosthocBh {
    pub alpha: f64,
    pub result: BhResult,
}

/// Raise the BH level in steps of `step` until at least `min_fraction` of the
/// hypotheses are rejected (or the level would reach 1).
pub fn posthoc_bh(p: &PValueVector, step: f64, min_fraction: f64) -> Result<PosthocBh> {
    if !(step > 0.0 && step < 1.0) {
        return config(format!("BH step must be in (0, 1), got {step}"));
    }
    let sorted = p.sorted();
    let needed = (min_fraction * sorted.len() as f64).ceil() as usize;
    let mut i = 1u32;
    loop {
        let alpha = step * i as f64;
        let result = bh_sorted(&sorted, alpha);
        let next = step * (i + 1) as f64;
        if result.rejections >= needed || next >= 1.0 - 1e-12 {
            return Ok(PosthocBh { alpha, result });
        }
        i += 1;
    }
}
