//! Supremum-type summary statistics of an empirical CDF.
//!
//! All template statistics have the form `sup_{t in [l, r]} (F(t) - t) / sigma(t)`
//! with `sigma(t) = (t (1 - t))^beta`. For any fixed `x`, `(x - t) / sigma(t)`
//! is nonincreasing in `t`, so on each constant piece of a step function the
//! supremum sits at the piece's left end. Only `t = l` and the jump points in
//! `(l, r]` need to be visited, which makes every statistic linear in `m` once
//! the points are sorted.

use serde::{Deserialize, Serialize};

use crate::ecdf::EcdfCurve;
use crate::envelope::Direction;
use crate::error::{config, input, Result};

pub const DEFAULT_THC_ELL: f64 = 0.01;
pub const DEFAULT_THC_R: f64 = 0.99;
pub const DEFAULT_BETA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatisticKind {
    Ks,
    Hc,
    Thc,
    Bj,
    Pointwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStatisticSpec {
    pub kind: StatisticKind,
    #[serde(default = "default_ell")]
    pub ell: f64,
    #[serde(default = "default_r")]
    pub r: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub t0: f64,
    /// Berk-Jones only: count deviations where `p_(i) < i/m` only.
    #[serde(default)]
    pub bj_one_sided: bool,
}

fn default_ell() -> f64 {
    DEFAULT_THC_ELL
}
fn default_r() -> f64 {
    DEFAULT_THC_R
}
fn default_beta() -> f64 {
    DEFAULT_BETA
}

impl SummaryStatisticSpec {
    pub fn ks() -> Self {
        Self {
            kind: StatisticKind::Ks,
            ell: 0.0,
            r: 1.0,
            beta: 0.0,
            t0: 0.0,
            bj_one_sided: false,
        }
    }

    pub fn hc(beta: f64) -> Self {
        Self {
            kind: StatisticKind::Hc,
            ell: 0.0,
            r: 1.0,
            beta,
            t0: 0.0,
            bj_one_sided: false,
        }
    }

    pub fn thc(ell: f64, r: f64, beta: f64) -> Self {
        Self {
            kind: StatisticKind::Thc,
            ell,
            r,
            beta,
            t0: 0.0,
            bj_one_sided: false,
        }
    }

    /// Truncated higher criticism on `[0.01, 0.99]` with `beta = 1/2`.
    pub fn thc_default() -> Self {
        Self::thc(DEFAULT_THC_ELL, DEFAULT_THC_R, DEFAULT_BETA)
    }

    pub fn bj() -> Self {
        Self {
            kind: StatisticKind::Bj,
            ell: 0.0,
            r: 1.0,
            beta: 0.0,
            t0: 0.0,
            bj_one_sided: false,
        }
    }

    pub fn pointwise(t0: f64, beta: f64) -> Self {
        Self {
            kind: StatisticKind::Pointwise,
            ell: 0.0,
            r: 1.0,
            beta,
            t0,
            bj_one_sided: false,
        }
    }

    /// Window and exponent actually used by the statistic.
    pub fn effective_window(&self) -> (f64, f64, f64) {
        match self.kind {
            StatisticKind::Ks => (0.0, 1.0, 0.0),
            StatisticKind::Hc => (0.0, 1.0, self.beta),
            _ => (self.ell, self.r, self.beta),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return config(format!("beta must lie in [0, 1], got {}", self.beta));
        }
        match self.kind {
            StatisticKind::Ks | StatisticKind::Hc | StatisticKind::Bj => Ok(()),
            StatisticKind::Thc => {
                if !(self.ell.is_finite() && self.r.is_finite()) || self.ell >= self.r {
                    return config(format!("window needs ell < r, got [{}, {}]", self.ell, self.r));
                }
                if self.ell <= 0.0 || self.r >= 1.0 {
                    return config(format!(
                        "truncated HC needs 0 < ell < r < 1, got [{}, {}]",
                        self.ell, self.r
                    ));
                }
                Ok(())
            }
            StatisticKind::Pointwise => {
                if !(0.0..=1.0).contains(&self.t0) {
                    return config(format!("t0 must lie in [0, 1], got {}", self.t0));
                }
                if pointwise_sigma(self.t0, self.beta) <= 0.0 {
                    return config("pointwise statistic needs sigma(t0) > 0; use 0 < t0 < 1 or beta = 0");
                }
                Ok(())
            }
        }
    }
}

/// `(t (1 - t))^beta`.
#[inline]
pub fn power_sigma(t: f64, beta: f64) -> f64 {
    if beta == 0.0 {
        1.0
    } else {
        (t * (1.0 - t)).max(0.0).powf(beta)
    }
}

pub(crate) fn pointwise_sigma(t0: f64, beta: f64) -> f64 {
    power_sigma(t0, beta)
}

/// `num / sigma` with the limits used where the template vanishes (only at
/// `t` in `{0, 1}` with `beta > 0`): a positive numerator is `+inf`, a zero
/// numerator is `0` (the limit of `-t / t^beta` as `t -> 0` for `beta < 1`),
/// and a negative numerator is `-inf`.
#[inline]
fn standardize(num: f64, sigma: f64) -> f64 {
    if sigma > 0.0 {
        num / sigma
    } else if num > 0.0 {
        f64::INFINITY
    } else if num == 0.0 {
        0.0
    } else {
        f64::NEG_INFINITY
    }
}

/// One-sided Kolmogorov-Smirnov statistic `sqrt(m) * max_j (j/m - u_(j))`.
pub fn ks_statistic(curve: &EcdfCurve) -> f64 {
    let m = curve.len() as f64;
    let dev = curve
        .sorted_values()
        .iter()
        .enumerate()
        .map(|(i, &u)| (i + 1) as f64 / m - u)
        .fold(f64::NEG_INFINITY, f64::max);
    m.sqrt() * dev
}

/// Lower-tail KS statistic `sqrt(m) * sup_t (t - F(t))`.
pub fn ks_lower_statistic(curve: &EcdfCurve) -> f64 {
    m_sqrt(curve) * template_sup_lower(curve.sorted_values(), 0.0, 1.0, 0.0)
}

fn m_sqrt(curve: &EcdfCurve) -> f64 {
    (curve.len() as f64).sqrt()
}

/// Higher-criticism style statistic `sup_{t in [l, r]} (F(t) - t) / (t(1-t))^beta`.
pub fn thc_statistic(curve: &EcdfCurve, spec: &SummaryStatisticSpec) -> Result<f64> {
    if !matches!(spec.kind, StatisticKind::Hc | StatisticKind::Thc) {
        return config(format!("thc_statistic called with {:?}", spec.kind));
    }
    spec.validate()?;
    let (ell, r, beta) = spec.effective_window();
    Ok(template_sup_upper(curve.sorted_values(), ell, r, beta))
}

/// `sup_{t in [ell, r]} (F(t) - t) / sigma(t)` over sorted points.
///
/// Candidates are `t = ell` and each distinct jump point in `(ell, r]`, with the
/// right-continuous value of the step function.
pub fn template_sup_upper(sorted: &[f64], ell: f64, r: f64, beta: f64) -> f64 {
    let m = sorted.len() as f64;
    let start = sorted.partition_point(|&v| v <= ell);
    let mut best = standardize(start as f64 / m - ell, power_sigma(ell, beta));
    let mut i = start;
    while i < sorted.len() {
        let u = sorted[i];
        if u > r {
            break;
        }
        // Skip ahead over ties so the count is the right-continuous value.
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == u {
            j += 1;
        }
        let v = standardize(j as f64 / m - u, power_sigma(u, beta));
        if v > best {
            best = v;
        }
        i = j;
    }
    best
}

/// `sup_{t in [ell, r]} (t - F(t)) / sigma(t)` over sorted points.
///
/// Here the standardized deviation increases along each constant piece, so the
/// candidates are the left limits at jump points in `(ell, r]` and `t = r`.
pub fn template_sup_lower(sorted: &[f64], ell: f64, r: f64, beta: f64) -> f64 {
    let m = sorted.len() as f64;
    let end = sorted.partition_point(|&v| v <= r);
    let mut best = standardize(r - end as f64 / m, power_sigma(r, beta));
    let mut i = sorted.partition_point(|&v| v <= ell);
    while i < end {
        let u = sorted[i];
        // `i` points at the first copy of `u`, so `i` is the count strictly below.
        let v = standardize(u - i as f64 / m, power_sigma(u, beta));
        if v > best {
            best = v;
        }
        while i < end && sorted[i] == u {
            i += 1;
        }
    }
    best
}

/// Kullback-Leibler divergence between Bernoulli(`p0`) and Bernoulli(`p1`),
/// with `0 log 0 = 0`. Requires `0 < p1 < 1`.
pub fn bernoulli_kl(p0: f64, p1: f64) -> f64 {
    let a = if p0 > 0.0 { p0 * (p0 / p1).ln() } else { 0.0 };
    let b = if p0 < 1.0 {
        (1.0 - p0) * ((1.0 - p0) / (1.0 - p1)).ln()
    } else {
        0.0
    };
    a + b
}

/// Berk-Jones statistic `m * max_{1 <= i <= m/2} D(p_(i), i/m)`.
pub fn bj_statistic(curve: &EcdfCurve, one_sided: bool) -> Result<f64> {
    bj_from_sorted(curve.sorted_values(), one_sided)
}

pub(crate) fn bj_from_sorted(sorted: &[f64], one_sided: bool) -> Result<f64> {
    let m = sorted.len();
    if m < 2 {
        return input("Berk-Jones statistic needs at least two points");
    }
    let mf = m as f64;
    let best = (1..=m / 2)
        .map(|i| {
            let p = sorted[i - 1];
            let q = i as f64 / mf;
            if one_sided && p >= q {
                0.0
            } else {
                bernoulli_kl(p, q)
            }
        })
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(mf * best)
}

/// `(F(t0) - mu0) / sigma0`.
pub fn pointwise_statistic(curve: &EcdfCurve, t0: f64, mu0: f64, sigma0: f64) -> Result<f64> {
    if sigma0.is_nan() || sigma0 <= 0.0 {
        return config(format!("pointwise statistic needs sigma0 > 0, got {sigma0}"));
    }
    Ok((curve.eval(t0) - mu0) / sigma0)
}

/// Evaluate `spec` on sorted points. `Lower` flips the sign of the deviation.
pub fn evaluate_sorted(sorted: &[f64], spec: &SummaryStatisticSpec, direction: Direction) -> Result<f64> {
    let m = sorted.len();
    if m == 0 {
        return input("summary statistic of an empty sample");
    }
    let (ell, r, beta) = spec.effective_window();
    Ok(match (spec.kind, direction) {
        (StatisticKind::Ks, Direction::Upper) => (m as f64).sqrt() * template_sup_upper(sorted, 0.0, 1.0, 0.0),
        (StatisticKind::Ks, Direction::Lower) => (m as f64).sqrt() * template_sup_lower(sorted, 0.0, 1.0, 0.0),
        (StatisticKind::Hc | StatisticKind::Thc, Direction::Upper) => template_sup_upper(sorted, ell, r, beta),
        (StatisticKind::Hc | StatisticKind::Thc, Direction::Lower) => template_sup_lower(sorted, ell, r, beta),
        (StatisticKind::Bj, Direction::Upper) => bj_from_sorted(sorted, spec.bj_one_sided)?,
        (StatisticKind::Bj, Direction::Lower) => return config("Berk-Jones statistic has no lower-direction envelope"),
        (StatisticKind::Pointwise, dir) => {
            let f = sorted.partition_point(|&v| v <= spec.t0) as f64 / m as f64;
            let z = (f - spec.t0) / pointwise_sigma(spec.t0, beta);
            match dir {
                Direction::Upper => z,
                Direction::Lower => -z,
            }
        }
    })
}

/// Evaluate `spec` on an ECDF.
pub fn evaluate(curve: &EcdfCurve, spec: &SummaryStatisticSpec, direction: Direction) -> Result<f64> {
    evaluate_sorted(curve.sorted_values(), spec, direction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn curve(v: &[f64]) -> EcdfCurve {
        EcdfCurve::new(v).unwrap()
    }

    /// Dense-grid brute force of the template supremum, independent of the
    /// candidate-point reduction.
    fn grid_sup(values: &[f64], ell: f64, r: f64, beta: f64, step: f64) -> f64 {
        let f = curve(values);
        let n = ((r - ell) / step).round() as usize;
        (0..=n)
            .map(|k| (ell + k as f64 * step).min(r))
            .map(|t| (f.eval(t) - t) / (t * (1.0 - t)).powf(beta))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn ks_examples() {
        assert_eq!(ks_statistic(&curve(&[0.5, 1.0])), 0.0);
        let v = ks_statistic(&curve(&[0.25, 0.5]));
        assert!((v - 2f64.sqrt() * 0.5).abs() < 1e-12);
        let eps = 1e-3;
        let v = ks_statistic(&curve(&[1.0 - eps; 3]));
        assert!((v - 3f64.sqrt() * eps).abs() < 1e-12);
    }

    #[test]
    fn thc_examples() {
        let spec = SummaryStatisticSpec::thc(0.01, 0.99, 0.5);
        let v = thc_statistic(&curve(&[0.25, 0.5]), &spec).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        let oracle = grid_sup(&[0.25, 0.5], 0.01, 0.99, 0.5, 1e-5);
        assert!((v - oracle).abs() < 1e-4);

        let spec = SummaryStatisticSpec::thc(0.1, 0.5, 0.5);
        let v = thc_statistic(&curve(&[0.9]), &spec).unwrap();
        assert!((v + 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn thc_rejects_bad_window() {
        let c = curve(&[0.3]);
        assert!(thc_statistic(&c, &SummaryStatisticSpec::thc(0.5, 0.5, 0.5)).is_err());
        assert!(thc_statistic(&c, &SummaryStatisticSpec::thc(0.0, 0.5, 0.5)).is_err());
        assert!(thc_statistic(&c, &SummaryStatisticSpec::ks()).is_err());
    }

    #[test]
    fn hc_boundary_points_use_limits() {
        // A point at exactly 0 makes the HC supremum infinite; one at exactly 1
        // contributes the 0/0 limit and does not panic.
        let v = thc_statistic(&curve(&[0.0, 0.5]), &SummaryStatisticSpec::hc(0.5)).unwrap();
        assert_eq!(v, f64::INFINITY);
        let v = thc_statistic(&curve(&[1.0]), &SummaryStatisticSpec::hc(0.5)).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn bj_examples() {
        assert_eq!(bj_statistic(&curve(&[0.5, 0.9]), false).unwrap(), 0.0);
        let v = bj_statistic(&curve(&[0.25, 0.9]), false).unwrap();
        let expected = 2.0 * (0.25 * 0.5f64.ln() + 0.75 * 1.5f64.ln());
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 0.26162).abs() < 1e-5);
        let v = bj_statistic(&curve(&[0.0, 0.9, 0.95, 0.99]), false).unwrap();
        // i = 1 gives D(0, 1/4) = -ln(3/4); i = 2 gives D(0.9, 1/2), which is larger.
        let d1 = -(0.75f64).ln();
        assert!((bernoulli_kl(0.0, 0.25) - d1).abs() < 1e-15);
        assert!((d1 - 0.28768).abs() < 1e-5);
        assert!(v >= 4.0 * d1);
        assert!(bj_statistic(&curve(&[0.3]), false).is_err());
    }

    #[test]
    fn bj_one_sided_ignores_upper_deviations() {
        let c = curve(&[0.55, 0.9]);
        assert!(bj_statistic(&c, false).unwrap() > 0.0);
        assert_eq!(bj_statistic(&c, true).unwrap(), 0.0);
    }

    #[test]
    fn pointwise_examples() {
        let c = curve(&[0.2, 0.6]);
        assert_eq!(pointwise_statistic(&c, 0.5, 0.5, 0.1).unwrap(), 0.0);
        assert!((pointwise_statistic(&c, 0.7, 0.7, 0.2).unwrap() - 1.5).abs() < 1e-12);
        assert!(pointwise_statistic(&c, 0.7, 0.7, 0.0).is_err());
    }

    #[test]
    fn lower_ks_matches_classical_formula() {
        let v = [0.1, 0.35, 0.4, 0.8];
        let expected = v
            .iter()
            .enumerate()
            .map(|(i, &u)| u - i as f64 / 4.0)
            .fold(0.0, f64::max)
            * 2.0;
        assert!((ks_lower_statistic(&curve(&v)) - expected).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn template_decreasing_in_t(x in 0.0f64..=1.0, beta in 0.0f64..=1.0) {
            let mut prev = f64::INFINITY;
            for k in 1..2000 {
                let t = k as f64 / 2000.0;
                let v = (x - t) / (t * (1.0 - t)).powf(beta);
                prop_assert!(v <= prev + 1e-12);
                prev = v;
            }
        }

        #[test]
        fn ks_reduction_is_exact(values in prop::collection::vec(0.0f64..1.0, 1..40)) {
            let c = curve(&values);
            let via_template = template_sup_upper(c.sorted_values(), 0.0, 1.0, 0.0) * (c.len() as f64).sqrt();
            prop_assert_eq!(via_template, ks_statistic(&c));
        }

        #[test]
        fn order_invariance(mut values in prop::collection::vec(0.0f64..1.0, 2..30)) {
            let spec = SummaryStatisticSpec::thc_default();
            let a = thc_statistic(&curve(&values), &spec).unwrap();
            let b1 = bj_statistic(&curve(&values), false).unwrap();
            values.reverse();
            prop_assert_eq!(a, thc_statistic(&curve(&values), &spec).unwrap());
            prop_assert_eq!(b1, bj_statistic(&curve(&values), false).unwrap());
        }

        #[test]
        fn lower_template_matches_grid(values in prop::collection::vec(0.001f64..0.999, 1..20),
                                       beta in 0.0f64..=1.0) {
            let c = curve(&values);
            let fast = template_sup_lower(c.sorted_values(), 0.05, 0.95, beta);
            let step = 1e-4;
            // The supremum is approached from the left of each jump; a grid
            // only reaches it up to one step of slope.
            let grid = (0..=9000)
                .map(|k| 0.05 + k as f64 * step)
                .map(|t| (t - c.eval(t)) / (t * (1.0 - t)).powf(beta))
                .fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(fast >= grid - 1e-9);
            prop_assert!(fast <= grid + 0.05);
        }
    }
}
