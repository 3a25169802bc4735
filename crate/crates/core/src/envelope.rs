//! Monte Carlo calibration of simultaneous envelopes.
//!
//! Given `B` draws of the null p-value vector, compute the summary statistic on
//! each, and take as cutoff the `(1 - delta)` quantile of the `B` values plus
//! one extra atom at `+inf`, each with mass `1/(B+1)`. Inverting
//! `T(F) <= cutoff` gives an envelope `G` with
//! `1 - delta <= P(F <= G everywhere) <= 1 - delta + 1/(B+1)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::sampler::{self, SamplerConfig, UniformSampleMatrix};
use crate::statistics::{
    bernoulli_kl, evaluate_sorted, pointwise_sigma, power_sigma, StatisticKind, SummaryStatisticSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Upper,
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Proportion,
    Count,
}

/// 1-based rank of the cutoff among the sorted statistics:
/// `k = ceil((1 - delta)(B + 1))`. Values within `1e-9` of an integer are
/// snapped so that, e.g., `delta = 0.1, B = 99` gives exactly `k = 90`.
pub fn quantile_rank(b: usize, delta: f64) -> usize {
    let x = (1.0 - delta) * (b as f64 + 1.0);
    let nearest = x.round();
    let k = if (x - nearest).abs() <= 1e-9 * x.max(1.0) {
        nearest
    } else {
        x.ceil()
    };
    k.max(1.0) as usize
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return config(format!("delta must lie in (0, 1), got {delta}"));
    }
    Ok(())
}

/// Quantile of the weighted empirical measure `sum_b delta_{T_b}/(B+1) + delta_inf/(B+1)`.
/// Returns `+inf` when `k > B`.
pub fn quantile_cutoff(stats: &[f64], delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if stats.is_empty() {
        return config("cutoff calibration needs at least one Monte Carlo replication");
    }
    if let Some(bad) = stats.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite summary statistic {bad}")));
    }
    let k = quantile_rank(stats.len(), delta);
    if k > stats.len() {
        return Ok(f64::INFINITY);
    }
    let mut v = stats.to_vec();
    let (_, kth, _) = v.select_nth_unstable_by(k - 1, f64::total_cmp);
    Ok(*kth)
}

/// Statistic of every row of `samples`.
pub fn row_statistics(
    samples: &UniformSampleMatrix,
    spec: &SummaryStatisticSpec,
    direction: Direction,
) -> Result<Vec<f64>> {
    spec.validate()?;
    let rows: Vec<&[f64]> = samples.iter_rows().collect();
    rows.par_iter()
        .map_init(Vec::new, |buf, row| {
            buf.clear();
            buf.extend_from_slice(row);
            buf.sort_unstable_by(f64::total_cmp);
            evaluate_sorted(buf, spec, direction)
        })
        .collect()
}

/// Cutoff for an upper envelope.
pub fn calibrate_cutoff(samples: &UniformSampleMatrix, spec: &SummaryStatisticSpec, delta: f64) -> Result<f64> {
    calibrate_cutoff_directed(samples, spec, Direction::Upper, delta)
}

pub fn calibrate_cutoff_directed(
    samples: &UniformSampleMatrix,
    spec: &SummaryStatisticSpec,
    direction: Direction,
    delta: f64,
) -> Result<f64> {
    check_delta(delta)?;
    let stats = row_statistics(samples, spec, direction)?;
    quantile_cutoff(&stats, delta)
}

/// A calibrated envelope `G(t)` (upper) or `L(t)` (lower).
///
/// Upper envelopes follow the piecewise rule: `min(mu(l) + T sigma(l), M)` left
/// of the window, `min(mu(t) + T sigma(t), M)` inside it, and `M` to the right.
/// Lower envelopes mirror it with `0` left of the window and the value at `r`
/// carried to the right (the ECDF is nondecreasing).
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeFunction {
    spec: SummaryStatisticSpec,
    cutoff: f64,
    n: usize,
    m: usize,
    delta: f64,
    b_used: usize,
    seed: u64,
    direction: Direction,
    scale: Scale,
    /// Argmax of `t + T sigma(t)` on the window when that function is concave.
    peak: f64,
    /// Berk-Jones: running maximum of the lower bounds on `p_(i)`, `i <= m/2`.
    bj_bounds: Vec<f64>,
}

impl EnvelopeFunction {
    pub fn spec(&self) -> &SummaryStatisticSpec {
        &self.spec
    }
    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn delta(&self) -> f64 {
        self.delta
    }
    pub fn b_used(&self) -> usize {
        self.b_used
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn direction(&self) -> Direction {
        self.direction
    }
    pub fn scale(&self) -> Scale {
        self.scale
    }

    /// Cap `M`: 1 on the proportion scale, `m` on the count scale.
    pub fn cap(&self) -> f64 {
        match self.scale {
            Scale::Proportion => 1.0,
            Scale::Count => self.m as f64,
        }
    }

    pub fn window(&self) -> (f64, f64) {
        let (ell, r, _) = self.spec.effective_window();
        (ell, r)
    }

    /// Record the Monte Carlo provenance (replication count and seed).
    pub fn with_provenance(mut self, b_used: usize, seed: u64) -> Self {
        self.b_used = b_used;
        self.seed = seed;
        self
    }

    /// Same envelope expressed as counts (`m` times the proportion bound).
    pub fn to_count_scale(&self) -> Self {
        Self {
            scale: Scale::Count,
            ..self.clone()
        }
    }

    pub fn to_proportion_scale(&self) -> Self {
        Self {
            scale: Scale::Proportion,
            ..self.clone()
        }
    }

    fn rescale(&self, prop: f64) -> f64 {
        match self.scale {
            Scale::Proportion => prop,
            Scale::Count => prop * self.m as f64,
        }
    }

    /// Signed multiplier of the template: `+T` for upper, `-T` for lower.
    fn signed_cutoff(&self) -> f64 {
        match self.direction {
            Direction::Upper => self.cutoff,
            Direction::Lower => -self.cutoff,
        }
    }

    fn vacuous(&self) -> bool {
        self.cutoff == f64::INFINITY
    }

    /// `mu(t) + (+/-T) sigma(t)` for the power and linear templates.
    fn raw(&self, t: f64) -> f64 {
        let k = self.signed_cutoff();
        match self.spec.kind {
            StatisticKind::Ks => t + k / (self.m as f64).sqrt(),
            _ => {
                let s = power_sigma(t, self.spec.effective_window().2);
                // 0 * inf never happens: vacuous envelopes return early.
                if s == 0.0 {
                    t
                } else {
                    t + k * s
                }
            }
        }
    }

    /// Envelope value at `t` on the proportion scale.
    fn eval_proportion(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, 1.0);
        match self.direction {
            Direction::Upper => {
                if self.vacuous() {
                    return 1.0;
                }
                match self.spec.kind {
                    StatisticKind::Ks => self.raw(t).clamp(0.0, 1.0),
                    StatisticKind::Hc | StatisticKind::Thc => {
                        let (ell, r) = self.window();
                        if t > r {
                            1.0
                        } else {
                            self.raw(t.max(ell)).clamp(0.0, 1.0)
                        }
                    }
                    StatisticKind::Bj => {
                        // F(t) >= i/m requires p_(i) <= t, impossible once the
                        // lower bound on p_(i) exceeds t.
                        let first_blocked = self.bj_bounds.partition_point(|&b| b <= t);
                        if first_blocked == self.bj_bounds.len() {
                            1.0
                        } else {
                            first_blocked as f64 / self.m as f64
                        }
                    }
                    StatisticKind::Pointwise => {
                        if t <= self.spec.t0 {
                            self.pointwise_value().clamp(0.0, 1.0)
                        } else {
                            1.0
                        }
                    }
                }
            }
            Direction::Lower => {
                if self.vacuous() {
                    return 0.0;
                }
                match self.spec.kind {
                    StatisticKind::Ks => self.raw(t).clamp(0.0, 1.0),
                    StatisticKind::Hc | StatisticKind::Thc => {
                        let (ell, r) = self.window();
                        if t < ell {
                            0.0
                        } else {
                            self.raw(t.min(r)).clamp(0.0, 1.0)
                        }
                    }
                    StatisticKind::Bj => 0.0,
                    StatisticKind::Pointwise => {
                        if t >= self.spec.t0 {
                            self.pointwise_value().clamp(0.0, 1.0)
                        } else {
                            0.0
                        }
                    }
                }
            }
        }
    }

    fn pointwise_value(&self) -> f64 {
        self.spec.t0 + self.signed_cutoff() * pointwise_sigma(self.spec.t0, self.spec.beta)
    }

    /// Envelope value `G(t)` in the envelope's scale. Constant time except for
    /// Berk-Jones envelopes, which take `O(log m)`.
    pub fn eval(&self, t: f64) -> f64 {
        self.rescale(self.eval_proportion(t))
    }

    /// Running maximum `sup_{s <= t} G(s)`, which is nondecreasing in `t` and
    /// dominates `G`. Still a valid bound because the ECDF is nondecreasing.
    pub fn monotone_eval(&self, t: f64) -> f64 {
        self.rescale(self.monotone_proportion(t))
    }

    fn monotone_proportion(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, 1.0);
        if self.vacuous() {
            return self.eval_proportion(t);
        }
        match self.spec.kind {
            StatisticKind::Hc | StatisticKind::Thc => {
                let (ell, r) = self.window();
                match self.direction {
                    Direction::Upper if t > r => 1.0,
                    Direction::Lower if t < ell => 0.0,
                    _ => {
                        let top = t.min(r).max(ell);
                        self.window_running_max(ell, top).clamp(0.0, 1.0)
                    }
                }
            }
            // Linear, step and pointwise envelopes are already nondecreasing.
            _ => self.eval_proportion(t),
        }
    }

    /// `max_{s in [ell, top]} raw(s)`.
    fn window_running_max(&self, ell: f64, top: f64) -> f64 {
        if self.signed_cutoff() >= 0.0 {
            // Concave: increasing up to the peak, then decreasing.
            self.raw(top.min(self.peak).max(ell))
        } else {
            // Convex: the maximum sits at an endpoint.
            self.raw(ell).max(self.raw(top))
        }
    }
}

/// Argmax of the concave map `t + k (t(1-t))^beta` (`k >= 0`) on `[ell, r]`.
fn concave_peak(k: f64, beta: f64, ell: f64, r: f64) -> f64 {
    if k <= 0.0 || beta == 0.0 || !k.is_finite() {
        return r;
    }
    let deriv = |t: f64| {
        let g = t * (1.0 - t);
        1.0 + k * beta * g.powf(beta - 1.0) * (1.0 - 2.0 * t)
    };
    // The derivative is positive on (0, 1/2]; look for the sign change after.
    let lo0 = ell.max(0.5);
    let top = r.min(1.0 - 1e-15);
    if lo0 >= top || deriv(top) >= 0.0 {
        return r;
    }
    let (mut lo, mut hi) = (lo0, top);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if deriv(mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    lo
}

/// Lower bounds on the order statistics `p_(i)`, `i <= m/2`, implied by
/// `m * D(p_(i), i/m) <= cutoff`; returned as a running maximum.
fn bj_order_bounds(m: usize, cutoff: f64) -> Vec<f64> {
    let level = cutoff / m as f64;
    let mut out = Vec::with_capacity(m / 2);
    let mut running: f64 = 0.0;
    for i in 1..=m / 2 {
        let q = i as f64 / m as f64;
        let bound = if bernoulli_kl(0.0, q) <= level {
            0.0
        } else {
            // D(., q) decreases on [0, q] from -ln(1-q) to 0.
            let (mut lo, mut hi) = (0.0, q);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if bernoulli_kl(mid, q) > level {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            // `lo` has D > level, so it is a strict lower bound on p_(i).
            lo
        };
        running = running.max(bound);
        out.push(running);
    }
    out
}

/// Invert a calibrated cutoff into an envelope for `P(n, m)`.
pub fn build_envelope(
    cutoff: f64,
    spec: &SummaryStatisticSpec,
    n: usize,
    m: usize,
    delta: f64,
    direction: Direction,
) -> Result<EnvelopeFunction> {
    spec.validate()?;
    check_delta(delta)?;
    if m == 0 {
        return config("envelope needs m >= 1");
    }
    if cutoff.is_nan() {
        return Err(Error::Numeric("envelope cutoff is NaN".into()));
    }
    if spec.kind == StatisticKind::Bj && direction == Direction::Lower {
        return config("Berk-Jones statistic has no lower-direction envelope");
    }
    let (ell, r, beta) = spec.effective_window();
    let signed = match direction {
        Direction::Upper => cutoff,
        Direction::Lower => -cutoff,
    };
    let peak = concave_peak(signed, beta, ell, r);
    let bj_bounds = if spec.kind == StatisticKind::Bj && cutoff.is_finite() {
        bj_order_bounds(m, cutoff)
    } else {
        Vec::new()
    };
    Ok(EnvelopeFunction {
        spec: *spec,
        cutoff,
        n,
        m,
        delta,
        b_used: 0,
        seed: 0,
        direction,
        scale: Scale::Proportion,
        peak,
        bj_bounds,
    })
}

/// Sample, calibrate and build in one step.
pub fn calibrate_envelope(
    sampler_config: &SamplerConfig,
    spec: &SummaryStatisticSpec,
    delta: f64,
    direction: Direction,
) -> Result<EnvelopeFunction> {
    let samples = sampler::sample(sampler_config)?;
    let cutoff = calibrate_cutoff_directed(&samples, spec, direction, delta)?;
    Ok(
        build_envelope(cutoff, spec, sampler_config.n, sampler_config.m, delta, direction)?
            .with_provenance(sampler_config.b, sampler_config.seed),
    )
}

/// Count-scale envelopes `G_1..G_m`, all calibrated on prefixes of the same
/// Monte Carlo rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeFamily {
    spec: SummaryStatisticSpec,
    n: usize,
    delta: f64,
    b: usize,
    seed: u64,
    cutoffs: Vec<f64>,
    envelopes: Vec<EnvelopeFunction>,
}

/// Monotone count-scale envelopes indexed by the number of nulls `r`.
pub trait CountEnvelopes {
    /// Largest `r` covered.
    fn max_r(&self) -> usize;
    /// Nondecreasing bound on the count of null p-values `<= t` among `r` nulls.
    fn count_monotone(&self, r: usize, t: f64) -> f64;
}

impl EnvelopeFamily {
    pub fn from_cutoffs(
        cutoffs: Vec<f64>,
        spec: &SummaryStatisticSpec,
        n: usize,
        delta: f64,
        b: usize,
        seed: u64,
    ) -> Result<Self> {
        if cutoffs.is_empty() {
            return config("envelope family needs m >= 1");
        }
        let envelopes = cutoffs
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                Ok(build_envelope(c, spec, n, i + 1, delta, Direction::Upper)?
                    .with_provenance(b, seed)
                    .to_count_scale())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec: *spec,
            n,
            delta,
            b,
            seed,
            cutoffs,
            envelopes,
        })
    }

    pub fn m(&self) -> usize {
        self.cutoffs.len()
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn delta(&self) -> f64 {
        self.delta
    }
    pub fn b(&self) -> usize {
        self.b
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn spec(&self) -> &SummaryStatisticSpec {
        &self.spec
    }

    /// `T_r` for `r = 1..=m`.
    pub fn cutoffs(&self) -> &[f64] {
        &self.cutoffs
    }

    /// Count-scale envelope for `r` nulls (`1 <= r <= m`).
    pub fn envelope(&self, r: usize) -> &EnvelopeFunction {
        &self.envelopes[r - 1]
    }

    /// `G_r(t)` on the count scale; `G_0 = 0`.
    pub fn count_eval(&self, r: usize, t: f64) -> f64 {
        if r == 0 {
            0.0
        } else {
            self.envelope(r).eval(t)
        }
    }

    /// The full-size member as a proportion-scale envelope.
    pub fn full(&self) -> EnvelopeFunction {
        self.envelope(self.m()).to_proportion_scale()
    }
}

impl CountEnvelopes for EnvelopeFamily {
    fn max_r(&self) -> usize {
        self.m()
    }
    fn count_monotone(&self, r: usize, t: f64) -> f64 {
        if r == 0 {
            0.0
        } else {
            self.envelope(r).monotone_eval(t)
        }
    }
}

/// Calibrate `T_r` for every prefix length `r = 1..=m` of the rows of
/// `samples`. The first `r` columns of a row are themselves a draw from
/// `P(n, r)`, so one matrix serves the whole family.
pub fn calibrate_family(
    samples: &UniformSampleMatrix,
    spec: &SummaryStatisticSpec,
    delta: f64,
) -> Result<EnvelopeFamily> {
    spec.validate()?;
    check_delta(delta)?;
    let m = samples.cols();
    let rows: Vec<&[f64]> = samples.iter_rows().collect();
    let per_row: Vec<Vec<f64>> = rows
        .par_iter()
        .map(|row| prefix_statistics(row, spec))
        .collect::<Result<_>>()?;
    let mut cutoffs = Vec::with_capacity(m);
    let mut column = vec![0.0; rows.len()];
    for r in 0..m {
        for (dst, stats) in column.iter_mut().zip(&per_row) {
            *dst = stats[r];
        }
        let c = if column.iter().all(|v| v.is_nan()) {
            // Statistic undefined at this size (Berk-Jones with one point).
            f64::INFINITY
        } else {
            quantile_cutoff(&column, delta)?
        };
        cutoffs.push(c);
    }
    let cfg = samples.config();
    EnvelopeFamily::from_cutoffs(cutoffs, spec, cfg.n, delta, cfg.b, cfg.seed)
}

/// Statistic of each prefix `row[..r]`, `r = 1..=m`, with the prefix kept
/// sorted by insertion. Template statistics cache `sigma` per point so each
/// prefix costs one pass without re-evaluating powers.
fn prefix_statistics(row: &[f64], spec: &SummaryStatisticSpec) -> Result<Vec<f64>> {
    let m = row.len();
    let mut out = Vec::with_capacity(m);
    match spec.kind {
        StatisticKind::Ks | StatisticKind::Hc | StatisticKind::Thc => {
            let (ell, r_win, beta) = spec.effective_window();
            let sigma_ell = power_sigma(ell, beta);
            let mut sorted: Vec<(f64, f64)> = Vec::with_capacity(m);
            for (idx, &u) in row.iter().enumerate() {
                let pos = sorted.partition_point(|&(v, _)| v <= u);
                sorted.insert(pos, (u, power_sigma(u, beta)));
                let size = (idx + 1) as f64;
                let mut v = cached_sup_upper(&sorted, ell, r_win, sigma_ell, size);
                if spec.kind == StatisticKind::Ks {
                    v *= size.sqrt();
                }
                out.push(v);
            }
        }
        StatisticKind::Bj | StatisticKind::Pointwise => {
            let mut sorted: Vec<f64> = Vec::with_capacity(m);
            for &u in row {
                let pos = sorted.partition_point(|&v| v <= u);
                sorted.insert(pos, u);
                let v = match evaluate_sorted(&sorted, spec, Direction::Upper) {
                    Ok(v) => v,
                    Err(_) if spec.kind == StatisticKind::Bj && sorted.len() < 2 => f64::NAN,
                    Err(e) => return Err(e),
                };
                out.push(v);
            }
        }
    }
    Ok(out)
}

fn cached_sup_upper(sorted: &[(f64, f64)], ell: f64, r: f64, sigma_ell: f64, m: f64) -> f64 {
    let start = sorted.partition_point(|&(v, _)| v <= ell);
    let mut best = ratio(start as f64 / m - ell, sigma_ell);
    let mut i = start;
    while i < sorted.len() {
        let (u, s) = sorted[i];
        if u > r {
            break;
        }
        let mut j = i + 1;
        while j < sorted.len() && sorted[j].0 == u {
            j += 1;
        }
        let v = ratio(j as f64 / m - u, s);
        if v > best {
            best = v;
        }
        i = j;
    }
    best
}

#[inline]
fn ratio(num: f64, sigma: f64) -> f64 {
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
