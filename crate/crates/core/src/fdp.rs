//! Simultaneous FDP bounds for threshold rejection sets `R(t) = {j : p_j <= t}`.
//!
//! Three bounds are reported per threshold:
//!
//! - naive: an envelope on the count of null p-values below `t`, divided by
//!   `max(1, |R(t)|)`;
//! - refined: the same count bound after self-refinement (false discoveries
//!   can grow no faster than discoveries);
//! - combined: self-refinement applied to `sup_{k <= m0_hat} G_k(t)`, where
//!   `m0_hat` is a high-probability upper bound on the number of nulls.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::envelope::{CountEnvelopes, Direction, EnvelopeFamily, EnvelopeFunction};
use crate::error::{contract, input, Error, Result};
use crate::rng::{substream, Domain};

/// Number of points in the uniform part of the default evaluation grid.
pub const DEFAULT_GRID_POINTS: usize = 512;

/// Offset used to break exact ties when jittering is requested.
pub const JITTER_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PValueVector {
    p: Vec<f64>,
    null_mask: Option<Vec<bool>>,
    n: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TiePolicy {
    /// Exact duplicates are an error.
    #[default]
    Reject,
    /// Break ties with `+/- 1e-12` offsets in a seeded random order.
    Jitter { seed: u64 },
}

impl PValueVector {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return input("p-value vector is empty");
        }
        if let Some((i, v)) = p.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return input(format!("p-value {v} at index {i} outside [0, 1]"));
        }
        Ok(Self {
            p,
            null_mask: None,
            n: None,
        })
    }

    pub fn with_null_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.p.len() {
            return input(format!(
                "null mask has {} entries for {} p-values",
                mask.len(),
                self.p.len()
            ));
        }
        self.null_mask = Some(mask);
        Ok(self)
    }

    /// Record the calibration size the p-values were built with.
    pub fn with_calibration_size(mut self, n: usize) -> Self {
        self.n = Some(n);
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.p
    }
    pub fn null_mask(&self) -> Option<&[bool]> {
        self.null_mask.as_deref()
    }
    pub fn calibration_size(&self) -> Option<usize> {
        self.n
    }
    pub fn len(&self) -> usize {
        self.p.len()
    }
    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    /// True number of nulls, when the mask is known.
    pub fn m0(&self) -> Option<usize> {
        self.null_mask.as_ref().map(|m| m.iter().filter(|&&b| b).count())
    }

    /// Apply the tie policy: reject duplicates or jitter them apart.
    pub fn resolve_ties(mut self, policy: TiePolicy) -> Result<Self> {
        let mut order: Vec<usize> = (0..self.p.len()).collect();
        order.sort_by(|&a, &b| self.p[a].total_cmp(&self.p[b]));
        let has_ties = order.windows(2).any(|w| self.p[w[0]] == self.p[w[1]]);
        if !has_ties {
            return Ok(self);
        }
        let seed = match policy {
            TiePolicy::Reject => {
                let w = order.windows(2).find(|w| self.p[w[0]] == self.p[w[1]]).unwrap();
                return input(format!(
                    "duplicate p-value {} at indices {} and {}; ties are excluded (use jitter to break them)",
                    self.p[w[0]], w[0], w[1]
                ));
            }
            TiePolicy::Jitter { seed } => seed,
        };
        let mut rng = substream(seed, Domain::Jitter, 0);
        let mut start = 0;
        while start < order.len() {
            let v = self.p[order[start]];
            let mut end = start + 1;
            while end < order.len() && self.p[order[end]] == v {
                end += 1;
            }
            let group = &mut order[start..end];
            if group.len() > 1 {
                group.shuffle(&mut rng);
                let center = (group.len() - 1) as f64 / 2.0;
                for (k, &idx) in group.iter().enumerate() {
                    self.p[idx] = (v + (k as f64 - center) * JITTER_EPS).clamp(0.0, 1.0);
                }
            }
            start = end;
        }
        // Offsets must not reorder distinct values or leave ties behind.
        let mut check = self.p.clone();
        check.sort_by(f64::total_cmp);
        if check.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Numeric("jitter could not separate tied p-values".into()));
        }
        Ok(self)
    }

    pub(crate) fn sorted(&self) -> Vec<f64> {
        let mut v = self.p.clone();
        v.sort_unstable_by(f64::total_cmp);
        v
    }
}

/// Bounds on `FDP(t)` along a grid of thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdpBoundCurve {
    pub eval_points: Vec<f64>,
    pub rejections: Vec<usize>,
    pub bound_naive: Vec<f64>,
    pub bound_refined: Vec<f64>,
    pub bound_combined: Vec<f64>,
    pub mhat0: Option<usize>,
    pub delta: f64,
    pub fdp_true: Option<Vec<f64>>,
}

impl FdpBoundCurve {
    pub fn len(&self) -> usize {
        self.eval_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eval_points.is_empty()
    }

    /// Whether `bound_combined >= FDP` at every evaluation point; `None`
    /// without ground truth.
    pub fn covers_truth(&self) -> Option<bool> {
        self.fdp_true
            .as_ref()
            .map(|truth| truth.iter().zip(&self.bound_combined).all(|(f, b)| *b >= *f - 1e-12))
    }

    /// Index of the evaluation point `t` (exact match).
    pub fn position(&self, t: f64) -> Option<usize> {
        self.eval_points.iter().position(|&x| x == t)
    }
}

/// The observed p-values together with `points` equally spaced thresholds on
/// `[0, 1]`, sorted and deduplicated.
pub fn default_grid(p: &PValueVector, points: usize) -> Vec<f64> {
    let mut grid: Vec<f64> = p.values().to_vec();
    if points >= 2 {
        grid.extend((0..points).map(|i| i as f64 / (points - 1) as f64));
    } else if points == 1 {
        grid.push(1.0);
    }
    grid.sort_unstable_by(f64::total_cmp);
    grid.dedup();
    grid
}

fn count_le(sorted: &[f64], t: f64) -> usize {
    sorted.partition_point(|&v| v <= t)
}

/// Realized FDP at each threshold; needs the null mask.
pub fn realized_fdp(p: &PValueVector, grid: &[f64]) -> Option<Vec<f64>> {
    let mask = p.null_mask()?;
    let mut all = p.sorted();
    let mut nulls: Vec<f64> = p
        .values()
        .iter()
        .zip(mask)
        .filter(|(_, &b)| b)
        .map(|(&v, _)| v)
        .collect();
    nulls.sort_unstable_by(f64::total_cmp);
    all.shrink_to_fit();
    Some(
        grid.iter()
            .map(|&t| {
                let r = count_le(&all, t);
                count_le(&nulls, t) as f64 / r.max(1) as f64
            })
            .collect(),
    )
}

fn check_envelope_matches(p: &PValueVector, g: &EnvelopeFunction) -> Result<()> {
    if g.direction() != Direction::Upper {
        return contract("FDP bounds need an upper envelope");
    }
    if g.m() != p.len() {
        return contract(format!(
            "envelope calibrated for m = {} but there are {} p-values",
            g.m(),
            p.len()
        ));
    }
    if let Some(n) = p.calibration_size() {
        if n != g.n() {
            return contract(format!(
                "envelope calibrated for n = {} but p-values use n = {n}",
                g.n()
            ));
        }
    }
    Ok(())
}

/// `m G(t) / max(1, |R(t)|)` clipped to `[0, 1]`.
pub fn fdp_naive(p: &PValueVector, g: &EnvelopeFunction, grid: &[f64]) -> Result<Vec<f64>> {
    check_envelope_matches(p, g)?;
    let g = g.to_proportion_scale();
    let sorted = p.sorted();
    let m = p.len() as f64;
    Ok(grid
        .iter()
        .map(|&t| {
            let r = count_le(&sorted, t).max(1) as f64;
            (m * g.eval(t) / r).clamp(0.0, 1.0)
        })
        .collect())
}

/// Self-refined count bound
/// `B*(t) = min(|R(t)|, B(t), min_{j : p_j <= t} {B(p_j) + |R(t)| - |R(p_j)|})`.
///
/// Linear after sorting: a running minimum of `B(p_(j)) - |R(p_(j))|` over
/// the sorted p-values. Returns 0 where nothing is rejected.
pub fn self_refine<F: Fn(f64) -> f64>(p: &PValueVector, bound: F, grid: &[f64]) -> Vec<f64> {
    let sorted = p.sorted();
    // prefix_min[i] = min over the first i+1 sorted p-values of B(p) - |R(p)|.
    let mut prefix_min = Vec::with_capacity(sorted.len());
    let mut running = f64::INFINITY;
    for &v in &sorted {
        let slack = bound(v) - count_le(&sorted, v) as f64;
        running = running.min(slack);
        prefix_min.push(running);
    }
    grid.iter()
        .map(|&t| {
            let r = count_le(&sorted, t);
            if r == 0 {
                return 0.0;
            }
            let rf = r as f64;
            let best = (rf + prefix_min[r - 1]).min(bound(t)).min(rf);
            best.max(0.0)
        })
        .collect()
}

/// Largest `r` in `0..=m` with `#{p_j > t} >= r - G_r(t)` for all `t`, using
/// the monotone count envelopes. Checking `t = 0` and each p-value suffices:
/// the survival count is constant between p-values while `G_r` only grows.
pub fn estimate_m0<E: CountEnvelopes + ?Sized>(p: &PValueVector, family: &E) -> Result<usize> {
    let m = p.len();
    if family.max_r() < m {
        return contract(format!(
            "envelope family covers r <= {} but there are {m} p-values",
            family.max_r()
        ));
    }
    let sorted = p.sorted();
    let mut checks: Vec<(f64, f64)> = Vec::with_capacity(m + 1);
    checks.push((0.0, (m - count_le(&sorted, 0.0)) as f64));
    for &v in &sorted {
        checks.push((v, (m - count_le(&sorted, v)) as f64));
    }
    checks.dedup_by(|a, b| a.0 == b.0);
    for r in (1..=m).rev() {
        let rf = r as f64;
        let ok = checks
            .iter()
            .all(|&(t, survival)| survival + 1e-9 >= rf - family.count_monotone(r, t));
        if ok {
            return Ok(r);
        }
    }
    Ok(0)
}

/// `sup_{k <= kmax} G_k(t)` with monotone count envelopes.
fn sup_family<E: CountEnvelopes + ?Sized>(family: &E, kmax: usize, t: f64) -> f64 {
    (1..=kmax).map(|k| family.count_monotone(k, t)).fold(0.0, f64::max)
}

/// Naive, refined and combined bounds on one grid.
pub fn fdp_combined(p: &PValueVector, family: &EnvelopeFamily, grid: &[f64]) -> Result<FdpBoundCurve> {
    if family.m() != p.len() {
        return contract(format!(
            "envelope family calibrated for m = {} but there are {} p-values",
            family.m(),
            p.len()
        ));
    }
    if let Some(n) = p.calibration_size() {
        if n != family.n() {
            return contract(format!(
                "envelope family calibrated for n = {} but p-values use n = {n}",
                family.n()
            ));
        }
    }
    fdp_combined_with(p, family, family.delta(), grid)
}

/// [`fdp_combined`] for any monotone count-envelope family.
pub fn fdp_combined_with<E: CountEnvelopes + ?Sized>(
    p: &PValueVector,
    family: &E,
    delta: f64,
    grid: &[f64],
) -> Result<FdpBoundCurve> {
    let m = p.len();
    let mhat0 = estimate_m0(p, family)?;
    let sorted = p.sorted();

    // Evaluate both sups once at every point either bound touches.
    let mut points: Vec<f64> = grid.iter().copied().chain(sorted.iter().copied()).collect();
    points.sort_unstable_by(f64::total_cmp);
    points.dedup();
    let full: Vec<f64> = points.iter().map(|&t| sup_family(family, m, t)).collect();
    let reduced: Vec<f64> = points.iter().map(|&t| sup_family(family, mhat0, t)).collect();
    let lookup = |vals: &[f64], t: f64| {
        let i = points.partition_point(|&x| x < t);
        vals[i]
    };

    let refined_counts = self_refine(p, |t| lookup(&full, t), grid);
    let combined_counts = self_refine(p, |t| lookup(&reduced, t), grid);

    let mut rejections = Vec::with_capacity(grid.len());
    let mut naive = Vec::with_capacity(grid.len());
    let mut refined = Vec::with_capacity(grid.len());
    let mut combined = Vec::with_capacity(grid.len());
    for (i, &t) in grid.iter().enumerate() {
        let r = count_le(&sorted, t);
        let denom = r.max(1) as f64;
        rejections.push(r);
        naive.push((lookup(&full, t) / denom).clamp(0.0, 1.0));
        refined.push((refined_counts[i].min(r as f64) / denom).clamp(0.0, 1.0));
        combined.push((combined_counts[i].min(r as f64) / denom).clamp(0.0, 1.0));
    }
    Ok(FdpBoundCurve {
        eval_points: grid.to_vec(),
        rejections,
        bound_naive: naive,
        bound_refined: refined,
        bound_combined: combined,
        mhat0: Some(mhat0),
        delta,
        fdp_true: realized_fdp(p, grid),
    })
}
