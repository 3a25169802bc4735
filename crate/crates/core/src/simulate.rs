//! Synthetic experiments with known null sets.
//!
//! - Outlier detection: inliers `X = V + W`, outliers `X = sqrt(1 + a) V + W`
//!   with `V ~ N(0, I)` and `W` uniform over a fixed set of atoms in
//!   `[-3, 3]^dim`. The score is the negative mean distance to the `k` nearest
//!   training points, so calibration and inlier test scores are exchangeable.
//! - Selection: `y = <w, x> + noise` with a linear predictor fit on a separate
//!   training split and thresholds `c` from a fixed rule.
//!
//! Each trial draws from its own substream, so trials can run in any order.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{bh_threshold, posthoc_bh};
use crate::envelope::{EnvelopeFamily, EnvelopeFunction};
use crate::error::{config, Error, Result};
use crate::fdp::{default_grid, fdp_combined, FdpBoundCurve, PValueVector, DEFAULT_GRID_POINTS};
use crate::rng::{open_uniform, substream, Domain};
use crate::sampler::rank_sorted;
use crate::selection::{fdp_selection, selection_pvalues, CalibrationPoint, SelectionProblem, TestPoint, TieHandling};

fn default_dim() -> usize {
    50
}
fn default_n() -> usize {
    200
}
fn default_purity() -> f64 {
    0.9
}
fn default_a() -> f64 {
    0.2
}
fn default_support() -> usize {
    50
}
fn default_k() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierSimConfig {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_n")]
    pub n_train: usize,
    #[serde(default = "default_n")]
    pub n_calib: usize,
    #[serde(default = "default_n")]
    pub n_test: usize,
    #[serde(default = "default_purity")]
    pub purity: f64,
    #[serde(default = "default_a")]
    pub a: f64,
    #[serde(default = "default_support")]
    pub support_size: usize,
    #[serde(default = "default_k")]
    pub k_neighbors: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for OutlierSimConfig {
    fn default() -> Self {
        Self {
            dim: default_dim(),
            n_train: default_n(),
            n_calib: default_n(),
            n_test: default_n(),
            purity: default_purity(),
            a: default_a(),
            support_size: default_support(),
            k_neighbors: default_k(),
            seed: 0,
        }
    }
}

impl OutlierSimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.support_size == 0 {
            return config("outlier simulation needs dim >= 1 and support_size >= 1");
        }
        if self.n_calib == 0 || self.n_test == 0 {
            return config("outlier simulation needs n_calib >= 1 and n_test >= 1");
        }
        if self.k_neighbors == 0 || self.n_train < self.k_neighbors {
            return config(format!(
                "k-NN score needs 1 <= k <= n_train (k = {}, n_train = {})",
                self.k_neighbors, self.n_train
            ));
        }
        if !(0.0..=1.0).contains(&self.purity) {
            return config(format!("purity must be in [0, 1], got {}", self.purity));
        }
        if !(self.a >= 0.0 && self.a.is_finite()) {
            return config(format!("signal strength must be finite and >= 0, got {}", self.a));
        }
        Ok(())
    }

    /// Number of inliers among the test points.
    pub fn n_inliers(&self) -> usize {
        ((self.purity * self.n_test as f64).round() as usize).min(self.n_test)
    }
}

/// One simulated outlier-detection data set.
#[derive(Debug, Clone, PartialEq)]
pub struct OutlierData {
    /// Training features, row-major `n_train x dim`.
    pub train: Vec<f64>,
    pub calib_scores: Vec<f64>,
    pub test_scores: Vec<f64>,
    pub null_mask: Vec<bool>,
    pub pvalues: PValueVector,
}

/// Outlier generator with its atoms fixed.
#[derive(Debug, Clone)]
pub struct OutlierSim {
    config: OutlierSimConfig,
    atoms: Vec<f64>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

impl OutlierSim {
    pub fn new(config: OutlierSimConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = substream(config.seed, Domain::OutlierAtoms, 0);
        let atoms = (0..config.support_size * config.dim)
            .map(|_| rng.random_range(-3.0..=3.0))
            .collect();
        Ok(Self { config, atoms })
    }

    pub fn config(&self) -> &OutlierSimConfig {
        &self.config
    }

    fn draw(&self, rng: &mut ChaCha8Rng, a: f64, out: &mut Vec<f64>) {
        let d = self.config.dim;
        let scale = (1.0 + a).sqrt();
        let atom = rng.random_range(0..self.config.support_size);
        let w = &self.atoms[atom * d..(atom + 1) * d];
        out.extend(w.iter().map(|wi| scale * normal(rng) + wi));
    }

    /// Negative mean Euclidean distance to the `k` nearest training points.
    fn score(&self, train: &[f64], x: &[f64], scratch: &mut Vec<f64>) -> f64 {
        let d = self.config.dim;
        scratch.clear();
        scratch.extend(
            train
                .chunks_exact(d)
                .map(|row| row.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()),
        );
        let k = self.config.k_neighbors;
        let (nearest, kth, _) = scratch.select_nth_unstable_by(k - 1, f64::total_cmp);
        let total: f64 = nearest.iter().sum::<f64>() + *kth;
        -total / k as f64
    }

    /// Data set for `trial`; pure given the config and the trial index.
    pub fn generate(&self, trial: u64) -> Result<OutlierData> {
        let c = &self.config;
        let d = c.dim;
        let mut rng = substream(c.seed, Domain::OutlierTrial, trial);
        let mut train = Vec::with_capacity(c.n_train * d);
        for _ in 0..c.n_train {
            self.draw(&mut rng, 0.0, &mut train);
        }
        let mut scratch = Vec::with_capacity(c.n_train);
        let mut x = Vec::with_capacity(d);
        let mut calib_scores = Vec::with_capacity(c.n_calib);
        for _ in 0..c.n_calib {
            x.clear();
            self.draw(&mut rng, 0.0, &mut x);
            calib_scores.push(self.score(&train, &x, &mut scratch));
        }
        let n_in = c.n_inliers();
        let mut test_scores = Vec::with_capacity(c.n_test);
        let mut null_mask = Vec::with_capacity(c.n_test);
        for j in 0..c.n_test {
            let inlier = j < n_in;
            x.clear();
            self.draw(&mut rng, if inlier { 0.0 } else { c.a }, &mut x);
            test_scores.push(self.score(&train, &x, &mut scratch));
            null_mask.push(inlier);
        }
        let mut sorted = calib_scores.clone();
        sorted.sort_unstable_by(f64::total_cmp);
        let n1 = (c.n_calib + 1) as f64;
        let p: Vec<f64> = test_scores
            .iter()
            .map(|&s| (rank_sorted(&sorted, s) as f64 + open_uniform(&mut rng)) / n1)
            .collect();
        let pvalues = PValueVector::new(p)?
            .with_calibration_size(c.n_calib)
            .with_null_mask(null_mask.clone())?;
        Ok(OutlierData {
            train,
            calib_scores,
            test_scores,
            null_mask,
            pvalues,
        })
    }
}

/// Convenience wrapper around [`OutlierSim`].
pub fn gen_outlier_data(config: &OutlierSimConfig, trial: u64) -> Result<OutlierData> {
    OutlierSim::new(config.clone())?.generate(trial)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThresholdRule {
    Constant {
        c: f64,
    },
    /// `c = intercept + slope * x_0`.
    FeatureFunction {
        intercept: f64,
        slope: f64,
    },
}

impl ThresholdRule {
    fn apply(&self, x: &[f64]) -> f64 {
        match *self {
            ThresholdRule::Constant { c } => c,
            ThresholdRule::FeatureFunction { intercept, slope } => intercept + slope * x[0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    /// Least squares with intercept on the training split.
    #[default]
    Ols,
    /// The true regression function.
    Oracle,
}

fn default_sel_dim() -> usize {
    5
}
fn default_noise() -> f64 {
    1.0
}
fn default_rule() -> ThresholdRule {
    ThresholdRule::Constant { c: 0.0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSimConfig {
    #[serde(default = "default_n")]
    pub n_train: usize,
    #[serde(default = "default_n")]
    pub n_calib: usize,
    #[serde(default = "default_n")]
    pub n_test: usize,
    #[serde(default = "default_sel_dim")]
    pub dim: usize,
    #[serde(default = "default_noise")]
    pub noise_sd: f64,
    #[serde(default = "default_rule")]
    pub threshold_rule: ThresholdRule,
    #[serde(default)]
    pub predictor: PredictorKind,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SelectionSimConfig {
    fn default() -> Self {
        Self {
            n_train: default_n(),
            n_calib: default_n(),
            n_test: default_n(),
            dim: default_sel_dim(),
            noise_sd: default_noise(),
            threshold_rule: default_rule(),
            predictor: PredictorKind::Ols,
            seed: 0,
        }
    }
}

impl SelectionSimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_calib == 0 || self.n_test == 0 || self.dim == 0 {
            return config("selection simulation needs n_calib, n_test and dim >= 1");
        }
        if self.predictor == PredictorKind::Ols && self.n_train <= self.dim {
            return config(format!(
                "least squares needs n_train > dim (n_train = {}, dim = {})",
                self.n_train, self.dim
            ));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return config(format!("noise_sd must be finite and >= 0, got {}", self.noise_sd));
        }
        Ok(())
    }
}

/// Selection generator with the regression weights fixed.
#[derive(Debug, Clone)]
pub struct SelectionSim {
    config: SelectionSimConfig,
    weights: Vec<f64>,
}

impl SelectionSim {
    pub fn new(config: SelectionSimConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = substream(config.seed, Domain::SelectionWeights, 0);
        let weights = (0..config.dim).map(|_| normal(&mut rng)).collect();
        Ok(Self { config, weights })
    }

    pub fn config(&self) -> &SelectionSimConfig {
        &self.config
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> (Vec<f64>, f64) {
        let x: Vec<f64> = (0..self.config.dim).map(|_| normal(rng)).collect();
        let mean: f64 = x.iter().zip(&self.weights).map(|(a, b)| a * b).sum();
        (x, mean + self.config.noise_sd * normal(rng))
    }

    fn fit(&self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let d = self.config.dim;
        if self.config.predictor == PredictorKind::Oracle {
            let mut coef = vec![0.0];
            coef.extend_from_slice(&self.weights);
            return Ok(coef);
        }
        let n = self.config.n_train;
        let mut design = DMatrix::<f64>::zeros(n, d + 1);
        let mut target = DVector::<f64>::zeros(n);
        for i in 0..n {
            let (x, y) = self.draw(rng);
            design[(i, 0)] = 1.0;
            for (k, v) in x.iter().enumerate() {
                design[(i, k + 1)] = *v;
            }
            target[i] = y;
        }
        let coef = design
            .svd(true, true)
            .solve(&target, 1e-12)
            .map_err(|e| Error::Numeric(format!("least squares fit failed: {e}")))?;
        Ok(coef.iter().copied().collect())
    }

    /// Selection problem with true test outcomes for `trial`.
    pub fn generate(&self, trial: u64) -> Result<SelectionProblem> {
        let c = &self.config;
        let mut rng = substream(c.seed, Domain::SelectionTrial, trial);
        let coef = self.fit(&mut rng)?;
        let predict = |x: &[f64]| coef[0] + x.iter().zip(&coef[1..]).map(|(a, b)| a * b).sum::<f64>();
        let calib = (0..c.n_calib)
            .map(|_| {
                let (x, y) = self.draw(&mut rng);
                CalibrationPoint {
                    muhat: predict(&x),
                    y,
                    c: c.threshold_rule.apply(&x),
                }
            })
            .collect();
        let mut test = Vec::with_capacity(c.n_test);
        let mut truth = Vec::with_capacity(c.n_test);
        for _ in 0..c.n_test {
            let (x, y) = self.draw(&mut rng);
            test.push(TestPoint {
                muhat: predict(&x),
                c: c.threshold_rule.apply(&x),
            });
            truth.push(y);
        }
        // The U_j stream is keyed by a per-trial seed so trials differ.
        let u_seed = rng.random::<u64>();
        SelectionProblem::new(calib, test, u_seed)?.with_truth(truth)
    }
}

/// Convenience wrapper around [`SelectionSim`].
pub fn gen_selection_data(config: &SelectionSimConfig, trial: u64) -> Result<SelectionProblem> {
    SelectionSim::new(config.clone())?.generate(trial)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierCoverageSummary {
    pub trials: usize,
    pub covered: usize,
    pub coverage: f64,
    pub mhat0_valid: usize,
    pub mean_mhat0: f64,
    pub mean_m0: f64,
}

/// Per-trial outcome of the outlier experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct OutlierTrial {
    pub curve: FdpBoundCurve,
    pub m0: usize,
}

/// Run `trials` outlier experiments against one envelope family (calibrated
/// independently of the data).
pub fn outlier_trials(config: &OutlierSimConfig, family: &EnvelopeFamily, trials: usize) -> Result<Vec<OutlierTrial>> {
    let sim = OutlierSim::new(config.clone())?;
    (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let data = sim.generate(trial)?;
            let grid = default_grid(&data.pvalues, DEFAULT_GRID_POINTS);
            let curve = fdp_combined(&data.pvalues, family, &grid)?;
            Ok(OutlierTrial {
                curve,
                m0: data.pvalues.m0().unwrap_or(0),
            })
        })
        .collect()
}

pub fn summarize_outlier(results: &[OutlierTrial]) -> OutlierCoverageSummary {
    let trials = results.len();
    let covered = results.iter().filter(|r| r.curve.covers_truth() == Some(true)).count();
    let mhat0_valid = results.iter().filter(|r| r.curve.mhat0.unwrap_or(0) >= r.m0).count();
    let denom = trials.max(1) as f64;
    OutlierCoverageSummary {
        trials,
        covered,
        coverage: covered as f64 / denom,
        mhat0_valid,
        mean_mhat0: results.iter().map(|r| r.curve.mhat0.unwrap_or(0) as f64).sum::<f64>() / denom,
        mean_m0: results.iter().map(|r| r.m0 as f64).sum::<f64>() / denom,
    }
}

pub fn outlier_coverage(
    config: &OutlierSimConfig,
    family: &EnvelopeFamily,
    trials: usize,
) -> Result<OutlierCoverageSummary> {
    Ok(summarize_outlier(&outlier_trials(config, family, trials)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionCoverageSummary {
    pub trials: usize,
    pub covered: usize,
    pub coverage: f64,
}

/// Run `trials` selection experiments against one envelope for `P(n, m)`.
pub fn selection_trials(
    config: &SelectionSimConfig,
    envelope: &EnvelopeFunction,
    trials: usize,
    refine: bool,
) -> Result<Vec<FdpBoundCurve>> {
    let sim = SelectionSim::new(config.clone())?;
    (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let problem = sim.generate(trial)?;
            let p = selection_pvalues(&problem, TieHandling::Strict)?;
            let grid = default_grid(&p, DEFAULT_GRID_POINTS);
            fdp_selection(&p, envelope, &grid, refine)
        })
        .collect()
}

pub fn selection_coverage(
    config: &SelectionSimConfig,
    envelope: &EnvelopeFunction,
    trials: usize,
    refine: bool,
) -> Result<SelectionCoverageSummary> {
    let curves = selection_trials(config, envelope, trials, refine)?;
    let covered = curves.iter().filter(|c| c.covers_truth() == Some(true)).count();
    Ok(SelectionCoverageSummary {
        trials,
        covered,
        coverage: covered as f64 / trials.max(1) as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BhDemoTrial {
    /// Post hoc BH level.
    pub alpha: f64,
    pub threshold: f64,
    pub rejections: usize,
    pub fdp: f64,
    /// Simultaneous bound at the selected threshold.
    pub bound: f64,
    /// Whether the bound dominates the realized FDP everywhere.
    pub simultaneous_covered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BhDemoSummary {
    pub trials: usize,
    /// Trials where the realized FDP exceeds the post hoc level.
    pub posthoc_fail: usize,
    /// Trials where the bound at the selected threshold dominates the FDP.
    pub bound_dominates: usize,
    pub simultaneous_covered: usize,
    pub records: Vec<BhDemoTrial>,
}

/// Post hoc BH demonstration: raise the BH level by `step` until at least
/// `min_fraction` of the test points are selected, then compare the chosen
/// level and the simultaneous bound against the realized FDP.
pub fn bh_demo(
    config: &SelectionSimConfig,
    envelope: &EnvelopeFunction,
    trials: usize,
    step: f64,
    min_fraction: f64,
) -> Result<BhDemoSummary> {
    let sim = SelectionSim::new(config.clone())?;
    let records: Vec<BhDemoTrial> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let problem = sim.generate(trial)?;
            let p = selection_pvalues(&problem, TieHandling::Strict)?;
            let chosen = posthoc_bh(&p, step, min_fraction)?;
            let mut grid = default_grid(&p, DEFAULT_GRID_POINTS);
            let t = chosen.result.threshold;
            if grid.binary_search_by(|v| v.total_cmp(&t)).is_err() {
                grid.push(t);
                grid.sort_unstable_by(f64::total_cmp);
            }
            let curve = fdp_selection(&p, envelope, &grid, true)?;
            let i = curve.position(t).expect("threshold is on the grid");
            let fdp = curve.fdp_true.as_ref().expect("simulation has ground truth")[i];
            Ok(BhDemoTrial {
                alpha: chosen.alpha,
                threshold: t,
                rejections: chosen.result.rejections,
                fdp,
                bound: curve.bound_combined[i],
                simultaneous_covered: curve.covers_truth() == Some(true),
            })
        })
        .collect::<Result<_>>()?;
    Ok(BhDemoSummary {
        trials,
        posthoc_fail: records.iter().filter(|r| r.fdp > r.alpha).count(),
        bound_dominates: records.iter().filter(|r| r.bound >= r.fdp).count(),
        simultaneous_covered: records.iter().filter(|r| r.simultaneous_covered).count(),
        records,
    })
}

/// Mean realized FDP at the BH threshold over outlier trials.
pub fn outlier_bh_fdp(config: &OutlierSimConfig, alpha: f64, trials: usize) -> Result<f64> {
    let sim = OutlierSim::new(config.clone())?;
    let fdps: Vec<f64> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let data = sim.generate(trial)?;
            let bh = bh_threshold(&data.pvalues, alpha)?;
            let false_disc = data
                .pvalues
                .values()
                .iter()
                .zip(&data.null_mask)
                .filter(|(p, null)| **null && bh.rejections > 0 && **p <= bh.threshold)
                .count();
            Ok(false_disc as f64 / bh.rejections.max(1) as f64)
        })
        .collect::<Result<_>>()?;
    Ok(fdps.iter().sum::<f64>() / trials.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_outlier() -> OutlierSimConfig {
        OutlierSimConfig {
            dim: 4,
            n_train: 30,
            n_calib: 40,
            n_test: 20,
            support_size: 5,
            seed: 9,
            ..Default::default()
        }
    }

    #[test]
    fn outlier_generation_is_reproducible() {
        let cfg = small_outlier();
        let a = gen_outlier_data(&cfg, 3).unwrap();
        let b = gen_outlier_data(&cfg, 3).unwrap();
        let c = gen_outlier_data(&cfg, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.test_scores, c.test_scores);
        assert_eq!(a.null_mask.iter().filter(|&&x| x).count(), 18);
        assert_eq!(a.train.len(), 30 * 4);
        assert!(a.pvalues.values().iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn outlier_config_errors() {
        let cfg = OutlierSimConfig {
            n_train: 3,
            ..small_outlier()
        };
        assert!(matches!(OutlierSim::new(cfg), Err(Error::Config(_))));
        let cfg = OutlierSimConfig {
            purity: 1.5,
            ..small_outlier()
        };
        assert!(OutlierSim::new(cfg).is_err());
    }

    #[test]
    fn knn_score_matches_brute_force() {
        let sim = OutlierSim::new(small_outlier()).unwrap();
        let data = sim.generate(0).unwrap();
        let x = &data.train[0..4];
        let mut dists: Vec<f64> = data
            .train
            .chunks(4)
            .map(|r| r.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .collect();
        dists.sort_by(f64::total_cmp);
        let expected = -dists[..5].iter().sum::<f64>() / 5.0;
        let mut scratch = Vec::new();
        assert!((sim.score(&data.train, x, &mut scratch) - expected).abs() < 1e-12);
    }

    #[test]
    fn selection_generation() {
        let cfg = SelectionSimConfig {
            n_train: 50,
            n_calib: 30,
            n_test: 20,
            dim: 3,
            seed: 2,
            ..Default::default()
        };
        let a = gen_selection_data(&cfg, 0).unwrap();
        assert_eq!(a, gen_selection_data(&cfg, 0).unwrap());
        assert_eq!(a.n(), 30);
        assert_eq!(a.m(), 20);
        assert!(a.test_truth.is_some());
        let bad = SelectionSimConfig { n_train: 2, ..cfg };
        assert!(SelectionSim::new(bad).is_err());
    }

    #[test]
    fn noiseless_oracle_separates_non_nulls() {
        let cfg = SelectionSimConfig {
            n_calib: 50,
            n_test: 40,
            dim: 2,
            noise_sd: 0.0,
            predictor: PredictorKind::Oracle,
            seed: 4,
            ..Default::default()
        };
        let problem = gen_selection_data(&cfg, 0).unwrap();
        let p = selection_pvalues(&problem, TieHandling::Strict).unwrap();
        let mask = problem.null_mask().unwrap();
        for (pj, null) in p.values().iter().zip(&mask) {
            if !null {
                assert!(*pj < 1.0 / 51.0);
            }
        }
    }

    #[test]
    fn ols_fit_recovers_weights() {
        let cfg = SelectionSimConfig {
            n_train: 400,
            dim: 3,
            noise_sd: 0.1,
            seed: 8,
            ..Default::default()
        };
        let sim = SelectionSim::new(cfg).unwrap();
        let coef = sim.fit(&mut substream(1, Domain::SelectionTrial, 0)).unwrap();
        assert!(coef[0].abs() < 0.05);
        for (c, w) in coef[1..].iter().zip(sim.weights()) {
            assert!((c - w).abs() < 0.05);
        }
    }
}
