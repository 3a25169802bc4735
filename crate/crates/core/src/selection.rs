//! Conformal selection p-values with clipped scores.
//!
//! A test point is a candidate for selection when its (unobserved) outcome
//! exceeds a threshold `c`. The clipped score
//! `V(x, y, c) = M 1{y > c} + c 1{y <= c} - mu_hat(x)` with `M = +inf` is
//! stored as the lexicographic pair `(1{y > c}, tail)`, so no finite `M`
//! has to be chosen.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envelope::EnvelopeFunction;
use crate::error::{contract, input, Result};
use crate::fdp::{fdp_naive, realized_fdp, self_refine, FdpBoundCurve, PValueVector};
use crate::rng::{open_uniform, substream, Domain};

/// Lexicographic clipped score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClippedScore {
    pub indicator: bool,
    pub tail: f64,
}

impl ClippedScore {
    pub fn new(muhat: f64, y: f64, c: f64) -> Self {
        if y > c {
            Self {
                indicator: true,
                tail: -muhat,
            }
        } else {
            Self {
                indicator: false,
                tail: c - muhat,
            }
        }
    }

    /// Score of a test point with the outcome replaced by its threshold.
    pub fn plug_in(muhat: f64, c: f64) -> Self {
        Self::new(muhat, c, c)
    }
}

impl Eq for ClippedScore {}

impl Ord for ClippedScore {
    fn cmp(&self, other: &Self) -> Ordering {
        self.indicator
            .cmp(&other.indicator)
            .then(self.tail.total_cmp(&other.tail))
    }
}

impl PartialOrd for ClippedScore {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub muhat: f64,
    pub y: f64,
    pub c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestPoint {
    pub muhat: f64,
    pub c: f64,
}

/// How calibration scores equal to the test score are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieHandling {
    /// Count only strictly smaller calibration scores.
    #[default]
    Strict,
    /// Add `U_j` times the number of tied calibration scores.
    Randomized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionProblem {
    pub calib: Vec<CalibrationPoint>,
    pub test: Vec<TestPoint>,
    pub test_truth: Option<Vec<f64>>,
    pub seed: u64,
}

impl SelectionProblem {
    pub fn new(calib: Vec<CalibrationPoint>, test: Vec<TestPoint>, seed: u64) -> Result<Self> {
        let problem = Self {
            calib,
            test,
            test_truth: None,
            seed,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn with_truth(mut self, truth: Vec<f64>) -> Result<Self> {
        self.test_truth = Some(truth);
        self.validate()?;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.calib.len()
    }

    pub fn m(&self) -> usize {
        self.test.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.calib.is_empty() {
            return input("selection problem has no calibration points");
        }
        if self.test.is_empty() {
            return input("selection problem has no test points");
        }
        let finite_calib = self
            .calib
            .iter()
            .all(|p| p.muhat.is_finite() && p.y.is_finite() && p.c.is_finite());
        let finite_test = self.test.iter().all(|p| p.muhat.is_finite() && p.c.is_finite());
        if !finite_calib || !finite_test {
            return input("selection data contain non-finite values");
        }
        if let Some(truth) = &self.test_truth {
            if truth.len() != self.test.len() {
                return input(format!(
                    "{} test outcomes for {} test points",
                    truth.len(),
                    self.test.len()
                ));
            }
        }
        Ok(())
    }

    /// `H0 = {j : y_{n+j} <= c_{n+j}}`, when outcomes are known.
    pub fn null_mask(&self) -> Option<Vec<bool>> {
        self.test_truth
            .as_ref()
            .map(|truth| truth.iter().zip(&self.test).map(|(y, t)| *y <= t.c).collect())
    }

    fn sorted_calibration_scores(&self) -> Vec<ClippedScore> {
        let mut scores: Vec<ClippedScore> = self
            .calib
            .iter()
            .map(|p| ClippedScore::new(p.muhat, p.y, p.c))
            .collect();
        scores.sort_unstable();
        scores
    }

    fn pvalues_for(&self, test_scores: &[ClippedScore], ties: TieHandling) -> Result<PValueVector> {
        let sorted = self.sorted_calibration_scores();
        let n1 = (self.n() + 1) as f64;
        let p: Vec<f64> = test_scores
            .par_iter()
            .enumerate()
            .map(|(j, s)| {
                let u = open_uniform(&mut substream(self.seed, Domain::SelectionU, j as u64));
                let below = sorted.partition_point(|v| v < s);
                let count = match ties {
                    TieHandling::Strict => below as f64 + u,
                    TieHandling::Randomized => {
                        let equal = sorted.partition_point(|v| v <= s) - below;
                        below as f64 + u * (equal + 1) as f64
                    }
                };
                count / n1
            })
            .collect();
        let mut pv = PValueVector::new(p)?.with_calibration_size(self.n());
        if let Some(mask) = self.null_mask() {
            pv = pv.with_null_mask(mask)?;
        }
        Ok(pv)
    }
}

/// `p_j = (#{i : V_i < V(x_{n+j}, c_{n+j}, c_{n+j})} + U_j) / (n + 1)`.
pub fn selection_pvalues(problem: &SelectionProblem, ties: TieHandling) -> Result<PValueVector> {
    problem.validate()?;
    let scores: Vec<ClippedScore> = problem
        .test
        .iter()
        .map(|t| ClippedScore::plug_in(t.muhat, t.c))
        .collect();
    problem.pvalues_for(&scores, ties)
}

/// P-values built from the true test outcomes with the same `U_j`.
pub fn oracle_pvalues(problem: &SelectionProblem, ties: TieHandling) -> Result<PValueVector> {
    problem.validate()?;
    let Some(truth) = &problem.test_truth else {
        return contract("oracle p-values need the true test outcomes");
    };
    let scores: Vec<ClippedScore> = problem
        .test
        .iter()
        .zip(truth)
        .map(|(t, &y)| ClippedScore::new(t.muhat, y, t.c))
        .collect();
    problem.pvalues_for(&scores, ties)
}

/// FDP bound `m G(t) / max(1, |R(t)|)` for selection sets `{j : p_j <= t}`,
/// with optional self-refinement of the count bound `m G(t)`.
pub fn fdp_selection(p: &PValueVector, g: &EnvelopeFunction, grid: &[f64], refine: bool) -> Result<FdpBoundCurve> {
    let naive = fdp_naive(p, g, grid)?;
    let mut sorted = p.values().to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let rejections: Vec<usize> = grid.iter().map(|&t| sorted.partition_point(|&v| v <= t)).collect();
    let refined = if refine {
        let gp = g.to_proportion_scale();
        let m = p.len() as f64;
        let counts = self_refine(p, |t| m * gp.eval(t), grid);
        counts
            .iter()
            .zip(&rejections)
            .map(|(b, &r)| (b.min(r as f64) / r.max(1) as f64).clamp(0.0, 1.0))
            .collect()
    } else {
        naive.clone()
    };
    Ok(FdpBoundCurve {
        eval_points: grid.to_vec(),
        rejections,
        bound_naive: naive,
        bound_combined: refined.clone(),
        bound_refined: refined,
        mhat0: None,
        delta: g.delta(),
        fdp_true: realized_fdp(p, grid),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelope::{build_envelope, Direction};
    use crate::fdp::default_grid;
    use crate::statistics::SummaryStatisticSpec;
    use proptest::prelude::*;

    fn calib(points: &[(f64, f64, f64)]) -> Vec<CalibrationPoint> {
        points
            .iter()
            .map(|&(muhat, y, c)| CalibrationPoint { muhat, y, c })
            .collect()
    }

    fn u_of(seed: u64, j: u64) -> f64 {
        open_uniform(&mut substream(seed, Domain::SelectionU, j))
    }

    #[test]
    fn hand_counted_example() {
        let problem = SelectionProblem::new(
            calib(&[(0.0, -1.0, 0.0), (0.0, 0.5, 0.0), (0.0, 2.0, 0.0)]),
            vec![TestPoint { muhat: -0.3, c: 0.0 }],
            11,
        )
        .unwrap();
        let scores = problem.sorted_calibration_scores();
        assert_eq!(
            scores[0],
            ClippedScore {
                indicator: false,
                tail: 0.0
            }
        );
        assert!(scores[1].indicator && scores[2].indicator);
        let test = ClippedScore::plug_in(-0.3, 0.0);
        assert_eq!(
            test,
            ClippedScore {
                indicator: false,
                tail: 0.3
            }
        );
        let p = selection_pvalues(&problem, TieHandling::Strict).unwrap();
        // Strict-less count 1, so p = (1 + U) / 4; U = 0.5 gives 0.375.
        let count = p.values()[0] * 4.0 - u_of(11, 0);
        assert!((count - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_rank_and_validation() {
        let problem = SelectionProblem::new(
            calib(&[(0.0, -1.0, 0.0), (1.0, 3.0, 0.0)]),
            vec![TestPoint { muhat: 5.0, c: 0.0 }],
            3,
        )
        .unwrap();
        let p = selection_pvalues(&problem, TieHandling::Strict).unwrap();
        assert!((p.values()[0] - u_of(3, 0) / 3.0).abs() < 1e-15);
        assert!(SelectionProblem::new(vec![], vec![TestPoint { muhat: 0.0, c: 0.0 }], 0).is_err());
        assert!(oracle_pvalues(&problem, TieHandling::Strict).is_err());
    }

    #[test]
    fn randomized_ties_count_equal_scores() {
        let problem = SelectionProblem::new(
            calib(&[(0.0, -1.0, 0.0), (0.0, -2.0, 0.0), (0.0, 1.0, 0.0)]),
            vec![TestPoint { muhat: 0.0, c: 0.0 }],
            5,
        )
        .unwrap();
        let u = u_of(5, 0);
        let strict = selection_pvalues(&problem, TieHandling::Strict).unwrap();
        let tie = selection_pvalues(&problem, TieHandling::Randomized).unwrap();
        assert!((strict.values()[0] - u / 4.0).abs() < 1e-15);
        assert!((tie.values()[0] - 3.0 * u / 4.0).abs() < 1e-15);
    }

    #[test]
    fn vacuous_envelope_gives_unit_bound() {
        let problem = SelectionProblem::new(
            calib(&[(0.0, -1.0, 0.0), (0.2, 0.5, 0.0), (0.1, 2.0, 0.0)]),
            vec![TestPoint { muhat: -0.3, c: 0.0 }, TestPoint { muhat: 0.4, c: 0.0 }],
            1,
        )
        .unwrap();
        let p = selection_pvalues(&problem, TieHandling::Strict).unwrap();
        let g = build_envelope(
            f64::INFINITY,
            &SummaryStatisticSpec::thc_default(),
            3,
            2,
            0.1,
            Direction::Upper,
        )
        .unwrap();
        let curve = fdp_selection(&p, &g, &default_grid(&p, 16), true).unwrap();
        assert!(curve.bound_naive.iter().all(|&b| b == 1.0));
        assert!(curve.bound_combined.iter().zip(&curve.bound_naive).all(|(c, n)| c <= n));
    }

    #[test]
    fn clipped_score_is_monotone_in_outcome() {
        let (mu, c) = (0.3, 1.0);
        let ys = [-5.0, 0.0, 1.0, 1.0 + 1e-9, 7.0];
        for w in ys.windows(2) {
            assert!(ClippedScore::new(mu, w[0], c) <= ClippedScore::new(mu, w[1], c));
        }
    }

    prop_compose! {
        fn arb_problem()(n in 1usize..25, m in 1usize..15, seed in any::<u64>())
            (calib in prop::collection::vec((-2.0f64..2.0, -3.0f64..3.0, -1.0f64..1.0), n),
             test in prop::collection::vec((-2.0f64..2.0, -1.0f64..1.0, -3.0f64..3.0), m),
             seed in Just(seed)) -> SelectionProblem {
            let c = calib.into_iter().map(|(muhat, y, c)| CalibrationPoint { muhat, y, c }).collect();
            let t: Vec<TestPoint> = test.iter().map(|&(muhat, c, _)| TestPoint { muhat, c }).collect();
            let truth = test.iter().map(|&(_, _, y)| y).collect();
            SelectionProblem::new(c, t, seed).unwrap().with_truth(truth).unwrap()
        }
    }

    proptest! {
        #[test]
        fn oracle_dominates_null_rejections(problem in arb_problem()) {
            let p = selection_pvalues(&problem, TieHandling::Strict).unwrap();
            let star = oracle_pvalues(&problem, TieHandling::Strict).unwrap();
            let mask = problem.null_mask().unwrap();
            for (j, &null) in mask.iter().enumerate() {
                if null {
                    prop_assert_eq!(p.values()[j], star.values()[j]);
                } else {
                    prop_assert!(star.values()[j] >= p.values()[j]);
                }
            }
            let mut points: Vec<f64> = p.values().iter().chain(star.values()).copied().collect();
            points.push(0.0);
            points.push(1.0);
            for &t in &points {
                let oracle = star.values().iter().filter(|&&v| v <= t).count();
                let false_disc = (0..problem.m()).filter(|&j| mask[j] && p.values()[j] <= t).count();
                prop_assert!(oracle >= false_disc);
            }
        }

        #[test]
        fn score_order_is_monotone(mu in -3.0f64..3.0, c in -2.0f64..2.0, y1 in -5.0f64..5.0, y2 in -5.0f64..5.0) {
            let (lo, hi) = if y1 <= y2 { (y1, y2) } else { (y2, y1) };
            prop_assert!(ClippedScore::new(mu, lo, c) <= ClippedScore::new(mu, hi, c));
        }
    }
}
