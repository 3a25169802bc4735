//! Exact sampling of conformal uniform variables.
//!
//! For `n` calibration and `m` test points, the vector of conformal p-values
//! of the test points has, under exchangeability and no ties, the same law as
//!
//! ```text
//! q_j = (#{i <= n : T_i < T_{n+j}} + U_j) / (n + 1),   j = 1..m
//! ```
//!
//! with `T_1..T_{n+m}` and `U_1..U_m` i.i.d. uniform. That law, `P(n, m)`,
//! does not depend on the data, which is what makes Monte Carlo calibration
//! possible.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::rng::{open_uniform, substream, Domain};

/// Above this calibration size ranks are found by binary search on the
/// sorted calibration draws instead of direct comparison.
const SORTED_RANK_THRESHOLD: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    #[default]
    Conformal,
    /// Independent uniforms; the `n -> infinity` limit of `Conformal`.
    IidUniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "B")]
    pub b: usize,
    pub seed: u64,
    #[serde(default)]
    pub mode: SamplerMode,
}

impl SamplerConfig {
    pub fn conformal(n: usize, m: usize, b: usize, seed: u64) -> Self {
        Self {
            n,
            m,
            b,
            seed,
            mode: SamplerMode::Conformal,
        }
    }

    pub fn iid(m: usize, b: usize, seed: u64) -> Self {
        Self {
            n: 0,
            m,
            b,
            seed,
            mode: SamplerMode::IidUniform,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return config("sampler: m must be at least 1");
        }
        if self.b == 0 {
            return config("sampler: B must be at least 1");
        }
        Ok(())
    }
}

/// `B` rows of `m` draws, stored row-major. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformSampleMatrix {
    values: Vec<f64>,
    config: SamplerConfig,
}

impl UniformSampleMatrix {
    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn rows(&self) -> usize {
        self.config.b
    }

    pub fn cols(&self) -> usize {
        self.config.m
    }

    pub fn row(&self, b: usize) -> &[f64] {
        let m = self.config.m;
        &self.values[b * m..(b + 1) * m]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.config.m)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// Draw `B` independent rows from `P(n, m)` (or i.i.d. uniforms, depending on
/// the configured mode).
pub fn sample(config: &SamplerConfig) -> Result<UniformSampleMatrix> {
    match config.mode {
        SamplerMode::Conformal => sample_conformal(config),
        SamplerMode::IidUniform => sample_iid(config),
    }
}

pub fn sample_conformal(config: &SamplerConfig) -> Result<UniformSampleMatrix> {
    config.validate()?;
    if config.mode != SamplerMode::Conformal {
        return config_err_mode("sample_conformal", config.mode);
    }
    let (n, m) = (config.n, config.m);
    let mut values = vec![0.0; config.b * m];
    values.par_chunks_mut(m).enumerate().for_each_init(
        || Vec::with_capacity(n),
        |scratch, (b, row)| {
            let mut rng = substream(config.seed, Domain::SamplerRow, b as u64);
            fill_conformal_row(n, &mut rng, row, scratch);
        },
    );
    Ok(UniformSampleMatrix {
        values,
        config: *config,
    })
}

pub fn sample_iid(config: &SamplerConfig) -> Result<UniformSampleMatrix> {
    config.validate()?;
    if config.mode != SamplerMode::IidUniform {
        return config_err_mode("sample_iid", config.mode);
    }
    let m = config.m;
    let mut values = vec![0.0; config.b * m];
    values.par_chunks_mut(m).enumerate().for_each(|(b, row)| {
        let mut rng = substream(config.seed, Domain::SamplerRow, b as u64);
        for v in row.iter_mut() {
            *v = open_uniform(&mut rng);
        }
    });
    Ok(UniformSampleMatrix {
        values,
        config: *config,
    })
}

fn config_err_mode<T>(op: &str, mode: SamplerMode) -> Result<T> {
    config(format!("{op}: sampler mode {mode:?} does not match"))
}

/// One draw from `P(n, m)` written into `out` (whose length is `m`).
///
/// Draw order is fixed: the `n` calibration uniforms first, then one
/// `(T_{n+j}, U_j)` pair per test coordinate. The first `r` entries of `out`
/// are therefore a draw from `P(n, r)` on their own.
pub fn fill_conformal_row<R: Rng + ?Sized>(n: usize, rng: &mut R, out: &mut [f64], scratch: &mut Vec<f64>) {
    scratch.clear();
    scratch.extend((0..n).map(|_| open_uniform(rng)));
    let sorted = n > SORTED_RANK_THRESHOLD;
    if sorted {
        scratch.sort_unstable_by(f64::total_cmp);
    }
    let denom = (n + 1) as f64;
    for q in out.iter_mut() {
        let test = open_uniform(rng);
        let u = open_uniform(rng);
        let rank = if sorted {
            rank_sorted(scratch, test)
        } else {
            rank_direct(scratch, test)
        };
        *q = (rank as f64 + u) / denom;
    }
}

/// Convenience wrapper around [`fill_conformal_row`] that allocates.
pub fn conformal_row<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Vec<f64> {
    let mut out = vec![0.0; m];
    let mut scratch = Vec::with_capacity(n);
    fill_conformal_row(n, rng, &mut out, &mut scratch);
    out
}

/// Number of calibration draws strictly below `x`, by direct comparison.
pub fn rank_direct(calib: &[f64], x: f64) -> usize {
    calib.iter().filter(|&&c| c < x).count()
}

/// Number of calibration draws strictly below `x`; `calib` must be sorted.
pub fn rank_sorted(calib: &[f64], x: f64) -> usize {
    calib.partition_point(|&c| c < x)
}
