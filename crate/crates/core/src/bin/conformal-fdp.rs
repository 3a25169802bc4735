use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use conformal_fdp::diagnostics::{ccv_thresholds, ecdf_variance, fcp_bound, linear_bound, VarianceQuery};
use conformal_fdp::envelope::{calibrate_envelope, calibrate_family, Direction, EnvelopeFamily, EnvelopeFunction};
use conformal_fdp::error::{Error, Result};
use conformal_fdp::fdp::{default_grid, fdp_combined, FdpBoundCurve, PValueVector, TiePolicy};
use conformal_fdp::io::{self as cio, EnvelopeDocument};
use conformal_fdp::sampler::{sample, SamplerConfig, SamplerMode};
use conformal_fdp::selection::{fdp_selection, selection_pvalues, SelectionProblem, TieHandling};
use conformal_fdp::simulate::{
    bh_demo, outlier_trials, selection_trials, summarize_outlier, OutlierSimConfig, SelectionSimConfig, ThresholdRule,
};
use conformal_fdp::statistics::{SummaryStatisticSpec, DEFAULT_BETA, DEFAULT_THC_ELL, DEFAULT_THC_R};

/// Environment variable that caps the worker thread count.
const THREADS_ENV: &str = "CONFORMAL_FDP_THREADS";

#[derive(Parser)]
#[command(
    name = "conformal-fdp",
    version,
    about = "Simultaneous FDP and FCP bounds for conformal p-values"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate an envelope (or a family with --family) and write it as JSON.
    Envelope(EnvelopeCmd),
    /// FDP bounds for outlier-detection p-values.
    BoundOutlier(BoundOutlierCmd),
    /// FDP bounds for conformal selection.
    BoundSelect(BoundSelectCmd),
    /// Simultaneous FCP bounds at given miscoverage levels.
    Fcp(FcpCmd),
    /// Calibration-conditional p-value thresholds.
    Ccv(CcvCmd),
    /// Exact variance of the conformal ECDF.
    Variance(VarianceCmd),
    /// Coverage of the outlier FDP bound on synthetic data.
    SimulateOutlier(SimOutlierCmd),
    /// Coverage of the selection FDP bound on synthetic data.
    SimulateSelect(SimSelectCmd),
    /// Post hoc BH level versus the simultaneous bound.
    BhDemo(BhDemoCmd),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum StatArg {
    Ks,
    Hc,
    Thc,
    Bj,
    Pointwise,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    Upper,
    Lower,
}

#[derive(Args, Clone)]
struct StatArgs {
    /// Summary statistic.
    #[arg(long, value_enum, default_value = "thc")]
    stat: StatArg,
    /// Left end of the THC window.
    #[arg(long, default_value_t = DEFAULT_THC_ELL)]
    ell: f64,
    /// Right end of the THC window.
    #[arg(long, default_value_t = DEFAULT_THC_R)]
    r: f64,
    /// Exponent of the standard-deviation template.
    #[arg(long, default_value_t = DEFAULT_BETA)]
    beta: f64,
    /// Evaluation point of the pointwise statistic.
    #[arg(long, default_value_t = 0.5)]
    t0: f64,
    /// Berk-Jones: only count deviations below the diagonal.
    #[arg(long)]
    bj_one_sided: bool,
}

impl StatArgs {
    fn spec(&self) -> SummaryStatisticSpec {
        let mut spec = match self.stat {
            StatArg::Ks => SummaryStatisticSpec::ks(),
            StatArg::Hc => SummaryStatisticSpec::hc(self.beta),
            StatArg::Thc => SummaryStatisticSpec::thc(self.ell, self.r, self.beta),
            StatArg::Bj => SummaryStatisticSpec::bj(),
            StatArg::Pointwise => SummaryStatisticSpec::pointwise(self.t0, self.beta),
        };
        spec.bj_one_sided = self.bj_one_sided;
        spec
    }
}

#[derive(Args, Clone)]
struct McArgs {
    /// Number of Monte Carlo draws.
    #[arg(long = "B", default_value_t = 1000)]
    b: usize,
    /// One minus the confidence level.
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// RNG seed; a random seed is chosen and reported when absent.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EnvelopeCmd {
    /// Calibration-set size.
    #[arg(long)]
    n: usize,
    /// Number of test points.
    #[arg(long)]
    m: usize,
    #[command(flatten)]
    mc: McArgs,
    #[command(flatten)]
    stat: StatArgs,
    #[arg(long, value_enum, default_value = "upper")]
    direction: DirectionArg,
    /// Sample i.i.d. uniforms instead of conformal uniforms.
    #[arg(long)]
    iid: bool,
    /// Calibrate the whole family G_1..G_m.
    #[arg(long)]
    family: bool,
    /// Write the envelope as JSON, or as a `t,envelope` table with csv.
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Output file; stdout when absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BoundOutlierCmd {
    /// CSV with column `p` and optional `is_null`.
    #[arg(long)]
    pvals: PathBuf,
    /// Envelope JSON; with `family_cutoffs` all three bounds are computed.
    #[arg(long)]
    envelope: Option<PathBuf>,
    /// Calibration-set size: checked against the envelope, or used to
    /// calibrate a family on the fly when no envelope is given.
    #[arg(long)]
    n: Option<usize>,
    #[command(flatten)]
    mc: McArgs,
    #[command(flatten)]
    stat: StatArgs,
    /// Break exact ties in the p-values instead of rejecting them.
    #[arg(long)]
    jitter: bool,
    #[arg(long, default_value_t = 512)]
    grid_points: usize,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Output file; stdout when absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BoundSelectCmd {
    /// Calibration CSV with columns `muhat, y, c`.
    #[arg(long)]
    calib: PathBuf,
    /// Test CSV with columns `muhat, c` and optional `y_true`.
    #[arg(long)]
    test: PathBuf,
    /// Envelope JSON for P(n, m); calibrated on the fly when absent.
    #[arg(long)]
    envelope: Option<PathBuf>,
    #[command(flatten)]
    mc: McArgs,
    #[command(flatten)]
    stat: StatArgs,
    /// Count ties with the test score using the randomized rule.
    #[arg(long)]
    tie_aware: bool,
    /// Skip self-refinement.
    #[arg(long)]
    no_refine: bool,
    #[arg(long, default_value_t = 512)]
    grid_points: usize,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Output file; stdout when absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FcpCmd {
    #[arg(long)]
    envelope: PathBuf,
    /// Miscoverage levels.
    #[arg(long, value_delimiter = ',', required = true)]
    alpha: Vec<f64>,
    /// Add a column for the linear baseline `G(t) = t + lambda`.
    #[arg(long)]
    dkw_lambda: Option<f64>,
    /// Output file; stdout when absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CcvCmd {
    /// Calibration-set size.
    #[arg(long)]
    n: usize,
    #[command(flatten)]
    mc: McArgs,
    #[command(flatten)]
    stat: StatArgs,
    /// Output file; stdout when absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VarianceCmd {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    m: usize,
    /// Evaluation points; defaults to an equally spaced grid.
    #[arg(long, value_delimiter = ',')]
    t: Vec<f64>,
    #[arg(long, default_value_t = 101)]
    grid_points: usize,
    /// Output file; stdout when absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimCommon {
    /// Number of simulated data sets.
    #[arg(long, default_value_t = 200)]
    trials: usize,
    /// Monte Carlo draws for the envelope, calibrated once and shared by all trials.
    #[arg(long = "B", default_value_t = 2000)]
    b: usize,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// RNG seed; a random seed is chosen and reported when absent.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    stat: StatArgs,
    /// Base configuration as JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Per-trial table (csv) or full summary (json).
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Write per-trial records here; the summary line still goes to stdout.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimOutlierCmd {
    #[command(flatten)]
    common: SimCommon,
    /// Signal strength: outliers have covariance (1 + a) I.
    #[arg(long)]
    a: Option<f64>,
    /// Fraction of inliers among the test points.
    #[arg(long)]
    purity: Option<f64>,
    /// Feature dimension.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_calib: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
}

#[derive(Args)]
struct SelectionFlags {
    /// Training points for the regression fit.
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_calib: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    /// Standard deviation of the outcome noise.
    #[arg(long)]
    noise_sd: Option<f64>,
    /// Constant selection threshold.
    #[arg(long)]
    c: Option<f64>,
}

#[derive(Args)]
struct SimSelectCmd {
    #[command(flatten)]
    common: SimCommon,
    #[command(flatten)]
    sel: SelectionFlags,
    /// Report the unrefined bound m G(t) / max(1, |R(t)|).
    #[arg(long)]
    no_refine: bool,
}

#[derive(Args)]
struct BhDemoCmd {
    #[command(flatten)]
    common: SimCommon,
    #[command(flatten)]
    sel: SelectionFlags,
    /// Increment of the post hoc BH level.
    #[arg(long, default_value_t = 0.05)]
    step: f64,
    /// Raise the level until at least this fraction is selected.
    #[arg(long, default_value_t = 0.05)]
    min_fraction: f64,
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random::<u64>();
        eprintln!("seed: {s}");
        s
    })
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => cio::write_atomic(path, bytes),
        None => {
            io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Input(format!("cannot open {}: {e}", path.display())))
}

fn calibrate_full_family(n: usize, m: usize, mc: &McArgs, spec: &SummaryStatisticSpec) -> Result<EnvelopeFamily> {
    let seed = resolve_seed(mc.seed);
    let samples = sample(&SamplerConfig::conformal(n, m, mc.b, seed))?;
    calibrate_family(&samples, spec, mc.delta)
}

fn run_envelope(cmd: EnvelopeCmd) -> Result<()> {
    let spec = cmd.stat.spec();
    let seed = resolve_seed(cmd.mc.seed);
    let direction = match cmd.direction {
        DirectionArg::Upper => Direction::Upper,
        DirectionArg::Lower => Direction::Lower,
    };
    let mode = if cmd.iid {
        SamplerMode::IidUniform
    } else {
        SamplerMode::Conformal
    };
    let sampler = SamplerConfig {
        n: cmd.n,
        m: cmd.m,
        b: cmd.mc.b,
        seed,
        mode,
    };
    let (doc, g) = if cmd.family {
        if direction == Direction::Lower {
            return Err(Error::Config("envelope families are upper envelopes".into()));
        }
        let family = calibrate_family(&sample(&sampler)?, &spec, cmd.mc.delta)?;
        (EnvelopeDocument::from_family(&family), family.full())
    } else {
        let g = calibrate_envelope(&sampler, &spec, cmd.mc.delta, direction)?;
        (EnvelopeDocument::from_envelope(&g), g)
    };
    let bytes = match cmd.format {
        Format::Json => {
            let mut text = cio::envelope_to_json(&doc)?.into_bytes();
            text.push(b'\n');
            text
        }
        Format::Csv => {
            let mut s = String::from("t,envelope\n");
            for i in 0..512 {
                let t = i as f64 / 511.0;
                s.push_str(&format!("{t},{}\n", g.eval(t)));
            }
            s.into_bytes()
        }
    };
    emit(cmd.out.as_deref(), &bytes)
}

/// Naive and refined bounds from a single envelope; the combined column
/// repeats the refined one since there is no family to estimate `m0` with.
fn single_envelope_curve(p: &PValueVector, g: &EnvelopeFunction, grid: &[f64]) -> Result<FdpBoundCurve> {
    fdp_selection(p, g, grid, true)
}

fn write_curve(curve: &FdpBoundCurve, format: Format, out: Option<&Path>) -> Result<()> {
    let bytes = match format {
        Format::Csv => cio::curve_to_csv(curve)?,
        Format::Json => json_bytes(curve)?,
    };
    emit(out, &bytes)
}

fn run_bound_outlier(cmd: BoundOutlierCmd) -> Result<()> {
    let mut p = cio::read_pvalues_csv(open(&cmd.pvals)?)?;
    if let Some(n) = cmd.n {
        p = p.with_calibration_size(n);
    }
    let policy = if cmd.jitter {
        TiePolicy::Jitter {
            seed: cmd.mc.seed.unwrap_or(0),
        }
    } else {
        TiePolicy::Reject
    };
    let p = p.resolve_ties(policy)?;
    let grid = default_grid(&p, cmd.grid_points);
    let curve = match (&cmd.envelope, cmd.n) {
        (Some(path), _) => {
            let doc = cio::read_envelope(path)?;
            if doc.family_cutoffs.is_some() {
                fdp_combined(&p, &doc.to_family()?, &grid)?
            } else {
                single_envelope_curve(&p, &doc.to_envelope()?, &grid)?
            }
        }
        (None, Some(n)) => {
            let family = calibrate_full_family(n, p.len(), &cmd.mc, &cmd.stat.spec())?;
            fdp_combined(&p, &family, &grid)?
        }
        (None, None) => return Err(Error::Config("give --envelope or --n to calibrate one".into())),
    };
    if let Some(m0) = curve.mhat0 {
        eprintln!("m0_hat: {m0}");
    }
    write_curve(&curve, cmd.format, cmd.out.as_deref())
}

fn run_bound_select(cmd: BoundSelectCmd) -> Result<()> {
    let calib = cio::read_selection_calib_csv(open(&cmd.calib)?)?;
    let (test, truth) = cio::read_selection_test_csv(open(&cmd.test)?)?;
    let seed = resolve_seed(cmd.mc.seed);
    let mut problem = SelectionProblem::new(calib, test, seed)?;
    if let Some(truth) = truth {
        problem = problem.with_truth(truth)?;
    }
    let ties = if cmd.tie_aware {
        TieHandling::Randomized
    } else {
        TieHandling::Strict
    };
    let p = selection_pvalues(&problem, ties)?;
    let g = match &cmd.envelope {
        Some(path) => cio::read_envelope(path)?.to_envelope()?,
        None => {
            let mc = McArgs {
                seed: Some(seed),
                ..cmd.mc.clone()
            };
            calibrate_full_family(problem.n(), problem.m(), &mc, &cmd.stat.spec())?.full()
        }
    };
    let grid = default_grid(&p, cmd.grid_points);
    let curve = fdp_selection(&p, &g, &grid, !cmd.no_refine)?;
    write_curve(&curve, cmd.format, cmd.out.as_deref())
}

fn run_fcp(cmd: FcpCmd) -> Result<()> {
    let g = cio::read_envelope(&cmd.envelope)?.to_envelope()?;
    if cmd.dkw_lambda.is_some_and(|l| !l.is_finite()) {
        return Err(Error::Config("--dkw-lambda must be finite".into()));
    }
    let mut s = String::from("alpha,fcp_bound");
    s.push_str(if cmd.dkw_lambda.is_some() { ",fcp_dkw\n" } else { "\n" });
    for a in &cmd.alpha {
        if !(0.0..=1.0).contains(a) {
            return Err(Error::Config(format!("alpha must be in [0, 1], got {a}")));
        }
        s.push_str(&format!("{a},{}", fcp_bound(&g, *a)));
        match cmd.dkw_lambda {
            Some(l) => s.push_str(&format!(",{}\n", linear_bound(l, *a))),
            None => s.push('\n'),
        }
    }
    emit(cmd.out.as_deref(), s.as_bytes())
}

fn run_ccv(cmd: CcvCmd) -> Result<()> {
    let seed = resolve_seed(cmd.mc.seed);
    let sampler = SamplerConfig::iid(cmd.n, cmd.mc.b, seed);
    let l = calibrate_envelope(&sampler, &cmd.stat.spec(), cmd.mc.delta, Direction::Lower)?;
    let thresholds = ccv_thresholds(&l)?;
    emit(cmd.out.as_deref(), &cio::ccv_to_csv(&thresholds)?)
}

fn run_variance(cmd: VarianceCmd) -> Result<()> {
    let ts: Vec<f64> = if cmd.t.is_empty() {
        let k = cmd.grid_points.max(2);
        (0..k).map(|i| i as f64 / (k - 1) as f64).collect()
    } else {
        cmd.t.clone()
    };
    let rows = ts
        .iter()
        .map(|&t| {
            let q = VarianceQuery::new(cmd.n, cmd.m, t);
            Ok((q, ecdf_variance(q)?))
        })
        .collect::<Result<Vec<_>>>()?;
    emit(cmd.out.as_deref(), &cio::variance_to_csv(&rows)?)
}

fn load_config<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => serde_json::from_reader(open(p)?).map_err(|e| Error::Config(format!("{}: {e}", p.display()))),
        None => Ok(T::default()),
    }
}

#[derive(Serialize)]
struct OutlierReport {
    seed: u64,
    config: OutlierSimConfig,
    summary: conformal_fdp::simulate::OutlierCoverageSummary,
    trials: Vec<OutlierRow>,
}

#[derive(Serialize)]
struct OutlierRow {
    trial: usize,
    covered: bool,
    mhat0: usize,
    m0: usize,
}

fn run_simulate_outlier(cmd: SimOutlierCmd) -> Result<()> {
    let c = &cmd.common;
    let seed = resolve_seed(c.seed);
    let mut cfg: OutlierSimConfig = load_config(c.config.as_deref())?;
    if c.seed.is_some() || c.config.is_none() {
        cfg.seed = seed;
    }
    cfg.a = cmd.a.unwrap_or(cfg.a);
    cfg.purity = cmd.purity.unwrap_or(cfg.purity);
    cfg.dim = cmd.dim.unwrap_or(cfg.dim);
    cfg.n_train = cmd.n_train.unwrap_or(cfg.n_train);
    cfg.n_calib = cmd.n_calib.unwrap_or(cfg.n_calib);
    cfg.n_test = cmd.n_test.unwrap_or(cfg.n_test);
    cfg.validate()?;
    let mc = McArgs {
        b: c.b,
        delta: c.delta,
        seed: Some(cfg.seed),
    };
    let family = calibrate_full_family(cfg.n_calib, cfg.n_test, &mc, &c.stat.spec())?;
    let results = outlier_trials(&cfg, &family, c.trials)?;
    let summary = summarize_outlier(&results);
    println!(
        "coverage {}/{} = {:.4} (everywhere-valid bound); m0_hat >= m0 in {}/{}; mean m0_hat {:.2}, m0 {:.2}",
        summary.covered,
        summary.trials,
        summary.coverage,
        summary.mhat0_valid,
        summary.trials,
        summary.mean_mhat0,
        summary.mean_m0
    );
    let rows: Vec<OutlierRow> = results
        .iter()
        .enumerate()
        .map(|(i, r)| OutlierRow {
            trial: i,
            covered: r.curve.covers_truth() == Some(true),
            mhat0: r.curve.mhat0.unwrap_or(0),
            m0: r.m0,
        })
        .collect();
    let Some(out) = c.out.as_deref() else { return Ok(()) };
    let bytes = match c.format {
        Format::Json => json_bytes(&OutlierReport {
            seed: cfg.seed,
            config: cfg.clone(),
            summary,
            trials: rows,
        })?,
        Format::Csv => {
            let mut s = String::from("trial,covered,mhat0,m0\n");
            for r in &rows {
                s.push_str(&format!("{},{},{},{}\n", r.trial, r.covered as u8, r.mhat0, r.m0));
            }
            s.into_bytes()
        }
    };
    cio::write_atomic(out, &bytes)
}

fn selection_config(common: &SimCommon, flags: &SelectionFlags, default_c: f64) -> Result<(SelectionSimConfig, u64)> {
    let seed = resolve_seed(common.seed);
    let mut cfg: SelectionSimConfig = match common.config.as_deref() {
        Some(p) => load_config(Some(p))?,
        None => SelectionSimConfig {
            threshold_rule: ThresholdRule::Constant { c: default_c },
            ..Default::default()
        },
    };
    if common.seed.is_some() || common.config.is_none() {
        cfg.seed = seed;
    }
    cfg.n_train = flags.n_train.unwrap_or(cfg.n_train);
    cfg.n_calib = flags.n_calib.unwrap_or(cfg.n_calib);
    cfg.n_test = flags.n_test.unwrap_or(cfg.n_test);
    cfg.dim = flags.dim.unwrap_or(cfg.dim);
    cfg.noise_sd = flags.noise_sd.unwrap_or(cfg.noise_sd);
    if let Some(c) = flags.c {
        cfg.threshold_rule = ThresholdRule::Constant { c };
    }
    cfg.validate()?;
    let seed = cfg.seed;
    Ok((cfg, seed))
}

fn run_simulate_select(cmd: SimSelectCmd) -> Result<()> {
    let c = &cmd.common;
    let (cfg, seed) = selection_config(c, &cmd.sel, 0.0)?;
    let mc = McArgs {
        b: c.b,
        delta: c.delta,
        seed: Some(seed),
    };
    let g = calibrate_full_family(cfg.n_calib, cfg.n_test, &mc, &c.stat.spec())?.full();
    let curves = selection_trials(&cfg, &g, c.trials, !cmd.no_refine)?;
    let covered: Vec<bool> = curves.iter().map(|cv| cv.covers_truth() == Some(true)).collect();
    let n_cov = covered.iter().filter(|&&b| b).count();
    println!(
        "coverage {}/{} = {:.4} (everywhere-valid bound)",
        n_cov,
        c.trials,
        n_cov as f64 / c.trials.max(1) as f64
    );
    let Some(out) = c.out.as_deref() else { return Ok(()) };
    let bytes = match c.format {
        Format::Json => json_bytes(&serde_json::json!({
            "seed": seed, "config": cfg, "covered": n_cov, "trials": c.trials, "per_trial": covered,
        }))?,
        Format::Csv => {
            let mut s = String::from("trial,covered\n");
            for (i, b) in covered.iter().enumerate() {
                s.push_str(&format!("{i},{}\n", *b as u8));
            }
            s.into_bytes()
        }
    };
    cio::write_atomic(out, &bytes)
}

/// Default threshold of the demo: few true discoveries, so post hoc
/// escalation of the BH level is needed to select anything.
const BH_DEMO_C: f64 = 1.5;

fn run_bh_demo(cmd: BhDemoCmd) -> Result<()> {
    let c = &cmd.common;
    let (cfg, seed) = selection_config(c, &cmd.sel, BH_DEMO_C)?;
    let mc = McArgs {
        b: c.b,
        delta: c.delta,
        seed: Some(seed),
    };
    let g = calibrate_full_family(cfg.n_calib, cfg.n_test, &mc, &c.stat.spec())?.full();
    let summary = bh_demo(&cfg, &g, c.trials, cmd.step, cmd.min_fraction)?;
    let t = summary.trials.max(1) as f64;
    println!(
        "post hoc BH level below realized FDP in {}/{} = {:.4}; bound at BH threshold dominates in {}/{} = {:.4}; \
         simultaneous coverage {}/{} = {:.4}",
        summary.posthoc_fail,
        summary.trials,
        summary.posthoc_fail as f64 / t,
        summary.bound_dominates,
        summary.trials,
        summary.bound_dominates as f64 / t,
        summary.simultaneous_covered,
        summary.trials,
        summary.simultaneous_covered as f64 / t
    );
    let Some(out) = c.out.as_deref() else { return Ok(()) };
    let bytes = match c.format {
        Format::Json => json_bytes(&serde_json::json!({ "seed": seed, "config": cfg, "summary": summary }))?,
        Format::Csv => {
            let mut s = String::from("trial,alpha,threshold,rejections,fdp,bound,simultaneous_covered\n");
            for (i, r) in summary.records.iter().enumerate() {
                s.push_str(&format!(
                    "{i},{},{},{},{},{},{}\n",
                    r.alpha, r.threshold, r.rejections, r.fdp, r.bound, r.simultaneous_covered as u8
                ));
            }
            s.into_bytes()
        }
    };
    cio::write_atomic(out, &bytes)
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Envelope(c) => run_envelope(c),
        Command::BoundOutlier(c) => run_bound_outlier(c),
        Command::BoundSelect(c) => run_bound_select(c),
        Command::Fcp(c) => run_fcp(c),
        Command::Ccv(c) => run_ccv(c),
        Command::Variance(c) => run_variance(c),
        Command::SimulateOutlier(c) => run_simulate_outlier(c),
        Command::SimulateSelect(c) => run_simulate_select(c),
        Command::BhDemo(c) => run_bh_demo(c),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
