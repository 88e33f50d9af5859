//! Monte Carlo driver for the calibration and power studies.
//!
//! Trial `t` draws everything from its own generator seeded with
//! [`child_seed`]`(seed, t)`, so results do not depend on scheduling.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::engine::{infer_each, InferOptions, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::stats::testing::clopper_pearson;
use crate::stats::{sample_dataset_with, BlockCovariance, CovBlock, NoiseSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    FprUnivariate,
    TprUnivariate,
    FprMultidim,
    TprMultidim,
    Correlated,
    RhoSweep,
    Robustness,
}

impl Scenario {
    fn univariate(self) -> bool {
        matches!(self, Scenario::FprUnivariate | Scenario::TprUnivariate)
    }

    /// Scenarios tested with the summed-absolute row statistic.
    fn row_statistic(self) -> bool {
        matches!(
            self,
            Scenario::FprMultidim | Scenario::TprMultidim | Scenario::Correlated | Scenario::RhoSweep
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    NoInference,
    Naive,
    Bonferroni,
    Oc,
    Selective,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::NoInference,
        Method::Naive,
        Method::Bonferroni,
        Method::Oc,
        Method::Selective,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::NoInference => "no_inference",
            Method::Naive => "naive",
            Method::Bonferroni => "bonferroni",
            Method::Oc => "oc",
            Method::Selective => "selective",
        }
    }

    fn title(self) -> &'static str {
        match self {
            Method::NoInference => "No Inference",
            Method::Naive => "Naive",
            Method::Bonferroni => "Bonferroni",
            Method::Oc => "CAD-DA-oc",
            Method::Selective => "CAD-DA",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Rho,
    Delta,
    NS,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Fpr,
    Tpr,
}

/// Opt-in gate: `metric(method)` must land in `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceptanceBand {
    pub method: Method,
    pub metric: Metric,
    pub lo: f64,
    pub hi: f64,
}

fn d_one() -> usize {
    1
}
fn d_five() -> usize {
    5
}
fn d_gamma() -> f64 {
    crate::mad::DEFAULT_GAMMA
}
fn d_alpha() -> f64 {
    0.05
}
fn d_trials() -> usize {
    120
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub n_s: usize,
    pub n_t: usize,
    #[serde(default = "d_one")]
    pub d: usize,
    #[serde(default)]
    pub delta: f64,
    #[serde(default = "d_five")]
    pub n_anomalies: usize,
    #[serde(default)]
    pub rho: f64,
    #[serde(default = "NoiseSpec::gaussian")]
    pub noise: NoiseSpec,
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default = "d_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub estimate_variance: bool,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    /// Fill `wall_ms` in dumps; off by default so outputs are reproducible.
    #[serde(default)]
    pub record_timing: bool,
    #[serde(default)]
    pub acceptance: Vec<AcceptanceBand>,
    /// Free-form tag copied into output metadata.
    #[serde(default)]
    pub label: Option<String>,
}

impl ExperimentConfig {
    pub fn new(scenario: Scenario, n_s: usize, n_t: usize) -> Self {
        Self {
            scenario,
            n_s,
            n_t,
            d: 1,
            delta: 0.0,
            n_anomalies: 5,
            rho: 0.0,
            noise: NoiseSpec::gaussian(),
            gamma: d_gamma(),
            alpha: d_alpha(),
            trials: d_trials(),
            seed: 0,
            estimate_variance: false,
            sweep: None,
            record_timing: false,
            acceptance: Vec::new(),
            label: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_point()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.scenario == Scenario::RhoSweep && !matches!(&self.sweep, Some(s) if s.param == SweepParam::Rho) {
            return bad("rho_sweep needs a sweep over rho".into());
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return bad("sweep has no values".into());
            }
            for &v in &s.values {
                let mut c = self.clone();
                c.sweep = None;
                c.set_param(s.param, v)?;
                c.validate_point()?;
            }
        }
        Ok(())
    }

    /// Checks that do not involve the sweep.
    fn validate_point(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must be in (0, 1), got {}", self.alpha));
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.n_s == 0 || self.n_t < 2 {
            return bad(format!("need n_s >= 1 and n_t >= 2, got {} and {}", self.n_s, self.n_t));
        }
        if self.d == 0 {
            return bad("d must be at least 1".into());
        }
        if self.n_anomalies >= self.n_t {
            return bad(format!("n_anomalies ({}) must be below n_t ({})", self.n_anomalies, self.n_t));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return bad(format!("rho must be in [0, 1), got {}", self.rho));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if !self.delta.is_finite() {
            return bad("delta must be finite".into());
        }
        self.noise.validate()?;
        if self.scenario.univariate() && self.d != 1 {
            return bad(format!("{:?} needs d = 1", self.scenario));
        }
        for b in &self.acceptance {
            if !(b.lo <= b.hi) {
                return bad(format!("acceptance band [{}, {}] is empty", b.lo, b.hi));
            }
        }
        Ok(())
    }

    fn set_param(&mut self, p: SweepParam, v: f64) -> Result<()> {
        match p {
            SweepParam::Rho => self.rho = v,
            SweepParam::Delta => self.delta = v,
            SweepParam::NS => {
                if v < 1.0 || v.fract() != 0.0 {
                    return Err(Error::Config(format!("n_s sweep value {v} is not a positive integer")));
                }
                self.n_s = v as usize;
            }
        }
        Ok(())
    }

    /// Sets `key` (dotted for nested fields) from a CLI-style string. Keys
    /// that do not exist in the config are rejected.
    pub fn apply_override(&mut self, key: &str, raw: &str) -> Result<()> {
        let mut doc = serde_json::to_value(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut slot = &mut doc;
        let parts: Vec<&str> = key.split('.').collect();
        for (k, part) in parts.iter().enumerate() {
            let obj = slot
                .as_object_mut()
                .ok_or_else(|| Error::Config(format!("override key '{key}': '{part}' is not inside an object")))?;
            let last = k + 1 == parts.len();
            // nested noise parameters appear only for some kinds, so allow new leaves there
            let known = obj.contains_key(*part) || (last && parts[0] == "noise" && matches!(*part, "shape" | "dof"));
            if !known {
                return Err(Error::Config(format!("unknown override key '{key}'")));
            }
            slot = obj.entry(part.to_string()).or_insert(Value::Null);
        }
        *slot = value;
        let cfg: Self = serde_json::from_value(doc).map_err(|e| Error::Config(format!("override '{key}={raw}': {e}")))?;
        cfg.validate()?;
        *self = cfg;
        Ok(())
    }

    fn infer_options(&self) -> InferOptions {
        InferOptions {
            gamma: self.gamma,
            estimate_variance: self.estimate_variance,
        }
    }

    fn covariance(&self) -> BlockCovariance {
        let (ns, nt, d) = (self.n_s, self.n_t, self.d);
        if self.rho > 0.0 && d > 1 {
            BlockCovariance {
                source: CovBlock::banded_rows(ns, d, self.rho, 1.0),
                target: CovBlock::banded_rows(nt, d, self.rho, 1.0),
            }
        } else {
            BlockCovariance::identity(ns * d, nt * d)
        }
    }
}

/// Source rows are centred at 0, target rows at 2.
pub const SOURCE_MEAN: f64 = 0.0;
pub const TARGET_MEAN: f64 = 2.0;

/// SplitMix64 finaliser over `seed + (t + 1) * golden`.
pub fn child_seed(seed: u64, trial: usize) -> u64 {
    let mut z = seed.wrapping_add((trial as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisRecord {
    pub j: usize,
    pub is_planted: bool,
    pub p_naive: f64,
    pub p_bonferroni: f64,
    pub p_oc: f64,
    pub p_selective: f64,
    pub statistic: f64,
    pub region_mass: f64,
    pub cells_visited: usize,
}

impl HypothesisRecord {
    fn p(&self, m: Method) -> f64 {
        match m {
            Method::NoInference => 0.0,
            Method::Naive => self.p_naive,
            Method::Bonferroni => self.p_bonferroni,
            Method::Oc => self.p_oc,
            Method::Selective => self.p_selective,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub planted: Vec<usize>,
    pub detected: usize,
    pub records: Vec<HypothesisRecord>,
    /// Whole-trial degeneracy (every target flagged).
    pub degenerate: bool,
    /// Hypotheses abandoned with a diagnostic.
    pub failures: Vec<String>,
    pub wall_ms: Option<f64>,
}

pub fn run_trial(cfg: &ExperimentConfig, trial: usize) -> Result<TrialOutcome> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(cfg.seed, trial));
    let d = cfg.d;
    let planted: Vec<usize> = if cfg.delta == 0.0 {
        Vec::new()
    } else {
        let mut p = sample(&mut rng, cfg.n_t, cfg.n_anomalies).into_vec();
        p.sort_unstable();
        p
    };
    let mut mean_t = vec![TARGET_MEAN; cfg.n_t * d];
    for &j in &planted {
        for v in &mut mean_t[j * d..(j + 1) * d] {
            *v += cfg.delta;
        }
    }
    let ds = sample_dataset_with(
        &vec![SOURCE_MEAN; cfg.n_s * d],
        &mean_t,
        d,
        &cfg.covariance(),
        &cfg.noise,
        &mut rng,
    )?;
    let row_mode = cfg.d > 1 || cfg.scenario.row_statistic();
    let mut out = TrialOutcome {
        trial,
        planted,
        detected: 0,
        records: Vec::new(),
        degenerate: false,
        failures: Vec::new(),
        wall_ms: None,
    };
    match infer_each(&ds, &cfg.infer_options(), row_mode) {
        Ok((set, results)) => {
            out.detected = set.len();
            for (j, r) in results {
                match r {
                    Ok(r) => out.records.push(HypothesisRecord {
                        j,
                        is_planted: out.planted.binary_search(&j).is_ok(),
                        p_naive: r.p_naive,
                        p_bonferroni: r.p_bonferroni,
                        p_oc: r.p_oc,
                        p_selective: r.p_selective,
                        statistic: r.statistic,
                        region_mass: r.log_region_mass.exp(),
                        cells_visited: r.cells_visited,
                    }),
                    Err(e) if e.is_degenerate() => out.degenerate = true,
                    Err(e) => out.failures.push(format!("trial {trial}, j {j}: {e}")),
                }
            }
        }
        Err(e) if e.is_degenerate() => out.degenerate = true,
        Err(e) => return Err(e),
    }
    if cfg.record_timing {
        out.wall_ms = Some(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(out)
}

/// Runs every trial, in parallel over `workers` threads (0 = rayon default).
pub fn run_trials(cfg: &ExperimentConfig, workers: usize) -> Result<Vec<TrialOutcome>> {
    cfg.validate_point()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(|| (0..cfg.trials).into_par_iter().map(|t| run_trial(cfg, t)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRates {
    pub method: Method,
    pub null_rejections: usize,
    pub null_total: usize,
    pub fpr: f64,
    pub fpr_band: (f64, f64),
    pub alt_rejections: usize,
    pub alt_total: usize,
    pub tpr: f64,
    pub tpr_band: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub schema_version: u32,
    pub alpha: f64,
    pub trials: usize,
    pub trials_with_detections: usize,
    pub degenerate_trials: usize,
    pub failed_hypotheses: usize,
    pub methods: Vec<MethodRates>,
}

fn rate(k: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        k as f64 / n as f64
    }
}

pub fn summarize(outcomes: &[TrialOutcome], alpha: f64) -> SummaryTable {
    let records: Vec<&HypothesisRecord> = outcomes.iter().flat_map(|o| &o.records).collect();
    let methods = Method::ALL
        .iter()
        .map(|&m| {
            let (mut nr, mut nt, mut ar, mut at) = (0, 0, 0, 0);
            for r in &records {
                let reject = r.p(m) <= alpha;
                if r.is_planted {
                    at += 1;
                    ar += usize::from(reject);
                } else {
                    nt += 1;
                    nr += usize::from(reject);
                }
            }
            MethodRates {
                method: m,
                null_rejections: nr,
                null_total: nt,
                fpr: rate(nr, nt),
                fpr_band: clopper_pearson(nr, nt, 0.95),
                alt_rejections: ar,
                alt_total: at,
                tpr: rate(ar, at),
                tpr_band: clopper_pearson(ar, at, 0.95),
            }
        })
        .collect();
    SummaryTable {
        schema_version: SCHEMA_VERSION,
        alpha,
        trials: outcomes.len(),
        trials_with_detections: outcomes.iter().filter(|o| !o.records.is_empty()).count(),
        degenerate_trials: outcomes.iter().filter(|o| o.degenerate).count(),
        failed_hypotheses: outcomes.iter().map(|o| o.failures.len()).sum(),
        methods,
    }
}

impl SummaryTable {
    pub fn get(&self, m: Method) -> &MethodRates {
        self.methods.iter().find(|r| r.method == m).expect("all methods present")
    }

    /// Aligned text in the layout of a FPR/TPR comparison table.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "alpha = {}  trials = {}  with detections = {}  degenerate = {}  failed = {}",
            self.alpha, self.trials, self.trials_with_detections, self.degenerate_trials, self.failed_hypotheses
        );
        let _ = writeln!(
            s,
            "{:<14} {:>7} {:>17} {:>9} {:>7} {:>17} {:>9}",
            "method", "FPR", "95% band", "k/n", "TPR", "95% band", "k/n"
        );
        for r in &self.methods {
            let _ = writeln!(
                s,
                "{:<14} {:>7.3} {:>17} {:>9} {:>7.3} {:>17} {:>9}",
                r.method.title(),
                r.fpr,
                format!("[{:.3}, {:.3}]", r.fpr_band.0, r.fpr_band.1),
                format!("{}/{}", r.null_rejections, r.null_total),
                r.tpr,
                format!("[{:.3}, {:.3}]", r.tpr_band.0, r.tpr_band.1),
                format!("{}/{}", r.alt_rejections, r.alt_total),
            );
        }
        s
    }

    pub fn csv_header() -> &'static str {
        "method,null_rejections,null_total,fpr,fpr_lo,fpr_hi,alt_rejections,alt_total,tpr,tpr_lo,tpr_hi"
    }

    pub fn csv_rows(&self, prefix: &str) -> String {
        let mut s = String::new();
        for r in &self.methods {
            let _ = writeln!(
                s,
                "{prefix}{},{},{},{},{},{},{},{},{},{},{}",
                r.method.label(),
                r.null_rejections,
                r.null_total,
                r.fpr,
                r.fpr_band.0,
                r.fpr_band.1,
                r.alt_rejections,
                r.alt_total,
                r.tpr,
                r.tpr_band.0,
                r.tpr_band.1
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}", Self::csv_header(), self.csv_rows(""))
    }

    /// Bands that the table violates, as readable messages.
    pub fn check(&self, bands: &[AcceptanceBand]) -> Vec<String> {
        bands
            .iter()
            .filter_map(|b| {
                let r = self.get(b.method);
                let v = match b.metric {
                    Metric::Fpr => r.fpr,
                    Metric::Tpr => r.tpr,
                };
                (v < b.lo || v > b.hi).then(|| {
                    format!(
                        "{} {:?} = {v:.4} outside [{}, {}] at alpha {}",
                        b.method.label(),
                        b.metric,
                        b.lo,
                        b.hi,
                        self.alpha
                    )
                })
            })
            .collect()
    }
}

/// Summary plus the raw outcomes it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRun {
    pub config: ExperimentConfig,
    pub summary: SummaryTable,
    pub outcomes: Vec<TrialOutcome>,
}

pub fn run_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<ExperimentRun> {
    let outcomes = run_trials(cfg, workers)?;
    Ok(ExperimentRun {
        config: cfg.clone(),
        summary: summarize(&outcomes, cfg.alpha),
        outcomes,
    })
}

/// One run per sweep value (or a single run without a sweep).
pub fn run_sweep(cfg: &ExperimentConfig, workers: usize) -> Result<Vec<(Option<f64>, ExperimentRun)>> {
    cfg.validate()?;
    match &cfg.sweep {
        None => Ok(vec![(None, run_experiment(cfg, workers)?)]),
        Some(s) => s
            .values
            .iter()
            .map(|&v| {
                let mut c = cfg.clone();
                c.sweep = None;
                c.set_param(s.param, v)?;
                Ok((Some(v), run_experiment(&c, workers)?))
            })
            .collect(),
    }
}

/// Levels reported by the robustness suite.
pub const ROBUSTNESS_ALPHAS: [f64; 2] = [0.05, 0.1];

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessReport {
    pub run: ExperimentRun,
    pub tables: Vec<SummaryTable>,
}

/// Same pipeline under non-Gaussian noise or estimated variance, with the
/// rates reported at both robustness levels.
pub fn run_robustness(cfg: &ExperimentConfig, workers: usize) -> Result<RobustnessReport> {
    check_robustness(cfg)?;
    Ok(robustness_report(run_experiment(cfg, workers)?))
}

/// [`run_robustness`] at every sweep value.
pub fn run_robustness_sweep(cfg: &ExperimentConfig, workers: usize) -> Result<Vec<(Option<f64>, RobustnessReport)>> {
    check_robustness(cfg)?;
    Ok(run_sweep(cfg, workers)?
        .into_iter()
        .map(|(v, run)| (v, robustness_report(run)))
        .collect())
}

fn check_robustness(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.noise.is_gaussian() && !cfg.estimate_variance {
        return Err(Error::Config(
            "robustness runs need non-Gaussian noise or estimate_variance = true".into(),
        ));
    }
    Ok(())
}

fn robustness_report(run: ExperimentRun) -> RobustnessReport {
    let tables = ROBUSTNESS_ALPHAS.iter().map(|&a| summarize(&run.outcomes, a)).collect();
    RobustnessReport { run, tables }
}

pub const PVALUE_COLUMNS: &str =
    "trial,hypothesis_index,is_planted,p_naive,p_bonferroni,p_oc,p_selective,statistic,region_mass,cells_visited,wall_ms";

/// One CSV row per tested hypothesis.
pub fn pvalue_dump(outcomes: &[TrialOutcome]) -> String {
    let mut s = String::from(PVALUE_COLUMNS);
    s.push('\n');
    for o in outcomes {
        for r in &o.records {
            let wall = o.wall_ms.map(|w| format!("{w:.3}")).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                o.trial,
                r.j,
                u8::from(r.is_planted),
                r.p_naive,
                r.p_bonferroni,
                r.p_oc,
                r.p_selective,
                r.statistic,
                r.region_mass,
                r.cells_visited,
                wall
            );
        }
    }
    s
}
