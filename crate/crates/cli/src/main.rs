mod dataset;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use cadda::engine::{dump_region, infer_multidim, infer_with, InferOptions, InferenceResult, SCHEMA_VERSION};
use cadda::harness::{
    pvalue_dump, run_robustness_sweep, run_sweep, ExperimentConfig, Scenario, SummaryTable, TrialOutcome,
};
use cadda::mad::DEFAULT_GAMMA;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

/// Selective p-values for anomalies detected after optimal-transport
/// domain adaptation.
#[derive(Parser)]
#[command(name = "cadda", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Progress and timing on stderr (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Cmd {
    /// Test every anomaly detected in one dataset file.
    Infer(InferArgs),
    /// Run a Monte Carlo experiment from a config file.
    Experiment(RunArgs),
    /// Run a robustness config and report rates at alpha 0.05 and 0.1.
    Robustness(RunArgs),
    /// Write the truncation-region trace for one detected anomaly.
    DumpRegion(DumpArgs),
    /// Run the built-in closed-form checks.
    Selftest,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Args)]
struct InferArgs {
    /// Dataset JSON file.
    #[arg(short, long)]
    input: PathBuf,
    /// Directory for inference.json.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Replace the given covariance by a pooled empirical variance.
    #[arg(long)]
    estimate_variance: bool,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config JSON file.
    #[arg(short, long)]
    config: PathBuf,
    /// Directory for summary and p-value files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Config field override, e.g. `trials=12` or `noise.dof=20`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads (0 = one per core).
    #[arg(long, env = "CADDA_WORKERS", default_value_t = 0)]
    workers: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args)]
struct DumpArgs {
    /// Dataset JSON file.
    #[arg(short, long)]
    input: PathBuf,
    /// Target index of the anomaly.
    #[arg(long)]
    j: usize,
    /// Directory for region_<j>.json.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    estimate_variance: bool,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

/// Exit codes: 1 configuration or input, 2 statistical degeneracy,
/// 3 internal failure, 4 acceptance band violated.
struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn config(msg: impl Into<String>) -> Self {
        Self { code: 1, msg: msg.into() }
    }
}

impl From<cadda::Error> for Failure {
    fn from(e: cadda::Error) -> Self {
        use cadda::Error as E;
        let code = match &e {
            E::Config(_) | E::Dimension(_) | E::Domain(_) => 1,
            _ if e.is_degenerate() => 2,
            _ => 3,
        };
        Self { code, msg: e.to_string() }
    }
}

type Outcome = Result<(), Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn write(dir: &Path, name: &str, body: &str) -> Outcome {
    fs::create_dir_all(dir).map_err(|e| Failure::config(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, body).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn load_input(path: &Path) -> Result<dataset::Input, Failure> {
    dataset::parse(&read(path)?).map_err(|m| Failure::config(format!("{}: {m}", path.display())))
}

#[derive(Serialize)]
struct InferRecord<'a> {
    #[serde(flatten)]
    result: &'a InferenceResult,
    reject: bool,
}

#[derive(Serialize)]
struct InferReport<'a> {
    schema_version: u32,
    n_s: usize,
    n_t: usize,
    dim: usize,
    gamma: f64,
    alpha: f64,
    estimate_variance: bool,
    anomalies: Vec<usize>,
    note: Option<&'static str>,
    results: Vec<InferRecord<'a>>,
}

fn cmd_infer(a: &InferArgs) -> Outcome {
    let input = load_input(&a.input)?;
    let gamma = a.gamma.or(input.gamma).unwrap_or(DEFAULT_GAMMA);
    let alpha = a.alpha.or(input.alpha).unwrap_or(0.05);
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Failure::config(format!("alpha must be in (0, 1), got {alpha}")));
    }
    let opts = InferOptions {
        gamma,
        estimate_variance: a.estimate_variance,
    };
    let data = &input.data;
    let results = if data.dim > 1 {
        infer_multidim(data, &opts)?
    } else {
        infer_with(data, &opts)?
    };
    let report = InferReport {
        schema_version: SCHEMA_VERSION,
        n_s: data.n_s(),
        n_t: data.n_t(),
        dim: data.dim,
        gamma,
        alpha,
        estimate_variance: a.estimate_variance,
        anomalies: results.iter().map(|r| r.j).collect(),
        note: results.is_empty().then_some("no anomalies detected; nothing to test"),
        results: results
            .iter()
            .map(|r| InferRecord {
                result: r,
                reject: r.p_selective <= alpha,
            })
            .collect(),
    };
    let json = to_json(&report);
    if let Some(dir) = &a.out {
        write(dir, "inference.json", &json)?;
    }
    let cols = "j,statistic,p_naive,p_bonferroni,p_oc,p_selective,reject";
    match a.format {
        Format::Json => print!("{json}"),
        Format::Csv => {
            println!("{cols}");
            for r in &report.results {
                let x = r.result;
                println!(
                    "{},{},{},{},{},{},{}",
                    x.j, x.statistic, x.p_naive, x.p_bonferroni, x.p_oc, x.p_selective, r.reject
                );
            }
        }
        Format::Text => {
            println!(
                "n_s = {}  n_t = {}  d = {}  gamma = {gamma}  alpha = {alpha}",
                report.n_s, report.n_t, report.dim
            );
            if let Some(note) = report.note {
                println!("{note}");
            } else {
                println!(
                    "{:>5} {:>11} {:>11} {:>11} {:>11} {:>11} {:>7}",
                    "j", "statistic", "naive", "bonferroni", "oc", "selective", "reject"
                );
                for r in &report.results {
                    let x = r.result;
                    println!(
                        "{:>5} {:>11.4} {:>11.3e} {:>11.3e} {:>11.3e} {:>11.3e} {:>7}",
                        x.j,
                        x.statistic,
                        x.p_naive,
                        x.p_bonferroni,
                        x.p_oc,
                        x.p_selective,
                        if r.reject { "yes" } else { "no" }
                    );
                }
            }
        }
    }
    Ok(())
}

fn load_config(a: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let path = &a.config;
    let mut cfg = ExperimentConfig::from_json(&read(path)?)
        .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    let mut pairs: Vec<(String, String)> = Vec::new();
    for o in &a.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Failure::config(format!("override '{o}' is not KEY=VALUE")))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(s) = a.seed {
        pairs.push(("seed".into(), s.to_string()));
    }
    if let Some(x) = a.alpha {
        pairs.push(("alpha".into(), x.to_string()));
    }
    if let Some(x) = a.gamma {
        pairs.push(("gamma".into(), x.to_string()));
    }
    for (k, v) in pairs {
        cfg.apply_override(&k, &v)?;
    }
    Ok(cfg)
}

struct Point {
    value: Option<f64>,
    tables: Vec<SummaryTable>,
    outcomes: Vec<TrialOutcome>,
}

#[derive(Serialize)]
struct PointReport<'a> {
    sweep_value: Option<f64>,
    tables: &'a [SummaryTable],
    failures: Vec<&'a str>,
}

#[derive(Serialize)]
struct RunReport<'a> {
    schema_version: u32,
    label: Option<&'a str>,
    config: &'a ExperimentConfig,
    points: Vec<PointReport<'a>>,
}

fn sweep_name(cfg: &ExperimentConfig) -> String {
    cfg.sweep
        .as_ref()
        .and_then(|s| serde_json::to_value(s.param).ok())
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn value_text(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn summary_csv(cfg: &ExperimentConfig, points: &[Point]) -> String {
    let param = sweep_name(cfg);
    let mut s = format!("sweep_param,sweep_value,alpha,{}\n", SummaryTable::csv_header());
    for p in points {
        for t in &p.tables {
            s.push_str(&t.csv_rows(&format!("{param},{},{},", value_text(p.value), t.alpha)));
        }
    }
    s
}

fn pvalues_csv(points: &[Point]) -> String {
    let mut s = String::new();
    for (k, p) in points.iter().enumerate() {
        let dump = pvalue_dump(&p.outcomes);
        let mut lines = dump.lines();
        let header = lines.next().unwrap_or_default();
        if k == 0 {
            let _ = writeln!(s, "sweep_value,{header}");
        }
        for l in lines {
            let _ = writeln!(s, "{},{l}", value_text(p.value));
        }
    }
    s
}

fn summary_text(cfg: &ExperimentConfig, points: &[Point]) -> String {
    let mut s = String::new();
    if let Some(label) = &cfg.label {
        let _ = writeln!(s, "{label}");
    }
    let _ = writeln!(
        s,
        "scenario {:?}  n_s = {}  n_t = {}  d = {}  seed = {}\n",
        cfg.scenario, cfg.n_s, cfg.n_t, cfg.d, cfg.seed
    );
    for p in points {
        if let Some(v) = p.value {
            let _ = writeln!(s, "{} = {v}", sweep_name(cfg));
        }
        for t in &p.tables {
            let _ = writeln!(s, "{}", t.to_text());
        }
    }
    s
}

fn cmd_run(a: &RunArgs, robustness: bool, verbose: u8) -> Outcome {
    let cfg = load_config(a)?;
    let start = Instant::now();
    let points: Vec<Point> = if robustness || cfg.scenario == Scenario::Robustness {
        run_robustness_sweep(&cfg, a.workers)?
            .into_iter()
            .map(|(value, r)| Point {
                value,
                tables: r.tables,
                outcomes: r.run.outcomes,
            })
            .collect()
    } else {
        run_sweep(&cfg, a.workers)?
            .into_iter()
            .map(|(value, r)| Point {
                value,
                tables: vec![r.summary],
                outcomes: r.outcomes,
            })
            .collect()
    };
    if verbose > 0 {
        eprintln!("{} point(s) in {:.1?}", points.len(), start.elapsed());
    }
    let report = RunReport {
        schema_version: SCHEMA_VERSION,
        label: cfg.label.as_deref(),
        config: &cfg,
        points: points
            .iter()
            .map(|p| PointReport {
                sweep_value: p.value,
                tables: &p.tables,
                failures: p.outcomes.iter().flat_map(|o| o.failures.iter().map(String::as_str)).collect(),
            })
            .collect(),
    };
    if verbose > 1 {
        for f in report.points.iter().flat_map(|p| &p.failures) {
            eprintln!("hypothesis skipped: {f}");
        }
    }
    let json = to_json(&report);
    let csv = summary_csv(&cfg, &points);
    let text = summary_text(&cfg, &points);
    if let Some(dir) = &a.out {
        write(dir, "summary.json", &json)?;
        write(dir, "summary.csv", &csv)?;
        write(dir, "summary.txt", &text)?;
        write(dir, "pvalues.csv", &pvalues_csv(&points))?;
    }
    match a.format {
        Format::Text => print!("{text}"),
        Format::Csv => print!("{csv}"),
        Format::Json => print!("{json}"),
    }
    let param = sweep_name(&cfg);
    let mut violations = Vec::new();
    for p in &points {
        for t in &p.tables {
            for m in t.check(&cfg.acceptance) {
                violations.push(match p.value {
                    Some(v) => format!("{param} = {v}: {m}"),
                    None => m,
                });
            }
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            code: 4,
            msg: format!("acceptance bands violated:\n  {}", violations.join("\n  ")),
        })
    }
}

fn cmd_dump(a: &DumpArgs) -> Outcome {
    let input = load_input(&a.input)?;
    let opts = InferOptions {
        gamma: a.gamma.or(input.gamma).unwrap_or(DEFAULT_GAMMA),
        estimate_variance: a.estimate_variance,
    };
    let trace = dump_region(&input.data, a.j, &opts)?;
    let json = to_json(&trace);
    if let Some(dir) = &a.out {
        write(dir, &format!("region_{}.json", a.j), &json)?;
    }
    match a.format {
        Format::Json => print!("{json}"),
        Format::Csv => {
            println!("u,v,lo,hi,anomaly_match");
            for c in &trace.cells {
                println!("{},{},{},{},{}", c.u, c.v, c.interval.lo, c.interval.hi, c.anomaly_match);
            }
        }
        Format::Text => {
            println!("j = {}  z_obs = {}  sigma = {}", trace.j, trace.z_obs, trace.sigma);
            println!("{} cells over [{}, {}]", trace.cells.len(), trace.window.lo, trace.window.hi);
            for iv in trace.region.intervals() {
                println!("  region [{}, {}]", iv.lo, iv.hi);
            }
        }
    }
    Ok(())
}

fn cmd_selftest() -> Outcome {
    let results = cadda::selftest::run_selftest();
    let mut failed = 0;
    for r in &results {
        if r.passed {
            println!("ok    {}", r.name);
        } else {
            failed += 1;
            println!("FAIL  {}: {}", r.name, r.detail);
        }
    }
    println!("{} of {} checks passed", results.len() - failed, results.len());
    if failed == 0 {
        Ok(())
    } else {
        Err(Failure {
            code: 3,
            msg: format!("{failed} selftest check(s) failed"),
        })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match &cli.cmd {
        Cmd::Infer(a) => cmd_infer(a),
        Cmd::Experiment(a) => cmd_run(a, false, cli.verbose),
        Cmd::Robustness(a) => cmd_run(a, true, cli.verbose),
        Cmd::DumpRegion(a) => cmd_dump(a),
        Cmd::Selftest => cmd_selftest(),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
