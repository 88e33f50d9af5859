//! Acceptance run. Each test prints one `criterion N: PASS|FAIL ...` line
//! straight to stdout (bypassing capture) and then asserts.

mod common;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use cadda::engine::{infer_multidim, infer_with, InferOptions, WINDOW_SIGMAS};
use cadda::harness::{
    pvalue_dump, run_robustness_sweep, run_sweep, ExperimentConfig, ExperimentRun, Method, Scenario, SummaryTable,
};
use cadda::ot::solve_ot;
use common::{
    detected_dataset, grid_oracle, local_correctness, optimality_certificate, rng, vertex_enumeration_min,
};
use rand::Rng;

fn report(n: usize, pass: bool, detail: &str) {
    let line = format!("criterion {n}: {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> ExperimentConfig {
    let text = fs::read_to_string(configs_dir().join(name)).expect("bundled config");
    ExperimentConfig::from_json(&text).expect("valid config")
}

fn single(cfg: &ExperimentConfig, workers: usize) -> ExperimentRun {
    let mut runs = run_sweep(cfg, workers).expect("experiment runs");
    assert_eq!(runs.len(), 1);
    runs.pop().unwrap().1
}

fn table1() -> &'static ExperimentRun {
    static RUN: OnceLock<ExperimentRun> = OnceLock::new();
    RUN.get_or_init(|| single(&load("table1.json"), 1))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// One-sample KS statistic against U(0, 1) and its asymptotic p-value with
/// the usual small-sample correction.
fn ks_uniform(mut p: Vec<f64>) -> (f64, f64) {
    p.sort_by(f64::total_cmp);
    let n = p.len() as f64;
    let d = p
        .iter()
        .enumerate()
        .map(|(i, &x)| ((i + 1) as f64 / n - x).max(x - i as f64 / n))
        .fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut q = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        q += if k % 2 == 1 { 2.0 * term } else { -2.0 * term };
        if term < 1e-16 {
            break;
        }
    }
    (d, q.clamp(0.0, 1.0))
}

/// Central 95% acceptance range of Binomial(n, p) for the count.
fn binomial_band(n: usize, p: f64) -> (usize, usize) {
    let ln_pmf = |k: usize| {
        let lg = |x: usize| (1..=x).map(|i| (i as f64).ln()).sum::<f64>();
        lg(n) - lg(k) - lg(n - k) + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()
    };
    let mut cdf = 0.0;
    let (mut lo, mut hi) = (None, n);
    for k in 0..=n {
        cdf += ln_pmf(k).exp();
        if lo.is_none() && cdf >= 0.025 {
            lo = Some(k);
        }
        if cdf >= 0.975 {
            hi = k;
            break;
        }
    }
    (lo.unwrap_or(0), hi)
}

#[test]
fn criterion_01_fpr_control() {
    let s = &table1().summary;
    let r = s.get(Method::Selective);
    let pass = (0.009..=0.105).contains(&r.fpr);
    report(
        1,
        pass,
        &format!(
            "selective FPR {:.4} ({}/{}) in [0.009, 0.105]",
            r.fpr, r.null_rejections, r.null_total
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_02_naive_invalidity() {
    let r = table1().summary.get(Method::Naive);
    let pass = r.fpr >= 0.25;
    report(2, pass, &format!("naive FPR {:.4} ({}/{}) >= 0.25", r.fpr, r.null_rejections, r.null_total));
    assert!(pass);
}

#[test]
fn criterion_03_power_ordering() {
    let runs = run_sweep(&load("tpr_univariate.json"), 0).unwrap();
    let tpr: Vec<f64> = runs.iter().map(|(_, r)| r.summary.get(Method::Selective).tpr).collect();
    let last = &runs.last().unwrap().1;
    let (sel, oc, bonf) = (
        last.summary.get(Method::Selective).tpr,
        last.summary.get(Method::Oc).tpr,
        last.summary.get(Method::Bonferroni).tpr,
    );
    let drops: Vec<f64> = tpr.windows(2).map(|w| w[0] - w[1]).filter(|d| *d > 0.0).collect();
    let monotone = drops.is_empty() || (drops.len() == 1 && drops[0] <= 0.03);
    let planted = |f: fn(&cadda::harness::HypothesisRecord) -> f64| -> Vec<f64> {
        last.outcomes.iter().flat_map(|o| &o.records).filter(|r| r.is_planted).map(f).collect()
    };
    let (med_sel, med_oc) = (median(planted(|r| r.p_selective)), median(planted(|r| r.p_oc)));
    let pass = sel >= oc + 0.05 && bonf <= 0.05 && monotone && med_sel <= med_oc;
    report(
        3,
        pass,
        &format!(
            "at delta 4: selective {sel:.3} vs oc {oc:.3} (+0.05), bonferroni {bonf:.3} <= 0.05; selective TPR over delta 1..4 {tpr:.3?}; median p selective {med_sel:.3e} <= oc {med_oc:.3e}"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_04_null_uniformity() {
    let mut cfg = ExperimentConfig::new(Scenario::FprUnivariate, 30, 20);
    cfg.trials = 600;
    cfg.seed = 4;
    let run = single(&cfg, 0);
    let p: Vec<f64> = run
        .outcomes
        .iter()
        .flat_map(|o| &o.records)
        .filter(|r| !r.is_planted)
        .map(|r| r.p_selective)
        .collect();
    let n = p.len();
    let mean = p.iter().sum::<f64>() / n as f64;
    let mean_ok = (mean - 0.5).abs() <= 3.0 / (12.0 * n as f64).sqrt();
    let (d, pv) = ks_uniform(p);
    let pass = n >= 500 && pv > 0.01 && mean_ok;
    report(
        4,
        pass,
        &format!("{n} null selective p-values, KS D = {d:.4}, p = {pv:.3} > 0.01; mean {mean:.4}"),
    );
    assert!(pass);
}

#[test]
fn criterion_05_region_oracle() {
    let opts = InferOptions::default();
    let mut r = rng(5);
    let (mut checked, mut exempt, mut hyps, mut bad) = (0, 0, 0, Vec::new());
    for seed in 0..20 {
        let (n_s, n_t) = (r.random_range(5..=20), r.random_range(3..=8));
        let (ds, set) = detected_dataset(5000 + seed, n_s, n_t, 1);
        for &j in &set.indices {
            let g = grid_oracle(&ds, j, &opts, 1000);
            hyps += 1;
            checked += g.checked;
            exempt += g.exempt;
            if !g.mismatches.is_empty() {
                bad.push(format!("seed {seed} j {j}: {}", g.mismatches[0]));
            }
        }
    }
    let pass = bad.is_empty();
    report(
        5,
        pass,
        &format!(
            "{hyps} hypotheses on 20 datasets, {checked} grid points over +-{WINDOW_SIGMAS} sigma, {exempt} exempt, {} mismatching",
            bad.len()
        ),
    );
    assert!(pass, "{bad:?}");
}

#[test]
fn criterion_06_lp_correctness() {
    let mut r = rng(6);
    let mut worst: f64 = 0.0;
    let mut small = 0;
    for n_s in 1..=4 {
        for n_t in 1..=4 {
            for _ in 0..10 {
                let s: Vec<f64> = (0..n_s).map(|_| r.random_range(-2.0..2.0)).collect();
                let t: Vec<f64> = (0..n_t).map(|_| r.random_range(0.0..4.0)).collect();
                let p = cadda::ot::build_cost(&s, &t).unwrap();
                let sol = solve_ot(&p).unwrap();
                worst = worst.max((sol.objective - vertex_enumeration_min(n_s, n_t, &p.cost)).abs());
                small += 1;
            }
        }
    }
    let mut certs = Vec::new();
    for (n_s, n_t) in [(10, 6), (25, 10), (50, 25), (100, 25), (150, 45), (30, 60)] {
        let s: Vec<f64> = (0..n_s).map(|_| r.random_range(-2.0..2.0)).collect();
        let t: Vec<f64> = (0..n_t).map(|_| r.random_range(0.0..4.0)).collect();
        let p = cadda::ot::build_cost(&s, &t).unwrap();
        certs.push(optimality_certificate(&p, &solve_ot(&p).unwrap()));
    }
    let cert_ok = certs.iter().all(|c| c.is_ok());
    let pass = worst <= 1e-9 && cert_ok;
    report(
        6,
        pass,
        &format!(
            "{small} instances up to 4x4 match vertex enumeration (max gap {worst:.1e}); {}/{} larger certificates hold",
            certs.iter().filter(|c| c.is_ok()).count(),
            certs.len()
        ),
    );
    assert!(pass, "{certs:?}");
}

#[test]
fn criterion_07_event_local_correctness() {
    let opts = InferOptions::default();
    let mut r = rng(7);
    let (mut cells, mut narrow, mut points, mut bounds, mut bad) = (0, 0, 0, 0, Vec::new());
    for seed in 0..50 {
        let (n_s, n_t) = (r.random_range(5..=20), r.random_range(3..=8));
        let (ds, set) = detected_dataset(7000 + seed, n_s, n_t, 1);
        let rep = local_correctness(&ds, set.indices[0], &opts, 20, &mut r);
        cells += rep.cells;
        narrow += rep.narrow;
        points += rep.interior_points;
        bounds += rep.boundaries;
        bad.extend(rep.failures.into_iter().map(|f| format!("seed {seed}: {f}")));
    }
    let pass = bad.is_empty();
    report(
        7,
        pass,
        &format!(
            "50 datasets, {cells} cells ({narrow} narrower than 2e-6 sigma), {points} interior re-runs, {bounds} boundaries, {} failures",
            bad.len()
        ),
    );
    assert!(pass, "{:?}", &bad[..bad.len().min(5)]);
}

#[test]
fn criterion_08_robustness() {
    let bound = |a: f64| a + 3.0 * (a * (1.0 - a) / 120.0).sqrt();
    let mut parts = Vec::new();
    let mut pass = true;
    for name in [
        "robustness_laplace.json",
        "robustness_skew_normal.json",
        "robustness_t20.json",
        "robustness_estimated_variance.json",
    ] {
        let cfg = load(name);
        let reports = run_robustness_sweep(&cfg, 0).unwrap();
        let tables = &reports[0].1.tables;
        let rates: Vec<String> = tables
            .iter()
            .map(|t| {
                let f = t.get(Method::Selective).fpr;
                let ok = f <= bound(t.alpha);
                pass &= ok;
                format!("{:.3}@{}{}", f, t.alpha, if ok { "" } else { "!" })
            })
            .collect();
        parts.push(format!("{} {}", name.trim_start_matches("robustness_").trim_end_matches(".json"), rates.join(" ")));
    }
    report(
        8,
        pass,
        &format!(
            "selective FPR vs bounds {:.4}@0.05, {:.4}@0.1: {} (! = over)",
            bound(0.05),
            bound(0.1),
            parts.join("; ")
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_multidim_consistency() {
    let opts = InferOptions::default();
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    for seed in 0..20 {
        let (ds, _) = detected_dataset(9000 + seed, 30, 10, 1);
        let uni = infer_with(&ds, &opts).unwrap();
        let multi = infer_multidim(&ds, &opts).unwrap();
        assert_eq!(uni.len(), multi.len());
        for (a, b) in uni.iter().zip(&multi) {
            assert_eq!(a.j, b.j);
            for (x, y) in [
                (a.statistic.abs(), b.statistic.abs()),
                (a.p_naive, b.p_naive),
                (a.p_oc, b.p_oc),
                (a.p_selective, b.p_selective),
            ] {
                worst = worst.max((x - y).abs());
            }
            compared += 1;
        }
    }
    let cfg = load("fpr_multidim.json");
    let s = single(&cfg, 0).summary;
    let r = s.get(Method::Selective);
    let (lo, hi) = binomial_band(r.null_total, cfg.alpha);
    let in_band = (lo..=hi).contains(&r.null_rejections);
    let pass = worst <= 1e-10 && in_band;
    report(
        9,
        pass,
        &format!(
            "d = 1 paths agree on {compared} hypotheses (max diff {worst:.1e}); d = 10 null FPR {:.4} ({}/{}), 95% band [{lo}, {hi}] around {}",
            r.fpr, r.null_rejections, r.null_total, cfg.alpha
        ),
    );
    assert!(pass);
}

fn csv_bytes(cfg: &ExperimentConfig, workers: usize) -> String {
    let mut s = format!("sweep_value,alpha,{}\n", SummaryTable::csv_header());
    let mut dumps = String::new();
    let mut add = |v: Option<f64>, tables: &[&SummaryTable], run: &ExperimentRun| {
        let v = v.map(|x| x.to_string()).unwrap_or_default();
        for t in tables {
            s.push_str(&t.csv_rows(&format!("{v},{},", t.alpha)));
        }
        dumps.push_str(&pvalue_dump(&run.outcomes));
    };
    if cfg.scenario == Scenario::Robustness {
        for (v, rep) in run_robustness_sweep(cfg, workers).unwrap() {
            add(v, &rep.tables.iter().collect::<Vec<_>>(), &rep.run);
        }
    } else {
        for (v, run) in run_sweep(cfg, workers).unwrap() {
            add(v, &[&run.summary], &run);
        }
    }
    s + &dumps
}

#[test]
fn criterion_10_determinism() {
    let mut names: Vec<String> = fs::read_dir(configs_dir())
        .unwrap()
        .filter_map(|e| {
            let p = e.unwrap().path();
            (p.extension().is_some_and(|x| x == "json")).then(|| p.file_name().unwrap().to_string_lossy().into_owned())
        })
        .collect();
    names.sort();
    let mut differing = Vec::new();
    for name in &names {
        let mut cfg = load(name);
        let full = name == "table1.json";
        if !full {
            cfg.trials = cfg.trials.min(12);
        }
        let a = if full {
            let run = table1();
            let mut s = format!("sweep_value,alpha,{}\n", SummaryTable::csv_header());
            s.push_str(&run.summary.csv_rows(&format!(",{},", run.summary.alpha)));
            s + &pvalue_dump(&run.outcomes)
        } else {
            csv_bytes(&cfg, 1)
        };
        let b = csv_bytes(&cfg, 2);
        if a != b {
            differing.push(name.clone());
        }
    }
    let pass = differing.is_empty();
    report(
        10,
        pass,
        &format!(
            "{} bundled configs run twice (1 vs 2 workers; table1 at full length, others capped at 12 trials): {} differ {differing:?}",
            names.len(),
            differing.len()
        ),
    );
    assert!(pass);
}
