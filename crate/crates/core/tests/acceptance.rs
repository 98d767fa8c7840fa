//! Acceptance criteria, one test per criterion.
//!
//! Criteria 1, 2 and the value-reproduction half of 4 need the prepared
//! public study table (see `scripts/prepare_dataset.py`). They are ignored
//! by default; run them with
//!
//! ```text
//! METAREG_DATASET=/path/to/one_year_mortality.csv \
//!     cargo test --release --test acceptance -- --ignored --nocapture
//! ```
//!
//! Criteria 3 and 4 use the dataset when `METAREG_DATASET` is set and the
//! bundled synthetic design otherwise.

mod common;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

use metareg::io::{summary_csv, summary_json, FitReport, ScenarioConfig};
use metareg::{
    reml_tau2, run_simulation, t_quantile, DesignMatrix, EffectData, RemlSettings, Scenario,
    SimulationSummary,
};

use common::{dense_restricted_loglik, grid_argmax, random_instance};

fn report(criterion: u32, ok: bool, detail: &str) {
    println!(
        "criterion {criterion}: {} — {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {criterion} failed: {detail}");
}

fn dataset_path() -> Option<PathBuf> {
    std::env::var_os("METAREG_DATASET").map(PathBuf::from)
}

fn require_dataset() -> PathBuf {
    let path = dataset_path()
        .expect("set METAREG_DATASET to the prepared study table (scripts/prepare_dataset.py)");
    assert!(path.exists(), "{} does not exist", path.display());
    path
}

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn load_scenario(file: &str, data: Option<&Path>) -> Scenario {
    let (mut cfg, base) = ScenarioConfig::load(&scenarios_dir().join(file)).unwrap();
    if let Some(path) = data {
        cfg.data = Some(path.to_path_buf());
    }
    cfg.into_scenario(&base).unwrap()
}

/// Scenario runs are shared between criteria; each (file, design) pair
/// is simulated once per test process.
type Run = Arc<(SimulationSummary, Duration)>;

fn simulate(file: &str, dataset: Option<&Path>, threads: usize) -> Run {
    static CACHE: OnceLock<Mutex<HashMap<String, Arc<OnceLock<Run>>>>> = OnceLock::new();
    let key = format!("{file}|{dataset:?}|{threads}");
    let cell = CACHE
        .get_or_init(Default::default)
        .lock()
        .unwrap()
        .entry(key)
        .or_default()
        .clone();
    cell.get_or_init(|| {
        let sc = load_scenario(file, dataset);
        let start = Instant::now();
        let summary = run_simulation(&sc, threads).unwrap();
        Arc::new((summary, start.elapsed()))
    })
    .clone()
}

/// Scenario file and label for criteria that accept either design.
fn either_design(letter: char) -> (String, Option<PathBuf>, &'static str) {
    match dataset_path() {
        Some(p) => (
            format!("scenario_{letter}_dataset.toml"),
            Some(p),
            "dataset design",
        ),
        None => (
            format!("scenario_{letter}_synthetic.toml"),
            None,
            "synthetic design",
        ),
    }
}

fn metric(s: &SimulationSummary, model: &str, term: &str) -> (f64, f64, f64) {
    let c = s.model(model).unwrap().coefficient(term).unwrap();
    (c.coverage, c.median_length, c.bias)
}

const TERMS: [&str; 4] = ["intercept", "year", "age", "year:age"];

#[test]
#[ignore = "needs the prepared dataset; set METAREG_DATASET"]
fn criterion_1_interaction_fit_reproduction() {
    let data = require_dataset();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fit.json");
    let start = Instant::now();
    let o = Command::new(env!("CARGO_BIN_EXE_metareg"))
        .args([
            "fit",
            "--data",
            data.to_str().unwrap(),
            "--moderators",
            "year,age",
            "--interaction",
        ])
        .args(["--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    let elapsed = start.elapsed();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rep = FitReport::from_json(&std::fs::read_to_string(&out).unwrap()).unwrap();

    let beta = [-1.1477, -0.0066, 0.0333, -0.0018];
    let ci = [
        (-1.2271, -1.0684),
        (-0.0185, 0.0052),
        (0.0208, 0.0457),
        (-0.0035, -0.0001),
    ];
    let mut ok = rep.k == 181 && elapsed < Duration::from_secs(1);
    let mut detail = format!("k = {}, {:.3} s;", rep.k, elapsed.as_secs_f64());
    for (i, term) in TERMS.iter().enumerate() {
        let c = rep.coefficient(term).unwrap();
        ok &= (c.estimate - beta[i]).abs() <= 0.0005;
        ok &= (c.lower - ci[i].0).abs() <= 0.001 && (c.upper - ci[i].1).abs() <= 0.001;
        detail += &format!(" {term} {:.4} [{:.4}, {:.4}]", c.estimate, c.lower, c.upper);
    }
    report(1, ok, &detail);
}

#[test]
#[ignore = "needs the prepared dataset; set METAREG_DATASET"]
fn criterion_2_scenario_a_coverage() {
    let data = require_dataset();
    let run = simulate("scenario_a_dataset.toml", Some(&data), 1);
    let (s, elapsed) = (&run.0, run.1);
    let expected = [
        ("two_interaction", "intercept", 0.9447),
        ("two_interaction", "year", 0.9495),
        ("two_interaction", "age", 0.9527),
        ("two_interaction", "year:age", 0.9502),
        ("two", "intercept", 0.8979),
        ("two", "age", 0.9062),
        ("one", "year", 0.7718),
    ];
    let mut ok = s.n_reps == 10_000 && elapsed <= Duration::from_secs(300);
    let mut detail = format!("{:.1} s;", elapsed.as_secs_f64());
    for (model, term, want) in expected {
        let got = metric(s, model, term).0;
        ok &= (got - want).abs() <= 0.015;
        detail += &format!(" {model}/{term} {got:.4} (target {want});");
    }
    report(2, ok, &detail);
}

#[test]
fn criterion_3_scenario_a_bias_ordering() {
    let (file, data, label) = either_design('a');
    let run = simulate(&file, data.as_deref(), 4);
    let s = &run.0;
    let inter: Vec<f64> = ["year", "age", "year:age"]
        .iter()
        .map(|t| metric(s, "two_interaction", t).2)
        .collect();
    let one = metric(s, "one", "year").2;
    let two = metric(s, "two", "year").2;
    let ok = inter.iter().all(|b| b.abs() <= 0.001) && one < 0.0 && one.abs() >= 3.0 * two.abs();
    report(
        3,
        ok,
        &format!(
            "{label}: interaction-model biases {inter:.5?}; one-moderator year bias {one:.4} vs two-moderator {two:.4}"
        ),
    );
}

#[test]
fn criterion_4_scenario_b_calibration() {
    let (file, data, label) = either_design('b');
    let run = simulate(&file, data.as_deref(), 4);
    let s = &run.0;
    let mut ok = true;
    let (mut lo, mut hi) = (1.0f64, 0.0f64);
    for m in &s.models {
        for c in &m.coefficients {
            ok &= (0.94..=0.96).contains(&c.coverage);
            lo = lo.min(c.coverage);
            hi = hi.max(c.coverage);
        }
    }
    let l = |model, term| metric(s, model, term).1;
    ok &= l("two_interaction", "intercept") > l("one", "intercept");
    ok &= l("two_interaction", "year") > l("one", "year");
    report(
        4,
        ok,
        &format!(
            "{label}: coverages in [{lo:.4}, {hi:.4}]; intercept length {:.4} > {:.4}; year length {:.4} > {:.4}",
            l("two_interaction", "intercept"),
            l("one", "intercept"),
            l("two_interaction", "year"),
            l("one", "year")
        ),
    );
}

#[test]
#[ignore = "needs the prepared dataset; set METAREG_DATASET"]
fn criterion_4_scenario_b_interval_lengths_reproduced() {
    let data = require_dataset();
    let run = simulate("scenario_b_dataset.toml", Some(&data), 4);
    let s = &run.0;
    let pairs = [
        ("two_interaction", "intercept", 0.1663),
        ("one", "intercept", 0.1619),
        ("two_interaction", "year", 0.0249),
        ("one", "year", 0.0240),
    ];
    let mut ok = true;
    let mut detail = String::new();
    for (model, term, want) in pairs {
        let got = metric(s, model, term).1;
        ok &= (got - want).abs() <= 0.002;
        detail += &format!(" {model}/{term} {got:.4} (target {want});");
    }
    report(4, ok, &detail);
}

#[test]
fn criterion_5_synthetic_design_fallback() {
    let a = simulate("scenario_a_synthetic.toml", None, 4);
    let b = simulate("scenario_b_synthetic.toml", None, 4);
    let mut ok = a.0.n_reps == 10_000 && b.0.n_reps == 10_000;
    let mut detail = String::from("true-model coverages");
    for (s, model) in [(&a.0, "two_interaction"), (&b.0, "one")] {
        for c in &s.model(model).unwrap().coefficients {
            ok &= (0.94..=0.96).contains(&c.coverage);
            detail += &format!(" {}/{model}/{} {:.4}", s.scenario, c.term, c.coverage);
        }
    }
    let one_year = metric(&a.0, "one", "year").0;
    let two_b0 = metric(&a.0, "two", "intercept").0;
    let two_b2 = metric(&a.0, "two", "age").0;
    ok &= one_year < 0.85 && two_b0 < 0.93 && two_b2 < 0.93;
    detail += &format!(
        "; A one-moderator year {one_year:.4} (< 0.85); A two-moderator intercept {two_b0:.4}, age {two_b2:.4} (< 0.93)"
    );
    report(5, ok, &detail);
}

#[test]
fn criterion_6_reml_matches_grid_search() {
    let settings = RemlSettings {
        tau2_max: Some(5.0),
        ..RemlSettings::default()
    };
    let mut worst: f64 = 0.0;
    for i in 0..100u64 {
        let k = 5 + (i % 16) as usize;
        let p = 1 + (i % 4) as usize;
        let inst = random_instance(1000 + i, k, p);
        let (tau2, _) = reml_tau2(&inst.design, &inst.effects, &settings).unwrap();
        let grid = grid_argmax(
            |t| dense_restricted_loglik(t, &inst.design, &inst.effects),
            5.0,
            1e-4,
        );
        worst = worst.max((tau2 - grid).abs());
    }
    report(
        6,
        worst <= 1e-4,
        &format!("100 instances, largest |REML - grid| = {worst:.2e}"),
    );
}

// references are quoted to the digits of the high-precision tool
#[test]
#[allow(clippy::excessive_precision)]
fn criterion_7_t_quantile_accuracy() {
    let reference = [
        (1, 12.706204736174704646),
        (2, 4.3026527297494638523),
        (5, 2.5705818356363155147),
        (30, 2.04227245630123831),
        (177, 1.9734572015938037092),
    ];
    let mut worst: f64 = 0.0;
    for (df, want) in reference {
        worst = worst.max((t_quantile(0.975, df).unwrap() - want).abs());
    }
    let q1 = t_quantile(0.975, 1).unwrap();
    let q2 = t_quantile(0.975, 2).unwrap();
    let spot = format!("{q1:.5}") == "12.70620" && format!("{q2:.5}") == "4.30265";
    report(
        7,
        worst <= 1e-8 && spot,
        &format!("largest error {worst:.2e}; spot values {q1:.5}, {q2:.5}"),
    );
}

#[test]
fn criterion_8_determinism_across_threads() {
    let (mut cfg, base) =
        ScenarioConfig::load(&scenarios_dir().join("scenario_a_synthetic.toml")).unwrap();
    cfg.reps = 1000;
    let sc = cfg.into_scenario(&base).unwrap();
    let one = run_simulation(&sc, 1).unwrap();
    let four = run_simulation(&sc, 4).unwrap();
    let same = summary_csv(&one) == summary_csv(&four)
        && summary_json(&one).unwrap() == summary_json(&four).unwrap();
    report(
        8,
        same,
        "1000 replicates, 1 vs 4 threads: CSV and JSON byte-identical",
    );
}

#[test]
fn criterion_9_closed_form_reml() {
    let design = DesignMatrix::intercept(5);
    let effects: Vec<EffectData> = (0..5)
        .map(|i| EffectData {
            y: i as f64,
            v: 1.0,
        })
        .collect();
    let (tau2, _) = reml_tau2(&design, &effects, &RemlSettings::default()).unwrap();
    report(9, (tau2 - 1.5).abs() <= 1e-8, &format!("tau2 = {tau2:.12}"));
}
