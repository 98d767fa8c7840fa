use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use metareg::io::{FitReport, ScenarioConfig};
use metareg::{generate_replicate, SeedSpec, SimulationSummary};

const BIN: &str = env!("CARGO_BIN_EXE_metareg");

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

/// One simulated replicate of the omitted-interaction scenario, written as
/// a study table on the original (uncentered) scale.
fn write_study_csv(dir: &Path) -> PathBuf {
    let text = std::fs::read_to_string(scenario_path("scenario_a_synthetic.toml")).unwrap();
    let sc = ScenarioConfig::parse(&text)
        .unwrap()
        .into_scenario(Path::new("."))
        .unwrap();
    let rep = generate_replicate(&sc, SeedSpec::new(99, 0));
    let mut csv = String::from("study_id,events,total,year,age\n");
    for i in 0..sc.design.k() {
        csv.push_str(&format!(
            "S{i},{},{},{},{}\n",
            rep.truth.d[i],
            sc.design.sizes[i],
            2005.0 + sc.design.x1[i],
            70.0 + sc.design.x2[i]
        ));
    }
    let path = dir.join("studies.csv");
    std::fs::write(&path, csv).unwrap();
    path
}

#[test]
fn fit_writes_report_that_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_study_csv(dir.path());
    let out = dir.path().join("fit.json");
    let bands = dir.path().join("bands.csv");
    let o = run(&[
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--id",
        "study_id",
        "--moderators",
        "year,age",
        "--interaction",
        "--out",
        out.to_str().unwrap(),
        "--plot-data",
        bands.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("year:age"), "{stdout}");

    let text = std::fs::read_to_string(&out).unwrap();
    let report = FitReport::from_json(&text).unwrap();
    assert_eq!(report.k, 181);
    assert_eq!(report.p, 4);
    assert_eq!(report.n_dropped, 0);
    let again = FitReport::from_json(&report.to_json().unwrap()).unwrap();
    assert_eq!(report, again);
    assert_eq!(report.to_json().unwrap(), text);

    // bands are narrowest near the centre of each moderator
    let csv = std::fs::read_to_string(&bands).unwrap();
    for moderator in ["year", "age"] {
        let rows: Vec<(f64, f64)> = csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').collect::<Vec<_>>())
            .filter(|c| c[0] == moderator)
            .map(|c| {
                (
                    c[1].parse().unwrap(),
                    c[5].parse::<f64>().unwrap() - c[4].parse::<f64>().unwrap(),
                )
            })
            .collect();
        assert_eq!(rows.len(), 50);
        let (at, _) =
            rows.iter()
                .copied()
                .fold((0.0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
        let span = rows.last().unwrap().0 - rows[0].0;
        assert!(at.abs() < 0.25 * span, "{moderator}: narrowest at {at}");
    }
}

#[test]
fn unknown_moderator_lists_columns() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_study_csv(dir.path());
    let o = run(&[
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--moderators",
        "year,height",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        err.contains("height") && err.contains("study_id, events, total, year, age"),
        "{err}"
    );
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "events,total,year\n12,10,2000\n").unwrap();
    let o = run(&[
        "fit",
        "--data",
        bad.to_str().unwrap(),
        "--moderators",
        "year",
    ]);
    assert_eq!(o.status.code(), Some(2));

    let tiny = dir.path().join("tiny.csv");
    std::fs::write(&tiny, "events,total,year\n1,10,2000\n2,10,2001\n").unwrap();
    let o = run(&[
        "fit",
        "--data",
        tiny.to_str().unwrap(),
        "--moderators",
        "year",
    ]);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );

    assert_eq!(run(&["fit"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn zero_replicates_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let scen = scenario_path("scenario_a_synthetic.toml");
    let o = run(&[
        "simulate",
        "--scenario",
        scen.to_str().unwrap(),
        "--reps",
        "0",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("reps"));
    assert!(!dir.path().join("summary.csv").exists());
}

#[test]
fn bad_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.toml");
    std::fs::write(&cfg, "name = \"x\"\ntrue_beta = [1, 2]\n").unwrap();
    let o = run(&[
        "simulate",
        "--scenario",
        cfg.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        err.contains("line") || err.contains("missing field"),
        "{err}"
    );
}

fn simulate(threads: &str, dir: &Path) -> (String, String) {
    let scen = scenario_path("scenario_a_synthetic.toml");
    let o = run(&[
        "simulate",
        "--scenario",
        scen.to_str().unwrap(),
        "--reps",
        "300",
        "--seed",
        "0xC0FFEE",
        "--threads",
        threads,
        "--quiet",
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    (
        std::fs::read_to_string(dir.join("summary.csv")).unwrap(),
        std::fs::read_to_string(dir.join("summary.json")).unwrap(),
    )
}

#[test]
fn summaries_are_identical_across_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(simulate("1", a.path()), simulate("4", b.path()));
}

#[test]
fn csv_cells_match_json_values() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, json) = simulate("2", dir.path());
    let summary: SimulationSummary = serde_json::from_str(&json).unwrap();
    assert_eq!(summary.master_seed, 0xC0FFEE);
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let mut checked = 0;
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        for (col, cell) in cells.iter().enumerate().skip(2) {
            let model = summary.model(header[col]).unwrap();
            let Some(c) = model.coefficient(cells[1]) else {
                assert_eq!(*cell, "-");
                continue;
            };
            let value = match cells[0] {
                "coverage" => c.coverage,
                "median_length" => c.median_length,
                "bias" => c.bias,
                other => panic!("metric {other}"),
            };
            let shown: f64 = cell.parse().unwrap();
            assert!((shown - value).abs() <= 0.5e-4 + 1e-12, "{line}");
            checked += 1;
        }
    }
    assert_eq!(checked, 3 * (2 + 3 + 4));
}
