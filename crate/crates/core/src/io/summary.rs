//! Simulation summary output: Table-style CSV and full-precision JSON.

use std::fmt::Write as _;

use crate::error::Result;
use crate::simulation::SimulationSummary;

/// Decimal places shown in the CSV table.
pub const CSV_DECIMALS: usize = 4;

const METRICS: [&str; 3] = ["coverage", "median_length", "bias"];

/// Terms in first-seen order across all fitted models.
fn all_terms(summary: &SimulationSummary) -> Vec<String> {
    let mut terms: Vec<String> = Vec::new();
    for m in &summary.models {
        for t in &m.terms {
            if !terms.contains(t) {
                terms.push(t.clone());
            }
        }
    }
    terms
}

/// One row per (metric, term), one column per fitted model.
///
/// `-` marks a term the model does not contain; `NA` a model whose
/// replicates were all excluded.
pub fn summary_csv(summary: &SimulationSummary) -> String {
    let mut out = String::from("metric,term");
    for m in &summary.models {
        out.push(',');
        out.push_str(&m.name);
    }
    out.push('\n');
    for metric in METRICS {
        for term in all_terms(summary) {
            let _ = write!(out, "{metric},{term}");
            for m in &summary.models {
                out.push(',');
                if !m.terms.contains(&term) {
                    out.push('-');
                    continue;
                }
                match m.coefficient(&term) {
                    None => out.push_str("NA"),
                    Some(c) => {
                        let v = match metric {
                            "coverage" => c.coverage,
                            "median_length" => c.median_length,
                            _ => c.bias,
                        };
                        let _ = write!(out, "{}", format_cell(v));
                    }
                }
            }
            out.push('\n');
        }
    }
    out
}

pub fn format_cell(v: f64) -> String {
    let s = format!("{v:.CSV_DECIMALS$}");
    // avoid "-0.0000"
    if s.trim_start_matches('-')
        .chars()
        .all(|c| c == '0' || c == '.')
    {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

pub fn summary_json(summary: &SimulationSummary) -> Result<String> {
    Ok(serde_json::to_string_pretty(summary)? + "\n")
}

/// Human-readable version of the table for the terminal.
pub fn render_summary(summary: &SimulationSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "scenario {} ({} design, k = {}, reps = {}, seed = {:#x})",
        summary.scenario, summary.design_source, summary.k, summary.n_reps, summary.master_seed
    );
    let _ = write!(out, "{:<14} {:<10}", "metric", "term");
    for m in &summary.models {
        let _ = write!(out, " {:>16}", m.name);
    }
    out.push('\n');
    for line in summary_csv(summary).lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        let _ = write!(out, "{:<14} {:<10}", cells[0], cells[1]);
        for c in &cells[2..] {
            let _ = write!(out, " {:>16}", c);
        }
        out.push('\n');
    }
    for m in &summary.models {
        let _ = writeln!(
            out,
            "{}: converged {}/{}, excluded {}, tau2 on boundary {}",
            m.name, m.n_converged, m.n_reps, m.n_excluded, m.n_boundary
        );
    }
    out
}
