//! Fit reports (JSON) and prediction-band plot data (CSV).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::estimation::{Convergence, FitResult};
use crate::inference::{confidence_intervals, predict_at, PredictionBand};
use crate::model::{Centering, ModelSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientReport {
    pub term: String,
    pub estimate: f64,
    pub std_error: f64,
    pub lower: f64,
    pub upper: f64,
    pub df: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenteringReport {
    pub moderator: String,
    pub offset: f64,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: String,
    pub centering: Centering,
    pub level: f64,
    pub k: usize,
    pub p: usize,
    pub n_dropped: usize,
    pub tau2: f64,
    pub kh_scale: f64,
    pub coefficients: Vec<CoefficientReport>,
    pub convergence: Convergence,
    pub moderators: Vec<CenteringReport>,
}

impl FitReport {
    pub fn new(fit: &FitResult, spec: &ModelSpec, level: f64, n_dropped: usize) -> Result<Self> {
        let cis = confidence_intervals(fit, level)?;
        let coefficients = fit
            .terms
            .iter()
            .zip(&cis)
            .map(|(term, ci)| CoefficientReport {
                term: term.clone(),
                estimate: ci.estimate,
                std_error: ci.std_error,
                lower: ci.lower,
                upper: ci.upper,
                df: ci.df,
            })
            .collect();
        let moderators = fit
            .moderators
            .iter()
            .enumerate()
            .map(|(i, m)| CenteringReport {
                moderator: m.clone(),
                offset: fit.center_offsets[i],
                median: fit.medians[i],
            })
            .collect();
        Ok(Self {
            model: spec.formula(),
            centering: spec.centering,
            level,
            k: fit.k,
            p: fit.p(),
            n_dropped,
            tau2: fit.tau2,
            kh_scale: fit.kh_scale,
            coefficients,
            convergence: fit.convergence,
            moderators,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn coefficient(&self, term: &str) -> Option<&CoefficientReport> {
        self.coefficients.iter().find(|c| c.term == term)
    }

    /// Plain-text table for the terminal.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let pct = self.level * 100.0;
        let _ = writeln!(
            out,
            "model: {}  (centering: {:?})",
            self.model, self.centering
        );
        let _ = writeln!(
            out,
            "k = {}  p = {}  df = {}  dropped = {}",
            self.k,
            self.p,
            self.k - self.p,
            self.n_dropped
        );
        let _ = writeln!(
            out,
            "tau2 = {:.4}  KH scale q = {:.4}",
            self.tau2, self.kh_scale
        );
        let _ = writeln!(
            out,
            "{:<16} {:>10} {:>10} {:>10} {:>10}",
            "term",
            "estimate",
            "std.err",
            format!("{pct:.0}% lo"),
            format!("{pct:.0}% hi")
        );
        for c in &self.coefficients {
            let _ = writeln!(
                out,
                "{:<16} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
                c.term, c.estimate, c.std_error, c.lower, c.upper
            );
        }
        for m in &self.moderators {
            let _ = writeln!(
                out,
                "centered {}: offset {:.4}, median (centered) {:.4}",
                m.moderator, m.offset, m.median
            );
        }
        out
    }
}

/// Prediction bands along each moderator, others held at their median.
pub fn prediction_bands(
    fit: &FitResult,
    columns: &[Vec<f64>],
    level: f64,
    points: usize,
) -> Result<Vec<PredictionBand>> {
    fit.moderators
        .iter()
        .zip(columns)
        .map(|(m, col)| {
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let n = points.max(2);
            let grid: Vec<f64> = (0..n)
                .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                .collect();
            predict_at(fit, m, &grid, &BTreeMap::new(), level)
        })
        .collect()
}

/// CSV with one row per grid node; raw-scale values add back the offsets.
pub fn bands_to_csv(fit: &FitResult, bands: &[PredictionBand]) -> String {
    let mut out = String::from(
        "moderator,value_centered,value_raw,predicted,lower,upper,fixed_moderator,fixed_value_centered\n",
    );
    for band in bands {
        let offset = fit
            .moderators
            .iter()
            .position(|m| *m == band.moderator)
            .map_or(0.0, |i| fit.center_offsets[i]);
        let (fixed_name, fixed_value) = band
            .fixed_at
            .iter()
            .next()
            .map_or((String::new(), String::new()), |(k, v)| {
                (k.clone(), v.to_string())
            });
        for pt in &band.grid {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                band.moderator,
                pt.value,
                pt.value + offset,
                pt.predicted,
                pt.lower,
                pt.upper,
                fixed_name,
                fixed_value
            );
        }
    }
    out
}
