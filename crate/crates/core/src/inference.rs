//! Knapp-Hartung scaling, t quantiles, coefficient intervals and
//! prediction bands.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::FitResult;
use crate::special::t_upper_quantile;

/// Smallest reported standard error; guards the `q = 0` perfect-fit case.
pub const MIN_STD_ERROR: f64 = 1e-12;

/// Knapp-Hartung variant. The default leaves `q` untruncated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct KnappHartung {
    /// Use `max(1, q)` instead of `q`.
    pub truncate: bool,
}

impl KnappHartung {
    pub fn apply(&self, q: f64) -> f64 {
        if self.truncate {
            q.max(1.0)
        } else {
            q
        }
    }
}

/// `q = sum(w r^2) / (k - p)`.
pub fn kh_scale(residuals: &[f64], weights: &[f64], k: usize, p: usize) -> Result<f64> {
    if k <= p {
        return Err(Error::InsufficientStudies { k, p });
    }
    if residuals.len() != k || weights.len() != k {
        return Err(Error::InvalidInput(format!(
            "expected {k} residuals and weights, got {} and {}",
            residuals.len(),
            weights.len()
        )));
    }
    let ss: f64 = residuals.iter().zip(weights).map(|(r, w)| w * r * r).sum();
    Ok(ss / (k - p) as f64)
}

/// Quantile of Student-t with `df` degrees of freedom.
pub fn t_quantile(prob: f64, df: u64) -> Result<f64> {
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::InvalidInput(format!(
            "probability must lie in (0, 1), got {prob}"
        )));
    }
    if df == 0 {
        return Err(Error::InvalidInput(
            "degrees of freedom must be >= 1".into(),
        ));
    }
    let df = df as f64;
    Ok(if prob > 0.5 {
        t_upper_quantile(1.0 - prob, df)
    } else if prob < 0.5 {
        -t_upper_quantile(prob, df)
    } else {
        0.0
    })
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "level must lie in (0, 1), got {level}"
        )))
    }
}

fn critical_value(level: f64, df: usize) -> Result<f64> {
    check_level(level)?;
    t_quantile(1.0 - 0.5 * (1.0 - level), df as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub df: usize,
    pub std_error: f64,
    /// The standard error was raised to `MIN_STD_ERROR`.
    pub floored: bool,
}

impl ConfidenceInterval {
    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

fn interval(estimate: f64, variance: f64, crit: f64, level: f64, df: usize) -> ConfidenceInterval {
    let raw = variance.max(0.0).sqrt();
    let floored = !(raw >= MIN_STD_ERROR);
    let std_error = if floored { MIN_STD_ERROR } else { raw };
    ConfidenceInterval {
        estimate,
        lower: estimate - crit * std_error,
        upper: estimate + crit * std_error,
        level,
        df,
        std_error,
        floored,
    }
}

/// Knapp-Hartung intervals `beta_j +/- t(1 - alpha/2, k - p) * sqrt(q C_jj)`.
pub fn confidence_intervals(fit: &FitResult, level: f64) -> Result<Vec<ConfidenceInterval>> {
    let crit = critical_value(level, fit.df)?;
    Ok(fit
        .beta
        .iter()
        .enumerate()
        .map(|(j, &b)| {
            interval(
                b,
                fit.kh_scale * fit.cov_unscaled[j][j],
                crit,
                level,
                fit.df,
            )
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    pub value: f64,
    pub predicted: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionBand {
    pub moderator: String,
    pub grid: Vec<BandPoint>,
    pub fixed_at: BTreeMap<String, f64>,
    pub level: f64,
}

/// Mean prediction along one moderator with the others held fixed.
///
/// Grid values and `others_at` are on the centered scale; moderators not
/// listed in `others_at` are held at their column median.
pub fn predict_at(
    fit: &FitResult,
    moderator: &str,
    grid: &[f64],
    others_at: &BTreeMap<String, f64>,
    level: f64,
) -> Result<PredictionBand> {
    let pos = fit
        .moderators
        .iter()
        .position(|m| m == moderator)
        .ok_or_else(|| Error::UnknownModerator {
            name: moderator.to_string(),
            available: fit.moderators.clone(),
        })?;
    if let Some(name) = others_at.keys().find(|k| !fit.moderators.contains(k)) {
        return Err(Error::UnknownModerator {
            name: name.clone(),
            available: fit.moderators.clone(),
        });
    }
    let crit = critical_value(level, fit.df)?;
    let cov = fit.cov_unscaled_matrix();

    let mut fixed_at = BTreeMap::new();
    let mut values: Vec<f64> = Vec::with_capacity(fit.moderators.len());
    for (i, m) in fit.moderators.iter().enumerate() {
        let v = if i == pos {
            0.0
        } else {
            let v = others_at.get(m).copied().unwrap_or(fit.medians[i]);
            fixed_at.insert(m.clone(), v);
            v
        };
        values.push(v);
    }

    let points = grid
        .iter()
        .map(|&g| {
            values[pos] = g;
            let x = covariate_row(fit, &values);
            let predicted = fit.predict_row(&x);
            let ci = interval(
                predicted,
                fit.kh_scale * cov.quad_form(&x),
                crit,
                level,
                fit.df,
            );
            BandPoint {
                value: g,
                predicted,
                lower: ci.lower,
                upper: ci.upper,
            }
        })
        .collect();

    Ok(PredictionBand {
        moderator: moderator.to_string(),
        grid: points,
        fixed_at,
        level,
    })
}

fn covariate_row(fit: &FitResult, values: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(fit.p());
    x.push(1.0);
    x.extend_from_slice(values);
    if fit.interaction {
        x.push(values[0] * values[1]);
    }
    x
}
