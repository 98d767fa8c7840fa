//! Logit-transformed proportions with a 0.5 continuity correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An observed effect `y` with its known sampling variance `v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectData {
    pub y: f64,
    pub v: f64,
}

/// Continuity-corrected log-odds of `events` out of `total` and its variance.
///
/// The 0.5 correction is applied to both cells unconditionally.
pub fn logit_effect(events: u64, total: u64) -> Result<EffectData> {
    if total == 0 {
        return Err(Error::InvalidInput("total must be >= 1".into()));
    }
    if events > total {
        return Err(Error::InvalidInput(format!(
            "events ({events}) exceed total ({total})"
        )));
    }
    let a = events as f64 + 0.5;
    let b = (total - events) as f64 + 0.5;
    Ok(EffectData {
        y: (a / b).ln(),
        v: 1.0 / a + 1.0 / b,
    })
}

/// Logistic function, evaluated without overflow for any finite input.
pub fn expit(theta: f64) -> f64 {
    if theta >= 0.0 {
        1.0 / (1.0 + (-theta).exp())
    } else {
        let e = theta.exp();
        e / (1.0 + e)
    }
}

/// Uncorrected log-odds.
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}
