//! Inverse-variance weighted least squares and REML estimation of the
//! between-study variance.

use serde::{Deserialize, Serialize};

use crate::effects::EffectData;
use crate::error::{Error, Result};
use crate::inference::{kh_scale, KnappHartung};
use crate::linalg::{scaled_condition, Cholesky, SquareMatrix};
use crate::model::{build_design, Dataset, DesignMatrix, ModelSpec};

/// Condition-number guard for `X'WX` (after unit-diagonal scaling).
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct WlsSolution {
    pub beta: Vec<f64>,
    /// `(X'WX)^-1`
    pub cov_unscaled: SquareMatrix,
    pub residuals: Vec<f64>,
    /// `log det(X'WX)`
    pub log_det_xtwx: f64,
}

/// Weighted least squares `(X'WX)^-1 X'Wy` through a Cholesky factorization.
pub fn wls_fit(design: &DesignMatrix, y: &[f64], weights: &[f64]) -> Result<WlsSolution> {
    let k = design.nrows();
    let p = design.ncols();
    if y.len() != k || weights.len() != k {
        return Err(Error::InvalidInput(format!(
            "design has {k} rows but got {} outcomes and {} weights",
            y.len(),
            weights.len()
        )));
    }
    if k < p {
        return Err(Error::InsufficientStudies { k, p });
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "weights must be positive and finite, got {w}"
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite outcome".into()));
    }

    let mut xtwx = SquareMatrix::zeros(p);
    let mut xtwy = vec![0.0; p];
    for ((row, &w), &yi) in design.rows().zip(weights).zip(y) {
        for a in 0..p {
            let wa = w * row[a];
            xtwy[a] += wa * yi;
            for b in 0..=a {
                xtwx[(a, b)] += wa * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            xtwx[(b, a)] = xtwx[(a, b)];
        }
    }

    let condition = scaled_condition(&xtwx);
    if condition > MAX_CONDITION {
        return Err(singular_design(design, &xtwx, condition));
    }
    let chol =
        Cholesky::factor(&xtwx).map_err(|_| singular_design(design, &xtwx, f64::INFINITY))?;
    let beta = chol.solve(&xtwy);
    let residuals = design
        .rows()
        .zip(y)
        .map(|(row, yi)| yi - dot(row, &beta))
        .collect();
    Ok(WlsSolution {
        beta,
        cov_unscaled: chol.inverse(),
        residuals,
        log_det_xtwx: chol.log_det(),
    })
}

/// Names the first column that is (nearly) a combination of earlier ones,
/// plus the earlier columns it loads on.
fn singular_design(design: &DesignMatrix, xtwx: &SquareMatrix, condition: f64) -> Error {
    let p = xtwx.n;
    let labels = &design.column_labels;
    for j in 1..p {
        let lead = leading(xtwx, j + 1);
        if scaled_condition(&lead) <= MAX_CONDITION {
            continue;
        }
        let mut columns = Vec::new();
        let prev = leading(xtwx, j);
        if let Ok(c) = Cholesky::factor(&prev) {
            let rhs: Vec<f64> = (0..j).map(|i| xtwx[(i, j)]).collect();
            let coef = c.solve(&rhs);
            let scale_j = xtwx[(j, j)].sqrt();
            for (i, ci) in coef.iter().enumerate() {
                if (ci * xtwx[(i, i)].sqrt()).abs() > 1e-6 * scale_j {
                    columns.push(labels[i].clone());
                }
            }
        }
        columns.push(labels[j].clone());
        return Error::SingularDesign { columns, condition };
    }
    Error::SingularDesign {
        columns: labels.clone(),
        condition,
    }
}

fn leading(a: &SquareMatrix, m: usize) -> SquareMatrix {
    let mut out = SquareMatrix::zeros(m);
    for i in 0..m {
        for j in 0..m {
            out[(i, j)] = a[(i, j)];
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn split(effects: &[EffectData]) -> (Vec<f64>, Vec<f64>) {
    effects.iter().map(|e| (e.y, e.v)).unzip()
}

fn check_effects(design: &DesignMatrix, effects: &[EffectData]) -> Result<()> {
    let k = design.nrows();
    let p = design.ncols();
    if effects.len() != k {
        return Err(Error::InvalidInput(format!(
            "design has {k} rows but {} effects were supplied",
            effects.len()
        )));
    }
    if k <= p {
        return Err(Error::InsufficientStudies { k, p });
    }
    if let Some(e) = effects
        .iter()
        .find(|e| !e.y.is_finite() || !e.v.is_finite() || !(e.v > 0.0))
    {
        return Err(Error::InvalidInput(format!(
            "effects must be finite with positive variance, got y = {}, v = {}",
            e.y, e.v
        )));
    }
    Ok(())
}

/// REML objective and its first two (expected) derivatives at one tau2.
#[derive(Debug, Clone, Copy)]
struct RemlPoint {
    loglik: f64,
    score: f64,
    information: f64,
}

fn reml_point(design: &DesignMatrix, y: &[f64], v: &[f64], tau2: f64) -> Result<RemlPoint> {
    let weights: Vec<f64> = v.iter().map(|vi| 1.0 / (vi + tau2)).collect();
    let sol = wls_fit(design, y, &weights)?;
    let p = design.ncols();

    let mut log_var = 0.0;
    let mut wrr = 0.0;
    let mut w2rr = 0.0;
    let mut sum_w = 0.0;
    let mut sum_w2 = 0.0;
    let mut xtw2x = SquareMatrix::zeros(p);
    let mut xtw3x = SquareMatrix::zeros(p);
    for ((row, &w), &r) in design.rows().zip(&weights).zip(&sol.residuals) {
        log_var -= w.ln();
        wrr += w * r * r;
        w2rr += w * w * r * r;
        sum_w += w;
        sum_w2 += w * w;
        let w2 = w * w;
        let w3 = w2 * w;
        for a in 0..p {
            for b in 0..p {
                let xx = row[a] * row[b];
                xtw2x[(a, b)] += w2 * xx;
                xtw3x[(a, b)] += w3 * xx;
            }
        }
    }
    let ainv = &sol.cov_unscaled;
    let m2 = ainv.matmul(&xtw2x);
    let tr_p = sum_w - m2.trace();
    let tr_pp = sum_w2 - 2.0 * ainv.matmul(&xtw3x).trace() + m2.matmul(&m2).trace();

    Ok(RemlPoint {
        loglik: -0.5 * (log_var + sol.log_det_xtwx + wrr),
        score: 0.5 * (w2rr - tr_p),
        information: 0.5 * tr_pp,
    })
}

/// Restricted log-likelihood in tau2, up to an additive constant.
pub fn restricted_loglik(tau2: f64, design: &DesignMatrix, effects: &[EffectData]) -> Result<f64> {
    if !tau2.is_finite() || tau2 < 0.0 {
        return Err(Error::InvalidInput(format!(
            "tau2 must be finite and >= 0, got {tau2}"
        )));
    }
    check_effects(design, effects)?;
    let (y, v) = split(effects);
    Ok(reml_point(design, &y, &v, tau2)?.loglik)
}

/// REML score `d loglik / d tau2`.
pub fn restricted_score(tau2: f64, design: &DesignMatrix, effects: &[EffectData]) -> Result<f64> {
    check_effects(design, effects)?;
    let (y, v) = split(effects);
    Ok(reml_point(design, &y, &v, tau2)?.score)
}

/// Method-of-moments (DerSimonian-Laird type) estimate for meta-regression.
pub fn dl_tau2(design: &DesignMatrix, effects: &[EffectData]) -> Result<f64> {
    check_effects(design, effects)?;
    let (y, v) = split(effects);
    let w: Vec<f64> = v.iter().map(|vi| 1.0 / vi).collect();
    let sol = wls_fit(design, &y, &w)?;
    let k = design.nrows();
    let p = design.ncols();
    let q: f64 = w.iter().zip(&sol.residuals).map(|(w, r)| w * r * r).sum();

    let mut xtw2x = SquareMatrix::zeros(p);
    for (row, &wi) in design.rows().zip(&w) {
        for a in 0..p {
            for b in 0..p {
                xtw2x[(a, b)] += wi * wi * row[a] * row[b];
            }
        }
    }
    let denom = w.iter().sum::<f64>() - sol.cov_unscaled.matmul(&xtw2x).trace();
    Ok(((q - (k - p) as f64) / denom).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemlSettings {
    pub tol: f64,
    pub max_iter: usize,
    /// Upper search bound; `None` means 100 * max(v).
    pub tau2_max: Option<f64>,
}

impl Default for RemlSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
            tau2_max: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemlMethod {
    FisherScoring,
    BoundedSearch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub iterations: usize,
    pub gradient: f64,
    /// The maximizer sits on 0 or on the upper search bound.
    pub boundary: bool,
    pub method: RemlMethod,
}

/// REML estimate of tau2 on `[0, tau2_max]`.
///
/// Fisher scoring from the moment estimate with step-halving. When a
/// step cannot raise the objective or the iterates keep flipping
/// direction, a bounded derivative-free search over the whole interval
/// takes over.
pub fn reml_tau2(
    design: &DesignMatrix,
    effects: &[EffectData],
    settings: &RemlSettings,
) -> Result<(f64, Convergence)> {
    check_effects(design, effects)?;
    let (y, v) = split(effects);
    let upper = settings
        .tau2_max
        .unwrap_or_else(|| 100.0 * v.iter().copied().fold(0.0, f64::max));
    if !(upper > 0.0) {
        return Err(Error::InvalidInput(format!(
            "tau2_max must be positive, got {upper}"
        )));
    }
    let tol = settings.tol;

    let mut tau2 = dl_tau2(design, effects)?.clamp(0.0, upper);
    let mut pt = reml_point(design, &y, &v, tau2)?;
    let mut flips = 0usize;
    let mut last_sign = 0.0f64;

    for iter in 1..=settings.max_iter {
        let at_lower = tau2 <= 0.0 && pt.score <= 0.0;
        let at_upper = tau2 >= upper && pt.score >= 0.0;
        if at_lower || at_upper {
            return Ok((
                tau2,
                Convergence {
                    iterations: iter - 1,
                    gradient: pt.score,
                    boundary: true,
                    method: RemlMethod::FisherScoring,
                },
            ));
        }
        if !(pt.information > 0.0) {
            return bounded_search(design, &y, &v, upper, tol, iter);
        }

        let mut step = pt.score / pt.information;
        let mut cand = (tau2 + step).clamp(0.0, upper);
        let mut next = reml_point(design, &y, &v, cand)?;
        let slack = 1e-13 * (1.0 + pt.loglik.abs());
        let mut halvings = 0;
        while next.loglik < pt.loglik - slack {
            halvings += 1;
            if halvings > 40 {
                return bounded_search(design, &y, &v, upper, tol, iter);
            }
            step *= 0.5;
            cand = (tau2 + step).clamp(0.0, upper);
            next = reml_point(design, &y, &v, cand)?;
        }

        let delta = cand - tau2;
        let sign = delta.signum();
        if delta != 0.0 && last_sign != 0.0 && sign != last_sign {
            flips += 1;
            if flips >= 10 {
                return bounded_search(design, &y, &v, upper, tol, iter);
            }
        }
        if delta != 0.0 {
            last_sign = sign;
        }
        tau2 = cand;
        pt = next;

        if delta.abs() <= tol * (1.0 + tau2) || pt.score.abs() <= tol {
            let boundary = (tau2 <= 0.0 && pt.score <= 0.0) || (tau2 >= upper && pt.score >= 0.0);
            return Ok((
                tau2,
                Convergence {
                    iterations: iter,
                    gradient: pt.score,
                    boundary,
                    method: RemlMethod::FisherScoring,
                },
            ));
        }
    }
    Err(Error::NonConvergence {
        iterations: settings.max_iter,
        last_tau2: tau2,
    })
}

/// Coarse scan for the best cell, then golden-section refinement inside it.
fn bounded_search(
    design: &DesignMatrix,
    y: &[f64],
    v: &[f64],
    upper: f64,
    tol: f64,
    iterations_so_far: usize,
) -> Result<(f64, Convergence)> {
    const CELLS: usize = 400;
    let ll = |t: f64| reml_point(design, y, v, t).map(|p| p.loglik);

    let h = upper / CELLS as f64;
    let mut best = (0usize, ll(0.0)?);
    for i in 1..=CELLS {
        let val = ll(i as f64 * h)?;
        if val > best.1 {
            best = (i, val);
        }
    }
    let mut lo = best.0.saturating_sub(1) as f64 * h;
    let mut hi = ((best.0 + 1).min(CELLS)) as f64 * h;

    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = hi - g * (hi - lo);
    let mut d = lo + g * (hi - lo);
    let (mut fc, mut fd) = (ll(c)?, ll(d)?);
    let mut evals = CELLS + 3;
    while (hi - lo) > tol * (1.0 + lo.abs()) * 0.1 && evals < 500 {
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - g * (hi - lo);
            fc = ll(c)?;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + g * (hi - lo);
            fd = ll(d)?;
        }
        evals += 1;
    }
    let mut tau2 = 0.5 * (lo + hi);
    let mut val = ll(tau2)?;
    for edge in [0.0, upper] {
        let e = ll(edge)?;
        if e >= val {
            tau2 = edge;
            val = e;
        }
    }
    let score = reml_point(design, y, v, tau2)?.score;
    Ok((
        tau2,
        Convergence {
            iterations: iterations_so_far + evals,
            gradient: score,
            boundary: tau2 <= 0.0 || tau2 >= upper,
            method: RemlMethod::BoundedSearch,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FitSettings {
    pub reml: RemlSettings,
    pub knapp_hartung: KnappHartung,
}

/// A fitted mixed-effects meta-regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub terms: Vec<String>,
    pub moderators: Vec<String>,
    pub interaction: bool,
    pub center_offsets: Vec<f64>,
    pub medians: Vec<f64>,
    pub beta: Vec<f64>,
    pub tau2: f64,
    pub cov_unscaled: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub residuals: Vec<f64>,
    pub kh_scale: f64,
    pub df: usize,
    pub k: usize,
    pub convergence: Convergence,
    /// Dataset rows that entered the fit.
    pub rows: Vec<usize>,
}

impl FitResult {
    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn cov_unscaled_matrix(&self) -> SquareMatrix {
        SquareMatrix::from_rows(&self.cov_unscaled)
    }

    pub fn term_index(&self, term: &str) -> Option<usize> {
        self.terms.iter().position(|t| t == term)
    }

    /// Fitted value for a full covariate row.
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        dot(x, &self.beta)
    }
}

/// REML + WLS + Knapp-Hartung scale on a prepared design.
pub fn fit_design(
    design: &DesignMatrix,
    effects: &[EffectData],
    settings: &FitSettings,
) -> Result<FitResult> {
    check_effects(design, effects)?;
    let (tau2, convergence) = reml_tau2(design, effects, &settings.reml)?;
    let (y, v) = split(effects);
    let weights: Vec<f64> = v.iter().map(|vi| 1.0 / (vi + tau2)).collect();
    let sol = wls_fit(design, &y, &weights)?;
    let k = design.nrows();
    let p = design.ncols();
    let q = kh_scale(&sol.residuals, &weights, k, p)?;
    let q = settings.knapp_hartung.apply(q);
    Ok(FitResult {
        terms: design.column_labels.clone(),
        moderators: design.moderators.clone(),
        interaction: design.interaction,
        center_offsets: design.center_offsets.clone(),
        medians: design.other_medians.clone(),
        beta: sol.beta,
        tau2,
        cov_unscaled: sol.cov_unscaled.to_rows(),
        weights,
        residuals: sol.residuals,
        kh_scale: q,
        df: k - p,
        k,
        convergence,
        rows: (0..k).collect(),
    })
}

/// Builds the complete-case design for `spec` and fits it.
///
/// `effects` holds one entry per dataset study; rows dropped by
/// complete-case filtering are skipped.
pub fn fit_model(
    dataset: &Dataset,
    spec: &ModelSpec,
    effects: &[EffectData],
    settings: &FitSettings,
) -> Result<FitResult> {
    if effects.len() != dataset.len() {
        return Err(Error::InvalidInput(format!(
            "dataset has {} studies but {} effects were supplied",
            dataset.len(),
            effects.len()
        )));
    }
    let (design, map) = build_design(dataset, spec)?;
    let kept: Vec<EffectData> = map.retained.iter().map(|&i| effects[i]).collect();
    let mut fit = fit_design(&design, &kept, settings)?;
    fit.rows = map.retained;
    Ok(fit)
}
