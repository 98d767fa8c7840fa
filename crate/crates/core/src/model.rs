//! Study records, model specifications and design-matrix construction.
//!
//! The full model has an intercept, up to two moderators and optionally
//! their product:
//!
//! `y_i = b0 + x1_i b1 + x2_i b2 + x1_i x2_i b12 + u_i + e_i`
//!
//! Every narrower model is a special case obtained by dropping columns.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const INTERCEPT: &str = "intercept";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub study_id: String,
    pub events: u64,
    pub total: u64,
    /// Raw moderator values; `None` marks a missing cell.
    pub moderators: BTreeMap<String, Option<f64>>,
}

impl StudyRecord {
    pub fn new(study_id: impl Into<String>, events: u64, total: u64) -> Result<Self> {
        let study_id = study_id.into();
        if total == 0 {
            return Err(Error::Data(format!("study {study_id}: total must be >= 1")));
        }
        if events > total {
            return Err(Error::EventsExceedTotal {
                study: study_id,
                events,
                total,
            });
        }
        Ok(Self {
            study_id,
            events,
            total,
            moderators: BTreeMap::new(),
        })
    }

    pub fn with(mut self, name: &str, value: Option<f64>) -> Self {
        self.moderators.insert(name.to_string(), value);
        self
    }

    pub fn moderator(&self, name: &str) -> Option<f64> {
        self.moderators.get(name).copied().flatten()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub studies: Vec<StudyRecord>,
    pub moderator_names: Vec<String>,
}

impl Dataset {
    pub fn new(studies: Vec<StudyRecord>, moderator_names: Vec<String>) -> Result<Self> {
        if studies.is_empty() {
            return Err(Error::NoStudies);
        }
        for s in &studies {
            if s.total == 0 || s.events > s.total {
                return Err(Error::EventsExceedTotal {
                    study: s.study_id.clone(),
                    events: s.events,
                    total: s.total,
                });
            }
            if let Some(name) = s
                .moderators
                .keys()
                .find(|k| !moderator_names.iter().any(|m| m == *k))
            {
                return Err(Error::UnknownModerator {
                    name: name.clone(),
                    available: moderator_names.clone(),
                });
            }
        }
        Ok(Self {
            studies,
            moderator_names,
        })
    }

    pub fn len(&self) -> usize {
        self.studies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.studies.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Centering {
    None,
    #[default]
    Mean,
}

impl std::str::FromStr for Centering {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Centering::None),
            "mean" => Ok(Centering::Mean),
            other => Err(Error::InvalidSpec(format!(
                "unknown centering `{other}` (expected mean or none)"
            ))),
        }
    }
}

/// Which moderators enter the model. The intercept is always present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub moderators: Vec<String>,
    pub interaction: bool,
    pub centering: Centering,
}

impl ModelSpec {
    pub fn new(moderators: Vec<String>, interaction: bool, centering: Centering) -> Result<Self> {
        if interaction && moderators.len() != 2 {
            return Err(Error::InvalidSpec(format!(
                "an interaction needs exactly two moderators, got {}",
                moderators.len()
            )));
        }
        if moderators.len() > 2 {
            return Err(Error::InvalidSpec(format!(
                "at most two moderators are supported, got {}",
                moderators.len()
            )));
        }
        if moderators.len() == 2 && moderators[0] == moderators[1] {
            return Err(Error::InvalidSpec(format!(
                "moderator `{}` listed twice",
                moderators[0]
            )));
        }
        Ok(Self {
            moderators,
            interaction,
            centering,
        })
    }

    pub fn intercept_only() -> Self {
        Self {
            moderators: Vec::new(),
            interaction: false,
            centering: Centering::Mean,
        }
    }

    /// Parses `a`, `a+b` or `a*b` (the latter with interaction).
    pub fn parse_formula(formula: &str, centering: Centering) -> Result<Self> {
        let formula = formula.trim();
        if formula.is_empty() || formula == "1" {
            return Ok(Self {
                centering,
                ..Self::intercept_only()
            });
        }
        let (parts, interaction): (Vec<&str>, bool) = if formula.contains('*') {
            (formula.split('*').collect(), true)
        } else {
            (formula.split('+').collect(), false)
        };
        let moderators = parts
            .iter()
            .map(|p| p.trim())
            .map(|p| {
                if p.is_empty() {
                    Err(Error::InvalidSpec(format!("malformed formula `{formula}`")))
                } else {
                    Ok(p.to_string())
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(moderators, interaction, centering)
    }

    pub fn formula(&self) -> String {
        if self.moderators.is_empty() {
            return "1".to_string();
        }
        self.moderators
            .join(if self.interaction { "*" } else { "+" })
    }

    pub fn n_coefficients(&self) -> usize {
        1 + self.moderators.len() + usize::from(self.interaction)
    }

    pub fn term_labels(&self) -> Vec<String> {
        let mut labels = vec![INTERCEPT.to_string()];
        labels.extend(self.moderators.iter().cloned());
        if self.interaction {
            labels.push(interaction_label(&self.moderators[0], &self.moderators[1]));
        }
        labels
    }
}

pub fn interaction_label(a: &str, b: &str) -> String {
    format!("{a}:{b}")
}

/// Dense k x p design matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    values: Vec<f64>,
    nrows: usize,
    ncols: usize,
    pub column_labels: Vec<String>,
    pub moderators: Vec<String>,
    pub interaction: bool,
    /// Subtracted means, one per moderator (0 without centering).
    pub center_offsets: Vec<f64>,
    /// Medians of the (centered) moderator columns.
    pub other_medians: Vec<f64>,
}

/// Which dataset rows made it into the design.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RowIndexMap {
    pub retained: Vec<usize>,
    pub dropped: Vec<usize>,
}

impl DesignMatrix {
    /// Builds a design from explicit moderator columns that are used as-is.
    pub fn from_columns(moderators: &[(&str, &[f64])], interaction: bool) -> Result<Self> {
        let Some(nrows) = moderators.first().map(|(_, c)| c.len()) else {
            return Err(Error::InvalidInput(
                "no moderator columns given; use DesignMatrix::intercept".into(),
            ));
        };
        if moderators.iter().any(|(_, c)| c.len() != nrows) {
            return Err(Error::InvalidInput(
                "moderator columns differ in length".into(),
            ));
        }
        if interaction && moderators.len() != 2 {
            return Err(Error::InvalidSpec(
                "an interaction needs exactly two moderators".into(),
            ));
        }
        let cols: Vec<Vec<f64>> = moderators.iter().map(|(_, c)| c.to_vec()).collect();
        let names: Vec<String> = moderators.iter().map(|(n, _)| n.to_string()).collect();
        Ok(Self::assemble(
            nrows,
            names,
            cols,
            vec![0.0; moderators.len()],
            interaction,
        ))
    }

    /// Intercept-only design with `k` rows.
    pub fn intercept(k: usize) -> Self {
        Self::assemble(k, Vec::new(), Vec::new(), Vec::new(), false)
    }

    fn assemble(
        nrows: usize,
        moderators: Vec<String>,
        cols: Vec<Vec<f64>>,
        center_offsets: Vec<f64>,
        interaction: bool,
    ) -> Self {
        let ncols = 1 + cols.len() + usize::from(interaction);
        let mut values = Vec::with_capacity(nrows * ncols);
        for i in 0..nrows {
            values.push(1.0);
            for c in &cols {
                values.push(c[i]);
            }
            if interaction {
                values.push(cols[0][i] * cols[1][i]);
            }
        }
        let mut column_labels = vec![INTERCEPT.to_string()];
        column_labels.extend(moderators.iter().cloned());
        if interaction {
            column_labels.push(interaction_label(&moderators[0], &moderators[1]));
        }
        let other_medians = cols.iter().map(|c| median(c)).collect();
        Self {
            values,
            nrows,
            ncols,
            column_labels,
            moderators,
            interaction,
            center_offsets,
            other_medians,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.ncols + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.nrows).map(|i| self.get(i, j)).collect()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.ncols.max(1))
    }

    /// Index of a moderator's column, if present.
    pub fn moderator_column(&self, name: &str) -> Option<usize> {
        self.moderators
            .iter()
            .position(|m| m == name)
            .map(|i| i + 1)
    }

    /// Covariate row for the given (centered-scale) moderator values.
    pub fn covariate_row(&self, moderator_values: &[f64]) -> Vec<f64> {
        debug_assert_eq!(moderator_values.len(), self.moderators.len());
        let mut row = Vec::with_capacity(self.ncols);
        row.push(1.0);
        row.extend_from_slice(moderator_values);
        if self.interaction {
            row.push(moderator_values[0] * moderator_values[1]);
        }
        row
    }

    /// Subset of rows, keeping labels and centering metadata.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut values = Vec::with_capacity(rows.len() * self.ncols);
        for &i in rows {
            values.extend_from_slice(self.row(i));
        }
        Self {
            values,
            nrows: rows.len(),
            ..self.clone()
        }
    }
}

/// Complete-case design for `spec` over `dataset`.
pub fn build_design(dataset: &Dataset, spec: &ModelSpec) -> Result<(DesignMatrix, RowIndexMap)> {
    for name in &spec.moderators {
        if !dataset.moderator_names.iter().any(|m| m == name) {
            return Err(Error::UnknownModerator {
                name: name.clone(),
                available: dataset.moderator_names.clone(),
            });
        }
    }
    if spec.interaction && spec.moderators.len() != 2 {
        return Err(Error::InvalidSpec(
            "an interaction needs exactly two moderators".into(),
        ));
    }

    let mut map = RowIndexMap::default();
    let mut raw: Vec<Vec<f64>> = vec![Vec::new(); spec.moderators.len()];
    for (i, study) in dataset.studies.iter().enumerate() {
        let values: Option<Vec<f64>> = spec
            .moderators
            .iter()
            .map(|m| study.moderator(m).filter(|v| v.is_finite()))
            .collect();
        match values {
            Some(vals) => {
                map.retained.push(i);
                for (col, v) in raw.iter_mut().zip(vals) {
                    col.push(v);
                }
            }
            None => map.dropped.push(i),
        }
    }
    if map.retained.is_empty() {
        return Err(Error::NoStudies);
    }

    let offsets: Vec<f64> = match spec.centering {
        Centering::None => vec![0.0; raw.len()],
        Centering::Mean => raw.iter().map(|c| mean(c)).collect(),
    };
    let centered: Vec<Vec<f64>> = raw
        .into_iter()
        .zip(&offsets)
        .map(|(c, &m)| c.into_iter().map(|x| x - m).collect())
        .collect();

    let design = DesignMatrix::assemble(
        map.retained.len(),
        spec.moderators.clone(),
        centered,
        offsets,
        spec.interaction,
    );
    Ok((design, map))
}

/// Median of each moderator column of the design.
pub fn column_medians(design: &DesignMatrix) -> Result<Vec<f64>> {
    if design.nrows() == 0 {
        return Err(Error::NoStudies);
    }
    Ok((1..=design.moderators.len())
        .map(|j| median(&design.column(j)))
        .collect())
}

/// Median with the midpoint convention for even lengths. NaN for empty input.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}
