//! CSV ingestion of study-level records.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, StudyRecord};

/// Which header columns hold the counts, the moderators and an optional id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub events_col: String,
    pub total_col: String,
    pub moderator_cols: Vec<String>,
    pub id_col: Option<String>,
}

impl ColumnMapping {
    pub fn new(events: &str, total: &str, moderators: &[&str]) -> Self {
        Self {
            events_col: events.to_string(),
            total_col: total.to_string(),
            moderator_cols: moderators.iter().map(|s| s.to_string()).collect(),
            id_col: None,
        }
    }

    pub fn with_id(mut self, id: &str) -> Self {
        self.id_col = Some(id.to_string());
        self
    }
}

pub fn ingest_csv(path: impl AsRef<Path>, mapping: &ColumnMapping) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    ingest_reader(file, mapping)
}

pub fn ingest_reader<R: Read>(reader: R, mapping: &ColumnMapping) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                name: name.to_string(),
                available: headers.iter().map(String::from).collect(),
            })
    };
    let events_idx = find(&mapping.events_col)?;
    let total_idx = find(&mapping.total_col)?;
    let id_idx = mapping.id_col.as_deref().map(find).transpose()?;
    let mod_idx = mapping
        .moderator_cols
        .iter()
        .map(|m| find(m))
        .collect::<Result<Vec<_>>>()?;

    let mut studies = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        // header is line 1
        let line = record.position().map_or(row as u64 + 2, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("");
        let study_id = id_idx
            .map(|i| field(i).to_string())
            .unwrap_or_else(|| format!("row{}", row + 1));
        let events = parse_count(field(events_idx), &mapping.events_col, line)?;
        let total = parse_count(field(total_idx), &mapping.total_col, line)?;
        if total == 0 {
            return Err(Error::Data(format!("line {line}: total must be >= 1")));
        }
        if events > total {
            return Err(Error::EventsExceedTotal {
                study: study_id,
                events,
                total,
            });
        }
        let mut study = StudyRecord::new(study_id, events, total)?;
        for (name, &i) in mapping.moderator_cols.iter().zip(&mod_idx) {
            let value = field(i).parse::<f64>().ok().filter(|v| v.is_finite());
            study = study.with(name, value);
        }
        studies.push(study);
    }
    if studies.is_empty() {
        return Err(Error::Data("no data rows".into()));
    }
    Dataset::new(studies, mapping.moderator_cols.clone())
}

fn parse_count(text: &str, column: &str, line: u64) -> Result<u64> {
    if let Ok(v) = text.parse::<u64>() {
        return Ok(v);
    }
    match text.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.fract() == 0.0 && v < 9.0e15 => Ok(v as u64),
        _ => Err(Error::Data(format!(
            "line {line}: column `{column}` must be a non-negative integer, got `{text}`"
        ))),
    }
}
