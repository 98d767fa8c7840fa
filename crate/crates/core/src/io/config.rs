//! Scenario configuration files.
//!
//! ```toml
//! name = "A"
//! true_beta = [-1.1477, -0.0066, 0.0333, -0.0018]
//! tau2 = 0.2484
//! moderators = ["year", "age"]
//! design = "synthetic"            # or "csv"
//! # data = "one_year_mortality.csv"  (design = "csv"; relative to this file)
//! # events = "events"
//! # total = "total"
//! fit = ["year", "year+age", "year*age"]
//! fit_names = ["one", "two", "two_interaction"]
//! reps = 10000
//! level = 0.95
//! seed = "0x5EED"
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::estimation::{FitSettings, RemlSettings};
use crate::inference::KnappHartung;
use crate::io::data::{ingest_csv, ColumnMapping};
use crate::model::{Centering, ModelSpec};
use crate::rng::parse_seed;
use crate::simulation::{FittedModel, Scenario, SimDesign};
use crate::synthetic;

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum SeedValue {
    Int(u64),
    Text(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignSource {
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub true_beta: Vec<f64>,
    pub tau2: f64,
    pub moderators: Vec<String>,
    pub design: DesignSource,
    pub data: Option<PathBuf>,
    pub events: Option<String>,
    pub total: Option<String>,
    pub fit: Vec<String>,
    pub fit_names: Option<Vec<String>>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    pub seed: SeedValue,
    #[serde(default)]
    pub kh_truncate: bool,
}

fn default_reps() -> usize {
    10_000
}

fn default_level() -> f64 {
    0.95
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg =
            Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, base))
    }

    pub fn seed(&self) -> Result<u64> {
        match &self.seed {
            SeedValue::Int(v) => Ok(*v),
            SeedValue::Text(t) => parse_seed(t)
                .ok_or_else(|| Error::Config(format!("field `seed`: cannot parse `{t}`"))),
        }
    }

    /// Resolves the design and builds a validated scenario.
    pub fn into_scenario(self, base_dir: &Path) -> Result<Scenario> {
        let true_beta: [f64; 4] = self.true_beta.as_slice().try_into().map_err(|_| {
            Error::Config(format!(
                "field `true_beta`: expected 4 values (b0, b1, b2, b12), got {}",
                self.true_beta.len()
            ))
        })?;
        let [first, second]: [String; 2] =
            self.moderators.clone().try_into().map_err(|_| {
                Error::Config("field `moderators`: expected exactly two names".into())
            })?;

        let design = match self.design {
            DesignSource::Synthetic => {
                let d = synthetic::bundled();
                if d.names != [first.clone(), second.clone()] {
                    return Err(Error::Config(format!(
                        "field `moderators`: the synthetic design provides {:?}",
                        d.names
                    )));
                }
                d
            }
            DesignSource::Csv => {
                let path = self.data.as_ref().ok_or_else(|| {
                    Error::Config("field `data` is required when design = \"csv\"".into())
                })?;
                let path = base_dir.join(path);
                let mapping = ColumnMapping {
                    events_col: self.events.clone().unwrap_or_else(|| "events".into()),
                    total_col: self.total.clone().unwrap_or_else(|| "total".into()),
                    moderator_cols: vec![first.clone(), second.clone()],
                    id_col: None,
                };
                let ds = ingest_csv(&path, &mapping)?;
                let mut d = SimDesign::from_dataset(&ds, &first, &second)?;
                d.source = path.display().to_string();
                d
            }
        };

        let names = match &self.fit_names {
            Some(n) if n.len() != self.fit.len() => {
                return Err(Error::Config(format!(
                    "field `fit_names`: {} names for {} models",
                    n.len(),
                    self.fit.len()
                )))
            }
            Some(n) => n.clone(),
            None => self.fit.clone(),
        };
        let fitted = self
            .fit
            .iter()
            .zip(names)
            .map(|(formula, name)| {
                ModelSpec::parse_formula(formula, Centering::None)
                    .map(|spec| FittedModel { name, spec })
                    .map_err(|e| Error::Config(format!("field `fit`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;

        let scenario = Scenario {
            name: self.name.clone(),
            true_beta,
            tau2: self.tau2,
            design,
            n_reps: self.reps,
            level: self.level,
            master_seed: self.seed()?,
            fitted,
            settings: FitSettings {
                reml: RemlSettings::default(),
                knapp_hartung: KnappHartung {
                    truncate: self.kh_truncate,
                },
            },
        };
        scenario.validate().map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("field `reps`/`level`/`tau2`: {m}")),
            other => Error::Config(other.to_string()),
        })?;
        Ok(scenario)
    }
}
