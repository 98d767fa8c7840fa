//! Monte Carlo experiment: generate binomial outcomes from a known
//! mixed-effects meta-regression and refit them under several model
//! specifications.

use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::effects::{expit, logit_effect, EffectData};
use crate::error::{Error, Result};
use crate::estimation::{fit_design, FitSettings};
use crate::inference::confidence_intervals;
use crate::model::{
    interaction_label, median, Centering, Dataset, DesignMatrix, ModelSpec, StudyRecord, INTERCEPT,
};
use crate::rng::{SeedSpec, Stream};

/// Fixed moderators and study sizes shared by every replicate.
///
/// The moderator columns are used exactly as stored (already centered).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub names: [String; 2],
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub sizes: Vec<u64>,
    /// Where the design came from, for reports.
    pub source: String,
}

impl SimDesign {
    pub fn new(
        names: [String; 2],
        x1: Vec<f64>,
        x2: Vec<f64>,
        sizes: Vec<u64>,
        source: impl Into<String>,
    ) -> Result<Self> {
        let k = sizes.len();
        if k == 0 {
            return Err(Error::NoStudies);
        }
        if x1.len() != k || x2.len() != k {
            return Err(Error::InvalidInput(format!(
                "design columns have {} and {} rows but {k} study sizes were given",
                x1.len(),
                x2.len()
            )));
        }
        if sizes.contains(&0) {
            return Err(Error::InvalidInput("study sizes must be >= 1".into()));
        }
        if x1.iter().chain(&x2).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("design values must be finite".into()));
        }
        if names[0] == names[1] {
            return Err(Error::InvalidInput("moderator names must differ".into()));
        }
        Ok(Self {
            names,
            x1,
            x2,
            sizes,
            source: source.into(),
        })
    }

    /// Complete cases on both moderators, mean-centered over those cases.
    pub fn from_dataset(dataset: &Dataset, first: &str, second: &str) -> Result<Self> {
        let spec = ModelSpec::new(
            vec![first.to_string(), second.to_string()],
            true,
            Centering::Mean,
        )?;
        let (design, map) = crate::model::build_design(dataset, &spec)?;
        let sizes = map
            .retained
            .iter()
            .map(|&i| dataset.studies[i].total)
            .collect();
        Self::new(
            [first.to_string(), second.to_string()],
            design.column(1),
            design.column(2),
            sizes,
            "dataset",
        )
    }

    pub fn k(&self) -> usize {
        self.sizes.len()
    }

    fn column(&self, name: &str) -> Option<&[f64]> {
        if name == self.names[0] {
            Some(&self.x1)
        } else if name == self.names[1] {
            Some(&self.x2)
        } else {
            None
        }
    }

    /// Design matrix for a fitted specification over the fixed columns.
    pub fn design_for(&self, spec: &ModelSpec) -> Result<DesignMatrix> {
        if spec.moderators.is_empty() {
            return Ok(DesignMatrix::intercept(self.k()));
        }
        let cols = spec
            .moderators
            .iter()
            .map(|m| {
                self.column(m)
                    .map(|c| (m.as_str(), c))
                    .ok_or_else(|| Error::UnknownModerator {
                        name: m.clone(),
                        available: self.names.to_vec(),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        DesignMatrix::from_columns(&cols, spec.interaction)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub name: String,
    pub spec: ModelSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    /// (b0, b1, b2, b12); zeros encode absent terms.
    pub true_beta: [f64; 4],
    pub tau2: f64,
    pub design: SimDesign,
    pub n_reps: usize,
    pub level: f64,
    pub master_seed: u64,
    pub fitted: Vec<FittedModel>,
    pub settings: FitSettings,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.n_reps == 0 {
            return Err(Error::Config("reps must be >= 1".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!(
                "level must lie in (0, 1), got {}",
                self.level
            )));
        }
        if !(self.tau2 >= 0.0) || !self.tau2.is_finite() {
            return Err(Error::Config(format!(
                "tau2 must be finite and >= 0, got {}",
                self.tau2
            )));
        }
        if self.true_beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Config("true_beta must be finite".into()));
        }
        if self.fitted.is_empty() {
            return Err(Error::Config(
                "at least one fitted model is required".into(),
            ));
        }
        for f in &self.fitted {
            let p = f.spec.n_coefficients();
            if self.design.k() <= p {
                return Err(Error::InsufficientStudies {
                    k: self.design.k(),
                    p,
                });
            }
            self.design.design_for(&f.spec)?;
        }
        Ok(())
    }

    /// True value of a named coefficient; 0 for terms outside the true model.
    pub fn truth_for(&self, term: &str) -> f64 {
        let [a, b] = &self.design.names;
        if term == INTERCEPT {
            self.true_beta[0]
        } else if term == a {
            self.true_beta[1]
        } else if term == b {
            self.true_beta[2]
        } else if term == interaction_label(a, b) || term == interaction_label(b, a) {
            self.true_beta[3]
        } else {
            0.0
        }
    }

    fn linear_predictor(&self) -> Vec<f64> {
        let [b0, b1, b2, b12] = self.true_beta;
        self.design
            .x1
            .iter()
            .zip(&self.design.x2)
            .map(|(x1, x2)| b0 + x1 * b1 + x2 * b2 + x1 * x2 * b12)
            .collect()
    }
}

/// Latent quantities of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateTruth {
    pub u: Vec<f64>,
    pub theta: Vec<f64>,
    pub p: Vec<f64>,
    pub d: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replicate {
    pub truth: ReplicateTruth,
    pub effects: Vec<EffectData>,
}

impl Replicate {
    /// The replicate as a dataset of raw counts over the fixed design.
    pub fn to_dataset(&self, design: &SimDesign) -> Result<Dataset> {
        let studies = (0..design.k())
            .map(|i| {
                StudyRecord::new(format!("sim{i}"), self.truth.d[i], design.sizes[i]).map(|s| {
                    s.with(&design.names[0], Some(design.x1[i]))
                        .with(&design.names[1], Some(design.x2[i]))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(studies, design.names.to_vec())
    }
}

pub fn generate_replicate(scenario: &Scenario, seed: SeedSpec) -> Replicate {
    generate_with_predictor(scenario, &scenario.linear_predictor(), seed)
}

fn generate_with_predictor(scenario: &Scenario, eta: &[f64], seed: SeedSpec) -> Replicate {
    let mut stream = Stream::new(seed);
    let k = scenario.design.k();
    let sd = scenario.tau2.sqrt();
    let u: Vec<f64> = (0..k).map(|_| sd * stream.normal()).collect();
    let theta: Vec<f64> = eta.iter().zip(&u).map(|(e, u)| e + u).collect();
    let p: Vec<f64> = theta.iter().map(|&t| expit(t)).collect();
    let d: Vec<u64> = p
        .iter()
        .zip(&scenario.design.sizes)
        .map(|(&pi, &n)| stream.binomial(n, pi))
        .collect();
    let effects = d
        .iter()
        .zip(&scenario.design.sizes)
        .map(|(&di, &n)| logit_effect(di, n).expect("binomial draw within [0, n]"))
        .collect();
    Replicate {
        truth: ReplicateTruth { u, theta, p, d },
        effects,
    }
}

/// Fraction of intervals containing `truth`, endpoints included.
pub fn coverage_metric(intervals: &[(f64, f64)], truth: f64) -> Result<f64> {
    if intervals.is_empty() {
        return Err(Error::InvalidInput(
            "coverage of an empty set of intervals".into(),
        ));
    }
    let hits = intervals
        .iter()
        .filter(|(lo, hi)| *lo <= truth && truth <= *hi)
        .count();
    Ok(hits as f64 / intervals.len() as f64)
}

pub fn median_length_metric(intervals: &[(f64, f64)]) -> Result<f64> {
    if intervals.is_empty() {
        return Err(Error::InvalidInput(
            "median length of an empty set of intervals".into(),
        ));
    }
    let lengths: Vec<f64> = intervals.iter().map(|(lo, hi)| hi - lo).collect();
    Ok(median(&lengths))
}

/// Mean of `estimate - truth` with Neumaier summation.
pub fn bias_metric(estimates: &[f64], truth: f64) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::InvalidInput(
            "bias of an empty set of estimates".into(),
        ));
    }
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for e in estimates {
        let x = e - truth;
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    Ok((sum + comp) / estimates.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSummary {
    pub term: String,
    pub truth: f64,
    pub coverage: f64,
    pub median_length: f64,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub name: String,
    pub formula: String,
    pub terms: Vec<String>,
    pub n_reps: usize,
    pub n_converged: usize,
    pub n_excluded: usize,
    /// Converged fits whose tau2 sits on a search bound.
    pub n_boundary: usize,
    /// Intervals whose standard error hit the floor.
    pub n_floored: usize,
    /// Every replicate failed; `coefficients` is then empty.
    pub empty: bool,
    pub coefficients: Vec<CoefficientSummary>,
}

impl ModelSummary {
    pub fn coefficient(&self, term: &str) -> Option<&CoefficientSummary> {
        self.coefficients.iter().find(|c| c.term == term)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub scenario: String,
    pub design_source: String,
    pub k: usize,
    pub true_beta: [f64; 4],
    pub tau2: f64,
    pub level: f64,
    pub master_seed: u64,
    pub n_reps: usize,
    pub models: Vec<ModelSummary>,
}

impl SimulationSummary {
    pub fn model(&self, name: &str) -> Option<&ModelSummary> {
        self.models.iter().find(|m| m.name == name)
    }
}

/// Per-model outcome of one replicate: (estimate, lower, upper) per term.
#[derive(Debug, Clone)]
enum FitOutcome {
    Ok {
        intervals: Vec<(f64, f64, f64)>,
        boundary: bool,
        floored: usize,
    },
    Excluded,
}

pub fn run_simulation(scenario: &Scenario, parallelism: usize) -> Result<SimulationSummary> {
    run_simulation_with_progress(scenario, parallelism, |_, _| {})
}

/// As `run_simulation`, calling `progress(done, total)` as replicates finish.
/// Results do not depend on `parallelism`.
pub fn run_simulation_with_progress<F>(
    scenario: &Scenario,
    parallelism: usize,
    progress: F,
) -> Result<SimulationSummary>
where
    F: Fn(usize, usize) + Sync,
{
    scenario.validate()?;
    let designs = scenario
        .fitted
        .iter()
        .map(|f| scenario.design.design_for(&f.spec))
        .collect::<Result<Vec<_>>>()?;
    let eta = scenario.linear_predictor();
    let total = scenario.n_reps;
    let done = AtomicUsize::new(0);

    let one = |r: usize| -> Vec<FitOutcome> {
        let rep = generate_with_predictor(
            scenario,
            &eta,
            SeedSpec::new(scenario.master_seed, r as u64),
        );
        let out = designs
            .iter()
            .map(|design| fit_one(design, &rep.effects, scenario))
            .collect();
        let n = done.fetch_add(1, Ordering::Relaxed) + 1;
        progress(n, total);
        out
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    // collect() keeps replicate order, so reduction below is order-fixed
    let outcomes: Vec<Vec<FitOutcome>> =
        pool.install(|| (0..total).into_par_iter().map(one).collect());

    let models = scenario
        .fitted
        .iter()
        .zip(&designs)
        .enumerate()
        .map(|(m, (fitted, design))| summarize(scenario, fitted, design, &outcomes, m))
        .collect::<Result<Vec<_>>>()?;

    Ok(SimulationSummary {
        scenario: scenario.name.clone(),
        design_source: scenario.design.source.clone(),
        k: scenario.design.k(),
        true_beta: scenario.true_beta,
        tau2: scenario.tau2,
        level: scenario.level,
        master_seed: scenario.master_seed,
        n_reps: total,
        models,
    })
}

fn fit_one(design: &DesignMatrix, effects: &[EffectData], scenario: &Scenario) -> FitOutcome {
    let Ok(fit) = fit_design(design, effects, &scenario.settings) else {
        return FitOutcome::Excluded;
    };
    let Ok(cis) = confidence_intervals(&fit, scenario.level) else {
        return FitOutcome::Excluded;
    };
    FitOutcome::Ok {
        floored: cis.iter().filter(|c| c.floored).count(),
        intervals: cis.iter().map(|c| (c.estimate, c.lower, c.upper)).collect(),
        boundary: fit.convergence.boundary,
    }
}

fn summarize(
    scenario: &Scenario,
    fitted: &FittedModel,
    design: &DesignMatrix,
    outcomes: &[Vec<FitOutcome>],
    m: usize,
) -> Result<ModelSummary> {
    let terms = design.column_labels.clone();
    let mut per_term: Vec<Vec<(f64, f64, f64)>> = vec![Vec::new(); terms.len()];
    let mut n_boundary = 0;
    let mut n_floored = 0;
    let mut n_excluded = 0;
    for rep in outcomes {
        match &rep[m] {
            FitOutcome::Ok {
                intervals,
                boundary,
                floored,
            } => {
                n_boundary += usize::from(*boundary);
                n_floored += floored;
                for (acc, iv) in per_term.iter_mut().zip(intervals) {
                    acc.push(*iv);
                }
            }
            FitOutcome::Excluded => n_excluded += 1,
        }
    }
    let n_converged = outcomes.len() - n_excluded;
    let coefficients = if n_converged == 0 {
        Vec::new()
    } else {
        terms
            .iter()
            .zip(&per_term)
            .map(|(term, ivs)| {
                let truth = scenario.truth_for(term);
                let bounds: Vec<(f64, f64)> = ivs.iter().map(|(_, lo, hi)| (*lo, *hi)).collect();
                let estimates: Vec<f64> = ivs.iter().map(|(e, _, _)| *e).collect();
                Ok(CoefficientSummary {
                    term: term.clone(),
                    truth,
                    coverage: coverage_metric(&bounds, truth)?,
                    median_length: median_length_metric(&bounds)?,
                    bias: bias_metric(&estimates, truth)?,
                })
            })
            .collect::<Result<Vec<_>>>()?
    };
    Ok(ModelSummary {
        name: fitted.name.clone(),
        formula: fitted.spec.formula(),
        terms,
        n_reps: outcomes.len(),
        n_converged,
        n_excluded,
        n_boundary,
        n_floored,
        empty: n_converged == 0,
        coefficients,
    })
}

/// The three specifications compared throughout: moderator `a` alone,
/// `a + b`, and `a * b`.
pub fn standard_fitted_models(a: &str, b: &str) -> Vec<FittedModel> {
    let mk = |name: &str, mods: Vec<&str>, interaction| FittedModel {
        name: name.to_string(),
        spec: ModelSpec {
            moderators: mods.into_iter().map(String::from).collect(),
            interaction,
            centering: Centering::None,
        },
    };
    vec![
        mk("one", vec![a], false),
        mk("two", vec![a, b], false),
        mk("two_interaction", vec![a, b], true),
    ]
}
