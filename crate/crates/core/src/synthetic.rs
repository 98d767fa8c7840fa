//! Frozen synthetic stand-in for the one-year-mortality design.
//!
//! 181 studies with log-uniform sizes on [100, 5000] and two correlated
//! moderators on recruitment-year and mean-age scales, drawn once and
//! mean-centered. Year is normal; age has a left-skewed marginal (a
//! Gaussian copula with a negated log-normal), since a symmetric design
//! makes the omitted product term orthogonal to both main effects.
//!
//! The bundled copy in `data/synthetic_design.csv` was produced by
//! `generate(&SyntheticParams::default())`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{SeedSpec, Stream};
use crate::simulation::SimDesign;

const BUNDLED: &str = include_str!("../data/synthetic_design.csv");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub k: usize,
    pub min_size: f64,
    pub max_size: f64,
    pub year_mean: f64,
    pub year_sd: f64,
    pub age_mean: f64,
    pub age_sd: f64,
    /// Latent correlation of the two moderators.
    pub correlation: f64,
    /// Log-normal shape of the (negated) age marginal; 0 gives a normal.
    pub age_skew: f64,
    pub seed: u64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            k: 181,
            min_size: 100.0,
            max_size: 5000.0,
            year_mean: 2005.0,
            year_sd: 7.0,
            age_mean: 70.0,
            age_sd: 7.35,
            correlation: -0.35,
            age_skew: 0.4,
            seed: 0x5EED_0181,
        }
    }
}

/// Draws sizes and moderators, then mean-centers the moderators.
pub fn generate(params: &SyntheticParams) -> Result<SimDesign> {
    let mut stream = Stream::new(SeedSpec::new(params.seed, 0));
    let (lo, hi) = (params.min_size.ln(), params.max_size.ln());
    let rho = params.correlation;
    let mut year = Vec::with_capacity(params.k);
    let mut age = Vec::with_capacity(params.k);
    let mut sizes = Vec::with_capacity(params.k);
    for _ in 0..params.k {
        let n = (lo + (hi - lo) * stream.uniform()).exp().round();
        sizes.push(n as u64);
        let z1 = stream.normal();
        let z2 = stream.normal();
        year.push(params.year_mean + params.year_sd * z1);
        let latent = rho * z1 + (1.0 - rho * rho).sqrt() * z2;
        age.push(params.age_mean + params.age_sd * left_skewed(latent, params.age_skew));
    }
    center(&mut year);
    center(&mut age);
    SimDesign::new(
        ["year".to_string(), "age".to_string()],
        year,
        age,
        sizes,
        "synthetic",
    )
}

/// Increasing, standardized transform of a standard normal with a long
/// left tail: minus a unit-variance log-normal evaluated at `-z`.
fn left_skewed(z: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return z;
    }
    let s2 = sigma * sigma;
    let mean = (0.5 * s2).exp();
    let sd = ((s2.exp() - 1.0) * s2.exp()).sqrt();
    -(((-sigma * z).exp() - mean) / sd)
}

fn center(values: &mut [f64]) {
    let m = values.iter().sum::<f64>() / values.len() as f64;
    values.iter_mut().for_each(|v| *v -= m);
}

/// Serializes a design as `total,year,age` with round-trip precision.
pub fn to_csv(design: &SimDesign) -> String {
    let mut out = format!("total,{},{}\n", design.names[0], design.names[1]);
    for i in 0..design.k() {
        out.push_str(&format!(
            "{},{:?},{:?}\n",
            design.sizes[i], design.x1[i], design.x2[i]
        ));
    }
    out
}

pub fn from_csv(text: &str, source: &str) -> Result<SimDesign> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    if headers.len() != 3 || &headers[0] != "total" {
        return Err(Error::Data(
            "design CSV must have columns total,<moderator1>,<moderator2>".into(),
        ));
    }
    let mut sizes = Vec::new();
    let mut x1 = Vec::new();
    let mut x2 = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Data(format!("design CSV row {}: bad {what}", i + 2));
        sizes.push(rec[0].parse().map_err(|_| bad("total"))?);
        x1.push(rec[1].parse().map_err(|_| bad(&headers[1]))?);
        x2.push(rec[2].parse().map_err(|_| bad(&headers[2]))?);
    }
    SimDesign::new(
        [headers[1].to_string(), headers[2].to_string()],
        x1,
        x2,
        sizes,
        source,
    )
}

/// The design shipped with the crate.
pub fn bundled() -> SimDesign {
    from_csv(BUNDLED, "synthetic").expect("bundled design parses")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_design_matches_generator() {
        let fresh = generate(&SyntheticParams::default()).unwrap();
        let shipped = bundled();
        assert_eq!(fresh.sizes, shipped.sizes);
        assert_eq!(fresh.x1, shipped.x1);
        assert_eq!(fresh.x2, shipped.x2);
    }

    #[test]
    fn bundled_design_shape() {
        let d = bundled();
        assert_eq!(d.k(), 181);
        assert!(d.sizes.iter().all(|&n| (50..=5000).contains(&n)));
        let s1: f64 = d.x1.iter().sum();
        let s2: f64 = d.x2.iter().sum();
        assert!(s1.abs() < 1e-9 && s2.abs() < 1e-9);
    }
}
