#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

use metareg::{DesignMatrix, EffectData, SeedSpec, Stream};

/// A small random meta-regression problem.
pub struct Instance {
    pub design: DesignMatrix,
    pub effects: Vec<EffectData>,
}

/// k studies, p coefficients (intercept plus p - 1 moderators).
pub fn random_instance(seed: u64, k: usize, p: usize) -> Instance {
    let mut rng = Stream::new(SeedSpec::new(seed, 7));
    let names = ["a", "b", "c"];
    let cols: Vec<Vec<f64>> = (1..p)
        .map(|_| (0..k).map(|_| rng.normal()).collect())
        .collect();
    let design = if p == 1 {
        DesignMatrix::intercept(k)
    } else {
        let named: Vec<(&str, &[f64])> = cols
            .iter()
            .enumerate()
            .map(|(j, c)| (names[j], c.as_slice()))
            .collect();
        DesignMatrix::from_columns(&named, false).unwrap()
    };
    let tau2 = rng.uniform() * 0.8;
    let beta: Vec<f64> = (0..p).map(|_| rng.normal()).collect();
    let effects = (0..k)
        .map(|i| {
            let v = 0.05 + rng.uniform();
            let mean: f64 = (0..p).map(|j| design.get(i, j) * beta[j]).sum();
            EffectData {
                y: mean + (v + tau2).sqrt() * rng.normal(),
                v,
            }
        })
        .collect();
    Instance { design, effects }
}

/// Restricted log-likelihood from dense matrices, up to a constant.
pub fn dense_restricted_loglik(tau2: f64, design: &DesignMatrix, effects: &[EffectData]) -> f64 {
    let k = design.nrows();
    let p = design.ncols();
    let x = DMatrix::from_fn(k, p, |i, j| design.get(i, j));
    let y = DVector::from_iterator(k, effects.iter().map(|e| e.y));
    let v = DMatrix::from_diagonal(&DVector::from_iterator(
        k,
        effects.iter().map(|e| e.v + tau2),
    ));
    let v_inv = v.clone().try_inverse().unwrap();
    let xtvx = x.transpose() * &v_inv * &x;
    let xtvx_inv = xtvx.clone().try_inverse().unwrap();
    let proj = &v_inv - &v_inv * &x * xtvx_inv * x.transpose() * &v_inv;
    let quad = (y.transpose() * proj * &y)[(0, 0)];
    -0.5 * (v.determinant().ln() + xtvx.determinant().ln() + quad)
}

/// Grid maximiser on [0, upper] at resolution `step`: a coarse pass then
/// a fine pass around the coarse winner.
pub fn grid_argmax(f: impl Fn(f64) -> f64, upper: f64, step: f64) -> f64 {
    let best = |lo: f64, hi: f64, h: f64| {
        let n = ((hi - lo) / h).round() as usize;
        (0..=n)
            .map(|i| (lo + h * i as f64).min(hi))
            .map(|t| (t, f(t)))
            .fold(
                (lo, f64::NEG_INFINITY),
                |a, b| if b.1 > a.1 { b } else { a },
            )
            .0
    };
    let coarse = step * 20.0;
    let c = best(0.0, upper, coarse);
    best((c - coarse).max(0.0), (c + coarse).min(upper), step)
}
