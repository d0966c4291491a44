//! Synthetic population with a known mean of 210.
//!
//! Each unit carries four independent standard-normal latent covariates `z`.
//! The outcome is linear in `z`, the response probability is logistic-linear
//! in `z`, and the analyst only sees the nonlinear transforms `x`.
//!
//! Random stream layout (fixed; changing it changes every seeded result):
//! the generator is ChaCha20 seeded with `seed_from_u64`, and replicate `r`
//! of a study uses the ChaCha stream id `r` under the study's base seed.
//! Per unit, draws are taken in the order `z1, z2, z3, z4, eps` from
//! `rand_distr::StandardNormal` (ziggurat), then one uniform `u` in `[0, 1)`;
//! the unit responds iff `u < pi`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub const TRUE_MEAN: f64 = 210.0;

/// Names of the analyst-visible covariates.
pub const X_NAMES: [&str; 4] = ["x1", "x2", "x3", "x4"];
/// Names of the latent covariates.
pub const Z_NAMES: [&str; 4] = ["z1", "z2", "z3", "z4"];

pub fn expit(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Observed covariates seen by the analyst.
pub fn transform_covariates(z: [f64; 4]) -> [f64; 4] {
    let [z1, z2, z3, z4] = z;
    [
        (z1 / 2.0).exp(),
        z2 / (1.0 + z1.exp()) + 10.0,
        (z1 * z3 / 25.0 + 0.6).powi(3),
        (z2 + z4 + 20.0).powi(2),
    ]
}

/// True conditional mean of `y` and true response probability.
pub fn true_structures(z: [f64; 4]) -> (f64, f64) {
    let [z1, z2, z3, z4] = z;
    let m = 210.0 + 27.4 * z1 + 13.7 * (z2 + z3 + z4);
    let pi = expit(-z1 + 0.5 * z2 - 0.25 * z3 - 0.1 * z4);
    (m, pi)
}

#[derive(Debug, Clone)]
pub struct LatentUnit {
    pub z: [f64; 4],
    pub m_true: f64,
    pub pi_true: f64,
    pub y: f64,
    pub t: bool,
}

impl LatentUnit {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let z: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let eps: f64 = rng.sample(StandardNormal);
        let u: f64 = rng.random();
        let (m_true, pi_true) = true_structures(z);
        LatentUnit {
            z,
            m_true,
            pi_true,
            y: m_true + eps,
            t: u < pi_true,
        }
    }
}

/// Hidden quantities retained for synthetic draws.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    /// n x 4 latent covariates.
    pub z: DMatrix<f64>,
    pub pi: Vec<f64>,
    pub m: Vec<f64>,
    /// Outcome for every unit, including nonrespondents.
    pub y: Vec<f64>,
}

/// Units with covariates, response indicators and partially observed outcomes.
///
/// `covariates` never contains an intercept column; model designs add one.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub covariates: DMatrix<f64>,
    pub names: Vec<String>,
    pub t: Vec<bool>,
    pub y: Vec<Option<f64>>,
    pub truth: Option<Truth>,
}

impl Dataset {
    pub fn new(
        covariates: DMatrix<f64>,
        names: Vec<String>,
        t: Vec<bool>,
        y: Vec<Option<f64>>,
    ) -> Result<Self> {
        let n = covariates.nrows();
        if names.len() != covariates.ncols() || t.len() != n || y.len() != n {
            return Err(Error::Dimension(format!(
                "{n} x {} covariates with {} names, {} indicators, {} outcomes",
                covariates.ncols(),
                names.len(),
                t.len(),
                y.len()
            )));
        }
        if let Some(pos) = covariates.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "covariate `{}` at unit {}",
                names[pos / n],
                pos % n
            )));
        }
        for (i, (ti, yi)) in t.iter().zip(&y).enumerate() {
            match (ti, yi) {
                (true, None) => {
                    return Err(Error::Config(format!("unit {i} responds but has no outcome")))
                }
                (false, Some(_)) => {
                    return Err(Error::Config(format!(
                        "unit {i} is a nonrespondent but has an outcome"
                    )))
                }
                (true, Some(v)) if !v.is_finite() => {
                    return Err(Error::NonFinite(format!("outcome at unit {i}")))
                }
                _ => {}
            }
        }
        Ok(Dataset {
            covariates,
            names,
            t,
            y,
            truth: None,
        })
    }

    pub fn n(&self) -> usize {
        self.t.len()
    }

    pub fn n_respondents(&self) -> usize {
        self.t.iter().filter(|&&t| t).count()
    }

    pub fn n_nonrespondents(&self) -> usize {
        self.n() - self.n_respondents()
    }

    /// Outcomes with `NaN` in place of missing values.
    pub fn y_or_nan(&self) -> Vec<f64> {
        self.y.iter().map(|v| v.unwrap_or(f64::NAN)).collect()
    }

    /// Index of a covariate column by name.
    pub fn column(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Copy without the hidden truth.
    pub fn observed(&self) -> Dataset {
        Dataset {
            truth: None,
            ..self.clone()
        }
    }
}

/// Generator for replicate `replicate` under `base_seed`.
pub fn replicate_rng(base_seed: u64, replicate: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(base_seed);
    rng.set_stream(replicate);
    rng
}

/// Draws `n` units using stream 0 of `seed`.
pub fn draw_sample(n: usize, seed: u64) -> Result<Dataset> {
    draw_sample_with(n, &mut replicate_rng(seed, 0))
}

pub fn draw_sample_with<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Config("sample size must be at least 1".into()));
    }
    let mut x = DMatrix::<f64>::zeros(n, 4);
    let mut z = DMatrix::<f64>::zeros(n, 4);
    let mut t = Vec::with_capacity(n);
    let mut y_obs = Vec::with_capacity(n);
    let mut pi = Vec::with_capacity(n);
    let mut m = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let unit = LatentUnit::draw(rng);
        let xi = transform_covariates(unit.z);
        for j in 0..4 {
            x[(i, j)] = xi[j];
            z[(i, j)] = unit.z[j];
        }
        t.push(unit.t);
        y_obs.push(unit.t.then_some(unit.y));
        pi.push(unit.pi_true);
        m.push(unit.m_true);
        y.push(unit.y);
    }
    Ok(Dataset {
        covariates: x,
        names: X_NAMES.iter().map(|s| s.to_string()).collect(),
        t,
        y: y_obs,
        truth: Some(Truth { z, pi, m, y }),
    })
}
