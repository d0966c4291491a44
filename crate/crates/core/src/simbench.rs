//! Monte Carlo comparison of estimators on the synthetic population.
//!
//! Within a replicate every propensity model, every outcome model and every
//! estimator sees the same draw. Replicate `r` of a scenario draws from
//! [`replicate_rng`]`(base_seed, r)`, so results do not depend on how
//! replicates are scheduled across workers.

use std::fmt;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{draw_sample_with, replicate_rng, Dataset, TRUE_MEAN};
use crate::error::{Error, Result};
use crate::estimators::{EstimatorSpec, Inputs};
use crate::glm::{fit_binary, fit_linear, LinearFit, Link, PropensityFit};
use crate::linalg::with_intercept;

/// Whether a model is built on the latent `z` (correct) or observed `x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Covariates {
    Correct,
    Incorrect,
}

impl fmt::Display for Covariates {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Covariates::Correct => "Correct",
            Covariates::Incorrect => "Incorrect",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LinkKind {
    #[default]
    Logit,
    Robit,
}

/// Link selection as written in configs: `"link": "robit", "df": 4`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct LinkSpec {
    #[serde(default)]
    pub link: LinkKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub df: Option<f64>,
}

impl LinkSpec {
    pub const LOGIT: LinkSpec = LinkSpec {
        link: LinkKind::Logit,
        df: None,
    };

    pub fn robit(df: f64) -> Self {
        LinkSpec {
            link: LinkKind::Robit,
            df: Some(df),
        }
    }

    pub fn to_link(self) -> Result<Link> {
        let link = match (self.link, self.df) {
            (LinkKind::Logit, None) => Link::Logit,
            (LinkKind::Robit, Some(df)) => Link::Robit(df),
            (LinkKind::Logit, Some(_)) => {
                return Err(Error::Config("`df` only applies to the robit link".into()))
            }
            (LinkKind::Robit, None) => {
                return Err(Error::Config("robit link needs `df`".into()))
            }
        };
        link.validate()?;
        Ok(link)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiModel {
    pub covariates: Covariates,
    #[serde(flatten)]
    pub link: LinkSpec,
}

impl PiModel {
    pub fn logit(covariates: Covariates) -> Self {
        PiModel {
            covariates,
            link: LinkSpec::LOGIT,
        }
    }
}

impl fmt::Display for PiModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.link.link, self.link.df) {
            (LinkKind::Robit, Some(df)) => write!(f, "{} robit({df})", self.covariates),
            _ => write!(f, "{}", self.covariates),
        }
    }
}

/// One sample size with its model grid and estimator list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n: usize,
    pub replicates: usize,
    pub base_seed: u64,
    pub pi_models: Vec<PiModel>,
    pub y_models: Vec<Covariates>,
    pub estimators: Vec<EstimatorSpec>,
}

/// Scenarios across several sample sizes sharing everything else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub sample_sizes: Vec<usize>,
    pub replicates: usize,
    #[serde(default)]
    pub base_seed: u64,
    pub pi_models: Vec<PiModel>,
    pub y_models: Vec<Covariates>,
    pub estimators: Vec<EstimatorSpec>,
}

impl StudyConfig {
    pub fn scenarios(&self) -> Vec<ScenarioConfig> {
        self.sample_sizes
            .iter()
            .map(|&n| ScenarioConfig {
                n,
                replicates: self.replicates,
                base_seed: self.base_seed,
                pi_models: self.pi_models.clone(),
                y_models: self.y_models.clone(),
                estimators: self.estimators.clone(),
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_sizes.is_empty() {
            return Err(Error::Config("no sample sizes".into()));
        }
        self.scenarios().iter().try_for_each(ScenarioConfig::validate)
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 20 {
            return Err(Error::Config(format!("sample size {} is below 20", self.n)));
        }
        if self.replicates < 2 {
            return Err(Error::TooFewReplicates {
                successes: self.replicates,
            });
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("no estimators".into()));
        }
        for e in &self.estimators {
            e.validate()?;
            if e.uses_propensity() && self.pi_models.is_empty() {
                return Err(Error::Config(format!("{e} needs at least one pi-model")));
            }
            if e.uses_outcome_model() && self.y_models.is_empty() {
                return Err(Error::Config(format!("{e} needs at least one y-model")));
            }
        }
        for m in &self.pi_models {
            m.link.to_link()?;
        }
        Ok(())
    }

    /// Every (pi-model, y-model, estimator) combination in output order.
    pub fn cells(&self) -> Vec<CellKey> {
        let mut out = Vec::new();
        for &estimator in &self.estimators {
            let pis: Vec<Option<usize>> = if estimator.uses_propensity() {
                (0..self.pi_models.len()).map(Some).collect()
            } else {
                vec![None]
            };
            let ys: Vec<Option<usize>> = if estimator.uses_outcome_model() {
                (0..self.y_models.len()).map(Some).collect()
            } else {
                vec![None]
            };
            for &pi in &pis {
                for &y in &ys {
                    out.push(CellKey { pi, y, estimator });
                }
            }
        }
        out
    }
}

/// Indices into the scenario's model lists plus the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellKey {
    pub pi: Option<usize>,
    pub y: Option<usize>,
    pub estimator: EstimatorSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome {
    pub cell: CellKey,
    pub estimate: std::result::Result<f64, String>,
}

fn design(data: &Dataset, covariates: Covariates) -> DMatrix<f64> {
    match covariates {
        Covariates::Incorrect => with_intercept(&data.covariates),
        Covariates::Correct => with_intercept(
            &data
                .truth
                .as_ref()
                .expect("synthetic draws carry the latent covariates")
                .z,
        ),
    }
}

fn fit_pi(data: &Dataset, model: PiModel) -> std::result::Result<PropensityFit, String> {
    let link = model.link.to_link().map_err(|e| e.to_string())?;
    let fit = fit_binary(&design(data, model.covariates), &data.t, link)
        .map_err(|e| e.to_string())?;
    if !fit.converged {
        return Err(format!("propensity fit did not converge ({model})"));
    }
    Ok(fit)
}

/// Draws replicate `index` and evaluates every cell on it.
pub fn run_replicate(scenario: &ScenarioConfig, index: usize) -> Result<Vec<ReplicateOutcome>> {
    let mut rng = replicate_rng(scenario.base_seed, index as u64);
    let data = draw_sample_with(scenario.n, &mut rng)?;
    let y = data.y_or_nan();

    let pi_fits: Vec<_> = scenario.pi_models.iter().map(|&m| fit_pi(&data, m)).collect();
    let y_designs: Vec<DMatrix<f64>> =
        scenario.y_models.iter().map(|&c| design(&data, c)).collect();
    let y_fits: Vec<std::result::Result<LinearFit, String>> = y_designs
        .iter()
        .map(|x| fit_linear(x, &y, &data.t, None).map_err(|e| e.to_string()))
        .collect();

    let outcomes = scenario
        .cells()
        .into_iter()
        .map(|cell| {
            let estimate = (|| {
                let pi_fit = match cell.pi {
                    Some(k) => Some(pi_fits[k].as_ref().map_err(Clone::clone)?),
                    None => None,
                };
                let y_fit = match cell.y {
                    Some(k) => Some(y_fits[k].as_ref().map_err(Clone::clone)?),
                    None => None,
                };
                let inputs = Inputs {
                    data: &data,
                    pi_hat: pi_fit.map(|f| f.pi.as_slice()),
                    eta_hat: pi_fit.map(|f| f.eta.as_slice()),
                    y_design: cell.y.map(|k| &y_designs[k]),
                    y_fit,
                };
                let r = cell.estimator.evaluate(&inputs).map_err(|e| e.to_string())?;
                if r.mu_hat.is_finite() {
                    Ok(r.mu_hat)
                } else {
                    Err(format!("non-finite estimate {}", r.mu_hat))
                }
            })();
            ReplicateOutcome { cell, estimate }
        })
        .collect();
    Ok(outcomes)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub bias: f64,
    pub sd: f64,
    pub pct_bias: f64,
    pub rmse: f64,
    pub mae: f64,
}

/// Bias, %Bias (relative to the replicate sd, divisor R - 1), RMSE and
/// median absolute error against `truth`.
pub fn summarize(estimates: &[f64], truth: f64) -> Result<Metrics> {
    let r = estimates.len();
    if r < 2 {
        return Err(Error::TooFewReplicates { successes: r });
    }
    let rf = r as f64;
    let mean = estimates.iter().sum::<f64>() / rf;
    let bias = mean - truth;
    let sd = (estimates.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (rf - 1.0)).sqrt();
    let rmse = (estimates.iter().map(|v| (v - truth).powi(2)).sum::<f64>() / rf).sqrt();
    let mut abs: Vec<f64> = estimates.iter().map(|v| (v - truth).abs()).collect();
    abs.sort_by(f64::total_cmp);
    let mae = if r % 2 == 1 {
        abs[r / 2]
    } else {
        0.5 * (abs[r / 2 - 1] + abs[r / 2])
    };
    let pct_bias = if bias == 0.0 { 0.0 } else { 100.0 * bias / sd };
    Ok(Metrics {
        bias,
        sd,
        pct_bias,
        rmse,
        mae,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub n: usize,
    pub pi_model: Option<PiModel>,
    pub y_model: Option<Covariates>,
    pub estimator: EstimatorSpec,
    /// `None` when fewer than two replicates succeeded.
    pub metrics: Option<Metrics>,
    pub replicates: usize,
    pub failures: usize,
    /// First failure message, if any.
    pub first_failure: Option<String>,
}

impl MetricsRow {
    pub fn scenario_id(&self) -> String {
        let pi = self.pi_model.map_or("-".to_string(), |m| m.to_string());
        let y = self.y_model.map_or("-".to_string(), |m| m.to_string());
        format!("n={} pi={} y={}", self.n, pi, y)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    /// The row for an exact (n, pi-model, y-model, estimator) combination.
    pub fn find(
        &self,
        n: usize,
        pi_model: Option<PiModel>,
        y_model: Option<Covariates>,
        estimator: EstimatorSpec,
    ) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| {
            r.n == n && r.pi_model == pi_model && r.y_model == y_model && r.estimator == estimator
        })
    }
}

/// Runs all replicates of one scenario. `workers = None` uses rayon's global
/// pool, `Some(1)` runs serially.
pub fn run_scenario(scenario: &ScenarioConfig, workers: Option<usize>) -> Result<Vec<MetricsRow>> {
    scenario.validate()?;
    let run = |i: usize| run_replicate(scenario, i);
    let replicates: Vec<Vec<ReplicateOutcome>> = match workers {
        Some(1) => (0..scenario.replicates).map(run).collect::<Result<_>>()?,
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(|| (0..scenario.replicates).into_par_iter().map(run).collect::<Result<_>>())?,
        None => (0..scenario.replicates)
            .into_par_iter()
            .map(run)
            .collect::<Result<_>>()?,
    };

    let cells = scenario.cells();
    let mut rows = Vec::with_capacity(cells.len());
    for (c, cell) in cells.iter().enumerate() {
        let mut values = Vec::with_capacity(scenario.replicates);
        let mut failures = 0;
        let mut first_failure = None;
        for rep in &replicates {
            match &rep[c].estimate {
                Ok(v) => values.push(*v),
                Err(msg) => {
                    failures += 1;
                    first_failure.get_or_insert_with(|| msg.clone());
                }
            }
        }
        rows.push(MetricsRow {
            n: scenario.n,
            pi_model: cell.pi.map(|k| scenario.pi_models[k]),
            y_model: cell.y.map(|k| scenario.y_models[k]),
            estimator: cell.estimator,
            metrics: summarize(&values, TRUE_MEAN).ok(),
            replicates: scenario.replicates,
            failures,
            first_failure,
        });
    }
    Ok(rows)
}

pub fn run_study(config: &StudyConfig, workers: Option<usize>) -> Result<MetricsTable> {
    config.validate()?;
    let mut table = MetricsTable::default();
    for scenario in config.scenarios() {
        table.rows.extend(run_scenario(&scenario, workers)?);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summarize_examples() {
        let m = summarize(&[210.0, 210.0, 210.0], 210.0).unwrap();
        assert_eq!((m.bias, m.pct_bias, m.rmse, m.mae), (0.0, 0.0, 0.0, 0.0));

        let m = summarize(&[209.0, 211.0], 210.0).unwrap();
        assert_eq!(m.bias, 0.0);
        assert!((m.sd - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(m.pct_bias, 0.0);
        assert!((m.rmse - 1.0).abs() < 1e-12);
        assert_eq!(m.mae, 1.0);

        let m = summarize(&[210.0, 212.0], 210.0).unwrap();
        assert_eq!(m.bias, 1.0);
        assert!((m.pct_bias - 100.0 / 2f64.sqrt()).abs() < 1e-9);
        assert!((m.pct_bias - 70.7).abs() < 0.05);
        assert!((m.rmse - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(m.mae, 1.0);

        assert!(matches!(
            summarize(&[210.0], 210.0),
            Err(Error::TooFewReplicates { successes: 1 })
        ));
    }

    fn small_scenario(estimators: Vec<EstimatorSpec>, replicates: usize) -> ScenarioConfig {
        ScenarioConfig {
            n: 200,
            replicates,
            base_seed: 11,
            pi_models: vec![PiModel::logit(Covariates::Correct), PiModel::logit(Covariates::Incorrect)],
            y_models: vec![Covariates::Correct, Covariates::Incorrect],
            estimators,
        }
    }

    #[test]
    fn replicate_is_deterministic() {
        let s = small_scenario(EstimatorSpec::all(), 3);
        assert_eq!(run_replicate(&s, 2).unwrap(), run_replicate(&s, 2).unwrap());
        assert_ne!(run_replicate(&s, 1).unwrap(), run_replicate(&s, 2).unwrap());
    }

    #[test]
    fn naive_replicate_is_respondent_mean() {
        let s = small_scenario(vec![EstimatorSpec::NaiveMean], 2);
        let out = run_replicate(&s, 0).unwrap();
        assert_eq!(out.len(), 1);
        let data = draw_sample_with(200, &mut replicate_rng(11, 0)).unwrap();
        let ybar = data.y.iter().flatten().sum::<f64>() / data.n_respondents() as f64;
        assert_eq!(out[0].estimate, Ok(ybar));
    }

    #[test]
    fn cells_follow_model_usage() {
        let s = small_scenario(
            vec![EstimatorSpec::NaiveMean, EstimatorSpec::IpwPop, EstimatorSpec::OlsReg, EstimatorSpec::WlsReg],
            2,
        );
        // 1 + 2 + 2 + 4
        assert_eq!(s.cells().len(), 9);
    }

    #[test]
    fn single_replicate_is_rejected() {
        let s = small_scenario(vec![EstimatorSpec::IpwPop], 1);
        assert!(matches!(
            run_scenario(&s, Some(1)),
            Err(Error::TooFewReplicates { .. })
        ));
    }

    #[test]
    fn config_json_shape() {
        let json = r#"{
            "sample_sizes": [200, 1000],
            "replicates": 10,
            "base_seed": 3,
            "pi_models": [{"covariates": "correct"}, {"covariates": "incorrect", "link": "robit", "df": 4}],
            "y_models": ["correct", "incorrect"],
            "estimators": [{"method": "ipw_pop"}, {"method": "bc_ols_strat"}]
        }"#;
        let cfg: StudyConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.pi_models[1].link, LinkSpec::robit(4.0));
        assert_eq!(cfg.pi_models[0].link, LinkSpec::LOGIT);
        assert_eq!(cfg.estimators[1], EstimatorSpec::BcOlsStrat { strata: 5 });
        cfg.validate().unwrap();
    }
}
