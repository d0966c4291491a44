use drmean::datagen::{draw_sample_with, replicate_rng};
use drmean::estimators::{EstimatorSpec, Target};
use drmean::simbench::{
    run_replicate, run_scenario, run_study, summarize, Covariates, LinkSpec, PiModel,
    ScenarioConfig, StudyConfig,
};
use drmean::Error;

fn scenario(n: usize, replicates: usize, estimators: Vec<EstimatorSpec>) -> ScenarioConfig {
    ScenarioConfig {
        n,
        replicates,
        base_seed: 404,
        pi_models: vec![
            PiModel::logit(Covariates::Correct),
            PiModel::logit(Covariates::Incorrect),
            PiModel {
                covariates: Covariates::Incorrect,
                link: LinkSpec::robit(4.0),
            },
        ],
        y_models: vec![Covariates::Correct, Covariates::Incorrect],
        estimators,
    }
}

#[test]
fn parallel_and_serial_runs_agree_bitwise() {
    let s = scenario(200, 24, EstimatorSpec::all());
    let serial = run_scenario(&s, Some(1)).unwrap();
    let parallel = run_scenario(&s, Some(8)).unwrap();
    assert_eq!(serial, parallel);
    for (a, b) in serial.iter().zip(&parallel) {
        if let (Some(x), Some(y)) = (a.metrics, b.metrics) {
            assert_eq!(x.bias.to_bits(), y.bias.to_bits());
            assert_eq!(x.rmse.to_bits(), y.rmse.to_bits());
        }
    }
}

#[test]
fn replicate_is_deterministic_and_naive_matches_draw() {
    let s = scenario(150, 5, vec![EstimatorSpec::NaiveMean]);
    let a = run_replicate(&s, 3).unwrap();
    assert_eq!(a, run_replicate(&s, 3).unwrap());
    assert_eq!(a.len(), 1);
    let data = draw_sample_with(150, &mut replicate_rng(404, 3)).unwrap();
    let ybar1 = data.y.iter().flatten().sum::<f64>() / data.n_respondents() as f64;
    assert_eq!(a[0].estimate, Ok(ybar1));
}

#[test]
fn single_replicate_rejected() {
    let s = scenario(200, 1, vec![EstimatorSpec::IpwPop]);
    assert!(matches!(
        run_scenario(&s, Some(1)),
        Err(Error::TooFewReplicates { successes: 1 })
    ));
    assert!(summarize(&[210.0], 210.0).is_err());
}

#[test]
fn doubly_robust_estimates_concentrate_when_both_models_correct() {
    let s = ScenarioConfig {
        pi_models: vec![PiModel::logit(Covariates::Correct)],
        y_models: vec![Covariates::Correct],
        ..scenario(
            1000,
            1000,
            vec![
                EstimatorSpec::BcOlsPop,
                EstimatorSpec::WlsReg,
                EstimatorSpec::PiCovDummies { strata: 5 },
            ],
        )
    };
    let mut inside = [0usize; 3];
    for r in 0..s.replicates {
        for (k, out) in run_replicate(&s, r).unwrap().iter().enumerate() {
            if let Ok(v) = out.estimate {
                if (v - 210.0).abs() <= 6.0 {
                    inside[k] += 1;
                }
            }
        }
    }
    assert!(inside.iter().all(|&c| c >= 999), "{inside:?}");
}

#[test]
fn ipw_and_stratification_small_sample_rows() {
    let strat = EstimatorSpec::StratPi {
        strata: 5,
        target: Target::Pop,
    };
    let config = StudyConfig {
        sample_sizes: vec![200, 1000],
        replicates: 1000,
        base_seed: 77,
        pi_models: vec![
            PiModel::logit(Covariates::Correct),
            PiModel::logit(Covariates::Incorrect),
        ],
        y_models: vec![Covariates::Correct],
        estimators: vec![EstimatorSpec::IpwPop, EstimatorSpec::IpwNr, strat],
    };
    let table = run_study(&config, None).unwrap();
    let correct = Some(PiModel::logit(Covariates::Correct));
    let incorrect = Some(PiModel::logit(Covariates::Incorrect));

    let pop = table.find(200, correct, None, EstimatorSpec::IpwPop).unwrap().metrics.unwrap();
    assert!((pop.bias - -0.27).abs() <= 0.4, "{pop:?}");
    assert!((pop.rmse - 3.86).abs() <= 0.15 * 3.86, "{pop:?}");
    let nr = table.find(200, correct, None, EstimatorSpec::IpwNr).unwrap().metrics.unwrap();
    assert!((nr.bias - -0.29).abs() <= 0.4, "{nr:?}");
    assert!((nr.rmse - 3.60).abs() <= 0.15 * 3.60, "{nr:?}");

    // stratification bias under the wrong model stays put as n grows
    let small = table.find(200, incorrect, None, strat).unwrap().metrics.unwrap();
    let large = table.find(1000, incorrect, None, strat).unwrap().metrics.unwrap();
    for m in [small, large] {
        assert!((m.bias - -2.85).abs() <= 0.4, "{m:?}");
    }
    assert!(large.bias.abs() >= small.bias.abs() - 0.3);

    for row in &table.rows {
        let m = row.metrics.unwrap();
        assert!(m.rmse >= m.bias.abs() && m.mae >= 0.0);
        assert_eq!(row.replicates, 1000);
        assert_eq!(row.failures, 0);
    }
}

#[test]
fn metrics_examples() {
    let m = summarize(&[210.0, 212.0], 210.0).unwrap();
    assert_eq!(m.bias, 1.0);
    assert!((m.sd - 2f64.sqrt()).abs() < 1e-12);
    assert!((m.pct_bias - 100.0 / 2f64.sqrt()).abs() < 1e-9);
    assert!((m.rmse - 2f64.sqrt()).abs() < 1e-12);
    assert_eq!(m.mae, 1.0);
}
