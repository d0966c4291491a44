use nalgebra::DMatrix;
use proptest::prelude::*;

use drmean::datagen::{draw_sample, logit, Dataset};
use drmean::estimators::{
    ipw_pop, make_strata, naive_mean, ols_reg, pi_cov_reg, strat_pi, Basis, EstimatorSpec,
    Inputs, Target,
};
use drmean::glm::{fit_binary, fit_linear, Link};
use drmean::linalg::with_intercept;
use drmean::Error;

/// Random small dataset with an empty covariate matrix.
fn bare(pi: &[f64], t: &[bool], y: &[f64]) -> Dataset {
    let n = t.len();
    let yy = t.iter().zip(y).map(|(&ti, &v)| ti.then_some(v)).collect();
    Dataset::new(DMatrix::zeros(n, 0), Vec::new(), t.to_vec(), yy).unwrap_or_else(|e| {
        panic!("{e} with pi {pi:?}");
    })
}

fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<bool>, Vec<f64>)> {
    (10usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(0.02..0.98f64, n),
            prop::collection::vec(prop::bool::weighted(0.6), n),
            prop::collection::vec(150.0..250.0f64, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn strata_invariant_under_monotone_transform(score in prop::collection::vec(-5.0..5.0f64, 10..80), s in 1usize..6) {
        let a = make_strata(&score, s);
        let transformed: Vec<f64> = score.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
        let b = make_strata(&transformed, s);
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a.labels, b.labels),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "{a:?} vs {b:?}"),
        }
    }

    #[test]
    fn strata_partition_units(score in prop::collection::vec(0.0..1.0f64, 10..80), s in 1usize..6) {
        let a = make_strata(&score, s).unwrap();
        prop_assert_eq!(a.labels.len(), score.len());
        prop_assert_eq!(a.cutpoints.len(), s - 1);
        prop_assert!(a.cutpoints.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(a.sizes().iter().sum::<usize>(), score.len());
        for (&v, &l) in score.iter().zip(&a.labels) {
            if l > 0 {
                prop_assert!(v > a.cutpoints[l - 1]);
            }
            if l < s - 1 {
                prop_assert!(v <= a.cutpoints[l]);
            }
        }
    }

    #[test]
    fn strat_pi_depends_only_on_ordering((pi, mut t, y) in instance()) {
        t[0] = true;
        let data = bare(&pi, &t, &y);
        let ranks: Vec<f64> = {
            let mut idx: Vec<usize> = (0..pi.len()).collect();
            idx.sort_by(|&a, &b| pi[a].total_cmp(&pi[b]));
            let mut r = vec![0.0; pi.len()];
            for (k, &i) in idx.iter().enumerate() {
                r[i] = k as f64;
            }
            r
        };
        for target in [Target::Pop, Target::Nr] {
            let a = strat_pi(&data, &pi, 5, target);
            let b = strat_pi(&data, &ranks, 5, target);
            match (a, b) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a.mu_hat, b.mu_hat),
                (Err(_), Err(_)) => {}
                (a, b) => prop_assert!(false, "{a:?} vs {b:?}"),
            }
        }
    }

    #[test]
    fn dummies_equal_stratification_without_covariates((pi, mut t, y) in instance()) {
        t[0] = true;
        let data = bare(&pi, &t, &y);
        let design = DMatrix::from_element(pi.len(), 1, 1.0);
        let eta: Vec<f64> = pi.iter().map(|&p| logit(p)).collect();
        let a = strat_pi(&data, &pi, 5, Target::Pop).unwrap();
        let b = pi_cov_reg(&data, &design, &pi, &eta, Basis::QuintileDummies(5)).unwrap();
        prop_assert!((a.mu_hat - b.mu_hat).abs() <= 1e-10);
        prop_assert_eq!(a.diagnostics.collapsed_strata, b.diagnostics.collapsed_strata);
    }

    #[test]
    fn ipw_pop_invariant_to_global_rescale((pi, mut t, y) in instance(), c in 0.05..1.0f64) {
        t[0] = true;
        let data = bare(&pi, &t, &y);
        let scaled: Vec<f64> = pi.iter().map(|p| p * c).collect();
        let a = ipw_pop(&data, &pi).unwrap().mu_hat;
        let b = ipw_pop(&data, &scaled).unwrap().mu_hat;
        prop_assert!((a - b).abs() <= 1e-10 * a.abs());
    }

    #[test]
    fn full_response_collapse(seed in 0u64..500, n in 30usize..120) {
        let mut data = draw_sample(n, seed).unwrap();
        let y = data.truth.as_ref().unwrap().y.clone();
        data.t = vec![true; n];
        data.y = y.iter().map(|&v| Some(v)).collect();
        let ybar = y.iter().sum::<f64>() / n as f64;
        let design = with_intercept(&data.covariates);
        let fit = fit_linear(&design, &data.y_or_nan(), &data.t, None).unwrap();
        let varying: Vec<f64> = (0..n).map(|i| 0.1 + 0.8 * ((i * 37 + seed as usize) % 101) as f64 / 100.0).collect();
        let constant = vec![0.3; n];
        for spec in EstimatorSpec::all() {
            if !spec.uses_outcome_model() {
                continue;
            }
            // weighting the residuals or the fit needs equal weights to collapse
            let pi = match spec {
                EstimatorSpec::BcOlsPop
                | EstimatorSpec::BcOlsPopNormalized
                | EstimatorSpec::BcOlsNr
                | EstimatorSpec::WlsReg => &constant,
                _ => &varying,
            };
            let inputs = Inputs {
                data: &data,
                pi_hat: Some(pi),
                eta_hat: None,
                y_design: Some(&design),
                y_fit: Some(&fit),
            };
            let got = spec.evaluate(&inputs).unwrap().mu_hat;
            prop_assert!((got - ybar).abs() <= 1e-10 * ybar, "{spec}: {got} vs {ybar}");
        }
    }
}

#[test]
fn single_stratum_and_intercept_only_reduce_to_respondent_mean() {
    let data = draw_sample(300, 77).unwrap();
    let ybar1 = naive_mean(&data).unwrap().mu_hat;
    let design = with_intercept(&data.covariates);
    let fit = fit_binary(&design, &data.t, Link::Logit).unwrap();
    let s1 = strat_pi(&data, &fit.pi, 1, Target::Pop).unwrap().mu_hat;
    assert!((s1 - ybar1).abs() < 1e-10);
    let ones = DMatrix::from_element(data.n(), 1, 1.0);
    let y_fit = fit_linear(&ones, &data.y_or_nan(), &data.t, None).unwrap();
    assert!((ols_reg(&data, &y_fit).unwrap().mu_hat - ybar1).abs() < 1e-10);
}

#[test]
fn respondent_mean_of_large_draw() {
    let data = draw_sample(100_000, 6).unwrap();
    let m = naive_mean(&data).unwrap().mu_hat;
    assert!((m - 200.0).abs() <= 0.3, "{m}");
}

#[test]
fn zero_propensity_is_an_infinite_weight() {
    let data = bare(&[0.5, 0.0, 0.2], &[true, true, false], &[2.0, 4.0, 0.0]);
    let err = ipw_pop(&data, &[0.5, 0.0, 0.2]).unwrap_err();
    assert!(matches!(err, Error::InfiniteWeight { index: 1 }));
    assert!(err.to_string().contains("infinite weight"));
}

#[test]
fn estimator_specs_parse_with_defaults() {
    let spec: EstimatorSpec = serde_json::from_str(r#"{"method": "pi_cov_dummies"}"#).unwrap();
    assert_eq!(spec, EstimatorSpec::PiCovDummies { strata: 5 });
    let spec: EstimatorSpec =
        serde_json::from_str(r#"{"method": "strat_pi", "strata": 3, "target": "nr"}"#).unwrap();
    assert_eq!(spec, EstimatorSpec::StratPi { strata: 3, target: Target::Nr });
    assert!(serde_json::from_str::<EstimatorSpec>(r#"{"method": "strat_pi", "stratta": 3}"#).is_err());
    assert!(serde_json::from_str::<EstimatorSpec>(r#"{"method": "bogus"}"#).is_err());
    assert!(EstimatorSpec::StratPiM { strata: 0 }.validate().is_err());
}
