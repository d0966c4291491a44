use drmean::datagen::{
    draw_sample, expit, logit, replicate_rng, transform_covariates, true_structures, LatentUnit,
};
use drmean::glm::fit_linear;
use drmean::linalg::with_intercept;
use proptest::prelude::*;

/// Recovers `z` from `x` by undoing each transform in turn.
fn invert(x: [f64; 4]) -> [f64; 4] {
    let z1 = 2.0 * x[0].ln();
    let z2 = (x[1] - 10.0) * (1.0 + x[0] * x[0]);
    let z3 = 25.0 * (x[2].cbrt() - 0.6) / z1;
    let z4 = x[3].sqrt() - 20.0 - z2;
    [z1, z2, z3, z4]
}

fn oracle_logit(x: [f64; 4]) -> f64 {
    let [z1, z2, z3, z4] = invert(x);
    -z1 + 0.5 * z2 - 0.25 * z3 - 0.1 * z4
}

#[test]
fn logit_of_true_propensity_recovered_from_observed_covariates() {
    let mut rng = replicate_rng(99, 0);
    let mut checked = 0;
    while checked < 1000 {
        let unit = LatentUnit::draw(&mut rng);
        // z3 is only identified through z1 * z3
        if unit.z[0].abs() < 0.05 {
            continue;
        }
        let x = transform_covariates(unit.z);
        let target = logit(unit.pi_true);
        let got = oracle_logit(x);
        assert!(
            (got - target).abs() <= 1e-9 * target.abs().max(1.0),
            "z = {:?}: {got} vs {target}",
            unit.z
        );
        checked += 1;
    }
}

proptest! {
    #[test]
    fn transforms_invert(
        z1 in prop_oneof![-3.0..-0.05f64, 0.05..3.0f64],
        z2 in -3.0..3.0f64,
        z3 in -3.0..3.0f64,
        z4 in -3.0..3.0f64,
    ) {
        let back = invert(transform_covariates([z1, z2, z3, z4]));
        for (a, b) in back.iter().zip([z1, z2, z3, z4]) {
            prop_assert!((a - b).abs() < 1e-9, "{back:?}");
        }
    }

    #[test]
    fn propensity_strictly_inside_unit_interval(z in prop::array::uniform4(-8.0..8.0f64)) {
        let (_, pi) = true_structures(z);
        prop_assert!(pi > 0.0 && pi < 1.0);
        prop_assert!((logit(pi) - (-z[0] + 0.5 * z[1] - 0.25 * z[2] - 0.1 * z[3])).abs() < 1e-8);
    }
}

#[test]
fn expit_logit_round_trip() {
    for v in [-30.0, -5.0, -0.3, 0.0, 0.7, 4.0, 12.0] {
        assert!((logit(expit(v)) - v).abs() < 1e-6 * v.abs().max(1.0));
    }
    assert_eq!(expit(0.0), 0.5);
}

#[test]
fn population_averages() {
    let data = draw_sample(1_000_000, 2024).unwrap();
    let truth = data.truth.as_ref().unwrap();
    let n = data.n() as f64;
    let mean_m = truth.m.iter().sum::<f64>() / n;
    let mean_pi = truth.pi.iter().sum::<f64>() / n;
    assert!((mean_m - 210.0).abs() <= 0.1, "{mean_m}");
    assert!((mean_pi - 0.5).abs() <= 0.002, "{mean_pi}");
    assert!(truth.pi.iter().all(|&p| p > 0.0 && p < 1.0));

    let (mut s1, mut s0, mut n1) = (0.0, 0.0, 0usize);
    for (i, &t) in data.t.iter().enumerate() {
        if t {
            s1 += truth.y[i];
            n1 += 1;
        } else {
            s0 += truth.y[i];
        }
    }
    let n0 = data.n() - n1;
    assert!((s1 / n1 as f64 - 200.0).abs() <= 0.2);
    assert!((s0 / n0 as f64 - 220.0).abs() <= 0.2);
}

#[test]
fn observed_outcomes_match_truth_for_respondents() {
    let data = draw_sample(500, 3).unwrap();
    let truth = data.truth.as_ref().unwrap();
    for i in 0..data.n() {
        match data.y[i] {
            Some(v) => {
                assert!(data.t[i]);
                assert_eq!(v, truth.y[i]);
            }
            None => assert!(!data.t[i]),
        }
        let z = [0, 1, 2, 3].map(|j| truth.z[(i, j)]);
        let x = transform_covariates(z);
        for j in 0..4 {
            assert_eq!(data.covariates[(i, j)], x[j]);
        }
    }
    assert_eq!(data.n_respondents() + data.n_nonrespondents(), data.n());
    assert!(data.observed().truth.is_none());
}

#[test]
fn respondent_r_squared() {
    let reps = 200;
    let (mut r2_x, mut r2_z) = (0.0, 0.0);
    for r in 0..reps {
        let data = drmean::datagen::draw_sample_with(200, &mut replicate_rng(11, r)).unwrap();
        let y = data.y_or_nan();
        let fx = fit_linear(&with_intercept(&data.covariates), &y, &data.t, None).unwrap();
        let fz = fit_linear(&with_intercept(&data.truth.as_ref().unwrap().z), &y, &data.t, None)
            .unwrap();
        r2_x += fx.r_squared;
        r2_z += fz.r_squared;
    }
    let (r2_x, r2_z) = (r2_x / reps as f64, r2_z / reps as f64);
    assert!((r2_x - 0.81).abs() <= 0.05, "mean R^2 on x: {r2_x}");
    assert!(r2_z > 0.99, "mean R^2 on z: {r2_z}");
}
