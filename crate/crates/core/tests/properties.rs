mod common;

use censaft::bj::{
    bj_imputed_responses, bj_iterate, bj_resample_distribution, bj_resample_distribution_with,
    conditional_tail_mean, conditional_tail_median, residual_km, residual_km_weighted,
    MultiplierSource, ResampleOptions, ResidualSet,
};
use censaft::impute::{
    mean_impute_all, predicted_difference, run_pipeline, tail_ties_iterative_with,
    ImputationMethod, PipelineOptions, TimeScale,
};
use censaft::swls::fit_penalized_swls;
use censaft::{km_estimate, order_dataset, stute_weights, SurvivalDataset};
use common::{km_reference, ols, random_dataset, random_ordered, rng};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn arb_dataset(max_n: usize, p: usize) -> impl Strategy<Value = SurvivalDataset> {
    (1usize..=max_n, 0.0f64..0.8, any::<u64>()).prop_map(move |(n, c, seed)| {
        random_dataset(&mut rng(seed), n, p, c, false)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn corrected_weights_are_km_jumps(data in arb_dataset(200, 0)) {
        let ordered = order_dataset(&data);
        let w = stute_weights(&ordered, true);
        prop_assert!((w.total() - 1.0).abs() < 1e-12);
        let reference = km_reference(data.times(), data.events(), true);
        for (t, before, after) in reference {
            let mass: f64 = (0..ordered.n())
                .filter(|&i| ordered.times()[i] == t)
                .map(|i| w.weights[i])
                .sum();
            prop_assert!((mass - (before - after)).abs() < 1e-12);
        }
    }

    #[test]
    fn curve_matches_textbook_product_limit(data in arb_dataset(120, 0), tc in any::<bool>()) {
        let curve = km_estimate(&order_dataset(&data), tc);
        let reference = km_reference(data.times(), data.events(), tc);
        prop_assert_eq!(curve.event_times.len(), reference.len());
        for (k, (t, _, after)) in reference.iter().enumerate() {
            prop_assert_eq!(curve.event_times[k], *t);
            prop_assert!((curve.survival[k] - after).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_follow_observations_under_permutation(data in arb_dataset(60, 1), seed in any::<u64>()) {
        let n = data.n();
        let mut order: Vec<usize> = (0..n).collect();
        let mut r = rng(seed);
        for i in (1..n).rev() {
            order.swap(i, r.random_range(0..=i));
        }
        let shuffled = SurvivalDataset::new(
            order.iter().map(|&i| data.times()[i]).collect(),
            order.iter().map(|&i| data.events()[i]).collect(),
            DMatrix::from_fn(n, 1, |i, j| data.covariates()[(order[i], j)]),
        ).unwrap();
        let a = order_dataset(&data);
        let b = order_dataset(&shuffled);
        let wa = stute_weights(&a, true);
        let wb = stute_weights(&b, true);
        // Same times and statuses in the same ordered slots.
        prop_assert_eq!(a.times(), b.times());
        prop_assert_eq!(a.events(), b.events());
        for i in 0..n {
            prop_assert!((wa.weights[i] - wb.weights[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn tail_summaries_lie_above_anchor(seed in any::<u64>(), anchor in -2.0f64..2.0) {
        let mut r = rng(seed);
        let n = r.random_range(1..40);
        let res = ResidualSet::new(
            (0..n).map(|_| common::normal(&mut r)).collect(),
            (0..n).map(|_| r.random::<f64>() < 0.7).collect(),
            vec![],
        ).unwrap();
        let km = residual_km(&res);
        if let Some(mean) = conditional_tail_mean(&km, anchor) {
            prop_assert!(mean > anchor);
            let median = conditional_tail_median(&km, anchor).unwrap();
            prop_assert!(median > anchor);
            prop_assert!(res.residuals.contains(&median));
        } else {
            prop_assert!(conditional_tail_median(&km, anchor).is_none());
        }
        let c = r.random_range(0.1..10.0);
        let scaled = residual_km_weighted(&res, &vec![c; n]).unwrap();
        for (x, y) in scaled.cdf.iter().zip(&km.cdf) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn imputation_never_decreases_responses(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.random_range(5..60);
        let data = random_ordered(&mut r, n, 2, 0.4, false);
        let beta = [common::normal(&mut r), common::normal(&mut r)];
        let out = bj_imputed_responses(&data, &beta).unwrap();
        for i in 0..n {
            prop_assert!(out.responses[i] >= data.log_times()[i]);
        }
    }
}

#[test]
fn bj_imputation_matches_direct_formula() {
    // Direct evaluation of X'b + sum_{xi_j > xi_i} xi_j dF(xi_j) / sum dF.
    let mut r = rng(8);
    let data = random_ordered(&mut r, 6, 1, 0.4, true);
    let beta = [0.3];
    let res: Vec<f64> = (0..6)
        .map(|i| data.log_times()[i] - data.covariates()[(i, 0)] * beta[0])
        .collect();
    let mut order: Vec<usize> = (0..6).collect();
    order.sort_by(|&a, &b| res[a].partial_cmp(&res[b]).unwrap().then(data.events()[b].cmp(&data.events()[a])));
    let mut jumps = [0.0; 6];
    let mut s = 1.0;
    for (k, &i) in order.iter().enumerate() {
        if data.events()[i] {
            let drop = s / (6 - k) as f64;
            jumps[i] = drop;
            s -= drop;
        }
    }
    let out = bj_imputed_responses(&data, &beta).unwrap();
    for i in (0..6).filter(|&i| !data.events()[i]) {
        let above: Vec<usize> = (0..6).filter(|&j| res[j] > res[i] && jumps[j] > 0.0).collect();
        if above.is_empty() {
            assert_eq!(out.responses[i], data.log_times()[i]);
            continue;
        }
        let mass: f64 = above.iter().map(|&j| jumps[j]).sum();
        let mean = above.iter().map(|&j| res[j] * jumps[j]).sum::<f64>() / mass;
        let expected = data.covariates()[(i, 0)] * beta[0] + mean;
        assert!((out.responses[i] - expected).abs() < 1e-12);
    }
}

#[test]
fn bj_trace_matches_reference_iteration() {
    let mut r = rng(21);
    let data = random_ordered(&mut r, 40, 2, 0.3, true);
    let trace = bj_iterate(&data, &[0.0, 0.0], 4, 0.0).unwrap();
    let mut beta = vec![0.0, 0.0];
    for step in &trace.trace {
        let y = bj_imputed_responses(&data, &beta).unwrap().responses;
        beta = ols(data.covariates(), &y).1;
        for (a, b) in step.iter().zip(&beta) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn unit_multipliers_reproduce_plain_pipeline() {
    let mut r = rng(4);
    let data = random_ordered(&mut r, 50, 2, 0.3, true);
    let opts = ResampleOptions {
        multipliers: MultiplierSource::Ones,
        ..ResampleOptions::default()
    };
    let draws = bj_resample_distribution_with(&data, 0.01, 3, 1, 9, &opts).unwrap();
    let init = fit_penalized_swls(&data, 0.01, true).unwrap();
    let plain = bj_iterate(&data, &init.beta, 3, 0.0).unwrap();
    for j in 0..2 {
        assert!((draws[(0, j)] - plain.beta[j]).abs() < 1e-10);
    }
}

#[test]
fn resampling_mean_is_close_to_plain_iterate() {
    let mut r = rng(12);
    let data = random_ordered(&mut r, 80, 2, 0.3, true);
    let draws = bj_resample_distribution(&data, 0.01, 3, 200, 77).unwrap();
    let init = fit_penalized_swls(&data, 0.01, true).unwrap();
    let plain = bj_iterate(&data, &init.beta, 3, 0.0).unwrap();
    for j in 0..2 {
        let col = draws.column(j);
        let mean = col.mean();
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 199.0).sqrt();
        assert!((mean - plain.beta[j]).abs() < 3.0 * sd / 200f64.sqrt() + 1e-3, "coef {j}");
    }
}

#[test]
fn efron_equals_zero_shift_refit() {
    let mut r = rng(31);
    let data = random_ordered(&mut r, 40, 2, 0.3, true);
    let w0 = run_pipeline(&data, ImputationMethod::Efron, 0.02, &PipelineOptions::default()).unwrap();
    let shifted = data.with_imputed_last(data.log_times()[data.n() - 1]);
    let refit = fit_penalized_swls(&shifted, 0.02, true).unwrap();
    assert_eq!(w0.fit.beta, refit.beta);
    assert_eq!(w0.fit.intercept, refit.intercept);
}

#[test]
fn pipelines_only_touch_the_largest_observation() {
    let mut r = rng(41);
    let data = random_ordered(&mut r, 50, 2, 0.4, true);
    for method in ImputationMethod::ALL {
        let out = run_pipeline(&data, method, 0.02, &PipelineOptions::default()).unwrap();
        if let Some(y) = out.imputed_log_time {
            let expected = fit_penalized_swls(&data.with_imputed_last(y), 0.02, true).unwrap();
            assert_eq!(out.fit.beta, expected.beta, "{method}");
        }
    }
}

#[test]
fn single_tie_matches_pdiff() {
    let mut r = rng(2);
    let data = random_ordered(&mut r, 60, 1, 0.4, true);
    assert_eq!(data.tied_censored_max().len(), 1);
    let ties = tail_ties_iterative_with(&data, TimeScale::Log).unwrap();
    let reg = predicted_difference(&data, TimeScale::Log).unwrap();
    assert_eq!(ties.nus, vec![reg.nu]);
    let opts = PipelineOptions::default();
    let fit = run_pipeline(&data, ImputationMethod::PredDiff, 0.0, &opts).unwrap();
    assert!((fit.imputed_time().unwrap() - ties.times[0]).abs() < 1e-9);
}

#[test]
fn mean_imputation_exceeds_censoring_times() {
    let mut r = rng(6);
    for _ in 0..50 {
        let data = random_ordered(&mut r, 40, 1, 0.4, true);
        let out = mean_impute_all(&data, TimeScale::Log).unwrap();
        for (m, c) in out.imputed.iter().zip(&out.censored) {
            assert!(m > c);
        }
    }
}

#[test]
fn uncensored_fit_is_ols() {
    let mut r = rng(10);
    for _ in 0..20 {
        let n = r.random_range(10..80);
        let p = r.random_range(1..5);
        let data = random_ordered(&mut r, n, p, 0.0, false);
        let fit = fit_penalized_swls(&data, 0.0, false).unwrap();
        let (a, b) = ols(data.covariates(), data.log_times());
        assert!((fit.intercept - a).abs() < 1e-8);
        for (x, y) in fit.beta.iter().zip(&b) {
            assert!((x - y).abs() < 1e-8);
        }
    }
}
