use proptest::prelude::*;

use dropout_dro::dropout::{enumerate_masks, sample_mask};
use dropout_dro::harness::{ExperimentResult, ResultRow};
use dropout_dro::linreg::penalized_objective;
use dropout_dro::objective::dropout_objective_exact;
use dropout_dro::rng::stream;
use dropout_dro::tuner::in_sample_loss;
use dropout_dro::{choose_delta, dropout_ridge, make_family, Dataset, DropoutSpec, FamilyKind, ModelParams};

fn dataset(d: usize) -> impl Strategy<Value = Dataset> {
    (d + 2..12usize).prop_flat_map(move |n| {
        (prop::collection::vec(-3.0..3.0f64, n * d), prop::collection::vec(-5.0..5.0f64, n))
            .prop_map(move |(x, y)| Dataset::new(x, y, d).unwrap())
    })
}

fn family() -> impl Strategy<Value = FamilyKind> {
    prop_oneof![Just(FamilyKind::Linear), Just(FamilyKind::Logistic), Just(FamilyKind::Poisson)]
}

fn responses_for(kind: FamilyKind, data: &Dataset) -> Dataset {
    let y = data
        .y()
        .iter()
        .map(|v| match kind {
            FamilyKind::Linear => *v,
            FamilyKind::Logistic => f64::from(*v > 0.0),
            FamilyKind::Poisson => v.abs().floor(),
        })
        .collect();
    Dataset::new(data.x_flat().to_vec(), y, data.d()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn enumeration_is_a_mean_one_law(deltas in prop::collection::vec(0.0..0.95f64, 1..8)) {
        let spec = DropoutSpec::new(deltas.clone()).unwrap();
        let e = enumerate_masks(&spec).unwrap();
        prop_assert!((e.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for j in 0..deltas.len() {
            let mean: f64 = e.masks.iter().zip(&e.probs).map(|(m, p)| p * m.values[j]).sum();
            prop_assert!((mean - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sampled_masks_take_two_values(delta in 0.0..0.9f64, seed in any::<u64>()) {
        let spec = DropoutSpec::homogeneous(delta, 6).unwrap();
        let mut rng = stream(seed, 0);
        let keep = 1.0 / (1.0 - delta);
        for _ in 0..20 {
            let m = sample_mask(&spec, &mut rng);
            prop_assert!(m.values.iter().all(|v| *v == 0.0 || *v == keep));
        }
    }

    #[test]
    fn dropout_never_lowers_the_loss(
        kind in family(),
        data in dataset(4),
        beta in prop::collection::vec(-1.0..1.0f64, 4),
        delta in 0.0..0.8f64,
    ) {
        let data = responses_for(kind, &data);
        let fam = make_family(kind);
        let spec = DropoutSpec::homogeneous(delta, 4).unwrap();
        let params = ModelParams { beta, phi: 1.3 };
        let report = in_sample_loss(&fam, &data, &params, &spec).unwrap();
        prop_assert!(report.mu_n >= -1e-12 * report.baseline.abs().max(1.0));
        let exact = dropout_objective_exact(&fam, &data, &params, &spec).unwrap().value;
        prop_assert!((exact - report.in_sample).abs() <= 1e-10 * exact.abs().max(1.0));
    }

    #[test]
    fn ridge_solution_minimizes_penalized_objective(
        data in dataset(3),
        delta in 0.0..0.9f64,
        dir in prop::collection::vec(-1.0..1.0f64, 3),
        step in 1e-3..1.0f64,
    ) {
        prop_assume!(dropout_ridge(&data, delta).is_ok());
        let beta = dropout_ridge(&data, delta).unwrap().beta;
        let moved: Vec<f64> = beta.iter().zip(&dir).map(|(b, v)| b + step * v).collect();
        let at = penalized_objective(&data, &beta, delta);
        prop_assert!(at <= penalized_objective(&data, &moved, delta) + 1e-9 * at.abs().max(1.0));
    }

    #[test]
    fn delta_grows_as_alpha_shrinks(mu in 0.01..5.0f64, sigma in 0.01..5.0f64, n in 1usize..100_000) {
        let loose = choose_delta(0.3, n, mu, sigma).unwrap();
        let tight = choose_delta(0.05, n, mu, sigma).unwrap();
        prop_assert!(tight.delta >= loose.delta);
        prop_assert!(tight.delta <= 0.9);
        prop_assert!((tight.recompute_c().unwrap() - tight.c).abs() <= 1e-12 * tight.c.max(1.0));
    }

    #[test]
    fn results_round_trip_through_csv(rows in prop::collection::vec(
        ("[a-z=/,\" ]{0,12}", "[a-z\\[\\]0-9]{1,6}", any::<f64>(), 0.0..1.0f64, 0usize..1000),
        0..8,
    )) {
        let rows: Vec<ResultRow> = rows
            .into_iter()
            .filter(|r| r.2.is_finite())
            .map(|(config_id, metric, value, mc_std_err, replications)| ResultRow { config_id, metric, value, mc_std_err, replications })
            .collect();
        let r = ExperimentResult { rows };
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        prop_assert_eq!(ExperimentResult::read_csv(&buf[..]).unwrap(), r);
    }
}
