use dropout_dro::harness::{gen_linear_data, run_divergence, DivergenceConfig, DivergenceMethod, SimSpec};
use dropout_dro::{dropout_ridge, make_family, mlmc_solve, DropoutSpec, FamilyKind, MlmcConfig};

#[test]
fn error_shrinks_with_more_replicas() {
    let cfg = DivergenceConfig { n: 20, d: 8, reps: 12, l_grid: vec![100, 400, 1600], r: 0.6, m0: 2, seed: 3, ..DivergenceConfig::default() };
    let out = run_divergence(&cfg).unwrap();
    let stats = |l: usize| {
        let v: Vec<f64> = out
            .records
            .iter()
            .filter(|r| r.method == DivergenceMethod::Mlmc && r.setting == l)
            .map(|r| r.l2)
            .collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        (m, (var / v.len() as f64).sqrt())
    };
    let (m100, s100) = stats(100);
    let (m400, s400) = stats(400);
    let (m1600, s1600) = stats(1600);
    assert!(m400 <= m100 + 2.0 * (s100 + s400), "{m100} -> {m400}");
    assert!(m1600 <= m400 + 2.0 * (s400 + s1600), "{m400} -> {m1600}");
    assert!(m1600 < m100, "{m100} -> {m1600}");
}

#[test]
fn thread_pool_size_does_not_change_the_estimate() {
    let data = gen_linear_data(&SimSpec::ones(25, 5, 2.0, 4)).unwrap();
    let spec = DropoutSpec::homogeneous(0.3, 5).unwrap();
    let cfg = MlmcConfig { replicas: 300, master_seed: 21, ..MlmcConfig::default() };
    let fam = make_family(FamilyKind::Linear);
    let solve = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| mlmc_solve(&fam, &data, &spec, &cfg).unwrap())
    };
    let one = solve(1);
    assert_eq!(one, solve(3));

    let target = dropout_ridge(&data, 0.3).unwrap().beta;
    for ((e, b), s) in one.estimate.iter().zip(&target).zip(one.std_errors()) {
        assert!((e - b).abs() <= 4.0 * s, "{e} vs {b} (se {s})");
    }
}

#[test]
fn logistic_replicas_run() {
    let base = gen_linear_data(&SimSpec::ones(30, 3, 1.0, 6)).unwrap();
    let y = base.y().iter().map(|v| f64::from(*v > 0.0)).collect();
    let data = dropout_dro::Dataset::new(base.x_flat().to_vec(), y, 3).unwrap();
    let spec = DropoutSpec::homogeneous(0.2, 3).unwrap();
    let cfg = MlmcConfig { replicas: 40, m0: 2, master_seed: 1, ..MlmcConfig::default() };
    let rep = mlmc_solve(&make_family(FamilyKind::Logistic), &data, &spec, &cfg).unwrap();
    assert_eq!(rep.replicas.len(), 40);
    assert!(rep.estimate.iter().all(|b| b.is_finite()));
    assert_eq!(rep.total_draws, rep.replicas.iter().map(|r| r.draws_used).sum::<u64>());
}
