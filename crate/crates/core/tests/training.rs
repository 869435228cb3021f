use softmax_lab_core::estimators::{Estimator, EstimatorConfig, Method};
use softmax_lab_core::experiments::{
    generate_synthetic, run_alpha_sweep, run_comparison, HarnessOptions, LearningRate, MethodSpec, NoClock,
};
use softmax_lab_core::metrics::sentinel;
use softmax_lab_core::samplers::FrequencyTable;
use softmax_lab_core::trainer::{train, LikelihoodHook, TrainerConfig};
use softmax_lab_core::ModelParams;

fn small_cfg(iterations: u64) -> TrainerConfig {
    TrainerConfig {
        minibatch_size: 20,
        iterations,
        eval_every: 10,
        ..TrainerConfig::default()
    }
}

#[test]
fn full_batch_exact_ascent_is_monotone() {
    let problem = generate_synthetic(60, 3, 5, 11).unwrap();
    let data = &problem.data;
    let freq = FrequencyTable::build(data.labels(), 5, 1.0).unwrap();
    let est = Estimator::new(EstimatorConfig::new(Method::Exact), freq).unwrap();
    let cfg = TrainerConfig {
        learning_rate: 0.01,
        momentum: 0.0,
        minibatch_size: data.len(),
        iterations: 200,
        eval_every: 1,
        ..TrainerConfig::default()
    };
    let mut hook = LikelihoodHook { data, method: "exact" };
    let trace = train(data, &ModelParams::zeros(5, 3), est, &cfg, &mut hook).unwrap();
    assert_eq!(trace.records.len(), 201);
    for w in trace.records.windows(2) {
        assert!(w[1].exact_ll >= w[0].exact_ll - 1e-12);
    }
}

#[test]
fn comparison_is_deterministic_and_paired() {
    let problem = generate_synthetic(100, 4, 12, 5).unwrap();
    let methods: Vec<MethodSpec> = [Method::Exact, Method::SampledBernoulli, Method::Ranking]
        .into_iter()
        .map(|m| MethodSpec::new(EstimatorConfig::new(m).with_k(4), 0.02))
        .collect();
    let opts = HarnessOptions::default();
    let a = run_comparison(&problem, &methods, &small_cfg(40), &opts, &NoClock).unwrap();
    let b = run_comparison(&problem, &methods, &small_cfg(40), &opts, &NoClock).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.iter().map(|t| t.method.as_str()).collect::<Vec<_>>(), ["exact", "sampled-bernoulli", "ranking"]);
    let first: Vec<_> = a.iter().map(|t| (t.records[0].exact_ll, t.records[0].param_diff)).collect();
    assert!(first.iter().all(|f| *f == first[0]));
    assert!(a[0].records.iter().all(|r| r.param_diff == sentinel()));
    assert!(a[1].records.last().unwrap().param_diff > sentinel());
    assert_eq!(a[0].records.last().unwrap().op_count, 40 * 20 * 12);
}

#[test]
fn hidden_reference_is_not_emitted() {
    let problem = generate_synthetic(80, 3, 10, 2).unwrap();
    let methods = [MethodSpec::new(EstimatorConfig::new(Method::SampledImportance).with_k(3), 0.02)];
    let traces = run_comparison(&problem, &methods, &small_cfg(20), &HarnessOptions::default(), &NoClock).unwrap();
    assert_eq!(traces.len(), 1);
    assert!(traces[0].records.last().unwrap().param_diff.is_finite());
}

#[test]
fn learning_rate_search_picks_from_the_ladder() {
    let problem = generate_synthetic(80, 3, 10, 3).unwrap();
    let methods = [MethodSpec::new(EstimatorConfig::new(Method::Blackout).with_k(3), 0.02)];
    assert_eq!(methods[0].learning_rate, LearningRate::Search);
    let opts = HarnessOptions::default();
    let traces = run_comparison(&problem, &methods, &small_cfg(20), &opts, &NoClock).unwrap();
    assert!(opts.lr_ladder.contains(&traces[0].learning_rate));
}

#[test]
fn alpha_sweep_has_one_reference() {
    let problem = generate_synthetic(80, 3, 10, 3).unwrap();
    let base = EstimatorConfig::new(Method::Ranking).with_k(1);
    let traces = run_alpha_sweep(&problem, &[1.0, 2.0], &base, &small_cfg(20), &HarnessOptions::default(), &NoClock)
        .unwrap();
    let names: Vec<_> = traces.iter().map(|t| t.method.as_str()).collect();
    assert_eq!(names, ["exact", "ranking@alpha=1", "ranking@alpha=2"]);
    assert!(run_alpha_sweep(&problem, &[0.0], &base, &small_cfg(20), &HarnessOptions::default(), &NoClock).is_err());
}
