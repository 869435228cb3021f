//! Synthetic realisable problems and paired method comparisons.
//!
//! Every method in a comparison starts from the same all-zero parameters and
//! sees the same minibatch sequence. Methods advance in lockstep so the
//! parameter difference against the exact-gradient run can be measured at
//! each evaluation point without storing snapshots.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::estimators::{suggested_threshold, Estimator, EstimatorConfig, Method};
use crate::math;
use crate::metrics::{param_diff_metric, predictions, MetricsRecord, MetricsTrace, FLOOR};
use crate::model::{ClassId, Dataset, ModelParams};
use crate::rng::{self, tag};
use crate::samplers::{
    estimate_z_bernoulli, estimate_z_importance, variance_bernoulli, variance_importance, FrequencyTable,
    ImportanceConfig,
};
use crate::trainer::{MinibatchSchedule, Run, TrainerConfig};

/// Source of elapsed time; the core has no clock of its own.
pub trait Clock {
    fn now_ms(&self) -> u64;
}

/// Always reports zero, which keeps traces byte-reproducible.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now_ms(&self) -> u64 {
        0
    }
}

/// Data drawn from a known softmax model.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticProblem {
    pub true_params: ModelParams,
    pub data: Dataset,
    pub gen_seed: u64,
}

/// Inputs and true weights i.i.d. standard normal; each label drawn from the
/// softmax at the true weights.
pub fn generate_synthetic(n: usize, d: usize, c: usize, seed: u64) -> Result<SyntheticProblem> {
    if n == 0 || d == 0 || c == 0 {
        return Err(Error::InvalidConfig("N, D and C must all be >= 1".into()));
    }
    let mut wrng = rng::stream(seed, &[tag::DATA_WEIGHTS]);
    let weights = (0..c * d).map(|_| wrng.sample(StandardNormal)).collect();
    let true_params = ModelParams::from_rows(c, d, weights)?;
    let data = generate_from_params(&true_params, n, seed)?;
    Ok(SyntheticProblem {
        true_params,
        data,
        gen_seed: seed,
    })
}

/// Draw `n` standard-normal inputs and sample their labels from `true_params`.
pub fn generate_from_params(true_params: &ModelParams, n: usize, seed: u64) -> Result<Dataset> {
    let (c, d) = (true_params.classes(), true_params.dim());
    let mut xrng = rng::stream(seed, &[tag::DATA_INPUTS]);
    let inputs: Vec<f64> = (0..n * d).map(|_| xrng.sample(StandardNormal)).collect();
    let mut lrng = rng::stream(seed, &[tag::DATA_LABELS]);
    let mut labels = Vec::with_capacity(n);
    let mut s = vec![0.0; c];
    for row in inputs.chunks_exact(d) {
        for (k, v) in s.iter_mut().enumerate() {
            *v = true_params.score(k, row);
        }
        let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in s.iter_mut() {
            *v = math::exp(*v - max);
            total += *v;
        }
        let u = lrng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut label = c - 1;
        for (k, &v) in s.iter().enumerate() {
            acc += v;
            if u < acc {
                label = k;
                break;
            }
        }
        labels.push(ClassId(label));
    }
    Dataset::new(d, c, inputs, labels)
}

/// True-model predictions cached for repeated evaluation of
/// exact log-likelihood and bias.
#[derive(Debug, Clone)]
pub struct Evaluator {
    true_probs: Vec<f64>,
    classes: usize,
}

impl Evaluator {
    pub fn new(problem: &SyntheticProblem) -> Result<Self> {
        Ok(Evaluator {
            true_probs: predictions(&problem.true_params, &problem.data)?,
            classes: problem.true_params.classes(),
        })
    }

    /// `(exact log-likelihood, bias)` with one pass over the scores.
    pub fn evaluate(&self, params: &ModelParams, data: &Dataset) -> Result<(f64, f64)> {
        data.check_params(params)?;
        let c = self.classes;
        let mut s = vec![0.0; c];
        let (mut ll, mut abs_diff) = (0.0, 0.0);
        for n in 0..data.len() {
            let x = data.input(n);
            let mut max = f64::NEG_INFINITY;
            for (k, v) in s.iter_mut().enumerate() {
                *v = params.score(k, x);
                max = max.max(*v);
            }
            let mut z = 0.0;
            for v in s.iter_mut() {
                *v = math::exp(*v - max);
                z += *v;
            }
            let label = data.label(n).0;
            // Log domain: s[label] / z may underflow.
            ll += params.score(label, x) - max - math::ln(z);
            let truth = &self.true_probs[n * c..(n + 1) * c];
            for (v, t) in s.iter().zip(truth) {
                abs_diff += (v / z - t).abs();
            }
        }
        let bias = math::ln((abs_diff / (data.len() * c) as f64).max(FLOOR));
        Ok((ll, bias))
    }
}

/// How a method's learning rate is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum LearningRate {
    Fixed(f64),
    /// Largest rate on the ladder whose pilot run improves the exact
    /// log-likelihood without producing non-finite values.
    Search,
}

/// One entry of a comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSpec {
    pub label: String,
    pub estimator: EstimatorConfig,
    pub learning_rate: LearningRate,
}

impl MethodSpec {
    /// Default label and learning-rate policy for `method`.
    pub fn new(estimator: EstimatorConfig, default_lr: f64) -> Self {
        let learning_rate = match estimator.method {
            Method::Exact | Method::SampledBernoulli | Method::SampledImportance => {
                LearningRate::Fixed(default_lr)
            }
            _ => LearningRate::Search,
        };
        MethodSpec {
            label: estimator.method.name().to_string(),
            estimator,
            learning_rate,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn with_learning_rate(mut self, lr: LearningRate) -> Self {
        self.learning_rate = lr;
        self
    }
}

/// Harness settings outside the trainer itself.
#[derive(Debug, Clone, PartialEq)]
pub struct HarnessOptions {
    /// Add-count for the class-frequency table.
    pub smoothing: f64,
    /// Candidate rates for [`LearningRate::Search`], tried largest first.
    pub lr_ladder: Vec<f64>,
    /// Steps per pilot run during the search.
    pub pilot_iterations: u64,
}

impl Default for HarnessOptions {
    fn default() -> Self {
        HarnessOptions {
            smoothing: 1.0,
            lr_ladder: default_lr_ladder(),
            pilot_iterations: 200,
        }
    }
}

/// `0.32 · 2^{-k}` for `k = 0..=9`, i.e. 0.32 down to 0.000625.
pub fn default_lr_ladder() -> Vec<f64> {
    (0..10).map(|k| 0.32 / (1u64 << k) as f64).collect()
}

fn pilot_improves(
    problem: &SyntheticProblem,
    estimator: &Estimator,
    cfg: &TrainerConfig,
    iterations: u64,
) -> Result<bool> {
    let data = &problem.data;
    let init = ModelParams::zeros(problem.true_params.classes(), problem.true_params.dim());
    let start = crate::model::log_likelihood(&init, data)?;
    let mut run = Run::new(estimator.clone(), init, cfg.clone());
    let mut schedule = MinibatchSchedule::new(data.len(), cfg.minibatch_size, cfg.seed);
    for t in 0..iterations {
        run.step(data, schedule.batch(t), t)?;
        if run.diverged {
            return Ok(false);
        }
    }
    let end = crate::model::log_likelihood(&run.params, data)?;
    Ok(end.is_finite() && end > start)
}

/// Resolve a [`LearningRate`] into a number.
pub fn resolve_learning_rate(
    problem: &SyntheticProblem,
    estimator: &Estimator,
    lr: &LearningRate,
    cfg: &TrainerConfig,
    opts: &HarnessOptions,
) -> Result<f64> {
    match lr {
        LearningRate::Fixed(v) => Ok(*v),
        LearningRate::Search => {
            let mut ladder = opts.lr_ladder.clone();
            ladder.sort_by(|a, b| b.total_cmp(a));
            let pilot = opts.pilot_iterations.min(cfg.iterations.max(1));
            for &rate in &ladder {
                let mut c = cfg.clone();
                c.learning_rate = rate;
                if pilot_improves(problem, estimator, &c, pilot)? {
                    return Ok(rate);
                }
            }
            ladder
                .last()
                .copied()
                .ok_or_else(|| Error::InvalidConfig("learning-rate ladder is empty".into()))
        }
    }
}

struct Lane {
    label: String,
    run: Run,
    trace: MetricsTrace,
    elapsed_ms: u64,
    emit: bool,
}

/// Train every method in lockstep and collect one trace per method, in the
/// order given. Parameter differences are measured against an exact-gradient
/// run (the first `exact` entry, or a hidden one at the trainer's rate).
pub fn run_comparison(
    problem: &SyntheticProblem,
    methods: &[MethodSpec],
    cfg: &TrainerConfig,
    opts: &HarnessOptions,
    clock: &dyn Clock,
) -> Result<Vec<MetricsTrace>> {
    if methods.is_empty() {
        return Err(Error::InvalidConfig("at least one method is required".into()));
    }
    let data = &problem.data;
    cfg.validate(data.len())?;
    let (c, d) = (problem.true_params.classes(), problem.true_params.dim());
    let freq = FrequencyTable::build(data.labels(), c, opts.smoothing)?;

    let mut lanes = Vec::with_capacity(methods.len() + 1);
    let reference_spec = methods
        .iter()
        .find(|m| m.estimator.method == Method::Exact)
        .cloned();
    let reference_is_listed = reference_spec.is_some();
    let reference_spec = reference_spec.unwrap_or_else(|| {
        MethodSpec::new(EstimatorConfig::new(Method::Exact), cfg.learning_rate)
            .with_learning_rate(LearningRate::Fixed(cfg.learning_rate))
    });
    // Lane 0 is always the reference.
    let mut specs: Vec<(MethodSpec, bool)> = vec![(reference_spec, reference_is_listed)];
    let mut skipped_reference = false;
    for m in methods {
        if reference_is_listed && !skipped_reference && m.estimator.method == Method::Exact {
            skipped_reference = true;
            continue;
        }
        specs.push((m.clone(), true));
    }
    for (spec, emit) in specs {
        let estimator = Estimator::new(spec.estimator.clone(), freq.clone())?;
        let lr = resolve_learning_rate(problem, &estimator, &spec.learning_rate, cfg, opts)?;
        let mut run_cfg = cfg.clone();
        run_cfg.learning_rate = lr;
        let trace = MetricsTrace {
            method: spec.label.clone(),
            learning_rate: lr,
            ..MetricsTrace::default()
        };
        lanes.push(Lane {
            label: spec.label,
            run: Run::new(estimator, ModelParams::zeros(c, d), run_cfg),
            trace,
            elapsed_ms: 0,
            emit,
        });
    }

    let evaluator = Evaluator::new(problem)?;
    let mut schedule = MinibatchSchedule::new(data.len(), cfg.minibatch_size, cfg.seed);
    record_all(&mut lanes, &evaluator, data, 0)?;
    for t in 0..cfg.iterations {
        let batch = schedule.batch(t);
        for lane in lanes.iter_mut() {
            if lane.run.diverged {
                continue;
            }
            let started = clock.now_ms();
            lane.run.step(data, batch, t)?;
            lane.elapsed_ms += clock.now_ms().saturating_sub(started);
            if lane.run.diverged {
                lane.trace.diverged = true;
            }
        }
        if cfg.is_eval_point(t + 1) {
            record_all(&mut lanes, &evaluator, data, t + 1)?;
        }
    }

    // Emit in declared order.
    let mut out = Vec::with_capacity(methods.len());
    let mut reference = Some(lanes.remove(0));
    let mut rest = lanes.into_iter();
    for m in methods {
        if m.estimator.method == Method::Exact && reference.is_some() && reference_is_listed {
            let mut lane = reference.take().unwrap();
            lane.trace.empty_draws = lane.run.empty_draws;
            out.push(lane.trace);
            continue;
        }
        if let Some(mut lane) = rest.next() {
            debug_assert!(lane.emit);
            lane.trace.empty_draws = lane.run.empty_draws;
            out.push(lane.trace);
        }
    }
    Ok(out)
}

fn record_all(lanes: &mut [Lane], evaluator: &Evaluator, data: &Dataset, iteration: u64) -> Result<()> {
    let (head, tail) = lanes.split_at_mut(1);
    let reference = &head[0];
    let reference_params = (!reference.run.diverged).then(|| reference.run.params.clone());
    for lane in core::iter::once(&mut head[0]).chain(tail.iter_mut()) {
        if lane.run.diverged || !lane.emit {
            continue;
        }
        let (exact_ll, bias) = evaluator.evaluate(&lane.run.params, data)?;
        let param_diff = match &reference_params {
            Some(p) => param_diff_metric(&lane.run.params, p)?,
            None => f64::NAN,
        };
        lane.trace.records.push(MetricsRecord {
            iteration,
            method: lane.label.clone(),
            exact_ll,
            bias,
            param_diff,
            op_count: lane.run.op_count,
            wallclock_ms: lane.elapsed_ms,
        });
    }
    Ok(())
}

/// Label used for a ranking run at margin `alpha`.
pub fn ranking_label(alpha: f64) -> String {
    format!("ranking@alpha={alpha}")
}

/// The α values contrasted by default: 1, 2, ln(C−1) and 9.
pub fn default_alphas(classes: usize) -> Vec<f64> {
    vec![1.0, 2.0, suggested_threshold(classes), 9.0]
}

/// Ranking runs for each margin in `alphas`, preceded by an exact-gradient
/// reference trace.
pub fn run_alpha_sweep(
    problem: &SyntheticProblem,
    alphas: &[f64],
    base: &EstimatorConfig,
    cfg: &TrainerConfig,
    opts: &HarnessOptions,
    clock: &dyn Clock,
) -> Result<Vec<MetricsTrace>> {
    if alphas.is_empty() {
        return Err(Error::InvalidConfig("at least one alpha is required".into()));
    }
    if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
        return Err(Error::InvalidConfig(format!("ranking threshold must be > 0, got {a}")));
    }
    let mut methods = vec![MethodSpec::new(EstimatorConfig::new(Method::Exact), cfg.learning_rate)];
    for &a in alphas {
        let mut est = base.clone();
        est.method = Method::Ranking;
        est.ranking_threshold = Some(a);
        methods.push(MethodSpec::new(est, cfg.learning_rate).with_label(ranking_label(a)));
    }
    run_comparison(problem, &methods, cfg, opts, clock)
}

/// Settings for the matched-compute comparison of the two `Z` estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceStudyConfig {
    pub classes: usize,
    /// Fraction of the classes whose score is evaluated per estimate.
    pub fraction: f64,
    pub trials: u64,
    pub seed: u64,
    /// Scores are `z_c = exp(σ ε_c)` with standard-normal `ε_c`.
    pub log_scale: f64,
}

impl VarianceStudyConfig {
    pub fn new(classes: usize, fraction: f64, trials: u64, seed: u64) -> Self {
        VarianceStudyConfig {
            classes,
            fraction,
            trials,
            seed,
            log_scale: 3.0,
        }
    }

    /// Importance draws `S = round(f C)` (at least one).
    pub fn samples(&self) -> usize {
        (libm::round(self.fraction * self.classes as f64) as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 {
            return Err(Error::InvalidConfig("C must be >= 1".into()));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "compute fraction must lie in (0, 1], got {}",
                self.fraction
            )));
        }
        if self.trials < 2 {
            return Err(Error::InvalidConfig("at least two trials are required".into()));
        }
        if !(self.log_scale >= 0.0 && self.log_scale.is_finite()) {
            return Err(Error::InvalidConfig("log scale must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Monte-Carlo summary for one estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceRow {
    pub estimator: &'static str,
    pub trials: u64,
    pub exact_z: f64,
    pub mean: f64,
    pub empirical_variance: f64,
    pub closed_form_variance: f64,
}

impl VarianceRow {
    /// Standard error of the Monte-Carlo mean.
    pub fn standard_error(&self) -> f64 {
        math::sqrt(self.empirical_variance / self.trials as f64)
    }
}

#[derive(Default)]
struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.n += 1;
        let delta = v - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (v - self.mean);
    }

    fn variance(&self) -> f64 {
        self.m2 / (self.n - 1) as f64
    }
}

/// Importance sampling with a uniform proposal and `S = round(f C)` draws
/// against Bernoulli sampling with `b_c = f`, so both evaluate `f C` scores
/// on average. Rows are importance first, then Bernoulli.
pub fn run_variance_study(cfg: &VarianceStudyConfig) -> Result<Vec<VarianceRow>> {
    cfg.validate()?;
    let c = cfg.classes;
    let mut zrng = rng::stream(cfg.seed, &[tag::VARIANCE, 0]);
    let z: Vec<f64> = (0..c)
        .map(|_| math::exp(cfg.log_scale * zrng.sample::<f64, _>(StandardNormal)))
        .collect();
    let exact_z: f64 = z.iter().sum();

    let samples = cfg.samples();
    let importance = ImportanceConfig::uniform(samples, c, &[])?;
    let mut irng = rng::stream(cfg.seed, &[tag::VARIANCE, 1]);
    let mut im = Moments::default();
    for _ in 0..cfg.trials {
        im.push(estimate_z_importance(&z, &importance, &mut irng));
    }

    let b = vec![cfg.fraction; c];
    let mut brng = rng::stream(cfg.seed, &[tag::VARIANCE, 2]);
    let mut bm = Moments::default();
    for _ in 0..cfg.trials {
        bm.push(estimate_z_bernoulli(&z, &b, &mut brng));
    }

    Ok(vec![
        VarianceRow {
            estimator: "importance",
            trials: cfg.trials,
            exact_z,
            mean: im.mean,
            empirical_variance: im.variance(),
            closed_form_variance: variance_importance(&z, &importance.q, samples),
        },
        VarianceRow {
            estimator: "bernoulli",
            trials: cfg.trials,
            exact_z,
            mean: bm.mean,
            empirical_variance: bm.variance(),
            closed_form_variance: variance_bernoulli(&z, &b),
        },
    ])
}
