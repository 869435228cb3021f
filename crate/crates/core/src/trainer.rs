//! Minibatch stochastic gradient ascent with classical momentum.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::str::FromStr;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::estimators::Estimator;
use crate::metrics::{MetricsRecord, MetricsTrace};
use crate::model::{self, Dataset, ModelParams, SparseGradient};
use crate::rng::{self, tag};

/// Which parameter rows move on a sparse step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SparseUpdate {
    /// Only rows present in the gradient are moved; all velocities still decay.
    #[default]
    TouchedRows,
    /// Every row moves by its velocity.
    AllRows,
}

impl SparseUpdate {
    pub fn name(self) -> &'static str {
        match self {
            SparseUpdate::TouchedRows => "touched-rows",
            SparseUpdate::AllRows => "all-rows",
        }
    }
}

impl FromStr for SparseUpdate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "touched-rows" => Ok(SparseUpdate::TouchedRows),
            "all-rows" => Ok(SparseUpdate::AllRows),
            other => Err(Error::InvalidConfig(alloc::format!(
                "unknown sparse update '{other}'; valid: touched-rows, all-rows"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub minibatch_size: usize,
    pub iterations: u64,
    pub seed: u64,
    pub eval_every: u64,
    pub sparse_update: SparseUpdate,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            learning_rate: 0.02,
            momentum: 0.99,
            minibatch_size: 50,
            iterations: 2000,
            seed: 1,
            eval_every: 10,
            sparse_update: SparseUpdate::TouchedRows,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("momentum must lie in [0, 1)".into()));
        }
        if self.minibatch_size == 0 || self.minibatch_size > n {
            return Err(Error::InvalidConfig(alloc::format!(
                "minibatch size must lie in 1..={n}"
            )));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidConfig("eval_every must be >= 1".into()));
        }
        Ok(())
    }

    /// Whether iteration `t` (steps taken so far) gets an evaluation.
    pub fn is_eval_point(&self, t: u64) -> bool {
        t == 0 || t.is_multiple_of(self.eval_every) || t == self.iterations
    }
}

/// Momentum buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub velocity: Vec<f64>,
    pub iteration: u64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        OptimizerState {
            velocity: vec![0.0; params.as_slice().len()],
            iteration: 0,
        }
    }
}

/// `v ← μ v + g`, then `θ ← θ + η v` on the rows selected by `cfg.sparse_update`.
pub fn sga_step(
    params: &mut ModelParams,
    state: &mut OptimizerState,
    grad: &SparseGradient,
    cfg: &TrainerConfig,
) -> Result<()> {
    grad.check_finite()?;
    let dim = params.dim();
    if state.velocity.len() != params.as_slice().len() {
        return Err(Error::DimensionMismatch {
            what: "velocity",
            expected: params.as_slice().len(),
            found: state.velocity.len(),
        });
    }
    for v in &mut state.velocity {
        *v *= cfg.momentum;
    }
    for (c, row) in &grad.rows {
        let v = &mut state.velocity[c.0 * dim..(c.0 + 1) * dim];
        for (vi, gi) in v.iter_mut().zip(row) {
            *vi += gi;
        }
    }
    let lr = cfg.learning_rate;
    match cfg.sparse_update {
        SparseUpdate::AllRows => {
            for (w, v) in params.as_mut_slice().iter_mut().zip(&state.velocity) {
                *w += lr * v;
            }
        }
        SparseUpdate::TouchedRows => {
            for c in grad.rows.keys() {
                let v = &state.velocity[c.0 * dim..(c.0 + 1) * dim];
                for (w, vi) in params.row_mut(c.0).iter_mut().zip(v) {
                    *w += lr * vi;
                }
            }
        }
    }
    state.iteration += 1;
    Ok(())
}

/// Epoch-wise shuffled minibatches; the last batch of an epoch may be short.
#[derive(Debug, Clone)]
pub struct MinibatchSchedule {
    n: usize,
    size: usize,
    seed: u64,
    epoch: Option<u64>,
    perm: Vec<usize>,
}

impl MinibatchSchedule {
    pub fn new(n: usize, size: usize, seed: u64) -> Self {
        MinibatchSchedule {
            n,
            size: size.clamp(1, n.max(1)),
            seed,
            epoch: None,
            perm: Vec::new(),
        }
    }

    pub fn batches_per_epoch(&self) -> u64 {
        self.n.div_ceil(self.size) as u64
    }

    /// Indices used at `iteration` (0-based).
    pub fn batch(&mut self, iteration: u64) -> &[usize] {
        let per_epoch = self.batches_per_epoch();
        let epoch = iteration / per_epoch;
        if self.epoch != Some(epoch) {
            self.perm = epoch_permutation(self.n, self.seed, epoch);
            self.epoch = Some(epoch);
        }
        let j = (iteration % per_epoch) as usize;
        let start = j * self.size;
        let end = (start + self.size).min(self.n);
        &self.perm[start..end]
    }
}

fn epoch_permutation(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::stream(seed, &[tag::SCHEDULE, epoch]));
    perm
}

/// Indices of the minibatch at `iteration`; a pure function of its arguments.
pub fn minibatch_schedule(n: usize, minibatch_size: usize, seed: u64, iteration: u64) -> Vec<usize> {
    MinibatchSchedule::new(n, minibatch_size, seed)
        .batch(iteration)
        .to_vec()
}

/// Receives evaluation callbacks during training.
pub trait TrainHook {
    /// Called at iteration 0, every `eval_every` steps and after the last step.
    fn evaluate(&mut self, iteration: u64, params: &ModelParams, op_count: u64) -> Result<Vec<MetricsRecord>>;
}

/// Records the exact log-likelihood only.
pub struct LikelihoodHook<'a> {
    pub data: &'a Dataset,
    pub method: &'a str,
}

impl TrainHook for LikelihoodHook<'_> {
    fn evaluate(&mut self, iteration: u64, params: &ModelParams, op_count: u64) -> Result<Vec<MetricsRecord>> {
        Ok(vec![MetricsRecord {
            iteration,
            method: self.method.to_string(),
            exact_ll: model::log_likelihood(params, self.data)?,
            bias: f64::NAN,
            param_diff: f64::NAN,
            op_count,
            wallclock_ms: 0,
        }])
    }
}

/// One method's parameters, momentum and bookkeeping.
#[derive(Debug, Clone)]
pub struct Run {
    pub estimator: Estimator,
    pub params: ModelParams,
    pub state: OptimizerState,
    pub cfg: TrainerConfig,
    pub op_count: u64,
    pub empty_draws: u64,
    pub diverged: bool,
}

impl Run {
    pub fn new(estimator: Estimator, init: ModelParams, cfg: TrainerConfig) -> Self {
        Run {
            estimator,
            state: OptimizerState::new(&init),
            params: init,
            cfg,
            op_count: 0,
            empty_draws: 0,
            diverged: false,
        }
    }

    /// Draw, differentiate and step on one minibatch. A non-finite gradient or
    /// parameter marks the run as diverged instead of failing.
    pub fn step(&mut self, data: &Dataset, batch: &[usize], iteration: u64) -> Result<()> {
        if self.diverged {
            return Ok(());
        }
        let sets = self.estimator.draw(data, batch, self.cfg.seed, iteration)?;
        let grad = self.estimator.gradient(&self.params, data, batch, &sets)?;
        self.op_count += grad.op_count;
        self.empty_draws += u64::from(grad.empty_draws);
        match sga_step(&mut self.params, &mut self.state, &grad, &self.cfg) {
            Ok(()) => {}
            Err(Error::NonFiniteGradient { .. }) => {
                self.diverged = true;
                return Ok(());
            }
            Err(e) => return Err(e),
        }
        if !self.params.is_finite() {
            self.diverged = true;
        }
        Ok(())
    }
}

/// Train one estimator, evaluating through `hook`.
pub fn train(
    data: &Dataset,
    init: &ModelParams,
    estimator: Estimator,
    cfg: &TrainerConfig,
    hook: &mut dyn TrainHook,
) -> Result<MetricsTrace> {
    data.check_params(init)?;
    cfg.validate(data.len())?;
    let mut run = Run::new(estimator, init.clone(), cfg.clone());
    let mut schedule = MinibatchSchedule::new(data.len(), cfg.minibatch_size, cfg.seed);
    let mut trace = MetricsTrace {
        method: run.estimator.method().name().to_string(),
        learning_rate: cfg.learning_rate,
        ..MetricsTrace::default()
    };
    trace.records.extend(hook.evaluate(0, &run.params, 0)?);
    for t in 0..cfg.iterations {
        run.step(data, schedule.batch(t), t)?;
        if run.diverged {
            trace.diverged = true;
            break;
        }
        if cfg.is_eval_point(t + 1) {
            trace.records.extend(hook.evaluate(t + 1, &run.params, run.op_count)?);
        }
    }
    trace.empty_draws = run.empty_draws;
    Ok(trace)
}
