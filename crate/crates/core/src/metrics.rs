//! Evaluation metrics and trace records.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::model::{Dataset, ModelParams};

/// Floor for mean absolute differences that are exactly zero.
pub const FLOOR: f64 = 1e-300;

/// `ln(1e-300)`, reported instead of `-inf`.
pub fn sentinel() -> f64 {
    math::ln(FLOOR)
}

fn floored_log(v: f64) -> f64 {
    math::ln(v.max(FLOOR))
}

/// One evaluation row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub iteration: u64,
    pub method: String,
    pub exact_ll: f64,
    pub bias: f64,
    pub param_diff: f64,
    pub op_count: u64,
    pub wallclock_ms: u64,
}

/// Records for one training run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsTrace {
    pub method: String,
    pub learning_rate: f64,
    pub records: Vec<MetricsRecord>,
    /// Set when parameters or gradients became non-finite; the trace stops there.
    pub diverged: bool,
    /// Datapoints whose negative draw was empty.
    pub empty_draws: u64,
}

impl MetricsTrace {
    pub fn last(&self) -> Option<&MetricsRecord> {
        self.records.last()
    }
}

/// Softmax probabilities for every row of `inputs` (row-major `N × C`).
pub fn predictions(params: &ModelParams, inputs: &Dataset) -> Result<Vec<f64>> {
    inputs.check_params(params)?;
    let c = params.classes();
    let mut out = vec![0.0; inputs.len() * c];
    for n in 0..inputs.len() {
        let x = inputs.input(n);
        let row = &mut out[n * c..(n + 1) * c];
        let mut max = f64::NEG_INFINITY;
        for (k, v) in row.iter_mut().enumerate() {
            *v = params.score(k, x);
            max = max.max(*v);
        }
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = math::exp(*v - max);
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    Ok(out)
}

/// `ln( (1/(N C)) Σ_{n,c} |p_θ(c|x_n) − p_{θ0}(c|x_n)| )`, floored.
pub fn bias_metric(params: &ModelParams, true_params: &ModelParams, inputs: &Dataset) -> Result<f64> {
    let reference = BiasReference::new(true_params, inputs)?;
    reference.bias(params, inputs)
}

/// Cached true-model predictions so repeated bias evaluations cost one pass.
#[derive(Debug, Clone)]
pub struct BiasReference {
    classes: usize,
    probs: Vec<f64>,
}

impl BiasReference {
    pub fn new(true_params: &ModelParams, inputs: &Dataset) -> Result<Self> {
        Ok(BiasReference {
            classes: true_params.classes(),
            probs: predictions(true_params, inputs)?,
        })
    }

    pub fn bias(&self, params: &ModelParams, inputs: &Dataset) -> Result<f64> {
        if params.classes() != self.classes || inputs.len() * self.classes != self.probs.len() {
            return Err(Error::DimensionMismatch {
                what: "bias reference",
                expected: self.probs.len(),
                found: inputs.len() * params.classes(),
            });
        }
        let p = predictions(params, inputs)?;
        let total: f64 = p.iter().zip(&self.probs).map(|(a, b)| (a - b).abs()).sum();
        Ok(floored_log(total / p.len() as f64))
    }
}

/// `ln` of the mean absolute entrywise difference, floored.
pub fn param_diff_metric(a: &ModelParams, b: &ModelParams) -> Result<f64> {
    if a.classes() != b.classes() || a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            what: "parameter matrices",
            expected: a.as_slice().len(),
            found: b.as_slice().len(),
        });
    }
    let n = a.as_slice().len();
    if n == 0 {
        return Ok(sentinel());
    }
    let total: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs())
        .sum();
    Ok(floored_log(total / n as f64))
}
