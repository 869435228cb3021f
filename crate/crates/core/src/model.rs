//! Exact softmax regression: scores, probabilities, likelihood, γ weights and
//! exact gradients. Everything else in the crate is measured against this.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// Zero-based class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ClassId(pub usize);

impl ClassId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

impl From<usize> for ClassId {
    fn from(v: usize) -> Self {
        ClassId(v)
    }
}

/// Weight matrix of a linear softmax model, one row `w_c` per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    classes: usize,
    dim: usize,
    weights: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        ModelParams {
            classes,
            dim,
            weights: vec![0.0; classes * dim],
        }
    }

    /// Build from a row-major `classes × dim` buffer.
    pub fn from_rows(classes: usize, dim: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != classes * dim {
            return Err(Error::DimensionMismatch {
                what: "weight matrix",
                expected: classes * dim,
                found: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidConfig("weight matrix has non-finite entries".into()));
        }
        Ok(ModelParams {
            classes,
            dim,
            weights,
        })
    }

    #[inline]
    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, c: usize) -> &[f64] {
        &self.weights[c * self.dim..(c + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.weights[c * self.dim..(c + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    /// Single score `w_c · x`.
    #[inline]
    pub fn score(&self, c: usize, x: &[f64]) -> f64 {
        math::dot(self.row(c), x)
    }
}

/// Inputs (row-major `N × D`) with one label each.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    classes: usize,
    inputs: Vec<f64>,
    labels: Vec<ClassId>,
}

impl Dataset {
    pub fn new(dim: usize, classes: usize, inputs: Vec<f64>, labels: Vec<ClassId>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidConfig("dataset needs at least one row".into()));
        }
        if inputs.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                what: "input matrix",
                expected: labels.len() * dim,
                found: inputs.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|c| c.0 >= classes) {
            return Err(Error::ClassOutOfRange { class: bad, classes });
        }
        Ok(Dataset {
            dim,
            classes,
            inputs,
            labels,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn input(&self, n: usize) -> &[f64] {
        &self.inputs[n * self.dim..(n + 1) * self.dim]
    }

    #[inline]
    pub fn label(&self, n: usize) -> ClassId {
        self.labels[n]
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn check_params(&self, params: &ModelParams) -> Result<()> {
        if params.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                what: "input dimension",
                expected: params.dim(),
                found: self.dim,
            });
        }
        if params.classes() != self.classes {
            return Err(Error::DimensionMismatch {
                what: "class count",
                expected: params.classes(),
                found: self.classes,
            });
        }
        Ok(())
    }
}

/// Running tally of `exp(w·x)` style evaluations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounter(pub u64);

impl OpCounter {
    #[inline]
    pub fn add(&mut self, n: usize) {
        self.0 += n as u64;
    }
}

/// γ weights for one datapoint, indexed by class.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaWeights(pub Vec<f64>);

impl GammaWeights {
    pub fn get(&self, c: ClassId) -> f64 {
        self.0[c.0]
    }
}

/// Per-class weight gradient touching only the classes an estimator looked at.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseGradient {
    pub rows: BTreeMap<ClassId, Vec<f64>>,
    /// Score/exponential evaluations consumed producing this gradient.
    pub op_count: u64,
    /// Datapoints whose negative draw came back empty.
    pub empty_draws: u32,
}

impl SparseGradient {
    pub fn new() -> Self {
        Self::default()
    }

    /// `row(c) += weight · x`.
    pub fn add_scaled(&mut self, c: ClassId, weight: f64, x: &[f64]) {
        let row = self.rows.entry(c).or_insert_with(|| vec![0.0; x.len()]);
        for (r, xi) in row.iter_mut().zip(x) {
            *r += weight * xi;
        }
    }

    pub fn row(&self, c: ClassId) -> Option<&[f64]> {
        self.rows.get(&c).map(|r| r.as_slice())
    }

    /// Dense `C × D` view; untouched rows are zero.
    pub fn to_dense(&self, classes: usize, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; classes * dim];
        for (c, row) in &self.rows {
            out[c.0 * dim..(c.0 + 1) * dim].copy_from_slice(row);
        }
        out
    }

    pub fn check_finite(&self) -> Result<()> {
        for (c, row) in &self.rows {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { class: *c });
            }
        }
        Ok(())
    }
}

/// `s_c = w_c · x` for every class.
pub fn scores(params: &ModelParams, x: &[f64], ops: &mut OpCounter) -> Result<Vec<f64>> {
    if x.len() != params.dim() {
        return Err(Error::DimensionMismatch {
            what: "input vector",
            expected: params.dim(),
            found: x.len(),
        });
    }
    ops.add(params.classes());
    Ok((0..params.classes()).map(|c| params.score(c, x)).collect())
}

/// Max-shifted softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|s| math::exp(s - max)).collect();
    let z: f64 = out.iter().sum();
    for p in &mut out {
        *p /= z;
    }
    out
}

/// `Σ_n log p(c_n | x_n)`.
pub fn log_likelihood(params: &ModelParams, data: &Dataset) -> Result<f64> {
    data.check_params(params)?;
    let mut ll = 0.0;
    let mut s = vec![0.0; params.classes()];
    for n in 0..data.len() {
        let x = data.input(n);
        for (c, sc) in s.iter_mut().enumerate() {
            *sc = params.score(c, x);
        }
        ll += s[data.label(n).0] - math::log_sum_exp(s.iter().copied());
    }
    Ok(ll)
}

/// `γ(c) = δ(c, c_n) − p(c | x)`.
pub fn gamma_exact(params: &ModelParams, x: &[f64], label: ClassId) -> Result<GammaWeights> {
    if label.0 >= params.classes() {
        return Err(Error::ClassOutOfRange {
            class: label,
            classes: params.classes(),
        });
    }
    let s = scores(params, x, &mut OpCounter::default())?;
    let mut g = softmax(&s);
    for v in g.iter_mut() {
        *v = -*v;
    }
    g[label.0] += 1.0;
    Ok(GammaWeights(g))
}

/// Exact minibatch gradient `Σ_m γ_m(a) x_m` for every class `a`.
pub fn gradient_exact(params: &ModelParams, data: &Dataset, batch: &[usize]) -> Result<SparseGradient> {
    data.check_params(params)?;
    if batch.is_empty() {
        return Err(Error::InvalidConfig("minibatch is empty".into()));
    }
    let mut ops = OpCounter::default();
    let mut grad = SparseGradient::new();
    for &n in batch {
        let x = data.input(n);
        let gamma = gamma_exact(params, x, data.label(n))?;
        ops.add(params.classes());
        for (c, &g) in gamma.0.iter().enumerate() {
            grad.add_scaled(ClassId(c), g, x);
        }
    }
    grad.op_count = ops.0;
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn random_params(seed: u64, c: usize, d: usize) -> ModelParams {
        let mut rng = stream(seed, &[0]);
        let w = (0..c * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        ModelParams::from_rows(c, d, w).unwrap()
    }

    fn random_data(seed: u64, n: usize, c: usize, d: usize) -> Dataset {
        let mut rng = stream(seed, &[1]);
        let x = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = (0..n).map(|_| ClassId(rng.random_range(0..c))).collect();
        Dataset::new(d, c, x, y).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_scores() {
        let p = ModelParams::zeros(4, 3);
        let mut ops = OpCounter::default();
        assert_eq!(scores(&p, &[1.0, -2.0, 5.0], &mut ops).unwrap(), vec![0.0; 4]);
        assert_eq!(ops.0, 4);
    }

    #[test]
    fn unit_rows_select_coordinates() {
        let p = ModelParams::from_rows(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let s = scores(&p, &[3.0, -1.0], &mut OpCounter::default()).unwrap();
        assert_eq!(s, vec![3.0, -1.0]);
    }

    #[test]
    fn scores_match_elementwise_oracle() {
        let p = random_params(7, 5, 3);
        let x = [0.3, -1.2, 2.0];
        let s = scores(&p, &x, &mut OpCounter::default()).unwrap();
        for c in 0..5 {
            let mut acc = 0.0;
            for j in 0..3 {
                acc += p.as_slice()[c * 3 + j] * x[j];
            }
            assert!((s[c] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn scores_reject_wrong_dimension() {
        let p = ModelParams::zeros(2, 3);
        assert!(matches!(
            scores(&p, &[1.0], &mut OpCounter::default()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0; 4]), vec![0.25; 4]);
        let p = softmax(&[0.0, math::ln(3.0)]);
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);
        let s = [0.3, -2.0, 7.5, 1.0];
        let shifted: Vec<f64> = s.iter().map(|v| v + 123.4).collect();
        let (a, b) = (softmax(&s), softmax(&shifted));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        let big = softmax(&[1000.0, 999.0]);
        assert!(big.iter().all(|p| p.is_finite()));
    }

    #[test]
    fn log_likelihood_uniform_model() {
        let data = random_data(3, 10, 5, 3);
        let ll = log_likelihood(&ModelParams::zeros(5, 3), &data).unwrap();
        assert!((ll - 10.0 * math::ln(0.2)).abs() < 1e-12);
    }

    #[test]
    fn log_likelihood_two_class_example() {
        // x = 1 picks scores (0, ln 3) from the weight column.
        let p = ModelParams::from_rows(2, 1, vec![0.0, math::ln(3.0)]).unwrap();
        let data = Dataset::new(1, 2, vec![1.0], vec![ClassId(1)]).unwrap();
        let ll = log_likelihood(&p, &data).unwrap();
        assert!((ll - math::ln(0.75)).abs() < 1e-15);
        assert!((ll + 0.287_682_072_451_780_9).abs() < 1e-12);
    }

    #[test]
    fn log_likelihood_matches_direct_oracle() {
        let p = random_params(7, 5, 3);
        let data = random_data(7, 10, 5, 3);
        let mut oracle = 0.0;
        for n in 0..10 {
            let x = data.input(n);
            let mut u = [0.0; 5];
            let mut z = 0.0;
            for c in 0..5 {
                let mut s = 0.0;
                for j in 0..3 {
                    s += p.row(c)[j] * x[j];
                }
                u[c] = s.exp();
                z += u[c];
            }
            oracle += (u[data.label(n).0] / z).ln();
        }
        let ll = log_likelihood(&p, &data).unwrap();
        assert!((ll - oracle).abs() < 1e-10);
    }

    #[test]
    fn gamma_uniform_model() {
        let g = gamma_exact(&ModelParams::zeros(4, 2), &[1.0, 1.0], ClassId(2)).unwrap();
        assert_eq!(g.0, vec![-0.25, -0.25, 0.75, -0.25]);
    }

    #[test]
    fn gamma_vanishes_for_certain_model() {
        // Scores (0, 2000): class 1 has probability 1 in f64.
        let p = ModelParams::from_rows(2, 1, vec![0.0, 2000.0]).unwrap();
        let g = gamma_exact(&p, &[1.0], ClassId(1)).unwrap();
        assert!(g.0.iter().all(|v| *v == 0.0));
        let data = Dataset::new(1, 2, vec![1.0], vec![ClassId(1)]).unwrap();
        let grad = gradient_exact(&p, &data, &[0]).unwrap();
        assert!(grad.to_dense(2, 1).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gamma_sums_to_zero() {
        let p = random_params(11, 7, 4);
        let g = gamma_exact(&p, &[0.5, -0.5, 2.0, 1.0], ClassId(3)).unwrap();
        let s: f64 = g.0.iter().sum();
        assert!(s.abs() < 1e-12);
        assert!(g.0.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(gamma_exact(&p, &[0.0; 4], ClassId(7)).is_err());
    }

    #[test]
    fn gradient_single_point_uniform() {
        let data = Dataset::new(1, 2, vec![2.0], vec![ClassId(0)]).unwrap();
        let grad = gradient_exact(&ModelParams::zeros(2, 1), &data, &[0]).unwrap();
        assert_eq!(grad.row(ClassId(0)).unwrap(), &[1.0]);
        assert_eq!(grad.row(ClassId(1)).unwrap(), &[-1.0]);
        assert_eq!(grad.op_count, 2);
    }

    #[test]
    fn gradient_op_count_is_batch_times_classes() {
        let p = random_params(1, 6, 2);
        let data = random_data(1, 9, 6, 2);
        let g = gradient_exact(&p, &data, &[0, 3, 4]).unwrap();
        assert_eq!(g.op_count, 18);
        assert!(gradient_exact(&p, &data, &[]).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (c, d) = (6, 3);
        let p = random_params(7, c, d);
        let data = random_data(7, 8, c, d);
        let batch: Vec<usize> = (0..8).collect();
        let grad = gradient_exact(&p, &data, &batch).unwrap().to_dense(c, d);
        let mut rng = stream(99, &[]);
        let dir: Vec<f64> = (0..c * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h = 1e-5;
        let shifted = |t: f64| {
            let w: Vec<f64> = p.as_slice().iter().zip(&dir).map(|(a, b)| a + t * b).collect();
            log_likelihood(&ModelParams::from_rows(c, d, w).unwrap(), &data).unwrap()
        };
        let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
        let an: f64 = grad.iter().zip(&dir).map(|(a, b)| a * b).sum();
        assert!((fd - an).abs() / an.abs().max(1e-12) < 1e-6, "fd={fd} an={an}");
    }
}
