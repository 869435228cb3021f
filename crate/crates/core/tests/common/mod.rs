#![allow(dead_code)]

use rand::Rng;
use softmax_lab_core::rng::stream;
use softmax_lab_core::{ClassId, Dataset, ModelParams};

pub fn random_params(seed: u64, c: usize, d: usize, scale: f64) -> ModelParams {
    let mut rng = stream(seed, &[100]);
    let w = (0..c * d).map(|_| rng.random_range(-scale..scale)).collect();
    ModelParams::from_rows(c, d, w).unwrap()
}

pub fn random_data(seed: u64, n: usize, d: usize, c: usize) -> Dataset {
    let mut rng = stream(seed, &[101]);
    let x = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels = (0..n).map(|_| ClassId(rng.random_range(0..c))).collect();
    Dataset::new(d, c, x, labels).unwrap()
}

/// Central differences of `f` at `params`, one entry per weight.
pub fn finite_difference(params: &ModelParams, h: f64, f: impl Fn(&ModelParams) -> f64) -> Vec<f64> {
    let mut p = params.clone();
    (0..params.as_slice().len())
        .map(|i| {
            let w = p.as_slice()[i];
            p.as_mut_slice()[i] = w + h;
            let up = f(&p);
            p.as_mut_slice()[i] = w - h;
            let down = f(&p);
            p.as_mut_slice()[i] = w;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute norm when both are tiny.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-12 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}
