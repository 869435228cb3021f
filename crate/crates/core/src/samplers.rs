//! Class frequencies and the two ways of drawing negative classes.
//!
//! Importance sampling draws `S` classes i.i.d. from a proposal `q` and weights
//! each draw by `1/(S q(d))`. Bernoulli sampling includes each class `d`
//! independently with probability `b_d = f(d)^α` and weights it by `1/b_d`; it
//! never repeats a class and recovers the exact sum when every `b_d = 1`.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::math;
use crate::model::ClassId;
use crate::rng::Rng;

/// Upper end of the bracket searched for the Bernoulli exponent.
pub const ALPHA_MAX: f64 = 64.0;
/// Relative tolerance on `Σ b_d = K`.
pub const ALPHA_TOL: f64 = 1e-9;

/// Smoothed empirical class frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyTable {
    counts: Vec<u64>,
    freq: Vec<f64>,
}

impl FrequencyTable {
    /// `f(c) = (count(c) + λ) / (N + λC)`.
    pub fn build(labels: &[ClassId], classes: usize, smoothing: f64) -> Result<Self> {
        if classes == 0 {
            return Err(Error::InvalidConfig("class count must be positive".into()));
        }
        if !(smoothing >= 0.0 && smoothing.is_finite()) {
            return Err(Error::InvalidConfig("smoothing must be a finite value >= 0".into()));
        }
        let mut counts = vec![0u64; classes];
        for &c in labels {
            if c.0 >= classes {
                return Err(Error::ClassOutOfRange { class: c, classes });
            }
            counts[c.0] += 1;
        }
        if smoothing == 0.0 {
            if let Some(c) = counts.iter().position(|&n| n == 0) {
                return Err(Error::UnobservedClass(ClassId(c)));
            }
        }
        let total = labels.len() as f64 + smoothing * classes as f64;
        let freq = counts.iter().map(|&n| (n as f64 + smoothing) / total).collect();
        Ok(FrequencyTable { counts, freq })
    }

    pub fn classes(&self) -> usize {
        self.freq.len()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn freq(&self) -> &[f64] {
        &self.freq
    }

    /// Distribution proportional to `f(c)^power` over all classes.
    pub fn powered(&self, power: f64) -> Vec<f64> {
        let mut q: Vec<f64> = self.freq.iter().map(|&f| math::powf(f, power)).collect();
        let z: f64 = q.iter().sum();
        for v in &mut q {
            *v /= z;
        }
        q
    }
}

fn excluded_mask(classes: usize, excluded: &[ClassId]) -> Result<Vec<bool>> {
    let mut mask = vec![false; classes];
    for &c in excluded {
        if c.0 >= classes {
            return Err(Error::ClassOutOfRange { class: c, classes });
        }
        mask[c.0] = true;
    }
    Ok(mask)
}

/// Solve `Σ_{d ∉ excluded} f(d)^α = K` for `α ≥ 0` by bisection.
///
/// The sum is strictly decreasing in `α` when every `f < 1`; at `α = 0` it
/// equals the size of the complement.
pub fn solve_alpha_exponent(freq: &FrequencyTable, excluded: &[ClassId], k: f64) -> Result<f64> {
    let mask = excluded_mask(freq.classes(), excluded)?;
    let allowed: Vec<f64> = freq
        .freq()
        .iter()
        .zip(&mask)
        .filter(|(_, &ex)| !ex)
        .map(|(&f, _)| f)
        .collect();
    let available = allowed.len();
    if !(k > 0.0) || k > available as f64 {
        return Err(Error::TooManyNegatives {
            requested: k as usize,
            available,
        });
    }
    if let Some(c) = freq.freq().iter().position(|&f| f >= 1.0) {
        return Err(Error::DegenerateFrequency(ClassId(c)));
    }
    let total = |a: f64| allowed.iter().map(|&f| math::powf(f, a)).sum::<f64>();
    if (available as f64 - k).abs() <= ALPHA_TOL * k {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0, ALPHA_MAX);
    if total(hi) > k {
        return Err(Error::InvalidConfig(alloc::format!(
            "no exponent in [0, {ALPHA_MAX}] brings the expected negative count down to {k}"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let s = total(mid);
        if (s - k).abs() <= ALPHA_TOL * k {
            return Ok(mid);
        }
        if s > k {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Sampled negative classes with their inverse-inclusion weights `κ`.
///
/// Importance draws are a multiset (one entry per draw); Bernoulli draws are a
/// set in increasing class order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NegativeDraw {
    pub classes: Vec<ClassId>,
    pub kappa: Vec<f64>,
}

impl NegativeDraw {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// Collapse repeated classes, summing their weights. Result is sorted by class.
    pub fn merged(&self) -> Vec<(ClassId, f64)> {
        let mut pairs: Vec<(ClassId, f64)> =
            self.classes.iter().copied().zip(self.kappa.iter().copied()).collect();
        pairs.sort_by_key(|p| p.0);
        let mut out: Vec<(ClassId, f64)> = Vec::with_capacity(pairs.len());
        for (c, k) in pairs {
            match out.last_mut() {
                Some(last) if last.0 == c => last.1 += k,
                _ => out.push((c, k)),
            }
        }
        out
    }

    /// Number of distinct classes in the draw.
    pub fn distinct(&self) -> usize {
        self.merged().len()
    }
}

/// Per-class inclusion probabilities for Bernoulli sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliConfig {
    pub k: f64,
    pub alpha_exponent: f64,
    /// Inclusion probability per class; zero for excluded classes.
    pub b: Vec<f64>,
}

impl BernoulliConfig {
    /// `b_d = f(d)^α` with `α` tuned so the complement of `excluded` has `K`
    /// expected members.
    pub fn solve(freq: &FrequencyTable, excluded: &[ClassId], k: f64) -> Result<Self> {
        let alpha = solve_alpha_exponent(freq, excluded, k)?;
        let mask = excluded_mask(freq.classes(), excluded)?;
        let b = freq
            .freq()
            .iter()
            .zip(&mask)
            .map(|(&f, &ex)| if ex { 0.0 } else { math::powf(f, alpha).min(1.0) })
            .collect();
        Ok(BernoulliConfig {
            k,
            alpha_exponent: alpha,
            b,
        })
    }

    /// Use the given probabilities directly (excluded classes should carry 0).
    pub fn from_probs(b: Vec<f64>) -> Result<Self> {
        if b.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::InvalidConfig("inclusion probabilities must lie in [0, 1]".into()));
        }
        let k = b.iter().sum();
        Ok(BernoulliConfig {
            k,
            alpha_exponent: f64::NAN,
            b,
        })
    }

    pub fn expected_count(&self) -> f64 {
        self.b.iter().sum()
    }

    /// `Σ b_d (1 − b_d)`, the variance of the number of included classes.
    pub fn count_variance(&self) -> f64 {
        self.b.iter().map(|&p| p * (1.0 - p)).sum()
    }
}

/// Include each non-excluded class `d` independently with probability `b_d`.
pub fn bernoulli_draw(cfg: &BernoulliConfig, excluded: &[ClassId], rng: &mut Rng) -> NegativeDraw {
    let mut draw = NegativeDraw::default();
    for (d, &p) in cfg.b.iter().enumerate() {
        if p <= 0.0 || excluded.contains(&ClassId(d)) {
            continue;
        }
        let u: f64 = rng.random();
        if u < p {
            draw.classes.push(ClassId(d));
            draw.kappa.push(1.0 / p);
        }
    }
    draw
}

/// Proposal over the allowed classes for importance sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceConfig {
    pub samples: usize,
    /// Renormalised proposal; zero on excluded classes.
    pub q: Vec<f64>,
    cdf: Vec<f64>,
}

impl ImportanceConfig {
    /// Restrict `base` to the complement of `excluded` and renormalise.
    pub fn new(samples: usize, base: &[f64], excluded: &[ClassId]) -> Result<Self> {
        let mask = excluded_mask(base.len(), excluded)?;
        if base.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidConfig("proposal weights must be finite and >= 0".into()));
        }
        let mut q: Vec<f64> = base
            .iter()
            .zip(&mask)
            .map(|(&p, &ex)| if ex { 0.0 } else { p })
            .collect();
        let z: f64 = q.iter().sum();
        if !(z > 0.0) {
            return Err(Error::InvalidConfig("proposal has no mass outside the excluded set".into()));
        }
        for v in &mut q {
            *v /= z;
        }
        if q.iter().zip(&mask).any(|(&p, &ex)| !ex && p <= 0.0) {
            return Err(Error::InvalidConfig("proposal must be positive on every allowed class".into()));
        }
        let mut acc = 0.0;
        let cdf = q
            .iter()
            .map(|&p| {
                acc += p;
                acc
            })
            .collect();
        Ok(ImportanceConfig { samples, q, cdf })
    }

    /// Uniform proposal over every class not in `excluded`.
    pub fn uniform(samples: usize, classes: usize, excluded: &[ClassId]) -> Result<Self> {
        Self::new(samples, &vec![1.0; classes], excluded)
    }

    /// One class drawn from `q` by inverting the CDF.
    pub fn sample_class(&self, rng: &mut Rng) -> ClassId {
        let total = *self.cdf.last().unwrap_or(&0.0);
        let u = rng.random::<f64>() * total;
        let mut i = self.cdf.partition_point(|&c| c <= u);
        // Skip zero-mass classes that share the boundary, and guard the top end.
        while i < self.q.len() && self.q[i] == 0.0 {
            i += 1;
        }
        if i >= self.q.len() {
            i = self.q.iter().rposition(|&p| p > 0.0).unwrap_or(0);
        }
        ClassId(i)
    }
}

/// `S` i.i.d. draws from `q`, each weighted by `1/(S q(d))`.
pub fn importance_draw(cfg: &ImportanceConfig, excluded: &[ClassId], rng: &mut Rng) -> NegativeDraw {
    debug_assert!(excluded.iter().all(|c| cfg.q[c.0] == 0.0));
    let s = cfg.samples as f64;
    let mut draw = NegativeDraw::default();
    for _ in 0..cfg.samples {
        let d = cfg.sample_class(rng);
        draw.classes.push(d);
        draw.kappa.push(1.0 / (s * cfg.q[d.0]));
    }
    draw
}

/// `(1/S) Σ_s z_{d_s} / q(d_s)`.
pub fn estimate_z_importance(z: &[f64], cfg: &ImportanceConfig, rng: &mut Rng) -> f64 {
    let draw = importance_draw(cfg, &[], rng);
    draw.classes
        .iter()
        .zip(&draw.kappa)
        .map(|(d, k)| k * z[d.0])
        .sum()
}

/// `Σ_{i: s_i = 1} z_i / b_i` from a single joint Bernoulli sample.
pub fn estimate_z_bernoulli(z: &[f64], b: &[f64], rng: &mut Rng) -> f64 {
    let mut total = 0.0;
    for (&zi, &bi) in z.iter().zip(b) {
        let u: f64 = rng.random();
        if u < bi {
            total += zi / bi;
        }
    }
    total
}

/// `(1/S) (Σ_c z_c² / q_c − Z²)`.
pub fn variance_importance(z: &[f64], q: &[f64], samples: usize) -> f64 {
    let total: f64 = z.iter().sum();
    let second: f64 = z
        .iter()
        .zip(q)
        .filter(|(_, &qc)| qc > 0.0)
        .map(|(&zc, &qc)| zc * zc / qc)
        .sum();
    (second - total * total) / samples as f64
}

/// `Σ_c (1/b_c − 1) z_c²`.
pub fn variance_bernoulli(z: &[f64], b: &[f64]) -> f64 {
    z.iter()
        .zip(b)
        .map(|(&zc, &bc)| (1.0 / bc - 1.0) * zc * zc)
        .sum()
}
