//! Minibatch gradient estimators.
//!
//! All estimators act on linear scores `s_c = w_c · x` and return a
//! [`SparseGradient`] whose rows are `Σ_m weight_m(c) · x_m`. The sampled
//! methods work on a per-datapoint [`SampledSet`]: an explicit positive set
//! `C_m` that is summed exactly plus a negative draw `N_m`.
//!
//! The sampled-likelihood estimator replaces the partition function with
//!
//! ```text
//! Z̃ = Σ_{c ∈ C_m} e^{s_c} + Σ_{d ∈ N_m} κ_d e^{s_d}
//! ```
//!
//! which turns `p̃` into a proper distribution over `C_m ∪ N_m`, so every
//! weight `δ − p̃` stays in `[-1, 1]`.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::math::{self, log_sigmoid, sigmoid};
use crate::model::{self, ClassId, Dataset, ModelParams, SparseGradient};
use crate::rng::{self, tag};
use crate::samplers::{
    bernoulli_draw, importance_draw, BernoulliConfig, FrequencyTable, ImportanceConfig, NegativeDraw,
};

/// Which gradient estimator to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Exact,
    SampledBernoulli,
    SampledImportance,
    Ranking,
    Nce,
    NegativeSampling,
    Blackout,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Exact,
        Method::SampledBernoulli,
        Method::SampledImportance,
        Method::Ranking,
        Method::Nce,
        Method::NegativeSampling,
        Method::Blackout,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::SampledBernoulli => "sampled-bernoulli",
            Method::SampledImportance => "sampled-importance",
            Method::Ranking => "ranking",
            Method::Nce => "nce",
            Method::NegativeSampling => "negative-sampling",
            Method::Blackout => "blackout",
        }
    }

    pub fn is_sampled_likelihood(self) -> bool {
        matches!(self, Method::SampledBernoulli | Method::SampledImportance)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let valid: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::InvalidConfig(alloc::format!(
                    "unknown method '{s}'; valid methods: {}",
                    valid.join(", ")
                ))
            })
    }
}

/// How the explicitly summed set `C_m` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PositiveSetMode {
    /// `C_m = {c_m}`.
    #[default]
    OwnLabel,
    /// `C_m` = every distinct label in the minibatch, shared by all members.
    MinibatchLabels,
}

impl PositiveSetMode {
    pub fn name(self) -> &'static str {
        match self {
            PositiveSetMode::OwnLabel => "own-label",
            PositiveSetMode::MinibatchLabels => "minibatch-labels",
        }
    }
}

impl FromStr for PositiveSetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "own-label" | "own-label-only" => Ok(PositiveSetMode::OwnLabel),
            "minibatch-labels" | "minibatch-labels-shared" => Ok(PositiveSetMode::MinibatchLabels),
            other => Err(Error::InvalidConfig(alloc::format!(
                "unknown positive set mode '{other}'; valid: own-label, minibatch-labels"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub method: Method,
    /// Negatives per datapoint (expected count for Bernoulli, draws otherwise).
    pub k: usize,
    pub positive_set_mode: PositiveSetMode,
    /// Ranking margin; `None` means `ln(C − 1)`.
    pub ranking_threshold: Option<f64>,
    /// Importance proposal `q ∝ f^power`.
    pub proposal_power: f64,
    /// Noise distribution for NCE and negative sampling, `∝ f^power`.
    pub nce_noise_power: f64,
    /// BlackOut's `Q ∝ f^power`.
    pub blackout_power: f64,
    /// Fixed per-datapoint NCE normaliser.
    pub nce_z: f64,
}

impl EstimatorConfig {
    pub fn new(method: Method) -> Self {
        EstimatorConfig {
            method,
            k: 20,
            positive_set_mode: PositiveSetMode::OwnLabel,
            ranking_threshold: None,
            proposal_power: 1.0,
            nce_noise_power: 1.0,
            blackout_power: 0.5,
            nce_z: 1.0,
        }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_threshold(mut self, alpha: f64) -> Self {
        self.ranking_threshold = Some(alpha);
        self
    }

    pub fn with_positive_set_mode(mut self, mode: PositiveSetMode) -> Self {
        self.positive_set_mode = mode;
        self
    }

    /// Margin actually used for `classes` classes.
    pub fn threshold(&self, classes: usize) -> f64 {
        self.ranking_threshold
            .unwrap_or_else(|| suggested_threshold(classes))
    }

    pub fn validate(&self) -> Result<()> {
        if self.method != Method::Exact && self.k == 0 {
            return Err(Error::InvalidConfig("K must be >= 1 for sampled methods".into()));
        }
        if let Some(a) = self.ranking_threshold {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::InvalidConfig("ranking threshold must be a finite value > 0".into()));
            }
        }
        for (name, v) in [
            ("proposal power", self.proposal_power),
            ("nce noise power", self.nce_noise_power),
            ("blackout power", self.blackout_power),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(alloc::format!("{name} must be finite and >= 0")));
            }
        }
        if !(self.nce_z > 0.0 && self.nce_z.is_finite()) {
            return Err(Error::InvalidConfig("nce normaliser must be > 0".into()));
        }
        Ok(())
    }
}

/// `ln(C − 1)`, the margin under which one uniform negative reproduces the
/// single-sample likelihood estimate.
pub fn suggested_threshold(classes: usize) -> f64 {
    math::ln(classes.saturating_sub(1).max(1) as f64)
}

/// Explicit classes plus sampled negatives for one datapoint.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampledSet {
    pub positives: Vec<ClassId>,
    pub negatives: NegativeDraw,
}

impl SampledSet {
    pub fn new(positives: Vec<ClassId>, negatives: NegativeDraw) -> Self {
        SampledSet {
            positives,
            negatives,
        }
    }

    /// Every class as an explicit positive: `Z̃ = Z`.
    pub fn full(classes: usize) -> Self {
        SampledSet {
            positives: (0..classes).map(ClassId).collect(),
            negatives: NegativeDraw::default(),
        }
    }

    pub fn check(&self, label: ClassId) -> Result<()> {
        if !self.positives.contains(&label) {
            return Err(Error::InvalidConfig("explicit set must contain the true class".into()));
        }
        if self.negatives.classes.iter().any(|d| self.positives.contains(d)) {
            return Err(Error::InvalidConfig("negatives overlap the explicit set".into()));
        }
        Ok(())
    }

    /// Distinct classes whose score is evaluated: `|C_m ∪ N_m|`.
    pub fn touched(&self) -> usize {
        let mut all: Vec<ClassId> = self
            .positives
            .iter()
            .chain(self.negatives.classes.iter())
            .copied()
            .collect();
        all.sort();
        all.dedup();
        all.len()
    }
}

/// `p̃` over `C_m ∪ N_m`, positives first then merged negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct PTilde {
    pub classes: Vec<ClassId>,
    pub probs: Vec<f64>,
}

impl PTilde {
    pub fn get(&self, c: ClassId) -> Option<f64> {
        self.classes.iter().position(|&k| k == c).map(|i| self.probs[i])
    }
}

/// Classes and log-domain weights `s_c + ln κ_c` entering `Z̃`.
fn z_tilde_terms(params: &ModelParams, x: &[f64], set: &SampledSet) -> (Vec<ClassId>, Vec<f64>) {
    let merged = set.negatives.merged();
    let mut classes = Vec::with_capacity(set.positives.len() + merged.len());
    let mut logits = Vec::with_capacity(classes.capacity());
    for &c in &set.positives {
        classes.push(c);
        logits.push(params.score(c.0, x));
    }
    for (d, kappa) in merged {
        classes.push(d);
        logits.push(params.score(d.0, x) + math::ln(kappa));
    }
    (classes, logits)
}

/// `ln Z̃` computed with a max shift.
pub fn log_z_tilde(params: &ModelParams, x: &[f64], set: &SampledSet) -> f64 {
    let (_, logits) = z_tilde_terms(params, x, set);
    math::log_sum_exp(logits.iter().copied())
}

/// `Z̃ = Σ_{C_m} u + Σ_{N_m} κ u`.
pub fn z_tilde(params: &ModelParams, x: &[f64], set: &SampledSet) -> f64 {
    math::exp(log_z_tilde(params, x, set))
}

/// `p̃(c) = u_c / Z̃` on positives and `κ_c u_c / Z̃` on negatives.
pub fn p_tilde(params: &ModelParams, x: &[f64], set: &SampledSet) -> PTilde {
    let (classes, logits) = z_tilde_terms(params, x, set);
    let lz = math::log_sum_exp(logits.iter().copied());
    let probs = logits.iter().map(|l| math::exp(l - lz)).collect();
    PTilde { classes, probs }
}

/// `γ̃(c) = δ(c, c_m) − p̃(c)` for every class of `C_m ∪ N_m`.
pub fn gamma_tilde(params: &ModelParams, x: &[f64], label: ClassId, set: &SampledSet) -> Vec<(ClassId, f64)> {
    let pt = p_tilde(params, x, set);
    pt.classes
        .iter()
        .zip(&pt.probs)
        .map(|(&c, &p)| (c, if c == label { 1.0 - p } else { -p }))
        .collect()
}

fn check_batch(params: &ModelParams, data: &Dataset, batch: &[usize], sets: usize) -> Result<()> {
    data.check_params(params)?;
    if batch.is_empty() {
        return Err(Error::InvalidConfig("minibatch is empty".into()));
    }
    if sets != batch.len() {
        return Err(Error::DimensionMismatch {
            what: "per-datapoint draws",
            expected: batch.len(),
            found: sets,
        });
    }
    Ok(())
}

/// `Σ_m Σ_{c ∈ C′_m} γ̃_m(c) x_m`.
pub fn gradient_sampled_likelihood(
    params: &ModelParams,
    data: &Dataset,
    batch: &[usize],
    sets: &[SampledSet],
) -> Result<SparseGradient> {
    check_batch(params, data, batch, sets.len())?;
    let mut grad = SparseGradient::new();
    for (&n, set) in batch.iter().zip(sets) {
        let (x, label) = (data.input(n), data.label(n));
        set.check(label)?;
        if set.negatives.is_empty() {
            grad.empty_draws += 1;
        }
        grad.op_count += set.touched() as u64;
        for (c, g) in gamma_tilde(params, x, label, set) {
            grad.add_scaled(c, g, x);
        }
    }
    Ok(grad)
}

/// `Σ_m (s_{c_m} − ln Z̃_m)`.
pub fn objective_sampled_likelihood(
    params: &ModelParams,
    data: &Dataset,
    batch: &[usize],
    sets: &[SampledSet],
) -> Result<f64> {
    check_batch(params, data, batch, sets.len())?;
    let mut total = 0.0;
    for (&n, set) in batch.iter().zip(sets) {
        let (x, label) = (data.input(n), data.label(n));
        set.check(label)?;
        total += params.score(label.0, x) - log_z_tilde(params, x, set);
    }
    Ok(total)
}

fn require_negatives(negatives: &[NegativeDraw]) -> Result<()> {
    if negatives.iter().any(|d| d.is_empty()) {
        return Err(Error::InvalidConfig("every datapoint needs at least one negative".into()));
    }
    Ok(())
}

fn touched_with_label(label: ClassId, draw: &NegativeDraw) -> u64 {
    let mut all: Vec<ClassId> = draw.classes.clone();
    all.push(label);
    all.sort();
    all.dedup();
    all.len() as u64
}

/// Ranking gradient: per negative `d`, weight `1 − σ(s_{c_m} − s_d − α)` on
/// `c_m` and its negation on `d`, averaged over the negatives.
pub fn gradient_ranking(
    params: &ModelParams,
    data: &Dataset,
    batch: &[usize],
    negatives: &[NegativeDraw],
    alpha: f64,
) -> Result<SparseGradient> {
    check_batch(params, data, batch, negatives.len())?;
    require_negatives(negatives)?;
    let mut grad = SparseGradient::new();
    for (&n, draw) in batch.iter().zip(negatives) {
        let (x, label) = (data.input(n), data.label(n));
        grad.op_count += touched_with_label(label, draw);
        let s_pos = params.score(label.0, x);
        let scale = 1.0 / draw.len() as f64;
        let mut pos_weight = 0.0;
        for &d in &draw.classes {
            let w = sigmoid(-(s_pos - params.score(d.0, x) - alpha)) * scale;
            pos_weight += w;
            grad.add_scaled(d, -w, x);
        }
        grad.add_scaled(label, pos_weight, x);
    }
    Ok(grad)
}

/// `Σ_m (1/|N_m|) Σ_d ln σ(s_{c_m} − s_d − α)`.
pub fn objective_ranking(
    params: &ModelParams,
    data: &Dataset,
    batch: &[usize],
    negatives: &[NegativeDraw],
    alpha: f64,
) -> Result<f64> {
    check_batch(params, data, batch, negatives.len())?;
    require_negatives(negatives)?;
    let mut total = 0.0;
    for (&n, draw) in batch.iter().zip(negatives) {
        let (x, label) = (data.input(n), data.label(n));
        let s_pos = params.score(label.0, x);
        let sum: f64 = draw
            .classes
            .iter()
            .map(|d| log_sigmoid(s_pos - params.score(d.0, x) - alpha))
            .sum();
        total += sum / draw.len() as f64;
    }
    Ok(total)
}

/// Log-odds of "data" over "noise" for class `c`: `s_c − ln z − ln(k p_n(c))`.
#[inline]
fn nce_logit(score: f64, z: f64, k: usize, noise: f64) -> f64 {
    score - math::ln(z) - math::ln(k as f64 * noise)
}

/// NCE gradient with a fixed normaliser `z` and noise distribution `noise`.
///
/// Each datapoint's draw holds its `k` noise classes (drawn over all classes,
/// so the true class may appear among them).
pub fn gradient_nce(
    params: &ModelParams,
    data: &Dataset,
    batch: &[usize],
    noise: &[f64],
    draws: &[NegativeDraw],
    z_fixed: f64,
) -> Result<SparseGradient> {
    check_batch(params, data, batch, draws.len())?;
    require_negatives(draws)?;
    check_noise(noise, params.classes())?;
    let mut grad = SparseGradient::new();
    for (&n, draw) in batch.iter().zip(draws) {
        let (x, label) = (data.input(n), data.label(n));
        let k = draw.len();
        grad.op_count += touched_with_label(label, draw);
        let a = nce_logit(params.score(label.0, x), z_fixed, k, noise[label.0]);
        grad.add_scaled(label, sigmoid(-a), x);
        for &d in &draw.classes {
            let a = nce_logit(params.score(d.0, x), z_fixed, k, noise[d.0]);
            grad.add_scaled(d, -sigmoid(a), x);
        }
    }
    Ok(grad)
}

/// NCE binary log-loss: `ln σ(a_{c_m}) + Σ_i ln σ(−a_{d_i})`.
pub fn objective_nce(
    params: &ModelParams,
    data: &Dataset,
    batch: &[usize],
    noise: &[f64],
    draws: &[NegativeDraw],
    z_fixed: f64,
) -> Result<f64> {
    check_batch(params, data, batch, draws.len())?;
    require_negatives(draws)?;
    check_noise(noise, params.classes())?;
    let mut total = 0.0;
    for (&n, draw) in batch.iter().zip(draws) {
        let (x, label) = (data.input(n), data.label(n));
        let k = draw.len();
        total += log_sigmoid(nce_logit(params.score(label.0, x), z_fixed, k, noise[label.0]));
        for &d in &draw.classes {
            total += log_sigmoid(-nce_logit(params.score(d.0, x), z_fixed, k, noise[d.0]));
        }
    }
    Ok(total)
}

fn check_noise(noise: &[f64], classes: usize) -> Result<()> {
    if noise.len() != classes {
        return Err(Error::DimensionMismatch {
            what: "noise distribution",
            expected: classes,
            found: noise.len(),
        });
    }
    if noise.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::InvalidConfig("noise distribution must be positive on every class".into()));
    }
    Ok(())
}

/// Negative sampling: `1 − σ(s_{c_m})` on the true class, `−σ(s_d)/|N_m|` on
/// each negative.
pub fn gradient_negative_sampling(
    params: &ModelParams,
    data: &Dataset,
    batch: &[usize],
    negatives: &[NegativeDraw],
) -> Result<SparseGradient> {
    check_batch(params, data, batch, negatives.len())?;
    require_negatives(negatives)?;
    let mut grad = SparseGradient::new();
    for (&n, draw) in batch.iter().zip(negatives) {
        let (x, label) = (data.input(n), data.label(n));
        grad.op_count += touched_with_label(label, draw);
        grad.add_scaled(label, sigmoid(-params.score(label.0, x)), x);
        let scale = 1.0 / draw.len() as f64;
        for &d in &draw.classes {
            grad.add_scaled(d, -sigmoid(params.score(d.0, x)) * scale, x);
        }
    }
    Ok(grad)
}

/// `Σ_m ln σ(s_{c_m}) + (1/|N_m|) Σ_d ln(1 − σ(s_d))`.
pub fn objective_negative_sampling(
    params: &ModelParams,
    data: &Dataset,
    batch: &[usize],
    negatives: &[NegativeDraw],
) -> Result<f64> {
    check_batch(params, data, batch, negatives.len())?;
    require_negatives(negatives)?;
    let mut total = 0.0;
    for (&n, draw) in batch.iter().zip(negatives) {
        let (x, label) = (data.input(n), data.label(n));
        total += log_sigmoid(params.score(label.0, x));
        let neg: f64 = draw
            .classes
            .iter()
            .map(|d| log_sigmoid(-params.score(d.0, x)))
            .sum();
        total += neg / draw.len() as f64;
    }
    Ok(total)
}

/// Per-entry logits `t_j = s_j − ln Q(j)`; entry 0 is the true class.
fn blackout_logits(params: &ModelParams, x: &[f64], label: ClassId, draw: &NegativeDraw, q: &[f64]) -> Vec<f64> {
    core::iter::once(label)
        .chain(draw.classes.iter().copied())
        .map(|c| params.score(c.0, x) - math::ln(q[c.0]))
        .collect()
}

/// `ln Σ_{j ≠ skip} e^{t_j}`.
fn lse_without(t: &[f64], skip: usize) -> f64 {
    math::log_sum_exp(
        t.iter()
            .enumerate()
            .filter(move |(j, _)| *j != skip)
            .map(|(_, v)| *v),
    )
}

/// BlackOut: `ln p̃(c_m) + Σ_{d ∈ N} ln(1 − p̃(d))` with
/// `p̃(c) = e^{t_c} / Σ_{j ∈ {c_m} ∪ N} e^{t_j}`, differentiated analytically.
pub fn gradient_blackout(
    params: &ModelParams,
    data: &Dataset,
    batch: &[usize],
    q: &[f64],
    negatives: &[NegativeDraw],
) -> Result<SparseGradient> {
    check_batch(params, data, batch, negatives.len())?;
    check_noise(q, params.classes())?;
    let mut grad = SparseGradient::new();
    for (&n, draw) in batch.iter().zip(negatives) {
        let (x, label) = (data.input(n), data.label(n));
        grad.op_count += touched_with_label(label, draw);
        if draw.is_empty() {
            grad.empty_draws += 1;
            continue;
        }
        let t = blackout_logits(params, x, label, draw, q);
        let entries = t.len();
        let lse = math::log_sum_exp(t.iter().copied());
        // ∂/∂t_j of each term; then rows are summed per class.
        let mut dt: Vec<f64> = t
            .iter()
            .map(|&tj| -(entries as f64) * math::exp(tj - lse))
            .collect();
        dt[0] += 1.0;
        for i in 1..entries {
            let rest = lse_without(&t, i);
            for (j, &tj) in t.iter().enumerate() {
                if j != i {
                    dt[j] += math::exp(tj - rest);
                }
            }
        }
        let classes = core::iter::once(label).chain(draw.classes.iter().copied());
        for (c, w) in classes.zip(dt) {
            grad.add_scaled(c, w, x);
        }
    }
    Ok(grad)
}

pub fn objective_blackout(
    params: &ModelParams,
    data: &Dataset,
    batch: &[usize],
    q: &[f64],
    negatives: &[NegativeDraw],
) -> Result<f64> {
    check_batch(params, data, batch, negatives.len())?;
    check_noise(q, params.classes())?;
    let mut total = 0.0;
    for (&n, draw) in batch.iter().zip(negatives) {
        let (x, label) = (data.input(n), data.label(n));
        let t = blackout_logits(params, x, label, draw, q);
        let lse = math::log_sum_exp(t.iter().copied());
        total += t[0] - lse;
        for i in 1..t.len() {
            total += lse_without(&t, i) - lse;
        }
    }
    Ok(total)
}

/// Cache size past which per-exclusion-set sampler configs are dropped.
const CACHE_LIMIT: usize = 4096;

/// A configured estimator: the method plus the sampling distributions derived
/// from the training-set class frequencies.
#[derive(Debug, Clone)]
pub struct Estimator {
    cfg: EstimatorConfig,
    classes: usize,
    freq: FrequencyTable,
    proposal: Vec<f64>,
    noise: Vec<f64>,
    blackout_q: Vec<f64>,
    uniform: Vec<f64>,
    bernoulli_cache: BTreeMap<Vec<ClassId>, BernoulliConfig>,
    importance_cache: BTreeMap<Vec<ClassId>, ImportanceConfig>,
}

impl Estimator {
    pub fn new(cfg: EstimatorConfig, freq: FrequencyTable) -> Result<Self> {
        cfg.validate()?;
        let classes = freq.classes();
        Ok(Estimator {
            proposal: freq.powered(cfg.proposal_power),
            noise: freq.powered(cfg.nce_noise_power),
            blackout_q: freq.powered(cfg.blackout_power),
            uniform: vec![1.0; classes],
            cfg,
            classes,
            freq,
            bernoulli_cache: BTreeMap::new(),
            importance_cache: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.cfg
    }

    pub fn method(&self) -> Method {
        self.cfg.method
    }

    pub fn frequencies(&self) -> &FrequencyTable {
        &self.freq
    }

    pub fn noise(&self) -> &[f64] {
        &self.noise
    }

    pub fn blackout_q(&self) -> &[f64] {
        &self.blackout_q
    }

    /// Bernoulli inclusion probabilities for a given explicit set.
    pub fn bernoulli_config(&mut self, positives: &[ClassId]) -> Result<&BernoulliConfig> {
        if !self.bernoulli_cache.contains_key(positives) {
            if self.bernoulli_cache.len() >= CACHE_LIMIT {
                self.bernoulli_cache.clear();
            }
            let cfg = BernoulliConfig::solve(&self.freq, positives, self.cfg.k as f64)?;
            self.bernoulli_cache.insert(positives.to_vec(), cfg);
        }
        Ok(&self.bernoulli_cache[positives])
    }

    fn importance_config(&mut self, excluded: &[ClassId], base: Base) -> Result<&ImportanceConfig> {
        let mut key = excluded.to_vec();
        // Distinguish proposals sharing an exclusion set.
        key.push(ClassId(usize::MAX - base as usize));
        if !self.importance_cache.contains_key(&key) {
            if self.importance_cache.len() >= CACHE_LIMIT {
                self.importance_cache.clear();
            }
            let dist = match base {
                Base::Proposal => &self.proposal,
                Base::Noise => &self.noise,
                Base::Blackout => &self.blackout_q,
                Base::Uniform => &self.uniform,
            };
            let cfg = ImportanceConfig::new(self.cfg.k, dist, excluded)?;
            self.importance_cache.insert(key.clone(), cfg);
        }
        Ok(&self.importance_cache[&key])
    }

    fn positives(&self, data: &Dataset, batch: &[usize], n: usize) -> Vec<ClassId> {
        match self.cfg.positive_set_mode {
            PositiveSetMode::OwnLabel => vec![data.label(n)],
            PositiveSetMode::MinibatchLabels => {
                let mut p: Vec<ClassId> = batch.iter().map(|&m| data.label(m)).collect();
                p.sort();
                p.dedup();
                p
            }
        }
    }

    /// Draw the per-datapoint sets for one minibatch. Datapoint `n` at
    /// iteration `t` always uses the stream `(seed, t, n)`.
    pub fn draw(&mut self, data: &Dataset, batch: &[usize], seed: u64, iteration: u64) -> Result<Vec<SampledSet>> {
        let method = self.cfg.method;
        let mut sets = Vec::with_capacity(batch.len());
        for &n in batch {
            let mut rng = rng::stream(seed, &[tag::DRAW, iteration, n as u64]);
            let label = data.label(n);
            let set = match method {
                Method::Exact => SampledSet::full(self.classes),
                Method::SampledBernoulli => {
                    let positives = self.positives(data, batch, n);
                    let cfg = self.bernoulli_config(&positives)?;
                    let negatives = bernoulli_draw(cfg, &positives, &mut rng);
                    SampledSet::new(positives, negatives)
                }
                Method::SampledImportance => {
                    let positives = self.positives(data, batch, n);
                    let cfg = self.importance_config(&positives, Base::Proposal)?;
                    let negatives = importance_draw(cfg, &positives, &mut rng);
                    SampledSet::new(positives, negatives)
                }
                Method::Ranking | Method::NegativeSampling | Method::Blackout => {
                    let base = match method {
                        Method::Ranking => Base::Uniform,
                        Method::NegativeSampling => Base::Noise,
                        _ => Base::Blackout,
                    };
                    let excluded = [label];
                    let cfg = self.importance_config(&excluded, base)?;
                    let negatives = importance_draw(cfg, &excluded, &mut rng);
                    SampledSet::new(vec![label], negatives)
                }
                Method::Nce => {
                    let cfg = self.importance_config(&[], Base::Noise)?;
                    let negatives = importance_draw(cfg, &[], &mut rng);
                    SampledSet::new(vec![label], negatives)
                }
            };
            sets.push(set);
        }
        Ok(sets)
    }

    fn negatives_of(sets: &[SampledSet]) -> Vec<NegativeDraw> {
        sets.iter().map(|s| s.negatives.clone()).collect()
    }

    pub fn gradient(&self, params: &ModelParams, data: &Dataset, batch: &[usize], sets: &[SampledSet]) -> Result<SparseGradient> {
        match self.cfg.method {
            Method::Exact => model::gradient_exact(params, data, batch),
            Method::SampledBernoulli | Method::SampledImportance => {
                gradient_sampled_likelihood(params, data, batch, sets)
            }
            Method::Ranking => gradient_ranking(
                params,
                data,
                batch,
                &Self::negatives_of(sets),
                self.cfg.threshold(self.classes),
            ),
            Method::Nce => gradient_nce(params, data, batch, &self.noise, &Self::negatives_of(sets), self.cfg.nce_z),
            Method::NegativeSampling => gradient_negative_sampling(params, data, batch, &Self::negatives_of(sets)),
            Method::Blackout => gradient_blackout(params, data, batch, &self.blackout_q, &Self::negatives_of(sets)),
        }
    }

    /// The objective whose gradient [`Estimator::gradient`] returns.
    pub fn objective(&self, params: &ModelParams, data: &Dataset, batch: &[usize], sets: &[SampledSet]) -> Result<f64> {
        match self.cfg.method {
            Method::Exact => objective_exact(params, data, batch),
            Method::SampledBernoulli | Method::SampledImportance => {
                objective_sampled_likelihood(params, data, batch, sets)
            }
            Method::Ranking => objective_ranking(
                params,
                data,
                batch,
                &Self::negatives_of(sets),
                self.cfg.threshold(self.classes),
            ),
            Method::Nce => objective_nce(params, data, batch, &self.noise, &Self::negatives_of(sets), self.cfg.nce_z),
            Method::NegativeSampling => objective_negative_sampling(params, data, batch, &Self::negatives_of(sets)),
            Method::Blackout => objective_blackout(params, data, batch, &self.blackout_q, &Self::negatives_of(sets)),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Base {
    Proposal = 0,
    Noise = 1,
    Blackout = 2,
    Uniform = 3,
}

/// Exact log-likelihood of the minibatch rows.
pub fn objective_exact(params: &ModelParams, data: &Dataset, batch: &[usize]) -> Result<f64> {
    data.check_params(params)?;
    let mut total = 0.0;
    let mut s = vec![0.0; params.classes()];
    for &n in batch {
        let x = data.input(n);
        for (c, v) in s.iter_mut().enumerate() {
            *v = params.score(c, x);
        }
        total += s[data.label(n).0] - math::log_sum_exp(s.iter().copied());
    }
    Ok(total)
}

/// Human-readable summary used in output metadata.
pub fn describe(cfg: &EstimatorConfig, classes: usize) -> String {
    alloc::format!(
        "method={} k={} positives={} threshold={} proposal_power={} nce_noise_power={} blackout_power={} nce_z={}",
        cfg.method,
        cfg.k,
        cfg.positive_set_mode.name(),
        cfg.threshold(classes),
        cfg.proposal_power,
        cfg.nce_noise_power,
        cfg.blackout_power,
        cfg.nce_z
    )
}
