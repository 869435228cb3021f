//! `key=value` run configuration shared by config files and command-line flags.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use softmax_lab_core::estimators::{EstimatorConfig, Method, PositiveSetMode};
use softmax_lab_core::experiments::{HarnessOptions, LearningRate};
use softmax_lab_core::trainer::{SparseUpdate, TrainerConfig};

/// Value syntax accepted for a key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Count,
    Seed,
    Real,
    Reals,
    Path,
    Methods,
    Metrics,
    Bool,
    PositiveSet,
    Sparse,
    Rate,
}

#[derive(Debug, Clone, Copy)]
pub struct Key {
    pub name: &'static str,
    pub kind: Kind,
    pub default: Option<&'static str>,
    pub help: &'static str,
}

const fn key(name: &'static str, kind: Kind, default: Option<&'static str>, help: &'static str) -> Key {
    Key {
        name,
        kind,
        default,
        help,
    }
}

pub const DEFAULT_METHODS: &str = "exact,sampled-bernoulli,sampled-importance,ranking,blackout";

/// Metric columns that can be plotted.
pub const METRICS: [&str; 3] = ["exact_ll", "bias", "param_diff"];

pub const KEYS: &[Key] = &[
    key("n", Kind::Count, Some("2000"), "number of datapoints"),
    key("d", Kind::Count, Some("100"), "input dimension"),
    key("c", Kind::Count, Some("1000"), "number of classes"),
    key("seed", Kind::Seed, Some("1"), "master seed"),
    key("data", Kind::Path, Some("data.txt"), "dataset file"),
    key("params", Kind::Path, None, "true-parameter file (default: <data>.params)"),
    key("input", Kind::Path, None, "results CSV to plot"),
    key("out", Kind::Path, None, "output file (output directory for plot)"),
    key("methods", Kind::Methods, Some(DEFAULT_METHODS), "comma-separated methods"),
    key("k", Kind::Count, Some("20"), "negatives per datapoint"),
    key("positive_set_mode", Kind::PositiveSet, Some("own-label"), "own-label or minibatch-labels"),
    key("alpha", Kind::Real, None, "ranking margin (default: ln(C-1))"),
    key("alphas", Kind::Reals, None, "ranking margins for the sweep (default: 1,2,ln(C-1),9)"),
    key("proposal_power", Kind::Real, Some("1"), "importance proposal q ∝ f^power"),
    key("noise_power", Kind::Real, Some("1"), "NCE / negative-sampling noise ∝ f^power"),
    key("blackout_power", Kind::Real, Some("0.5"), "BlackOut Q ∝ f^power"),
    key("nce_z", Kind::Real, Some("1"), "fixed NCE normaliser"),
    key("smoothing", Kind::Real, Some("1"), "add-count for class frequencies"),
    key("lr", Kind::Real, Some("0.02"), "learning rate for exact and sampled-likelihood runs"),
    key("comparator_lr", Kind::Rate, Some("search"), "'search' or a fixed rate for the other methods"),
    key("momentum", Kind::Real, Some("0.99"), "momentum coefficient"),
    key("minibatch", Kind::Count, Some("50"), "minibatch size"),
    key("iterations", Kind::Count, Some("2000"), "training iterations"),
    key("eval_every", Kind::Count, Some("10"), "evaluation interval"),
    key("pilot_iterations", Kind::Count, Some("200"), "steps per learning-rate pilot run"),
    key("sparse_update", Kind::Sparse, Some("touched-rows"), "touched-rows or all-rows"),
    key("wallclock", Kind::Bool, Some("false"), "record elapsed milliseconds"),
    key("f", Kind::Real, Some("0.05"), "compute fraction for the variance study"),
    key("trials", Kind::Count, Some("20000"), "Monte-Carlo trials"),
    key("log_scale", Kind::Real, Some("3"), "scores are exp(log_scale * normal)"),
    key("metrics", Kind::Metrics, Some("exact_ll,bias"), "metrics to plot"),
];

pub fn lookup(name: &str) -> Option<&'static Key> {
    let name = name.replace('-', "_");
    KEYS.iter().find(|k| k.name == name)
}

fn split_list(value: &str) -> impl Iterator<Item = &str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn parse_real(value: &str) -> Result<f64> {
    let v: f64 = value.parse().map_err(|_| anyhow!("'{value}' is not a number"))?;
    if !v.is_finite() {
        bail!("'{value}' is not finite");
    }
    Ok(v)
}

fn check(kind: Kind, value: &str) -> Result<()> {
    match kind {
        Kind::Count => {
            value.parse::<usize>().map_err(|_| anyhow!("'{value}' is not a non-negative integer"))?;
        }
        Kind::Seed => {
            value.parse::<u64>().map_err(|_| anyhow!("'{value}' is not a 64-bit seed"))?;
        }
        Kind::Real => {
            parse_real(value)?;
        }
        Kind::Reals => {
            let mut any = false;
            for v in split_list(value) {
                parse_real(v)?;
                any = true;
            }
            if !any {
                bail!("expected at least one number");
            }
        }
        Kind::Path => {
            if value.is_empty() {
                bail!("empty path");
            }
        }
        Kind::Methods => {
            let mut any = false;
            for m in split_list(value) {
                Method::from_str(m)?;
                any = true;
            }
            if !any {
                bail!("expected at least one method");
            }
        }
        Kind::Metrics => {
            let mut any = false;
            for m in split_list(value) {
                if !METRICS.contains(&m) {
                    bail!("unknown metric '{m}'; valid metrics: {}", METRICS.join(", "));
                }
                any = true;
            }
            if !any {
                bail!("expected at least one metric");
            }
        }
        Kind::Bool => {
            value.parse::<bool>().map_err(|_| anyhow!("'{value}' is not true or false"))?;
        }
        Kind::PositiveSet => {
            PositiveSetMode::from_str(value)?;
        }
        Kind::Sparse => {
            SparseUpdate::from_str(value)?;
        }
        Kind::Rate => {
            if value != "search" {
                let v = parse_real(value)?;
                if v <= 0.0 {
                    bail!("learning rate must be > 0");
                }
            }
        }
    }
    Ok(())
}

/// Validated textual settings. Values are checked for syntax on insertion;
/// cross-field checks happen when they are turned into module configs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl RunConfig {
    pub fn new() -> Self {
        RunConfig::default()
    }

    pub fn set(&mut self, name: &str, value: &str) -> Result<()> {
        let key = lookup(name).ok_or_else(|| anyhow!("unknown configuration key '{name}'"))?;
        let value = value.trim();
        check(key.kind, value).with_context(|| format!("invalid value for '{}'", key.name))?;
        self.values.insert(key.name, value.to_string());
        Ok(())
    }

    pub fn with(mut self, name: &str, value: &str) -> Result<Self> {
        self.set(name, value)?;
        Ok(self)
    }

    /// Parse `key=value` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key=value", i + 1))?;
            cfg.set(k.trim(), v).with_context(|| format!("line {}", i + 1))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        RunConfig::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Settings from `over` replace those in `self`.
    pub fn overlay(mut self, over: &RunConfig) -> Self {
        for (k, v) in &over.values {
            self.values.insert(k, v.clone());
        }
        self
    }

    pub fn is_set(&self, name: &str) -> bool {
        lookup(name).is_some_and(|k| self.values.contains_key(k.name))
    }

    /// Explicit value, else the key's default.
    pub fn raw(&self, name: &str) -> Option<&str> {
        let key = lookup(name)?;
        self.values.get(key.name).map(String::as_str).or(key.default)
    }

    fn required(&self, name: &str) -> Result<&str> {
        self.raw(name).ok_or_else(|| anyhow!("missing required setting '{name}'"))
    }

    pub fn count(&self, name: &str) -> Result<usize> {
        Ok(self.required(name)?.parse()?)
    }

    pub fn seed(&self) -> Result<u64> {
        Ok(self.required("seed")?.parse()?)
    }

    pub fn real(&self, name: &str) -> Result<f64> {
        parse_real(self.required(name)?)
    }

    pub fn optional_real(&self, name: &str) -> Result<Option<f64>> {
        self.raw(name).map(parse_real).transpose()
    }

    pub fn reals(&self, name: &str) -> Result<Option<Vec<f64>>> {
        self.raw(name).map(|v| split_list(v).map(parse_real).collect()).transpose()
    }

    pub fn flag(&self, name: &str) -> Result<bool> {
        Ok(self.required(name)?.parse()?)
    }

    pub fn path(&self, name: &str) -> Option<PathBuf> {
        self.raw(name).map(PathBuf::from)
    }

    pub fn path_or(&self, name: &str, fallback: &str) -> PathBuf {
        self.path(name).unwrap_or_else(|| PathBuf::from(fallback))
    }

    /// Dataset path and its true-parameter sidecar.
    pub fn data_paths(&self) -> (PathBuf, PathBuf) {
        let data = self.path_or("data", "data.txt");
        let params = self.path("params").unwrap_or_else(|| {
            let mut p = data.clone().into_os_string();
            p.push(".params");
            PathBuf::from(p)
        });
        (data, params)
    }

    pub fn methods(&self) -> Result<Vec<Method>> {
        split_list(self.required("methods")?)
            .map(|m| Method::from_str(m).map_err(Into::into))
            .collect()
    }

    pub fn metrics(&self) -> Result<Vec<String>> {
        Ok(split_list(self.required("metrics")?).map(str::to_string).collect())
    }

    pub fn estimator(&self, method: Method) -> Result<EstimatorConfig> {
        let mut est = EstimatorConfig::new(method)
            .with_k(self.count("k")?)
            .with_positive_set_mode(self.required("positive_set_mode")?.parse()?);
        est.ranking_threshold = self.optional_real("alpha")?;
        est.proposal_power = self.real("proposal_power")?;
        est.nce_noise_power = self.real("noise_power")?;
        est.blackout_power = self.real("blackout_power")?;
        est.nce_z = self.real("nce_z")?;
        est.validate()?;
        Ok(est)
    }

    /// Learning-rate policy for methods other than exact and sampled likelihood.
    pub fn comparator_rate(&self) -> Result<LearningRate> {
        match self.required("comparator_lr")? {
            "search" => Ok(LearningRate::Search),
            v => Ok(LearningRate::Fixed(parse_real(v)?)),
        }
    }

    pub fn trainer(&self) -> Result<TrainerConfig> {
        Ok(TrainerConfig {
            learning_rate: self.real("lr")?,
            momentum: self.real("momentum")?,
            minibatch_size: self.count("minibatch")?,
            iterations: self.count("iterations")? as u64,
            seed: self.seed()?,
            eval_every: self.count("eval_every")? as u64,
            sparse_update: self.required("sparse_update")?.parse()?,
        })
    }

    pub fn harness(&self) -> Result<HarnessOptions> {
        let smoothing = self.real("smoothing")?;
        if smoothing < 0.0 {
            bail!("smoothing must be >= 0");
        }
        Ok(HarnessOptions {
            smoothing,
            pilot_iterations: self.count("pilot_iterations")? as u64,
            ..HarnessOptions::default()
        })
    }

    /// `(key, effective value)` for each of `names` that has one.
    pub fn effective(&self, names: &[&str]) -> Vec<(String, String)> {
        names
            .iter()
            .filter_map(|n| self.raw(n).map(|v| (n.to_string(), v.to_string())))
            .collect()
    }
}
