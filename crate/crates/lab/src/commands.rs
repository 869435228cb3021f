//! Subcommand implementations. Each `run_*` function returns its output as
//! text; the `cmd_*` wrappers write it to the configured paths.

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use softmax_lab_core::estimators::Method;
use softmax_lab_core::experiments::{
    default_alphas, generate_synthetic, run_alpha_sweep, run_comparison, run_variance_study, Clock,
    LearningRate, MethodSpec, NoClock, SyntheticProblem, VarianceStudyConfig,
};
use softmax_lab_core::metrics::MetricsTrace;

use crate::config::RunConfig;
use crate::formats::{
    format_dataset, format_metrics_csv, format_params, format_variance_csv, read_dataset, read_params,
    write_text, Table,
};
use crate::plot;

pub const GEN_DATA_KEYS: &[&str] = &["n", "d", "c", "seed", "data", "params"];

pub const COMPARE_KEYS: &[&str] = &[
    "data",
    "params",
    "out",
    "methods",
    "k",
    "positive_set_mode",
    "alpha",
    "proposal_power",
    "noise_power",
    "blackout_power",
    "nce_z",
    "smoothing",
    "lr",
    "comparator_lr",
    "momentum",
    "minibatch",
    "iterations",
    "eval_every",
    "pilot_iterations",
    "sparse_update",
    "seed",
    "wallclock",
];

pub const ALPHA_SWEEP_KEYS: &[&str] = &[
    "data",
    "params",
    "out",
    "alphas",
    "k",
    "positive_set_mode",
    "smoothing",
    "lr",
    "comparator_lr",
    "momentum",
    "minibatch",
    "iterations",
    "eval_every",
    "pilot_iterations",
    "sparse_update",
    "seed",
    "wallclock",
];

pub const VARIANCE_KEYS: &[&str] = &["c", "f", "trials", "seed", "log_scale", "out"];

pub const PLOT_KEYS: &[&str] = &["input", "out", "metrics"];

/// Milliseconds since construction.
#[derive(Debug, Clone, Copy)]
pub struct WallClock(Instant);

impl WallClock {
    pub fn start() -> Self {
        WallClock(Instant::now())
    }
}

impl Clock for WallClock {
    fn now_ms(&self) -> u64 {
        self.0.elapsed().as_millis() as u64
    }
}

/// Text output of a training command.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub csv: String,
    pub traces: Vec<MetricsTrace>,
}

impl Report {
    /// Labels of runs that stopped on non-finite values.
    pub fn diverged(&self) -> Vec<&str> {
        self.traces.iter().filter(|t| t.diverged).map(|t| t.method.as_str()).collect()
    }
}

pub fn run_gen_data(cfg: &RunConfig) -> Result<(String, String)> {
    let problem = generate_synthetic(cfg.count("n")?, cfg.count("d")?, cfg.count("c")?, cfg.seed()?)?;
    Ok((format_dataset(&problem.data), format_params(&problem.true_params)))
}

pub fn cmd_gen_data(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let (data, params) = run_gen_data(cfg)?;
    let (data_path, params_path) = cfg.data_paths();
    write_text(&data_path, &data)?;
    write_text(&params_path, &params)?;
    Ok(vec![data_path, params_path])
}

pub fn load_problem(cfg: &RunConfig) -> Result<SyntheticProblem> {
    let (data_path, params_path) = cfg.data_paths();
    let data = read_dataset(&data_path)?;
    let true_params = read_params(&params_path)?;
    if true_params.classes() != data.classes() || true_params.dim() != data.dim() {
        bail!(
            "{} holds {}x{} parameters but the dataset has C={} and D={}",
            params_path.display(),
            true_params.classes(),
            true_params.dim(),
            data.classes(),
            data.dim()
        );
    }
    Ok(SyntheticProblem {
        true_params,
        data,
        gen_seed: cfg.seed()?,
    })
}

fn metadata(
    command: &str,
    cfg: &RunConfig,
    keys: &[&str],
    problem: &SyntheticProblem,
    traces: &[MetricsTrace],
) -> Vec<(String, String)> {
    let mut meta = vec![
        ("command".to_string(), command.to_string()),
        ("n".to_string(), problem.data.len().to_string()),
        ("d".to_string(), problem.data.dim().to_string()),
        ("c".to_string(), problem.data.classes().to_string()),
    ];
    meta.extend(cfg.effective(keys).into_iter().filter(|(k, _)| k != "out"));
    for t in traces {
        meta.push((format!("lr[{}]", t.method), t.learning_rate.to_string()));
        if t.diverged {
            meta.push((format!("diverged[{}]", t.method), "true".to_string()));
        }
        if t.empty_draws > 0 {
            meta.push((format!("empty_draws[{}]", t.method), t.empty_draws.to_string()));
        }
    }
    meta
}

fn clock(cfg: &RunConfig) -> Result<Box<dyn Clock>> {
    Ok(if cfg.flag("wallclock")? {
        Box::new(WallClock::start())
    } else {
        Box::new(NoClock)
    })
}

pub fn method_specs(cfg: &RunConfig) -> Result<Vec<MethodSpec>> {
    let lr = cfg.real("lr")?;
    let comparator = cfg.comparator_rate()?;
    cfg.methods()?
        .into_iter()
        .map(|m| {
            let spec = MethodSpec::new(cfg.estimator(m)?, lr);
            Ok(match (&spec.learning_rate, &comparator) {
                (LearningRate::Search, LearningRate::Fixed(v)) => spec.with_learning_rate(LearningRate::Fixed(*v)),
                _ => spec,
            })
        })
        .collect()
}

pub fn run_compare(cfg: &RunConfig, problem: &SyntheticProblem) -> Result<Report> {
    let trainer = cfg.trainer()?;
    trainer.validate(problem.data.len())?;
    let methods = method_specs(cfg)?;
    let traces = run_comparison(problem, &methods, &trainer, &cfg.harness()?, clock(cfg)?.as_ref())?;
    let csv = format_metrics_csv(&metadata("compare", cfg, COMPARE_KEYS, problem, &traces), &traces)?;
    Ok(Report { csv, traces })
}

pub fn alphas(cfg: &RunConfig, classes: usize) -> Result<Vec<f64>> {
    let alphas = cfg.reals("alphas")?.unwrap_or_else(|| default_alphas(classes));
    if let Some(a) = alphas.iter().find(|a| **a <= 0.0) {
        bail!("ranking margins must be > 0, got {a}");
    }
    Ok(alphas)
}

pub fn run_sweep(cfg: &RunConfig, problem: &SyntheticProblem) -> Result<Report> {
    let trainer = cfg.trainer()?;
    trainer.validate(problem.data.len())?;
    let alphas = alphas(cfg, problem.data.classes())?;
    let mut meta_cfg = cfg.clone();
    if !cfg.is_set("alphas") {
        let text: Vec<String> = alphas.iter().map(f64::to_string).collect();
        meta_cfg.set("alphas", &text.join(","))?;
    }
    let base = cfg.estimator(Method::Ranking)?;
    let traces = run_alpha_sweep(problem, &alphas, &base, &trainer, &cfg.harness()?, clock(cfg)?.as_ref())?;
    let csv = format_metrics_csv(
        &metadata("alpha-sweep", &meta_cfg, ALPHA_SWEEP_KEYS, problem, &traces),
        &traces,
    )?;
    Ok(Report { csv, traces })
}

pub fn cmd_compare(cfg: &RunConfig) -> Result<Report> {
    let report = run_compare(cfg, &load_problem(cfg)?)?;
    write_text(&cfg.path_or("out", "results.csv"), &report.csv)?;
    Ok(report)
}

pub fn cmd_alpha_sweep(cfg: &RunConfig) -> Result<Report> {
    let report = run_sweep(cfg, &load_problem(cfg)?)?;
    write_text(&cfg.path_or("out", "alpha_sweep.csv"), &report.csv)?;
    Ok(report)
}

pub fn variance_config(cfg: &RunConfig) -> Result<VarianceStudyConfig> {
    let mut study = VarianceStudyConfig::new(cfg.count("c")?, cfg.real("f")?, cfg.count("trials")? as u64, cfg.seed()?);
    study.log_scale = cfg.real("log_scale")?;
    study.validate()?;
    Ok(study)
}

pub fn run_variance(cfg: &RunConfig) -> Result<String> {
    let study = variance_config(cfg)?;
    let rows = run_variance_study(&study)?;
    let mut meta = vec![("command".to_string(), "variance-study".to_string())];
    meta.extend(cfg.effective(VARIANCE_KEYS).into_iter().filter(|(k, _)| k != "out"));
    meta.push(("samples".to_string(), study.samples().to_string()));
    format_variance_csv(&meta, &rows)
}

pub fn cmd_variance_study(cfg: &RunConfig) -> Result<PathBuf> {
    let csv = run_variance(cfg)?;
    let out = cfg.path_or("out", "variance.csv");
    write_text(&out, &csv)?;
    Ok(out)
}

/// `(metric, svg)` for each requested metric.
pub fn run_plot(cfg: &RunConfig, table: &Table) -> Result<Vec<(String, String)>> {
    cfg.metrics()?
        .into_iter()
        .map(|m| {
            let series = plot::series(table, &m)?;
            let svg = plot::render(&series, &m);
            Ok((m, svg))
        })
        .collect()
}

pub fn cmd_plot(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let input = cfg.path("input").context("missing required setting 'input'")?;
    let table = Table::read(&input)?;
    let dir = cfg.path_or("out", ".");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut written = Vec::new();
    for (metric, svg) in run_plot(cfg, &table)? {
        let path = dir.join(format!("{metric}.svg"));
        write_text(&path, &svg)?;
        written.push(path);
    }
    Ok(written)
}
