use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::error::ErrorKind;
use clap::{Arg, ArgMatches, Command};
use softmax_lab::commands::{self, Report};
use softmax_lab::config::{lookup, RunConfig};

const EXIT_USAGE: u8 = 1;
const EXIT_DIVERGED: u8 = 2;

fn subcommand(name: &'static str, about: &'static str, keys: &[&str]) -> Command {
    let mut cmd = Command::new(name).about(about).arg(
        Arg::new("config")
            .long("config")
            .value_name("PATH")
            .help("key=value file; explicit flags take precedence"),
    );
    for k in keys {
        let key = lookup(k).expect("flag names come from the key table");
        let mut help = key.help.to_string();
        if let Some(d) = key.default {
            help.push_str(&format!(" [default: {d}]"));
        }
        cmd = cmd.arg(
            Arg::new(key.name)
                .long(key.name.replace('_', "-"))
                .value_name("VALUE")
                .help(help),
        );
    }
    cmd
}

fn cli() -> Command {
    Command::new("softmax-lab")
        .about("Sampled softmax gradient estimators on synthetic realisable problems")
        .subcommand_required(true)
        .subcommand(subcommand(
            "gen-data",
            "Write a synthetic dataset and its true parameters",
            commands::GEN_DATA_KEYS,
        ))
        .subcommand(subcommand(
            "compare",
            "Train several methods on the same minibatch sequence",
            commands::COMPARE_KEYS,
        ))
        .subcommand(subcommand(
            "alpha-sweep",
            "Ranking runs over several margins plus an exact-gradient reference",
            commands::ALPHA_SWEEP_KEYS,
        ))
        .subcommand(subcommand(
            "variance-study",
            "Importance vs Bernoulli partition-function estimates at matched compute",
            commands::VARIANCE_KEYS,
        ))
        .subcommand(subcommand(
            "plot",
            "Render one SVG chart per metric from a results CSV",
            commands::PLOT_KEYS,
        ))
}

fn config(m: &ArgMatches, keys: &[&str]) -> Result<RunConfig> {
    let base = match m.get_one::<String>("config") {
        Some(p) => RunConfig::load(&PathBuf::from(p))?,
        None => RunConfig::new(),
    };
    let mut flags = RunConfig::new();
    for k in keys {
        if let Some(v) = m.get_one::<String>(k) {
            flags.set(k, v)?;
        }
    }
    Ok(base.overlay(&flags))
}

fn finish(report: Report, out: PathBuf) -> u8 {
    eprintln!("wrote {}", out.display());
    let diverged = report.diverged();
    if diverged.is_empty() {
        0
    } else {
        eprintln!("diverged: {}", diverged.join(", "));
        EXIT_DIVERGED
    }
}

fn run(m: &ArgMatches) -> Result<u8> {
    let (name, sub) = m.subcommand().expect("subcommand is required");
    Ok(match name {
        "gen-data" => {
            let cfg = config(sub, commands::GEN_DATA_KEYS)?;
            for p in commands::cmd_gen_data(&cfg)? {
                eprintln!("wrote {}", p.display());
            }
            0
        }
        "compare" => {
            let cfg = config(sub, commands::COMPARE_KEYS)?;
            let report = commands::cmd_compare(&cfg)?;
            finish(report, cfg.path_or("out", "results.csv"))
        }
        "alpha-sweep" => {
            let cfg = config(sub, commands::ALPHA_SWEEP_KEYS)?;
            let report = commands::cmd_alpha_sweep(&cfg)?;
            finish(report, cfg.path_or("out", "alpha_sweep.csv"))
        }
        "variance-study" => {
            let cfg = config(sub, commands::VARIANCE_KEYS)?;
            eprintln!("wrote {}", commands::cmd_variance_study(&cfg)?.display());
            0
        }
        "plot" => {
            let cfg = config(sub, commands::PLOT_KEYS)?;
            for p in commands::cmd_plot(&cfg)? {
                eprintln!("wrote {}", p.display());
            }
            0
        }
        other => unreachable!("unhandled subcommand {other}"),
    })
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match run(&matches) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}
