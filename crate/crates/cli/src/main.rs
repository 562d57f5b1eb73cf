//! Command-line driver: one subcommand per registered experiment.
//!
//! Settings come from the experiment defaults, then `--config FILE`, then
//! positional `key=value` overrides, then `--key value` flags. The resolved
//! settings are written to `config.txt` next to the artifacts.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};
use dpnn::experiments::{experiments, Experiment, Outcome};
use dpnn::{Error, Params};

const EXIT_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;

fn command() -> Command {
    let mut cmd = Command::new("dpnn")
        .about("Networks with piecewise-polynomial links: experiments and checks")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true);
    let registry = experiments();
    for name in registry.names() {
        let exp = registry.create(name, &Params::new()).expect("registered experiments build");
        cmd = cmd.subcommand(experiment_command(exp.as_ref()));
    }
    cmd
}

fn experiment_command(exp: &dyn Experiment) -> Command {
    let defaults = exp.defaults();
    let mut cmd = Command::new(exp.name())
        .about(exp.about())
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .value_parser(clap::value_parser!(PathBuf))
                .help("read key = value settings from FILE"),
        )
        .arg(
            Arg::new("out")
                .long("out")
                .value_name("DIR")
                .value_parser(clap::value_parser!(PathBuf))
                .help("output directory [default: out/<experiment>]"),
        )
        .arg(
            Arg::new("seed")
                .long("seed")
                .value_name("N")
                .value_parser(clap::value_parser!(u64))
                .help("seed for every random choice of the run"),
        )
        .arg(
            Arg::new("overrides")
                .value_name("KEY=VALUE")
                .action(ArgAction::Append)
                .help("setting overrides"),
        );
    for key in defaults.keys().filter(|&k| k != "seed") {
        let default = defaults.get(key).unwrap_or_default();
        cmd = cmd.arg(
            Arg::new(key.to_owned())
                .long(key.to_owned())
                .value_name("VALUE")
                .help(format!("[default: {default}]")),
        );
    }
    cmd
}

/// Overrides in precedence order, not yet checked against the defaults.
fn collect_overrides(exp: &dyn Experiment, m: &ArgMatches) -> dpnn::Result<Params> {
    let mut p = match m.get_one::<PathBuf>("config") {
        Some(path) => Params::load(path)?,
        None => Params::new(),
    };
    for raw in m.get_many::<String>("overrides").into_iter().flatten() {
        let (k, v) = Params::parse_override(raw)?;
        p.set(k, v);
    }
    for key in exp.defaults().keys().filter(|&k| k != "seed") {
        if let Some(v) = m.get_one::<String>(key) {
            p.set(key, v);
        }
    }
    if let Some(seed) = m.get_one::<u64>("seed") {
        if exp.defaults().contains("seed") {
            p.set("seed", seed);
        }
    }
    Ok(p)
}

fn write_outputs(dir: &Path, params: &Params, outcome: &Outcome) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.txt"), params.to_string())?;
    for a in &outcome.artifacts {
        std::fs::write(dir.join(&a.name), &a.contents)?;
    }
    Ok(())
}

fn error_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Data(_) | Error::Checkpoint(_) => EXIT_IO,
        _ => EXIT_USAGE,
    }
}

fn run(name: &str, m: &ArgMatches) -> Result<bool, u8> {
    let exp = experiments().create(name, &Params::new()).map_err(|e| {
        eprintln!("error: {e}");
        EXIT_USAGE
    })?;
    let report = |e: Error| {
        eprintln!("error: {e}");
        error_code(&e)
    };
    let params = collect_overrides(exp.as_ref(), m)
        .and_then(|p| exp.resolve(&p))
        .map_err(report)?;
    let outcome = exp.run(&params).map_err(report)?;
    let dir = m
        .get_one::<PathBuf>("out")
        .cloned()
        .unwrap_or_else(|| Path::new("out").join(name));
    write_outputs(&dir, &params, &outcome).map_err(|e| {
        eprintln!("error: writing outputs to {}: {e}", dir.display());
        EXIT_IO
    })?;
    print!("{}", outcome.summary);
    println!("outputs written to {}", dir.display());
    Ok(outcome.passed)
}

fn main() -> ExitCode {
    let matches = command().get_matches();
    let (name, sub) = matches.subcommand().expect("a subcommand is required");
    match run(name, sub) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("{name}: criteria not met");
            ExitCode::from(EXIT_FAILED)
        }
        Err(code) => ExitCode::from(code),
    }
}
