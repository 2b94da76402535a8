//! Command-line experiment runner.
//!
//! ```text
//! stackeq run <config.toml> [--out DIR] [--seed N] [--iterations N]
//! stackeq validate <config.toml>
//! stackeq oracle <config.toml> [--out DIR]
//! ```

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use stackeq::runner::{self, RunConfig};

const USAGE: &str = "usage:
  stackeq run <config.toml> [--out DIR] [--seed N] [--iterations N]
  stackeq validate <config.toml>
  stackeq oracle <config.toml> [--out DIR]";

struct Cli {
    command: String,
    config_path: PathBuf,
    out: Option<PathBuf>,
    seed: Option<u64>,
    iterations: Option<usize>,
}

fn parse_args(mut args: Vec<String>) -> Result<Cli, String> {
    if args.len() < 2 {
        return Err(USAGE.into());
    }
    let command = args.remove(0);
    if !matches!(command.as_str(), "run" | "validate" | "oracle") {
        return Err(format!("unknown command {command}\n{USAGE}"));
    }
    let config_path = PathBuf::from(args.remove(0));
    let mut cli = Cli { command, config_path, out: None, seed: None, iterations: None };
    let mut it = args.into_iter();
    while let Some(flag) = it.next() {
        let mut value = |name: &str| {
            it.next().ok_or_else(|| format!("{name} expects a value\n{USAGE}"))
        };
        match flag.as_str() {
            "--out" => cli.out = Some(PathBuf::from(value("--out")?)),
            "--seed" => {
                cli.seed =
                    Some(value("--seed")?.parse().map_err(|e| format!("--seed: {e}"))?)
            }
            "--iterations" => {
                cli.iterations = Some(
                    value("--iterations")?.parse().map_err(|e| format!("--iterations: {e}"))?,
                )
            }
            other => return Err(format!("unknown flag {other}\n{USAGE}")),
        }
    }
    Ok(cli)
}

fn out_dir(cli: &Cli, config: &RunConfig) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| {
            config
                .output
                .as_ref()
                .and_then(|o| o.dir.as_ref())
                .map(PathBuf::from)
        })
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn execute(cli: Cli) -> Result<(), String> {
    let mut config = RunConfig::from_file(Path::new(&cli.config_path))
        .map_err(|e| format!("{{\"error\": \"{e}\"}}"))?;
    if let Some(seed) = cli.seed {
        config.run.seed = seed;
    }
    if let Some(iterations) = cli.iterations {
        config.run.iterations = iterations;
    }
    match cli.command.as_str() {
        "validate" => {
            let report = runner::validate(&config);
            print!("{}", report.render());
            if report.passed() {
                Ok(())
            } else {
                Err("{\"error\": \"validation failed\"}".into())
            }
        }
        "run" | "oracle" => {
            if cli.command == "oracle" {
                config.run.algorithm = "oracle_only".into();
            }
            let dir = out_dir(&cli, &config);
            let artifacts = runner::run(&config, &dir)
                .map_err(|e| format!("{{\"error\": \"{e}\"}}"))?;
            println!("summary: {}", artifacts.summary_path.display());
            if let Some(trace) = &artifacts.trace_path {
                println!("trace:   {}", trace.display());
            }
            let oracle = &artifacts.summary["oracle"];
            println!(
                "oracle equilibrium: sigma = {}, fixed-point residual = {}",
                oracle["sigma_star"], oracle["fixed_point_residual"]
            );
            if let Some(err_x) = artifacts.summary["final_errors"]["err_x"].as_f64() {
                println!("final action error: {err_x:e}");
            }
            Ok(())
        }
        other => Err(format!("unknown command {other}\n{USAGE}")),
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match parse_args(args).and_then(execute) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("{message}");
            ExitCode::FAILURE
        }
    }
}
