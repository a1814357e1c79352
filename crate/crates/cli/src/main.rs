mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

pub const THREADS_ENV: &str = "FLOODSEG_THREADS";

/// Flood segmentation pipeline for multispectral scenes.
///
/// Every option of a subcommand may also be set from a `key = value` file
/// passed with --config; command-line flags take precedence.
#[derive(Debug, Parser)]
#[command(name = "floodseg", version, args_override_self = true)]
pub struct Cli {
    /// Worker threads (falls back to FLOODSEG_THREADS, then all cores). 1 is
    /// the bit-reproducible reference mode.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Plain-text `key = value` file with subcommand options.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labelled synthetic dataset.
    Synth(commands::SynthArgs),
    /// Block-average a scene (or a whole dataset) to a coarser resolution.
    Degrade(commands::DegradeArgs),
    /// Train a linear or SCNN model.
    Train(commands::TrainArgs),
    /// Segment one scene with a trained model.
    Infer(commands::InferArgs),
    /// Water precision/recall/IoU of a model or NDWI baseline on a dataset.
    Eval(commands::EvalArgs),
    /// Water-class precision-recall curve and 95%-recall operating point.
    PrCurve(commands::PrCurveArgs),
    /// NDWI classification of one scene, fixed or tuned threshold.
    Ndwi(commands::NdwiArgs),
    /// Pack a class mask into its 2-bit downlink payload.
    Pack(commands::PackArgs),
    /// Raw-band to flood-map downlink reduction factor.
    Bandwidth(commands::BandwidthArgs),
    /// Parameter and operation counts of a model.
    Flops(commands::FlopsArgs),
    /// Whole-scene inference throughput benchmark.
    Bench(commands::BenchArgs),
}

/// Prints every resolved option so a run can be repeated from its log.
fn log_resolved(matches: &clap::ArgMatches, threads: usize) {
    let Some((name, sub)) = matches.subcommand() else { return };
    eprintln!("# resolved config: {name}");
    eprintln!("threads = {threads}");
    let cli = Cli::command();
    let known: Vec<String> = cli
        .find_subcommand(name)
        .map(|c| c.get_arguments().map(|a| a.get_id().to_string()).collect())
        .unwrap_or_default();
    for id in sub.ids() {
        let key = id.as_str();
        if key == "threads" || key == "config" || !known.iter().any(|k| k == key) {
            continue;
        }
        if let Some(vals) = sub.get_raw(key) {
            let v: Vec<String> = vals.map(|v| v.to_string_lossy().into_owned()).collect();
            eprintln!("{} = {}", key.replace('_', "-"), v.join(","));
        }
    }
}

fn resolve_threads(flag: Option<usize>) -> Result<usize, String> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| format!("{THREADS_ENV} must be a positive integer, got {v:?}"))?,
            Err(_) => 0,
        },
    };
    Ok(n)
}

fn main() -> ExitCode {
    let args: Vec<OsString> = std::env::args_os().collect();
    let args = match config::splice(args) {
        Ok(a) => a,
        Err(config::ConfigError(msg)) => {
            eprintln!("error: usage: {msg}");
            return ExitCode::from(2);
        }
    };
    let matches = match Cli::command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => e.exit(),
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };

    let threads = match resolve_threads(cli.threads) {
        Ok(n) => n,
        Err(msg) => {
            eprintln!("error: usage: {msg}");
            return ExitCode::from(2);
        }
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
        eprintln!("error: usage: cannot start thread pool: {e}");
        return ExitCode::from(2);
    }
    log_resolved(&matches, rayon::current_num_threads());

    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {line}", e.kind());
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn later_flags_override_earlier_ones() {
        let cli = Cli::try_parse_from(["floodseg", "bandwidth", "--bands", "13", "--bands", "49"]).unwrap();
        match cli.command {
            Command::Bandwidth(b) => assert_eq!(b.bands, 49),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        let err = Cli::try_parse_from(["floodseg", "bandwidth", "--nope", "1"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
