//! `hypobridge`: simulate paths, train scores, sample bridges, export score fields.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use hypobridge::config::KvConfig;
use hypobridge::Error;

mod commands;
mod output;
mod svg;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Verb {
    Simulate,
    Train,
    Bridge,
    Scoregrid,
}

#[derive(Debug, Parser)]
#[command(name = "hypobridge", version, about = "Hypoelliptic diffusion bridges with learned scores")]
struct Cli {
    verb: Verb,

    /// Flat `key = value` config file, or a manifest.json from an earlier run.
    #[arg(long)]
    config: PathBuf,

    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,

    /// Overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,

    /// Parameter file for `score = network`; overrides the config's `theta`.
    #[arg(long)]
    theta: Option<PathBuf>,

    /// Also write SVG plots (bridge and scoregrid).
    #[arg(long)]
    svg: bool,

    /// Only log warnings and errors.
    #[arg(long)]
    quiet: bool,
}

/// Read a config file, or the `config` block of a run manifest.
fn load_config(path: &Path) -> hypobridge::Result<KvConfig> {
    if path.extension().is_some_and(|e| e == "json") {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let v: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let entries = v
            .get("config")
            .and_then(|c| c.as_object())
            .ok_or_else(|| Error::Config(format!("{} has no `config` object", path.display())))?;
        let mut cfg = KvConfig::default();
        for (k, val) in entries {
            let s = val
                .as_str()
                .ok_or_else(|| Error::key(k.as_str(), "manifest values must be strings"))?;
            cfg.set(k, s);
        }
        return Ok(cfg);
    }
    KvConfig::from_file(path)
}

fn run(cli: &Cli) -> hypobridge::Result<()> {
    let mut cfg = load_config(&cli.config)?;
    if let Some(s) = cli.seed {
        cfg.set("seed", s.to_string());
    }
    if let Some(t) = &cli.theta {
        cfg.set("theta", t.display().to_string());
    }
    if cli.svg && matches!(cli.verb, Verb::Simulate | Verb::Train) {
        return Err(Error::Config("--svg applies to bridge and scoregrid only".into()));
    }
    match cli.verb {
        Verb::Simulate => commands::simulate(&cfg, &cli.out),
        Verb::Train => commands::train(&cfg, &cli.out),
        Verb::Bridge => commands::bridge(&cfg, &cli.out, cli.svg),
        Verb::Scoregrid => commands::scoregrid(&cfg, &cli.out, cli.svg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() {
                2
            } else if e.is_numerical() {
                3
            } else {
                1
            })
        }
    }
}
