//! Thin command-line harness over the crowdcharge library.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data/validation errors.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use crowdcharge::report::{
    parse_sweep_csv, sweep, sweep_markdown, write_ledger_csv, write_run_csv, write_sweep_csv,
    write_sweep_plots,
};
use crowdcharge::scenario::{generate_scenario, load_config, load_scenario, save_scenario};
use crowdcharge::sim::{run_with_trace, Policy};

#[derive(Parser)]
#[command(name = "crowdcharge", version, about = "Crowdsourced IoT energy sharing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario from a config file.
    Generate {
        /// Scenario config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output scenario file (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one policy over a scenario and write the per-request report.
    Run {
        /// Scenario file (JSON).
        #[arg(long)]
        scenario: PathBuf,
        /// reactive | proactive | bruteforce
        #[arg(long)]
        policy: String,
        #[arg(long)]
        seed: u64,
        /// Output report CSV.
        #[arg(long)]
        out: PathBuf,
        /// Also dump the transfer ledger CSV.
        #[arg(long)]
        ledger: Option<PathBuf>,
    },
    /// Run the ratio x policy x seed grid and write results.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Ratio axis: "a:b", "a:b:step" or a comma list; regime names
        /// scarce/average/high map to 1/3/6.
        #[arg(long)]
        ratios: String,
        /// Comma list of policies, or "all".
        #[arg(long, default_value = "all")]
        policies: String,
        /// Seeds per cell.
        #[arg(long)]
        seeds: u32,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a sweep results file as CSV or Markdown, optionally with plots.
    Report {
        /// results.csv or the directory containing it.
        #[arg(long = "in")]
        input: PathBuf,
        /// csv | md
        #[arg(long, default_value = "csv")]
        format: String,
        /// Also emit one SVG per metric.
        #[arg(long)]
        plot: bool,
    },
}

enum CliError {
    Usage(String),
    Data(String),
}

impl From<crowdcharge::Error> for CliError {
    fn from(e: crowdcharge::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are not usage errors.
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate { config, seed, out } => {
            let mut cfg = load_config(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let scenario = generate_scenario(&cfg)?;
            save_scenario(&scenario, &out)?;
            eprintln!(
                "wrote {} ({} users, {} microcells)",
                out.display(),
                scenario.users.len(),
                scenario.microcells.len()
            );
            Ok(())
        }
        Command::Run { scenario, policy, seed, out, ledger } => {
            let policy: Policy = policy.parse().map_err(CliError::Usage)?;
            let world = load_scenario(&scenario)?;
            let started = Instant::now();
            let (mut report, trace) = run_with_trace(&world, policy, seed)?;
            report.runtime_ms = started.elapsed().as_millis() as u64;
            write_run_csv(&report, BufWriter::new(File::create(&out)?))?;
            if let Some(path) = ledger {
                write_ledger_csv(&trace.ledger, BufWriter::new(File::create(&path)?))?;
            }
            eprintln!(
                "{policy}: {} requests, success ratio {:.3}, {:.3} Wh delivered ({} ms)",
                report.records.len(),
                report.success_ratio,
                report.total_delivered_wh,
                report.runtime_ms
            );
            Ok(())
        }
        Command::Sweep { config, ratios, policies, seeds, out } => {
            let ratios = parse_ratios(&ratios).map_err(CliError::Usage)?;
            let policies = parse_policies(&policies).map_err(CliError::Usage)?;
            if seeds == 0 {
                return Err(CliError::Usage("--seeds must be >= 1".into()));
            }
            let template = load_config(&config)?;
            let rows = sweep(&template, &ratios, &policies, seeds)?;
            std::fs::create_dir_all(&out)?;
            let path = out.join("results.csv");
            write_sweep_csv(&rows, BufWriter::new(File::create(&path)?))?;
            eprintln!("wrote {} ({} rows)", path.display(), rows.len());
            Ok(())
        }
        Command::Report { input, format, plot } => {
            let path = if input.is_dir() { input.join("results.csv") } else { input.clone() };
            let text = std::fs::read_to_string(&path)?;
            let rows = parse_sweep_csv(&text)?;
            if rows.is_empty() {
                return Err(CliError::Usage("results table is empty".into()));
            }
            let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
            match format.as_str() {
                "csv" => {
                    let out = dir.join("report.csv");
                    write_sweep_csv(&rows, BufWriter::new(File::create(&out)?))?;
                    eprintln!("wrote {}", out.display());
                }
                "md" => {
                    let out = dir.join("report.md");
                    std::fs::write(&out, sweep_markdown(&rows))?;
                    eprintln!("wrote {}", out.display());
                }
                other => {
                    return Err(CliError::Usage(format!("unknown format '{other}'")));
                }
            }
            if plot {
                for p in write_sweep_plots(&rows, &dir)? {
                    eprintln!("wrote {}", p.display());
                }
            }
            Ok(())
        }
    }
}

fn parse_ratios(spec: &str) -> Result<Vec<f64>, String> {
    let spec = spec.trim();
    if spec.is_empty() {
        return Err("empty ratio spec".into());
    }
    let named = |s: &str| -> Option<f64> {
        match s {
            "scarce" => Some(1.0),
            "average" => Some(3.0),
            "high" => Some(6.0),
            _ => None,
        }
    };
    // a:b or a:b:step
    if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() < 2 || parts.len() > 3 {
            return Err(format!("bad range '{spec}', expected a:b or a:b:step"));
        }
        let a: f64 = parts[0].parse().map_err(|_| format!("bad ratio '{}'", parts[0]))?;
        let b: f64 = parts[1].parse().map_err(|_| format!("bad ratio '{}'", parts[1]))?;
        let step: f64 = if parts.len() == 3 {
            parts[2].parse().map_err(|_| format!("bad step '{}'", parts[2]))?
        } else {
            1.0
        };
        if step <= 0.0 || b < a {
            return Err(format!("bad range '{spec}'"));
        }
        let mut out = Vec::new();
        let mut x = a;
        while x <= b + 1e-9 {
            out.push(x);
            x += step;
        }
        return Ok(out);
    }
    spec.split(',')
        .map(|s| {
            let s = s.trim();
            named(s)
                .map(Ok)
                .unwrap_or_else(|| s.parse::<f64>().map_err(|_| format!("bad ratio '{s}'")))
        })
        .collect::<Result<Vec<f64>, String>>()
        .and_then(|v| {
            if v.iter().any(|&r| r <= 0.0) {
                Err("ratios must be positive".into())
            } else {
                Ok(v)
            }
        })
}

fn parse_policies(spec: &str) -> Result<Vec<Policy>, String> {
    if spec.trim() == "all" {
        return Ok(Policy::ALL.to_vec());
    }
    spec.split(',').map(|s| s.trim().parse::<Policy>()).collect()
}
