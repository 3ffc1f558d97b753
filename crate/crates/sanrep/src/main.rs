//! Command-line interface: check, flatten, connectivity, simulate, bench.
//!
//! Exit codes: 0 success, 1 model or runtime error, 2 usage error.
//! Diagnostics go to standard error, data to standard output or `--out`
//! files. Every randomized command requires an explicit `--seed`.

use clap::{Parser, Subcommand};
use sanrep::bench::{run_bench, write_csv, BenchMode, BenchSpec, Topology};
use sanrep::compose::CompositionNode;
use sanrep::connectivity::{build_connectivity, connectivity_report};
use sanrep::flatten::flatten;
use sanrep::modelfile::{load, LoadedModel};
use sanrep::rewards::estimate;
use sanrep::sim::{simulate, write_trace, SimConfig, StopReason};
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "sanrep",
    version,
    about = "Stochastic activity network simulation with non-anonymous replication"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, validate, and flatten a model file.
    Check { file: PathBuf },
    /// Flatten a model and print the canonical tables.
    Flatten {
        file: PathBuf,
        /// Print the full variable and activity tables.
        #[arg(long)]
        dump: bool,
    },
    /// Build connectivity lists and report dependency-check counts.
    Connectivity {
        file: PathBuf,
        /// Print the summary report (default when --csv is absent).
        #[arg(long)]
        count: bool,
        /// Append one CSV row (header: model,n,mode,vars,activities,checks,build_ns).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run a discrete-event simulation.
    Simulate {
        file: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        max_events: Option<u64>,
        #[arg(long)]
        max_time: Option<f64>,
        /// Re-examine every activity after each event instead of the
        /// connectivity-affected set (equivalence oracle).
        #[arg(long)]
        oracle: bool,
        /// Write the event trace to this file.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Estimate this reward over --runs replications.
        #[arg(long)]
        reward: Option<String>,
        /// Replication count for --reward (seeds seed..seed+runs-1).
        #[arg(long, default_value_t = 2)]
        runs: u32,
    },
    /// Generate topology models and benchmark connectivity construction.
    Bench {
        /// ring | star | full
        #[arg(long)]
        topology: String,
        /// Ring neighbors per side.
        #[arg(long, default_value_t = 1)]
        k: u32,
        /// Comma-separated replication counts, e.g. 10,50,100,500.
        #[arg(long)]
        n: String,
        /// narep | rep | both
        #[arg(long, default_value = "both")]
        mode: String,
        #[arg(long, default_value_t = 5)]
        repeats: u32,
        /// Write CSV here instead of standard output.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn max_replication(node: &CompositionNode) -> u32 {
    match node {
        CompositionNode::Atomic(_) => 0,
        CompositionNode::Join { children, .. } => {
            children.iter().map(|(_, c)| max_replication(c)).max().unwrap_or(0)
        }
        CompositionNode::Rep { child, n, .. } | CompositionNode::NaRep { child, n, .. } => {
            (*n).max(max_replication(child))
        }
    }
}

/// Model and runtime failures exit 1; usage problems exit 2.
enum CmdError {
    Model(String),
    Usage(String),
}

impl From<sanrep::modelfile::LoadError> for CmdError {
    fn from(e: sanrep::modelfile::LoadError) -> Self {
        CmdError::Model(e.to_string())
    }
}

impl From<sanrep::flatten::FlattenError> for CmdError {
    fn from(e: sanrep::flatten::FlattenError) -> Self {
        CmdError::Model(e.to_string())
    }
}

impl From<sanrep::sim::SimError> for CmdError {
    fn from(e: sanrep::sim::SimError) -> Self {
        CmdError::Model(e.to_string())
    }
}

impl From<sanrep::rewards::RewardError> for CmdError {
    fn from(e: sanrep::rewards::RewardError) -> Self {
        CmdError::Model(e.to_string())
    }
}

impl From<std::io::Error> for CmdError {
    fn from(e: std::io::Error) -> Self {
        CmdError::Model(e.to_string())
    }
}

fn load_and_flatten(
    file: &std::path::Path,
) -> Result<(LoadedModel, sanrep::flatten::FlatModel), CmdError> {
    let loaded = load(file)?;
    let fm = flatten(&loaded.root, &loaded.root_label)?;
    Ok((loaded, fm))
}

fn run(cli: Cli) -> Result<(), CmdError> {
    match cli.command {
        Command::Check { file } => {
            load_and_flatten(&file)?;
            Ok(())
        }
        Command::Flatten { file, dump } => {
            let (_, fm) = load_and_flatten(&file)?;
            if dump {
                print!("{}", fm.dump());
            } else {
                println!("vars {} activities {}", fm.var_count(), fm.activities.len());
            }
            Ok(())
        }
        Command::Connectivity { file, count, csv } => {
            let (loaded, fm) = load_and_flatten(&file)?;
            let cl = build_connectivity(&fm);
            let report = connectivity_report(&fm, &cl);
            if count || csv.is_none() {
                // Deterministic fields only; timing lives in the CSV.
                println!(
                    "model={} vars={} activities={} checks={} density={:.6}",
                    loaded.name, report.vars, report.activities, report.checks, report.density
                );
            }
            match csv {
                None => {}
                Some(path) => {
                    let header_needed =
                        std::fs::metadata(&path).map(|m| m.len() == 0).unwrap_or(true);
                    let mut file =
                        std::fs::OpenOptions::new().create(true).append(true).open(&path)?;
                    if header_needed {
                        writeln!(file, "model,n,mode,vars,activities,checks,build_ns")?;
                    }
                    writeln!(
                        file,
                        "{},{},file,{},{},{},{}",
                        loaded.name,
                        max_replication(&loaded.root),
                        report.vars,
                        report.activities,
                        report.checks,
                        report.build_ns
                    )?;
                }
            }
            Ok(())
        }
        Command::Simulate { file, seed, max_events, max_time, oracle, trace, reward, runs } => {
            if max_events.is_none() && max_time.is_none() {
                return Err(CmdError::Usage(
                    "simulate needs --max-events or --max-time".to_string(),
                ));
            }
            let (loaded, fm) = load_and_flatten(&file)?;
            let cl = build_connectivity(&fm);
            let mut cfg = SimConfig::new(seed);
            cfg.stop_after_events = max_events;
            cfg.stop_at_time = max_time;
            if oracle {
                cfg = cfg.oracle();
            }
            match reward {
                Some(name) => {
                    if runs < 2 {
                        return Err(CmdError::Usage("--reward needs --runs >= 2".to_string()));
                    }
                    let rv = loaded
                        .rewards
                        .iter()
                        .find(|r| r.name == name)
                        .ok_or_else(|| CmdError::Model(format!("unknown reward `{name}`")))?;
                    let seeds: Vec<u64> = (0..runs as u64).map(|i| seed.wrapping_add(i)).collect();
                    let est = estimate(rv, &fm, &cl, &cfg, &seeds)?;
                    println!("{} {} {} {}", rv.name, est.mean, est.half_width95, est.runs);
                }
                None => {
                    let traj = simulate(&fm, &cl, &cfg)?;
                    if let Some(path) = trace {
                        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
                        write_trace(&fm, &traj, &mut out)?;
                        out.flush()?;
                    }
                    let status = match traj.status {
                        StopReason::EventLimit => "event-limit",
                        StopReason::TimeLimit => "time-limit",
                        StopReason::Absorbed => "absorbed",
                    };
                    println!(
                        "events={} end_time={} status={} draws={} reexaminations={}",
                        traj.events.len(),
                        traj.end_time,
                        status,
                        traj.draws,
                        traj.reexaminations
                    );
                }
            }
            Ok(())
        }
        Command::Bench { topology, k, n, mode, repeats, csv } => {
            let topology = match topology.as_str() {
                "ring" => Topology::Ring { k },
                "star" => Topology::Star,
                "full" => Topology::Full,
                other => return Err(CmdError::Usage(format!("unknown topology `{other}`"))),
            };
            let modes = match mode.as_str() {
                "narep" => vec![BenchMode::Narep],
                "rep" | "rep-emulated" => vec![BenchMode::RepEmulated],
                "both" => vec![BenchMode::Narep, BenchMode::RepEmulated],
                other => return Err(CmdError::Usage(format!("unknown mode `{other}`"))),
            };
            let n_list: Vec<u32> = n
                .split(',')
                .map(|s| s.trim().parse::<u32>())
                .collect::<Result<_, _>>()
                .map_err(|e| CmdError::Usage(format!("bad --n list: {e}")))?;
            let spec = BenchSpec { topology, n_list, modes, repeats };
            let rows = run_bench(&spec).map_err(|e| CmdError::Model(e.to_string()))?;
            match csv {
                None => {
                    let mut out = std::io::stdout().lock();
                    write_csv(&rows, &mut out)?;
                }
                Some(path) => {
                    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
                    write_csv(&rows, &mut file)?;
                    file.flush()?;
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::try_parse().unwrap_or_else(|e| e.exit());
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CmdError::Model(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
        Err(CmdError::Usage(message)) => {
            eprintln!("usage error: {message}");
            ExitCode::from(2)
        }
    }
}
