// SPDX-License-Identifier: Apache-2.0

//! `dagbft`: run catalog or file scenarios over seed sweeps, drive the
//! acceptance suite and turn metrics files into plot tables.

mod seeds;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use dagbft::acceptance;
use dagbft::metrics::{self, Aggregate, Metrics};
use dagbft::scenario::{self, Scenario};
use dagbft::simnet::Sim;
use dagbft::types::{Mode, Time};

#[derive(Parser)]
#[command(name = "dagbft", version, about = "Deterministic DAG BFT simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the built-in scenarios.
    List,
    /// Print a scenario as TOML, as a starting point for a config file.
    Show { scenario: String },
    /// Run a scenario over a set of seeds and write one metrics file per seed
    /// plus an aggregate. Exits nonzero if any in-run assertion fails.
    Run(RunArgs),
    /// Run acceptance criteria by suite name or number (default: all).
    Acceptance {
        /// all, fast-path, safety, liveness, quorum-math, guard,
        /// false-alarms, async, stake, or a criterion number 1-10.
        suites: Vec<String>,
    },
    /// Turn metrics files (or directories of them) into a tab-separated
    /// latency table, one row per scenario, mode and load.
    Plot {
        inputs: Vec<PathBuf>,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    /// Catalog name or path to a TOML scenario file.
    scenario: String,
    /// Seeds as `7`, `1,4,9`, `1..20` or `1..=20` (ranges are inclusive).
    /// Defaults to the scenario's own seed list.
    #[arg(long)]
    seeds: Option<String>,
    /// Output directory; files go to `<out>/<scenario>/`.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Virtual-time cutoff in microseconds.
    #[arg(long)]
    horizon: Option<Time>,
    /// Network delta in microseconds.
    #[arg(long)]
    delta: Option<Time>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    leaders_per_round: Option<u64>,
    /// Offered load in transactions per second; it changes block payloads
    /// but not virtual timing.
    #[arg(long)]
    load: Option<u64>,
    /// Also write the full run record for every seed.
    #[arg(long)]
    record: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Sync,
    Async,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Returns whether every check passed.
fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::List => {
            for s in scenario::catalog() {
                println!("{:<20} {}", s.name, s.description);
            }
            Ok(true)
        }
        Command::Show { scenario } => {
            print!("{}", load_scenario(&scenario)?.to_toml());
            Ok(true)
        }
        Command::Run(args) => run(args),
        Command::Acceptance { suites } => run_acceptance(&suites),
        Command::Plot { inputs, out } => {
            let table = metrics::emit_plot_data(&read_metrics(&inputs)?);
            match out {
                Some(path) => fs::write(&path, table).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{table}"),
            }
            Ok(true)
        }
    }
}

fn load_scenario(name: &str) -> Result<Scenario> {
    if let Some(s) = scenario::find(name) {
        return Ok(s);
    }
    let path = Path::new(name);
    if !path.exists() {
        bail!("unknown scenario {name:?}; see `dagbft list`");
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Scenario::from_toml(&text)?)
}

fn apply_overrides(mut sc: Scenario, args: &RunArgs) -> Scenario {
    if let Some(delta) = args.delta {
        sc = sc.with_delta(delta);
    }
    if let Some(mode) = args.mode {
        sc = sc.with_mode(match mode {
            ModeArg::Sync => Mode::PartialSync,
            ModeArg::Async => Mode::Async,
        });
    }
    if let Some(h) = args.horizon {
        sc.horizon = h;
    }
    if let Some(l) = args.leaders_per_round {
        sc.leaders_per_round = l;
    }
    if let Some(tx) = args.load {
        sc.load.tx_per_sec = tx;
    }
    sc
}

fn run(args: RunArgs) -> Result<bool> {
    let sc = apply_overrides(load_scenario(&args.scenario)?, &args);
    sc.validate()?;
    let seeds = match &args.seeds {
        Some(s) => seeds::parse(s)?,
        None if sc.seeds.is_empty() => vec![1],
        None => sc.seeds.clone(),
    };
    let dir = args.out.join(&sc.name);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;

    let results: Vec<(Metrics, Option<String>)> = seeds
        .par_iter()
        .map(|&seed| {
            let record = Sim::new(&sc, seed).expect("validated").run();
            let m = metrics::measure(&sc, &record);
            (m, args.record.then(|| record.to_text()))
        })
        .collect();

    for (m, record) in &results {
        write(&dir.join(format!("seed-{}.json", m.seed)), &m.to_text())?;
        if let Some(text) = record {
            write(&dir.join(format!("record-{}.json", m.seed)), text)?;
        }
        let status = if m.passed() { "ok" } else { "FAILED" };
        println!(
            "{} seed {}: {status} direct={} indirect={} skipped={} modal-latency={}{}",
            sc.name,
            m.seed,
            m.slots_direct_committed,
            m.slots_indirect,
            m.slots_skipped,
            m.modal_latency_rounds().map_or_else(|| "-".into(), |l| l.to_string()),
            m.blameset.as_ref().map_or_else(String::new, |b| {
                let members: Vec<String> = b.members.iter().map(ToString::to_string).collect();
                format!(" blameset={{{}}}", members.join(","))
            }),
        );
        for f in &m.failures {
            println!("  {f}");
        }
    }
    let runs: Vec<Metrics> = results.into_iter().map(|(m, _)| m).collect();
    let agg = Aggregate::of(&runs);
    write(&dir.join("aggregate.json"), &agg.to_text())?;
    println!("{}: {} runs, {} failed, output in {}", sc.name, agg.runs, agg.failed_runs.len(), dir.display());
    Ok(agg.failed_runs.is_empty())
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run_acceptance(suites: &[String]) -> Result<bool> {
    let mut ids = Vec::new();
    for s in suites {
        match acceptance::suite(s) {
            Some(more) => ids.extend(more),
            None => bail!("unknown acceptance suite {s:?}"),
        }
    }
    if ids.is_empty() {
        ids = acceptance::suite("all").expect("defined");
    }
    let reports = acceptance::run_selected(&ids);
    println!("{:<4} {:<34} {:<6} measured / bound", "id", "criterion", "result");
    for r in &reports {
        let verdict = if r.pass { "pass" } else { "FAIL" };
        println!("{:<4} {:<34} {:<6} {}", r.id, r.title, verdict, r.measured);
        println!("{:<46}bound: {}", "", r.bound);
    }
    Ok(reports.iter().all(|r| r.pass))
}

/// Metrics from files and from `seed-*.json` files inside directories.
fn read_metrics(inputs: &[PathBuf]) -> Result<Vec<Metrics>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .with_context(|| format!("reading {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("seed-") && n.ends_with(".json")))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    files
        .iter()
        .map(|f| {
            let text = fs::read_to_string(f).with_context(|| format!("reading {}", f.display()))?;
            Metrics::from_text(&text).with_context(|| f.display().to_string())
        })
        .collect()
}
