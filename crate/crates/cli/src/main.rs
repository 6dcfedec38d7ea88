use std::collections::{HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use capsim::analysis::{self, Bracket, SweepGrid, MIN_CAP_HEADER};
use capsim::engine::{results_row, RESULTS_HEADER};
use capsim::trace::{CsvTraceWriter, TraceSink};
use capsim::ScenarioConfig;
use clap::{Args, Parser, Subcommand};

mod config;

use config::{load_config, Config};

#[derive(Parser)]
#[command(name = "capsim", version, about = "Battery-less LoRaWAN device simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write metrics.csv.
    Run(Common),
    /// Like `run`, plus voltage_trace.csv.
    Trace(Common),
    /// Solve the minimum-capacitance table into min_capacitance.csv.
    Mincap(Common),
    /// Run the success-probability grid into sweep.csv, resuming if it exists.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override a key, as `section.key=value` or `key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

impl Common {
    fn prepare(&self) -> Result<Config> {
        let config = load_config(&self.config, &self.overrides)?;
        fs::create_dir_all(&self.out)
            .with_context(|| format!("cannot create output directory {}", self.out.display()))?;
        write_file(&self.out.join("config.toml"), &config.to_toml())?;
        Ok(config)
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn run_one(scenario: &ScenarioConfig, out: &Path, with_trace: bool) -> Result<()> {
    let output = capsim::run(scenario)?;
    let m = &output.metrics;
    write_file(
        &out.join("metrics.csv"),
        &format!("{RESULTS_HEADER}\n{}\n", results_row(scenario, m)),
    )?;
    if with_trace {
        let path = out.join("voltage_trace.csv");
        let file = File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
        let mut writer = CsvTraceWriter::new(BufWriter::new(file))?;
        for rec in output.trace.as_deref().unwrap_or_default() {
            writer.record(*rec)?;
        }
        writer.into_inner()?;
    }
    if let Some(reason) = &m.abort_reason {
        bail!("run aborted at {:.3} s: {reason}", m.simulated.as_secs_f64());
    }
    Ok(())
}

fn mincap(config: &Config, out: &Path) -> Result<()> {
    let rows = analysis::min_capacitance_table(&config.mincap, &config.scenario(), Bracket::default())?;
    let mut text = format!("{MIN_CAP_HEADER}\n");
    for row in rows {
        text.push_str(&format!("{row}\n"));
    }
    write_file(&out.join("min_capacitance.csv"), &text)
}

/// Rows of an existing sweep file, keyed by grid coordinates.
fn existing_rows(path: &Path) -> Result<HashMap<String, String>> {
    if !path.exists() {
        return Ok(HashMap::new());
    }
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == RESULTS_HEADER => {}
        _ => bail!("{} exists but is not a sweep table", path.display()),
    }
    Ok(lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| (analysis::row_key(l), l.to_string()))
        .collect())
}

fn sweep(config: &Config, out: &Path) -> Result<()> {
    let base = config.scenario();
    let grid = &config.sweep;
    let path = out.join("sweep.csv");
    let mut rows = existing_rows(&path)?;
    if rows.is_empty() {
        write_file(&path, &format!("{RESULTS_HEADER}\n"))?;
    }
    let done: HashSet<String> = rows.keys().cloned().collect();
    let mut failures = 0usize;

    // One capacitance column at a time, appended as it finishes, so an
    // interrupted sweep keeps what it already computed.
    for &confirmed in &grid.confirmed {
        for &dr in &grid.data_rates {
            for &period in &grid.periods {
                for &power in &grid.powers {
                    let column = SweepGrid {
                        capacitances: grid.capacitances.clone(),
                        powers: vec![power],
                        data_rates: vec![dr],
                        periods: vec![period],
                        confirmed: vec![confirmed],
                    };
                    let new = analysis::sweep(&column, &base, &done);
                    if new.is_empty() {
                        continue;
                    }
                    let mut file = OpenOptions::new()
                        .append(true)
                        .open(&path)
                        .with_context(|| format!("cannot append to {}", path.display()))?;
                    for row in new {
                        if let Some(err) = &row.error {
                            failures += 1;
                            eprintln!("capsim: grid point {}: {err}", row.key);
                        }
                        writeln!(file, "{}", row.line)?;
                        rows.insert(row.key, row.line);
                    }
                }
            }
        }
    }

    // Rewrite in grid order so the file does not depend on resume history.
    let mut text = format!("{RESULTS_HEADER}\n");
    for cfg in grid.scenarios(&base) {
        let key = analysis::row_key(&results_row(&cfg, &Default::default()));
        if let Some(line) = rows.remove(&key) {
            text.push_str(&line);
            text.push('\n');
        }
    }
    write_file(&path, &text)?;
    if failures > 0 {
        bail!("{failures} grid point(s) failed, see messages above");
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(c) => {
            let config = c.prepare()?;
            run_one(&config.scenario(), &c.out, false)
        }
        Command::Trace(c) => {
            let config = c.prepare()?;
            let mut scenario = config.scenario();
            scenario.trace.voltage = true;
            run_one(&scenario, &c.out, true)
        }
        Command::Mincap(c) => {
            let config = c.prepare()?;
            mincap(&config, &c.out)
        }
        Command::Sweep(c) => {
            let config = c.prepare()?;
            sweep(&config, &c.out)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("capsim: {e:#}");
            ExitCode::FAILURE
        }
    }
}
