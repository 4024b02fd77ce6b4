use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use fauras_core::metrics::{aggregate, render_comparison, MetricsReport, CSV_ROW_HEADER};
use fauras_core::scenario::output::{write_atomic, write_run_artifacts, OutputFormat};
use fauras_core::scenario::presets::{preset, PRESET_NAMES};
use fauras_core::{load_scenario, run_batch, Result, SimError, Strategy};

#[derive(Parser)]
#[command(name = "fauras", version, about = "Multi-client HTTP/2 push streaming simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write logs, reports and series.
    Run {
        /// Preset name or path to a TOML scenario file.
        #[arg(long)]
        scenario: String,
        /// no_proxy, reactive, proactive, fauras, or "all". Defaults to the scenario's.
        #[arg(long)]
        strategy: Option<String>,
        /// Base seed; repetition i uses seed + i.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        reps: Option<u32>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Side-by-side table of metric reports (JSON or CSV rows) from one scenario.
    Compare {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
    /// List built-in scenarios.
    Presets,
}

fn parse_strategies(s: &str) -> Result<Vec<Strategy>> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(Strategy::ALL.to_vec());
    }
    s.split(',').map(|p| p.trim().parse()).collect()
}

fn run(scenario: &str, strategy: Option<&str>, seed: Option<u64>, reps: Option<u32>, out: &Path, format: Format) -> Result<()> {
    let cfg = load_scenario(scenario)?;
    let strategies = match strategy {
        Some(s) => parse_strategies(s)?,
        None => vec![cfg.strategy],
    };
    let seed = seed.unwrap_or(cfg.seed);
    let reps = reps.unwrap_or(cfg.repetitions);
    let outcomes = run_batch(&cfg, &strategies, seed, reps)?;
    for o in &outcomes {
        let arts = write_run_artifacts(out, &o.log, &o.report, format.into())?;
        eprintln!("wrote {}", arts.metrics_report.display());
    }
    let reports: Vec<MetricsReport> = outcomes.into_iter().map(|o| o.report).collect();
    let aggs = aggregate(&reports)?;
    let summary = out.join(format!("{}_summary.json", cfg.name.replace(['/', ' '], "_")));
    let mut bytes = serde_json::to_vec_pretty(&aggs)?;
    bytes.push(b'\n');
    write_atomic(&summary, &bytes)?;
    print!("{}", render_comparison(&aggs));
    Ok(())
}

fn read_reports(path: &Path) -> Result<Vec<MetricsReport>> {
    let text = std::fs::read_to_string(path)?;
    if text.trim_start().starts_with('{') {
        return Ok(vec![serde_json::from_str(&text)?]);
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = rdr.headers()?.clone();
    if header.iter().ne(CSV_ROW_HEADER) {
        return Err(SimError::InvalidInput(format!("{}: not a metrics report", path.display())));
    }
    rdr.records().map(|r| MetricsReport::from_csv_record(&r?)).collect()
}

fn compare(paths: &[PathBuf]) -> Result<()> {
    let mut reports = Vec::new();
    for p in paths {
        reports.extend(read_reports(p)?);
    }
    if reports.len() < 2 {
        return Err(SimError::InvalidInput(format!("compare needs at least 2 reports, got {}", reports.len())));
    }
    print!("{}", render_comparison(&aggregate(&reports)?));
    Ok(())
}

fn presets() -> Result<()> {
    for name in PRESET_NAMES {
        let cfg = preset(name).expect("listed preset exists")?;
        println!("{name:<18} {}", cfg.description);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Run { scenario, strategy, seed, reps, out, format } => {
            run(scenario, strategy.as_deref(), *seed, *reps, out, *format)
        }
        Command::Compare { reports } => compare(reports),
        Command::Presets => presets(),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
