//! Run artifacts: event log, metrics report and plot-ready series, each
//! written atomically.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::{ClientId, EventKind, EventLog};
use crate::error::{Result, SimError};
use crate::metrics::{push_accounting_by_segment, MetricsReport, CSV_ROW_HEADER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    #[default]
    Json,
}

/// Writes `bytes` to a temporary file beside `path`, then renames it over
/// `path`, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| SimError::Io(e.error))?;
    Ok(())
}

/// Requested bitrate and buffer level of a client at each request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub time_s: f64,
    pub client_id: String,
    pub bitrate_kbps: u32,
    pub buffer_s: f64,
}

pub fn series_rows(log: &EventLog) -> Vec<SeriesRow> {
    let mut rows: Vec<SeriesRow> = Vec::new();
    for e in log.events() {
        let (Some(b), Some(buf)) = (e.detail.bitrate_kbps, e.detail.buffer_s) else { continue };
        let row = SeriesRow {
            time_s: e.time_s,
            client_id: log.client_name(e.client).to_string(),
            bitrate_kbps: b,
            buffer_s: buf,
        };
        match e.kind {
            EventKind::RequestSent => rows.push(row),
            EventKind::RequestRewritten => {
                if let Some(last) = rows.iter_mut().rev().find(|r| r.client_id == row.client_id) {
                    *last = row;
                }
            }
            _ => {}
        }
    }
    rows
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| SimError::Internal(e.to_string()))
}

pub fn write_series_csv(path: &Path, rows: &[SeriesRow]) -> Result<()> {
    write_atomic(path, &to_csv(rows)?)
}

pub fn read_series_csv(path: &Path) -> Result<Vec<SeriesRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(SimError::from)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountingRow {
    pub segment_index: u32,
    pub res_count: u32,
    pub pp_count: u32,
}

pub fn accounting_rows(log: &EventLog, client: ClientId) -> Vec<AccountingRow> {
    push_accounting_by_segment(log, client)
        .into_iter()
        .map(|(segment_index, (res_count, pp_count))| AccountingRow { segment_index, res_count, pp_count })
        .collect()
}

pub fn write_accounting_csv(path: &Path, rows: &[AccountingRow]) -> Result<()> {
    write_atomic(path, &to_csv(rows)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FairnessRow {
    pub time_s: f64,
    pub unfairness: f64,
}

pub fn fairness_rows(report: &MetricsReport) -> Vec<FairnessRow> {
    report.per_tick_fairness.iter().map(|&(time_s, unfairness)| FairnessRow { time_s, unfairness }).collect()
}

pub fn write_fairness_csv(path: &Path, rows: &[FairnessRow]) -> Result<()> {
    write_atomic(path, &to_csv(rows)?)
}

/// Paths written for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifacts {
    pub event_log: PathBuf,
    pub metrics_report: PathBuf,
    pub series: PathBuf,
    pub fairness: PathBuf,
    pub accounting: PathBuf,
}

/// Writes every artifact of one run under `dir`, named after scenario,
/// strategy and seed.
pub fn write_run_artifacts(dir: &Path, log: &EventLog, report: &MetricsReport, format: OutputFormat) -> Result<RunArtifacts> {
    let stem = format!("{}_{}_seed{}", report.scenario, report.strategy, report.seed).replace(['/', ' '], "_");
    let p = |suffix: &str| dir.join(format!("{stem}_{suffix}"));
    let arts = RunArtifacts {
        event_log: p("events.csv"),
        metrics_report: p(match format {
            OutputFormat::Json => "metrics.json",
            OutputFormat::Csv => "metrics.csv",
        }),
        series: p("series.csv"),
        fairness: p("fairness.csv"),
        accounting: p("accounting.csv"),
    };
    write_atomic(&arts.event_log, log.to_csv_string()?.as_bytes())?;
    let report_bytes = match format {
        OutputFormat::Json => {
            let mut v = serde_json::to_vec_pretty(report)?;
            v.push(b'\n');
            v
        }
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(CSV_ROW_HEADER)?;
            w.write_record(report.csv_row())?;
            w.into_inner().map_err(|e| SimError::Internal(e.to_string()))?
        }
    };
    write_atomic(&arts.metrics_report, &report_bytes)?;
    write_series_csv(&arts.series, &series_rows(log))?;
    write_fairness_csv(&arts.fairness, &fairness_rows(report))?;
    let focus = report
        .tracked_client
        .as_deref()
        .and_then(|n| log.client_by_name(n))
        .unwrap_or(ClientId(0));
    write_accounting_csv(&arts.accounting, &accounting_rows(log, focus))?;
    Ok(arts)
}
