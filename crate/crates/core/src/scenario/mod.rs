//! Scenario files, built-in presets and run orchestration.

pub mod output;
pub mod presets;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::client::{AbrMode, AbrParams, ClientConfig};
use crate::engine::{ClientId, EventLog};
use crate::error::{Result, SimError};
use crate::media::{BitrateLadder, Kbps, DEFAULT_RATES_KBPS, DEFAULT_SEGMENT_DURATION_S, DEFAULT_TOTAL_SEGMENTS};
use crate::metrics::{compute_report, MetricsReport, MetricsSpec};
use crate::proxy::{ProxyConfig, SliceStep, Strategy};
use crate::sim::{self, ClientSpec, JoinRule, SimSetup};

pub use output::{
    accounting_rows, fairness_rows, read_series_csv, series_rows, write_accounting_csv, write_atomic,
    write_fairness_csv, write_run_artifacts, write_series_csv, AccountingRow, FairnessRow, OutputFormat,
    RunArtifacts, SeriesRow,
};
pub use presets::{preset, PRESET_NAMES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderConfig {
    pub rates_kbps: Vec<Kbps>,
    pub segment_duration_s: f64,
    pub total_segments: u32,
}

impl Default for LadderConfig {
    fn default() -> Self {
        Self {
            rates_kbps: DEFAULT_RATES_KBPS.to_vec(),
            segment_duration_s: DEFAULT_SEGMENT_DURATION_S,
            total_segments: DEFAULT_TOTAL_SEGMENTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AbrConfig {
    pub window: usize,
    pub alpha: f64,
    pub up_hold: u32,
    /// Defaults to two segment durations.
    pub startup_threshold_s: Option<f64>,
    pub resume_threshold_s: Option<f64>,
    /// Pin every decision to this rate instead of adapting.
    pub fixed_kbps: Option<Kbps>,
}

impl Default for AbrConfig {
    fn default() -> Self {
        let p = AbrParams::default();
        Self {
            window: p.window,
            alpha: p.alpha,
            up_hold: p.up_hold,
            startup_threshold_s: None,
            resume_threshold_s: None,
            fixed_kbps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProxyOptions {
    /// Rewrite every request to this rate (diagnostic).
    pub blanket_rewrite_kbps: Option<Kbps>,
    /// Send the overwrite notice on FAURAS rewrites.
    pub notices: bool,
}

impl Default for ProxyOptions {
    fn default() -> Self {
        Self { blanket_rewrite_kbps: None, notices: true }
    }
}

/// Exactly one of `at_s` or the `after_client` + `after_segments` pair.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JoinSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub after_client: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub after_segments: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientEntry {
    pub id: String,
    #[serde(default)]
    pub join: JoinSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub client: String,
    pub after_segments: u32,
    pub slice_kbps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub tracked_client: Option<String>,
    pub window_from_join_of: Option<String>,
    pub avg_window: [u32; 2],
    /// Defaults to the segment duration.
    pub tick_s: Option<f64>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { tracked_client: None, window_from_join_of: None, avg_window: [100, 200], tick_s: None }
    }
}

fn default_capacity() -> f64 {
    3000.0
}
fn default_k() -> u32 {
    2
}
fn default_buffer_max() -> f64 {
    10.0
}
fn default_rtt() -> f64 {
    0.05
}
fn default_strategy() -> Strategy {
    Strategy::Fauras
}
fn default_repetitions() -> u32 {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub ladder: LadderConfig,
    #[serde(default = "default_capacity")]
    pub capacity_kbps: f64,
    #[serde(default = "default_k")]
    pub k: u32,
    #[serde(default = "default_buffer_max")]
    pub buffer_max_s: f64,
    #[serde(default = "default_rtt")]
    pub base_rtt_s: f64,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_repetitions")]
    pub repetitions: u32,
    #[serde(default)]
    pub abr: AbrConfig,
    #[serde(default)]
    pub proxy: ProxyOptions,
    pub clients: Vec<ClientEntry>,
    #[serde(default)]
    pub bandwidth_schedule: Vec<ScheduleEntry>,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

/// 1-based line of the first occurrence of `needle`, for error messages.
fn line_of(src: &str, needle: &str) -> Option<usize> {
    src.lines().position(|l| l.contains(needle)).map(|i| i + 1)
}

impl ScenarioConfig {
    /// Parses TOML text; `origin` names the source in errors.
    pub fn from_toml_str(src: &str, origin: &Path) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(src).map_err(|e| SimError::Scenario {
            path: origin.to_path_buf(),
            message: e.to_string().trim_end().to_string(),
        })?;
        cfg.validate().map_err(|(needle, message)| {
            let at = needle
                .and_then(|n| line_of(src, &n))
                .map(|l| format!("line {l}: "))
                .unwrap_or_default();
            SimError::Scenario { path: origin.to_path_buf(), message: format!("{at}{message}") }
        })?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| SimError::Internal(format!("scenario serialization failed: {e}")))
    }

    pub fn ladder(&self) -> Result<BitrateLadder> {
        BitrateLadder::new(self.ladder.rates_kbps.clone(), self.ladder.segment_duration_s, self.ladder.total_segments)
    }

    fn client_id(&self, name: &str) -> Option<ClientId> {
        self.clients.iter().position(|c| c.id == name).map(|i| ClientId(i as u32))
    }

    /// Checks every invariant. The error carries a text snippet to locate
    /// the offending line.
    fn validate(&self) -> std::result::Result<(), (Option<String>, String)> {
        let key = |k: &str| Some(k.to_string());
        let ladder = self.ladder().map_err(|e| (key("rates_kbps"), e.to_string()))?;
        if !(self.capacity_kbps > 0.0 && self.capacity_kbps.is_finite()) {
            return Err((key("capacity_kbps"), "capacity_kbps must be positive".into()));
        }
        if self.k == 0 {
            return Err((key("k ="), "k must be at least 1".into()));
        }
        if self.repetitions == 0 {
            return Err((key("repetitions"), "repetitions must be at least 1".into()));
        }
        if !(self.base_rtt_s >= 0.0 && self.base_rtt_s.is_finite()) {
            return Err((key("base_rtt_s"), "base_rtt_s must be non-negative".into()));
        }
        if self.clients.is_empty() {
            return Err((None, "at least one client is required".into()));
        }
        let mut seen = BTreeSet::new();
        for c in &self.clients {
            let here = Some(format!("\"{}\"", c.id));
            if !seen.insert(c.id.as_str()) {
                return Err((here, format!("duplicate client id {:?}", c.id)));
            }
            let j = &c.join;
            match (j.at_s, &j.after_client, j.after_segments) {
                (Some(t), None, None) => {
                    if !(t >= 0.0 && t.is_finite()) {
                        return Err((here, format!("client {:?} join time must be non-negative", c.id)));
                    }
                }
                (None, Some(other), Some(n)) => {
                    if self.client_id(other).is_none() || other == &c.id {
                        return Err((here, format!("client {:?} joins after unknown client {other:?}", c.id)));
                    }
                    if n == 0 || n > ladder.total_segments() {
                        return Err((
                            here,
                            format!("client {:?} join trigger {n} outside 1..={}", c.id, ladder.total_segments()),
                        ));
                    }
                }
                (None, None, None) => {}
                _ => {
                    return Err((
                        here,
                        format!("client {:?}: give either join.at_s or join.after_client with join.after_segments", c.id),
                    ))
                }
            }
        }
        // Join chains must bottom out at a timed join.
        for c in &self.clients {
            let mut cur = c;
            let mut hops = 0;
            while let Some(other) = &cur.join.after_client {
                hops += 1;
                if hops > self.clients.len() {
                    return Err((Some(format!("\"{}\"", c.id)), format!("client {:?} has a cyclic join rule", c.id)));
                }
                cur = &self.clients[self.client_id(other).expect("checked").index()];
            }
        }
        for s in &self.bandwidth_schedule {
            if self.client_id(&s.client).is_none() {
                return Err((key("bandwidth_schedule"), format!("schedule names unknown client {:?}", s.client)));
            }
            if !(s.slice_kbps > 0.0 && s.slice_kbps <= self.capacity_kbps) {
                return Err((key("slice_kbps"), format!("scheduled slice {} outside (0, capacity]", s.slice_kbps)));
            }
        }
        if !self.bandwidth_schedule.is_empty() && self.strategy == Strategy::NoProxy {
            return Err((key("bandwidth_schedule"), "a bandwidth schedule needs a slicing strategy".into()));
        }
        for name in [&self.metrics.tracked_client, &self.metrics.window_from_join_of].into_iter().flatten() {
            if self.client_id(name).is_none() {
                return Err((key("[metrics]"), format!("metrics refer to unknown client {name:?}")));
            }
        }
        let [from, to] = self.metrics.avg_window;
        if from == 0 || from > to {
            return Err((key("avg_window"), format!("avg_window [{from}, {to}] is empty")));
        }
        if let Some(t) = self.metrics.tick_s {
            if !(t > 0.0) {
                return Err((key("tick_s"), "tick_s must be positive".into()));
            }
        }
        // Build the run setup once to surface client and proxy errors early.
        self.setup(self.strategy).map_err(|e| (None, e.to_string()))?;
        Ok(())
    }

    pub fn client_config(&self) -> Result<ClientConfig> {
        let l = self.ladder.segment_duration_s;
        let mode = match self.abr.fixed_kbps {
            Some(kbps) => AbrMode::Fixed { kbps },
            None => AbrMode::Festive,
        };
        Ok(ClientConfig {
            k: self.k,
            buffer_max_s: self.buffer_max_s,
            startup_threshold_s: self.abr.startup_threshold_s.unwrap_or(2.0 * l),
            resume_threshold_s: self.abr.resume_threshold_s.unwrap_or(2.0 * l),
            abr: AbrParams { window: self.abr.window, alpha: self.abr.alpha, up_hold: self.abr.up_hold, mode },
            notices_enabled: true,
        })
    }

    /// Resolves the scenario into a runnable setup under `strategy`.
    pub fn setup(&self, strategy: Strategy) -> Result<SimSetup> {
        let ladder = self.ladder()?;
        let clients = self
            .clients
            .iter()
            .map(|c| {
                let join = match (&c.join.after_client, c.join.after_segments) {
                    (Some(other), Some(segments)) => JoinRule::AfterSegments {
                        client: self
                            .client_id(other)
                            .ok_or_else(|| SimError::Config(format!("unknown client {other:?}")))?,
                        segments,
                    },
                    _ => JoinRule::AtTime(c.join.at_s.unwrap_or(0.0)),
                };
                Ok(ClientSpec { name: c.id.clone(), join })
            })
            .collect::<Result<Vec<_>>>()?;
        let schedule = self
            .bandwidth_schedule
            .iter()
            .map(|s| {
                Ok(SliceStep {
                    client: self
                        .client_id(&s.client)
                        .ok_or_else(|| SimError::Config(format!("unknown client {:?}", s.client)))?,
                    after_segments: s.after_segments,
                    slice_kbps: s.slice_kbps,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let client = self.client_config()?;
        // Surface client configuration errors before a run starts.
        crate::client::ClientSession::new(ClientId(0), ladder.clone(), client, crate::engine::seeded_rng(0))?;
        let proxy = ProxyConfig {
            strategy,
            capacity_kbps: self.capacity_kbps,
            k: self.k,
            buffer_max_s: self.buffer_max_s,
            blanket_rewrite_kbps: self.proxy.blanket_rewrite_kbps,
            notices: self.proxy.notices,
        };
        crate::proxy::ProxyState::new(ladder.clone(), proxy, schedule.clone())?;
        Ok(SimSetup { ladder, base_rtt_s: self.base_rtt_s, client, proxy, clients, schedule })
    }

    pub fn metrics_spec(&self) -> MetricsSpec {
        MetricsSpec {
            tracked_client: self.metrics.tracked_client.as_deref().and_then(|n| self.client_id(n)),
            window_from_join_of: self.metrics.window_from_join_of.as_deref().and_then(|n| self.client_id(n)),
            avg_window: (self.metrics.avg_window[0], self.metrics.avg_window[1]),
            tick_s: self.metrics.tick_s.unwrap_or(self.ladder.segment_duration_s),
            capacity_kbps: self.capacity_kbps,
        }
    }
}

/// Loads a preset by name, or a TOML scenario file.
pub fn load_scenario(name_or_path: &str) -> Result<ScenarioConfig> {
    if let Some(cfg) = preset(name_or_path) {
        return cfg;
    }
    let path = PathBuf::from(name_or_path);
    let src = std::fs::read_to_string(&path).map_err(|e| SimError::Scenario {
        path: path.clone(),
        message: format!(
            "cannot read scenario ({e}); built-in presets are {}",
            PRESET_NAMES.join(", ")
        ),
    })?;
    ScenarioConfig::from_toml_str(&src, &path)
}

/// One finished run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub strategy: Strategy,
    pub seed: u64,
    pub log: EventLog,
    pub report: MetricsReport,
}

/// Runs the scenario once under `strategy` with `seed`.
pub fn run_once(cfg: &ScenarioConfig, strategy: Strategy, seed: u64) -> Result<RunOutcome> {
    let setup = cfg.setup(strategy)?;
    let log = sim::run(&setup, seed)?;
    let report = compute_report(&log, &setup.ladder, &cfg.metrics_spec(), &cfg.name, strategy.as_str(), seed)?;
    Ok(RunOutcome { strategy, seed, log, report })
}

/// Runs every (strategy, repetition) pair in parallel. Repetition `i` uses
/// seed `base_seed + i`. Results come back in (strategy, repetition) order.
pub fn run_batch(cfg: &ScenarioConfig, strategies: &[Strategy], base_seed: u64, reps: u32) -> Result<Vec<RunOutcome>> {
    if reps == 0 {
        return Err(SimError::Config("repetitions must be at least 1".into()));
    }
    let jobs: Vec<(Strategy, u64)> = strategies
        .iter()
        .flat_map(|&s| (0..u64::from(reps)).map(move |i| (s, base_seed.wrapping_add(i))))
        .collect();
    jobs.into_par_iter().map(|(s, seed)| run_once(cfg, s, seed)).collect()
}
