//! Evaluation metrics computed from a finished event log.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::engine::{ClientId, EventKind, EventLog};
use crate::error::{Result, SimError};
use crate::media::{BitrateLadder, Kbps};

/// Jain-derived unfairness: `sqrt(1 - (sum r)^2 / (X sum r^2))`, 0 for
/// equal rates. Computed as `sqrt(sum (r - mean)^2 / sum r^2)`, which is the
/// same quantity without the cancellation near 0.
pub fn unfairness_index(rates: &[f64]) -> Result<f64> {
    if rates.is_empty() {
        return Err(SimError::Metric("unfairness of an empty client set".into()));
    }
    if rates.iter().any(|&r| !(r >= 0.0 && r.is_finite())) {
        return Err(SimError::InvalidInput(format!("rates must be finite and non-negative: {rates:?}")));
    }
    let sq: f64 = rates.iter().map(|r| r * r).sum();
    if sq == 0.0 {
        return Ok(0.0);
    }
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    let dev: f64 = rates.iter().map(|r| (r - mean) * (r - mean)).sum();
    Ok((dev / sq).sqrt().clamp(0.0, 1.0))
}

/// Bitrate each client's network traffic actually carries, as a step
/// function: `(time, bitrate)` at every request, rewritten value if the
/// proxy changed it.
pub fn requested_bitrate_series(log: &EventLog) -> BTreeMap<ClientId, Vec<(f64, Kbps)>> {
    let mut out: BTreeMap<ClientId, Vec<(f64, Kbps)>> = BTreeMap::new();
    for e in log.events() {
        let Some(b) = e.detail.bitrate_kbps else { continue };
        match e.kind {
            EventKind::RequestSent => out.entry(e.client).or_default().push((e.time_s, b)),
            EventKind::RequestRewritten => {
                // Replaces the request logged just before at the same instant.
                if let Some(last) = out.entry(e.client).or_default().last_mut() {
                    *last = (e.time_s, b);
                }
            }
            _ => {}
        }
    }
    out
}

/// Join and leave time of each client that joined.
pub fn presence(log: &EventLog) -> BTreeMap<ClientId, (f64, Option<f64>)> {
    let mut out: BTreeMap<ClientId, (f64, Option<f64>)> = BTreeMap::new();
    for e in log.events() {
        match e.kind {
            EventKind::ClientJoin => {
                out.entry(e.client).or_insert((e.time_s, None));
            }
            EventKind::ClientLeave => {
                if let Some(p) = out.get_mut(&e.client) {
                    p.1 = Some(e.time_s);
                }
            }
            _ => {}
        }
    }
    out
}

fn value_at(series: &[(f64, Kbps)], t: f64) -> Option<Kbps> {
    let n = series.partition_point(|&(ts, _)| ts <= t);
    n.checked_sub(1).map(|i| series[i].1)
}

/// Per-tick unfairness over `[start_s, end_s]`, one tick every `tick_s`.
/// Each client present at a tick contributes its latest requested bitrate.
/// Returns the series and its average.
pub fn fairness_series(log: &EventLog, start_s: f64, end_s: f64, tick_s: f64) -> Result<(Vec<(f64, f64)>, f64)> {
    if !(tick_s > 0.0) {
        return Err(SimError::InvalidInput(format!("fairness tick must be positive, got {tick_s}")));
    }
    if !(end_s >= start_s) {
        return Err(SimError::Metric(format!("empty fairness window [{start_s}, {end_s}]")));
    }
    let series = requested_bitrate_series(log);
    let present = presence(log);
    let mut out = Vec::new();
    let mut i = 0u64;
    loop {
        let t = start_s + i as f64 * tick_s;
        if t > end_s + 1e-9 {
            break;
        }
        i += 1;
        let rates: Vec<f64> = present
            .iter()
            .filter(|(_, &(join, leave))| join <= t && leave.is_none_or(|l| t <= l))
            .filter_map(|(c, _)| series.get(c).and_then(|s| value_at(s, t)))
            .map(f64::from)
            .collect();
        if rates.is_empty() {
            continue;
        }
        out.push((t, unfairness_index(&rates)?));
    }
    if out.is_empty() {
        return Err(SimError::Metric(format!("no active clients in fairness window [{start_s}, {end_s}]")));
    }
    let avg = out.iter().map(|p| p.1).sum::<f64>() / out.len() as f64;
    Ok((out, avg))
}

/// Stalls per client, counting only those after the client's playback start.
pub fn count_rebuffering(log: &EventLog) -> BTreeMap<ClientId, u32> {
    let mut started: BTreeMap<ClientId, bool> = BTreeMap::new();
    let mut out: BTreeMap<ClientId, u32> = BTreeMap::new();
    for e in log.events() {
        match e.kind {
            EventKind::PlaybackStart => {
                started.insert(e.client, true);
                out.entry(e.client).or_insert(0);
            }
            EventKind::PlaybackStall if started.get(&e.client).copied().unwrap_or(false) => {
                *out.entry(e.client).or_insert(0) += 1;
            }
            _ => {}
        }
    }
    out
}

/// How a client reached a new fair bitrate after a join.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adaptation {
    /// Seconds from the join until the first request at the fair bitrate.
    pub delay_s: f64,
    /// Bitrate of the request just before that one, minus the fair bitrate.
    pub amplitude_kbps: f64,
}

/// `None` means the client never requested the fair bitrate after the join.
pub fn adaptation(log: &EventLog, client: ClientId, join_s: f64, fair_kbps: Kbps) -> Option<Adaptation> {
    let series = requested_bitrate_series(log).remove(&client)?;
    // Rate in effect just before the join; a request at the join instant
    // already reacts to it.
    let before = series.partition_point(|&(t, _)| t < join_s);
    if before > 0 && series[before - 1].1 == fair_kbps {
        return Some(Adaptation { delay_s: 0.0, amplitude_kbps: 0.0 });
    }
    let first = series.iter().position(|&(t, b)| t >= join_s && b == fair_kbps)?;
    let prev = if first == 0 { fair_kbps } else { series[first - 1].1 };
    Some(Adaptation {
        delay_s: series[first].0 - join_s,
        amplitude_kbps: f64::from(prev) - f64::from(fair_kbps),
    })
}

pub fn adaptation_delay(log: &EventLog, client: ClientId, join_s: f64, fair_kbps: Kbps) -> Option<f64> {
    adaptation(log, client, join_s, fair_kbps).map(|a| a.delay_s)
}

pub fn degradation_amplitude(log: &EventLog, client: ClientId, join_s: f64, fair_kbps: Kbps) -> Option<f64> {
    adaptation(log, client, join_s, fair_kbps).map(|a| a.amplitude_kbps)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PushAccounting {
    /// Lead responses fully received.
    pub responses: u32,
    /// PUSH_PROMISE frames received, discarded pushes included.
    pub push_promises: u32,
    pub push_discarded: u32,
}

impl PushAccounting {
    pub fn accepted_pushes(&self) -> u32 {
        self.push_promises.saturating_sub(self.push_discarded)
    }
}

pub fn push_accounting(log: &EventLog, client: ClientId) -> PushAccounting {
    let mut acc = PushAccounting::default();
    for e in log.for_client(client) {
        match e.kind {
            EventKind::ResponseDone => acc.responses += 1,
            EventKind::PushPromiseReceived => acc.push_promises += 1,
            EventKind::PushDiscarded => acc.push_discarded += 1,
            _ => {}
        }
    }
    acc
}

/// `(responses, push promises)` per segment index.
pub fn push_accounting_by_segment(log: &EventLog, client: ClientId) -> BTreeMap<u32, (u32, u32)> {
    let mut out: BTreeMap<u32, (u32, u32)> = BTreeMap::new();
    for e in log.for_client(client) {
        let Some(i) = e.detail.segment_index else { continue };
        match e.kind {
            EventKind::ResponseDone => out.entry(i).or_default().0 += 1,
            EventKind::PushPromiseReceived => out.entry(i).or_default().1 += 1,
            _ => {}
        }
    }
    out
}

/// Mean bitrate of the segments played with index in `from..=to`.
pub fn average_bitrate(log: &EventLog, client: ClientId, from: u32, to: u32) -> Result<f64> {
    let rates: Vec<f64> = log
        .for_client(client)
        .filter(|e| e.kind == EventKind::SegmentPlayed)
        .filter(|e| e.detail.segment_index.is_some_and(|i| (from..=to).contains(&i)))
        .filter_map(|e| e.detail.bitrate_kbps.map(f64::from))
        .collect();
    if rates.is_empty() {
        return Err(SimError::Metric(format!("no played segments in window {from}..={to}")));
    }
    Ok(rates.iter().sum::<f64>() / rates.len() as f64)
}

/// Which client and window the report focuses on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSpec {
    /// Client whose adaptation, accounting and bitrate are highlighted.
    pub tracked_client: Option<ClientId>,
    /// Fairness averaging starts at this client's join and ends when the
    /// tracked client leaves; otherwise the whole session is used.
    pub window_from_join_of: Option<ClientId>,
    pub avg_window: (u32, u32),
    pub tick_s: f64,
    pub capacity_kbps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientMetrics {
    pub responses: u32,
    pub push_promises: u32,
    pub push_discarded: u32,
    pub accepted_pushes: u32,
    pub rebuffer_count: u32,
    pub avg_bitrate_kbps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub strategy: String,
    pub seed: u64,
    pub unfairness_avg: f64,
    pub fairness_window_s: (f64, f64),
    pub rebuffer_count: u32,
    pub tracked_client: Option<String>,
    /// Fair bitrate right after the window-opening join.
    pub fair_bitrate_kbps: Option<Kbps>,
    /// `None` when the tracked client never reached the fair bitrate.
    pub adaptation_delay_s: Option<f64>,
    pub degradation_amplitude_kbps: Option<f64>,
    pub clients: BTreeMap<String, ClientMetrics>,
    pub per_tick_fairness: Vec<(f64, f64)>,
}

pub const CSV_ROW_HEADER: [&str; 12] = [
    "scenario",
    "strategy",
    "seed",
    "unfairness_avg",
    "rebuffer_count",
    "tracked_client",
    "adaptation_delay_s",
    "degradation_amplitude_kbps",
    "responses",
    "push_promises",
    "push_discarded",
    "avg_bitrate_kbps",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl MetricsReport {
    /// Metrics of the tracked client, or of the first client.
    pub fn focus(&self) -> Option<(&String, &ClientMetrics)> {
        match &self.tracked_client {
            Some(name) => self.clients.get_key_value(name),
            None => self.clients.iter().next(),
        }
    }

    /// One flat CSV row matching [`CSV_ROW_HEADER`].
    pub fn csv_row(&self) -> Vec<String> {
        let focus = self.focus();
        let count = |f: fn(&ClientMetrics) -> u32| focus.map(|(_, m)| f(m).to_string()).unwrap_or_default();
        vec![
            self.scenario.clone(),
            self.strategy.clone(),
            self.seed.to_string(),
            format!("{:.6}", self.unfairness_avg),
            self.rebuffer_count.to_string(),
            focus.map(|(n, _)| n.clone()).unwrap_or_default(),
            opt(self.adaptation_delay_s),
            opt(self.degradation_amplitude_kbps),
            count(|m| m.responses),
            count(|m| m.push_promises),
            count(|m| m.push_discarded),
            opt(focus.and_then(|(_, m)| m.avg_bitrate_kbps)),
        ]
    }
}

/// Computes the full report for one run.
pub fn compute_report(
    log: &EventLog,
    ladder: &BitrateLadder,
    spec: &MetricsSpec,
    scenario: &str,
    strategy: &str,
    seed: u64,
) -> Result<MetricsReport> {
    let present = presence(log);
    if present.is_empty() {
        return Err(SimError::Metric("no client joined".into()));
    }
    let first_join = present.values().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let last_leave = present.values().map(|p| p.1.unwrap_or_else(|| log.end_time())).fold(0.0, f64::max);
    let leave_of = |c: ClientId| present.get(&c).and_then(|p| p.1).unwrap_or(last_leave);
    let join_of = |c: ClientId| {
        present
            .get(&c)
            .map(|p| p.0)
            .ok_or_else(|| SimError::Metric(format!("client {} never joined", log.client_name(c))))
    };

    let (start, end) = match spec.window_from_join_of {
        Some(j) => (join_of(j)?, spec.tracked_client.map_or(last_leave, leave_of)),
        None => (first_join, last_leave),
    };
    let (per_tick_fairness, unfairness_avg) = fairness_series(log, start, end, spec.tick_s)?;

    let stalls = count_rebuffering(log);
    let mut clients = BTreeMap::new();
    for &c in present.keys() {
        let acc = push_accounting(log, c);
        clients.insert(
            log.client_name(c).to_string(),
            ClientMetrics {
                responses: acc.responses,
                push_promises: acc.push_promises,
                push_discarded: acc.push_discarded,
                accepted_pushes: acc.accepted_pushes(),
                rebuffer_count: stalls.get(&c).copied().unwrap_or(0),
                avg_bitrate_kbps: average_bitrate(log, c, spec.avg_window.0, spec.avg_window.1).ok(),
            },
        );
    }

    let mut fair_bitrate_kbps = None;
    let mut adapt = None;
    if let (Some(tracked), Some(j)) = (spec.tracked_client, spec.window_from_join_of) {
        let join_s = join_of(j)?;
        let active = present
            .values()
            .filter(|&&(jt, lt)| jt <= join_s && lt.is_none_or(|l| l > join_s))
            .count();
        let fair = ladder.fair_bitrate(spec.capacity_kbps / active.max(1) as f64);
        fair_bitrate_kbps = Some(fair);
        adapt = adaptation(log, tracked, join_s, fair);
    }

    Ok(MetricsReport {
        scenario: scenario.to_string(),
        strategy: strategy.to_string(),
        seed,
        unfairness_avg,
        fairness_window_s: (start, end),
        rebuffer_count: stalls.values().sum(),
        tracked_client: spec.tracked_client.map(|c| log.client_name(c).to_string()),
        fair_bitrate_kbps,
        adaptation_delay_s: adapt.map(|a| a.delay_s),
        degradation_amplitude_kbps: adapt.map(|a| a.amplitude_kbps),
        clients,
        per_tick_fairness,
    })
}

/// Mean, min and max of one metric across runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl Spread {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        Some(Self {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            n: v.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub scenario: String,
    pub strategy: String,
    pub unfairness_avg: Option<Spread>,
    pub rebuffer_count: Option<Spread>,
    pub adaptation_delay_s: Option<Spread>,
    pub degradation_amplitude_kbps: Option<Spread>,
    pub responses: Option<Spread>,
    pub push_promises: Option<Spread>,
    pub avg_bitrate_kbps: Option<Spread>,
}

/// Groups reports by strategy (in first-seen order) and summarises each
/// group. All reports must come from the same scenario.
pub fn aggregate(reports: &[MetricsReport]) -> Result<Vec<Aggregate>> {
    let Some(first) = reports.first() else {
        return Err(SimError::InvalidInput("nothing to aggregate".into()));
    };
    if let Some(r) = reports.iter().find(|r| r.scenario != first.scenario) {
        return Err(SimError::InvalidInput(format!(
            "reports mix scenarios {:?} and {:?}",
            first.scenario, r.scenario
        )));
    }
    let mut order: Vec<&str> = Vec::new();
    for r in reports {
        if !order.contains(&r.strategy.as_str()) {
            order.push(&r.strategy);
        }
    }
    Ok(order
        .into_iter()
        .map(|s| {
            let group: Vec<&MetricsReport> = reports.iter().filter(|r| r.strategy == s).collect();
            let focus = |f: fn(&ClientMetrics) -> Option<f64>| {
                Spread::of(group.iter().filter_map(|r| r.focus().and_then(|(_, m)| f(m))))
            };
            Aggregate {
                scenario: first.scenario.clone(),
                strategy: s.to_string(),
                unfairness_avg: Spread::of(group.iter().map(|r| r.unfairness_avg)),
                rebuffer_count: Spread::of(group.iter().map(|r| f64::from(r.rebuffer_count))),
                adaptation_delay_s: Spread::of(group.iter().filter_map(|r| r.adaptation_delay_s)),
                degradation_amplitude_kbps: Spread::of(group.iter().filter_map(|r| r.degradation_amplitude_kbps)),
                responses: focus(|m| Some(f64::from(m.responses))),
                push_promises: focus(|m| Some(f64::from(m.push_promises))),
                avg_bitrate_kbps: focus(|m| m.avg_bitrate_kbps),
            }
        })
        .collect())
}

impl MetricsReport {
    /// Rebuilds a report from a flat CSV row. Only the focus client's
    /// metrics survive the round trip.
    pub fn from_csv_record(rec: &csv::StringRecord) -> Result<Self> {
        if rec.len() != CSV_ROW_HEADER.len() {
            return Err(SimError::InvalidInput(format!(
                "report row has {} fields, expected {}",
                rec.len(),
                CSV_ROW_HEADER.len()
            )));
        }
        let bad = |i: usize| SimError::InvalidInput(format!("bad {} value {:?}", CSV_ROW_HEADER[i], &rec[i]));
        let num = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(i));
        let count = |i: usize| rec[i].parse::<u32>().map_err(|_| bad(i));
        let maybe = |i: usize| if rec[i].is_empty() { Ok(None) } else { num(i).map(Some) };
        let name = rec[5].to_string();
        let mut clients = BTreeMap::new();
        if !name.is_empty() {
            let (responses, push_promises, push_discarded) = (count(8)?, count(9)?, count(10)?);
            clients.insert(
                name.clone(),
                ClientMetrics {
                    responses,
                    push_promises,
                    push_discarded,
                    accepted_pushes: push_promises.saturating_sub(push_discarded),
                    rebuffer_count: 0,
                    avg_bitrate_kbps: maybe(11)?,
                },
            );
        }
        Ok(Self {
            scenario: rec[0].to_string(),
            strategy: rec[1].to_string(),
            seed: rec[2].parse().map_err(|_| bad(2))?,
            unfairness_avg: num(3)?,
            fairness_window_s: (0.0, 0.0),
            rebuffer_count: count(4)?,
            tracked_client: (!name.is_empty()).then_some(name),
            fair_bitrate_kbps: None,
            adaptation_delay_s: maybe(6)?,
            degradation_amplitude_kbps: maybe(7)?,
            clients,
            per_tick_fairness: Vec::new(),
        })
    }
}

/// Side-by-side table, one column per strategy. Cells show the mean and,
/// over several runs, the `[min, max]` range.
pub fn render_comparison(aggs: &[Aggregate]) -> String {
    let cell = |s: &Option<Spread>, prec: usize| match s {
        None => "-".to_string(),
        Some(s) if s.n > 1 && s.min != s.max => {
            format!("{:.p$} [{:.p$}, {:.p$}]", s.mean, s.min, s.max, p = prec)
        }
        Some(s) => format!("{:.p$}", s.mean, p = prec),
    };
    type Row<'a> = (&'a str, Box<dyn Fn(&Aggregate) -> String + 'a>);
    let rows: Vec<Row> = vec![
        ("F", Box::new(|a| cell(&a.unfairness_avg, 4))),
        ("Rebuff", Box::new(|a| cell(&a.rebuffer_count, 1))),
        ("dt (s)", Box::new(|a| cell(&a.adaptation_delay_s, 3))),
        ("dr (kbps)", Box::new(|a| cell(&a.degradation_amplitude_kbps, 1))),
        ("Res", Box::new(|a| cell(&a.responses, 1))),
        ("PP", Box::new(|a| cell(&a.push_promises, 1))),
        ("avg bitrate", Box::new(|a| cell(&a.avg_bitrate_kbps, 1))),
    ];
    let mut table: Vec<Vec<String>> = Vec::new();
    let mut head = vec![aggs.first().map_or(String::new(), |a| a.scenario.clone())];
    head.extend(aggs.iter().map(|a| a.strategy.clone()));
    table.push(head);
    for (label, f) in &rows {
        let mut line = vec![label.to_string()];
        line.extend(aggs.iter().map(f));
        table.push(line);
    }
    let cols = table[0].len();
    let widths: Vec<usize> = (0..cols).map(|c| table.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for row in &table {
        let cells: Vec<String> = row.iter().zip(&widths).map(|(v, w)| format!("{v:<w$}")).collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}
