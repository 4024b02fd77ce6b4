//! In-path proxy: fair bandwidth allocation on join/leave and the request
//! handling strategies, including the overwrite notice.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::client::{BufferReportHeader, OverwriteNoticeHeader, BUFFER_LEVEL_HEADER};
use crate::engine::{ClientId, LinkMode};
use crate::error::{Result, SimError};
use crate::media::{BitrateLadder, Kbps};
use crate::server::SegmentRequest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// No proxy: clients compete on a shared link.
    NoProxy,
    /// Fair slices only; requests pass untouched.
    Reactive,
    /// Fair slices, and any request above the fair bitrate is rewritten.
    Proactive,
    /// Fair slices, buffer-aware rewrite plus a notice to the client.
    Fauras,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::NoProxy, Strategy::Reactive, Strategy::Proactive, Strategy::Fauras];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::NoProxy => "no_proxy",
            Strategy::Reactive => "reactive",
            Strategy::Proactive => "proactive",
            Strategy::Fauras => "fauras",
        }
    }

    pub fn link_mode(self) -> LinkMode {
        match self {
            Strategy::NoProxy => LinkMode::Shared,
            _ => LinkMode::Sliced,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        match norm.as_str() {
            "no_proxy" | "noproxy" | "none" => Ok(Strategy::NoProxy),
            "reactive" => Ok(Strategy::Reactive),
            "proactive" => Ok(Strategy::Proactive),
            "fauras" => Ok(Strategy::Fauras),
            _ => Err(SimError::Config(format!(
                "unknown strategy {s:?} (expected no_proxy, reactive, proactive or fauras)"
            ))),
        }
    }
}

/// `capacity / clients`.
pub fn fair_share(capacity_kbps: f64, clients: usize) -> Result<f64> {
    if clients == 0 {
        return Err(SimError::InvalidInput("fair share needs at least one client".into()));
    }
    if !(capacity_kbps > 0.0) {
        return Err(SimError::InvalidInput(format!("capacity must be positive, got {capacity_kbps}")));
    }
    Ok(capacity_kbps / clients as f64)
}

/// Buffer level expected once a cycle of `k` segments at `bitrate_kbps` has
/// downloaded over `slice_kbps`, capped at `buffer_max_s`.
pub fn estimate_buffer(
    buffer_s: f64,
    k: u32,
    segment_s: f64,
    bitrate_kbps: f64,
    slice_kbps: f64,
    buffer_max_s: f64,
) -> Result<f64> {
    if !(slice_kbps > 0.0) {
        return Err(SimError::InvalidInput(format!("slice must be positive, got {slice_kbps}")));
    }
    let cycle_s = f64::from(k) * segment_s;
    Ok((buffer_s + cycle_s - cycle_s * bitrate_kbps / slice_kbps).min(buffer_max_s))
}

/// Rewrite only when the request exceeds the fair bitrate and the buffer is
/// expected to fall below one push cycle.
pub fn should_overwrite(bitrate_kbps: Kbps, fair_kbps: Kbps, estimated_buffer_s: f64, k: u32, segment_s: f64) -> bool {
    bitrate_kbps > fair_kbps && estimated_buffer_s < f64::from(k) * segment_s
}

/// Slice change for one client once it has received `after_segments`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceStep {
    pub client: ClientId,
    pub after_segments: u32,
    pub slice_kbps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxyConfig {
    pub strategy: Strategy,
    pub capacity_kbps: f64,
    pub k: u32,
    pub buffer_max_s: f64,
    /// Rewrite every request to this rate regardless of fairness.
    pub blanket_rewrite_kbps: Option<Kbps>,
    /// Attach the overwrite notice on rewrites (FAURAS only).
    pub notices: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverwriteDecision {
    pub original_bitrate: Kbps,
    pub final_bitrate: Kbps,
    pub fair_bitrate: Kbps,
    pub estimated_buffer_s: Option<f64>,
    pub triggered: bool,
    pub notified: bool,
}

#[derive(Debug, Clone)]
pub struct ProxyState {
    config: ProxyConfig,
    ladder: BitrateLadder,
    clients: BTreeSet<ClientId>,
    fair_share_kbps: Option<f64>,
    schedule: Vec<(SliceStep, bool)>,
    overrides: BTreeMap<ClientId, f64>,
}

impl ProxyState {
    pub fn new(ladder: BitrateLadder, config: ProxyConfig, schedule: Vec<SliceStep>) -> Result<Self> {
        if !(config.capacity_kbps > 0.0) {
            return Err(SimError::Config(format!("capacity must be positive, got {}", config.capacity_kbps)));
        }
        if config.k == 0 {
            return Err(SimError::Config("push cycle length k must be at least 1".into()));
        }
        if let Some(b) = config.blanket_rewrite_kbps {
            if !ladder.contains(b) {
                return Err(SimError::Config(format!("blanket rewrite rate {b} kbps is not on the ladder")));
            }
        }
        if let Some(s) = schedule.iter().find(|s| !(s.slice_kbps > 0.0)) {
            return Err(SimError::Config(format!("scheduled slice {} kbps must be positive", s.slice_kbps)));
        }
        if !schedule.is_empty() && config.strategy == Strategy::NoProxy {
            return Err(SimError::Config("a bandwidth schedule needs a slicing proxy strategy".into()));
        }
        Ok(Self {
            config,
            ladder,
            clients: BTreeSet::new(),
            fair_share_kbps: None,
            schedule: schedule.into_iter().map(|s| (s, false)).collect(),
            overrides: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &ProxyConfig {
        &self.config
    }

    pub fn strategy(&self) -> Strategy {
        self.config.strategy
    }

    pub fn clients(&self) -> &BTreeSet<ClientId> {
        &self.clients
    }

    /// `capacity / X` for the current client set.
    pub fn fair_share_kbps(&self) -> Option<f64> {
        self.fair_share_kbps
    }

    /// Bandwidth the proxy assumes for `client`: its scheduled slice if one
    /// is active, otherwise the fair share.
    pub fn share_for(&self, client: ClientId) -> Option<f64> {
        self.overrides.get(&client).copied().or(self.fair_share_kbps)
    }

    /// Slice table to install on the link; empty without a slicing proxy.
    pub fn slices(&self) -> BTreeMap<ClientId, f64> {
        if self.config.strategy == Strategy::NoProxy {
            return BTreeMap::new();
        }
        self.clients.iter().filter_map(|&c| self.share_for(c).map(|s| (c, s))).collect()
    }

    fn recompute(&mut self) -> Result<()> {
        self.fair_share_kbps = if self.clients.is_empty() {
            None
        } else {
            Some(fair_share(self.config.capacity_kbps, self.clients.len())?)
        };
        Ok(())
    }

    /// Registers a client and returns the new slice table.
    pub fn join(&mut self, client: ClientId) -> Result<BTreeMap<ClientId, f64>> {
        if !self.clients.insert(client) {
            return Err(SimError::Protocol(format!("client {} joined twice", client.0)));
        }
        self.recompute()?;
        self.apply_schedule(client, 0);
        Ok(self.slices())
    }

    /// Removes a client and returns the new slice table.
    pub fn leave(&mut self, client: ClientId) -> Result<BTreeMap<ClientId, f64>> {
        if !self.clients.remove(&client) {
            return Err(SimError::Protocol(format!("leave of unknown client {}", client.0)));
        }
        self.overrides.remove(&client);
        self.recompute()?;
        Ok(self.slices())
    }

    fn apply_schedule(&mut self, client: ClientId, delivered: u32) -> bool {
        let mut changed = false;
        for (step, applied) in &mut self.schedule {
            if !*applied && step.client == client && delivered >= step.after_segments {
                *applied = true;
                self.overrides.insert(client, step.slice_kbps);
                changed = true;
            }
        }
        changed
    }

    /// Applies schedule steps reached by `client` having received
    /// `delivered` segments. Returns the new slice table on change.
    pub fn on_progress(&mut self, client: ClientId, delivered: u32) -> Option<BTreeMap<ClientId, f64>> {
        if !self.clients.contains(&client) {
            return None;
        }
        self.apply_schedule(client, delivered).then(|| self.slices())
    }

    /// Handles one segment request and returns what is forwarded to the
    /// origin. A notified rewrite carries the notice header, which the origin
    /// echoes onto the lead response.
    pub fn process_request(
        &self,
        client: ClientId,
        request: &SegmentRequest,
    ) -> Result<(SegmentRequest, OverwriteDecision)> {
        if !self.clients.contains(&client) {
            return Err(SimError::Protocol(format!("request from unknown client {}", client.0)));
        }
        let share = self
            .share_for(client)
            .ok_or_else(|| SimError::Internal("no fair share with a registered client".into()))?;
        let original = request.seg.bitrate_kbps;
        let fair = self.ladder.fair_bitrate(share);
        let segment_s = self.ladder.segment_duration_s();

        let mut estimated_buffer_s = None;
        let (target, triggered) = if let Some(b) = self.config.blanket_rewrite_kbps {
            (b, b != original)
        } else {
            match self.config.strategy {
                Strategy::NoProxy | Strategy::Reactive => (original, false),
                Strategy::Proactive => (fair, original > fair),
                Strategy::Fauras => {
                    let reported = BufferReportHeader::parse(&request.headers)?.map_or(0.0, |h| h.level_s);
                    let be = estimate_buffer(
                        reported,
                        self.config.k,
                        segment_s,
                        f64::from(original),
                        share,
                        self.config.buffer_max_s,
                    )?;
                    estimated_buffer_s = Some(be);
                    (fair, should_overwrite(original, fair, be, self.config.k, segment_s))
                }
            }
        };
        let notified = triggered && self.config.notices && self.config.strategy == Strategy::Fauras;

        let mut forwarded = request.clone();
        forwarded.headers.remove(BUFFER_LEVEL_HEADER);
        if triggered {
            forwarded.seg.bitrate_kbps = target;
        }
        if notified {
            OverwriteNoticeHeader { bitrate_kbps: target }.insert_into(&mut forwarded.headers);
        }
        let decision = OverwriteDecision {
            original_bitrate: original,
            final_bitrate: forwarded.seg.bitrate_kbps,
            fair_bitrate: fair,
            estimated_buffer_s,
            triggered,
            notified,
        };
        Ok((forwarded, decision))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::OVERWRITE_NOTICE_HEADER;
    use crate::media::SegmentRef;

    fn proxy(strategy: Strategy, clients: u32) -> ProxyState {
        let cfg = ProxyConfig {
            strategy,
            capacity_kbps: 3000.0,
            k: 2,
            buffer_max_s: 10.0,
            blanket_rewrite_kbps: None,
            notices: true,
        };
        let mut p = ProxyState::new(BitrateLadder::default(), cfg, vec![]).unwrap();
        for c in 0..clients {
            p.join(ClientId(c)).unwrap();
        }
        p
    }

    fn request(bitrate: Kbps, buffer: Option<f64>) -> SegmentRequest {
        let mut r = SegmentRequest::new(SegmentRef::new(10, bitrate));
        if let Some(b) = buffer {
            BufferReportHeader { level_s: b }.insert_into(&mut r.headers);
        }
        r
    }

    #[test]
    fn allocation_examples() {
        for (n, share) in [(3, 1000.0), (2, 1500.0), (1, 3000.0)] {
            let p = proxy(Strategy::Reactive, n);
            assert!(p.slices().values().all(|&s| s == share));
            assert_eq!(p.slices().len(), n as usize);
        }
        assert!(proxy(Strategy::NoProxy, 3).slices().is_empty());
    }

    #[test]
    fn leave_of_unknown_client_is_error() {
        let mut p = proxy(Strategy::Reactive, 1);
        assert!(matches!(p.leave(ClientId(7)), Err(SimError::Protocol(_))));
        assert_eq!(p.leave(ClientId(0)).unwrap().len(), 0);
    }

    #[test]
    fn estimate_buffer_examples() {
        assert!((estimate_buffer(4.0, 2, 1.0, 1401.0, 1500.0, 10.0).unwrap() - 4.132).abs() < 1e-12);
        assert_eq!(estimate_buffer(5.0, 2, 1.0, 777.0, 777.0, 10.0).unwrap(), 5.0);
        assert_eq!(estimate_buffer(10.0, 2, 1.0, 100.0, 1000.0, 10.0).unwrap(), 10.0);
        assert!(matches!(estimate_buffer(1.0, 2, 1.0, 100.0, 0.0, 10.0), Err(SimError::InvalidInput(_))));
    }

    #[test]
    fn should_overwrite_examples() {
        assert!(should_overwrite(2791, 838, 1.5, 2, 1.0));
        assert!(!should_overwrite(838, 838, 0.5, 2, 1.0));
        assert!(!should_overwrite(2791, 838, 5.0, 2, 1.0));
    }

    #[test]
    fn fauras_rewrites_with_notice() {
        let p = proxy(Strategy::Fauras, 3);
        // B_e = 0.2 + 2 - 2*1401/1000 < 2.
        let (fwd, d) = p.process_request(ClientId(0), &request(1401, Some(0.2))).unwrap();
        assert!(d.triggered && d.notified);
        assert_eq!(fwd.seg.bitrate_kbps, 838);
        assert_eq!(fwd.headers[OVERWRITE_NOTICE_HEADER], "838");
        // Plenty of buffer: forwarded untouched.
        let (fwd, d) = p.process_request(ClientId(0), &request(1401, Some(8.0))).unwrap();
        assert!(!d.triggered);
        assert_eq!(fwd.seg.bitrate_kbps, 1401);
    }

    #[test]
    fn fauras_missing_header_counts_as_empty_buffer() {
        let p = proxy(Strategy::Fauras, 3);
        let (_, d) = p.process_request(ClientId(0), &request(1118, None)).unwrap();
        assert!(d.triggered);
        assert_eq!(d.estimated_buffer_s, Some(2.0 - 2.0 * 1.118));
    }

    #[test]
    fn proactive_rewrites_without_notice() {
        let p = proxy(Strategy::Proactive, 3);
        let (fwd, d) = p.process_request(ClientId(1), &request(1401, Some(9.0))).unwrap();
        assert!(d.triggered && !d.notified);
        assert_eq!(fwd.seg.bitrate_kbps, 838);
        assert!(!fwd.headers.contains_key(OVERWRITE_NOTICE_HEADER));
    }

    #[test]
    fn reactive_forwards_unmodified() {
        let p = proxy(Strategy::Reactive, 3);
        let (fwd, d) = p.process_request(ClientId(2), &request(2791, Some(0.0))).unwrap();
        assert!(!d.triggered);
        assert_eq!(fwd.seg.bitrate_kbps, 2791);
    }

    #[test]
    fn unknown_client_request_is_error() {
        let p = proxy(Strategy::Fauras, 1);
        assert!(p.process_request(ClientId(5), &request(99, None)).is_err());
    }

    #[test]
    fn schedule_overrides_slice() {
        let cfg = ProxyConfig {
            strategy: Strategy::Reactive,
            capacity_kbps: 3000.0,
            k: 2,
            buffer_max_s: 10.0,
            blanket_rewrite_kbps: None,
            notices: true,
        };
        let steps = vec![
            SliceStep { client: ClientId(0), after_segments: 0, slice_kbps: 1000.0 },
            SliceStep { client: ClientId(0), after_segments: 60, slice_kbps: 3000.0 },
        ];
        let mut p = ProxyState::new(BitrateLadder::default(), cfg, steps).unwrap();
        assert_eq!(p.join(ClientId(0)).unwrap()[&ClientId(0)], 1000.0);
        assert!(p.on_progress(ClientId(0), 59).is_none());
        assert_eq!(p.on_progress(ClientId(0), 60).unwrap()[&ClientId(0)], 3000.0);
        assert!(p.on_progress(ClientId(0), 61).is_none());
    }
}
