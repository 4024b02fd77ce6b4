use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ClientId;
use crate::error::{Result, SimError};
use crate::media::SegmentPayload;

const DONE_EPS_KBIT: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlowId(pub u64);

/// One payload transfer in progress on the bottleneck.
#[derive(Debug, Clone, PartialEq)]
pub struct Flow {
    pub id: FlowId,
    pub client: ClientId,
    pub payload: SegmentPayload,
    pub remaining_kbit: f64,
    pub started_at_s: f64,
}

impl Flow {
    pub fn new(id: FlowId, client: ClientId, payload: SegmentPayload, started_at_s: f64) -> Self {
        Self { id, client, payload, remaining_kbit: payload.size_kbit, started_at_s }
    }

    fn is_done(&self) -> bool {
        self.remaining_kbit <= DONE_EPS_KBIT * self.payload.size_kbit.max(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkMode {
    /// Instantaneous equal split of the capacity among all active flows.
    Shared,
    /// Fixed per-client slices; idle slices are not lent to other clients.
    Sliced,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkModel {
    capacity_kbps: f64,
    mode: LinkMode,
    slices: BTreeMap<ClientId, f64>,
    base_rtt_s: f64,
}

impl LinkModel {
    pub fn shared(capacity_kbps: f64, base_rtt_s: f64) -> Result<Self> {
        Self::validate(capacity_kbps, base_rtt_s)?;
        Ok(Self { capacity_kbps, mode: LinkMode::Shared, slices: BTreeMap::new(), base_rtt_s })
    }

    pub fn sliced(capacity_kbps: f64, base_rtt_s: f64) -> Result<Self> {
        Self::validate(capacity_kbps, base_rtt_s)?;
        Ok(Self { capacity_kbps, mode: LinkMode::Sliced, slices: BTreeMap::new(), base_rtt_s })
    }

    fn validate(capacity_kbps: f64, base_rtt_s: f64) -> Result<()> {
        if !(capacity_kbps > 0.0 && capacity_kbps.is_finite()) {
            return Err(SimError::Config(format!("link capacity must be positive, got {capacity_kbps}")));
        }
        if !(base_rtt_s >= 0.0 && base_rtt_s.is_finite()) {
            return Err(SimError::Config(format!("base RTT must be non-negative, got {base_rtt_s}")));
        }
        Ok(())
    }

    pub fn capacity_kbps(&self) -> f64 {
        self.capacity_kbps
    }

    pub fn mode(&self) -> LinkMode {
        self.mode
    }

    pub fn base_rtt_s(&self) -> f64 {
        self.base_rtt_s
    }

    pub fn slices(&self) -> &BTreeMap<ClientId, f64> {
        &self.slices
    }

    pub fn slice(&self, client: ClientId) -> Option<f64> {
        self.slices.get(&client).copied()
    }

    /// Replaces the whole slice table. Only valid in sliced mode; the sum may
    /// exceed capacity by rounding noise only.
    pub fn set_slices(&mut self, slices: BTreeMap<ClientId, f64>) -> Result<()> {
        if self.mode != LinkMode::Sliced {
            return Err(SimError::Internal("slices installed on a shared link".into()));
        }
        let total: f64 = slices.values().sum();
        if total > self.capacity_kbps * (1.0 + 1e-12) {
            return Err(SimError::Internal(format!(
                "slices sum to {total} kbps, above capacity {}",
                self.capacity_kbps
            )));
        }
        if slices.values().any(|&s| !(s >= 0.0)) {
            return Err(SimError::Internal("negative slice".into()));
        }
        self.slices = slices;
        Ok(())
    }

    /// Current progress rate of each flow, index-aligned with `flows`.
    pub fn rates(&self, flows: &[Flow]) -> Vec<f64> {
        match self.mode {
            LinkMode::Shared => {
                let n = flows.len();
                vec![if n == 0 { 0.0 } else { self.capacity_kbps / n as f64 }; n]
            }
            LinkMode::Sliced => {
                let mut per_client: BTreeMap<ClientId, usize> = BTreeMap::new();
                for f in flows {
                    *per_client.entry(f.client).or_default() += 1;
                }
                flows
                    .iter()
                    .map(|f| self.slice(f.client).unwrap_or(0.0) / per_client[&f.client] as f64)
                    .collect()
            }
        }
    }

    /// Time until the first active flow finishes at current rates.
    pub fn next_completion(&self, flows: &[Flow]) -> Option<f64> {
        self.rates(flows)
            .iter()
            .zip(flows)
            .filter(|(&r, _)| r > 0.0)
            .map(|(&r, f)| f.remaining_kbit.max(0.0) / r)
            .min_by(f64::total_cmp)
    }
}

/// A flow that finished `at_s` seconds after the start of an [`advance`] call.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowCompletion {
    pub flow: Flow,
    pub at_s: f64,
}

/// Progresses every flow for `dt` seconds. Completed flows are removed and
/// reported with their exact crossing offset; rates are recomputed after
/// each completion since the remaining flows then share more bandwidth.
pub fn advance(flows: &mut Vec<Flow>, link: &LinkModel, dt: f64) -> Vec<FlowCompletion> {
    let mut done = Vec::new();
    if !(dt > 0.0) {
        return done;
    }
    let mut elapsed = 0.0;
    loop {
        if flows.is_empty() {
            break;
        }
        let rates = link.rates(flows);
        let left = dt - elapsed;
        let step = match link.next_completion(flows) {
            Some(t) if t <= left => t,
            _ => left,
        };
        for (f, r) in flows.iter_mut().zip(&rates) {
            f.remaining_kbit -= r * step;
        }
        elapsed += step;
        let mut i = 0;
        while i < flows.len() {
            if flows[i].is_done() && rates[i] > 0.0 {
                let mut flow = flows.remove(i);
                flow.remaining_kbit = 0.0;
                done.push(FlowCompletion { flow, at_s: elapsed });
            } else {
                i += 1;
            }
        }
        if elapsed >= dt || step == left {
            break;
        }
    }
    done
}
