//! FESTIVE-style rate adaptation: harmonic-mean bandwidth estimate, one
//! ladder level per decision, delayed up-switches.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::media::{BitrateLadder, Kbps};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AbrMode {
    Festive,
    /// Always request the same ladder rate (diagnostic client).
    Fixed { kbps: Kbps },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbrParams {
    pub window: usize,
    pub alpha: f64,
    pub up_hold: u32,
    pub mode: AbrMode,
}

impl Default for AbrParams {
    fn default() -> Self {
        Self { window: 5, alpha: 1.0, up_hold: 2, mode: AbrMode::Festive }
    }
}

impl AbrParams {
    pub fn validate(&self, ladder: &BitrateLadder) -> Result<()> {
        if self.window == 0 {
            return Err(SimError::Config("abr window must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(SimError::Config(format!("abr alpha must be positive, got {}", self.alpha)));
        }
        if let AbrMode::Fixed { kbps } = self.mode {
            if !ladder.contains(kbps) {
                return Err(SimError::Config(format!("fixed abr rate {kbps} kbps is not on the ladder")));
            }
        }
        Ok(())
    }
}

/// `n / sum(1/s)`; `None` when there is nothing to average.
pub fn harmonic_mean(samples: &[f64]) -> Option<f64> {
    if samples.is_empty() || samples.iter().any(|&s| !(s > 0.0)) {
        return None;
    }
    let inv: f64 = samples.iter().map(|s| 1.0 / s).sum();
    Some(samples.len() as f64 / inv)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbrState {
    params: AbrParams,
    samples: VecDeque<f64>,
    current_level: usize,
    /// Decisions taken at `current_level` since the last switch.
    cycles_at_level: u32,
    forced: Option<Kbps>,
}

impl AbrState {
    pub fn new(params: AbrParams) -> Self {
        Self {
            params,
            samples: VecDeque::with_capacity(params.window),
            current_level: 0,
            cycles_at_level: 0,
            forced: None,
        }
    }

    pub fn params(&self) -> &AbrParams {
        &self.params
    }

    pub fn current_level(&self) -> usize {
        self.current_level
    }

    pub fn forced(&self) -> Option<Kbps> {
        self.forced
    }

    pub fn samples(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().copied()
    }

    /// Records a measured throughput. Non-positive samples are ignored.
    pub fn record_sample(&mut self, kbps: f64) {
        if !(kbps > 0.0 && kbps.is_finite()) {
            return;
        }
        if self.samples.len() == self.params.window {
            self.samples.pop_front();
        }
        self.samples.push_back(kbps);
    }

    pub fn estimate(&self) -> Option<f64> {
        let v: Vec<f64> = self.samples.iter().copied().collect();
        harmonic_mean(&v)
    }

    /// Imposes a proxy-selected bitrate for the rest of the current cycle and
    /// re-anchors the gradual switching at that level.
    pub fn force(&mut self, ladder: &BitrateLadder, bitrate: Kbps) -> Result<()> {
        let level = ladder
            .level_of(bitrate)
            .ok_or_else(|| SimError::Protocol(format!("forced bitrate {bitrate} kbps not on the ladder")))?;
        self.forced = Some(bitrate);
        self.current_level = level;
        self.cycles_at_level = 1;
        Ok(())
    }

    pub fn clear_forced(&mut self) {
        self.forced = None;
    }
}

/// Bitrate for the next push cycle.
///
/// A pending forced bitrate wins. Otherwise the target is the fair rung for
/// `alpha * estimate`, and the current level moves one step toward it; an
/// up-step additionally needs `up_hold` decisions at the current level.
pub fn select_bitrate(abr: &mut AbrState, ladder: &BitrateLadder, estimate: Option<f64>) -> Kbps {
    if let Some(forced) = abr.forced {
        return forced;
    }
    if let AbrMode::Fixed { kbps } = abr.params.mode {
        abr.current_level = ladder.level_of(kbps).unwrap_or(0);
        return kbps;
    }
    let current = abr.current_level.min(ladder.len() - 1);
    let next = match estimate {
        None => 0,
        Some(est) => {
            let target = ladder.fair_level(abr.params.alpha * est);
            if target > current && abr.cycles_at_level >= abr.params.up_hold {
                current + 1
            } else if target < current {
                current - 1
            } else {
                current
            }
        }
    };
    if next == current && estimate.is_some() {
        abr.cycles_at_level += 1;
    } else {
        abr.cycles_at_level = 1;
    }
    abr.current_level = next;
    ladder.rate_at(next)
}
