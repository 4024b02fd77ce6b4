//! Encoded video representation: the bitrate ladder, segment identity and size.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Bitrate in kbps. Ladder rates are integral.
pub type Kbps = u32;

/// The bitrates used by the reference Big Buck Bunny encoding.
pub const DEFAULT_RATES_KBPS: [Kbps; 11] = [99, 192, 285, 470, 656, 838, 1118, 1401, 1855, 2324, 2791];
pub const DEFAULT_SEGMENT_DURATION_S: f64 = 1.0;
pub const DEFAULT_TOTAL_SEGMENTS: u32 = 200;

/// Ordered set of available bitrates plus segment duration and count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitrateLadder {
    rates: Vec<Kbps>,
    segment_duration_s: f64,
    total_segments: u32,
}

impl BitrateLadder {
    pub fn new(rates: Vec<Kbps>, segment_duration_s: f64, total_segments: u32) -> Result<Self> {
        if rates.is_empty() {
            return Err(SimError::Config("bitrate ladder is empty".into()));
        }
        if rates[0] == 0 {
            return Err(SimError::Config("ladder rates must be positive".into()));
        }
        if let Some(w) = rates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(SimError::Config(format!(
                "ladder rates must be strictly increasing ({} followed by {})",
                w[0], w[1]
            )));
        }
        if !(segment_duration_s > 0.0 && segment_duration_s.is_finite()) {
            return Err(SimError::Config(format!(
                "segment duration must be positive, got {segment_duration_s}"
            )));
        }
        if total_segments == 0 {
            return Err(SimError::Config("total_segments must be at least 1".into()));
        }
        Ok(Self { rates, segment_duration_s, total_segments })
    }

    pub fn rates(&self) -> &[Kbps] {
        &self.rates
    }

    pub fn segment_duration_s(&self) -> f64 {
        self.segment_duration_s
    }

    pub fn total_segments(&self) -> u32 {
        self.total_segments
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    pub fn lowest(&self) -> Kbps {
        self.rates[0]
    }

    pub fn highest(&self) -> Kbps {
        self.rates[self.rates.len() - 1]
    }

    pub fn rate_at(&self, level: usize) -> Kbps {
        self.rates[level.min(self.rates.len() - 1)]
    }

    /// Ladder index of `bitrate`, if it is one of the encoded rates.
    pub fn level_of(&self, bitrate: Kbps) -> Option<usize> {
        self.rates.binary_search(&bitrate).ok()
    }

    pub fn contains(&self, bitrate: Kbps) -> bool {
        self.level_of(bitrate).is_some()
    }

    /// Index of the highest rate not exceeding `bandwidth_kbps`, clamped to 0.
    pub fn fair_level(&self, bandwidth_kbps: f64) -> usize {
        // partition_point counts the rates <= bandwidth (NaN compares false -> 0).
        let n = self.rates.partition_point(|&r| f64::from(r) <= bandwidth_kbps);
        n.saturating_sub(1)
    }

    pub fn fair_bitrate(&self, bandwidth_kbps: f64) -> Kbps {
        self.rates[self.fair_level(bandwidth_kbps)]
    }

    pub fn validate(&self, seg: SegmentRef) -> Result<()> {
        if !self.contains(seg.bitrate_kbps) {
            return Err(SimError::InvalidSegment(format!(
                "bitrate {} kbps is not on the ladder",
                seg.bitrate_kbps
            )));
        }
        if seg.index == 0 || seg.index > self.total_segments {
            return Err(SimError::InvalidSegment(format!(
                "index {} outside 1..={}",
                seg.index, self.total_segments
            )));
        }
        Ok(())
    }

    pub fn segment_size(&self, seg: SegmentRef) -> Result<f64> {
        if !self.contains(seg.bitrate_kbps) {
            return Err(SimError::InvalidSegment(format!(
                "bitrate {} kbps is not on the ladder",
                seg.bitrate_kbps
            )));
        }
        Ok(f64::from(seg.bitrate_kbps) * self.segment_duration_s)
    }

    pub fn payload(&self, seg: SegmentRef) -> Result<SegmentPayload> {
        self.validate(seg)?;
        Ok(SegmentPayload { seg, size_kbit: self.segment_size(seg)? })
    }
}

impl Default for BitrateLadder {
    fn default() -> Self {
        Self {
            rates: DEFAULT_RATES_KBPS.to_vec(),
            segment_duration_s: DEFAULT_SEGMENT_DURATION_S,
            total_segments: DEFAULT_TOTAL_SEGMENTS,
        }
    }
}

/// Largest ladder rate not above `bandwidth_kbps`; the lowest rate when the
/// bandwidth is below every rung.
pub fn fair_bitrate(ladder: &BitrateLadder, bandwidth_kbps: f64) -> Kbps {
    ladder.fair_bitrate(bandwidth_kbps)
}

pub fn segment_size(ladder: &BitrateLadder, seg: SegmentRef) -> Result<f64> {
    ladder.segment_size(seg)
}

/// A segment at a 1-based index encoded at one ladder bitrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SegmentRef {
    pub index: u32,
    pub bitrate_kbps: Kbps,
}

impl SegmentRef {
    pub fn new(index: u32, bitrate_kbps: Kbps) -> Self {
        Self { index, bitrate_kbps }
    }
}

/// Synthetic segment body: only its size matters to the network model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentPayload {
    pub seg: SegmentRef,
    pub size_kbit: f64,
}
