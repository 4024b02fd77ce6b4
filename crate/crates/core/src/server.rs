//! HTTP/2 origin: answers a segment request and promises the next k-1
//! segments of the same bitrate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::media::{BitrateLadder, SegmentPayload, SegmentRef};

pub type Headers = BTreeMap<String, String>;

/// Segments delivered per request (k). `k = 1` is plain pull.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PushPolicy {
    k: u32,
}

impl PushPolicy {
    pub fn new(k: u32) -> Result<Self> {
        if k == 0 {
            return Err(SimError::Config("push policy k must be at least 1".into()));
        }
        Ok(Self { k })
    }

    pub fn k(&self) -> u32 {
        self.k
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentRequest {
    pub seg: SegmentRef,
    pub headers: Headers,
}

impl SegmentRequest {
    pub fn new(seg: SegmentRef) -> Self {
        Self { seg, headers: Headers::new() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerResponse {
    pub lead: SegmentPayload,
    /// Promised payloads in delivery order, one PUSH_PROMISE each.
    pub promises: Vec<SegmentPayload>,
    pub headers: Headers,
}

/// Serves `request` and promises `min(k-1, total - index)` following segments.
/// Headers on the request are echoed onto the response unchanged.
pub fn serve_request(
    ladder: &BitrateLadder,
    request: &SegmentRequest,
    policy: PushPolicy,
) -> Result<ServerResponse> {
    let seg = request.seg;
    let total = ladder.total_segments();
    if seg.index == 0 || seg.index > total {
        return Err(SimError::NotFound { index: seg.index, total });
    }
    let lead = ladder.payload(seg)?;
    let last = seg.index.saturating_add(policy.k() - 1).min(total);
    let promises = (seg.index + 1..=last)
        .map(|i| ladder.payload(SegmentRef::new(i, seg.bitrate_kbps)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ServerResponse { lead, promises, headers: request.headers.clone() })
}
