//! One streaming client: rate adaptation, play-out buffer, push cache and the
//! header protocol, driven by the engine as a state machine.

mod abr;
mod buffer;
mod cache;
mod headers;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{ClientId, SimRng};
use crate::error::{Result, SimError};
use crate::media::{BitrateLadder, Kbps, SegmentPayload, SegmentRef};
use crate::server::{SegmentRequest, ServerResponse};

pub use abr::{harmonic_mean, select_bitrate, AbrMode, AbrParams, AbrState};
pub use buffer::{BufferEvent, PlayoutBuffer};
pub use cache::{CacheEntry, PushCache, RequestId};
pub use headers::{BufferReportHeader, OverwriteNoticeHeader, BUFFER_LEVEL_HEADER, OVERWRITE_NOTICE_HEADER};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientConfig {
    /// Segments per push cycle.
    pub k: u32,
    pub buffer_max_s: f64,
    pub startup_threshold_s: f64,
    pub resume_threshold_s: f64,
    pub abr: AbrParams,
    /// Whether the client honours overwrite notices. Off models an
    /// unmodified client.
    pub notices_enabled: bool,
}

impl ClientConfig {
    pub fn defaults_for(ladder: &BitrateLadder, k: u32) -> Self {
        let l = ladder.segment_duration_s();
        Self {
            k,
            buffer_max_s: 10.0,
            startup_threshold_s: 2.0 * l,
            resume_threshold_s: 2.0 * l,
            abr: AbrParams::default(),
            notices_enabled: true,
        }
    }
}

/// What the client wants to do next.
#[derive(Debug, Clone, PartialEq)]
pub enum FetchAction {
    /// A cached push was moved into the buffer.
    ConsumeFromCache { seg: SegmentRef, buffer_event: Option<BufferEvent> },
    /// A cached push did not carry the expected bitrate and was dropped.
    Discard { seg: SegmentRef, in_flight: bool },
    /// The needed segment is being pushed; resume when it completes.
    AwaitPush { index: u32 },
    /// A request is outstanding.
    AwaitResponse,
    SendRequest { id: RequestId, request: SegmentRequest },
    /// Nothing to do for this many seconds.
    Wait { dt_s: f64 },
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Outstanding {
    id: RequestId,
    seg: SegmentRef,
    response_started: bool,
}

/// Throughput bookkeeping for one request: lead plus its pushes.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Track {
    sent_at_s: f64,
    kbit: f64,
    last_done_s: f64,
    open: u32,
}

pub struct ClientSession {
    id: ClientId,
    ladder: BitrateLadder,
    config: ClientConfig,
    abr: AbrState,
    buffer: PlayoutBuffer,
    cache: PushCache,
    rng: SimRng,
    next_index: u32,
    cycle_bitrate: Kbps,
    cycle_remaining: u32,
    outstanding: Option<Outstanding>,
    tracks: BTreeMap<RequestId, Track>,
    next_request: u64,
}

impl ClientSession {
    pub fn new(id: ClientId, ladder: BitrateLadder, config: ClientConfig, rng: SimRng) -> Result<Self> {
        if config.k == 0 {
            return Err(SimError::Config("push cycle length k must be at least 1".into()));
        }
        config.abr.validate(&ladder)?;
        let l = ladder.segment_duration_s();
        for (name, v) in [("startup", config.startup_threshold_s), ("resume", config.resume_threshold_s)] {
            if v > config.buffer_max_s - l + 1e-9 {
                return Err(SimError::Config(format!(
                    "{name} threshold {v} s leaves no room for a segment below buffer max {} s",
                    config.buffer_max_s
                )));
            }
        }
        let buffer = PlayoutBuffer::new(
            config.buffer_max_s,
            l,
            config.startup_threshold_s,
            config.resume_threshold_s,
            ladder.total_segments(),
        )?;
        Ok(Self {
            id,
            cycle_bitrate: ladder.lowest(),
            ladder,
            config,
            abr: AbrState::new(config.abr),
            buffer,
            cache: PushCache::new(),
            rng,
            next_index: 1,
            cycle_remaining: 0,
            outstanding: None,
            tracks: BTreeMap::new(),
            next_request: 0,
        })
    }

    pub fn id(&self) -> ClientId {
        self.id
    }

    pub fn buffer(&self) -> &PlayoutBuffer {
        &self.buffer
    }

    pub fn buffer_mut(&mut self) -> &mut PlayoutBuffer {
        &mut self.buffer
    }

    pub fn abr(&self) -> &AbrState {
        &self.abr
    }

    pub fn cache(&self) -> &PushCache {
        &self.cache
    }

    /// Index of the next segment the buffer needs.
    pub fn next_index(&self) -> u32 {
        self.next_index
    }

    pub fn delivered(&self) -> u32 {
        self.next_index - 1
    }

    pub fn all_delivered(&self) -> bool {
        self.next_index > self.ladder.total_segments()
    }

    pub fn cycle_bitrate(&self) -> Kbps {
        self.cycle_bitrate
    }

    /// Decides how to obtain the next segment. Call repeatedly until a
    /// blocking action (await, wait, send, done) comes back.
    pub fn next_fetch(&mut self, now_s: f64) -> Result<FetchAction> {
        if self.all_delivered() {
            return Ok(FetchAction::Done);
        }
        if self.outstanding.is_some() {
            return Ok(FetchAction::AwaitResponse);
        }
        let index = self.next_index;
        if let Some(entry) = self.cache.get(index).copied() {
            if !entry.matches_expectation() {
                self.cache.remove(index);
                if !entry.complete {
                    self.resolve_payload(entry.origin, None)?;
                }
                return Ok(FetchAction::Discard {
                    seg: SegmentRef::new(index, entry.bitrate_kbps),
                    in_flight: !entry.complete,
                });
            }
            if !entry.complete {
                return Ok(FetchAction::AwaitPush { index });
            }
            if let Some(dt_s) = self.room_wait()? {
                return Ok(FetchAction::Wait { dt_s });
            }
            self.cache.remove(index);
            let buffer_event = self.deliver()?;
            return Ok(FetchAction::ConsumeFromCache {
                seg: SegmentRef::new(index, entry.bitrate_kbps),
                buffer_event,
            });
        }
        if let Some(dt_s) = self.room_wait()? {
            // Randomized start offset, drawn once per wait.
            let jitter = self.rng.random::<f64>() * self.ladder.segment_duration_s();
            return Ok(FetchAction::Wait { dt_s: dt_s + jitter });
        }
        let bitrate = if self.cycle_remaining == 0 {
            self.abr.clear_forced();
            let estimate = self.abr.estimate();
            let b = select_bitrate(&mut self.abr, &self.ladder, estimate);
            self.cycle_bitrate = b;
            self.cycle_remaining = self.config.k;
            b
        } else {
            self.abr.forced().unwrap_or(self.cycle_bitrate)
        };
        let seg = SegmentRef::new(index, bitrate);
        let id = RequestId(self.next_request);
        self.next_request += 1;
        let mut request = SegmentRequest::new(seg);
        BufferReportHeader { level_s: self.buffer.level_s() }.insert_into(&mut request.headers);
        self.outstanding = Some(Outstanding { id, seg, response_started: false });
        self.tracks.insert(id, Track { sent_at_s: now_s, kbit: 0.0, last_done_s: now_s, open: 1 });
        Ok(FetchAction::SendRequest { id, request })
    }

    fn room_wait(&self) -> Result<Option<f64>> {
        match self.buffer.time_until_room() {
            Some(dt) if dt <= 0.0 => Ok(None),
            Some(dt) => Ok(Some(dt)),
            None => Err(SimError::Internal(format!(
                "client {} has a full buffer with playback paused",
                self.id.0
            ))),
        }
    }

    fn deliver(&mut self) -> Result<Option<BufferEvent>> {
        let ev = self.buffer.add_segment()?;
        self.next_index += 1;
        self.cycle_remaining = self.cycle_remaining.saturating_sub(1);
        Ok(ev)
    }

    /// Response headers and PUSH_PROMISE frames for the outstanding request
    /// have arrived. Returns pushes evicted from the cache by the new promises.
    pub fn on_response_start(&mut self, id: RequestId, response: &ServerResponse) -> Result<Vec<CacheEntry>> {
        let out = self.outstanding_for(id)?;
        if out.response_started {
            return Err(SimError::Protocol(format!("duplicate response for request {}", id.0)));
        }
        if response.lead.seg.index != out.seg.index {
            return Err(SimError::Protocol(format!(
                "response carries segment {} for a request of segment {}",
                response.lead.seg.index, out.seg.index
            )));
        }
        let mut expected = out.seg.bitrate_kbps;
        if self.config.notices_enabled {
            if let Some(notice) = OverwriteNoticeHeader::parse(&response.headers, &self.ladder)? {
                self.abr.force(&self.ladder, notice.bitrate_kbps)?;
                self.cycle_bitrate = notice.bitrate_kbps;
                expected = notice.bitrate_kbps;
            }
        }
        let mut evicted = Vec::new();
        for p in &response.promises {
            let entry = CacheEntry {
                bitrate_kbps: p.seg.bitrate_kbps,
                expected_kbps: expected,
                size_kbit: p.size_kbit,
                complete: false,
                origin: id,
            };
            if let Some(old) = self.cache.insert(p.seg.index, entry) {
                if !old.complete {
                    self.resolve_payload(old.origin, None)?;
                }
                evicted.push(old);
            }
        }
        if let Some(t) = self.tracks.get_mut(&id) {
            t.open += response.promises.len() as u32;
        }
        if let Some(o) = self.outstanding.as_mut() {
            o.response_started = true;
        }
        Ok(evicted)
    }

    /// The lead payload finished downloading; it goes straight to the buffer.
    pub fn on_lead_done(&mut self, id: RequestId, payload: SegmentPayload, now_s: f64) -> Result<Option<BufferEvent>> {
        let out = self.outstanding_for(id)?;
        if !out.response_started || payload.seg.index != out.seg.index {
            return Err(SimError::Protocol(format!("unexpected lead payload for request {}", id.0)));
        }
        self.outstanding = None;
        let ev = self.deliver()?;
        self.resolve_payload(id, Some((payload.size_kbit, now_s)))?;
        Ok(ev)
    }

    /// A pushed payload finished. Returns false if it had already been
    /// discarded or replaced.
    pub fn on_push_done(&mut self, origin: RequestId, payload: SegmentPayload, now_s: f64) -> Result<bool> {
        if !self.cache.mark_complete(payload.seg.index, origin) {
            return Ok(false);
        }
        self.resolve_payload(origin, Some((payload.size_kbit, now_s)))?;
        Ok(true)
    }

    fn outstanding_for(&self, id: RequestId) -> Result<Outstanding> {
        match self.outstanding {
            Some(o) if o.id == id => Ok(o),
            _ => Err(SimError::Protocol(format!(
                "client {} got a response for unknown request {}",
                self.id.0, id.0
            ))),
        }
    }

    /// Closes one payload of a request; `done` carries its size and finish
    /// time when it was received. The request's throughput sample is
    /// recorded once nothing of it remains open.
    fn resolve_payload(&mut self, id: RequestId, done: Option<(f64, f64)>) -> Result<()> {
        let t = self
            .tracks
            .get_mut(&id)
            .ok_or_else(|| SimError::Internal(format!("no throughput track for request {}", id.0)))?;
        if let Some((kbit, at)) = done {
            t.kbit += kbit;
            t.last_done_s = t.last_done_s.max(at);
        }
        t.open = t.open.saturating_sub(1);
        if t.open == 0 {
            let t = self.tracks.remove(&id).expect("track present");
            let elapsed = t.last_done_s - t.sent_at_s;
            if t.kbit > 0.0 && elapsed > 0.0 {
                self.abr.record_sample(t.kbit / elapsed);
            }
        }
        Ok(())
    }
}
