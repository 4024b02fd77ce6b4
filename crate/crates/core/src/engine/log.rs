use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ClientId;
use crate::error::{Result, SimError};
use crate::media::Kbps;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    RequestSent,
    RequestRewritten,
    ResponseStarted,
    ResponseDone,
    PushPromiseReceived,
    PushPayloadDone,
    PushDiscarded,
    PlaybackStart,
    PlaybackStall,
    PlaybackResume,
    SegmentPlayed,
    ClientJoin,
    ClientLeave,
    SliceUpdate,
}

impl EventKind {
    pub const ALL: [EventKind; 14] = [
        EventKind::RequestSent,
        EventKind::RequestRewritten,
        EventKind::ResponseStarted,
        EventKind::ResponseDone,
        EventKind::PushPromiseReceived,
        EventKind::PushPayloadDone,
        EventKind::PushDiscarded,
        EventKind::PlaybackStart,
        EventKind::PlaybackStall,
        EventKind::PlaybackResume,
        EventKind::SegmentPlayed,
        EventKind::ClientJoin,
        EventKind::ClientLeave,
        EventKind::SliceUpdate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::RequestSent => "request_sent",
            EventKind::RequestRewritten => "request_rewritten",
            EventKind::ResponseStarted => "response_started",
            EventKind::ResponseDone => "response_done",
            EventKind::PushPromiseReceived => "push_promise_received",
            EventKind::PushPayloadDone => "push_payload_done",
            EventKind::PushDiscarded => "push_discarded",
            EventKind::PlaybackStart => "playback_start",
            EventKind::PlaybackStall => "playback_stall",
            EventKind::PlaybackResume => "playback_resume",
            EventKind::SegmentPlayed => "segment_played",
            EventKind::ClientJoin => "client_join",
            EventKind::ClientLeave => "client_leave",
            EventKind::SliceUpdate => "slice_update",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        EventKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| SimError::InvalidInput(format!("unknown event kind {s:?}")))
    }
}

/// Optional per-event payload. Which fields are set depends on the kind.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventDetail {
    pub segment_index: Option<u32>,
    pub bitrate_kbps: Option<Kbps>,
    pub buffer_s: Option<f64>,
    pub extra: String,
}

impl EventDetail {
    pub fn segment(index: u32, bitrate: Kbps) -> Self {
        Self { segment_index: Some(index), bitrate_kbps: Some(bitrate), ..Self::default() }
    }

    pub fn with_buffer(mut self, buffer_s: f64) -> Self {
        self.buffer_s = Some(buffer_s);
        self
    }

    pub fn with_extra(mut self, extra: impl Into<String>) -> Self {
        self.extra = extra.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub seq: u64,
    pub time_s: f64,
    pub client: ClientId,
    pub kind: EventKind,
    #[serde(flatten)]
    pub detail: EventDetail,
}

/// Append-only record of a run, sorted by (time, seq).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub client_names: Vec<String>,
    events: Vec<SimEvent>,
}

const CSV_HEADER: [&str; 7] =
    ["time_s", "client_id", "kind", "segment_index", "bitrate_kbps", "buffer_s", "extra"];

impl EventLog {
    pub fn new(client_names: Vec<String>) -> Self {
        Self { client_names, events: Vec::new() }
    }

    pub fn push(&mut self, time_s: f64, client: ClientId, kind: EventKind, detail: EventDetail) {
        debug_assert!(
            self.events.last().is_none_or(|e| e.time_s <= time_s),
            "event log out of order"
        );
        let seq = self.events.len() as u64;
        self.events.push(SimEvent { seq, time_s, client, kind, detail });
    }

    pub fn events(&self) -> &[SimEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn client_name(&self, client: ClientId) -> &str {
        self.client_names.get(client.index()).map(String::as_str).unwrap_or("?")
    }

    pub fn client_by_name(&self, name: &str) -> Option<ClientId> {
        self.client_names.iter().position(|n| n == name).map(|i| ClientId(i as u32))
    }

    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &SimEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn for_client(&self, client: ClientId) -> impl Iterator<Item = &SimEvent> {
        self.events.iter().filter(move |e| e.client == client)
    }

    pub fn end_time(&self) -> f64 {
        self.events.last().map_or(0.0, |e| e.time_s)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(CSV_HEADER)?;
        for e in &self.events {
            out.write_record([
                format!("{:.6}", e.time_s),
                self.client_name(e.client).to_string(),
                e.kind.as_str().to_string(),
                e.detail.segment_index.map(|v| v.to_string()).unwrap_or_default(),
                e.detail.bitrate_kbps.map(|v| v.to_string()).unwrap_or_default(),
                e.detail.buffer_s.map(|v| format!("{v:.3}")).unwrap_or_default(),
                e.detail.extra.clone(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| SimError::Internal(e.to_string()))
    }

    /// Parses a log written by [`EventLog::write_csv`]. Client ids are
    /// assigned in order of first appearance.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut log = EventLog::default();
        for rec in rdr.records() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).unwrap_or("");
            let parse_err = |what: &str| SimError::InvalidInput(format!("bad {what} in {rec:?}"));
            let time_s: f64 = field(0).parse().map_err(|_| parse_err("time_s"))?;
            let name = field(1);
            let client = match log.client_by_name(name) {
                Some(c) => c,
                None => {
                    log.client_names.push(name.to_string());
                    ClientId(log.client_names.len() as u32 - 1)
                }
            };
            let kind: EventKind = field(2).parse()?;
            fn opt(s: &str) -> Option<&str> {
                if s.is_empty() { None } else { Some(s) }
            }
            let detail = EventDetail {
                segment_index: opt(field(3))
                    .map(str::parse)
                    .transpose()
                    .map_err(|_| parse_err("segment_index"))?,
                bitrate_kbps: opt(field(4))
                    .map(str::parse)
                    .transpose()
                    .map_err(|_| parse_err("bitrate_kbps"))?,
                buffer_s: opt(field(5)).map(str::parse).transpose().map_err(|_| parse_err("buffer_s"))?,
                extra: field(6).to_string(),
            };
            log.push(time_s, client, kind, detail);
        }
        Ok(log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut log = EventLog::new(vec!["a1".into()]);
        log.push(
            0.25,
            ClientId(0),
            EventKind::RequestSent,
            EventDetail::segment(3, 838).with_buffer(4.5),
        );
        log.push(0.5, ClientId(0), EventKind::SliceUpdate, EventDetail::default().with_extra("1000"));
        let csv = log.to_csv_string().unwrap();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "time_s,client_id,kind,segment_index,bitrate_kbps,buffer_s,extra");
        assert_eq!(lines[1], "0.250000,a1,request_sent,3,838,4.500,");
        assert_eq!(lines[2], "0.500000,a1,slice_update,,,,1000");
    }

    #[test]
    fn kinds_round_trip_through_names() {
        for k in EventKind::ALL {
            assert_eq!(k.as_str().parse::<EventKind>().unwrap(), k);
        }
        assert!("bogus".parse::<EventKind>().is_err());
    }

    #[test]
    fn csv_read_back() {
        let mut log = EventLog::new(vec!["a1".into(), "a2".into()]);
        log.push(1.0, ClientId(1), EventKind::ClientJoin, EventDetail::default());
        log.push(2.0, ClientId(0), EventKind::ResponseDone, EventDetail::segment(1, 99));
        let back = EventLog::read_csv(log.to_csv_string().unwrap().as_bytes()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.client_name(back.events()[0].client), "a2");
        assert_eq!(back.events()[1].detail, EventDetail::segment(1, 99));
    }
}
