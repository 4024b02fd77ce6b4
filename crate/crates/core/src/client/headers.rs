//! Header protocol between client and proxy.

use crate::error::{Result, SimError};
use crate::media::{BitrateLadder, Kbps};
use crate::server::Headers;

/// Request header carrying the client's buffer level in seconds.
pub const BUFFER_LEVEL_HEADER: &str = "x-buffer-level";
/// Response header announcing the bitrate the proxy imposed on this cycle.
pub const OVERWRITE_NOTICE_HEADER: &str = "x-fauras-bitrate";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BufferReportHeader {
    pub level_s: f64,
}

impl BufferReportHeader {
    pub fn value(&self) -> String {
        format!("{:.3}", self.level_s)
    }

    pub fn insert_into(&self, headers: &mut Headers) {
        headers.insert(BUFFER_LEVEL_HEADER.to_string(), self.value());
    }

    /// `Ok(None)` when absent; an error when present but unparsable.
    pub fn parse(headers: &Headers) -> Result<Option<Self>> {
        let Some(raw) = headers.get(BUFFER_LEVEL_HEADER) else {
            return Ok(None);
        };
        let level_s: f64 = raw
            .trim()
            .parse()
            .map_err(|_| SimError::Protocol(format!("bad {BUFFER_LEVEL_HEADER} value {raw:?}")))?;
        if !(level_s >= 0.0 && level_s.is_finite()) {
            return Err(SimError::Protocol(format!("negative {BUFFER_LEVEL_HEADER} value {raw:?}")));
        }
        Ok(Some(Self { level_s }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OverwriteNoticeHeader {
    pub bitrate_kbps: Kbps,
}

impl OverwriteNoticeHeader {
    pub fn value(&self) -> String {
        self.bitrate_kbps.to_string()
    }

    pub fn insert_into(&self, headers: &mut Headers) {
        headers.insert(OVERWRITE_NOTICE_HEADER.to_string(), self.value());
    }

    /// Reads the notice and checks it names a ladder rate.
    pub fn parse(headers: &Headers, ladder: &BitrateLadder) -> Result<Option<Self>> {
        let Some(raw) = headers.get(OVERWRITE_NOTICE_HEADER) else {
            return Ok(None);
        };
        let bitrate_kbps: Kbps = raw
            .trim()
            .parse()
            .map_err(|_| SimError::Protocol(format!("bad {OVERWRITE_NOTICE_HEADER} value {raw:?}")))?;
        if !ladder.contains(bitrate_kbps) {
            return Err(SimError::Protocol(format!(
                "{OVERWRITE_NOTICE_HEADER} names {bitrate_kbps} kbps, not a ladder rate"
            )));
        }
        Ok(Some(Self { bitrate_kbps }))
    }
}
