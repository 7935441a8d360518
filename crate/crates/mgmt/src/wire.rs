//! Agent/center frame protocol: a 4-byte big-endian length prefix followed
//! by a UTF-8 JSON object tagged with `kind`. Unknown fields are ignored.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use irs_core::checks::LocalCheckResult;
use irs_core::decision::CentralDecision;
use irs_core::ladder::Strategy;
use irs_core::{Action, FaultEvent, ReportedState, SimTime, V2iMessage, Version};
use serde::{Deserialize, Serialize};

use crate::agent::AgentState;
use crate::archive::{ArchiveError, PackageArchive};

pub const MAX_FRAME: usize = 16 << 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveBlob {
    pub name: String,
    pub version: Version,
    /// Base64 of the ZIP bytes.
    pub zip: String,
}

impl ArchiveBlob {
    pub fn from_bytes(name: &str, version: Version, zip: &[u8]) -> Self {
        ArchiveBlob {
            name: name.into(),
            version,
            zip: B64.encode(zip),
        }
    }

    pub fn bytes(&self) -> Result<Vec<u8>, ArchiveError> {
        B64.decode(&self.zip).map_err(|e| ArchiveError::Zip(e.to_string()))
    }

    pub fn archive(&self) -> Result<PackageArchive, ArchiveError> {
        PackageArchive::from_zip(&self.bytes()?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Frame {
    Hello {
        station: String,
        hardware_id: String,
        sent_at: SimTime,
        state: AgentState,
        reported: ReportedState,
    },
    /// The center's answer to a report that needs no action.
    Heartbeat {
        station: String,
        revision: u64,
        sent_at: SimTime,
    },
    Report {
        station: String,
        seq: u64,
        sent_at: SimTime,
        state: AgentState,
        reported: ReportedState,
        #[serde(default)]
        checks: Vec<LocalCheckResult>,
    },
    Actions {
        station: String,
        revision: u64,
        actions: Vec<Action>,
        #[serde(default)]
        archives: Vec<ArchiveBlob>,
        /// Broadcast messages for the station's store-and-forward buffer.
        #[serde(default)]
        v2i: Vec<V2iMessage>,
    },
    Fault {
        event: FaultEvent,
        #[serde(default)]
        strategy: Option<Strategy>,
    },
    Decision {
        station: String,
        subject: String,
        decision: CentralDecision,
    },
    Ping {
        nonce: u64,
        sent_at: SimTime,
    },
    Pong {
        nonce: u64,
        sent_at: SimTime,
    },
}

impl Frame {
    pub fn kind(&self) -> &'static str {
        match self {
            Frame::Hello { .. } => "HELLO",
            Frame::Heartbeat { .. } => "HEARTBEAT",
            Frame::Report { .. } => "REPORT",
            Frame::Actions { .. } => "ACTIONS",
            Frame::Fault { .. } => "FAULT",
            Frame::Decision { .. } => "DECISION",
            Frame::Ping { .. } => "PING",
            Frame::Pong { .. } => "PONG",
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let body = serde_json::to_vec(self).expect("frames serialize");
        let mut out = Vec::with_capacity(body.len() + 4);
        out.extend_from_slice(&(body.len() as u32).to_be_bytes());
        out.extend_from_slice(&body);
        out
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("frame of {0} bytes exceeds the limit")]
    TooLarge(usize),
    #[error("bad frame body: {0}")]
    Body(String),
}

/// Reassembles frames from an arbitrarily chunked byte stream.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// `Ok(None)` until a complete frame is buffered.
    pub fn next_frame(&mut self) -> Result<Option<Frame>, WireError> {
        if self.buf.len() < 4 {
            return Ok(None);
        }
        let len = u32::from_be_bytes(self.buf[..4].try_into().expect("4 bytes")) as usize;
        if len > MAX_FRAME {
            return Err(WireError::TooLarge(len));
        }
        if self.buf.len() < 4 + len {
            return Ok(None);
        }
        let frame = serde_json::from_slice(&self.buf[4..4 + len]).map_err(|e| WireError::Body(e.to_string()));
        self.buf.drain(..4 + len);
        frame.map(Some)
    }
}

/// Decodes exactly one whole frame.
pub fn decode(bytes: &[u8]) -> Result<Frame, WireError> {
    let mut d = FrameDecoder::new();
    d.push(bytes);
    match d.next_frame()? {
        Some(f) if d.buf.is_empty() => Ok(f),
        Some(_) => Err(WireError::Body("trailing bytes".into())),
        None => Err(WireError::Body("truncated frame".into())),
    }
}
