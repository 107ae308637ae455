//! Wire trace of OEM-hook traffic.
//!
//! One event per line: `>> <hex>` for a request frame, `<< <hex>` for a
//! response payload (bare `<<` when empty) and `!! <ERROR_NAME>` for a RIL
//! error.

use std::fmt;
use std::sync::{Arc, Mutex};

use super::RilError;
use crate::apdu::{bytes_to_hex, hex_to_bytes};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceEvent {
    Request(Vec<u8>),
    Response(Vec<u8>),
    Error(RilError),
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Request(frame) => write!(f, ">> {}", bytes_to_hex(frame)),
            Self::Response(payload) if payload.is_empty() => f.write_str("<<"),
            Self::Response(payload) => write!(f, "<< {}", bytes_to_hex(payload)),
            Self::Error(err) => write!(f, "!! {}", err.name()),
        }
    }
}

impl TraceEvent {
    pub fn parse_line(line: &str) -> Option<Self> {
        let line = line.trim_end();
        if line == "<<" {
            return Some(Self::Response(Vec::new()));
        }
        let (marker, rest) = line.split_once(' ')?;
        match marker {
            ">>" => hex_to_bytes(rest).ok().map(Self::Request),
            "<<" => hex_to_bytes(rest).ok().map(Self::Response),
            "!!" => RilError::from_name(rest).map(Self::Error),
            _ => None,
        }
    }
}

/// Shared, append-only trace buffer. Clones share the same buffer.
#[derive(Debug, Clone, Default)]
pub struct TraceLog {
    events: Arc<Mutex<Vec<TraceEvent>>>,
}

impl TraceLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, event: TraceEvent) {
        self.events.lock().unwrap().push(event);
    }

    pub fn snapshot(&self) -> Vec<TraceEvent> {
        self.events.lock().unwrap().clone()
    }

    /// Removes and returns everything recorded so far.
    pub fn drain(&self) -> Vec<TraceEvent> {
        std::mem::take(&mut *self.events.lock().unwrap())
    }

    pub fn render(&self) -> String {
        self.snapshot()
            .iter()
            .map(|e| format!("{e}\n"))
            .collect()
    }
}
