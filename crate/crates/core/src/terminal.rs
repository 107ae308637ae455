//! The provider contract a secure element slot implements for the transport
//! layer. One contract covers both the legacy add-on method set and the
//! later service method set (SIM I/O and state-change notification).

use std::sync::mpsc::Receiver;

use thiserror::Error;

use crate::modem::SimState;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TerminalError {
    #[error("NoSuchElement")]
    NoSuchElement,
    #[error("MissingResource")]
    MissingResource,
    #[error("InvalidParameter")]
    InvalidParameter,
    #[error("IoError: {0}")]
    IoError(String),
    #[error("UnsupportedOperation")]
    UnsupportedOperation,
}

impl TerminalError {
    pub fn name(&self) -> &'static str {
        match self {
            Self::NoSuchElement => "NoSuchElement",
            Self::MissingResource => "MissingResource",
            Self::InvalidParameter => "InvalidParameter",
            Self::IoError(_) => "IoError",
            Self::UnsupportedOperation => "UnsupportedOperation",
        }
    }

    /// Translation of the telephony service's `last_error` after a failed
    /// call. Total: unknown codes are I/O errors.
    pub fn from_last_error(code: i32) -> Self {
        match code {
            2 => Self::MissingResource,
            3 => Self::NoSuchElement,
            5 => Self::InvalidParameter,
            other => Self::IoError(format!("telephony error {other}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpenedChannel {
    /// ISO channel number, 1 to 3.
    pub number: u8,
    pub select_response: Option<Vec<u8>>,
}

pub trait Terminal: Send {
    fn name(&self) -> &str;

    fn is_card_present(&self) -> bool;

    fn atr(&mut self) -> Option<Vec<u8>>;

    /// Called before the first session on this terminal.
    fn connect(&mut self) -> Result<(), TerminalError> {
        Ok(())
    }

    /// Called after the last channel on this terminal closes.
    fn disconnect(&mut self) {}

    /// Opens a logical channel and selects `aid` on it. `None` asks for a
    /// channel without selection.
    fn open_logical_channel(&mut self, aid: Option<&[u8]>) -> Result<OpenedChannel, TerminalError>;

    /// Sends a command APDU whose CLA already carries the channel number and
    /// returns the response data followed by the status word.
    fn transmit(&mut self, command: &[u8]) -> Result<Vec<u8>, TerminalError>;

    fn close_logical_channel(&mut self, number: u8) -> Result<(), TerminalError>;

    /// SELECT response recorded when channel `number` was opened.
    fn select_response(&self, number: u8) -> Option<Vec<u8>>;

    fn sim_io_exchange(&mut self, file_id: u16, path: &str, cmd: &[u8]) -> Result<Vec<u8>, TerminalError>;

    /// A fresh stream of card state transitions.
    fn state_changes(&self) -> Receiver<SimState>;
}
