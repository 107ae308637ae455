//! Codec for the proprietary `RIL_REQUEST_OEM_HOOK_RAW` frames that carry
//! UICC access between the telephony service and the baseband.
//!
//! Request frames share one layout, integers big-endian:
//!
//! ```text
//! | command (2) = 0x150X | length (2) = whole frame | parameters (n) |
//! ```
//!
//! | command | parameters                                  | length     |
//! |---------|---------------------------------------------|------------|
//! | 0x150D  | none (get ATR)                              | 4          |
//! | 0x1509  | AID                                         | 4 + n      |
//! | 0x150A  | channel id (4)                              | 8          |
//! | 0x1508  | CLA INS P1 P2 [P3 data]                     | 8 or 9 + n |
//! | 0x150B  | CLA INS P1 P2 P3 channel id (4) data        | 13 + n     |
//! | 0x150C  | CLA INS P1 P2 channel id (4)                | 12         |
//!
//! Responses have command-specific layouts (see the `*_response` functions)
//! or are a RIL error code.

pub mod trace;

use thiserror::Error;

pub use self::trace::{TraceEvent, TraceLog};

const HEADER_LEN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u16)]
pub enum OemCommandCode {
    ExchangeBasic = 0x1508,
    OpenChannel = 0x1509,
    CloseChannel = 0x150a,
    ExchangeLogicalWithP3 = 0x150b,
    ExchangeLogicalCase1 = 0x150c,
    GetAtr = 0x150d,
}

impl TryFrom<u16> for OemCommandCode {
    type Error = FrameError;

    fn try_from(code: u16) -> Result<Self, FrameError> {
        Ok(match code {
            0x1508 => Self::ExchangeBasic,
            0x1509 => Self::OpenChannel,
            0x150a => Self::CloseChannel,
            0x150b => Self::ExchangeLogicalWithP3,
            0x150c => Self::ExchangeLogicalCase1,
            0x150d => Self::GetAtr,
            other => return Err(FrameError::UnknownCommandCode(other)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("unknown OEM-hook command code {0:#06x}")]
    UnknownCommandCode(u16),
    #[error("length field says {declared} bytes, frame requires {actual}")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("truncated frame")]
    TruncatedFrame,
    #[error("frame of {0} bytes exceeds the 16-bit length field")]
    FrameTooLong(usize),
    #[error("exchange carries data but no P3 byte")]
    DataWithoutP3,
    #[error("channel id must be non-zero")]
    ZeroChannelId,
    #[error("channel id length {0} not in 1..=4")]
    InvalidIdLength(u8),
    #[error("{0} field longer than 255 bytes")]
    FieldTooLong(&'static str),
}

/// An APDU exchange request; `channel_id` 0 addresses the basic channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExchangeRequest {
    pub channel_id: u32,
    pub cla: u8,
    pub ins: u8,
    pub p1: u8,
    pub p2: u8,
    pub p3: Option<u8>,
    pub data: Vec<u8>,
}

impl ExchangeRequest {
    pub fn command_code(&self) -> OemCommandCode {
        match (self.channel_id, self.p3) {
            (0, _) => OemCommandCode::ExchangeBasic,
            (_, Some(_)) => OemCommandCode::ExchangeLogicalWithP3,
            (_, None) => OemCommandCode::ExchangeLogicalCase1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OemHookRequest {
    GetAtr,
    OpenChannel { aid: Vec<u8> },
    CloseChannel { channel_id: u32 },
    Exchange(ExchangeRequest),
}

impl OemHookRequest {
    pub fn command_code(&self) -> OemCommandCode {
        match self {
            Self::GetAtr => OemCommandCode::GetAtr,
            Self::OpenChannel { .. } => OemCommandCode::OpenChannel,
            Self::CloseChannel { .. } => OemCommandCode::CloseChannel,
            Self::Exchange(x) => x.command_code(),
        }
    }
}

pub fn encode_request(req: &OemHookRequest) -> Result<Vec<u8>, FrameError> {
    let mut params = Vec::new();
    match req {
        OemHookRequest::GetAtr => {}
        OemHookRequest::OpenChannel { aid } => params.extend_from_slice(aid),
        OemHookRequest::CloseChannel { channel_id } => {
            params.extend_from_slice(&channel_id.to_be_bytes())
        }
        OemHookRequest::Exchange(x) => {
            if x.p3.is_none() && !x.data.is_empty() {
                return Err(FrameError::DataWithoutP3);
            }
            params.extend_from_slice(&[x.cla, x.ins, x.p1, x.p2]);
            params.extend(x.p3);
            if x.channel_id != 0 {
                params.extend_from_slice(&x.channel_id.to_be_bytes());
            }
            params.extend_from_slice(&x.data);
        }
    }

    let total = HEADER_LEN + params.len();
    let length = u16::try_from(total).map_err(|_| FrameError::FrameTooLong(total))?;
    let mut frame = Vec::with_capacity(total);
    frame.extend_from_slice(&(req.command_code() as u16).to_be_bytes());
    frame.extend_from_slice(&length.to_be_bytes());
    frame.extend_from_slice(&params);
    Ok(frame)
}

fn be_u32(b: &[u8]) -> u32 {
    u32::from_be_bytes([b[0], b[1], b[2], b[3]])
}

fn nonzero_id(b: &[u8]) -> Result<u32, FrameError> {
    match be_u32(b) {
        0 => Err(FrameError::ZeroChannelId),
        id => Ok(id),
    }
}

pub fn decode_request(raw: &[u8]) -> Result<OemHookRequest, FrameError> {
    if raw.len() < HEADER_LEN {
        return Err(FrameError::TruncatedFrame);
    }
    let code = OemCommandCode::try_from(u16::from_be_bytes([raw[0], raw[1]]))?;
    let declared = usize::from(u16::from_be_bytes([raw[2], raw[3]]));
    if declared != raw.len() {
        return Err(FrameError::LengthMismatch {
            declared,
            actual: raw.len(),
        });
    }
    let exact = |want: usize| {
        if declared == want {
            Ok(())
        } else {
            Err(FrameError::LengthMismatch {
                declared,
                actual: want,
            })
        }
    };
    let at_least = |want: usize| {
        if declared >= want {
            Ok(())
        } else {
            Err(FrameError::LengthMismatch {
                declared,
                actual: want,
            })
        }
    };

    let p = &raw[HEADER_LEN..];
    Ok(match code {
        OemCommandCode::GetAtr => {
            exact(4)?;
            OemHookRequest::GetAtr
        }
        OemCommandCode::OpenChannel => OemHookRequest::OpenChannel { aid: p.to_vec() },
        OemCommandCode::CloseChannel => {
            exact(8)?;
            OemHookRequest::CloseChannel {
                channel_id: be_u32(p),
            }
        }
        OemCommandCode::ExchangeBasic => {
            at_least(8)?;
            OemHookRequest::Exchange(ExchangeRequest {
                channel_id: 0,
                cla: p[0],
                ins: p[1],
                p1: p[2],
                p2: p[3],
                p3: p.get(4).copied(),
                data: p.get(5..).unwrap_or_default().to_vec(),
            })
        }
        OemCommandCode::ExchangeLogicalWithP3 => {
            at_least(13)?;
            OemHookRequest::Exchange(ExchangeRequest {
                channel_id: nonzero_id(&p[5..9])?,
                cla: p[0],
                ins: p[1],
                p1: p[2],
                p2: p[3],
                p3: Some(p[4]),
                data: p[9..].to_vec(),
            })
        }
        OemCommandCode::ExchangeLogicalCase1 => {
            exact(12)?;
            OemHookRequest::Exchange(ExchangeRequest {
                channel_id: nonzero_id(&p[4..8])?,
                cla: p[0],
                ins: p[1],
                p1: p[2],
                p2: p[3],
                p3: None,
                data: Vec::new(),
            })
        }
    })
}

/// Modem-side ATR response: `len | 0x00 | atr`.
pub fn encode_atr_response(atr: &[u8]) -> Result<Vec<u8>, FrameError> {
    let len = u8::try_from(atr.len()).map_err(|_| FrameError::FieldTooLong("ATR"))?;
    let mut out = vec![len, 0x00];
    out.extend_from_slice(atr);
    Ok(out)
}

/// Decodes an ATR response. The second byte has no known meaning and is
/// skipped; a zero length yields `None`.
pub fn decode_atr_response(raw: &[u8]) -> Result<Option<Vec<u8>>, FrameError> {
    let (&len, _) = raw.split_first().ok_or(FrameError::TruncatedFrame)?;
    let end = 2 + usize::from(len);
    if raw.len() < end {
        return Err(FrameError::TruncatedFrame);
    }
    Ok((len > 0).then(|| raw[2..end].to_vec()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpenChannelResponse {
    pub channel_id: u32,
    pub select_response: Option<Vec<u8>>,
}

/// Modem-side open response: `idLen | id (little-endian) | selLen | select`.
/// The id field uses as few bytes as the value needs.
pub fn encode_open_response(resp: &OpenChannelResponse) -> Result<Vec<u8>, FrameError> {
    if resp.channel_id == 0 {
        return Err(FrameError::ZeroChannelId);
    }
    let select = resp.select_response.as_deref().unwrap_or_default();
    let sel_len =
        u8::try_from(select.len()).map_err(|_| FrameError::FieldTooLong("SELECT response"))?;
    let id_bytes = resp.channel_id.to_le_bytes();
    let id_len = 4 - resp.channel_id.leading_zeros() as usize / 8;

    let mut out = Vec::with_capacity(2 + id_len + select.len());
    out.push(id_len as u8);
    out.extend_from_slice(&id_bytes[..id_len]);
    out.push(sel_len);
    out.extend_from_slice(select);
    Ok(out)
}

pub fn decode_open_response(raw: &[u8]) -> Result<OpenChannelResponse, FrameError> {
    let (&id_len, _) = raw.split_first().ok_or(FrameError::TruncatedFrame)?;
    if !(1..=4).contains(&id_len) {
        return Err(FrameError::InvalidIdLength(id_len));
    }
    let id_len = usize::from(id_len);
    let sel_len = *raw.get(id_len + 1).ok_or(FrameError::TruncatedFrame)?;
    let start = id_len + 2;
    let select = raw
        .get(start..start + usize::from(sel_len))
        .ok_or(FrameError::TruncatedFrame)?;

    // raw[1] is the least significant byte.
    let channel_id = raw[1..=id_len]
        .iter()
        .rev()
        .fold(0u32, |acc, &b| acc << 8 | u32::from(b));
    if channel_id == 0 {
        return Err(FrameError::ZeroChannelId);
    }
    Ok(OpenChannelResponse {
        channel_id,
        select_response: (sel_len > 0).then(|| select.to_vec()),
    })
}

/// RIL error codes as returned by this baseband (the corrected numbering).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RilError {
    InvalidParameter,
    NoSuchElement,
    MissingResource,
    GenericFailure,
}

impl RilError {
    pub fn code(self) -> i32 {
        match self {
            Self::InvalidParameter => 27,
            Self::NoSuchElement => 29,
            Self::MissingResource => 30,
            Self::GenericFailure => 2,
        }
    }

    /// Upper-case constant name, as printed in traces.
    pub fn name(self) -> &'static str {
        match self {
            Self::InvalidParameter => "INVALID_PARAMETER",
            Self::NoSuchElement => "NO_SUCH_ELEMENT",
            Self::MissingResource => "MISSING_RESOURCE",
            Self::GenericFailure => "GENERIC_FAILURE",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [
            Self::InvalidParameter,
            Self::NoSuchElement,
            Self::MissingResource,
            Self::GenericFailure,
        ]
        .into_iter()
        .find(|e| e.name() == name)
    }
}

impl std::fmt::Display for RilError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::error::Error for RilError {}

pub fn map_ril_error(code: i32) -> RilError {
    match code {
        27 => RilError::InvalidParameter,
        29 => RilError::NoSuchElement,
        30 => RilError::MissingResource,
        _ => RilError::GenericFailure,
    }
}
