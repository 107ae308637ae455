//! ISO 7816-4 short APDUs: parsing, case classification, CLA channel coding,
//! status-word semantics and the telephony argument mapping.
//!
//! ```text
//! | CLA | INS | P1 | P2 | [Lc | Data] | [Le] |
//! ```
//!
//! Only short APDUs are supported. Extended-length encodings are detected and
//! rejected with [`ApduError::ExtendedLengthUnsupported`], and logical channel
//! numbers above 3 are out of range everywhere.

pub mod hex;

use thiserror::Error;

pub use self::hex::{byte_to_hex, bytes_to_hex, hex_to_bytes, HexError};

/// Highest logical channel number that can be encoded in the CLA low bits.
pub const MAX_CHANNEL: u8 = 3;

const CHANNEL_MASK: u8 = 0x03;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ApduError {
    #[error("malformed APDU: {0}")]
    MalformedApdu(String),
    #[error("extended-length APDUs are not supported")]
    ExtendedLengthUnsupported,
    #[error("channel number {0} out of range 0..=3")]
    ChannelOutOfRange(u8),
    #[error("response APDU shorter than two status bytes ({0} bytes)")]
    ResponseTooShort(usize),
}

/// The four ISO 7816-4 short APDU cases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ApduCase {
    /// Header only.
    Case1,
    /// Header and Le.
    Case2,
    /// Header, Lc and data.
    Case3,
    /// Header, Lc, data and Le.
    Case4,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CommandApdu {
    pub cla: u8,
    pub ins: u8,
    pub p1: u8,
    pub p2: u8,
    data: Vec<u8>,
    /// Raw Le byte; `Some(0)` means 256 expected bytes.
    pub le: Option<u8>,
}

impl CommandApdu {
    pub fn new(
        cla: u8,
        ins: u8,
        p1: u8,
        p2: u8,
        data: Vec<u8>,
        le: Option<u8>,
    ) -> Result<Self, ApduError> {
        if data.len() > 255 {
            return Err(ApduError::ExtendedLengthUnsupported);
        }
        Ok(Self {
            cla,
            ins,
            p1,
            p2,
            data,
            le,
        })
    }

    /// Parses a raw command APDU, classifying it by length.
    pub fn parse(raw: &[u8]) -> Result<Self, ApduError> {
        if raw.len() < 4 {
            return Err(ApduError::MalformedApdu(format!(
                "{} bytes, header needs 4",
                raw.len()
            )));
        }
        let (cla, ins, p1, p2) = (raw[0], raw[1], raw[2], raw[3]);
        let header = |data: &[u8], le| Self::new(cla, ins, p1, p2, data.to_vec(), le);

        match raw.len() {
            4 => header(&[], None),
            5 => header(&[], Some(raw[4])),
            len => {
                let lc = raw[4] as usize;
                if lc == 0 {
                    return Err(if looks_extended(&raw[5..]) {
                        ApduError::ExtendedLengthUnsupported
                    } else {
                        ApduError::MalformedApdu(format!("Lc=0 with {len} bytes"))
                    });
                }
                if len == 5 + lc {
                    header(&raw[5..], None)
                } else if len == 6 + lc {
                    header(&raw[5..len - 1], Some(raw[len - 1]))
                } else {
                    Err(ApduError::MalformedApdu(format!(
                        "Lc={lc} does not fit {len} bytes"
                    )))
                }
            }
        }
    }

    /// Rebuilds a command from the fields carried in an OEM-hook exchange
    /// frame. `p3` is Le when `body` is empty and Lc otherwise; a case-4 body
    /// carries the Le byte after the data.
    pub fn from_exchange_fields(
        cla: u8,
        ins: u8,
        p1: u8,
        p2: u8,
        p3: Option<u8>,
        body: &[u8],
    ) -> Result<Self, ApduError> {
        match p3 {
            None if body.is_empty() => Self::new(cla, ins, p1, p2, Vec::new(), None),
            None => Err(ApduError::MalformedApdu("data without P3".into())),
            Some(le) if body.is_empty() => Self::new(cla, ins, p1, p2, Vec::new(), Some(le)),
            Some(0) => Err(ApduError::MalformedApdu("Lc=0 with data".into())),
            Some(lc) => {
                let lc = lc as usize;
                if body.len() == lc {
                    Self::new(cla, ins, p1, p2, body.to_vec(), None)
                } else if body.len() == lc + 1 {
                    Self::new(cla, ins, p1, p2, body[..lc].to_vec(), Some(body[lc]))
                } else {
                    Err(ApduError::MalformedApdu(format!(
                        "P3={lc} with {} body bytes",
                        body.len()
                    )))
                }
            }
        }
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn case(&self) -> ApduCase {
        match (self.data.is_empty(), self.le.is_some()) {
            (true, false) => ApduCase::Case1,
            (true, true) => ApduCase::Case2,
            (false, false) => ApduCase::Case3,
            (false, true) => ApduCase::Case4,
        }
    }

    pub fn header(&self) -> [u8; 4] {
        [self.cla, self.ins, self.p1, self.p2]
    }

    /// Logical channel number carried in the CLA low bits.
    pub fn channel(&self) -> u8 {
        self.cla & CHANNEL_MASK
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(6 + self.data.len());
        out.extend_from_slice(&self.header());
        if !self.data.is_empty() {
            out.push(self.data.len() as u8);
            out.extend_from_slice(&self.data);
        }
        if let Some(le) = self.le {
            out.push(le);
        }
        out
    }

    /// Maps this command onto the telephony transmit arguments: the channel
    /// bits are split out of CLA and the case decides `len`/`data_hex`.
    pub fn to_telephony_args(&self) -> TelephonyArgs {
        let (len, data_hex) = match self.case() {
            ApduCase::Case1 => (-1, None),
            ApduCase::Case2 => (i32::from(self.le.unwrap_or(0)), None),
            ApduCase::Case3 => (self.data.len() as i32, Some(bytes_to_hex(&self.data))),
            ApduCase::Case4 => {
                // Le travels verbatim after the data, 0x00 included.
                let mut hex = bytes_to_hex(&self.data);
                hex.push_str(&byte_to_hex(self.le.unwrap_or(0)));
                (self.data.len() as i32, Some(hex))
            }
        };
        TelephonyArgs {
            cla_masked: self.cla & !CHANNEL_MASK,
            ins: self.ins,
            channel_index: self.channel(),
            p1: self.p1,
            p2: self.p2,
            len,
            data_hex,
        }
    }
}

/// Whether the bytes after an `Lc = 0` marker form an extended-length body.
fn looks_extended(body: &[u8]) -> bool {
    match body.len() {
        0 | 1 => false,
        // Case 2E: two Le bytes.
        2 => true,
        n => {
            let lc = usize::from(u16::from_be_bytes([body[0], body[1]]));
            let rest = n - 2;
            lc != 0 && (rest == lc || rest == lc + 2)
        }
    }
}

pub fn parse_command(raw: &[u8]) -> Result<CommandApdu, ApduError> {
    CommandApdu::parse(raw)
}

/// Arguments of the telephony `transmitIccLogicalChannel` call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TelephonyArgs {
    pub cla_masked: u8,
    pub ins: u8,
    pub channel_index: u8,
    pub p1: u8,
    pub p2: u8,
    /// -1 for case 1, Le for case 2, Lc otherwise.
    pub len: i32,
    pub data_hex: Option<String>,
}

/// Overwrites the channel bits of `cla` with `channel`.
pub fn set_cla_channel(cla: u8, channel: u8) -> Result<u8, ApduError> {
    if channel > MAX_CHANNEL {
        return Err(ApduError::ChannelOutOfRange(channel));
    }
    Ok((cla & !CHANNEL_MASK) | channel)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ResponseApdu {
    pub data: Vec<u8>,
    pub sw1: u8,
    pub sw2: u8,
}

impl ResponseApdu {
    pub fn new(data: Vec<u8>, sw1: u8, sw2: u8) -> Self {
        Self { data, sw1, sw2 }
    }

    pub fn from_sw(sw: u16) -> Self {
        let [sw1, sw2] = sw.to_be_bytes();
        Self::new(Vec::new(), sw1, sw2)
    }

    pub fn parse(raw: &[u8]) -> Result<Self, ApduError> {
        if raw.len() < 2 {
            return Err(ApduError::ResponseTooShort(raw.len()));
        }
        let (data, sw) = raw.split_at(raw.len() - 2);
        Ok(Self::new(data.to_vec(), sw[0], sw[1]))
    }

    pub fn sw(&self) -> u16 {
        u16::from_be_bytes([self.sw1, self.sw2])
    }

    pub fn is_success(&self) -> bool {
        sw_success(self.sw1)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.data.clone();
        out.push(self.sw1);
        out.push(self.sw2);
        out
    }
}

/// SIM status-word success test: normal completion plus the proactive and
/// response-available variants.
pub fn sw_success(sw1: u8) -> bool {
    matches!(sw1, 0x90 | 0x91 | 0x9e | 0x9f)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwFailure {
    FileTypeMismatch,
    FileNotFound,
    Generic { sw1: u8, sw2: u8 },
}

/// Classifies a non-success status word the way the SIM I/O layer does.
pub fn classify_sw_failure(sw1: u8, sw2: u8) -> SwFailure {
    match (sw1, sw2) {
        (0x94, 0x08) => SwFailure::FileTypeMismatch,
        (0x94, _) => SwFailure::FileNotFound,
        _ => SwFailure::Generic { sw1, sw2 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(s: &str) -> Vec<u8> {
        hex_to_bytes(s).unwrap()
    }

    #[test]
    fn parse_examples() {
        let c = parse_command(&h("00a40400")).unwrap();
        assert_eq!(c.case(), ApduCase::Case1);
        assert!(c.data().is_empty());
        assert_eq!(c.le, None);

        let c = parse_command(&h("00b000001a")).unwrap();
        assert_eq!((c.case(), c.le), (ApduCase::Case2, Some(0x1a)));

        let c = parse_command(&h("00d6000002cafe")).unwrap();
        assert_eq!(c.case(), ApduCase::Case3);
        assert_eq!(c.data(), &[0xca, 0xfe]);

        let c = parse_command(&h("00a4040002cafe00")).unwrap();
        assert_eq!(c.case(), ApduCase::Case4);
        assert_eq!((c.data(), c.le), (&[0xca, 0xfe][..], Some(0)));
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            parse_command(&h("00a404")),
            Err(ApduError::MalformedApdu(_))
        ));
        // Lc says 3, only 2 data bytes
        assert!(matches!(
            parse_command(&h("00d6000003cafe")),
            Err(ApduError::MalformedApdu(_))
        ));
        // Case 2E, 3E and 4E
        for raw in ["00b0000000ff00", "00d600000000020102", "00d600000000020102ffff"] {
            assert_eq!(
                parse_command(&h(raw)),
                Err(ApduError::ExtendedLengthUnsupported),
                "{raw}"
            );
        }
        assert!(matches!(
            parse_command(&h("00b000000001")),
            Err(ApduError::MalformedApdu(_))
        ));
    }

    #[test]
    fn telephony_mapping() {
        let a = parse_command(&h("80ca9f7f")).unwrap().to_telephony_args();
        assert_eq!(
            (a.cla_masked, a.channel_index, a.len, a.data_hex),
            (0x80, 0, -1, None)
        );

        let a = parse_command(&h("01a4040002cafe00")).unwrap().to_telephony_args();
        assert_eq!(
            (a.cla_masked, a.channel_index, a.len, a.data_hex.as_deref()),
            (0x00, 1, 2, Some("cafe00"))
        );

        let a = parse_command(&h("00b0000005")).unwrap().to_telephony_args();
        assert_eq!(
            (a.cla_masked, a.channel_index, a.len, a.data_hex),
            (0x00, 0, 5, None)
        );

        let a = parse_command(&h("83d6000001aa")).unwrap().to_telephony_args();
        assert_eq!(
            (a.cla_masked, a.channel_index, a.len, a.data_hex.as_deref()),
            (0x80, 3, 1, Some("aa"))
        );
    }

    #[test]
    fn cla_channel() {
        assert_eq!(set_cla_channel(0x00, 1), Ok(0x01));
        assert_eq!(set_cla_channel(0x83, 2), Ok(0x82));
        assert_eq!(set_cla_channel(0x00, 0), Ok(0x00));
        assert_eq!(set_cla_channel(0x00, 4), Err(ApduError::ChannelOutOfRange(4)));
    }

    #[test]
    fn status_words() {
        assert!(sw_success(0x90));
        assert!(sw_success(0x9e));
        assert!(!sw_success(0x6f));
        assert_eq!(classify_sw_failure(0x94, 0x08), SwFailure::FileTypeMismatch);
        assert_eq!(classify_sw_failure(0x94, 0x04), SwFailure::FileNotFound);
        assert_eq!(
            classify_sw_failure(0x6a, 0x82),
            SwFailure::Generic { sw1: 0x6a, sw2: 0x82 }
        );
    }

    #[test]
    fn exchange_fields_rebuild_each_case() {
        let c = CommandApdu::from_exchange_fields(0, 0xca, 0, 0, None, &[]).unwrap();
        assert_eq!(c.case(), ApduCase::Case1);
        let c = CommandApdu::from_exchange_fields(0, 0xca, 0, 0, Some(2), &[]).unwrap();
        assert_eq!((c.case(), c.le), (ApduCase::Case2, Some(2)));
        let c = CommandApdu::from_exchange_fields(0, 0xd6, 0, 0, Some(2), &[1, 2]).unwrap();
        assert_eq!(c.case(), ApduCase::Case3);
        let c = CommandApdu::from_exchange_fields(0, 0x88, 0, 0, Some(2), &[1, 2, 0]).unwrap();
        assert_eq!((c.case(), c.data(), c.le), (ApduCase::Case4, &[1, 2][..], Some(0)));
        assert!(CommandApdu::from_exchange_fields(0, 0, 0, 0, None, &[1]).is_err());
        assert!(CommandApdu::from_exchange_fields(0, 0, 0, 0, Some(3), &[1]).is_err());
        assert!(CommandApdu::from_exchange_fields(0, 0, 0, 0, Some(0), &[1]).is_err());
    }

    #[test]
    fn response_split() {
        let r = ResponseApdu::parse(&h("cafe9000")).unwrap();
        assert_eq!((r.data.as_slice(), r.sw()), (&[0xca, 0xfe][..], 0x9000));
        assert!(r.is_success());
        assert_eq!(r.to_bytes(), h("cafe9000"));
        assert_eq!(ResponseApdu::parse(&[0x90]), Err(ApduError::ResponseTooShort(1)));
    }
}
