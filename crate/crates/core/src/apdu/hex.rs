//! Hex codec used for every textual APDU and AID in the stack.
//!
//! Output is always lowercase with no separators; input is case-insensitive.
//! Unlike the telephony framework helper this mirrors, odd-length input is an
//! error instead of being silently truncated.

use thiserror::Error;

const HEX: &[u8; 16] = b"0123456789abcdef";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HexError {
    #[error("invalid hex char '{0}'")]
    InvalidHexChar(char),
    #[error("odd-length hex string ({0} digits)")]
    OddLength(usize),
}

pub fn bytes_to_hex(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for &b in bytes {
        out.push(HEX[(b >> 4) as usize] as char);
        out.push(HEX[(b & 0x0f) as usize] as char);
    }
    out
}

fn hex_char_to_int(c: char) -> Result<u8, HexError> {
    match c {
        '0'..='9' => Ok(c as u8 - b'0'),
        'A'..='F' => Ok(c as u8 - b'A' + 10),
        'a'..='f' => Ok(c as u8 - b'a' + 10),
        _ => Err(HexError::InvalidHexChar(c)),
    }
}

pub fn hex_to_bytes(s: &str) -> Result<Vec<u8>, HexError> {
    let chars: Vec<char> = s.chars().collect();
    // Report a bad character before complaining about the length.
    for &c in &chars {
        hex_char_to_int(c)?;
    }
    if !chars.len().is_multiple_of(2) {
        return Err(HexError::OddLength(chars.len()));
    }
    chars
        .chunks_exact(2)
        .map(|pair| Ok(hex_char_to_int(pair[0])? << 4 | hex_char_to_int(pair[1])?))
        .collect()
}

/// Lowercase hex of a single byte.
pub fn byte_to_hex(b: u8) -> String {
    bytes_to_hex(&[b])
}
