//! Fixtures and independent oracles shared by the integration tests.
//!
//! The oracles are written from the protocol definitions, not from the
//! library code, and must not call into the modules they check.

#![allow(dead_code)]

use std::path::PathBuf;

use omapi_uicc::stack::{Stack, StackOptions};
use omapi_uicc::vuicc::CardProfile;

pub const APPLET: [u8; 8] = [0xa0, 0x00, 0x00, 0x01, 0x51, 0x00, 0x00, 0x00];
pub const FILTERED_APPLET: [u8; 8] = [0xa0, 0x00, 0x00, 0x01, 0x51, 0x00, 0x00, 0x01];
pub const APPLET_FCI: &str = "6f0a8408a0000001510000009000";
pub const DENIED_CERT: [u8; 20] = [0x11; 20];

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join(name)
}

pub fn profile(name: &str) -> CardProfile {
    CardProfile::load(fixture(&format!("fixtures/{name}.toml"))).expect("fixture profile")
}

pub fn stack(name: &str, legacy: bool) -> Stack {
    Stack::from_profile(&profile(name), StackOptions { legacy }).expect("fixture stack")
}

pub fn h(s: &str) -> Vec<u8> {
    let s: String = s.split_whitespace().collect();
    assert!(s.len().is_multiple_of(2), "odd hex literal {s:?}");
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).expect("hex literal"))
        .collect()
}

/// Hex encoder built from integer formatting alone.
pub fn oracle_to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hex decoder built from `from_str_radix` alone; `None` on bad input.
pub fn oracle_from_hex(s: &str) -> Option<Vec<u8>> {
    if !s.len().is_multiple_of(2) || !s.is_ascii() {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| {
            let pair = &s[i..i + 2];
            pair.chars()
                .all(|c| c.is_ascii_hexdigit())
                .then(|| u8::from_str_radix(pair, 16).ok())
                .flatten()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleCase {
    Case1,
    Case2,
    Case3,
    Case4,
}

/// Every short-APDU case whose length formula fits `raw`.
pub fn oracle_cases(raw: &[u8]) -> Vec<OracleCase> {
    let len = raw.len();
    let mut fits = Vec::new();
    if len == 4 {
        fits.push(OracleCase::Case1);
    }
    if len == 5 {
        fits.push(OracleCase::Case2);
    }
    if len > 5 {
        let lc = usize::from(raw[4]);
        if lc > 0 && len == 5 + lc {
            fits.push(OracleCase::Case3);
        }
        if lc > 0 && len == 6 + lc {
            fits.push(OracleCase::Case4);
        }
    }
    fits
}

/// Request frames built the way the telephony service code writes them with
/// a `DataOutputStream`, including its length arithmetic.
pub mod frames {
    fn write_short(out: &mut Vec<u8>, v: i32) {
        out.push((v >> 8) as u8);
        out.push(v as u8);
    }

    fn write_int(out: &mut Vec<u8>, v: u32) {
        out.extend_from_slice(&[(v >> 24) as u8, (v >> 16) as u8, (v >> 8) as u8, v as u8]);
    }

    pub fn get_atr() -> Vec<u8> {
        let mut out = vec![0x15, 0x0d];
        write_short(&mut out, 4);
        out
    }

    pub fn open(aid: &[u8]) -> Vec<u8> {
        let mut out = vec![0x15, 0x09];
        write_short(&mut out, 4 + aid.len() as i32);
        out.extend_from_slice(aid);
        out
    }

    /// Only meaningful for non-zero ids; id 0 is written without the id.
    pub fn close(id: u32) -> Vec<u8> {
        let mut out = vec![0x15, 0x0a];
        write_short(&mut out, if id != 0 { 8 } else { 4 });
        if id != 0 {
            write_int(&mut out, id);
        }
        out
    }

    /// `p3` is -1 when absent.
    pub fn exchange(cla: u8, ins: u8, channel: u32, p1: u8, p2: u8, p3: i32, data: &[u8]) -> Vec<u8> {
        let mut len = 9 + data.len() as i32;
        if p3 == -1 {
            len -= 1;
        }
        let mut out = vec![0x15];
        if channel == 0 {
            out.push(0x08);
            write_short(&mut out, len);
        } else {
            out.push(if p3 != -1 { 0x0b } else { 0x0c });
            write_short(&mut out, len + 4);
        }
        out.extend_from_slice(&[cla, ins, p1, p2]);
        if p3 != -1 {
            out.push(p3 as u8);
        }
        if channel != 0 {
            write_int(&mut out, channel);
        }
        out.extend_from_slice(data);
        out
    }

    /// Channel id of an open response, assembled highest index first.
    pub fn open_response_id(data: &[u8]) -> u32 {
        let id_len = usize::from(data[0]);
        let mut id = 0u32;
        for i in (1..=id_len).rev() {
            id <<= 8;
            id |= u32::from(data[i]);
        }
        id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OraclePolicy {
    Allow,
    Deny,
}

/// Decision from rules listed per specificity level, most specific first:
/// (aid, cert), (aid, any), (any, cert), (any, any).
pub fn oracle_decision(levels: [Option<OraclePolicy>; 4]) -> OraclePolicy {
    levels.into_iter().flatten().next().unwrap_or(OraclePolicy::Deny)
}

/// Lowest-free-slot allocation over channels 1 to 3.
#[derive(Debug, Default, Clone)]
pub struct SlotOracle {
    pub used: [bool; 4],
}

impl SlotOracle {
    pub fn open(&mut self) -> Option<u8> {
        let n = (1..4).find(|&n| !self.used[n])?;
        self.used[n] = true;
        Some(n as u8)
    }

    pub fn close(&mut self, n: u8) -> bool {
        let n = usize::from(n);
        if (1..4).contains(&n) && self.used[n] {
            self.used[n] = false;
            true
        } else {
            false
        }
    }

    pub fn open_set(&self) -> Vec<u8> {
        (1..4u8).filter(|&n| self.used[usize::from(n)]).collect()
    }
}
