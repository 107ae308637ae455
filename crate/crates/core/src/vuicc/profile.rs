//! Declarative card profile, stored as TOML.
//!
//! ```toml
//! atr = "3b00"
//! ara_aid = "a00000015141434c00"      # optional, this is the default
//!
//! [[applets]]
//! aid = "a000000151000000"
//! select_response = "6f0a8408a0000001510000009000"
//! default_reply = "6d00"              # optional, this is the default
//!
//! [[applets.handlers]]
//! ins = "ca"
//! p1 = "00"                           # optional, absent matches any
//! reply = "cafe9000"
//!
//! [[files]]
//! file_id = "2fe2"
//! path = "3f00"
//! content = "98101032547698103254"
//!
//! [access]                            # optional, installs the rule applet
//! closed_world = false                # optional
//!
//! [[access.rules]]
//! aid = "a000000151000000"            # optional, absent matches any
//! cert = "0123..."                    # optional, absent matches any
//! policy = "filtered"                 # allow | deny | filtered
//! filters = [{ header = "00a40000", mask = "ffff0000" }]
//! ```
//!
//! Every binary value is a hex string. Parsing then serializing yields an
//! equal profile.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AppletScript, CardError, VirtualCard, DEFAULT_ATR, SW_OK};
use crate::access_control::{
    encode_rules, AccessError, AccessRule, ApduFilter, Policy, DEFAULT_ARA_AID, GET_ALL_RULES,
};
use crate::apdu::{bytes_to_hex, hex_to_bytes, HexError, ResponseApdu};

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("reading profile: {0}")]
    Io(#[from] std::io::Error),
    #[error("profile syntax: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("writing profile: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error(transparent)]
    Card(#[from] CardError),
    #[error(transparent)]
    Access(#[from] AccessError),
    #[error("rule blob of {0} bytes does not fit one response")]
    RulesTooLarge(usize),
}

/// Byte string written as hex.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct HexBytes(pub Vec<u8>);

impl TryFrom<String> for HexBytes {
    type Error = HexError;

    fn try_from(s: String) -> Result<Self, HexError> {
        hex_to_bytes(&s).map(Self)
    }
}

impl From<HexBytes> for String {
    fn from(h: HexBytes) -> String {
        bytes_to_hex(&h.0)
    }
}

impl From<&[u8]> for HexBytes {
    fn from(b: &[u8]) -> Self {
        Self(b.to_vec())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FixedHexError {
    #[error(transparent)]
    Hex(#[from] HexError),
    #[error("expected {expected} bytes of hex, got {actual}")]
    Width { expected: usize, actual: usize },
}

/// Exactly `N` bytes written as hex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct HexArray<const N: usize>(pub [u8; N]);

impl<const N: usize> TryFrom<String> for HexArray<N> {
    type Error = FixedHexError;

    fn try_from(s: String) -> Result<Self, FixedHexError> {
        let bytes = hex_to_bytes(&s)?;
        let actual = bytes.len();
        bytes
            .try_into()
            .map(Self)
            .map_err(|_| FixedHexError::Width {
                expected: N,
                actual,
            })
    }
}

impl<const N: usize> From<HexArray<N>> for String {
    fn from(h: HexArray<N>) -> String {
        bytes_to_hex(&h.0)
    }
}

pub type HexByte = HexArray<1>;

impl HexByte {
    pub fn byte(self) -> u8 {
        self.0[0]
    }
}

impl From<u8> for HexByte {
    fn from(b: u8) -> Self {
        Self([b])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandlerEntry {
    pub ins: HexByte,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p1: Option<HexByte>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p2: Option<HexByte>,
    pub reply: HexBytes,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppletEntry {
    pub aid: HexBytes,
    pub select_response: HexBytes,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_reply: Option<HexBytes>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub handlers: Vec<HandlerEntry>,
}

impl AppletEntry {
    pub fn to_script(&self) -> AppletScript {
        let mut script = AppletScript::new(self.aid.0.clone(), self.select_response.0.clone());
        if let Some(reply) = &self.default_reply {
            script.default_reply = reply.0.clone();
        }
        for h in &self.handlers {
            script = script.handler(
                h.ins.byte(),
                h.p1.map(HexByte::byte),
                h.p2.map(HexByte::byte),
                h.reply.0.clone(),
            );
        }
        script
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileEntry {
    pub file_id: HexArray<2>,
    pub path: String,
    pub content: HexBytes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Allow,
    Deny,
    Filtered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterEntry {
    pub header: HexArray<4>,
    pub mask: HexArray<4>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aid: Option<HexBytes>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cert: Option<HexBytes>,
    pub policy: PolicyKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub filters: Vec<FilterEntry>,
}

impl RuleEntry {
    pub fn to_rule(&self) -> Result<AccessRule, AccessError> {
        let invalid = |msg: &str| Err(AccessError::ParseError(msg.to_string()));
        let policy = match (self.policy, self.filters.is_empty()) {
            (PolicyKind::Allow, true) => Policy::Allow,
            (PolicyKind::Deny, true) => Policy::Deny,
            (PolicyKind::Filtered, false) => Policy::Filtered(
                self.filters
                    .iter()
                    .map(|f| ApduFilter {
                        header: f.header.0,
                        mask: f.mask.0,
                    })
                    .collect(),
            ),
            (PolicyKind::Filtered, true) => return invalid("filtered rule without filters"),
            _ => return invalid("filters on an allow/deny rule"),
        };
        // An empty hex string would encode as "any" in the blob.
        let specific = |v: &Option<HexBytes>| v.as_ref().map(|h| h.0.clone()).filter(|b| !b.is_empty());
        if specific(&self.aid).is_none() != self.aid.is_none()
            || specific(&self.cert).is_none() != self.cert.is_none()
        {
            return invalid("empty AID or certificate; omit the key to match any");
        }
        Ok(AccessRule {
            aid: specific(&self.aid),
            cert: specific(&self.cert),
            policy,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccessSection {
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub closed_world: bool,
    #[serde(default)]
    pub rules: Vec<RuleEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CardProfile {
    pub atr: HexBytes,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ara_aid: Option<HexBytes>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub applets: Vec<AppletEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub files: Vec<FileEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub access: Option<AccessSection>,
}

impl Default for CardProfile {
    fn default() -> Self {
        Self {
            atr: HexBytes(DEFAULT_ATR.to_vec()),
            ara_aid: None,
            applets: Vec::new(),
            files: Vec::new(),
            access: None,
        }
    }
}

impl CardProfile {
    pub fn from_toml(text: &str) -> Result<Self, ProfileError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String, ProfileError> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProfileError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn ara_aid(&self) -> Vec<u8> {
        self.ara_aid
            .as_ref()
            .map_or_else(|| DEFAULT_ARA_AID.to_vec(), |h| h.0.clone())
    }

    pub fn closed_world(&self) -> bool {
        self.access.as_ref().is_some_and(|a| a.closed_world)
    }

    pub fn rules(&self) -> Result<Vec<AccessRule>, AccessError> {
        self.access
            .iter()
            .flat_map(|a| &a.rules)
            .map(RuleEntry::to_rule)
            .collect()
    }

    /// The rule applet answering `80 ca ff 40 00` with the encoded rules, or
    /// `None` without an `[access]` section.
    pub fn rule_applet(&self) -> Result<Option<AppletScript>, ProfileError> {
        if self.access.is_none() {
            return Ok(None);
        }
        let blob = encode_rules(&self.rules()?)?;
        if blob.len() > 256 {
            return Err(ProfileError::RulesTooLarge(blob.len()));
        }
        let [_, ins, p1, p2, _] = GET_ALL_RULES;
        let ok = ResponseApdu::from_sw(SW_OK).to_bytes();
        let reply = ResponseApdu::new(blob, ok[0], ok[1]).to_bytes();
        Ok(Some(
            AppletScript::new(self.ara_aid(), ok).handler(ins, Some(p1), Some(p2), reply),
        ))
    }

    pub fn build_card(&self) -> Result<VirtualCard, ProfileError> {
        let mut card = VirtualCard::new(self.atr.0.clone());
        for applet in &self.applets {
            card.install(applet.to_script())?;
        }
        if let Some(ara) = self.rule_applet()? {
            card.install(ara)?;
        }
        for f in &self.files {
            card.add_file(u16::from_be_bytes(f.file_id.0), f.path.clone(), f.content.0.clone());
        }
        Ok(card)
    }
}

impl fmt::Display for CardProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = self.to_toml().map_err(|_| fmt::Error)?;
        f.write_str(&text)
    }
}
