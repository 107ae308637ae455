//! Access control enforcer.
//!
//! Rules live on the card in an access rule applet and are keyed by applet AID
//! and client certificate hash, either of which may be a wildcard. The most
//! specific matching rule governs:
//!
//! 1. specific AID + specific certificate
//! 2. specific AID + any certificate
//! 3. any AID + specific certificate
//! 4. any AID + any certificate
//!
//! No matching rule denies. A card without the rule applet is open-world by
//! default (everything allowed); [`Enforcer::closed_world`] flips that.
//!
//! The rule blob returned by the applet for `80 ca ff 40 00` is a sequence of
//! records:
//!
//! ```text
//! aid_len(1) aid hash_len(1) hash policy(1) n_filters(1) { header(4) mask(4) }*
//! ```
//!
//! A zero length encodes "any". Policy bytes: 00 deny, 01 allow, 02 filtered.

use std::collections::HashSet;

use thiserror::Error;

use crate::apdu::{bytes_to_hex, set_cla_channel, ResponseApdu};
use crate::terminal::{Terminal, TerminalError};

/// Default AID of the access rule applet.
pub const DEFAULT_ARA_AID: [u8; 9] = [0xa0, 0x00, 0x00, 0x01, 0x51, 0x41, 0x43, 0x4c, 0x00];

/// Command that fetches the whole rule blob from the rule applet.
pub const GET_ALL_RULES: [u8; 5] = [0x80, 0xca, 0xff, 0x40, 0x00];

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ClientIdentity {
    Anonymous,
    Certificate(Vec<u8>),
}

impl ClientIdentity {
    fn cert_hash(&self) -> Option<&[u8]> {
        match self {
            Self::Anonymous => None,
            Self::Certificate(hash) => Some(hash),
        }
    }
}

impl std::fmt::Display for ClientIdentity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Anonymous => f.write_str("anonymous"),
            Self::Certificate(hash) => f.write_str(&bytes_to_hex(hash)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ApduFilter {
    pub header: [u8; 4],
    pub mask: [u8; 4],
}

impl ApduFilter {
    pub fn matches(&self, header: [u8; 4]) -> bool {
        (0..4).all(|i| header[i] & self.mask[i] == self.header[i] & self.mask[i])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Policy {
    Deny,
    Allow,
    /// Allow only APDUs matching at least one filter. Never empty.
    Filtered(Vec<ApduFilter>),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AccessRule {
    /// `None` matches any applet.
    pub aid: Option<Vec<u8>>,
    /// `None` matches any client.
    pub cert: Option<Vec<u8>>,
    pub policy: Policy,
}

impl AccessRule {
    /// 0 is the most specific level.
    fn specificity(&self) -> u8 {
        match (self.aid.is_some(), self.cert.is_some()) {
            (true, true) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (false, false) => 3,
        }
    }

    fn applies(&self, client: &ClientIdentity, aid: Option<&[u8]>) -> bool {
        let aid_ok = match &self.aid {
            None => true,
            Some(want) => aid == Some(want.as_slice()),
        };
        let cert_ok = match &self.cert {
            None => true,
            Some(want) => client.cert_hash() == Some(want.as_slice()),
        };
        aid_ok && cert_ok
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Allow,
    Deny,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AccessError {
    #[error("rule blob: {0}")]
    ParseError(String),
    #[error("reading rules: {0}")]
    Terminal(#[from] TerminalError),
}

fn parse_error(msg: impl Into<String>) -> AccessError {
    AccessError::ParseError(msg.into())
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RuleDatabase {
    pub rules: Vec<AccessRule>,
    /// Whether the card carries a rule applet at all.
    pub present: bool,
}

impl RuleDatabase {
    pub fn absent() -> Self {
        Self::default()
    }

    pub fn new(rules: Vec<AccessRule>) -> Result<Self, AccessError> {
        let mut seen = HashSet::new();
        for rule in &rules {
            if !seen.insert((&rule.aid, &rule.cert)) {
                return Err(parse_error("duplicate rule for the same AID and certificate"));
            }
            if matches!(&rule.policy, Policy::Filtered(f) if f.is_empty()) {
                return Err(parse_error("filtered rule without filters"));
            }
        }
        Ok(Self {
            rules,
            present: true,
        })
    }

    /// The rule that governs `(client, aid)`, if any.
    pub fn governing_rule(&self, client: &ClientIdentity, aid: Option<&[u8]>) -> Option<&AccessRule> {
        self.rules
            .iter()
            .filter(|r| r.applies(client, aid))
            .min_by_key(|r| r.specificity())
    }
}

pub fn encode_rules(rules: &[AccessRule]) -> Result<Vec<u8>, AccessError> {
    let mut out = Vec::new();
    let push_field = |out: &mut Vec<u8>, field: &Option<Vec<u8>>, what: &str| {
        let bytes = field.as_deref().unwrap_or_default();
        if bytes.len() > 255 {
            return Err(parse_error(format!("{what} longer than 255 bytes")));
        }
        out.push(bytes.len() as u8);
        out.extend_from_slice(bytes);
        Ok(())
    };
    for rule in rules {
        push_field(&mut out, &rule.aid, "AID")?;
        push_field(&mut out, &rule.cert, "certificate hash")?;
        match &rule.policy {
            Policy::Deny => out.extend_from_slice(&[0x00, 0x00]),
            Policy::Allow => out.extend_from_slice(&[0x01, 0x00]),
            Policy::Filtered(filters) => {
                let n = u8::try_from(filters.len())
                    .map_err(|_| parse_error("more than 255 filters"))?;
                out.extend_from_slice(&[0x02, n]);
                for f in filters {
                    out.extend_from_slice(&f.header);
                    out.extend_from_slice(&f.mask);
                }
            }
        }
    }
    Ok(out)
}

struct Cursor<'a>(&'a [u8]);

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], AccessError> {
        if self.0.len() < n {
            return Err(parse_error("truncated record"));
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Ok(head)
    }

    fn byte(&mut self) -> Result<u8, AccessError> {
        Ok(self.take(1)?[0])
    }

    fn lv(&mut self) -> Result<Option<Vec<u8>>, AccessError> {
        let len = usize::from(self.byte()?);
        let value = self.take(len)?;
        Ok((!value.is_empty()).then(|| value.to_vec()))
    }
}

pub fn parse_rules(blob: &[u8]) -> Result<RuleDatabase, AccessError> {
    let mut cur = Cursor(blob);
    let mut rules = Vec::new();
    while !cur.0.is_empty() {
        let aid = cur.lv()?;
        let cert = cur.lv()?;
        let policy_byte = cur.byte()?;
        let n_filters = usize::from(cur.byte()?);
        let policy = match (policy_byte, n_filters) {
            (0x00, 0) => Policy::Deny,
            (0x01, 0) => Policy::Allow,
            (0x02, n) if n > 0 => Policy::Filtered(
                cur.take(8 * n)?
                    .chunks_exact(8)
                    .map(|c| ApduFilter {
                        header: [c[0], c[1], c[2], c[3]],
                        mask: [c[4], c[5], c[6], c[7]],
                    })
                    .collect(),
            ),
            (0x00 | 0x01, _) => return Err(parse_error("filters on an allow/deny rule")),
            (0x02, _) => return Err(parse_error("filtered rule without filters")),
            (other, _) => return Err(parse_error(format!("unknown policy byte {other:#04x}"))),
        };
        rules.push(AccessRule { aid, cert, policy });
    }
    RuleDatabase::new(rules)
}

/// Reads the rule database through `terminal`. A card without the rule
/// applet yields an absent database.
pub fn load_rules(terminal: &mut dyn Terminal, ara_aid: &[u8]) -> Result<RuleDatabase, AccessError> {
    let opened = match terminal.open_logical_channel(Some(ara_aid)) {
        Ok(opened) => opened,
        Err(TerminalError::NoSuchElement) => return Ok(RuleDatabase::absent()),
        Err(e) => return Err(e.into()),
    };
    let mut command = GET_ALL_RULES;
    command[0] = set_cla_channel(command[0], opened.number)
        .map_err(|e| parse_error(e.to_string()))?;
    let reply = terminal.transmit(&command);
    // Close even when the fetch failed; the fetch error wins.
    let closed = terminal.close_logical_channel(opened.number);
    let reply = ResponseApdu::parse(&reply?).map_err(|e| parse_error(e.to_string()))?;
    closed?;
    if !reply.is_success() {
        return Err(parse_error(format!("rule applet answered SW {:04x}", reply.sw())));
    }
    parse_rules(&reply.data)
}

/// Decision engine over a loaded rule database.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Enforcer {
    pub db: RuleDatabase,
    pub closed_world: bool,
}

impl Enforcer {
    pub fn new(db: RuleDatabase) -> Self {
        Self {
            db,
            closed_world: false,
        }
    }

    pub fn closed_world(mut self, closed: bool) -> Self {
        self.closed_world = closed;
        self
    }

    fn no_rule_applet(&self) -> Decision {
        if self.closed_world {
            Decision::Deny
        } else {
            Decision::Allow
        }
    }

    pub fn decide_channel_open(&self, client: &ClientIdentity, aid: Option<&[u8]>) -> Decision {
        if !self.db.present {
            return self.no_rule_applet();
        }
        match self.db.governing_rule(client, aid).map(|r| &r.policy) {
            Some(Policy::Allow | Policy::Filtered(_)) => Decision::Allow,
            Some(Policy::Deny) | None => Decision::Deny,
        }
    }

    pub fn decide_apdu(&self, client: &ClientIdentity, aid: Option<&[u8]>, header: [u8; 4]) -> Decision {
        if !self.db.present {
            return self.no_rule_applet();
        }
        match self.db.governing_rule(client, aid).map(|r| &r.policy) {
            Some(Policy::Allow) => Decision::Allow,
            Some(Policy::Filtered(filters)) if filters.iter().any(|f| f.matches(header)) => {
                Decision::Allow
            }
            _ => Decision::Deny,
        }
    }
}

pub fn decide_channel_open(db: &RuleDatabase, client: &ClientIdentity, aid: Option<&[u8]>) -> Decision {
    Enforcer::new(db.clone()).decide_channel_open(client, aid)
}

pub fn decide_apdu(
    db: &RuleDatabase,
    client: &ClientIdentity,
    aid: Option<&[u8]>,
    header: [u8; 4],
) -> Decision {
    Enforcer::new(db.clone()).decide_apdu(client, aid, header)
}
