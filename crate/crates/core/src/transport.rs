//! Open Mobile API style transport: readers, sessions and channels over
//! registered terminals, with access control on every open and transmit.
//!
//! Each reader owns one lock that serializes all work on its terminal.
//! Rules are read from the card when the first session on a reader opens.

use std::sync::{Arc, Mutex, MutexGuard, Weak};

use thiserror::Error;

use crate::access_control::{
    load_rules, AccessError, ClientIdentity, Decision, Enforcer, DEFAULT_ARA_AID,
};
use crate::apdu::{set_cla_channel, ApduError, CommandApdu};
use crate::terminal::{Terminal, TerminalError};

const INS_MANAGE_CHANNEL: u8 = 0x70;
const INS_SELECT: u8 = 0xa4;
const P1_SELECT_BY_AID: u8 = 0x04;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("CardAbsent")]
    CardAbsent,
    #[error("AccessDenied")]
    AccessDenied,
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
    #[error("ChannelClosed")]
    ChannelClosed,
    #[error("SessionClosed")]
    SessionClosed,
    #[error("MalformedApdu: {0}")]
    MalformedApdu(#[from] ApduError),
    #[error("ForbiddenApdu: INS {0:02x}")]
    ForbiddenApdu(u8),
    #[error("BasicChannelInUse")]
    BasicChannelInUse,
    #[error("AccessControl: {0}")]
    AccessControl(String),
    #[error("InvalidTerminal: {0}")]
    InvalidTerminal(String),
}

impl TransportError {
    pub fn name(&self) -> &'static str {
        match self {
            Self::CardAbsent => "CardAbsent",
            Self::AccessDenied => "AccessDenied",
            Self::NoSuchElement => "NoSuchElement",
            Self::MissingResource => "MissingResource",
            Self::InvalidParameter => "InvalidParameter",
            Self::IoError(_) => "IoError",
            Self::UnsupportedOperation => "UnsupportedOperation",
            Self::ChannelClosed => "ChannelClosed",
            Self::SessionClosed => "SessionClosed",
            Self::MalformedApdu(_) => "MalformedApdu",
            Self::ForbiddenApdu(_) => "ForbiddenApdu",
            Self::BasicChannelInUse => "BasicChannelInUse",
            Self::AccessControl(_) => "AccessControl",
            Self::InvalidTerminal(_) => "InvalidTerminal",
        }
    }
}

impl From<TerminalError> for TransportError {
    fn from(e: TerminalError) -> Self {
        match e {
            TerminalError::NoSuchElement => Self::NoSuchElement,
            TerminalError::MissingResource => Self::MissingResource,
            TerminalError::InvalidParameter => Self::InvalidParameter,
            TerminalError::IoError(msg) => Self::IoError(msg),
            TerminalError::UnsupportedOperation => Self::UnsupportedOperation,
        }
    }
}

impl From<AccessError> for TransportError {
    fn from(e: AccessError) -> Self {
        Self::AccessControl(e.to_string())
    }
}

/// Whether `name` follows the system terminal pattern: `SIM`, `eSE` or `SD`,
/// an optional space, then a number.
pub fn is_system_terminal_name(name: &str) -> bool {
    ["SIM", "eSE", "SD"].iter().any(|prefix| {
        name.strip_prefix(prefix)
            .map(|rest| rest.strip_prefix(' ').unwrap_or(rest))
            .is_some_and(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()))
    })
}

/// Access control configuration shared by all readers of a service.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessConfig {
    pub ara_aid: Vec<u8>,
    pub closed_world: bool,
}

impl Default for AccessConfig {
    fn default() -> Self {
        Self {
            ara_aid: DEFAULT_ARA_AID.to_vec(),
            closed_world: false,
        }
    }
}

struct TerminalState {
    terminal: Box<dyn Terminal>,
    enforcer: Option<Enforcer>,
    connected: bool,
    /// Open channels across all sessions, basic channel included.
    open_channels: usize,
    basic_in_use: bool,
}

impl TerminalState {
    fn release(&mut self) {
        self.open_channels -= 1;
        if self.open_channels == 0 && self.connected {
            self.terminal.disconnect();
            self.connected = false;
        }
    }

    fn ensure_connected(&mut self) -> Result<(), TransportError> {
        if !self.connected {
            self.terminal.connect()?;
            self.connected = true;
        }
        Ok(())
    }
}

struct ReaderInner {
    name: String,
    system: bool,
    access: AccessConfig,
    state: Mutex<TerminalState>,
}

#[derive(Clone)]
pub struct Reader {
    inner: Arc<ReaderInner>,
}

impl std::fmt::Debug for Reader {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Reader")
            .field("name", &self.inner.name)
            .field("system", &self.inner.system)
            .finish()
    }
}

impl Reader {
    pub fn name(&self) -> &str {
        &self.inner.name
    }

    pub fn is_system(&self) -> bool {
        self.inner.system
    }

    fn lock(&self) -> MutexGuard<'_, TerminalState> {
        self.inner.state.lock().unwrap()
    }

    pub fn is_secure_element_present(&self) -> bool {
        self.lock().terminal.is_card_present()
    }

    /// Runs `f` with exclusive access to the terminal.
    pub fn with_terminal<R>(&self, f: impl FnOnce(&mut dyn Terminal) -> R) -> R {
        f(self.lock().terminal.as_mut())
    }

    pub fn open_session(&self, client: ClientIdentity) -> Result<Session, TransportError> {
        let mut state = self.lock();
        if !state.terminal.is_card_present() {
            return Err(TransportError::CardAbsent);
        }
        state.ensure_connected()?;
        if state.enforcer.is_none() {
            let db = load_rules(state.terminal.as_mut(), &self.inner.access.ara_aid)?;
            state.enforcer = Some(Enforcer::new(db).closed_world(self.inner.access.closed_world));
        }
        Ok(Session {
            inner: Arc::new(SessionInner {
                reader: self.clone(),
                client,
                state: Mutex::new(SessionState {
                    open: true,
                    channels: Vec::new(),
                }),
            }),
        })
    }

    /// Drops the cached rules; the next session reloads them.
    pub fn reload_rules(&self) {
        self.lock().enforcer = None;
    }
}

#[derive(Default)]
pub struct SeService {
    readers: Vec<Reader>,
    access: AccessConfig,
}

impl SeService {
    pub fn new() -> Self {
        Self::default()
    }

    /// Access configuration for readers registered afterwards.
    pub fn with_access_config(mut self, access: AccessConfig) -> Self {
        self.access = access;
        self
    }

    /// Registers a terminal. System terminals must use a system name and
    /// add-on terminals must not.
    pub fn register(&mut self, terminal: Box<dyn Terminal>, system: bool) -> Result<Reader, TransportError> {
        let name = terminal.name().to_string();
        if is_system_terminal_name(&name) != system {
            return Err(TransportError::InvalidTerminal(format!(
                "{name:?} is not a valid {} terminal name",
                if system { "system" } else { "add-on" }
            )));
        }
        if self.readers.iter().any(|r| r.name() == name) {
            return Err(TransportError::InvalidTerminal(format!("{name:?} already registered")));
        }
        let reader = Reader {
            inner: Arc::new(ReaderInner {
                name,
                system,
                access: self.access.clone(),
                state: Mutex::new(TerminalState {
                    terminal,
                    enforcer: None,
                    connected: false,
                    open_channels: 0,
                    basic_in_use: false,
                }),
            }),
        };
        self.readers.push(reader.clone());
        Ok(reader)
    }

    /// System terminals first, each group in registration order.
    pub fn readers(&self) -> Vec<Reader> {
        let (mut system, addon): (Vec<_>, Vec<_>) =
            self.readers.iter().cloned().partition(Reader::is_system);
        system.extend(addon);
        system
    }

    pub fn reader(&self, name: &str) -> Option<Reader> {
        self.readers.iter().find(|r| r.name() == name).cloned()
    }
}

struct SessionState {
    open: bool,
    channels: Vec<Channel>,
}

struct SessionInner {
    reader: Reader,
    client: ClientIdentity,
    state: Mutex<SessionState>,
}

#[derive(Clone)]
pub struct Session {
    inner: Arc<SessionInner>,
}

impl Session {
    pub fn reader(&self) -> &Reader {
        &self.inner.reader
    }

    pub fn client(&self) -> &ClientIdentity {
        &self.inner.client
    }

    pub fn is_closed(&self) -> bool {
        !self.inner.state.lock().unwrap().open
    }

    pub fn get_atr(&self) -> Option<Vec<u8>> {
        self.inner.reader.lock().terminal.atr()
    }

    fn check_access(&self, state: &TerminalState, aid: Option<&[u8]>) -> Result<(), TransportError> {
        let decision = state
            .enforcer
            .as_ref()
            .map_or(Decision::Allow, |e| e.decide_channel_open(&self.inner.client, aid));
        match decision {
            Decision::Allow => Ok(()),
            Decision::Deny => Err(TransportError::AccessDenied),
        }
    }

    fn register_channel(
        &self,
        number: u8,
        aid: Option<&[u8]>,
        select_response: Option<Vec<u8>>,
    ) -> Channel {
        let channel = Channel {
            inner: Arc::new(ChannelInner {
                session: Arc::downgrade(&self.inner),
                reader: self.inner.reader.clone(),
                client: self.inner.client.clone(),
                number,
                aid: aid.map(<[u8]>::to_vec),
                select_response,
                open: Mutex::new(true),
            }),
        };
        self.inner.state.lock().unwrap().channels.push(channel.clone());
        channel
    }

    pub fn open_logical_channel(&self, aid: Option<&[u8]>) -> Result<Channel, TransportError> {
        let session = self.inner.state.lock().unwrap();
        if !session.open {
            return Err(TransportError::SessionClosed);
        }
        let mut state = self.inner.reader.lock();
        self.check_access(&state, aid)?;
        state.ensure_connected()?;
        let opened = state.terminal.open_logical_channel(aid)?;
        state.open_channels += 1;
        drop(state);
        drop(session);
        Ok(self.register_channel(opened.number, aid, opened.select_response))
    }

    /// Opens the basic channel, selecting `aid` on it when given. Only one
    /// basic channel per reader may be open at a time.
    pub fn open_basic_channel(&self, aid: Option<&[u8]>) -> Result<Channel, TransportError> {
        let session = self.inner.state.lock().unwrap();
        if !session.open {
            return Err(TransportError::SessionClosed);
        }
        let mut state = self.inner.reader.lock();
        if state.basic_in_use {
            return Err(TransportError::BasicChannelInUse);
        }
        self.check_access(&state, aid)?;
        state.ensure_connected()?;
        let select_response = match aid {
            Some(aid) => {
                let select = CommandApdu::new(0x00, INS_SELECT, P1_SELECT_BY_AID, 0x00, aid.to_vec(), Some(0x00))?;
                let reply = state.terminal.transmit(&select.to_bytes())?;
                let sw1 = reply.get(reply.len().saturating_sub(2)).copied().unwrap_or(0);
                if !crate::apdu::sw_success(sw1) {
                    return Err(TransportError::NoSuchElement);
                }
                Some(reply)
            }
            None => None,
        };
        state.basic_in_use = true;
        state.open_channels += 1;
        drop(state);
        drop(session);
        Ok(self.register_channel(0, aid, select_response))
    }

    /// Closes every channel of the session; errors from the terminal are
    /// dropped. Idempotent.
    pub fn close(&self) {
        let channels = {
            let mut session = self.inner.state.lock().unwrap();
            session.open = false;
            std::mem::take(&mut session.channels)
        };
        for channel in channels {
            let _ = channel.close();
        }
    }
}

struct ChannelInner {
    session: Weak<SessionInner>,
    reader: Reader,
    client: ClientIdentity,
    number: u8,
    aid: Option<Vec<u8>>,
    select_response: Option<Vec<u8>>,
    open: Mutex<bool>,
}

#[derive(Clone)]
pub struct Channel {
    inner: Arc<ChannelInner>,
}

impl std::fmt::Debug for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Channel")
            .field("number", &self.inner.number)
            .field("open", &!self.is_closed())
            .finish()
    }
}

impl Channel {
    pub fn number(&self) -> u8 {
        self.inner.number
    }

    pub fn is_basic(&self) -> bool {
        self.inner.number == 0
    }

    pub fn aid(&self) -> Option<&[u8]> {
        self.inner.aid.as_deref()
    }

    pub fn select_response(&self) -> Option<&[u8]> {
        self.inner.select_response.as_deref()
    }

    pub fn is_closed(&self) -> bool {
        !*self.inner.open.lock().unwrap()
    }

    pub fn session(&self) -> Option<Session> {
        self.inner.session.upgrade().map(|inner| Session { inner })
    }

    pub fn transmit(&self, apdu: &[u8]) -> Result<Vec<u8>, TransportError> {
        let open = self.inner.open.lock().unwrap();
        if !*open {
            return Err(TransportError::ChannelClosed);
        }
        let mut cmd = CommandApdu::parse(apdu)?;
        if cmd.ins == INS_MANAGE_CHANNEL || (cmd.ins == INS_SELECT && cmd.p1 == P1_SELECT_BY_AID) {
            return Err(TransportError::ForbiddenApdu(cmd.ins));
        }
        cmd.cla = set_cla_channel(cmd.cla, self.inner.number)?;

        let mut state = self.inner.reader.lock();
        if let Some(enforcer) = &state.enforcer {
            let mut header = cmd.header();
            header[0] &= 0xfc;
            if enforcer.decide_apdu(&self.inner.client, self.aid(), header) == Decision::Deny {
                return Err(TransportError::AccessDenied);
            }
        }
        Ok(state.terminal.transmit(&cmd.to_bytes())?)
    }

    /// Closes the channel. The channel counts as closed afterwards even if
    /// the terminal reports an error, which is returned. Idempotent.
    pub fn close(&self) -> Result<(), TransportError> {
        let mut open = self.inner.open.lock().unwrap();
        if !*open {
            return Ok(());
        }
        *open = false;
        let mut state = self.inner.reader.lock();
        let result = if self.is_basic() {
            state.basic_in_use = false;
            Ok(())
        } else {
            state.terminal.close_logical_channel(self.inner.number)
        };
        state.release();
        drop(state);
        drop(open);
        if let Some(session) = self.inner.session.upgrade() {
            session
                .state
                .lock()
                .unwrap()
                .channels
                .retain(|c| !Arc::ptr_eq(&c.inner, &self.inner));
        }
        Ok(result?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn system_names() {
        for name in ["SIM1", "SIM 1", "eSE1", "eSE 2", "SD1", "SD 10"] {
            assert!(is_system_terminal_name(name), "{name}");
        }
        for name in ["SIM", "SIM ", "SIMx", "sim1", "ESE1", "MyTerm", "SIM  1", "SD1a"] {
            assert!(!is_system_terminal_name(name), "{name}");
        }
    }
}
