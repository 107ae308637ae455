//! Simulated UICC: scripted applets keyed by AID, a four-slot logical channel
//! table, per-channel SELECT response caches, GET RESPONSE, a static ATR and a
//! tiny transparent-file store for SIM I/O.

pub mod profile;

use thiserror::Error;

use crate::apdu::{sw_success, CommandApdu, ResponseApdu};

pub use self::profile::CardProfile;

/// Number of channel slots, basic channel included.
pub const CHANNEL_SLOTS: usize = 4;

pub const DEFAULT_ATR: [u8; 2] = [0x3b, 0x00];

pub const SW_OK: u16 = 0x9000;
pub const SW_FUNCTION_NOT_SUPPORTED: u16 = 0x6a81;
pub const SW_FILE_NOT_FOUND: u16 = 0x6a82;
pub const SW_REFERENCED_DATA_NOT_FOUND: u16 = 0x6a88;
pub const SW_WRONG_P1P2: u16 = 0x6b00;
pub const SW_INS_NOT_SUPPORTED: u16 = 0x6d00;

const INS_SELECT: u8 = 0xa4;
const INS_GET_RESPONSE: u8 = 0xc0;
const INS_MANAGE_CHANNEL: u8 = 0x70;
const INS_READ_BINARY: u8 = 0xb0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CardError {
    #[error("card absent")]
    CardAbsent,
    #[error("no free logical channel")]
    NoFreeChannel,
    #[error("applet not found")]
    AppletNotFound,
    #[error("invalid channel {0}")]
    InvalidChannel(u8),
    #[error("malformed command")]
    MalformedCommand,
    #[error("invalid applet: {0}")]
    InvalidApplet(String),
}

/// A reply rule: the first handler whose pattern matches answers the APDU.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Handler {
    pub ins: u8,
    pub p1: Option<u8>,
    pub p2: Option<u8>,
    pub reply: Vec<u8>,
}

impl Handler {
    fn matches(&self, cmd: &CommandApdu) -> bool {
        self.ins == cmd.ins
            && self.p1.is_none_or(|p1| p1 == cmd.p1)
            && self.p2.is_none_or(|p2| p2 == cmd.p2)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppletScript {
    pub aid: Vec<u8>,
    /// FCI followed by the status word.
    pub select_response: Vec<u8>,
    pub handlers: Vec<Handler>,
    pub default_reply: Vec<u8>,
}

impl AppletScript {
    pub fn new(aid: Vec<u8>, select_response: Vec<u8>) -> Self {
        Self {
            aid,
            select_response,
            handlers: Vec::new(),
            default_reply: ResponseApdu::from_sw(SW_INS_NOT_SUPPORTED).to_bytes(),
        }
    }

    pub fn handler(mut self, ins: u8, p1: Option<u8>, p2: Option<u8>, reply: Vec<u8>) -> Self {
        self.handlers.push(Handler { ins, p1, p2, reply });
        self
    }

    pub fn validate(&self) -> Result<(), CardError> {
        let bad = |m: String| Err(CardError::InvalidApplet(m));
        if !(5..=16).contains(&self.aid.len()) {
            return bad(format!("AID length {} not in 5..=16", self.aid.len()));
        }
        // The open response carries the SELECT response behind a length byte.
        if !(2..=255).contains(&self.select_response.len()) {
            return bad("SELECT response must be 2..=255 bytes".into());
        }
        if self.default_reply.len() < 2 || self.handlers.iter().any(|h| h.reply.len() < 2) {
            return bad("every reply needs a status word".into());
        }
        Ok(())
    }

    fn selectable(&self) -> bool {
        self.select_response
            .get(self.select_response.len().wrapping_sub(2))
            .is_some_and(|&sw1| sw_success(sw1))
    }

    fn respond(&self, cmd: &CommandApdu) -> Vec<u8> {
        self.handlers
            .iter()
            .find(|h| h.matches(cmd))
            .map_or(&self.default_reply, |h| &h.reply)
            .clone()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CardFile {
    pub file_id: u16,
    pub path: String,
    pub content: Vec<u8>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChannelSlot {
    pub in_use: bool,
    pub selected_aid: Option<Vec<u8>>,
    pub cached_select_response: Option<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpenedLogicalChannel {
    pub channel_number: u8,
    pub select_response: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VirtualCard {
    atr: Vec<u8>,
    present: bool,
    applets: Vec<AppletScript>,
    channels: [ChannelSlot; CHANNEL_SLOTS],
    files: Vec<CardFile>,
}

impl Default for VirtualCard {
    fn default() -> Self {
        Self::new(DEFAULT_ATR.to_vec())
    }
}

impl VirtualCard {
    pub fn new(atr: Vec<u8>) -> Self {
        let mut card = Self {
            atr,
            present: true,
            applets: Vec::new(),
            channels: Default::default(),
            files: Vec::new(),
        };
        card.reset();
        card
    }

    /// Registers an applet; a later applet with the same AID replaces it.
    pub fn install(&mut self, applet: AppletScript) -> Result<(), CardError> {
        applet.validate()?;
        match self.applets.iter_mut().find(|a| a.aid == applet.aid) {
            Some(existing) => *existing = applet,
            None => self.applets.push(applet),
        }
        Ok(())
    }

    pub fn add_file(&mut self, file_id: u16, path: impl Into<String>, content: Vec<u8>) {
        let path = path.into();
        self.files.retain(|f| !(f.file_id == file_id && f.path == path));
        self.files.push(CardFile {
            file_id,
            path,
            content,
        });
    }

    pub fn applets(&self) -> &[AppletScript] {
        &self.applets
    }

    pub fn files(&self) -> &[CardFile] {
        &self.files
    }

    pub fn atr(&self) -> &[u8] {
        &self.atr
    }

    pub fn is_present(&self) -> bool {
        self.present
    }

    pub fn channel(&self, number: u8) -> Option<&ChannelSlot> {
        self.channels.get(usize::from(number))
    }

    /// Logical channel numbers (1..=3) currently in use.
    pub fn open_logical_channels(&self) -> Vec<u8> {
        (1..CHANNEL_SLOTS as u8)
            .filter(|&n| self.channels[usize::from(n)].in_use)
            .collect()
    }

    /// Drops every logical channel and selection; the basic channel stays
    /// open while the card is present.
    pub fn reset(&mut self) {
        self.channels = Default::default();
        self.channels[0].in_use = self.present;
    }

    /// Removing the card resets it; inserting brings up a fresh basic channel.
    pub fn set_present(&mut self, present: bool) {
        self.present = present;
        self.reset();
    }

    fn find_selectable(&self, aid: &[u8]) -> Result<&AppletScript, CardError> {
        self.applets
            .iter()
            .find(|a| a.aid == aid && a.selectable())
            .ok_or(CardError::AppletNotFound)
    }

    pub fn open_logical_channel(&mut self, aid: &[u8]) -> Result<OpenedLogicalChannel, CardError> {
        if !self.present {
            return Err(CardError::CardAbsent);
        }
        let number = (1..CHANNEL_SLOTS)
            .find(|&n| !self.channels[n].in_use)
            .ok_or(CardError::NoFreeChannel)?;
        let select_response = self.find_selectable(aid)?.select_response.clone();
        self.channels[number] = ChannelSlot {
            in_use: true,
            selected_aid: Some(aid.to_vec()),
            cached_select_response: Some(select_response.clone()),
        };
        Ok(OpenedLogicalChannel {
            channel_number: number as u8,
            select_response,
        })
    }

    pub fn close_logical_channel(&mut self, number: u8) -> Result<(), CardError> {
        match self.channels.get_mut(usize::from(number)) {
            Some(slot) if number != 0 && slot.in_use => {
                *slot = ChannelSlot::default();
                Ok(())
            }
            _ => Err(CardError::InvalidChannel(number)),
        }
    }

    pub fn process_apdu(
        &mut self,
        number: u8,
        cmd: &CommandApdu,
    ) -> Result<ResponseApdu, CardError> {
        if !self.present {
            return Err(CardError::CardAbsent);
        }
        let slot = match self.channels.get_mut(usize::from(number)) {
            Some(slot) if slot.in_use => slot,
            _ => return Err(CardError::InvalidChannel(number)),
        };

        let reply = match (cmd.cla & 0xfc, cmd.ins, cmd.p1, cmd.p2) {
            (0x00, INS_GET_RESPONSE, 0x00, 0x00) => match &slot.cached_select_response {
                Some(cached) => cached.clone(),
                None => sw_bytes(SW_REFERENCED_DATA_NOT_FOUND),
            },
            (_, INS_MANAGE_CHANNEL, _, _) => sw_bytes(SW_FUNCTION_NOT_SUPPORTED),
            (_, INS_SELECT, 0x04, _) => {
                let found = self
                    .applets
                    .iter()
                    .find(|a| a.aid == cmd.data() && a.selectable());
                match found {
                    Some(applet) => {
                        slot.selected_aid = Some(applet.aid.clone());
                        slot.cached_select_response = Some(applet.select_response.clone());
                        applet.select_response.clone()
                    }
                    None => sw_bytes(SW_FILE_NOT_FOUND),
                }
            }
            _ => {
                let applet = slot
                    .selected_aid
                    .as_ref()
                    .and_then(|aid| self.applets.iter().find(|a| &a.aid == aid));
                match applet {
                    Some(applet) => applet.respond(cmd),
                    None => sw_bytes(SW_FILE_NOT_FOUND),
                }
            }
        };
        // Replies are validated to carry a status word.
        Ok(ResponseApdu::parse(&reply).expect("reply without status word"))
    }

    /// Transparent-file read. `cmd` is `ins p1 p2 p3`: READ BINARY (0xB0)
    /// at offset `p1 p2` for `p3` bytes (0 reads to the end).
    pub fn sim_io(&self, file_id: u16, path: &str, cmd: &[u8]) -> Result<Vec<u8>, CardError> {
        if !self.present {
            return Err(CardError::CardAbsent);
        }
        let &[ins, p1, p2, p3, ..] = cmd else {
            return Err(CardError::MalformedCommand);
        };
        let Some(file) = self
            .files
            .iter()
            .find(|f| f.file_id == file_id && f.path.eq_ignore_ascii_case(path))
        else {
            return Ok(sw_bytes(SW_FILE_NOT_FOUND));
        };
        if ins != INS_READ_BINARY {
            return Ok(sw_bytes(SW_INS_NOT_SUPPORTED));
        }
        let offset = usize::from(u16::from_be_bytes([p1, p2]));
        let end = match p3 {
            0 => file.content.len(),
            n => offset + usize::from(n),
        };
        match file.content.get(offset..end) {
            Some(chunk) => Ok(ResponseApdu::new(chunk.to_vec(), 0x90, 0x00).to_bytes()),
            None => Ok(sw_bytes(SW_WRONG_P1P2)),
        }
    }
}

fn sw_bytes(sw: u16) -> Vec<u8> {
    sw.to_be_bytes().to_vec()
}
