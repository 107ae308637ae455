//! Terminal provider for the UICC, layered on the telephony service.
//!
//! ISO channel numbers 1 to 3 map to modem channel ids through
//! `channel_ids`; slot 0 is the basic channel and always maps to id 0.

use std::sync::mpsc::Receiver;
use std::sync::Arc;

use crate::apdu::{bytes_to_hex, hex_to_bytes, CommandApdu};
use crate::modem::{Modem, SimState};
use crate::oemhook::RilError;
use crate::phone_service::{LastError, PhoneService, ServiceError};
use crate::terminal::{OpenedChannel, Terminal, TerminalError};
use crate::vuicc::CHANNEL_SLOTS;

pub const UICC_TERMINAL_NAME: &str = "SIM1";

impl From<ServiceError> for TerminalError {
    fn from(e: ServiceError) -> Self {
        TerminalError::IoError(e.to_string())
    }
}

#[derive(Debug)]
pub struct UiccTerminal {
    phone: PhoneService,
    channel_ids: [u32; CHANNEL_SLOTS],
    select_responses: [Option<Vec<u8>>; CHANNEL_SLOTS],
    name: String,
    legacy_mode: bool,
    /// Presence transitions invalidate every channel id.
    card_events: Receiver<SimState>,
}

impl UiccTerminal {
    pub fn new(phone: PhoneService) -> Self {
        let card_events = phone.modem().subscribe();
        Self {
            phone,
            channel_ids: [0; CHANNEL_SLOTS],
            select_responses: Default::default(),
            name: UICC_TERMINAL_NAME.to_string(),
            legacy_mode: false,
            card_events,
        }
    }

    /// Recover SELECT responses with GET RESPONSE when the open call does not
    /// deliver them.
    pub fn legacy_mode(mut self, legacy: bool) -> Self {
        self.legacy_mode = legacy;
        self
    }

    pub fn phone(&self) -> &PhoneService {
        &self.phone
    }

    fn modem(&self) -> &Arc<Modem> {
        self.phone.modem()
    }

    pub fn channel_ids(&self) -> [u32; CHANNEL_SLOTS] {
        self.channel_ids
    }

    fn sync_card_state(&mut self) {
        if self.card_events.try_iter().count() > 0 {
            self.channel_ids = [0; CHANNEL_SLOTS];
            self.select_responses = Default::default();
        }
    }

    fn failure(&self) -> TerminalError {
        TerminalError::from_last_error(self.phone.get_last_error())
    }

    fn fetch_select_response(&mut self, number: u8) -> Option<Vec<u8>> {
        if let Some(select) = self.phone.get_select_response() {
            return Some(select);
        }
        if !self.legacy_mode {
            return None;
        }
        let get_response = [number, 0xc0, 0x00, 0x00, 0x00];
        self.transmit_inner(&get_response).ok()
    }

    fn transmit_inner(&mut self, command: &[u8]) -> Result<Vec<u8>, TerminalError> {
        let cmd = CommandApdu::parse(command).map_err(|_| TerminalError::InvalidParameter)?;
        let args = cmd.to_telephony_args();
        let channel_id = self.channel_ids[usize::from(args.channel_index)];
        if args.channel_index != 0 && channel_id == 0 {
            return Err(TerminalError::InvalidParameter);
        }
        let reply = self.phone.transmit_icc_logical_channel(
            args.cla_masked,
            args.ins,
            channel_id,
            args.p1,
            args.p2,
            args.len,
            args.data_hex.as_deref(),
        )?;
        if self.phone.last_error() != LastError::Success {
            return Err(self.failure());
        }
        hex_to_bytes(&reply).map_err(|e| TerminalError::IoError(e.to_string()))
    }
}

impl Terminal for UiccTerminal {
    fn name(&self) -> &str {
        &self.name
    }

    fn is_card_present(&self) -> bool {
        self.modem().sim_state() == SimState::Ready
    }

    fn atr(&mut self) -> Option<Vec<u8>> {
        self.phone.get_atr().ok().flatten()
    }

    fn open_logical_channel(&mut self, aid: Option<&[u8]>) -> Result<OpenedChannel, TerminalError> {
        self.sync_card_state();
        let aid = aid.ok_or(TerminalError::UnsupportedOperation)?;
        let channel_id = self.phone.open_icc_logical_channel(&bytes_to_hex(aid))?;
        if channel_id == 0 {
            return Err(self.failure());
        }
        let Some(number) = (1..CHANNEL_SLOTS).find(|&n| self.channel_ids[n] == 0) else {
            // The modem has more channels than we can address.
            self.phone.close_icc_logical_channel(channel_id)?;
            return Err(TerminalError::MissingResource);
        };
        self.channel_ids[number] = channel_id;
        let select_response = self.fetch_select_response(number as u8);
        self.select_responses[number] = select_response.clone();
        Ok(OpenedChannel {
            number: number as u8,
            select_response,
        })
    }

    fn transmit(&mut self, command: &[u8]) -> Result<Vec<u8>, TerminalError> {
        self.sync_card_state();
        self.transmit_inner(command)
    }

    fn close_logical_channel(&mut self, number: u8) -> Result<(), TerminalError> {
        self.sync_card_state();
        let slot = usize::from(number);
        if slot == 0 || slot >= CHANNEL_SLOTS || self.channel_ids[slot] == 0 {
            return Err(TerminalError::InvalidParameter);
        }
        let closed = self.phone.close_icc_logical_channel(self.channel_ids[slot]);
        self.channel_ids[slot] = 0;
        self.select_responses[slot] = None;
        if closed? {
            Ok(())
        } else {
            Err(self.failure())
        }
    }

    fn select_response(&self, number: u8) -> Option<Vec<u8>> {
        self.select_responses.get(usize::from(number)).cloned().flatten()
    }

    fn sim_io_exchange(&mut self, file_id: u16, path: &str, cmd: &[u8]) -> Result<Vec<u8>, TerminalError> {
        match self.phone.sim_io(file_id, path, cmd)? {
            Ok(payload) => Ok(payload),
            Err(RilError::InvalidParameter) => Err(TerminalError::InvalidParameter),
            Err(e) => Err(TerminalError::IoError(e.name().to_string())),
        }
    }

    fn state_changes(&self) -> Receiver<SimState> {
        self.modem().subscribe()
    }
}
