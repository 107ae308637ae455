//! Simulated baseband and RIL daemon in front of a [`VirtualCard`].
//!
//! Requests are serialized by one lock; each is applied to the card in full
//! or not at all. Every frame and its outcome go to the optional trace.

use std::fmt;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Mutex;

use crate::apdu::{set_cla_channel, CommandApdu};
use crate::oemhook::{
    decode_request, encode_atr_response, encode_open_response, ExchangeRequest, OemHookRequest,
    OpenChannelResponse, RilError, TraceEvent, TraceLog,
};
use crate::vuicc::{CardError, VirtualCard, CHANNEL_SLOTS};

/// Payload bytes or a RIL error, never both.
pub type ModemResponse = Result<Vec<u8>, RilError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SimState {
    Ready,
    Absent,
    NotReady,
}

impl SimState {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ready => "READY",
            Self::Absent => "ABSENT",
            Self::NotReady => "NOT_READY",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "READY" => Some(Self::Ready),
            "ABSENT" => Some(Self::Absent),
            "NOT_READY" => Some(Self::NotReady),
            _ => None,
        }
    }
}

impl fmt::Display for SimState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn card_error(e: CardError) -> RilError {
    match e {
        CardError::NoFreeChannel => RilError::MissingResource,
        CardError::AppletNotFound => RilError::NoSuchElement,
        CardError::InvalidChannel(_) | CardError::MalformedCommand => RilError::InvalidParameter,
        CardError::CardAbsent | CardError::InvalidApplet(_) => RilError::GenericFailure,
    }
}

#[derive(Debug)]
struct State {
    card: VirtualCard,
    /// Scripted state that overrides the presence-derived one.
    forced: Option<SimState>,
    subscribers: Vec<Sender<SimState>>,
}

impl State {
    fn sim_state(&self) -> SimState {
        self.forced.unwrap_or(if self.card.is_present() {
            SimState::Ready
        } else {
            SimState::Absent
        })
    }
}

#[derive(Debug)]
pub struct Modem {
    state: Mutex<State>,
    trace: Option<TraceLog>,
    legacy_open: bool,
    channel_id_base: u32,
}

impl Modem {
    pub fn new(card: VirtualCard) -> Self {
        Self {
            state: Mutex::new(State {
                card,
                forced: None,
                subscribers: Vec::new(),
            }),
            trace: None,
            legacy_open: false,
            channel_id_base: 0,
        }
    }

    pub fn with_trace(mut self, trace: TraceLog) -> Self {
        self.trace = Some(trace);
        self
    }

    /// Older basebands: the open response never carries the SELECT response.
    pub fn legacy_open(mut self, legacy: bool) -> Self {
        self.legacy_open = legacy;
        self
    }

    /// Channel ids handed out are `base + channel number`.
    pub fn channel_id_base(mut self, base: u32) -> Self {
        self.channel_id_base = base;
        self
    }

    pub fn trace(&self) -> Option<&TraceLog> {
        self.trace.as_ref()
    }

    /// Copy of the card, for inspection.
    pub fn card_snapshot(&self) -> VirtualCard {
        self.state.lock().unwrap().card.clone()
    }

    pub fn submit(&self, frame: &[u8]) -> ModemResponse {
        let mut state = self.state.lock().unwrap();
        self.record(TraceEvent::Request(frame.to_vec()));
        let outcome = self.handle(&mut state.card, frame);
        self.record(match &outcome {
            Ok(payload) => TraceEvent::Response(payload.clone()),
            Err(e) => TraceEvent::Error(*e),
        });
        outcome
    }

    pub fn submit_sim_io(&self, file_id: u16, path: &str, cmd: &[u8]) -> ModemResponse {
        let state = self.state.lock().unwrap();
        state.card.sim_io(file_id, path, cmd).map_err(card_error)
    }

    pub fn sim_state(&self) -> SimState {
        self.state.lock().unwrap().sim_state()
    }

    pub fn set_card_present(&self, present: bool) {
        self.update(|s| s.card.set_present(present));
    }

    /// Forces the reported state; `None` returns to presence tracking.
    pub fn force_sim_state(&self, forced: Option<SimState>) {
        self.update(|s| s.forced = forced);
    }

    pub fn subscribe(&self) -> Receiver<SimState> {
        let (tx, rx) = channel();
        self.state.lock().unwrap().subscribers.push(tx);
        rx
    }

    fn update(&self, f: impl FnOnce(&mut State)) {
        let mut state = self.state.lock().unwrap();
        let before = state.sim_state();
        f(&mut state);
        let after = state.sim_state();
        if before != after {
            state.subscribers.retain(|tx| tx.send(after).is_ok());
        }
    }

    fn record(&self, event: TraceEvent) {
        if let Some(trace) = &self.trace {
            trace.record(event);
        }
    }

    fn channel_number(&self, channel_id: u32) -> Result<u8, RilError> {
        channel_id
            .checked_sub(self.channel_id_base)
            .filter(|n| (1..CHANNEL_SLOTS as u32).contains(n))
            .map(|n| n as u8)
            .ok_or(RilError::InvalidParameter)
    }

    fn handle(&self, card: &mut VirtualCard, frame: &[u8]) -> ModemResponse {
        let request = decode_request(frame).map_err(|_| RilError::InvalidParameter)?;
        match request {
            OemHookRequest::GetAtr => {
                if !card.is_present() {
                    return Err(RilError::GenericFailure);
                }
                encode_atr_response(card.atr()).map_err(|_| RilError::GenericFailure)
            }
            OemHookRequest::OpenChannel { aid } => {
                if aid.is_empty() {
                    return Err(RilError::InvalidParameter);
                }
                let opened = card.open_logical_channel(&aid).map_err(card_error)?;
                let response = OpenChannelResponse {
                    channel_id: self.channel_id_base + u32::from(opened.channel_number),
                    select_response: (!self.legacy_open).then_some(opened.select_response),
                };
                encode_open_response(&response).map_err(|_| RilError::GenericFailure)
            }
            OemHookRequest::CloseChannel { channel_id } => {
                let number = self.channel_number(channel_id)?;
                card.close_logical_channel(number).map_err(card_error)?;
                Ok(Vec::new())
            }
            OemHookRequest::Exchange(x) => self.exchange(card, &x),
        }
    }

    fn exchange(&self, card: &mut VirtualCard, x: &ExchangeRequest) -> ModemResponse {
        let number = match x.channel_id {
            0 => 0,
            id => self.channel_number(id)?,
        };
        let cla = set_cla_channel(x.cla, number).map_err(|_| RilError::InvalidParameter)?;
        let cmd = CommandApdu::from_exchange_fields(cla, x.ins, x.p1, x.p2, x.p3, &x.data)
            .map_err(|_| RilError::InvalidParameter)?;
        let reply = card.process_apdu(number, &cmd).map_err(card_error)?;
        Ok(reply.to_bytes())
    }
}
