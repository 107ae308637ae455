//! Telephony-service semantics over the modem: logical channel calls with a
//! sticky `last_error`, SELECT response caching, and a single request worker
//! that callers block on.
//!
//! `last_error` codes: 0 success, 1 generic, 2 missing resource,
//! 3 no such element, 5 invalid parameter.

use std::sync::mpsc::{channel, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, ThreadId};

use thiserror::Error;

use crate::apdu::{bytes_to_hex, hex_to_bytes, sw_success};
use crate::modem::{Modem, ModemResponse};
use crate::oemhook::{
    decode_atr_response, decode_open_response, encode_request, ExchangeRequest, OemHookRequest,
    RilError,
};

/// Failure of the request plumbing itself, as opposed to a card outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ServiceError {
    #[error("request issued from the request worker would deadlock")]
    WouldDeadlock,
    #[error("request worker is gone")]
    Disconnected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LastError {
    Success,
    Generic,
    MissingResource,
    NoSuchElement,
    InvalidParameter,
}

impl LastError {
    pub const ALL: [Self; 5] = [
        Self::Success,
        Self::Generic,
        Self::MissingResource,
        Self::NoSuchElement,
        Self::InvalidParameter,
    ];

    pub fn code(self) -> i32 {
        match self {
            Self::Success => 0,
            Self::Generic => 1,
            Self::MissingResource => 2,
            Self::NoSuchElement => 3,
            Self::InvalidParameter => 5,
        }
    }

    /// Translation used by the open call.
    pub fn for_open(outcome: Result<(), RilError>) -> Self {
        match outcome {
            Ok(()) => Self::Success,
            Err(RilError::MissingResource) => Self::MissingResource,
            Err(RilError::NoSuchElement) => Self::NoSuchElement,
            Err(_) => Self::Generic,
        }
    }

    /// Translation used by the close and transmit calls.
    pub fn for_close_or_transmit(outcome: Result<(), RilError>) -> Self {
        match outcome {
            Ok(()) => Self::Success,
            Err(RilError::InvalidParameter) => Self::InvalidParameter,
            Err(_) => Self::Generic,
        }
    }
}

/// Outcome of an APDU exchange: status word and optional response data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IccIoResult {
    pub sw1: u8,
    pub sw2: u8,
    pub payload: Option<Vec<u8>>,
}

impl IccIoResult {
    pub fn failure() -> Self {
        Self {
            sw1: 0x6f,
            sw2: 0x00,
            payload: None,
        }
    }

    pub fn success(&self) -> bool {
        sw_success(self.sw1)
    }

    /// `hex(payload) ‖ sw`, the sw as four lowercase digits.
    pub fn to_hex(&self) -> String {
        let sw = format!("{:04x}", u16::from_be_bytes([self.sw1, self.sw2]));
        match &self.payload {
            Some(p) => bytes_to_hex(p) + &sw,
            None => sw,
        }
    }
}

#[derive(Debug)]
struct Shared {
    last_error: LastError,
    select_response: Option<Vec<u8>>,
}

type Job = Box<dyn FnOnce() + Send>;

#[derive(Debug)]
struct Inner {
    modem: Arc<Modem>,
    shared: Mutex<Shared>,
    jobs: Sender<Job>,
    worker: ThreadId,
}

/// Handle to the service. Clones share the worker and state.
#[derive(Debug, Clone)]
pub struct PhoneService {
    inner: Arc<Inner>,
}

impl PhoneService {
    pub fn new(modem: Arc<Modem>) -> Self {
        let (jobs, rx) = channel::<Job>();
        let worker = thread::Builder::new()
            .name("phone-service".into())
            .spawn(move || rx.into_iter().for_each(|job| job()))
            .expect("spawning phone-service worker")
            .thread()
            .id();
        Self {
            inner: Arc::new(Inner {
                modem,
                shared: Mutex::new(Shared {
                    last_error: LastError::Success,
                    select_response: None,
                }),
                jobs,
                worker,
            }),
        }
    }

    pub fn modem(&self) -> &Arc<Modem> {
        &self.inner.modem
    }

    /// Runs `f` on the worker and waits for its result.
    fn send_request<R: Send + 'static>(
        &self,
        f: impl FnOnce(&Inner) -> R + Send + 'static,
    ) -> Result<R, ServiceError> {
        if thread::current().id() == self.inner.worker {
            return Err(ServiceError::WouldDeadlock);
        }
        let (tx, rx) = channel();
        let inner = Arc::clone(&self.inner);
        self.inner
            .jobs
            .send(Box::new(move || {
                let _ = tx.send(f(&inner));
            }))
            .map_err(|_| ServiceError::Disconnected)?;
        rx.recv().map_err(|_| ServiceError::Disconnected)
    }

    /// Runs `f` inside the request worker. Service calls made from `f` fail
    /// with [`ServiceError::WouldDeadlock`].
    pub fn run_on_worker<R: Send + 'static>(
        &self,
        f: impl FnOnce(PhoneService) -> R + Send + 'static,
    ) -> Result<R, ServiceError> {
        let svc = self.clone();
        self.send_request(move |_| f(svc))
    }

    /// Returns the channel id, or 0 on failure with `last_error` set.
    pub fn open_icc_logical_channel(&self, aid_hex: &str) -> Result<u32, ServiceError> {
        let aid = hex_to_bytes(aid_hex);
        self.send_request(move |inner| {
            let mut shared = inner.shared.lock().unwrap();
            shared.select_response = None;
            let Ok(aid) = aid else {
                shared.last_error = LastError::InvalidParameter;
                return 0;
            };
            let outcome = encode_request(&OemHookRequest::OpenChannel { aid })
                .map_err(|_| RilError::InvalidParameter)
                .and_then(|frame| inner.modem.submit(&frame))
                .and_then(|raw| decode_open_response(&raw).map_err(|_| RilError::GenericFailure));
            shared.last_error = LastError::for_open(outcome.as_ref().map(|_| ()).map_err(|e| *e));
            match outcome {
                Ok(resp) => {
                    shared.select_response = resp.select_response;
                    resp.channel_id
                }
                Err(_) => 0,
            }
        })
    }

    pub fn close_icc_logical_channel(&self, channel_id: u32) -> Result<bool, ServiceError> {
        self.send_request(move |inner| {
            let outcome = encode_request(&OemHookRequest::CloseChannel { channel_id })
                .map_err(|_| RilError::InvalidParameter)
                .and_then(|frame| inner.modem.submit(&frame))
                .map(|_| ());
            let code = LastError::for_close_or_transmit(outcome);
            inner.shared.lock().unwrap().last_error = code;
            outcome.is_ok()
        })
    }

    /// Lowercase hex of response data and status word; `"6f00"` on failure
    /// with `last_error` set. `len` is P3, or -1 for a header-only command.
    #[allow(clippy::too_many_arguments)]
    pub fn transmit_icc_logical_channel(
        &self,
        cla: u8,
        ins: u8,
        channel_id: u32,
        p1: u8,
        p2: u8,
        len: i32,
        data_hex: Option<&str>,
    ) -> Result<String, ServiceError> {
        let request = build_exchange(cla, ins, channel_id, p1, p2, len, data_hex);
        self.send_request(move |inner| {
            let outcome = request.and_then(|frame| inner.modem.submit(&frame));
            let (result, code) = match outcome {
                Ok(b) if b.len() >= 2 => {
                    let (data, sw) = b.split_at(b.len() - 2);
                    let result = IccIoResult {
                        sw1: sw[0],
                        sw2: sw[1],
                        payload: (!data.is_empty()).then(|| data.to_vec()),
                    };
                    (result, LastError::Success)
                }
                Ok(_) => (IccIoResult::failure(), LastError::Generic),
                Err(e) => (IccIoResult::failure(), LastError::for_close_or_transmit(Err(e))),
            };
            inner.shared.lock().unwrap().last_error = code;
            result.to_hex()
        })
    }

    pub fn get_atr(&self) -> Result<Option<Vec<u8>>, ServiceError> {
        self.send_request(|inner| {
            let frame = encode_request(&OemHookRequest::GetAtr).ok()?;
            let raw = inner.modem.submit(&frame).ok()?;
            decode_atr_response(&raw).ok().flatten()
        })
    }

    /// SELECT response from the most recent open, verbatim.
    pub fn get_select_response(&self) -> Option<Vec<u8>> {
        self.inner.shared.lock().unwrap().select_response.clone()
    }

    pub fn get_last_error(&self) -> i32 {
        self.last_error().code()
    }

    pub fn last_error(&self) -> LastError {
        self.inner.shared.lock().unwrap().last_error
    }

    pub fn sim_io(&self, file_id: u16, path: &str, cmd: &[u8]) -> Result<ModemResponse, ServiceError> {
        let (path, cmd) = (path.to_string(), cmd.to_vec());
        self.send_request(move |inner| inner.modem.submit_sim_io(file_id, &path, &cmd))
    }
}

/// The exchange frame for one transmit call, or the RIL error a malformed
/// argument set amounts to.
fn build_exchange(
    cla: u8,
    ins: u8,
    channel_id: u32,
    p1: u8,
    p2: u8,
    len: i32,
    data_hex: Option<&str>,
) -> Result<Vec<u8>, RilError> {
    let invalid = RilError::InvalidParameter;
    let p3 = match len {
        -1 => None,
        0..=255 => Some(len as u8),
        _ => return Err(invalid),
    };
    let data = match data_hex {
        Some(s) => hex_to_bytes(s).map_err(|_| invalid)?,
        None => Vec::new(),
    };
    encode_request(&OemHookRequest::Exchange(ExchangeRequest {
        channel_id,
        cla,
        ins,
        p1,
        p2,
        p3,
        data,
    }))
    .map_err(|_| invalid)
}
