//! Wires a card profile into the full stack: card, modem, telephony service,
//! UICC terminal and transport service.

use std::sync::Arc;

use crate::modem::Modem;
use crate::oemhook::TraceLog;
use crate::phone_service::PhoneService;
use crate::transport::{AccessConfig, Reader, SeService};
use crate::uicc_terminal::UiccTerminal;
use crate::vuicc::profile::ProfileError;
use crate::vuicc::CardProfile;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StackOptions {
    /// Open responses omit the SELECT response and the terminal falls back
    /// to GET RESPONSE.
    pub legacy: bool,
}

pub struct Stack {
    pub service: SeService,
    pub reader: Reader,
    pub phone: PhoneService,
    pub modem: Arc<Modem>,
    pub trace: TraceLog,
}

impl Stack {
    pub fn from_profile(profile: &CardProfile, options: StackOptions) -> Result<Self, ProfileError> {
        let trace = TraceLog::new();
        let card = profile.build_card()?;
        let modem = Arc::new(Modem::new(card).legacy_open(options.legacy).with_trace(trace.clone()));
        let phone = PhoneService::new(Arc::clone(&modem));
        let terminal = UiccTerminal::new(phone.clone()).legacy_mode(options.legacy);
        let mut service = SeService::new().with_access_config(AccessConfig {
            ara_aid: profile.ara_aid(),
            closed_world: profile.closed_world(),
        });
        let reader = service
            .register(Box::new(terminal), true)
            .expect("the UICC terminal has a system name");
        Ok(Self {
            service,
            reader,
            phone,
            modem,
            trace,
        })
    }
}
