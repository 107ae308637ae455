//! Secure element middleware over a simulated UICC.
//!
//! The layers, top to bottom:
//!
//! * [`transport`]: readers, sessions and channels for client code, gated
//!   by [`access_control`].
//! * [`uicc_terminal`]: the [`terminal::Terminal`] provider for the SIM.
//! * [`phone_service`]: telephony-service calls with `last_error` codes.
//! * [`modem`]: baseband speaking the [`oemhook`] frame protocol.
//! * [`vuicc`]: the scripted card, configured by a TOML profile.
//!
//! [`apdu`] holds the ISO 7816-4 model shared by every layer and [`cli`] the
//! command-line front end.

pub mod access_control;
pub mod apdu;
pub mod cli;
pub mod modem;
pub mod oemhook;
pub mod phone_service;
pub mod stack;
pub mod terminal;
pub mod transport;
pub mod uicc_terminal;
pub mod vuicc;
