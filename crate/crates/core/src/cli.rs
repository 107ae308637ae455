//! Command-line front end over the full stack.
//!
//! Exit status: 0 success, 1 a command failed, 2 bad usage or an unreadable
//! profile or script.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::access_control::ClientIdentity;
use crate::apdu::{bytes_to_hex, hex_to_bytes};
use crate::modem::SimState;
use crate::stack::{Stack, StackOptions};
use crate::transport::{Channel, Session, TransportError};
use crate::vuicc::CardProfile;

pub const EXIT_OK: i32 = 0;
pub const EXIT_COMMAND_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "omapi", version, about = "Drive a simulated UICC through the secure element stack")]
struct Cli {
    /// Card profile (TOML).
    #[arg(long, env = "OMAPI_PROFILE")]
    profile: PathBuf,
    /// Client certificate hash, hex. Anonymous when omitted.
    #[arg(long)]
    cert: Option<String>,
    /// Echo OEM-hook traffic before each command's output.
    #[arg(long)]
    trace: bool,
    /// Baseband without SELECT responses in open replies.
    #[arg(long)]
    legacy: bool,
    /// In scripts, continue after a failing line.
    #[arg(long)]
    keep_going: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// List readers, system terminals first.
    Readers,
    /// Print the card ATR.
    Atr,
    /// Open a logical channel to an applet.
    Open {
        #[arg(long)]
        aid: String,
    },
    /// Send an APDU on an open channel; channel 0 is the basic channel.
    Transmit {
        #[arg(long)]
        channel: u8,
        #[arg(long)]
        apdu: String,
    },
    /// Close a channel.
    Close {
        #[arg(long)]
        channel: u8,
    },
    /// Print the SIM state, or insert/remove the card.
    SimState {
        #[arg(long, value_parser = ["READY", "ABSENT"], ignore_case = true)]
        set: Option<String>,
    },
    /// Run one command per line; `#` starts a comment.
    Script { file: PathBuf },
}

/// One script line, parsed with the same grammar as the command line.
#[derive(Debug, Parser)]
#[command(name = "script", no_binary_name = true)]
struct ScriptLine {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug)]
enum CmdError {
    Usage(String),
    Failed(String),
}

impl CmdError {
    fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::Failed(_) => EXIT_COMMAND_FAILED,
        }
    }
}

impl std::fmt::Display for CmdError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Usage(msg) | Self::Failed(msg) => f.write_str(msg),
        }
    }
}

impl From<TransportError> for CmdError {
    fn from(e: TransportError) -> Self {
        Self::Failed(e.to_string())
    }
}

fn parse_hex(what: &str, s: &str) -> Result<Vec<u8>, CmdError> {
    hex_to_bytes(s).map_err(|e| CmdError::Usage(format!("{what}: {e}")))
}

struct Context<'a> {
    stack: Stack,
    client: ClientIdentity,
    trace: bool,
    keep_going: bool,
    session: Option<Session>,
    channels: BTreeMap<u8, Channel>,
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

impl Context<'_> {
    fn session(&mut self) -> Result<Session, CmdError> {
        if let Some(s) = &self.session {
            return Ok(s.clone());
        }
        let session = self.stack.reader.open_session(self.client.clone())?;
        self.session = Some(session.clone());
        Ok(session)
    }

    fn flush_trace(&mut self) {
        for event in self.stack.trace.drain() {
            if self.trace {
                let _ = writeln!(self.out, "{event}");
            }
        }
    }

    /// Runs one command; trace lines precede its output.
    fn run(&mut self, command: &Command) -> Result<(), CmdError> {
        let result = self.execute(command);
        self.flush_trace();
        let lines = result?;
        for line in lines {
            let _ = writeln!(self.out, "{line}");
        }
        Ok(())
    }

    fn execute(&mut self, command: &Command) -> Result<Vec<String>, CmdError> {
        match command {
            Command::Readers => Ok(self
                .stack
                .service
                .readers()
                .iter()
                .map(|r| format!("{} {}", r.name(), if r.is_system() { "system" } else { "add-on" }))
                .collect()),
            Command::Atr => {
                let atr = self.stack.reader.with_terminal(|t| t.atr());
                let atr = atr.ok_or(TransportError::CardAbsent)?;
                Ok(vec![bytes_to_hex(&atr)])
            }
            Command::Open { aid } => {
                let aid = parse_hex("--aid", aid)?;
                let channel = self.session()?.open_logical_channel(Some(&aid))?;
                let select = channel
                    .select_response()
                    .map_or_else(|| "none".to_string(), bytes_to_hex);
                let number = channel.number();
                self.channels.insert(number, channel);
                Ok(vec![format!("channel: {number}"), format!("select-response: {select}")])
            }
            Command::Transmit { channel, apdu } => {
                let apdu = parse_hex("--apdu", apdu)?;
                let channel = match self.channels.get(channel) {
                    Some(c) => c.clone(),
                    None if *channel == 0 => {
                        let basic = self.session()?.open_basic_channel(None)?;
                        self.channels.insert(0, basic.clone());
                        basic
                    }
                    None => return Err(CmdError::Failed(format!("channel {channel} is not open"))),
                };
                Ok(vec![bytes_to_hex(&channel.transmit(&apdu)?)])
            }
            Command::Close { channel } => {
                let ch = self
                    .channels
                    .remove(channel)
                    .ok_or_else(|| CmdError::Failed(format!("channel {channel} is not open")))?;
                ch.close()?;
                Ok(vec![])
            }
            Command::SimState { set } => {
                if let Some(state) = set {
                    let present = SimState::parse(state) == Some(SimState::Ready);
                    self.stack.modem.set_card_present(present);
                    if !present {
                        // The card dropped every logical channel.
                        for (_, ch) in std::mem::take(&mut self.channels) {
                            let _ = ch.close();
                        }
                    }
                }
                Ok(vec![self.stack.modem.sim_state().to_string()])
            }
            Command::Script { .. } => Err(CmdError::Usage("scripts cannot nest".into())),
        }
    }

    fn run_script(&mut self, text: &str) -> i32 {
        let mut status = EXIT_OK;
        for (index, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let outcome = ScriptLine::try_parse_from(line.split_whitespace())
                .map_err(|e| CmdError::Usage(e.render().to_string().trim_end().to_string()))
                .and_then(|parsed| self.run(&parsed.command));
            if let Err(e) = outcome {
                let _ = writeln!(self.err, "error: line {}: {e}", index + 1);
                if status == EXIT_OK {
                    status = e.exit_code();
                }
                if !self.keep_going {
                    break;
                }
            }
        }
        status
    }
}

/// Runs the CLI on `argv` (program name first).
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = write!(out, "{}", e.render());
            return EXIT_OK;
        }
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return EXIT_USAGE;
        }
    };
    let usage = |err: &mut dyn Write, msg: String| {
        let _ = writeln!(err, "error: {msg}");
        EXIT_USAGE
    };

    let profile = match CardProfile::load(&cli.profile) {
        Ok(p) => p,
        Err(e) => return usage(err, format!("{}: {e}", cli.profile.display())),
    };
    let client = match &cli.cert {
        None => ClientIdentity::Anonymous,
        Some(hex) => match hex_to_bytes(hex) {
            Ok(hash) if !hash.is_empty() => ClientIdentity::Certificate(hash),
            Ok(_) => return usage(err, "--cert: empty certificate hash".into()),
            Err(e) => return usage(err, format!("--cert: {e}")),
        },
    };
    let stack = match Stack::from_profile(&profile, StackOptions { legacy: cli.legacy }) {
        Ok(s) => s,
        Err(e) => return usage(err, format!("{}: {e}", cli.profile.display())),
    };
    let script = match &cli.command {
        Command::Script { file } => match std::fs::read_to_string(file) {
            Ok(text) => Some(text),
            Err(e) => return usage(err, format!("{}: {e}", file.display())),
        },
        _ => None,
    };

    let mut ctx = Context {
        stack,
        client,
        trace: cli.trace,
        keep_going: cli.keep_going,
        session: None,
        channels: BTreeMap::new(),
        out,
        err,
    };
    match script {
        Some(text) => ctx.run_script(&text),
        None => match ctx.run(&cli.command) {
            Ok(()) => EXIT_OK,
            Err(e) => {
                let _ = writeln!(ctx.err, "error: {e}");
                e.exit_code()
            }
        },
    }
}
