//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{h, oracle_decision, oracle_from_hex, oracle_to_hex, OraclePolicy, APPLET, APPLET_FCI, DENIED_CERT, FILTERED_APPLET};
use omapi_uicc::access_control::{
    decide_apdu, decide_channel_open, AccessRule, ApduFilter, ClientIdentity, Decision, Policy, RuleDatabase,
};
use omapi_uicc::apdu::{bytes_to_hex, classify_sw_failure, hex_to_bytes, sw_success, SwFailure};
use omapi_uicc::oemhook::{decode_request, encode_request, map_ril_error, ExchangeRequest, OemHookRequest, RilError, TraceEvent};
use omapi_uicc::phone_service::LastError;
use omapi_uicc::terminal::TerminalError;
use omapi_uicc::transport::TransportError;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn exchange(channel_id: u32, header: &str, p3: Option<u8>, data: &str) -> OemHookRequest {
    let header = h(header);
    OemHookRequest::Exchange(ExchangeRequest {
        channel_id,
        cla: header[0],
        ins: header[1],
        p1: header[2],
        p2: header[3],
        p3,
        data: h(data),
    })
}

fn frame_vectors() {
    let start = Instant::now();
    let vectors = [
        (OemHookRequest::GetAtr, "150d0004"),
        (OemHookRequest::OpenChannel { aid: h("0102030405") }, "15090009 0102030405"),
        (OemHookRequest::CloseChannel { channel_id: 1 }, "150a0008 00000001"),
        (exchange(0, "80f20000", None, ""), "15080008 80f20000"),
        (exchange(1, "00b00000", Some(5), ""), "150b000d 00b0000005 00000001"),
        (exchange(2, "00f20000", None, ""), "150c000c 00f20000 00000002"),
        (exchange(0, "00b00000", Some(5), ""), "15080009 00b0000005"),
        (exchange(0, "00d60000", Some(2), "aabb"), "1508000b 00d6000002 aabb"),
        (exchange(0, "00880000", Some(2), "112200"), "1508000c 0088000002 112200"),
        (exchange(3, "00440000", None, ""), "150c000c 00440000 00000003"),
        (exchange(1, "00d60000", Some(2), "aabb"), "150b000f 00d6000002 00000001 aabb"),
        (exchange(2, "00880000", Some(2), "112200"), "150b0010 0088000002 00000002 112200"),
        (exchange(1, "80ca9f7f", Some(0), ""), "150b000d 80ca9f7f00 00000001"),
        (exchange(0x100, "00a40000", None, ""), "150c000c 00a40000 00000100"),
        (
            OemHookRequest::OpenChannel { aid: h("a0000000871002ff49ff0589000001ff") },
            "15090014 a0000000871002ff49ff0589000001ff",
        ),
        (OemHookRequest::CloseChannel { channel_id: 3 }, "150a0008 00000003"),
        (OemHookRequest::CloseChannel { channel_id: 0x0102_0304 }, "150a0008 01020304"),
    ];
    let mut codes = std::collections::BTreeSet::new();
    for (req, expected) in &vectors {
        let frame = encode_request(req).unwrap();
        assert_eq!(frame, h(expected), "{req:?}");
        assert_eq!(decode_request(&frame).unwrap(), *req);
        codes.insert(req.command_code() as u16);
    }
    assert_eq!(codes.len(), 6, "every command code covered");
    assert_eq!(encode_request(&vectors[0].0).unwrap(), [0x15, 0x0d, 0x00, 0x04]);
    assert_eq!(encode_request(&vectors[5].0).unwrap()[2..4], [0x00, 0x0c]);
    assert!(start.elapsed() < Duration::from_secs(1));
}

fn random_request(rng: &mut StdRng) -> OemHookRequest {
    match rng.gen_range(0..4) {
        0 => OemHookRequest::GetAtr,
        1 => {
            let len = rng.gen_range(0..=32);
            OemHookRequest::OpenChannel { aid: (0..len).map(|_| rng.gen()).collect() }
        }
        2 => OemHookRequest::CloseChannel { channel_id: rng.gen() },
        _ => {
            let p3: Option<u8> = rng.gen_bool(0.7).then(|| rng.gen());
            let len = if p3.is_some() { rng.gen_range(0..=256) } else { 0 };
            OemHookRequest::Exchange(ExchangeRequest {
                channel_id: if rng.gen_bool(0.3) { 0 } else { rng.gen() },
                cla: rng.gen(),
                ins: rng.gen(),
                p1: rng.gen(),
                p2: rng.gen(),
                p3,
                data: (0..len).map(|_| rng.gen()).collect(),
            })
        }
    }
}

fn codec_fuzz() {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x5eed_0001);
    for _ in 0..10_000 {
        let req = random_request(&mut rng);
        let frame = encode_request(&req).unwrap();
        assert_eq!(usize::from(u16::from_be_bytes([frame[2], frame[3]])), frame.len());
        assert_eq!(decode_request(&frame).unwrap(), req);
    }
    for _ in 0..10_000 {
        let len = rng.gen_range(0..64);
        let mut raw: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
        if len >= 4 && rng.gen_bool(0.5) {
            // Plausible headers reach the per-command decoders.
            raw[0] = 0x15;
            raw[1] = rng.gen_range(0x08..=0x0d);
            raw[2..4].copy_from_slice(&(len as u16).to_be_bytes());
        }
        let _ = decode_request(&raw);
    }
    assert!(start.elapsed() < Duration::from_secs(10));
}

fn loopback_trace() {
    let stack = common::stack("loopback", false);
    let session = stack.reader.open_session(ClientIdentity::Anonymous).unwrap();
    let channel = session.open_logical_channel(Some(&APPLET)).unwrap();
    assert_eq!(channel.transmit(&h("00440000")).unwrap(), h("9000"));
    assert_eq!(channel.transmit(&h("00ca000002")).unwrap(), h("cafe9000"));
    assert_eq!(channel.transmit(&h("00d6000002aabb")).unwrap(), h("9000"));
    assert_eq!(channel.transmit(&h("0088000002112200")).unwrap(), h("0102030405069000"));
    channel.close().unwrap();

    let golden = std::fs::read_to_string(common::fixture("golden/loopback.trace")).unwrap();
    assert_eq!(stack.trace.render(), golden);
    for event in stack.trace.snapshot() {
        if let TraceEvent::Request(frame) = event {
            assert_eq!(usize::from(u16::from_be_bytes([frame[2], frame[3]])), frame.len());
        }
    }
}

fn error_taxonomy() {
    let stack = common::stack("loopback", false);
    let session = stack.reader.open_session(ClientIdentity::Anonymous).unwrap();
    let has_error = |name: &str| {
        stack
            .trace
            .drain()
            .iter()
            .any(|e| matches!(e, TraceEvent::Error(n) if n.name() == name))
    };
    stack.trace.drain();

    // Unknown AID.
    assert_eq!(
        session.open_logical_channel(Some(&h("deadbeef00"))).unwrap_err(),
        TransportError::NoSuchElement
    );
    assert!(has_error("NO_SUCH_ELEMENT"));
    assert_eq!(map_ril_error(29), RilError::NoSuchElement);
    assert_eq!(stack.phone.get_last_error(), 3);
    assert_eq!(TerminalError::from_last_error(3), TerminalError::NoSuchElement);

    // Channel exhaustion.
    let channels: Vec<_> = (0..3).map(|_| session.open_logical_channel(Some(&APPLET)).unwrap()).collect();
    stack.trace.drain();
    assert_eq!(
        session.open_logical_channel(Some(&APPLET)).unwrap_err(),
        TransportError::MissingResource
    );
    assert!(has_error("MISSING_RESOURCE"));
    assert_eq!(map_ril_error(30), RilError::MissingResource);
    assert_eq!(stack.phone.get_last_error(), 2);
    assert_eq!(TerminalError::from_last_error(2), TerminalError::MissingResource);

    // Close of a channel the modem no longer knows.
    let victim = &channels[1];
    assert!(stack.phone.close_icc_logical_channel(u32::from(victim.number())).unwrap());
    stack.trace.drain();
    assert_eq!(victim.close().unwrap_err(), TransportError::InvalidParameter);
    assert!(has_error("INVALID_PARAMETER"));
    assert_eq!(map_ril_error(27), RilError::InvalidParameter);
    assert_eq!(stack.phone.get_last_error(), 5);
    assert_eq!(LastError::for_close_or_transmit(Err(RilError::InvalidParameter)).code(), 5);
    assert_eq!(TerminalError::from_last_error(5), TerminalError::InvalidParameter);
}

fn channel_ceiling() {
    let stack = common::stack("loopback", false);
    let session = stack.reader.open_session(ClientIdentity::Anonymous).unwrap();
    let numbers: Vec<u8> = (0..3)
        .map(|_| session.open_logical_channel(Some(&APPLET)).unwrap().number())
        .collect();
    assert_eq!(numbers, [1, 2, 3]);
    assert_eq!(
        session.open_logical_channel(Some(&APPLET)).unwrap_err(),
        TransportError::MissingResource
    );
    assert_eq!(stack.modem.card_snapshot().open_logical_channels(), [1, 2, 3]);
}

fn legacy_equivalence() {
    let select = |legacy: bool| {
        let stack = common::stack("loopback", legacy);
        let session = stack.reader.open_session(ClientIdentity::Anonymous).unwrap();
        stack.trace.drain();
        let channel = session.open_logical_channel(Some(&APPLET)).unwrap();
        (channel.select_response().map(<[u8]>::to_vec), stack.trace.render())
    };
    let (normal, _) = select(false);
    let (legacy, trace) = select(true);
    assert_eq!(normal, Some(h(APPLET_FCI)));
    assert_eq!(legacy, normal);
    assert!(trace.contains("<< 010100\n"), "{trace}");
    assert!(trace.contains(">> 150b000d00c000000000000001\n"), "{trace}");
}

fn hex_oracle() {
    let mut rng = StdRng::seed_from_u64(0x5eed_0007);
    const ALPHABET: &[u8] = b"0123456789abcdefABCDEFgz -";
    for _ in 0..10_000 {
        let bytes: Vec<u8> = (0..rng.gen_range(0..40)).map(|_| rng.gen()).collect();
        let s = bytes_to_hex(&bytes);
        assert_eq!(s, oracle_to_hex(&bytes));
        assert!(s.bytes().all(|c| c.is_ascii_digit() || (b'a'..=b'f').contains(&c)));
        assert_eq!(hex_to_bytes(&s).ok(), Some(bytes));

        let len = rng.gen_range(0..12);
        let s: String = (0..len)
            .map(|_| {
                let pool = if rng.gen_bool(0.9) { &ALPHABET[..22] } else { ALPHABET };
                char::from(pool[rng.gen_range(0..pool.len())])
            })
            .collect();
        assert_eq!(hex_to_bytes(&s).ok(), oracle_from_hex(&s), "{s:?}");
    }
}

fn access_matrix() {
    let cert = [0x42u8; 20];
    let client = ClientIdentity::Certificate(cert.to_vec());
    let keys = [
        (Some(APPLET.to_vec()), Some(cert.to_vec())),
        (Some(APPLET.to_vec()), None),
        (None, Some(cert.to_vec())),
        (None, None),
    ];
    for presence in 0..16u8 {
        for policies in 0..16u8 {
            let levels: [Option<OraclePolicy>; 4] = std::array::from_fn(|i| {
                (presence >> i & 1 == 1).then_some(if policies >> i & 1 == 1 {
                    OraclePolicy::Allow
                } else {
                    OraclePolicy::Deny
                })
            });
            let rules = keys
                .iter()
                .zip(levels)
                .filter_map(|((aid, cert), p)| {
                    let policy = match p? {
                        OraclePolicy::Allow => Policy::Allow,
                        OraclePolicy::Deny => Policy::Deny,
                    };
                    Some(AccessRule { aid: aid.clone(), cert: cert.clone(), policy })
                })
                .collect();
            let db = RuleDatabase::new(rules).unwrap();
            let expected = match oracle_decision(levels) {
                OraclePolicy::Allow => Decision::Allow,
                OraclePolicy::Deny => Decision::Deny,
            };
            assert_eq!(decide_channel_open(&db, &client, Some(&APPLET)), expected, "{levels:?}");
        }
    }

    let db = RuleDatabase::new(vec![AccessRule {
        aid: None,
        cert: None,
        policy: Policy::Filtered(vec![ApduFilter { header: [0x00, 0xa4, 0x00, 0x00], mask: [0xff, 0xff, 0x00, 0x00] }]),
    }])
    .unwrap();
    let anyone = ClientIdentity::Anonymous;
    assert_eq!(decide_channel_open(&db, &anyone, Some(&APPLET)), Decision::Allow);
    assert_eq!(decide_apdu(&db, &anyone, Some(&APPLET), [0x00, 0xa4, 0x04, 0x00]), Decision::Allow);
    assert_eq!(decide_apdu(&db, &anyone, Some(&APPLET), [0x80, 0xca, 0x00, 0x00]), Decision::Deny);

    let stack = common::stack("access", false);
    let session = stack
        .reader
        .open_session(ClientIdentity::Certificate(DENIED_CERT.to_vec()))
        .unwrap();
    stack.trace.drain();
    assert_eq!(
        session.open_logical_channel(Some(&FILTERED_APPLET)).unwrap_err(),
        TransportError::AccessDenied
    );
    let opens = stack
        .trace
        .drain()
        .into_iter()
        .filter(|e| matches!(e, TraceEvent::Request(f) if f[..2] == [0x15, 0x09]))
        .count();
    assert_eq!(opens, 0);
}

fn sw_semantics() {
    let ok: Vec<u8> = (0..=255u8).filter(|&b| sw_success(b)).collect();
    assert_eq!(ok, [0x90, 0x91, 0x9e, 0x9f]);
    assert_eq!(classify_sw_failure(0x94, 0x08), SwFailure::FileTypeMismatch);
    for sw2 in (0..=255u8).filter(|&b| b != 0x08) {
        assert_eq!(classify_sw_failure(0x94, sw2), SwFailure::FileNotFound);
    }
    assert_eq!(classify_sw_failure(0x6a, 0x82), SwFailure::Generic { sw1: 0x6a, sw2: 0x82 });
}

fn cli_determinism() {
    let script = common::fixture("fixtures/scenario.script");
    let commands = std::fs::read_to_string(&script)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .count();
    assert_eq!(commands, 20);
    let replay = || {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let argv = [
            "omapi".into(),
            "--profile".into(),
            common::fixture("fixtures/loopback.toml").into_os_string(),
            "--trace".into(),
            "--keep-going".into(),
            "script".into(),
            script.clone().into_os_string(),
        ];
        let code = omapi_uicc::cli::run(argv, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    };
    let first = replay();
    assert_eq!(first, replay());
    let requests: Vec<&str> = first.1.lines().filter_map(|l| l.strip_prefix(">> ")).collect();
    assert!(!requests.is_empty());
    for frame in requests {
        assert!(decode_request(&h(frame)).is_ok(), "{frame}");
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn()); 10] = [
        ("frame vectors", frame_vectors),
        ("codec round-trip fuzz", codec_fuzz),
        ("full-stack loopback golden trace", loopback_trace),
        ("error taxonomy end-to-end", error_taxonomy),
        ("channel ceiling", channel_ceiling),
        ("legacy select-response fallback", legacy_equivalence),
        ("hex codec oracle", hex_oracle),
        ("access-control matrix", access_matrix),
        ("status-word semantics", sw_semantics),
        ("cli script determinism", cli_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let ok = catch_unwind(AssertUnwindSafe(check)).is_ok();
        failed += usize::from(!ok);
        println!(
            "{} {:>2} {name} ({} ms)",
            if ok { "PASS" } else { "FAIL" },
            i + 1,
            start.elapsed().as_millis()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
