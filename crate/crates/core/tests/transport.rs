use std::io::Write;
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;

use proptest::prelude::*;
use sqrs_core::tomography::TomographyCounts;
use sqrs_core::transport::{
    decode, encode, memory_channel, parse_tap, read_frame, FrameSink, FrameSource, Message, StreamSink,
    StreamSource, Tap, TransportError, HEADER_LEN, TRAILER_LEN,
};

fn fixture(name: &str) -> Vec<u8> {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "tests", "fixtures", name].iter().collect();
    std::fs::read(path).unwrap()
}

fn hex(s: &str) -> Vec<u8> {
    (0..s.len()).step_by(2).map(|i| u8::from_str_radix(&s[i..i + 2], 16).unwrap()).collect()
}

#[test]
fn golden_sensing_outcomes() {
    let bytes = fixture("sensing_outcomes.bin");
    assert_eq!(bytes, hex("5351525301020000000800070000000d8d13857896f1"));
    let expected = Message::SensingOutcomes { phase_point_id: 7, bits: vec![1, 0, 1, 1, 0, 0, 0, 1, 1, 1, 0, 0, 1] };
    assert_eq!(decode(&bytes).unwrap(), expected);
    assert_eq!(encode(&expected).unwrap(), bytes);
}

#[test]
fn golden_empty_sensing_outcomes() {
    let bytes = fixture("sensing_outcomes_empty.bin");
    assert_eq!(bytes.len(), HEADER_LEN + 6 + TRAILER_LEN);
    let expected = Message::SensingOutcomes { phase_point_id: 0, bits: vec![] };
    assert_eq!(decode(&bytes).unwrap(), expected);
    assert_eq!(encode(&expected).unwrap(), bytes);
}

#[test]
fn golden_manifest_and_tomography() {
    let manifest = Message::SweepManifest { phase_count: 11, rounds_per_phase: 100_000, config_hash: 0x0123_4567_89ab_cdef };
    assert_eq!(decode(&fixture("sweep_manifest.bin")).unwrap(), manifest);
    assert_eq!(encode(&manifest).unwrap(), fixture("sweep_manifest.bin"));

    let counts = TomographyCounts { shots_per_setting: 100, counts: (0..36).map(|i| (7 * i + 3) % 101).collect() };
    let report = Message::TomographyReport(counts);
    assert_eq!(decode(&fixture("tomography_report.bin")).unwrap(), report);
    assert_eq!(encode(&report).unwrap(), fixture("tomography_report.bin"));
}

#[test]
fn large_outcome_frame_size() {
    let bits: Vec<u8> = (0..100_000u32).map(|i| (i.wrapping_mul(2_654_435_761) >> 31) as u8).collect();
    let msg = Message::SensingOutcomes { phase_point_id: 3, bits };
    let f = encode(&msg).unwrap();
    assert_eq!(f.len(), HEADER_LEN + 6 + 100_000usize.div_ceil(8) + TRAILER_LEN);
    assert_eq!(decode(&f).unwrap(), msg);
}

#[test]
fn every_single_byte_flip_is_caught() {
    let f = fixture("sensing_outcomes.bin");
    for i in 0..f.len() {
        let mut bad = f.clone();
        bad[i] ^= 0x01;
        let err = decode(&bad).unwrap_err();
        match i {
            0..=3 => assert!(matches!(err, TransportError::BadMagic(_)), "{i}: {err}"),
            4 => assert!(matches!(err, TransportError::UnsupportedVersion(_))),
            5 => assert!(matches!(err, TransportError::UnknownKind(_) | TransportError::ChecksumMismatch { .. })),
            6..=9 => assert!(matches!(err, TransportError::Truncated { .. } | TransportError::ChecksumMismatch { .. } | TransportError::Malformed(_))),
            _ => assert!(matches!(err, TransportError::ChecksumMismatch { .. }), "{i}: {err}"),
        }
    }
}

fn arb_message() -> impl Strategy<Value = Message> {
    prop_oneof![
        (any::<u16>(), prop::collection::vec(0u8..2, 0..300))
            .prop_map(|(id, bits)| Message::SensingOutcomes { phase_point_id: id, bits }),
        (any::<u16>(), any::<u32>(), any::<u64>()).prop_map(|(p, r, h)| Message::SweepManifest {
            phase_count: p,
            rounds_per_phase: r,
            config_hash: h
        }),
        (1u32..1000, prop::collection::vec(0u32..1000, 36)).prop_map(|(shots, counts)| {
            let counts = counts.into_iter().map(|c| c % (shots + 1)).collect();
            Message::TomographyReport(TomographyCounts { shots_per_setting: shots, counts })
        }),
    ]
}

/// Sends `msgs` over a loopback socket and returns what arrived.
fn via_socket(msgs: &[Message]) -> Vec<Message> {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::scope(|s| {
        s.spawn(|| {
            let (stream, _) = listener.accept().unwrap();
            let mut sink = StreamSink::new(stream);
            for m in msgs {
                sink.send(m).unwrap();
            }
        });
        let mut source = StreamSource::new(TcpStream::connect(addr).unwrap());
        let mut got = Vec::new();
        while let Some(m) = source.recv().unwrap() {
            got.push(m);
        }
        got
    })
}

fn via_memory(msgs: &[Message]) -> Vec<Message> {
    let (mut sink, mut source) = memory_channel(2);
    std::thread::scope(|s| {
        s.spawn(move || {
            for m in msgs {
                sink.send(m).unwrap();
            }
        });
        let mut got = Vec::new();
        while let Some(m) = source.recv().unwrap() {
            got.push(m);
        }
        got
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn memory_and_socket_channels_agree(msgs in prop::collection::vec(arb_message(), 0..12)) {
        let mem = via_memory(&msgs);
        let sock = via_socket(&msgs);
        prop_assert_eq!(&mem, &msgs);
        prop_assert_eq!(&sock, &msgs);
    }

    #[test]
    fn encode_decode_roundtrip(m in arb_message()) {
        let f = encode(&m).unwrap();
        prop_assert_eq!(decode(&f).unwrap(), m.clone());
        prop_assert_eq!(read_frame(&mut &f[..]).unwrap(), Some(m));
    }

    #[test]
    fn truncation_never_panics(m in arb_message(), cut in 0usize..64) {
        let f = encode(&m).unwrap();
        let cut = cut.min(f.len().saturating_sub(1));
        let is_truncated = matches!(decode(&f[..cut]), Err(TransportError::Truncated { .. }));
        prop_assert!(is_truncated);
    }
}

#[test]
fn eleven_phase_points_in_order_with_tap() {
    let msgs: Vec<Message> = (0..11u16)
        .map(|k| Message::SensingOutcomes { phase_point_id: k, bits: (0..1000).map(|i| (i * k as usize).is_multiple_of(3) as u8).collect() })
        .collect();
    let (sink, mut source) = memory_channel(1);
    let mut tap = Tap::new(sink);
    let log = tap.log();
    let mut received_bytes = Vec::new();
    std::thread::scope(|s| {
        let msgs = &msgs;
        s.spawn(move || {
            for m in msgs {
                tap.send(m).unwrap();
            }
        });
        while let Some(m) = source.recv().unwrap() {
            received_bytes.write_all(&encode(&m).unwrap()).unwrap();
        }
    });
    let tapped = log.lock().unwrap().clone();
    assert_eq!(tapped, received_bytes);
    let views = parse_tap(&tapped).unwrap();
    assert_eq!(views.len(), 11);
    for (k, v) in views.iter().enumerate() {
        assert_eq!(v.phase_point_id as usize, k);
        assert_eq!(v.view.len(), 1000);
    }
}

#[test]
fn socket_stream_cut_mid_frame_is_truncation() {
    let f = encode(&Message::SensingOutcomes { phase_point_id: 1, bits: vec![1; 64] }).unwrap();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let writer = std::thread::spawn(move || {
        let (mut stream, _) = listener.accept().unwrap();
        stream.write_all(&f[..f.len() / 2]).unwrap();
    });
    let mut source = StreamSource::new(TcpStream::connect(addr).unwrap());
    writer.join().unwrap();
    assert!(matches!(source.recv(), Err(TransportError::Truncated { .. })));
}
