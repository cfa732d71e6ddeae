//! Framed binary messages between Bob's and Alice's stations.
//!
//! Frame layout, all integers big-endian:
//!
//! ```text
//! "SQRS" | version u8 | kind u8 | payload_len u32 | payload | crc32 u32
//! ```
//!
//! The CRC-32 (IEEE) covers header and payload. Payloads:
//!
//! * `TomographyReport` (1): shots_per_setting u32, then 36 counts u32 in
//!   Alice-major setting order.
//! * `SensingOutcomes` (2): phase_point_id u16, round_count u32, then the
//!   s_B bits packed LSB-first into bytes, zero-padded.
//! * `SweepManifest` (3): phase_count u16, rounds_per_phase u32,
//!   config_hash u64.
//!
//! Bob only ever sends and Alice only ever receives: [`FrameSink`] and
//! [`FrameSource`] are separate types with no way back.

use std::io::{self, Read, Write};
use std::sync::mpsc::{self, Receiver, SyncSender};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::protocol::EveView;
use crate::tomography::{TomographyCounts, SETTING_COUNT};

pub const MAGIC: [u8; 4] = *b"SQRS";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 10;
pub const TRAILER_LEN: usize = 4;
/// Frames larger than this are rejected before allocation.
pub const MAX_PAYLOAD: u32 = 1 << 30;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("truncated frame: needed {needed} bytes, got {got}")]
    Truncated { needed: usize, got: usize },

    #[error("bad frame magic {0:02x?}")]
    BadMagic([u8; 4]),

    #[error("unsupported frame version {0}")]
    UnsupportedVersion(u8),

    #[error("unknown frame kind {0}")]
    UnknownKind(u8),

    #[error("checksum mismatch: frame says {expected:08x}, computed {found:08x}")]
    ChecksumMismatch { expected: u32, found: u32 },

    #[error("malformed payload: {0}")]
    Malformed(String),

    #[error("connection lost{}", match last_phase_point {
        Some(k) => format!(" after phase point {k}"),
        None => " before any phase point".to_string(),
    })]
    ConnectionLost { last_phase_point: Option<u16> },

    #[error("transport I/O: {0}")]
    Io(#[from] io::Error),
}

type TResult<T> = std::result::Result<T, TransportError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum FrameKind {
    TomographyReport = 1,
    SensingOutcomes = 2,
    SweepManifest = 3,
}

impl TryFrom<u8> for FrameKind {
    type Error = TransportError;

    fn try_from(v: u8) -> TResult<Self> {
        match v {
            1 => Ok(Self::TomographyReport),
            2 => Ok(Self::SensingOutcomes),
            3 => Ok(Self::SweepManifest),
            other => Err(TransportError::UnknownKind(other)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    TomographyReport(TomographyCounts),
    SensingOutcomes { phase_point_id: u16, bits: Vec<u8> },
    SweepManifest { phase_count: u16, rounds_per_phase: u32, config_hash: u64 },
}

impl Message {
    pub fn kind(&self) -> FrameKind {
        match self {
            Message::TomographyReport(_) => FrameKind::TomographyReport,
            Message::SensingOutcomes { .. } => FrameKind::SensingOutcomes,
            Message::SweepManifest { .. } => FrameKind::SweepManifest,
        }
    }
}

/// Packs 0/1 values LSB-first. Any nonzero input counts as 1.
pub fn pack_bits(bits: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b != 0 {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

pub fn unpack_bits(packed: &[u8], count: usize) -> TResult<Vec<u8>> {
    if packed.len() != count.div_ceil(8) {
        return Err(TransportError::Malformed(format!(
            "{count} bits need {} bytes, payload has {}",
            count.div_ceil(8),
            packed.len()
        )));
    }
    if !count.is_multiple_of(8) {
        let pad = packed[packed.len() - 1] >> (count % 8);
        if pad != 0 {
            return Err(TransportError::Malformed("nonzero padding bits".into()));
        }
    }
    Ok((0..count).map(|i| (packed[i / 8] >> (i % 8)) & 1).collect())
}

fn encode_payload(msg: &Message) -> TResult<Vec<u8>> {
    let mut p = Vec::new();
    match msg {
        Message::TomographyReport(c) => {
            if c.counts.len() != SETTING_COUNT {
                return Err(TransportError::Malformed(format!("{} tomography counts", c.counts.len())));
            }
            p.extend_from_slice(&c.shots_per_setting.to_be_bytes());
            for n in &c.counts {
                p.extend_from_slice(&n.to_be_bytes());
            }
        }
        Message::SensingOutcomes { phase_point_id, bits } => {
            let n = u32::try_from(bits.len())
                .map_err(|_| TransportError::Malformed(format!("{} rounds in one frame", bits.len())))?;
            p.extend_from_slice(&phase_point_id.to_be_bytes());
            p.extend_from_slice(&n.to_be_bytes());
            p.extend_from_slice(&pack_bits(bits));
        }
        Message::SweepManifest { phase_count, rounds_per_phase, config_hash } => {
            p.extend_from_slice(&phase_count.to_be_bytes());
            p.extend_from_slice(&rounds_per_phase.to_be_bytes());
            p.extend_from_slice(&config_hash.to_be_bytes());
        }
    }
    Ok(p)
}

pub fn encode(msg: &Message) -> TResult<Vec<u8>> {
    let payload = encode_payload(msg)?;
    let len = u32::try_from(payload.len())
        .ok()
        .filter(|&l| l <= MAX_PAYLOAD)
        .ok_or_else(|| TransportError::Malformed(format!("payload of {} bytes", payload.len())))?;
    let mut frame = Vec::with_capacity(HEADER_LEN + payload.len() + TRAILER_LEN);
    frame.extend_from_slice(&MAGIC);
    frame.push(VERSION);
    frame.push(msg.kind() as u8);
    frame.extend_from_slice(&len.to_be_bytes());
    frame.extend_from_slice(&payload);
    let crc = crc32fast::hash(&frame);
    frame.extend_from_slice(&crc.to_be_bytes());
    Ok(frame)
}

fn be_u16(b: &[u8]) -> u16 {
    u16::from_be_bytes([b[0], b[1]])
}

fn be_u32(b: &[u8]) -> u32 {
    u32::from_be_bytes([b[0], b[1], b[2], b[3]])
}

fn be_u64(b: &[u8]) -> u64 {
    u64::from_be_bytes(b[..8].try_into().unwrap())
}

/// Checks magic, version and kind; returns (kind, payload_len).
fn parse_header(h: &[u8]) -> TResult<(FrameKind, u32)> {
    let magic: [u8; 4] = h[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(TransportError::BadMagic(magic));
    }
    if h[4] != VERSION {
        return Err(TransportError::UnsupportedVersion(h[4]));
    }
    let kind = FrameKind::try_from(h[5])?;
    let len = be_u32(&h[6..10]);
    if len > MAX_PAYLOAD {
        return Err(TransportError::Malformed(format!("declared payload length {len}")));
    }
    Ok((kind, len))
}

fn decode_payload(kind: FrameKind, p: &[u8]) -> TResult<Message> {
    let expect_len = |n: usize| {
        if p.len() == n {
            Ok(())
        } else {
            Err(TransportError::Malformed(format!("{kind:?} payload is {} bytes, expected {n}", p.len())))
        }
    };
    match kind {
        FrameKind::TomographyReport => {
            expect_len(4 * (1 + SETTING_COUNT))?;
            let shots = be_u32(p);
            let counts: Vec<u32> = p[4..].chunks_exact(4).map(be_u32).collect();
            let c = TomographyCounts { shots_per_setting: shots, counts };
            c.validate().map_err(|e| TransportError::Malformed(e.to_string()))?;
            Ok(Message::TomographyReport(c))
        }
        FrameKind::SensingOutcomes => {
            if p.len() < 6 {
                return Err(TransportError::Malformed(format!("sensing payload of {} bytes", p.len())));
            }
            let phase_point_id = be_u16(p);
            let n = be_u32(&p[2..6]) as usize;
            let bits = unpack_bits(&p[6..], n)?;
            Ok(Message::SensingOutcomes { phase_point_id, bits })
        }
        FrameKind::SweepManifest => {
            expect_len(14)?;
            Ok(Message::SweepManifest {
                phase_count: be_u16(p),
                rounds_per_phase: be_u32(&p[2..6]),
                config_hash: be_u64(&p[6..14]),
            })
        }
    }
}

fn check_crc(frame_without_trailer: &[u8], trailer: &[u8]) -> TResult<()> {
    let expected = be_u32(trailer);
    let found = crc32fast::hash(frame_without_trailer);
    if expected != found {
        return Err(TransportError::ChecksumMismatch { expected, found });
    }
    Ok(())
}

/// Decodes one frame from the front of `bytes`, returning it and the number
/// of bytes consumed.
pub fn decode_prefix(bytes: &[u8]) -> TResult<(Message, usize)> {
    if bytes.len() < HEADER_LEN {
        return Err(TransportError::Truncated { needed: HEADER_LEN, got: bytes.len() });
    }
    let (kind, len) = parse_header(&bytes[..HEADER_LEN])?;
    let total = HEADER_LEN + len as usize + TRAILER_LEN;
    if bytes.len() < total {
        return Err(TransportError::Truncated { needed: total, got: bytes.len() });
    }
    let body_end = HEADER_LEN + len as usize;
    check_crc(&bytes[..body_end], &bytes[body_end..total])?;
    Ok((decode_payload(kind, &bytes[HEADER_LEN..body_end])?, total))
}

/// Decodes exactly one frame; trailing bytes are an error.
pub fn decode(bytes: &[u8]) -> TResult<Message> {
    let (msg, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(TransportError::Malformed(format!("{} bytes after frame", bytes.len() - used)));
    }
    Ok(msg)
}

/// Fills `buf` or reports how much was read before EOF.
fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> TResult<usize> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(got)
}

/// Reads the next frame. A clean end of stream between frames is `Ok(None)`.
pub fn read_frame<R: Read>(r: &mut R) -> TResult<Option<Message>> {
    let mut header = [0u8; HEADER_LEN];
    match read_full(r, &mut header)? {
        0 => return Ok(None),
        n if n < HEADER_LEN => return Err(TransportError::Truncated { needed: HEADER_LEN, got: n }),
        _ => {}
    }
    let (kind, len) = parse_header(&header)?;
    let mut rest = vec![0u8; len as usize + TRAILER_LEN];
    let got = read_full(r, &mut rest)?;
    if got < rest.len() {
        return Err(TransportError::Truncated { needed: HEADER_LEN + rest.len(), got: HEADER_LEN + got });
    }
    let mut frame = header.to_vec();
    frame.extend_from_slice(&rest[..len as usize]);
    check_crc(&frame, &rest[len as usize..])?;
    decode_payload(kind, &frame[HEADER_LEN..]).map(Some)
}

/// Bob's side of a link.
pub trait FrameSink {
    /// Sends one already-encoded frame.
    fn send_frame(&mut self, frame: &[u8]) -> TResult<()>;

    fn send(&mut self, msg: &Message) -> TResult<()> {
        self.send_frame(&encode(msg)?)
    }
}

/// Alice's side of a link.
pub trait FrameSource {
    /// Next message, or `None` once the peer has closed the link cleanly.
    fn recv(&mut self) -> TResult<Option<Message>>;
}

impl<S: FrameSink + ?Sized> FrameSink for Box<S> {
    fn send_frame(&mut self, frame: &[u8]) -> TResult<()> {
        (**self).send_frame(frame)
    }
}

impl<S: FrameSource + ?Sized> FrameSource for Box<S> {
    fn recv(&mut self) -> TResult<Option<Message>> {
        (**self).recv()
    }
}

/// Sends frames over any byte stream, e.g. a `TcpStream`.
pub struct StreamSink<W: Write> {
    inner: W,
}

impl<W: Write> StreamSink<W> {
    pub fn new(inner: W) -> Self {
        Self { inner }
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

impl<W: Write> FrameSink for StreamSink<W> {
    fn send_frame(&mut self, frame: &[u8]) -> TResult<()> {
        self.inner.write_all(frame)?;
        self.inner.flush()?;
        Ok(())
    }
}

pub struct StreamSource<R: Read> {
    inner: R,
}

impl<R: Read> StreamSource<R> {
    pub fn new(inner: R) -> Self {
        Self { inner }
    }
}

impl<R: Read> FrameSource for StreamSource<R> {
    fn recv(&mut self) -> TResult<Option<Message>> {
        read_frame(&mut self.inner)
    }
}

/// In-process link. Frames travel as encoded bytes so both ends run the same
/// codec as a socket link; the bounded queue gives backpressure.
pub fn memory_channel(capacity: usize) -> (MemorySink, MemorySource) {
    let (tx, rx) = mpsc::sync_channel(capacity);
    (MemorySink { tx }, MemorySource { rx })
}

pub struct MemorySink {
    tx: SyncSender<Vec<u8>>,
}

impl FrameSink for MemorySink {
    fn send_frame(&mut self, frame: &[u8]) -> TResult<()> {
        self.tx
            .send(frame.to_vec())
            .map_err(|_| TransportError::Io(io::Error::new(io::ErrorKind::BrokenPipe, "receiver dropped")))
    }
}

pub struct MemorySource {
    rx: Receiver<Vec<u8>>,
}

impl FrameSource for MemorySource {
    fn recv(&mut self) -> TResult<Option<Message>> {
        match self.rx.recv() {
            Ok(frame) => decode(&frame).map(Some),
            Err(_) => Ok(None),
        }
    }
}

/// Passive wiretap: forwards every frame and keeps a copy of its bytes.
pub struct Tap<S: FrameSink> {
    inner: S,
    log: Arc<Mutex<Vec<u8>>>,
}

impl<S: FrameSink> Tap<S> {
    pub fn new(inner: S) -> Self {
        Self { inner, log: Arc::default() }
    }

    /// Shared handle to the recorded bytes.
    pub fn log(&self) -> Arc<Mutex<Vec<u8>>> {
        Arc::clone(&self.log)
    }
}

impl<S: FrameSink> FrameSink for Tap<S> {
    fn send_frame(&mut self, frame: &[u8]) -> TResult<()> {
        self.log.lock().expect("tap log poisoned").extend_from_slice(frame);
        self.inner.send_frame(frame)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TappedPhase {
    pub phase_point_id: u16,
    pub view: EveView,
}

/// Everything an eavesdropper can extract from a recorded byte stream: the
/// s_B bits of each phase point, in order of appearance.
pub fn parse_tap(bytes: &[u8]) -> TResult<Vec<TappedPhase>> {
    let mut out = Vec::new();
    let mut rest = bytes;
    while !rest.is_empty() {
        let (msg, used) = decode_prefix(rest)?;
        if let Message::SensingOutcomes { phase_point_id, bits } = msg {
            out.push(TappedPhase { phase_point_id, view: EveView::from_bits(&bits) });
        }
        rest = &rest[used..];
    }
    Ok(out)
}
