//! Nine-byte bracelet frames and the transports that carry them.
//!
//! ```text
//! 0     1     2   3     4    5    6     7    8
//! 0xAA  type  up  right down left 0x00  seq  xor(bytes 0..=7)
//! ```
//!
//! Type bytes: 0x00 stop, 0x01 direction, 0x02 grasp pulse, 0x03 move-back
//! pulse. Intensities are integer percent. Pulse patterns live on the device,
//! so pulse frames carry zero intensities.

use std::fmt::Write as _;
use std::io::{self, Write};

use thiserror::Error;

use crate::guidance::{GuidanceConfig, MotorQuad, VibrationCommand};

pub const HEADER: u8 = 0xAA;
pub const FRAME_LEN: usize = 9;

const TYPE_STOP: u8 = 0x00;
const TYPE_DIRECTION: u8 = 0x01;
const TYPE_GRASP: u8 = 0x02;
const TYPE_MOVE_BACK: u8 = 0x03;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("expected {FRAME_LEN} bytes, got {0}")]
    Length(usize),
    #[error("bad header byte {0:#04x}")]
    Header(u8),
    #[error("checksum mismatch: frame says {stored:#04x}, computed {computed:#04x}")]
    Checksum { stored: u8, computed: u8 },
    #[error("unknown type byte {0:#04x}")]
    UnknownType(u8),
    #[error("intensity byte {0} exceeds 100")]
    Intensity(u8),
    #[error("invalid motor pattern for type {0:#04x}")]
    Pattern(u8),
    #[error("reserved byte is {0:#04x}, expected 0")]
    Reserved(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WireFrame(pub [u8; FRAME_LEN]);

impl WireFrame {
    pub fn bytes(&self) -> &[u8; FRAME_LEN] {
        &self.0
    }

    pub fn seq(&self) -> u8 {
        self.0[7]
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().fold(String::with_capacity(18), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let s = s.trim();
        if s.len() != 2 * FRAME_LEN || !s.is_ascii() {
            return None;
        }
        let mut out = [0u8; FRAME_LEN];
        for (i, b) in out.iter_mut().enumerate() {
            *b = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).ok()?;
        }
        Some(Self(out))
    }
}

pub fn checksum(bytes: &[u8]) -> u8 {
    bytes[..8].iter().fold(0, |acc, b| acc ^ b)
}

/// Fraction in [0, 1] to integer percent, rounding halves up.
pub fn quantize(x: f64) -> u8 {
    // the epsilon keeps decimal halves such as 0.285 (stored just below) rounding up
    (x.clamp(0.0, 1.0) * 100.0 + 0.5 + 1e-9).floor() as u8
}

pub fn encode(cmd: &VibrationCommand, seq: u8) -> WireFrame {
    let (kind, quad) = match cmd {
        VibrationCommand::Stop => (TYPE_STOP, MotorQuad::ZERO),
        VibrationCommand::Direction { quad } => (TYPE_DIRECTION, *quad),
        VibrationCommand::GraspPulse { .. } => (TYPE_GRASP, MotorQuad::ZERO),
        VibrationCommand::MoveBackPulse { .. } => (TYPE_MOVE_BACK, MotorQuad::ZERO),
    };
    let q = quad.to_array().map(quantize);
    let mut b = [HEADER, kind, q[0], q[1], q[2], q[3], 0, seq, 0];
    b[8] = checksum(&b);
    WireFrame(b)
}

/// Inverse of [`encode`] up to quantization. Pulse commands come back with
/// the default pulse timings, since the wire carries only the pattern type.
pub fn decode(bytes: &[u8]) -> Result<(VibrationCommand, u8), DecodeError> {
    if bytes.len() != FRAME_LEN {
        return Err(DecodeError::Length(bytes.len()));
    }
    if bytes[0] != HEADER {
        return Err(DecodeError::Header(bytes[0]));
    }
    let computed = checksum(bytes);
    if bytes[8] != computed {
        return Err(DecodeError::Checksum {
            stored: bytes[8],
            computed,
        });
    }
    if bytes[6] != 0 {
        return Err(DecodeError::Reserved(bytes[6]));
    }
    let kind = bytes[1];
    let raw = [bytes[2], bytes[3], bytes[4], bytes[5]];
    if let Some(&bad) = raw.iter().find(|b| **b > 100) {
        return Err(DecodeError::Intensity(bad));
    }
    let defaults = GuidanceConfig::default();
    let cmd = match kind {
        TYPE_DIRECTION => {
            let quad = MotorQuad::from_array(raw.map(|b| b as f64 / 100.0));
            quad.validate().map_err(|_| DecodeError::Pattern(kind))?;
            VibrationCommand::Direction { quad }
        }
        TYPE_STOP | TYPE_GRASP | TYPE_MOVE_BACK if raw != [0; 4] => return Err(DecodeError::Pattern(kind)),
        TYPE_STOP => VibrationCommand::Stop,
        TYPE_GRASP => VibrationCommand::GraspPulse {
            duration_ms: defaults.grasp_pulse_ms,
        },
        TYPE_MOVE_BACK => VibrationCommand::MoveBackPulse {
            duration_ms: defaults.move_back_pulse_ms,
            gap_ms: defaults.move_back_gap_ms,
        },
        other => return Err(DecodeError::UnknownType(other)),
    };
    Ok((cmd, bytes[7]))
}

/// The command as a device would reproduce it after quantization.
pub fn quantized(cmd: &VibrationCommand) -> VibrationCommand {
    decode(encode(cmd, 0).bytes()).expect("encoded frames decode").0
}

/// Ordered, at-most-once delivery of frames over one connection.
pub trait Transport {
    fn send(&mut self, frame: &WireFrame, timestamp_ms: u64) -> io::Result<()>;
}

/// Records every frame in memory.
#[derive(Debug, Clone, Default)]
pub struct MockTransport {
    pub frames: Vec<(u64, WireFrame)>,
}

impl MockTransport {
    pub fn new() -> Self {
        Self::default()
    }

    /// One `timestamp_ms,hex` line per frame.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for (ts, f) in &self.frames {
            let _ = writeln!(s, "{ts},{}", f.to_hex());
        }
        s
    }

    pub fn parse_dump(text: &str) -> Option<Vec<(u64, WireFrame)>> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let (ts, hex) = l.split_once(',')?;
                Some((ts.trim().parse().ok()?, WireFrame::from_hex(hex)?))
            })
            .collect()
    }
}

impl Transport for MockTransport {
    fn send(&mut self, frame: &WireFrame, timestamp_ms: u64) -> io::Result<()> {
        self.frames.push((timestamp_ms, *frame));
        Ok(())
    }
}

/// Raw frames over any byte stream (serial device file, TCP socket).
#[derive(Debug)]
pub struct StreamTransport<W: Write> {
    inner: W,
}

impl<W: Write> StreamTransport<W> {
    pub fn new(inner: W) -> Self {
        Self { inner }
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

impl<W: Write> Transport for StreamTransport<W> {
    fn send(&mut self, frame: &WireFrame, _timestamp_ms: u64) -> io::Result<()> {
        self.inner.write_all(frame.bytes())?;
        self.inner.flush()
    }
}

/// Sequencing sender in front of a transport.
#[derive(Debug)]
pub struct Bracelet<T: Transport> {
    transport: T,
    seq: u8,
}

impl<T: Transport> Bracelet<T> {
    pub fn new(transport: T) -> Self {
        Self { transport, seq: 0 }
    }

    pub fn send(&mut self, cmd: &VibrationCommand, timestamp_ms: u64) -> io::Result<WireFrame> {
        let frame = encode(cmd, self.seq);
        self.transport.send(&frame, timestamp_ms)?;
        self.seq = self.seq.wrapping_add(1);
        Ok(frame)
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    pub fn into_transport(self) -> T {
        self.transport
    }
}
