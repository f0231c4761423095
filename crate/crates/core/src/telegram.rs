//! Direct-command telegram codec and stream framing.
//!
//! All integers on the wire are little-endian.
//!
//! ```text
//! frame     := len_lo len_hi telegram
//! telegram  := kind opcode payload
//! reply     := 0x02 opcode_echo status payload
//!
//! 0x03 PlayTone        freq:u16 duration_ms:u16
//! 0x04 SetOutputState  port:u8 power:i8 mode:u8 regulation:u8 turn_ratio:i8 run_state:u8 tacho_limit:u32
//! 0x0B GetBatteryLevel (empty)        reply: millivolts:u16
//! 0x0D KeepAlive       (empty)        reply: sleep_limit_ms:u32
//! ```
//!
//! Encoding rejects out-of-range fields instead of clamping, so
//! `decode(encode(t)) == t` holds for every value that encodes.

use std::fmt;

use thiserror::Error;

pub const KIND_COMMAND_WITH_REPLY: u8 = 0x00;
pub const KIND_COMMAND_NO_REPLY: u8 = 0x80;
pub const KIND_REPLY: u8 = 0x02;

pub const OP_PLAY_TONE: u8 = 0x03;
pub const OP_SET_OUTPUT_STATE: u8 = 0x04;
pub const OP_GET_BATTERY_LEVEL: u8 = 0x0B;
pub const OP_KEEP_ALIVE: u8 = 0x0D;

/// Largest payload a single frame can carry.
pub const MAX_FRAME_PAYLOAD: usize = u16::MAX as usize;

pub const TONE_MIN_HZ: u16 = 200;
pub const TONE_MAX_HZ: u16 = 14_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("field `{field}` out of range: {value}")]
    Range { field: &'static str, value: i64 },
    #[error("truncated telegram: need {needed} bytes, have {got}")]
    Truncated { needed: usize, got: usize },
    #[error("unknown telegram kind byte 0x{0:02X}")]
    Kind(u8),
    #[error("{extra} unexpected trailing bytes after opcode 0x{opcode:02X}")]
    TrailingBytes { opcode: u8, extra: usize },
    #[error("payload of {0} bytes exceeds the 65535-byte frame limit")]
    Oversize(usize),
}

/// Telegram kind byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kind {
    CommandWithReply,
    CommandNoReply,
    Reply,
}

impl Kind {
    pub fn byte(self) -> u8 {
        match self {
            Kind::CommandWithReply => KIND_COMMAND_WITH_REPLY,
            Kind::CommandNoReply => KIND_COMMAND_NO_REPLY,
            Kind::Reply => KIND_REPLY,
        }
    }

    pub fn from_byte(b: u8) -> Result<Self, CodecError> {
        match b {
            KIND_COMMAND_WITH_REPLY => Ok(Kind::CommandWithReply),
            KIND_COMMAND_NO_REPLY => Ok(Kind::CommandNoReply),
            KIND_REPLY => Ok(Kind::Reply),
            other => Err(CodecError::Kind(other)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Port {
    A,
    B,
    C,
    All,
}

impl Port {
    pub fn byte(self) -> u8 {
        match self {
            Port::A => 0x00,
            Port::B => 0x01,
            Port::C => 0x02,
            Port::All => 0xFF,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0x00 => Some(Port::A),
            0x01 => Some(Port::B),
            0x02 => Some(Port::C),
            0xFF => Some(Port::All),
            _ => None,
        }
    }

    /// Whether a command addressed to `self` applies to motor `motor`.
    pub fn addresses(self, motor: Port) -> bool {
        self == Port::All || self == motor
    }
}

impl fmt::Display for Port {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Port::A => "A",
            Port::B => "B",
            Port::C => "C",
            Port::All => "all",
        })
    }
}

/// Output mode bit set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct OutputMode(u8);

impl OutputMode {
    pub const MOTOR_ON: OutputMode = OutputMode(0x01);
    pub const BRAKE: OutputMode = OutputMode(0x02);
    pub const REGULATED: OutputMode = OutputMode(0x04);
    const ALL_BITS: u8 = 0x07;

    pub const fn empty() -> Self {
        OutputMode(0)
    }

    pub fn from_bits(bits: u8) -> Option<Self> {
        (bits & !Self::ALL_BITS == 0).then_some(OutputMode(bits))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn contains(self, other: OutputMode) -> bool {
        self.0 & other.0 == other.0
    }
}

impl std::ops::BitOr for OutputMode {
    type Output = OutputMode;

    fn bitor(self, rhs: OutputMode) -> OutputMode {
        OutputMode(self.0 | rhs.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regulation {
    Idle,
    Speed,
    Sync,
}

impl Regulation {
    pub fn byte(self) -> u8 {
        match self {
            Regulation::Idle => 0x00,
            Regulation::Speed => 0x01,
            Regulation::Sync => 0x02,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0x00 => Some(Regulation::Idle),
            0x01 => Some(Regulation::Speed),
            0x02 => Some(Regulation::Sync),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RunState {
    Idle,
    Running,
}

impl RunState {
    pub fn byte(self) -> u8 {
        match self {
            RunState::Idle => 0x00,
            RunState::Running => 0x20,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0x00 => Some(RunState::Idle),
            0x20 => Some(RunState::Running),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SetOutputState {
    pub port: Port,
    /// Percent, -100..=100.
    pub power: i8,
    pub mode: OutputMode,
    pub regulation: Regulation,
    /// Percent, -100..=100.
    pub turn_ratio: i8,
    pub run_state: RunState,
    /// Degrees; 0 runs forever.
    pub tacho_limit: u32,
}

impl SetOutputState {
    /// Power 0, brake on, idle. Used whenever motors must come to rest.
    pub fn brake(port: Port) -> Self {
        SetOutputState {
            port,
            power: 0,
            mode: OutputMode::BRAKE,
            regulation: Regulation::Idle,
            turn_ratio: 0,
            run_state: RunState::Idle,
            tacho_limit: 0,
        }
    }

    /// Whether this command leaves the motor physically driven.
    pub fn is_stop(&self) -> bool {
        self.power == 0 || self.run_state == RunState::Idle
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PlayTone {
    pub frequency_hz: u16,
    pub duration_ms: u16,
}

/// Known direct commands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Command {
    PlayTone(PlayTone),
    SetOutputState(SetOutputState),
    GetBatteryLevel,
    KeepAlive,
}

impl Command {
    pub fn opcode(&self) -> u8 {
        match self {
            Command::PlayTone(_) => OP_PLAY_TONE,
            Command::SetOutputState(_) => OP_SET_OUTPUT_STATE,
            Command::GetBatteryLevel => OP_GET_BATTERY_LEVEL,
            Command::KeepAlive => OP_KEEP_ALIVE,
        }
    }
}

/// Opcode-specific reply payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReplyPayload {
    /// PlayTone and SetOutputState replies carry only a status.
    Empty,
    Battery {
        millivolts: u16,
    },
    KeepAlive {
        sleep_limit_ms: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ReplyBody {
    pub opcode: u8,
    pub status: u8,
    pub payload: ReplyPayload,
}

impl ReplyBody {
    pub fn is_success(&self) -> bool {
        self.status == 0
    }

    pub fn battery_mv(&self) -> Option<u16> {
        match self.payload {
            ReplyPayload::Battery { millivolts } => Some(millivolts),
            _ => None,
        }
    }
}

/// One direct command or reply.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Telegram {
    Command {
        expects_reply: bool,
        command: Command,
    },
    Reply(ReplyBody),
    /// An opcode this codec does not model. Bytes are kept verbatim so the
    /// telegram re-encodes byte-identically.
    Unknown {
        kind: Kind,
        opcode: u8,
        payload: Vec<u8>,
    },
}

impl Telegram {
    pub fn with_reply(command: Command) -> Self {
        Telegram::Command { expects_reply: true, command }
    }

    pub fn no_reply(command: Command) -> Self {
        Telegram::Command { expects_reply: false, command }
    }

    /// Brake every motor at once.
    pub fn stop_all() -> Self {
        Telegram::no_reply(Command::SetOutputState(SetOutputState::brake(Port::All)))
    }

    pub fn kind(&self) -> Kind {
        match self {
            Telegram::Command { expects_reply: true, .. } => Kind::CommandWithReply,
            Telegram::Command { expects_reply: false, .. } => Kind::CommandNoReply,
            Telegram::Reply(_) => Kind::Reply,
            Telegram::Unknown { kind, .. } => *kind,
        }
    }

    pub fn opcode(&self) -> u8 {
        match self {
            Telegram::Command { command, .. } => command.opcode(),
            Telegram::Reply(r) => r.opcode,
            Telegram::Unknown { opcode, .. } => *opcode,
        }
    }

    pub fn expects_reply(&self) -> bool {
        self.kind() == Kind::CommandWithReply
    }

    pub fn output_state(&self) -> Option<&SetOutputState> {
        match self {
            Telegram::Command { command: Command::SetOutputState(s), .. } => Some(s),
            _ => None,
        }
    }
}

fn check_percent(field: &'static str, value: i8) -> Result<(), CodecError> {
    if (-100..=100).contains(&value) {
        Ok(())
    } else {
        Err(CodecError::Range { field, value: value.into() })
    }
}

fn check_tone(tone: &PlayTone) -> Result<(), CodecError> {
    if !(TONE_MIN_HZ..=TONE_MAX_HZ).contains(&tone.frequency_hz) {
        return Err(CodecError::Range { field: "frequency_hz", value: tone.frequency_hz.into() });
    }
    if tone.duration_ms == 0 {
        return Err(CodecError::Range { field: "duration_ms", value: 0 });
    }
    Ok(())
}

fn known_opcode(op: u8) -> bool {
    matches!(op, OP_PLAY_TONE | OP_SET_OUTPUT_STATE | OP_GET_BATTERY_LEVEL | OP_KEEP_ALIVE)
}

/// Encodes a telegram without its frame prefix.
pub fn encode(t: &Telegram) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::with_capacity(16);
    out.push(t.kind().byte());
    match t {
        Telegram::Command { command, .. } => {
            out.push(command.opcode());
            match command {
                Command::PlayTone(tone) => {
                    check_tone(tone)?;
                    out.extend_from_slice(&tone.frequency_hz.to_le_bytes());
                    out.extend_from_slice(&tone.duration_ms.to_le_bytes());
                }
                Command::SetOutputState(s) => {
                    check_percent("power", s.power)?;
                    check_percent("turn_ratio", s.turn_ratio)?;
                    out.push(s.port.byte());
                    out.push(s.power as u8);
                    out.push(s.mode.bits());
                    out.push(s.regulation.byte());
                    out.push(s.turn_ratio as u8);
                    out.push(s.run_state.byte());
                    out.extend_from_slice(&s.tacho_limit.to_le_bytes());
                }
                Command::GetBatteryLevel | Command::KeepAlive => {}
            }
        }
        Telegram::Reply(r) => {
            if !known_opcode(r.opcode) {
                return Err(CodecError::Range { field: "opcode_echo", value: r.opcode.into() });
            }
            out.push(r.opcode);
            out.push(r.status);
            match (r.opcode, r.payload) {
                (OP_PLAY_TONE | OP_SET_OUTPUT_STATE, ReplyPayload::Empty) => {}
                (OP_GET_BATTERY_LEVEL, ReplyPayload::Battery { millivolts }) => {
                    out.extend_from_slice(&millivolts.to_le_bytes());
                }
                (OP_KEEP_ALIVE, ReplyPayload::KeepAlive { sleep_limit_ms }) => {
                    out.extend_from_slice(&sleep_limit_ms.to_le_bytes());
                }
                _ => return Err(CodecError::Range { field: "reply_payload", value: r.opcode.into() }),
            }
        }
        Telegram::Unknown { kind, opcode, payload } => {
            if known_opcode(*opcode) {
                return Err(CodecError::Range { field: "opcode", value: (*opcode).into() });
            }
            if *kind == Kind::Reply && payload.is_empty() {
                // A reply always carries a status byte after the opcode echo.
                return Err(CodecError::Range { field: "status", value: -1 });
            }
            out.push(*opcode);
            out.extend_from_slice(payload);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u8(&mut self) -> Result<u8, CodecError> {
        let b = *self
            .bytes
            .get(self.pos)
            .ok_or(CodecError::Truncated { needed: self.pos + 1, got: self.bytes.len() })?;
        self.pos += 1;
        Ok(b)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        let end = self.pos + N;
        let slice = self
            .bytes
            .get(self.pos..end)
            .ok_or(CodecError::Truncated { needed: end, got: self.bytes.len() })?;
        self.pos = end;
        Ok(slice.try_into().expect("slice length checked"))
    }

    fn u16(&mut self) -> Result<u16, CodecError> {
        self.array().map(u16::from_le_bytes)
    }

    fn u32(&mut self) -> Result<u32, CodecError> {
        self.array().map(u32::from_le_bytes)
    }

    fn rest(&self) -> &'a [u8] {
        &self.bytes[self.pos..]
    }

    fn finish(&self, opcode: u8) -> Result<(), CodecError> {
        match self.bytes.len() - self.pos {
            0 => Ok(()),
            extra => Err(CodecError::TrailingBytes { opcode, extra }),
        }
    }
}

fn range(field: &'static str, value: u8) -> CodecError {
    CodecError::Range { field, value: value.into() }
}

/// Decodes one telegram (no frame prefix). The whole slice must be consumed.
pub fn decode(bytes: &[u8]) -> Result<Telegram, CodecError> {
    let mut r = Reader { bytes, pos: 0 };
    let kind = Kind::from_byte(r.u8()?)?;
    let opcode = r.u8()?;

    if !known_opcode(opcode) {
        let payload = r.rest().to_vec();
        if kind == Kind::Reply && payload.is_empty() {
            return Err(CodecError::Truncated { needed: 3, got: bytes.len() });
        }
        return Ok(Telegram::Unknown { kind, opcode, payload });
    }

    let telegram = match kind {
        Kind::Reply => {
            let status = r.u8()?;
            let payload = match opcode {
                OP_GET_BATTERY_LEVEL => ReplyPayload::Battery { millivolts: r.u16()? },
                OP_KEEP_ALIVE => ReplyPayload::KeepAlive { sleep_limit_ms: r.u32()? },
                _ => ReplyPayload::Empty,
            };
            Telegram::Reply(ReplyBody { opcode, status, payload })
        }
        Kind::CommandWithReply | Kind::CommandNoReply => {
            let command = match opcode {
                OP_PLAY_TONE => {
                    let tone = PlayTone { frequency_hz: r.u16()?, duration_ms: r.u16()? };
                    check_tone(&tone)?;
                    Command::PlayTone(tone)
                }
                OP_SET_OUTPUT_STATE => {
                    let [port, power, mode, regulation, turn_ratio, run_state] = r.array()?;
                    let state = SetOutputState {
                        port: Port::from_byte(port).ok_or(range("port", port))?,
                        power: power as i8,
                        mode: OutputMode::from_bits(mode).ok_or(range("mode", mode))?,
                        regulation: Regulation::from_byte(regulation)
                            .ok_or(range("regulation", regulation))?,
                        turn_ratio: turn_ratio as i8,
                        run_state: RunState::from_byte(run_state).ok_or(range("run_state", run_state))?,
                        tacho_limit: r.u32()?,
                    };
                    check_percent("power", state.power)?;
                    check_percent("turn_ratio", state.turn_ratio)?;
                    Command::SetOutputState(state)
                }
                OP_GET_BATTERY_LEVEL => Command::GetBatteryLevel,
                _ => Command::KeepAlive,
            };
            Telegram::Command { expects_reply: kind == Kind::CommandWithReply, command }
        }
    };
    r.finish(opcode)?;
    Ok(telegram)
}

/// Prepends the two-byte little-endian length.
pub fn frame(payload: &[u8]) -> Result<Vec<u8>, CodecError> {
    if payload.len() > MAX_FRAME_PAYLOAD {
        return Err(CodecError::Oversize(payload.len()));
    }
    let mut out = Vec::with_capacity(payload.len() + 2);
    out.extend_from_slice(&(payload.len() as u16).to_le_bytes());
    out.extend_from_slice(payload);
    Ok(out)
}

/// Encodes and frames in one go.
pub fn encode_framed(t: &Telegram) -> Result<Vec<u8>, CodecError> {
    frame(&encode(t)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unframed<'a> {
    Frame { payload: &'a [u8], rest: &'a [u8] },
    NeedMoreBytes,
}

/// Splits one complete frame off the front of `stream`.
pub fn unframe(stream: &[u8]) -> Unframed<'_> {
    if stream.len() < 2 {
        return Unframed::NeedMoreBytes;
    }
    let len = u16::from_le_bytes([stream[0], stream[1]]) as usize;
    match stream.get(2..2 + len) {
        Some(payload) => Unframed::Frame { payload, rest: &stream[2 + len..] },
        None => Unframed::NeedMoreBytes,
    }
}

/// Accumulates stream bytes and yields complete frame payloads.
#[derive(Debug, Default)]
pub struct FrameBuffer {
    buf: Vec<u8>,
}

impl FrameBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn next_frame(&mut self) -> Option<Vec<u8>> {
        let (payload, consumed) = match unframe(&self.buf) {
            Unframed::Frame { payload, rest } => (payload.to_vec(), self.buf.len() - rest.len()),
            Unframed::NeedMoreBytes => return None,
        };
        self.buf.drain(..consumed);
        Some(payload)
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    pub fn clear(&mut self) {
        self.buf.clear();
    }
}

fn reply_suffix(expects_reply: bool) -> &'static str {
    if expects_reply {
        "(reply requested)"
    } else {
        "(no reply)"
    }
}

fn opcode_name(op: u8) -> &'static str {
    match op {
        OP_PLAY_TONE => "PlayTone",
        OP_SET_OUTPUT_STATE => "SetOutputState",
        OP_GET_BATTERY_LEVEL => "GetBatteryLevel",
        OP_KEEP_ALIVE => "KeepAlive",
        _ => "Unknown",
    }
}

impl fmt::Display for Telegram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Telegram::Command { expects_reply, command } => {
                let suffix = reply_suffix(*expects_reply);
                match command {
                    Command::PlayTone(t) => write!(
                        f,
                        "PlayTone {} Hz {} ms {suffix}",
                        t.frequency_hz, t.duration_ms
                    ),
                    Command::SetOutputState(s) => write!(
                        f,
                        "SetOutputState port {} power {} mode 0x{:02X} regulation {:?} turn {} run {:?} tacho {} {suffix}",
                        s.port,
                        s.power,
                        s.mode.bits(),
                        s.regulation,
                        s.turn_ratio,
                        s.run_state,
                        s.tacho_limit,
                    ),
                    Command::GetBatteryLevel => write!(f, "GetBatteryLevel {suffix}"),
                    Command::KeepAlive => write!(f, "KeepAlive {suffix}"),
                }
            }
            Telegram::Reply(r) => {
                write!(f, "Reply {} status 0x{:02X}", opcode_name(r.opcode), r.status)?;
                match r.payload {
                    ReplyPayload::Empty => Ok(()),
                    ReplyPayload::Battery { millivolts } => write!(f, " battery {millivolts} mV"),
                    ReplyPayload::KeepAlive { sleep_limit_ms } => {
                        write!(f, " sleep limit {sleep_limit_ms} ms")
                    }
                }
            }
            Telegram::Unknown { kind, opcode, payload } => {
                write!(f, "Unknown opcode 0x{opcode:02X} kind {kind:?} payload [")?;
                for (i, b) in payload.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, "{b:02X}")?;
                }
                f.write_str("]")
            }
        }
    }
}
