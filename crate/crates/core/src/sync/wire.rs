use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"NLNK";
pub const VERSION: u8 = 1;
/// Encoded size of every message.
pub const MESSAGE_LEN: usize = 62;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MessageType {
    Alive = 1,
    Ping = 2,
    Pong = 3,
    Bye = 4,
}

impl TryFrom<u8> for MessageType {
    type Error = WireError;
    fn try_from(b: u8) -> Result<Self, WireError> {
        Ok(match b {
            1 => MessageType::Alive,
            2 => MessageType::Ping,
            3 => MessageType::Pong,
            4 => MessageType::Bye,
            other => return Err(WireError::Type(other)),
        })
    }
}

/// One datagram. Times are microseconds on the sender's monotonic clock,
/// except `t1` in a PONG, which is on the responder's clock.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SyncMessage {
    pub kind: MessageType,
    pub peer_id: u64,
    pub session_id: u64,
    pub tempo_mbpm: u32,
    pub beat_origin_us: u64,
    pub lamport: u32,
    /// Peer whose tempo change `lamport` counts; breaks lamport ties.
    pub tempo_setter: u64,
    pub t0: u64,
    pub t1: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("datagram is {0} bytes, expected {MESSAGE_LEN}")]
    Length(usize),
    #[error("bad magic {0:02x?}")]
    Magic([u8; 4]),
    #[error("unsupported version {0}")]
    Version(u8),
    #[error("unknown message type {0}")]
    Type(u8),
}

/// Big-endian layout: magic, version, type, peer_id, session_id, tempo_mbpm,
/// beat_origin_us, lamport, tempo_setter, t0, t1.
pub fn encode_message(m: &SyncMessage) -> [u8; MESSAGE_LEN] {
    let mut out = [0u8; MESSAGE_LEN];
    let mut w = 0;
    let mut put = |bytes: &[u8]| {
        out[w..w + bytes.len()].copy_from_slice(bytes);
        w += bytes.len();
    };
    put(&MAGIC);
    put(&[VERSION, m.kind as u8]);
    put(&m.peer_id.to_be_bytes());
    put(&m.session_id.to_be_bytes());
    put(&m.tempo_mbpm.to_be_bytes());
    put(&m.beat_origin_us.to_be_bytes());
    put(&m.lamport.to_be_bytes());
    put(&m.tempo_setter.to_be_bytes());
    put(&m.t0.to_be_bytes());
    put(&m.t1.to_be_bytes());
    out
}

pub fn decode_message(bytes: &[u8]) -> Result<SyncMessage, WireError> {
    if bytes.len() != MESSAGE_LEN {
        return Err(WireError::Length(bytes.len()));
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("length checked");
    if magic != MAGIC {
        return Err(WireError::Magic(magic));
    }
    if bytes[4] != VERSION {
        return Err(WireError::Version(bytes[4]));
    }
    let kind = MessageType::try_from(bytes[5])?;
    let u64_at = |i: usize| u64::from_be_bytes(bytes[i..i + 8].try_into().expect("in bounds"));
    let u32_at = |i: usize| u32::from_be_bytes(bytes[i..i + 4].try_into().expect("in bounds"));
    Ok(SyncMessage {
        kind,
        peer_id: u64_at(6),
        session_id: u64_at(14),
        tempo_mbpm: u32_at(22),
        beat_origin_us: u64_at(26),
        lamport: u32_at(34),
        tempo_setter: u64_at(38),
        t0: u64_at(46),
        t1: u64_at(54),
    })
}
