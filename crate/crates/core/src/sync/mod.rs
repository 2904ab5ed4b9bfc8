//! LAN tempo and beat-phase sharing between peers.
//!
//! Peers multicast ALIVE heartbeats carrying their session, tempo and beat
//! origin. The lowest session id wins and is adopted wholesale; within a
//! session the tempo with the largest `(lamport, tempo_setter)` wins. Remote
//! times are translated to the local clock with offsets from PING/PONG
//! exchanges. All times are microseconds on the local monotonic clock.

use std::collections::BTreeMap;

use thiserror::Error;

pub mod sim;
pub mod udp;
mod wire;

pub use wire::{decode_message, encode_message, MessageType, SyncMessage, WireError, MESSAGE_LEN};

pub const ALIVE_INTERVAL_US: u64 = 1_000_000;
pub const PEER_TIMEOUT_US: u64 = 5_000_000;
pub const PING_INTERVAL_US: u64 = 5_000_000;
pub const MIN_TEMPO_MBPM: u32 = 20_000;
pub const MAX_TEMPO_MBPM: u32 = 999_000;
pub const DEFAULT_QUANTUM: f64 = 4.0;

#[derive(Debug, Error, PartialEq)]
pub enum SyncError {
    #[error("tempo {0} bpm outside 20..=999")]
    Tempo(f64),
}

/// Two-way time transfer. `t0`/`t3` are on the sender's clock, `t1`/`t2` on
/// the receiver's. Returns (receiver minus sender offset, round-trip time).
pub fn estimate_clock_offset(t0: u64, t1: u64, t2: u64, t3: u64) -> (f64, f64) {
    let (t0, t1, t2, t3) = (t0 as i128, t1 as i128, t2 as i128, t3 as i128);
    let offset = ((t1 - t0) + (t2 - t3)) as f64 / 2.0;
    let rtt = ((t3 - t0) - (t2 - t1)) as f64;
    (offset, rtt)
}

/// What a peer last advertised.
#[derive(Clone, Debug, PartialEq)]
pub struct PeerInfo {
    pub last_seen_us: u64,
    pub session_id: u64,
    pub tempo_mbpm: u32,
    pub lamport: u32,
    pub tempo_setter: u64,
    /// Peer clock minus local clock, once measured.
    pub clock_offset_us: Option<f64>,
    pub rtt_us: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyncState {
    peer_id: u64,
    session_id: u64,
    tempo_mbpm: u32,
    /// The timeline is pinned at an integer instant with a fractional beat,
    /// so tempo changes preserve the beat exactly; absolute microsecond
    /// values near 2^40 would lose the low bits.
    anchor_us: u64,
    anchor_beat: f64,
    lamport: u32,
    tempo_setter: u64,
    /// Peer whose advertised origin we follow (ourselves when we own it).
    origin_source: u64,
    pub quantum: f64,
    peers: BTreeMap<u64, PeerInfo>,
    next_alive_us: u64,
    next_ping_us: u64,
}

fn mbpm(bpm: f64) -> Result<u32, SyncError> {
    let m = (bpm * 1000.0).round();
    if !m.is_finite() || m < MIN_TEMPO_MBPM as f64 || m > MAX_TEMPO_MBPM as f64 {
        return Err(SyncError::Tempo(bpm));
    }
    Ok(m as u32)
}

impl SyncState {
    /// A lone peer whose session starts at beat 0 at `now_us`.
    pub fn new(peer_id: u64, tempo_bpm: f64, now_us: u64) -> Result<SyncState, SyncError> {
        Ok(SyncState {
            peer_id,
            session_id: peer_id,
            tempo_mbpm: mbpm(tempo_bpm)?,
            anchor_us: now_us,
            anchor_beat: 0.0,
            lamport: 0,
            tempo_setter: peer_id,
            origin_source: peer_id,
            quantum: DEFAULT_QUANTUM,
            peers: BTreeMap::new(),
            next_alive_us: now_us,
            next_ping_us: now_us,
        })
    }

    pub fn peer_id(&self) -> u64 {
        self.peer_id
    }
    pub fn session_id(&self) -> u64 {
        self.session_id
    }
    pub fn tempo_mbpm(&self) -> u32 {
        self.tempo_mbpm
    }
    pub fn tempo_bpm(&self) -> f64 {
        self.tempo_mbpm as f64 / 1000.0
    }
    /// Local time of beat 0.
    pub fn beat_origin_us(&self) -> f64 {
        self.anchor_us as f64 - self.anchor_beat * 60e9 / self.tempo_mbpm as f64
    }
    pub fn lamport(&self) -> u32 {
        self.lamport
    }
    pub fn tempo_setter(&self) -> u64 {
        self.tempo_setter
    }
    pub fn peers(&self) -> &BTreeMap<u64, PeerInfo> {
        &self.peers
    }

    pub fn beat_at(&self, now_us: u64) -> f64 {
        self.beat_at_precise(now_us as f64)
    }

    pub fn beat_at_precise(&self, now_us: f64) -> f64 {
        self.anchor_beat + (now_us - self.anchor_us as f64) * self.tempo_mbpm as f64 / 60e9
    }

    /// Position within the current quantum, in `[0, quantum)`.
    pub fn phase_at(&self, now_us: u64) -> f64 {
        self.beat_at(now_us).rem_euclid(self.quantum)
    }

    /// Changes the session tempo without moving the current beat.
    pub fn set_tempo(&mut self, bpm: f64, now_us: u64) -> Result<SyncMessage, SyncError> {
        let tempo = mbpm(bpm)?;
        self.anchor_beat = self.beat_at(now_us);
        self.anchor_us = now_us;
        self.tempo_mbpm = tempo;
        self.lamport += 1;
        self.tempo_setter = self.peer_id;
        self.origin_source = self.peer_id;
        Ok(self.alive())
    }

    fn message(&self, kind: MessageType) -> SyncMessage {
        SyncMessage {
            kind,
            peer_id: self.peer_id,
            session_id: self.session_id,
            tempo_mbpm: self.tempo_mbpm,
            beat_origin_us: self.beat_origin_us().round().max(0.0) as u64,
            lamport: self.lamport,
            tempo_setter: self.tempo_setter,
            t0: 0,
            t1: 0,
        }
    }

    pub fn alive(&self) -> SyncMessage {
        self.message(MessageType::Alive)
    }

    pub fn ping(&self, now_us: u64) -> SyncMessage {
        SyncMessage {
            t0: now_us,
            ..self.message(MessageType::Ping)
        }
    }

    pub fn bye(&self) -> SyncMessage {
        self.message(MessageType::Bye)
    }

    fn translate(&self, peer: u64, remote_us: u64) -> f64 {
        let offset = self
            .peers
            .get(&peer)
            .and_then(|p| p.clock_offset_us)
            .unwrap_or(0.0);
        remote_us as f64 - offset
    }

    /// Applies one received message; the result, if any, is a reply for the
    /// sender only.
    pub fn on_receive(&mut self, msg: &SyncMessage, now_us: u64) -> Option<SyncMessage> {
        if msg.peer_id == self.peer_id {
            return None;
        }
        match msg.kind {
            MessageType::Alive => self.on_alive(msg, now_us),
            MessageType::Ping => Some(SyncMessage {
                t0: msg.t0,
                t1: now_us,
                ..self.message(MessageType::Pong)
            }),
            MessageType::Pong => {
                if msg.t0 <= now_us && now_us - msg.t0 < PEER_TIMEOUT_US {
                    // the responder answers at once, so t2 = t1
                    let (offset, rtt) = estimate_clock_offset(msg.t0, msg.t1, msg.t1, now_us);
                    if let Some(p) = self.peers.get_mut(&msg.peer_id) {
                        p.clock_offset_us = Some(offset);
                        p.rtt_us = Some(rtt);
                        p.last_seen_us = now_us;
                    }
                }
                None
            }
            MessageType::Bye => {
                self.drop_peer(msg.peer_id);
                None
            }
        }
    }

    fn on_alive(&mut self, msg: &SyncMessage, now_us: u64) -> Option<SyncMessage> {
        if !(MIN_TEMPO_MBPM..=MAX_TEMPO_MBPM).contains(&msg.tempo_mbpm) {
            log::warn!("ignoring peer {:016x}: tempo {} mbpm", msg.peer_id, msg.tempo_mbpm);
            return None;
        }
        let known = self.peers.get(&msg.peer_id).map(|p| (p.clock_offset_us, p.rtt_us));
        let (clock_offset_us, rtt_us) = known.unwrap_or((None, None));
        self.peers.insert(
            msg.peer_id,
            PeerInfo {
                last_seen_us: now_us,
                session_id: msg.session_id,
                tempo_mbpm: msg.tempo_mbpm,
                lamport: msg.lamport,
                tempo_setter: msg.tempo_setter,
                clock_offset_us,
                rtt_us,
            },
        );
        let origin = self.translate(msg.peer_id, msg.beat_origin_us);
        let theirs = (msg.lamport, msg.tempo_setter);
        let ours = (self.lamport, self.tempo_setter);
        if msg.session_id < self.session_id
            || (msg.session_id == self.session_id && theirs > ours)
        {
            self.session_id = msg.session_id;
            self.tempo_mbpm = msg.tempo_mbpm;
            self.set_origin(origin, now_us);
            self.lamport = msg.lamport;
            self.tempo_setter = msg.tempo_setter;
            self.origin_source = msg.peer_id;
        } else if msg.session_id == self.session_id
            && theirs == ours
            && msg.peer_id == self.origin_source
        {
            // refine with the latest clock offset
            self.set_origin(origin, now_us);
        }
        // measure the clock offset of peers we have no estimate for
        clock_offset_us.is_none().then(|| self.ping(now_us))
    }

    fn set_origin(&mut self, origin_us: f64, now_us: u64) {
        self.anchor_us = now_us;
        self.anchor_beat = (now_us as f64 - origin_us) * self.tempo_mbpm as f64 / 60e9;
    }

    fn drop_peer(&mut self, peer: u64) {
        self.peers.remove(&peer);
        if self.origin_source == peer {
            self.origin_source = self.peer_id;
        }
    }

    /// Earliest local time at which [`SyncState::poll`] has work.
    pub fn next_deadline(&self) -> u64 {
        self.next_alive_us.min(self.next_ping_us)
    }

    /// Runs timers: drops silent peers and returns heartbeats and periodic
    /// PINGs due by `now_us`, to be multicast.
    pub fn poll(&mut self, now_us: u64) -> Vec<SyncMessage> {
        let expired: Vec<u64> = self
            .peers
            .iter()
            .filter(|(_, p)| now_us.saturating_sub(p.last_seen_us) > PEER_TIMEOUT_US)
            .map(|(id, _)| *id)
            .collect();
        for id in expired {
            log::info!("peer {id:016x} timed out");
            self.drop_peer(id);
        }
        let mut out = Vec::new();
        if now_us >= self.next_alive_us {
            out.push(self.alive());
            while self.next_alive_us <= now_us {
                self.next_alive_us += ALIVE_INTERVAL_US;
            }
        }
        if now_us >= self.next_ping_us {
            if !self.peers.is_empty() {
                out.push(self.ping(now_us));
            }
            while self.next_ping_us <= now_us {
                self.next_ping_us += PING_INTERVAL_US;
            }
        }
        out
    }
}
