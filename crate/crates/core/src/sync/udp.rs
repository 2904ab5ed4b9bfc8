//! UDP multicast transport and a background node that runs the protocol.

use std::io;
use std::net::{Ipv4Addr, SocketAddr, SocketAddrV4, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use socket2::{Domain, Protocol, Socket, Type};

use super::{decode_message, encode_message, SyncError, SyncMessage, SyncState, MESSAGE_LEN};
use crate::playback::BeatSource;

pub const MULTICAST_GROUP: Ipv4Addr = Ipv4Addr::new(239, 77, 76, 75);
pub const PORT: u16 = 20765;

/// Offset added to process-local clock readings so translated beat origins
/// from peers that started earlier stay positive on the wire.
pub const CLOCK_BASE_US: u64 = 1 << 40;

/// Local monotonic microseconds since `origin`, plus [`CLOCK_BASE_US`].
#[derive(Clone, Copy, Debug)]
pub struct MonoClock {
    pub origin: Instant,
}

impl MonoClock {
    pub fn now_us(&self) -> u64 {
        CLOCK_BASE_US + self.origin.elapsed().as_micros() as u64
    }

    /// Converts seconds since `origin` to this clock's microseconds.
    pub fn secs_to_us(&self, secs: f64) -> f64 {
        CLOCK_BASE_US as f64 + secs * 1e6
    }
}

pub struct UdpTransport {
    socket: UdpSocket,
    group: SocketAddr,
}

impl UdpTransport {
    /// Joins `group:port` on `interface` (UNSPECIFIED for the default route),
    /// with loopback so peers on one host see each other.
    pub fn join(group: Ipv4Addr, port: u16, interface: Ipv4Addr) -> io::Result<UdpTransport> {
        let socket = Socket::new(Domain::IPV4, Type::DGRAM, Some(Protocol::UDP))?;
        socket.set_reuse_address(true)?;
        #[cfg(unix)]
        socket.set_reuse_port(true)?;
        socket.bind(&SocketAddrV4::new(Ipv4Addr::UNSPECIFIED, port).into())?;
        socket.join_multicast_v4(&group, &interface)?;
        socket.set_multicast_loop_v4(true)?;
        socket.set_multicast_ttl_v4(1)?;
        Ok(UdpTransport {
            socket: socket.into(),
            group: SocketAddrV4::new(group, port).into(),
        })
    }

    /// A plain socket whose "group" is a single address; for point-to-point
    /// use and tests.
    pub fn unicast(bind: SocketAddr, peer: SocketAddr) -> io::Result<UdpTransport> {
        Ok(UdpTransport {
            socket: UdpSocket::bind(bind)?,
            group: peer,
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.socket.local_addr()
    }

    pub fn send_group(&self, msg: &SyncMessage) -> io::Result<()> {
        self.socket.send_to(&encode_message(msg), self.group).map(drop)
    }

    pub fn send_to(&self, msg: &SyncMessage, addr: SocketAddr) -> io::Result<()> {
        self.socket.send_to(&encode_message(msg), addr).map(drop)
    }

    /// Waits up to `timeout` for one valid datagram. Malformed datagrams are
    /// logged and skipped.
    pub fn recv(&self, timeout: Duration) -> io::Result<Option<(SyncMessage, SocketAddr)>> {
        self.socket
            .set_read_timeout(Some(timeout.max(Duration::from_micros(1))))?;
        let mut buf = [0u8; MESSAGE_LEN + 1];
        match self.socket.recv_from(&mut buf) {
            Ok((n, from)) => match decode_message(&buf[..n]) {
                Ok(m) => Ok(Some((m, from))),
                Err(e) => {
                    log::debug!("dropping datagram from {from}: {e}");
                    Ok(None)
                }
            },
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }
}

/// A running peer: a thread owns the protocol loop; the handle reads
/// snapshots and submits tempo changes.
pub struct SyncNode {
    state: Arc<Mutex<SyncState>>,
    transport: Arc<UdpTransport>,
    clock: MonoClock,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl SyncNode {
    pub fn spawn(transport: UdpTransport, peer_id: u64, tempo_bpm: f64, clock: MonoClock) -> Result<SyncNode, SyncError> {
        let state = Arc::new(Mutex::new(SyncState::new(peer_id, tempo_bpm, clock.now_us())?));
        let transport = Arc::new(transport);
        let stop = Arc::new(AtomicBool::new(false));
        let thread = {
            let (state, transport, stop) = (Arc::clone(&state), Arc::clone(&transport), Arc::clone(&stop));
            std::thread::spawn(move || run(&state, &transport, clock, &stop))
        };
        Ok(SyncNode {
            state,
            transport,
            clock,
            stop,
            thread: Some(thread),
        })
    }

    pub fn snapshot(&self) -> SyncState {
        self.state.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn now_us(&self) -> u64 {
        self.clock.now_us()
    }

    pub fn set_tempo(&self, bpm: f64) -> Result<(), SyncError> {
        let msg = {
            let mut s = self.state.lock().unwrap_or_else(|e| e.into_inner());
            s.set_tempo(bpm, self.clock.now_us())?
        };
        if let Err(e) = self.transport.send_group(&msg) {
            log::warn!("tempo broadcast failed: {e}");
        }
        Ok(())
    }
}

fn run(state: &Mutex<SyncState>, transport: &UdpTransport, clock: MonoClock, stop: &AtomicBool) {
    while !stop.load(Ordering::Relaxed) {
        let (outgoing, deadline) = {
            let mut s = state.lock().unwrap_or_else(|e| e.into_inner());
            let out = s.poll(clock.now_us());
            (out, s.next_deadline())
        };
        for m in outgoing {
            if let Err(e) = transport.send_group(&m) {
                log::warn!("sync send failed: {e}");
            }
        }
        let wait = deadline.saturating_sub(clock.now_us()).min(50_000);
        match transport.recv(Duration::from_micros(wait)) {
            Ok(Some((msg, from))) => {
                let reply = state
                    .lock()
                    .unwrap_or_else(|e| e.into_inner())
                    .on_receive(&msg, clock.now_us());
                if let Some(r) = reply {
                    if let Err(e) = transport.send_to(&r, from) {
                        log::warn!("sync reply to {from} failed: {e}");
                    }
                }
            }
            Ok(None) => {}
            Err(e) => {
                log::warn!("sync receive failed: {e}");
                std::thread::sleep(Duration::from_millis(50));
            }
        }
    }
}

impl Drop for SyncNode {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        let bye = self.snapshot().bye();
        let _ = self.transport.send_group(&bye);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Follows the session grid; scheduler times are seconds since the clock origin.
impl BeatSource for SyncNode {
    fn beat_and_tempo(&self, now: f64) -> (f64, f64) {
        let s = self.state.lock().unwrap_or_else(|e| e.into_inner());
        (s.beat_at_precise(self.clock.secs_to_us(now)), s.tempo_bpm())
    }
}
