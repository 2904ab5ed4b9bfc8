//! Deterministic in-memory network for exercising the sync protocol.
//!
//! Every peer has its own clock (`global + base`). Datagrams pass through the
//! wire codec and arrive after a seeded random delay; they may also be dropped
//! with a fixed probability. Replies go back to the sender only; everything
//! else reaches every other peer.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{decode_message, encode_message, SyncError, SyncMessage, SyncState, MESSAGE_LEN};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Delivery {
    at: u64,
    seq: u64,
    to: usize,
    from: usize,
    bytes: [u8; MESSAGE_LEN],
}

pub struct SimNetwork {
    pub peers: Vec<SyncState>,
    clock_base: Vec<u64>,
    now: u64,
    rng: ChaCha8Rng,
    max_delay_us: u64,
    loss: f64,
    queue: BinaryHeap<Reverse<Delivery>>,
    seq: u64,
    pub delivered: u64,
}

impl SimNetwork {
    /// Peers start together at global time 0, each clock offset by its base.
    pub fn new(
        peer_ids: &[u64],
        clock_base: &[u64],
        tempo_bpm: f64,
        max_delay_us: u64,
        seed: u64,
    ) -> Result<SimNetwork, SyncError> {
        assert_eq!(peer_ids.len(), clock_base.len());
        let peers = peer_ids
            .iter()
            .zip(clock_base)
            .map(|(id, base)| SyncState::new(*id, tempo_bpm, *base))
            .collect::<Result<_, _>>()?;
        Ok(SimNetwork {
            peers,
            clock_base: clock_base.to_vec(),
            now: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            max_delay_us,
            loss: 0.0,
            queue: BinaryHeap::new(),
            seq: 0,
            delivered: 0,
        })
    }

    pub fn with_loss(mut self, p: f64) -> SimNetwork {
        self.loss = p;
        self
    }

    /// Global simulation time in microseconds.
    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn local_now(&self, peer: usize) -> u64 {
        self.now + self.clock_base[peer]
    }

    pub fn beat(&self, peer: usize) -> f64 {
        self.peers[peer].beat_at(self.local_now(peer))
    }

    fn send(&mut self, from: usize, to: usize, msg: &SyncMessage) {
        if self.loss > 0.0 && self.rng.random::<f64>() < self.loss {
            return;
        }
        let delay = self.rng.random_range(0..=self.max_delay_us);
        self.seq += 1;
        self.queue.push(Reverse(Delivery {
            at: self.now + delay,
            seq: self.seq,
            to,
            from,
            bytes: encode_message(msg),
        }));
    }

    pub fn broadcast(&mut self, from: usize, msg: &SyncMessage) {
        for to in 0..self.peers.len() {
            if to != from {
                self.send(from, to, msg);
            }
        }
    }

    pub fn set_tempo(&mut self, peer: usize, bpm: f64) -> Result<(), SyncError> {
        let now = self.local_now(peer);
        let msg = self.peers[peer].set_tempo(bpm, now)?;
        self.broadcast(peer, &msg);
        Ok(())
    }

    fn next_timer(&self) -> (u64, usize) {
        (0..self.peers.len())
            .map(|i| {
                let local = self.peers[i].next_deadline();
                (local.saturating_sub(self.clock_base[i]), i)
            })
            .min()
            .expect("at least one peer")
    }

    /// Processes timers and deliveries in time order up to global `until`.
    pub fn run_until(&mut self, until: u64) {
        loop {
            let (timer_at, peer) = self.next_timer();
            let msg_at = self.queue.peek().map(|Reverse(d)| d.at).unwrap_or(u64::MAX);
            let at = timer_at.min(msg_at);
            if at > until {
                break;
            }
            self.now = self.now.max(at);
            if msg_at <= timer_at {
                let Reverse(d) = self.queue.pop().expect("peeked");
                let msg = decode_message(&d.bytes).expect("codec round trip");
                let local = self.local_now(d.to);
                self.delivered += 1;
                if let Some(reply) = self.peers[d.to].on_receive(&msg, local) {
                    self.send(d.to, d.from, &reply);
                }
            } else {
                let local = self.local_now(peer);
                for msg in self.peers[peer].poll(local) {
                    self.broadcast(peer, &msg);
                }
            }
        }
        self.now = until;
    }

    /// All peers agree on session, tempo and tempo version.
    pub fn agreed(&self) -> bool {
        let key = |s: &SyncState| (s.session_id(), s.tempo_mbpm(), s.lamport(), s.tempo_setter());
        self.peers.windows(2).all(|w| key(&w[0]) == key(&w[1]))
    }

    /// Largest pairwise beat difference at the current instant.
    pub fn max_beat_skew(&self) -> f64 {
        let beats: Vec<f64> = (0..self.peers.len()).map(|i| self.beat(i)).collect();
        let max = beats.iter().copied().fold(f64::MIN, f64::max);
        let min = beats.iter().copied().fold(f64::MAX, f64::min);
        max - min
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_peers_converge_on_lower_session() {
        let mut net = SimNetwork::new(&[40, 7], &[5_000_000_000, 9_000_000_123], 100.0, 5_000, 1).unwrap();
        net.set_tempo(0, 133.0).unwrap();
        net.run_until(3_000_000);
        assert!(net.agreed());
        assert_eq!(net.peers[0].session_id(), 7);
        assert_eq!(net.peers[0].tempo_mbpm(), 100_000);
        assert!(net.max_beat_skew() < 0.02, "{}", net.max_beat_skew());
    }

    #[test]
    fn runs_are_reproducible() {
        let run = |seed| {
            let mut net = SimNetwork::new(&[3, 2, 1], &[1 << 40, 1 << 41, 3 << 39], 120.0, 5_000, seed).unwrap();
            net.run_until(2_500_000);
            net.set_tempo(2, 90.0).unwrap();
            net.run_until(6_000_000);
            (net.peers.clone(), net.delivered)
        };
        assert_eq!(run(9), run(9));
    }

    #[test]
    fn lossy_network_still_agrees() {
        let mut net = SimNetwork::new(&[11, 12, 13], &[1 << 40, 1 << 41, 3 << 39], 120.0, 5_000, 4)
            .unwrap()
            .with_loss(0.2);
        net.run_until(2_000_000);
        net.set_tempo(1, 150.0).unwrap();
        net.run_until(20_000_000);
        assert!(net.agreed());
        assert_eq!(net.peers[0].tempo_mbpm(), 150_000);
    }
}
