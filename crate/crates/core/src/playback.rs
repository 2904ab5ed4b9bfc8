//! Looped playback of a sheet as MIDI note events, one tick per sixteenth slot.
//!
//! [`Player`] owns the timeline. Other threads hand it new sheets through a
//! [`SwapHandle`]; a pending sheet is installed at the start of the next tick,
//! so a tick never sees a half-updated sheet and no slot is skipped or played
//! twice. After a swap the sounding notes are reconciled against the new sheet
//! rather than retriggered.

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::score::{governing_pitch, validate_sheet, Sheet, Token, Violation};

/// Note-on velocity for every event.
pub const VELOCITY: u8 = 80;

#[derive(Debug, Error)]
pub enum PlaybackError {
    #[error("sheet has {found} slots x {found_voices} voices but the session loops {expected} slots x {expected_voices} voices")]
    LengthMismatch {
        expected: usize,
        found: usize,
        expected_voices: usize,
        found_voices: usize,
    },
    #[error("sheet is not playable: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", "))]
    InvalidSheet(Vec<Violation>),
    #[error("tempo must be positive and finite, got {0}")]
    Tempo(f64),
    #[error("no MIDI port matching {0:?}")]
    NoPort(String),
    #[error("MIDI output {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MidiEventKind {
    NoteOn,
    NoteOff,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MidiEvent {
    pub kind: MidiEventKind,
    /// Equals the voice index.
    pub channel: u8,
    pub pitch: u8,
    /// [`VELOCITY`] for note-on, 0 for note-off.
    pub velocity: u8,
    pub at_slot: usize,
}

impl MidiEvent {
    fn on(channel: usize, pitch: u8, at_slot: usize) -> MidiEvent {
        MidiEvent {
            kind: MidiEventKind::NoteOn,
            channel: channel as u8,
            pitch,
            velocity: VELOCITY,
            at_slot,
        }
    }

    fn off(channel: usize, pitch: u8, at_slot: usize) -> MidiEvent {
        MidiEvent {
            kind: MidiEventKind::NoteOff,
            channel: channel as u8,
            pitch,
            velocity: 0,
            at_slot,
        }
    }

    /// MIDI 1.0 channel voice message: `9n pp vv` or `8n pp 00`.
    pub fn to_bytes(&self) -> [u8; 3] {
        let status = match self.kind {
            MidiEventKind::NoteOn => 0x90,
            MidiEventKind::NoteOff => 0x80,
        };
        [status | (self.channel & 0x0f), self.pitch & 0x7f, self.velocity & 0x7f]
    }
}

/// Events that bring the sounding notes in line with `slot` of `sheet`.
pub fn events_for_slot(
    sheet: &Sheet,
    slot: usize,
    sounding: &[Option<u8>],
) -> (Vec<MidiEvent>, Vec<Option<u8>>) {
    let mut events = Vec::new();
    let mut next = sounding.to_vec();
    next.resize(sheet.voices.len(), None);
    for (v, voice) in sheet.voices.iter().enumerate() {
        let now = next[v];
        match voice[slot] {
            Token::On(p) => {
                if let Some(old) = now {
                    events.push(MidiEvent::off(v, old, slot));
                }
                events.push(MidiEvent::on(v, p, slot));
                next[v] = Some(p);
            }
            Token::Rest => {
                if let Some(old) = now {
                    events.push(MidiEvent::off(v, old, slot));
                }
                next[v] = None;
            }
            Token::Hold => {
                let gov = governing_pitch(voice, slot);
                if gov != now {
                    if let Some(old) = now {
                        events.push(MidiEvent::off(v, old, slot));
                    }
                    if let Some(p) = gov {
                        events.push(MidiEvent::on(v, p, slot));
                    }
                    next[v] = gov;
                }
            }
        }
    }
    (events, next)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransportState {
    pub playing: bool,
    pub slot_pos: usize,
    pub tempo_bpm: f64,
    pub sounding: Vec<Option<u8>>,
    pub loop_len_slots: usize,
}

impl TransportState {
    pub fn new(sheet: &Sheet) -> TransportState {
        TransportState {
            playing: false,
            slot_pos: 0,
            tempo_bpm: sheet.tempo_bpm,
            sounding: vec![None; sheet.voices.len()],
            loop_len_slots: sheet.len_slots(),
        }
    }

    /// Seconds between ticks: one sixteenth at the current tempo.
    pub fn tick_period(&self) -> f64 {
        60.0 / (4.0 * self.tempo_bpm)
    }
}

/// Plays `slot_pos` and advances it. A stopped transport does nothing.
pub fn tick(state: &TransportState, sheet: &Sheet) -> (TransportState, Vec<MidiEvent>) {
    let mut next = state.clone();
    if !state.playing {
        return (next, Vec::new());
    }
    let (events, sounding) = events_for_slot(sheet, state.slot_pos, &state.sounding);
    next.sounding = sounding;
    next.slot_pos = (state.slot_pos + 1) % state.loop_len_slots;
    (next, events)
}

/// Stops the transport, releasing every sounding note.
pub fn stop(state: &TransportState) -> (TransportState, Vec<MidiEvent>) {
    let mut next = state.clone();
    next.playing = false;
    let events = state
        .sounding
        .iter()
        .enumerate()
        .filter_map(|(v, p)| p.map(|p| MidiEvent::off(v, p, state.slot_pos)))
        .collect();
    next.sounding = vec![None; state.sounding.len()];
    (next, events)
}

fn check_shape(state: &TransportState, sheet: &Sheet) -> Result<(), PlaybackError> {
    if sheet.len_slots() != state.loop_len_slots || sheet.voices.len() != state.sounding.len() {
        return Err(PlaybackError::LengthMismatch {
            expected: state.loop_len_slots,
            found: sheet.len_slots(),
            expected_voices: state.sounding.len(),
            found_voices: sheet.voices.len(),
        });
    }
    let violations = validate_sheet(sheet);
    if !violations.is_empty() {
        return Err(PlaybackError::InvalidSheet(violations));
    }
    Ok(())
}

/// Requests sheet swaps from any thread; applied at the next tick boundary.
#[derive(Clone)]
pub struct SwapHandle {
    pending: Arc<Mutex<Option<Arc<Sheet>>>>,
    shape: TransportState,
}

impl SwapHandle {
    /// Queues `sheet`, replacing any swap not yet applied. Rejected at once if
    /// its shape differs from the session's.
    pub fn request(&self, sheet: Sheet) -> Result<(), PlaybackError> {
        check_shape(&self.shape, &sheet)?;
        *self.pending.lock().unwrap_or_else(|e| e.into_inner()) = Some(Arc::new(sheet));
        Ok(())
    }
}

/// Owner of one playback timeline.
pub struct Player {
    state: TransportState,
    sheet: Arc<Sheet>,
    pending: Arc<Mutex<Option<Arc<Sheet>>>>,
    ticks: u64,
}

impl Player {
    pub fn new(sheet: Sheet) -> Result<Player, PlaybackError> {
        let violations = validate_sheet(&sheet);
        if !violations.is_empty() {
            return Err(PlaybackError::InvalidSheet(violations));
        }
        Ok(Player {
            state: TransportState::new(&sheet),
            sheet: Arc::new(sheet),
            pending: Arc::default(),
            ticks: 0,
        })
    }

    pub fn state(&self) -> &TransportState {
        &self.state
    }

    pub fn sheet(&self) -> &Sheet {
        &self.sheet
    }

    /// Ticks played since creation.
    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    pub fn swap_handle(&self) -> SwapHandle {
        SwapHandle {
            pending: Arc::clone(&self.pending),
            shape: self.state.clone(),
        }
    }

    /// Installs `sheet` now (between two ticks); slot position and transport
    /// are unchanged.
    pub fn swap_sheet(&mut self, sheet: Sheet) -> Result<(), PlaybackError> {
        check_shape(&self.state, &sheet)?;
        self.sheet = Arc::new(sheet);
        Ok(())
    }

    pub fn set_tempo(&mut self, bpm: f64) -> Result<(), PlaybackError> {
        if !(bpm.is_finite() && bpm > 0.0) {
            return Err(PlaybackError::Tempo(bpm));
        }
        self.state.tempo_bpm = bpm;
        Ok(())
    }

    pub fn play(&mut self) {
        self.state.playing = true;
    }

    pub fn stop(&mut self) -> Vec<MidiEvent> {
        let (state, events) = stop(&self.state);
        self.state = state;
        events
    }

    pub fn tick(&mut self) -> Vec<MidiEvent> {
        if let Some(sheet) = self.pending.lock().unwrap_or_else(|e| e.into_inner()).take() {
            self.sheet = sheet;
        }
        if !self.state.playing {
            return Vec::new();
        }
        let (state, events) = tick(&self.state, &self.sheet);
        self.state = state;
        self.ticks += 1;
        events
    }
}

pub trait MidiSink {
    fn send(&mut self, event: &MidiEvent) -> io::Result<()>;
    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// Keeps every event with the clock time it was sent at.
#[derive(Clone, Debug, Default)]
pub struct RecordingSink {
    pub events: Vec<(f64, MidiEvent)>,
    pub now: f64,
}

impl MidiSink for RecordingSink {
    fn send(&mut self, event: &MidiEvent) -> io::Result<()> {
        self.events.push((self.now, *event));
        Ok(())
    }
}

/// Writes raw MIDI bytes to a character device (ALSA rawmidi, a virtual MIDI
/// device such as `snd-virmidi`) or a FIFO.
pub struct RawMidiSink {
    out: File,
    path: PathBuf,
}

impl RawMidiSink {
    pub fn open(path: &Path) -> Result<RawMidiSink, PlaybackError> {
        let out = OpenOptions::new()
            .write(true)
            .open(path)
            .map_err(|source| PlaybackError::Io {
                path: path.to_owned(),
                source,
            })?;
        Ok(RawMidiSink {
            out,
            path: path.to_owned(),
        })
    }

    /// Opens `port`: an existing path, or the first ALSA card whose name
    /// contains `port` (case-insensitive), at `/dev/snd/midiC<card>D0`.
    pub fn open_port(port: &str) -> Result<RawMidiSink, PlaybackError> {
        let direct = Path::new(port);
        if direct.exists() {
            return Self::open(direct);
        }
        let cards = std::fs::read_to_string("/proc/asound/cards").unwrap_or_default();
        let wanted = port.to_lowercase();
        for line in cards.lines() {
            let mut parts = line.split_whitespace();
            let (Some(idx), Some(_)) = (parts.next().and_then(|n| n.parse::<u32>().ok()), parts.next()) else {
                continue;
            };
            if line.to_lowercase().contains(&wanted) {
                let dev = PathBuf::from(format!("/dev/snd/midiC{idx}D0"));
                if dev.exists() {
                    return Self::open(&dev);
                }
            }
        }
        Err(PlaybackError::NoPort(port.to_owned()))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl MidiSink for RawMidiSink {
    fn send(&mut self, event: &MidiEvent) -> io::Result<()> {
        self.out.write_all(&event.to_bytes())
    }

    fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }
}

/// Time source for the scheduler, in seconds.
pub trait Clock {
    fn now(&self) -> f64;
    fn sleep_until(&mut self, t: f64);
}

/// A clock that jumps straight to each deadline.
#[derive(Clone, Debug, Default)]
pub struct SimClock {
    pub now: f64,
}

impl Clock for SimClock {
    fn now(&self) -> f64 {
        self.now
    }
    fn sleep_until(&mut self, t: f64) {
        self.now = self.now.max(t);
    }
}

/// Monotonic wall clock measured from `origin`.
#[derive(Clone, Debug)]
pub struct SystemClock {
    pub origin: Instant,
}

impl SystemClock {
    pub fn new(origin: Instant) -> SystemClock {
        SystemClock { origin }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> f64 {
        self.origin.elapsed().as_secs_f64()
    }
    fn sleep_until(&mut self, t: f64) {
        let now = self.now();
        if t > now {
            std::thread::sleep(Duration::from_secs_f64(t - now));
        }
    }
}

/// An external beat grid (a sync session) the scheduler can follow.
pub trait BeatSource {
    /// Beat position and tempo in BPM at clock time `now`.
    fn beat_and_tempo(&self, now: f64) -> (f64, f64);
}

/// Spaces ticks one sixteenth apart, or on a followed beat grid's sixteenths.
pub struct Scheduler<C: Clock> {
    pub clock: C,
    next_at: Option<f64>,
}

impl<C: Clock> Scheduler<C> {
    pub fn new(clock: C) -> Scheduler<C> {
        Scheduler {
            clock,
            next_at: None,
        }
    }

    /// Forgets the pending deadline; the next step ticks immediately. Used
    /// when resuming after a stop.
    pub fn reset(&mut self) {
        self.next_at = None;
    }

    /// Waits for the next deadline, ticks, and sends the events. Returns the
    /// clock time of the tick.
    pub fn step(
        &mut self,
        player: &mut Player,
        sink: &mut dyn MidiSink,
        follow: Option<&dyn BeatSource>,
    ) -> io::Result<f64> {
        if let Some(t) = self.next_at {
            self.clock.sleep_until(t);
        }
        let at = self.next_at.unwrap_or_else(|| self.clock.now());
        for ev in player.tick() {
            sink.send(&ev)?;
        }
        sink.flush()?;
        self.next_at = Some(match follow {
            None => at + player.state().tick_period(),
            Some(src) => {
                let (beat, bpm) = src.beat_and_tempo(at);
                if bpm.is_finite() && bpm > 0.0 {
                    let _ = player.set_tempo(bpm);
                }
                let sixteenth = beat * 4.0;
                // at least half a slot ahead so a tick landing on the grid is not repeated
                let target = (sixteenth + 0.5).floor() + 1.0;
                at + (target - sixteenth) * player.state().tick_period()
            }
        });
        Ok(at)
    }
}
