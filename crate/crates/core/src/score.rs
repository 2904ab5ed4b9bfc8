//! Canonical score representation on a sixteenth-note grid.
//!
//! Every voice is monophonic and stored as one [`Token`] per sixteenth slot:
//! `On(pitch)` starts a note, `Hold` continues the note started by the closest
//! preceding `On`, and `Rest` is silence. Positions are measured in slots
//! (one slot = a quarter of a quarter note) so all arithmetic is integral.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sixteenth slots per quarter note.
pub const SLOTS_PER_QUARTER: u32 = 4;

pub type TokenSequence = Vec<Token>;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum ScoreError {
    #[error("{what} {value} is not a multiple of a sixteenth note")]
    Quantization { what: &'static str, value: f64 },
    #[error("note at quarter {onset} overlaps the previous note")]
    Overlap { onset: f64 },
    #[error("note at quarter {onset} extends past the end of the voice ({length} quarters)")]
    PastEnd { onset: f64, length: f64 },
    #[error("malformed token sequence at slot {slot}: {reason}")]
    MalformedSequence { slot: usize, reason: &'static str },
    #[error("midi pitch {0} outside 0..=127")]
    PitchRange(i32),
    #[error("invalid time range: {0}")]
    Range(String),
    #[error("splice error: {0}")]
    Splice(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Step {
    C,
    D,
    E,
    F,
    G,
    A,
    B,
}

impl Step {
    pub fn semitone(self) -> i32 {
        match self {
            Step::C => 0,
            Step::D => 2,
            Step::E => 4,
            Step::F => 5,
            Step::G => 7,
            Step::A => 9,
            Step::B => 11,
        }
    }

    pub fn from_letter(s: &str) -> Option<Step> {
        Some(match s.trim() {
            "C" => Step::C,
            "D" => Step::D,
            "E" => Step::E,
            "F" => Step::F,
            "G" => Step::G,
            "A" => Step::A,
            "B" => Step::B,
            _ => return None,
        })
    }

    pub fn letter(self) -> &'static str {
        match self {
            Step::C => "C",
            Step::D => "D",
            Step::E => "E",
            Step::F => "F",
            Step::G => "G",
            Step::A => "A",
            Step::B => "B",
        }
    }
}

/// A spelled pitch. The MIDI number is the identity; spelling is carried only
/// for notation output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Pitch {
    midi: u8,
    step: Step,
    alter: i8,
    octave: i8,
}

const SHARP_SPELLING: [(Step, i8); 12] = [
    (Step::C, 0),
    (Step::C, 1),
    (Step::D, 0),
    (Step::D, 1),
    (Step::E, 0),
    (Step::F, 0),
    (Step::F, 1),
    (Step::G, 0),
    (Step::G, 1),
    (Step::A, 0),
    (Step::A, 1),
    (Step::B, 0),
];

impl Pitch {
    /// Spells a MIDI number with the sharp-preferring table.
    pub fn from_midi(midi: u8) -> Result<Pitch, ScoreError> {
        if midi > 127 {
            return Err(ScoreError::PitchRange(midi as i32));
        }
        let (step, alter) = SHARP_SPELLING[(midi % 12) as usize];
        Ok(Pitch {
            midi,
            step,
            alter,
            octave: (midi / 12) as i8 - 1,
        })
    }

    pub fn from_spelling(step: Step, alter: i8, octave: i8) -> Result<Pitch, ScoreError> {
        if !(-2..=2).contains(&alter) {
            return Err(ScoreError::PitchRange(alter as i32));
        }
        let midi = 12 * (octave as i32 + 1) + step.semitone() + alter as i32;
        if !(0..=127).contains(&midi) {
            return Err(ScoreError::PitchRange(midi));
        }
        Ok(Pitch {
            midi: midi as u8,
            step,
            alter,
            octave,
        })
    }

    pub fn midi(&self) -> u8 {
        self.midi
    }
    pub fn step(&self) -> Step {
        self.step
    }
    pub fn alter(&self) -> i8 {
        self.alter
    }
    pub fn octave(&self) -> i8 {
        self.octave
    }
    pub fn pitch_class(&self) -> u8 {
        self.midi % 12
    }
}

/// One sixteenth slot of a voice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Token {
    On(u8),
    Hold,
    Rest,
}

impl Token {
    pub fn is_hold(self) -> bool {
        self == Token::Hold
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::On(p) => write!(f, "ON:{p}"),
            Token::Hold => f.write_str("HOLD"),
            Token::Rest => f.write_str("REST"),
        }
    }
}

impl FromStr for Token {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "HOLD" => Ok(Token::Hold),
            "REST" => Ok(Token::Rest),
            _ => {
                let p = s
                    .strip_prefix("ON:")
                    .and_then(|p| p.parse::<u8>().ok())
                    .filter(|p| *p <= 127)
                    .ok_or_else(|| format!("bad token {s:?}"))?;
                Ok(Token::On(p))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Chorale,
    Leadsheet,
}

impl Mode {
    pub fn roles(self) -> &'static [VoiceRole] {
        match self {
            Mode::Chorale => &[
                VoiceRole::Soprano,
                VoiceRole::Alto,
                VoiceRole::Tenor,
                VoiceRole::Bass,
            ],
            Mode::Leadsheet => &[VoiceRole::Melody],
        }
    }

    pub fn voice_count(self) -> usize {
        self.roles().len()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Chorale => "chorale",
            Mode::Leadsheet => "leadsheet",
        }
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "chorale" => Ok(Mode::Chorale),
            "leadsheet" => Ok(Mode::Leadsheet),
            _ => Err(format!("unknown mode {s:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoiceRole {
    Soprano,
    Alto,
    Tenor,
    Bass,
    Melody,
}

impl VoiceRole {
    pub fn as_str(self) -> &'static str {
        match self {
            VoiceRole::Soprano => "soprano",
            VoiceRole::Alto => "alto",
            VoiceRole::Tenor => "tenor",
            VoiceRole::Bass => "bass",
            VoiceRole::Melody => "melody",
        }
    }
}

impl fmt::Display for VoiceRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VoiceRole {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "soprano" => Ok(VoiceRole::Soprano),
            "alto" => Ok(VoiceRole::Alto),
            "tenor" => Ok(VoiceRole::Tenor),
            "bass" => Ok(VoiceRole::Bass),
            "melody" => Ok(VoiceRole::Melody),
            _ => Err(format!("unknown voice role {s:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TimeSignature {
    pub beats: u32,
    pub beat_unit: u32,
}

impl TimeSignature {
    pub const COMMON: TimeSignature = TimeSignature {
        beats: 4,
        beat_unit: 4,
    };

    /// Sixteenth slots per measure, or `None` when the measure does not fall
    /// on the sixteenth grid (e.g. a 32nd-note beat unit).
    pub fn slots_per_measure(&self) -> Option<u32> {
        if self.beats == 0 || self.beat_unit == 0 {
            return None;
        }
        let num = self.beats * 16;
        (num % self.beat_unit == 0).then_some(num / self.beat_unit)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChordKind {
    Maj,
    Min,
    Dom7,
    Min7,
    Maj7,
    Dim,
}

impl ChordKind {
    pub const ALL: [ChordKind; 6] = [
        ChordKind::Maj,
        ChordKind::Min,
        ChordKind::Dom7,
        ChordKind::Min7,
        ChordKind::Maj7,
        ChordKind::Dim,
    ];

    /// Semitone offsets of the chord tones above the root.
    pub fn intervals(self) -> &'static [u8] {
        match self {
            ChordKind::Maj => &[0, 4, 7],
            ChordKind::Min => &[0, 3, 7],
            ChordKind::Dom7 => &[0, 4, 7, 10],
            ChordKind::Min7 => &[0, 3, 7, 10],
            ChordKind::Maj7 => &[0, 4, 7, 11],
            ChordKind::Dim => &[0, 3, 6],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ChordKind::Maj => "maj",
            ChordKind::Min => "min",
            ChordKind::Dom7 => "dom7",
            ChordKind::Min7 => "min7",
            ChordKind::Maj7 => "maj7",
            ChordKind::Dim => "dim",
        }
    }
}

impl FromStr for ChordKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ChordKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown chord kind {s:?}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ChordSymbol {
    /// Onset in sixteenth slots from the start of the sheet.
    pub onset: u32,
    pub root_pc: u8,
    pub kind: ChordKind,
}

impl ChordSymbol {
    pub fn onset_quarter(&self) -> f64 {
        self.onset as f64 / SLOTS_PER_QUARTER as f64
    }

    /// Bit `pc` is set for every pitch class in the chord.
    pub fn pitch_class_mask(&self) -> u16 {
        self.kind
            .intervals()
            .iter()
            .fold(0u16, |m, i| m | 1 << ((self.root_pc + i) % 12))
    }

    pub fn contains_pitch_class(&self, pc: u8) -> bool {
        self.pitch_class_mask() & (1 << (pc % 12)) != 0
    }
}

/// A quantized multi-voice score with its conditioning metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Sheet {
    pub mode: Mode,
    pub time_signature: TimeSignature,
    pub num_measures: usize,
    pub voices: Vec<TokenSequence>,
    /// Fermata positions in quarter notes from the start.
    pub fermatas: BTreeSet<u32>,
    pub chords: Vec<ChordSymbol>,
    pub tempo_bpm: f64,
}

impl Sheet {
    /// An all-rest sheet of the given shape.
    pub fn silent(mode: Mode, time_signature: TimeSignature, num_measures: usize) -> Sheet {
        let slots = time_signature.slots_per_measure().unwrap_or(0) as usize * num_measures;
        Sheet {
            mode,
            time_signature,
            num_measures,
            voices: vec![vec![Token::Rest; slots]; mode.voice_count()],
            fermatas: BTreeSet::new(),
            chords: Vec::new(),
            tempo_bpm: 120.0,
        }
    }

    pub fn slots_per_measure(&self) -> usize {
        self.time_signature.slots_per_measure().unwrap_or(0) as usize
    }

    /// Expected slot count of every voice.
    pub fn len_slots(&self) -> usize {
        self.num_measures * self.slots_per_measure()
    }

    pub fn len_quarters(&self) -> f64 {
        self.len_slots() as f64 / SLOTS_PER_QUARTER as f64
    }

    /// The chord in force at `slot`, if any.
    pub fn chord_at(&self, slot: u32) -> Option<&ChordSymbol> {
        self.chords.iter().take_while(|c| c.onset <= slot).last()
    }
}

/// A sixteenth-aligned interval `[start, end)` of slots over a set of voices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TimeRange {
    pub start: u32,
    pub end: u32,
    pub voices: BTreeSet<usize>,
}

impl TimeRange {
    pub fn new(start: u32, end: u32, voices: impl IntoIterator<Item = usize>) -> TimeRange {
        TimeRange {
            start,
            end,
            voices: voices.into_iter().collect(),
        }
    }

    /// Builds a range from quarter-note bounds, which must be sixteenth aligned
    /// and non-empty.
    pub fn from_quarters(
        start: f64,
        end: f64,
        voices: impl IntoIterator<Item = usize>,
    ) -> Result<TimeRange, ScoreError> {
        let start = quarters_to_slots(start, "range start")?;
        let end = quarters_to_slots(end, "range end")?;
        if end <= start {
            return Err(ScoreError::Range(format!(
                "end {end} must be after start {start} (slots)"
            )));
        }
        Ok(TimeRange::new(start, end, voices))
    }

    pub fn len(&self) -> usize {
        (self.end - self.start) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains_slot(&self, slot: u32) -> bool {
        (self.start..self.end).contains(&slot)
    }

    /// Checks the range against a sheet's extent and voice count.
    pub fn check(&self, sheet: &Sheet) -> Result<(), ScoreError> {
        if self.is_empty() {
            return Err(ScoreError::Range("empty range".into()));
        }
        if self.end as usize > sheet.len_slots() {
            return Err(ScoreError::Range(format!(
                "end {} quarters past sheet length {} quarters",
                self.end as f64 / 4.0,
                sheet.len_quarters()
            )));
        }
        if let Some(v) = self.voices.iter().find(|v| **v >= sheet.voices.len()) {
            return Err(ScoreError::Range(format!("no voice {v}")));
        }
        Ok(())
    }
}

/// Converts a quarter-note position to slots, rejecting off-grid values.
pub fn quarters_to_slots(q: f64, what: &'static str) -> Result<u32, ScoreError> {
    let s = q * SLOTS_PER_QUARTER as f64;
    if !s.is_finite() || s < 0.0 || s.fract() != 0.0 || s > u32::MAX as f64 {
        return Err(ScoreError::Quantization { what, value: q });
    }
    Ok(s as u32)
}

/// A note or rest in quarter-note units. `pitch` is `None` for a rest.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoteSpan {
    pub onset: f64,
    pub duration: f64,
    pub pitch: Option<u8>,
}

impl NoteSpan {
    pub fn note(onset: f64, duration: f64, pitch: u8) -> NoteSpan {
        NoteSpan {
            onset,
            duration,
            pitch: Some(pitch),
        }
    }

    pub fn rest(onset: f64, duration: f64) -> NoteSpan {
        NoteSpan {
            onset,
            duration,
            pitch: None,
        }
    }
}

/// Lays notes out on the sixteenth grid. Gaps between notes become rests.
pub fn tokenize_voice(notes: &[NoteSpan], length_quarters: f64) -> Result<TokenSequence, ScoreError> {
    let len = quarters_to_slots(length_quarters, "voice length")? as usize;
    let mut out = vec![Token::Rest; len];
    let mut cursor = 0usize;
    for n in notes {
        let onset = quarters_to_slots(n.onset, "onset")? as usize;
        let dur = quarters_to_slots(n.duration, "duration")? as usize;
        if dur == 0 {
            return Err(ScoreError::Quantization {
                what: "duration",
                value: n.duration,
            });
        }
        if onset < cursor {
            return Err(ScoreError::Overlap { onset: n.onset });
        }
        if onset + dur > len {
            return Err(ScoreError::PastEnd {
                onset: n.onset,
                length: length_quarters,
            });
        }
        if let Some(p) = n.pitch {
            if p > 127 {
                return Err(ScoreError::PitchRange(p as i32));
            }
            out[onset] = Token::On(p);
            out[onset + 1..onset + dur].fill(Token::Hold);
        }
        cursor = onset + dur;
    }
    Ok(out)
}

/// Inverse of [`tokenize_voice`]. Rest runs are split at barlines.
pub fn detokenize_voice(
    tokens: &[Token],
    slots_per_measure: usize,
) -> Result<Vec<NoteSpan>, ScoreError> {
    check_token_grammar(tokens)?;
    let q = |s: usize| s as f64 / SLOTS_PER_QUARTER as f64;
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        match tokens[i] {
            Token::On(p) => {
                let mut j = i + 1;
                while j < tokens.len() && tokens[j] == Token::Hold {
                    j += 1;
                }
                out.push(NoteSpan::note(q(i), q(j - i), p));
                i = j;
            }
            Token::Rest => {
                let bar_end = if slots_per_measure == 0 {
                    tokens.len()
                } else {
                    (i / slots_per_measure + 1) * slots_per_measure
                };
                let mut j = i + 1;
                while j < tokens.len() && j < bar_end && tokens[j] == Token::Rest {
                    j += 1;
                }
                out.push(NoteSpan::rest(q(i), q(j - i)));
                i = j;
            }
            Token::Hold => unreachable!("grammar checked above"),
        }
    }
    Ok(out)
}

fn check_token_grammar(tokens: &[Token]) -> Result<(), ScoreError> {
    let mut prev: Option<Token> = None;
    for (slot, t) in tokens.iter().enumerate() {
        if *t == Token::Hold {
            match prev {
                None => {
                    return Err(ScoreError::MalformedSequence {
                        slot,
                        reason: "voice starts with HOLD",
                    })
                }
                Some(Token::Rest) => {
                    return Err(ScoreError::MalformedSequence {
                        slot,
                        reason: "HOLD follows REST",
                    })
                }
                _ => {}
            }
        }
        prev = Some(*t);
    }
    Ok(())
}

/// The pitch sounding at `slot`: the `On` at the slot or the `On` its HOLD run
/// descends from. `None` for rests and for orphaned HOLDs.
pub fn governing_pitch(tokens: &[Token], slot: usize) -> Option<u8> {
    tokens[..=slot].iter().rev().find_map(|t| match t {
        Token::On(p) => Some(Some(*p)),
        Token::Rest => Some(None),
        Token::Hold => None,
    })?
}

/// Replaces the slots of `range` in each listed voice.
///
/// Boundary repair keeps the result grammatical: a HOLD run right after the
/// range that would follow a REST becomes REST, and a leading HOLD run in the
/// replacement that would follow a REST (or the sheet start) becomes REST.
/// A HOLD run after the range that follows a sounding note simply continues
/// that note.
pub fn splice_range(
    sheet: &Sheet,
    range: &TimeRange,
    replacement: &BTreeMap<usize, TokenSequence>,
) -> Result<Sheet, ScoreError> {
    range.check(sheet)?;
    if let Some(v) = replacement.keys().find(|v| !range.voices.contains(v)) {
        return Err(ScoreError::Splice(format!(
            "replacement for voice {v} which is not in the range"
        )));
    }
    let mut out = sheet.clone();
    let (start, end) = (range.start as usize, range.end as usize);
    for &v in &range.voices {
        let rep = replacement
            .get(&v)
            .ok_or_else(|| ScoreError::Splice(format!("missing replacement for voice {v}")))?;
        if rep.len() != range.len() {
            return Err(ScoreError::Splice(format!(
                "voice {v}: replacement has {} slots, range has {}",
                rep.len(),
                range.len()
            )));
        }
        let voice = &mut out.voices[v];
        if voice.len() < end {
            return Err(ScoreError::Splice(format!("voice {v} shorter than range")));
        }
        voice[start..end].copy_from_slice(rep);

        let mut prev = if start == 0 { None } else { Some(voice[start - 1]) };
        for t in &mut voice[start..end] {
            if *t == Token::Hold && matches!(prev, None | Some(Token::Rest)) {
                *t = Token::Rest;
            }
            prev = Some(*t);
        }
        if voice[end - 1] == Token::Rest {
            for t in voice[end..].iter_mut().take_while(|t| t.is_hold()) {
                *t = Token::Rest;
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rule {
    TimeSignature,
    NoMeasures,
    VoiceCount,
    VoiceLength,
    LeadingHold,
    HoldAfterRest,
    PitchRange,
    FermataOutOfRange,
    ChordsOutsideLeadsheet,
    ChordOrder,
    ChordOutOfRange,
    ChordRoot,
    FirstChordOnset,
    Tempo,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub voice: Option<usize>,
    pub slot: Option<usize>,
    pub rule: Rule,
}

impl Violation {
    fn sheet(rule: Rule) -> Violation {
        Violation {
            voice: None,
            slot: None,
            rule,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.rule)?;
        if let Some(v) = self.voice {
            write!(f, " voice {v}")?;
        }
        if let Some(s) = self.slot {
            write!(f, " slot {s}")?;
        }
        Ok(())
    }
}

/// Lists every broken invariant. An empty list means the sheet is well formed.
pub fn validate_sheet(sheet: &Sheet) -> Vec<Violation> {
    let mut out = Vec::new();
    let Some(spm) = sheet.time_signature.slots_per_measure() else {
        out.push(Violation::sheet(Rule::TimeSignature));
        return out;
    };
    if sheet.num_measures == 0 {
        out.push(Violation::sheet(Rule::NoMeasures));
    }
    if !(sheet.tempo_bpm.is_finite() && sheet.tempo_bpm > 0.0) {
        out.push(Violation::sheet(Rule::Tempo));
    }
    if sheet.voices.len() != sheet.mode.voice_count() {
        out.push(Violation::sheet(Rule::VoiceCount));
    }
    let expected = sheet.num_measures * spm as usize;
    for (v, voice) in sheet.voices.iter().enumerate() {
        if voice.len() != expected {
            out.push(Violation {
                voice: Some(v),
                slot: None,
                rule: Rule::VoiceLength,
            });
        }
        let mut prev: Option<Token> = None;
        for (slot, t) in voice.iter().enumerate() {
            let rule = match (prev, t) {
                (None, Token::Hold) => Some(Rule::LeadingHold),
                (Some(Token::Rest), Token::Hold) => Some(Rule::HoldAfterRest),
                (_, Token::On(p)) if *p > 127 => Some(Rule::PitchRange),
                _ => None,
            };
            if let Some(rule) = rule {
                out.push(Violation {
                    voice: Some(v),
                    slot: Some(slot),
                    rule,
                });
            }
            prev = Some(*t);
        }
    }
    for &f in &sheet.fermatas {
        if (f * SLOTS_PER_QUARTER) as usize >= expected {
            out.push(Violation {
                voice: None,
                slot: Some((f * SLOTS_PER_QUARTER) as usize),
                rule: Rule::FermataOutOfRange,
            });
        }
    }
    if !sheet.chords.is_empty() && sheet.mode != Mode::Leadsheet {
        out.push(Violation::sheet(Rule::ChordsOutsideLeadsheet));
    }
    if sheet.mode == Mode::Leadsheet {
        if let Some(first) = sheet.chords.first() {
            if first.onset != 0 {
                out.push(Violation {
                    voice: None,
                    slot: Some(first.onset as usize),
                    rule: Rule::FirstChordOnset,
                });
            }
        }
    }
    for (i, c) in sheet.chords.iter().enumerate() {
        if c.root_pc > 11 {
            out.push(Violation {
                voice: None,
                slot: Some(c.onset as usize),
                rule: Rule::ChordRoot,
            });
        }
        if c.onset as usize >= expected {
            out.push(Violation {
                voice: None,
                slot: Some(c.onset as usize),
                rule: Rule::ChordOutOfRange,
            });
        }
        if i > 0 && sheet.chords[i - 1].onset >= c.onset {
            out.push(Violation {
                voice: None,
                slot: Some(c.onset as usize),
                rule: Rule::ChordOrder,
            });
        }
    }
    out
}
