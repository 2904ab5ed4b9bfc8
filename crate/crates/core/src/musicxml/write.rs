use std::fmt::Write;

use super::MusicXmlError;
use crate::score::{
    validate_sheet, ChordKind, ChordSymbol, Pitch, Sheet, Token, VoiceRole, SLOTS_PER_QUARTER,
};

/// Note values available on the sixteenth grid, longest first:
/// (slots, type name, dotted).
const NOTE_VALUES: [(u32, &str, bool); 10] = [
    (32, "breve", false),
    (24, "whole", true),
    (16, "whole", false),
    (12, "half", true),
    (8, "half", false),
    (6, "quarter", true),
    (4, "quarter", false),
    (3, "eighth", true),
    (2, "eighth", false),
    (1, "16th", false),
];

/// Serializes a valid sheet as canonical score-partwise with `divisions = 4`.
pub fn serialize_musicxml(sheet: &Sheet) -> Result<Vec<u8>, MusicXmlError> {
    let violations = validate_sheet(sheet);
    if !violations.is_empty() {
        return Err(MusicXmlError::Contract(violations));
    }
    let roles = sheet.mode.roles();
    let spm = sheet.slots_per_measure() as u32;

    let mut out = String::with_capacity(256 + sheet.len_slots() * 40 * sheet.voices.len());
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    out.push_str(
        "<!DOCTYPE score-partwise PUBLIC \"-//Recordare//DTD MusicXML 3.1 Partwise//EN\" \
         \"http://www.musicxml.org/dtds/partwise.dtd\">\n",
    );
    out.push_str("<score-partwise version=\"3.1\">\n  <part-list>\n");
    for (v, role) in roles.iter().enumerate() {
        let _ = writeln!(
            out,
            "    <score-part id=\"P{}\"><part-name>{}</part-name></score-part>",
            v + 1,
            part_name(*role)
        );
    }
    out.push_str("  </part-list>\n");

    for (v, voice) in sheet.voices.iter().enumerate() {
        let _ = writeln!(out, "  <part id=\"P{}\">", v + 1);
        for m in 0..sheet.num_measures as u32 {
            let _ = writeln!(out, "    <measure number=\"{}\">", m + 1);
            if m == 0 {
                write_attributes(&mut out, sheet, roles[v]);
                if v == 0 {
                    write_tempo(&mut out, sheet.tempo_bpm);
                }
            }
            let (start, end) = (m * spm, (m + 1) * spm);
            let splits = split_points(sheet, start, end);
            let chords = if v == 0 { sheet.chords.as_slice() } else { &[] };
            write_measure(&mut out, voice, start, end, &splits, &sheet.fermatas, chords);
            out.push_str("    </measure>\n");
        }
        out.push_str("  </part>\n");
    }
    out.push_str("</score-partwise>\n");
    Ok(out.into_bytes())
}

fn part_name(role: VoiceRole) -> &'static str {
    match role {
        VoiceRole::Soprano => "Soprano",
        VoiceRole::Alto => "Alto",
        VoiceRole::Tenor => "Tenor",
        VoiceRole::Bass => "Bass",
        VoiceRole::Melody => "Melody",
    }
}

fn write_attributes(out: &mut String, sheet: &Sheet, role: VoiceRole) {
    let clef = match role {
        VoiceRole::Bass => "<sign>F</sign><line>4</line>",
        VoiceRole::Tenor => "<sign>G</sign><line>2</line><clef-octave-change>-1</clef-octave-change>",
        _ => "<sign>G</sign><line>2</line>",
    };
    let _ = writeln!(
        out,
        "      <attributes><divisions>4</divisions><key><fifths>0</fifths></key>\
         <time><beats>{}</beats><beat-type>{}</beat-type></time><clef>{clef}</clef></attributes>",
        sheet.time_signature.beats, sheet.time_signature.beat_unit
    );
}

fn write_tempo(out: &mut String, bpm: f64) {
    let _ = writeln!(
        out,
        "      <direction placement=\"above\"><direction-type><metronome><beat-unit>quarter</beat-unit>\
         <per-minute>{bpm}</per-minute></metronome></direction-type><sound tempo=\"{bpm}\"/></direction>"
    );
}

/// Slots inside `[start, end)` where an element must begin: fermata beats and
/// chord onsets.
fn split_points(sheet: &Sheet, start: u32, end: u32) -> Vec<u32> {
    let mut pts: Vec<u32> = sheet
        .fermatas
        .iter()
        .map(|b| b * SLOTS_PER_QUARTER)
        .chain(sheet.chords.iter().map(|c| c.onset))
        .filter(|s| (start..end).contains(s))
        .collect();
    pts.sort_unstable();
    pts.dedup();
    pts
}

fn write_measure(
    out: &mut String,
    voice: &[Token],
    start: u32,
    end: u32,
    splits: &[u32],
    fermatas: &std::collections::BTreeSet<u32>,
    chords: &[ChordSymbol],
) {
    let mut s = start;
    while s < end {
        let is_rest = voice[s as usize] == Token::Rest;
        let mut e = s + 1;
        while e < end
            && !splits.contains(&e)
            && if is_rest {
                voice[e as usize] == Token::Rest
            } else {
                voice[e as usize] == Token::Hold
            }
        {
            e += 1;
        }
        if let Some(c) = chords.iter().find(|c| c.onset == s) {
            write_harmony(out, c);
        }
        let pitch = if is_rest {
            None
        } else {
            crate::score::governing_pitch(voice, s as usize)
        };
        let tied_in = voice[s as usize] == Token::Hold;
        let tied_out = !is_rest && voice.get(e as usize) == Some(&Token::Hold);
        let chunks = chunk(e - s);
        let mut at = s;
        for (i, &len) in chunks.iter().enumerate() {
            let first = i == 0;
            let last = i + 1 == chunks.len();
            let fermata = at % SLOTS_PER_QUARTER == 0 && fermatas.contains(&(at / SLOTS_PER_QUARTER));
            write_note(
                out,
                pitch,
                len,
                !first || tied_in,
                !last || tied_out,
                fermata,
            );
            at += len;
        }
        s = e;
    }
}

fn chunk(mut len: u32) -> Vec<u32> {
    let mut out = Vec::new();
    while len > 0 {
        let (v, _, _) = NOTE_VALUES.iter().find(|(v, _, _)| *v <= len).expect("1 always fits");
        out.push(*v);
        len -= v;
    }
    out
}

fn write_note(
    out: &mut String,
    pitch: Option<u8>,
    len: u32,
    tie_stop: bool,
    tie_start: bool,
    fermata: bool,
) {
    out.push_str("      <note>");
    match pitch {
        Some(p) => {
            let p = Pitch::from_midi(p).expect("validated pitch");
            let _ = write!(out, "<pitch><step>{}</step>", p.step().letter());
            if p.alter() != 0 {
                let _ = write!(out, "<alter>{}</alter>", p.alter());
            }
            let _ = write!(out, "<octave>{}</octave></pitch>", p.octave());
        }
        None => out.push_str("<rest/>"),
    }
    let _ = write!(out, "<duration>{len}</duration>");
    if tie_stop {
        out.push_str("<tie type=\"stop\"/>");
    }
    if tie_start {
        out.push_str("<tie type=\"start\"/>");
    }
    let (_, name, dotted) = NOTE_VALUES
        .iter()
        .find(|(v, _, _)| *v == len)
        .expect("chunked to a note value");
    let _ = write!(out, "<voice>1</voice><type>{name}</type>");
    if *dotted {
        out.push_str("<dot/>");
    }
    if tie_stop || tie_start || fermata {
        out.push_str("<notations>");
        if tie_stop {
            out.push_str("<tied type=\"stop\"/>");
        }
        if tie_start {
            out.push_str("<tied type=\"start\"/>");
        }
        if fermata {
            out.push_str("<fermata type=\"upright\"/>");
        }
        out.push_str("</notations>");
    }
    out.push_str("</note>\n");
}

fn write_harmony(out: &mut String, c: &ChordSymbol) {
    let root = Pitch::from_midi(c.root_pc).expect("pitch class");
    let _ = write!(
        out,
        "      <harmony><root><root-step>{}</root-step>",
        root.step().letter()
    );
    if root.alter() != 0 {
        let _ = write!(out, "<root-alter>{}</root-alter>", root.alter());
    }
    let kind = match c.kind {
        ChordKind::Maj => "major",
        ChordKind::Min => "minor",
        ChordKind::Dom7 => "dominant",
        ChordKind::Min7 => "minor-seventh",
        ChordKind::Maj7 => "major-seventh",
        ChordKind::Dim => "diminished",
    };
    let _ = writeln!(out, "</root><kind>{kind}</kind></harmony>");
}
