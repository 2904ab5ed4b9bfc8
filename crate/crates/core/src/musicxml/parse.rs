use std::collections::BTreeSet;

use roxmltree::{Document, Node, ParsingOptions};

use super::{MusicXmlError, ParseWarning};
use crate::score::{
    ChordKind, ChordSymbol, Mode, Pitch, Sheet, Step, TimeSignature, Token, SLOTS_PER_QUARTER,
};

const DEFAULT_TEMPO: f64 = 120.0;

/// Parses a score-partwise document into a [`Sheet`], logging any warnings.
pub fn parse_musicxml(doc: &[u8]) -> Result<Sheet, MusicXmlError> {
    let (sheet, warnings) = parse_musicxml_with_warnings(doc)?;
    for w in warnings {
        log::warn!("musicxml: {w}");
    }
    Ok(sheet)
}

#[derive(Debug)]
struct NoteEvent {
    onset: u32,
    dur: u32,
    pitch: Option<u8>,
    tie_start: bool,
    tie_stop: bool,
}

#[derive(Debug, Default)]
struct MeasureData {
    notes: Vec<NoteEvent>,
    /// Furthest position reached, in slots relative to the measure start.
    len: u32,
    fermatas: Vec<u32>,
    harmonies: Vec<(u32, u8, ChordKind)>,
}

struct PartState {
    index: usize,
    divisions: u32,
    time: Option<TimeSignature>,
}

pub fn parse_musicxml_with_warnings(
    doc: &[u8],
) -> Result<(Sheet, Vec<ParseWarning>), MusicXmlError> {
    let text = std::str::from_utf8(doc).map_err(|e| MusicXmlError::Xml(e.to_string()))?;
    let opts = ParsingOptions {
        allow_dtd: true,
        ..Default::default()
    };
    let xml = Document::parse_with_options(text, opts).map_err(|e| MusicXmlError::Xml(e.to_string()))?;
    let root = xml.root_element();
    if !root.has_tag_name("score-partwise") {
        return Err(MusicXmlError::unsupported(
            root.tag_name().name(),
            "root element must be score-partwise",
        ));
    }

    let mut warnings = Vec::new();
    let parts: Vec<Node> = elements(root, "part").collect();
    let mode = match parts.len() {
        1 => Mode::Leadsheet,
        4 => Mode::Chorale,
        n => {
            return Err(MusicXmlError::unsupported(
                "part",
                format!("{n} parts; expected 1 (leadsheet) or 4 (chorale)"),
            ))
        }
    };

    let mut time: Option<TimeSignature> = None;
    let mut parsed = Vec::with_capacity(parts.len());
    for (index, part) in parts.iter().enumerate() {
        let mut state = PartState {
            index,
            divisions: 1,
            time,
        };
        let measures = elements(*part, "measure")
            .enumerate()
            .map(|(m, node)| parse_measure(node, m, &mut state, &mut warnings))
            .collect::<Result<Vec<_>, _>>()?;
        if index > 0 && state.time != time {
            return Err(MusicXmlError::unsupported(
                "time",
                "parts disagree on the time signature",
            ));
        }
        time = state.time;
        parsed.push(measures);
    }

    let time = time.unwrap_or_else(|| {
        warnings.push(ParseWarning("no time signature, assuming 4/4".into()));
        TimeSignature::COMMON
    });
    let spm = time.slots_per_measure().ok_or_else(|| {
        MusicXmlError::unsupported(
            "time",
            format!("{}/{} is not on the sixteenth grid", time.beats, time.beat_unit),
        )
    })?;
    let num_measures = parsed[0].len();
    if num_measures == 0 {
        return Err(MusicXmlError::Structure("no measures".into()));
    }
    if parsed.iter().any(|p| p.len() != num_measures) {
        return Err(MusicXmlError::Structure(
            "parts have different measure counts".into(),
        ));
    }

    let mut voices = Vec::with_capacity(parsed.len());
    let mut fermatas = BTreeSet::new();
    let mut chords: Vec<ChordSymbol> = Vec::new();
    for (p, measures) in parsed.iter().enumerate() {
        let mut tokens = vec![Token::Rest; num_measures * spm as usize];
        let mut last: Option<(u32, u8, bool)> = None; // (end, pitch, tie_start)
        for (m, data) in measures.iter().enumerate() {
            if data.len > spm {
                return Err(MusicXmlError::Structure(format!(
                    "part {p} measure {}: {} slots in a {spm}-slot measure",
                    m + 1,
                    data.len
                )));
            }
            // A short first measure is a pickup and is right-aligned; any other
            // short measure is padded at its end.
            let pad = if m == 0 { spm - data.len } else { 0 };
            let base = m as u32 * spm + pad;
            for n in &data.notes {
                let onset = base + n.onset;
                let (s, e) = (onset as usize, (onset + n.dur) as usize);
                match n.pitch {
                    Some(pitch) => {
                        let tied = n.tie_stop
                            && matches!(last, Some((end, lp, true)) if end == onset && lp == pitch);
                        tokens[s] = if tied { Token::Hold } else { Token::On(pitch) };
                        tokens[s + 1..e].fill(Token::Hold);
                        last = Some((onset + n.dur, pitch, n.tie_start));
                    }
                    None => last = None,
                }
            }
            for &f in &data.fermatas {
                let at = base + f;
                if at % SLOTS_PER_QUARTER != 0 {
                    warnings.push(ParseWarning(format!(
                        "part {p} measure {}: fermata off the beat, moved to the preceding beat",
                        m + 1
                    )));
                }
                fermatas.insert(at / SLOTS_PER_QUARTER);
            }
            if mode == Mode::Leadsheet {
                for &(at, root_pc, kind) in &data.harmonies {
                    let onset = base + at;
                    if onset >= num_measures as u32 * spm {
                        warnings.push(ParseWarning("harmony after the last note skipped".into()));
                        continue;
                    }
                    if let Some(prev) = chords.last_mut() {
                        if prev.onset >= onset {
                            warnings.push(ParseWarning(format!(
                                "measure {}: several harmonies at one onset, keeping the last",
                                m + 1
                            )));
                            *prev = ChordSymbol {
                                onset: prev.onset,
                                root_pc,
                                kind,
                            };
                            continue;
                        }
                    }
                    chords.push(ChordSymbol {
                        onset,
                        root_pc,
                        kind,
                    });
                }
            } else if !data.harmonies.is_empty() {
                warnings.push(ParseWarning(format!(
                    "measure {}: harmony ignored in chorale mode",
                    m + 1
                )));
            }
        }
        voices.push(tokens);
    }

    // Leadsheets need a chord from the first slot; a pickup without harmony
    // falls under the first chord.
    if let Some(first) = chords.first_mut() {
        if first.onset > 0 {
            warnings.push(ParseWarning(format!(
                "first harmony at slot {} extended back to the start",
                first.onset
            )));
            first.onset = 0;
        }
    }

    let tempo_bpm = root
        .descendants()
        .filter(|n| n.has_tag_name("sound"))
        .find_map(|n| n.attribute("tempo"))
        .and_then(|t| t.trim().parse::<f64>().ok())
        .filter(|t| t.is_finite() && *t > 0.0)
        .unwrap_or(DEFAULT_TEMPO);

    Ok((
        Sheet {
            mode,
            time_signature: time,
            num_measures,
            voices,
            fermatas,
            chords,
            tempo_bpm,
        },
        warnings,
    ))
}

fn elements<'a, 'input>(
    node: Node<'a, 'input>,
    name: &'static str,
) -> impl Iterator<Item = Node<'a, 'input>> {
    node.children()
        .filter(move |n| n.is_element() && n.has_tag_name(name))
}

fn child<'a, 'input>(node: Node<'a, 'input>, name: &'static str) -> Option<Node<'a, 'input>> {
    elements(node, name).next()
}

fn child_text<'a>(node: Node<'a, '_>, name: &'static str) -> Option<&'a str> {
    child(node, name).and_then(|n| n.text()).map(str::trim)
}

fn parse_int<T: std::str::FromStr>(text: Option<&str>, what: &str) -> Result<T, MusicXmlError> {
    text.and_then(|t| t.parse::<T>().ok())
        .ok_or_else(|| MusicXmlError::Structure(format!("missing or invalid <{what}>")))
}

fn parse_measure(
    measure: Node,
    m: usize,
    state: &mut PartState,
    warnings: &mut Vec<ParseWarning>,
) -> Result<MeasureData, MusicXmlError> {
    let mut data = MeasureData::default();
    let mut cursor: u32 = 0;
    let part = state.index;

    let to_slots = |divs: u32, value: i64, what: &str| -> Result<u32, MusicXmlError> {
        let scaled = value * SLOTS_PER_QUARTER as i64;
        if value < 0 || scaled % divs as i64 != 0 {
            return Err(MusicXmlError::Quantization {
                part,
                measure: m + 1,
                detail: format!("{what} {value}/{divs}"),
            });
        }
        Ok((scaled / divs as i64) as u32)
    };

    for el in measure.children().filter(|n| n.is_element()) {
        match el.tag_name().name() {
            "attributes" => {
                if let Some(d) = child_text(el, "divisions") {
                    let d: u32 = parse_int(Some(d), "divisions")?;
                    if d == 0 {
                        return Err(MusicXmlError::Structure("divisions must be positive".into()));
                    }
                    state.divisions = d;
                }
                if let Some(t) = child(el, "time") {
                    if child(t, "senza-misura").is_some() {
                        return Err(MusicXmlError::unsupported("senza-misura", "unmetered time"));
                    }
                    let beats = child_text(t, "beats").and_then(|b| b.parse::<u32>().ok());
                    let unit = child_text(t, "beat-type").and_then(|b| b.parse::<u32>().ok());
                    let (Some(beats), Some(beat_unit)) = (beats, unit) else {
                        return Err(MusicXmlError::unsupported(
                            "time",
                            "composite or missing beats/beat-type",
                        ));
                    };
                    let ts = TimeSignature { beats, beat_unit };
                    match state.time {
                        Some(prev) if prev != ts => {
                            return Err(MusicXmlError::unsupported(
                                "time",
                                format!("time signature change in measure {}", m + 1),
                            ))
                        }
                        _ => state.time = Some(ts),
                    }
                }
            }
            "note" => {
                for feature in ["grace", "cue", "chord", "time-modification", "unpitched"] {
                    if child(el, feature).is_some() {
                        return Err(MusicXmlError::unsupported(
                            feature,
                            format!("part {part} measure {}", m + 1),
                        ));
                    }
                }
                let dur: i64 = parse_int(child_text(el, "duration"), "duration")?;
                let dur = to_slots(state.divisions, dur, "duration")?;
                let pitch = match child(el, "pitch") {
                    Some(p) => Some(parse_pitch(p)?),
                    None if child(el, "rest").is_some() => None,
                    None => {
                        return Err(MusicXmlError::Structure(format!(
                            "part {part} measure {}: note without pitch or rest",
                            m + 1
                        )))
                    }
                };
                let ties = el
                    .children()
                    .filter(|n| n.has_tag_name("tie"))
                    .chain(
                        child(el, "notations")
                            .into_iter()
                            .flat_map(|n| n.children().filter(|c| c.has_tag_name("tied"))),
                    )
                    .filter_map(|n| n.attribute("type"))
                    .collect::<Vec<_>>();
                let has_fermata = child(el, "notations")
                    .is_some_and(|n| child(n, "fermata").is_some());
                if has_fermata {
                    data.fermatas.push(cursor);
                }
                if dur > 0 {
                    data.notes.push(NoteEvent {
                        onset: cursor,
                        dur,
                        pitch,
                        tie_start: ties.contains(&"start"),
                        tie_stop: ties.contains(&"stop"),
                    });
                }
                cursor += dur;
            }
            "forward" => {
                let dur: i64 = parse_int(child_text(el, "duration"), "duration")?;
                cursor += to_slots(state.divisions, dur, "forward")?;
            }
            "backup" => {
                return Err(MusicXmlError::unsupported(
                    "backup",
                    format!("multiple voices in part {part} measure {}", m + 1),
                ))
            }
            "harmony" => {
                let offset = match child_text(el, "offset") {
                    Some(o) => {
                        let o: i64 = parse_int(Some(o), "offset")?;
                        if o < 0 {
                            return Err(MusicXmlError::unsupported("offset", "negative harmony offset"));
                        }
                        to_slots(state.divisions, o, "harmony offset")?
                    }
                    None => 0,
                };
                if let Some((root, kind)) = parse_harmony(el, warnings)? {
                    data.harmonies.push((cursor + offset, root, kind));
                }
            }
            _ => {}
        }
        data.len = data.len.max(cursor);
    }
    Ok(data)
}

fn parse_pitch(p: Node) -> Result<u8, MusicXmlError> {
    let step = child_text(p, "step")
        .and_then(Step::from_letter)
        .ok_or_else(|| MusicXmlError::Structure("missing or invalid <step>".into()))?;
    let alter = match child_text(p, "alter") {
        None => 0,
        Some(a) => {
            let v: f64 = a
                .parse()
                .map_err(|_| MusicXmlError::Structure(format!("invalid <alter> {a}")))?;
            if v.fract() != 0.0 {
                return Err(MusicXmlError::unsupported("alter", format!("microtonal alter {a}")));
            }
            v as i8
        }
    };
    let octave: i8 = parse_int(child_text(p, "octave"), "octave")?;
    Pitch::from_spelling(step, alter, octave)
        .map(|p| p.midi())
        .map_err(|e| MusicXmlError::Structure(e.to_string()))
}

fn parse_harmony(
    el: Node,
    warnings: &mut Vec<ParseWarning>,
) -> Result<Option<(u8, ChordKind)>, MusicXmlError> {
    let root = child(el, "root")
        .ok_or_else(|| MusicXmlError::unsupported("harmony", "harmony without <root>"))?;
    let step = child_text(root, "root-step")
        .and_then(Step::from_letter)
        .ok_or_else(|| MusicXmlError::Structure("missing <root-step>".into()))?;
    let alter = child_text(root, "root-alter")
        .and_then(|a| a.parse::<f64>().ok())
        .unwrap_or(0.0) as i32;
    let root_pc = (step.semitone() + alter).rem_euclid(12) as u8;
    let kind_text = child_text(el, "kind").unwrap_or("major");
    let kind = match kind_text {
        "major" => ChordKind::Maj,
        "minor" => ChordKind::Min,
        "dominant" => ChordKind::Dom7,
        "minor-seventh" => ChordKind::Min7,
        "major-seventh" => ChordKind::Maj7,
        "diminished" => ChordKind::Dim,
        "none" => {
            warnings.push(ParseWarning("harmony kind \"none\" skipped".into()));
            return Ok(None);
        }
        other => {
            let mapped = nearest_kind(other);
            warnings.push(ParseWarning(format!(
                "harmony kind {other:?} mapped to {}",
                mapped.as_str()
            )));
            mapped
        }
    };
    Ok(Some((root_pc, kind)))
}

/// Closest supported kind by third and seventh quality.
fn nearest_kind(kind: &str) -> ChordKind {
    match kind {
        "diminished-seventh" => ChordKind::Dim,
        "half-diminished" | "minor-ninth" | "minor-11th" | "minor-13th" => ChordKind::Min7,
        "minor-sixth" | "minor-major" => ChordKind::Min,
        "major-ninth" | "major-11th" | "major-13th" => ChordKind::Maj7,
        "dominant-ninth" | "dominant-11th" | "dominant-13th" | "augmented-seventh" | "Italian"
        | "French" | "German" | "Tristan" => ChordKind::Dom7,
        _ => ChordKind::Maj,
    }
}
