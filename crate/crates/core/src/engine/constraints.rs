use super::sampler::{Allowed, UnaryConstraint};
use crate::score::{Sheet, TimeRange, VoiceRole, SLOTS_PER_QUARTER};

/// Unary constraints implied by the sheet's fermatas and chords over `range`.
///
/// A fermata on beat `b` forces the three sixteenths after the beat to HOLD,
/// so the note struck on the beat sustains through it. A leadsheet melody is
/// restricted at every slot to HOLD, REST and tones of the governing chord.
/// Slots are gap-relative; a slot may carry several constraints.
pub fn constraints_from_metadata(
    sheet: &Sheet,
    range: &TimeRange,
    role: VoiceRole,
) -> Vec<UnaryConstraint> {
    let mut out = Vec::new();
    for &beat in &sheet.fermatas {
        let onset = beat * SLOTS_PER_QUARTER;
        for s in onset + 1..onset + SLOTS_PER_QUARTER {
            if range.contains_slot(s) {
                out.push(UnaryConstraint {
                    slot: (s - range.start) as usize,
                    allowed: Allowed::HoldOnly,
                });
            }
        }
    }
    if role == VoiceRole::Melody {
        for s in range.start..range.end {
            if let Some(chord) = sheet.chord_at(s) {
                out.push(UnaryConstraint {
                    slot: (s - range.start) as usize,
                    allowed: Allowed::ChordTones(chord.pitch_class_mask()),
                });
            }
        }
    }
    out.sort_by_key(|c| c.slot);
    out
}
