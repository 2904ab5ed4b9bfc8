use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::constraints::constraints_from_metadata;
use super::model::{context_before, ChordLabel};
use super::sampler::{sample_fill_with, Continuation, FillProblem, Rung};
use super::{EngineError, ModelSet};
use crate::score::{
    governing_pitch, splice_range, validate_sheet, ChordSymbol, Mode, ScoreError, Sheet, TimeRange,
    TimeSignature, Token,
};

/// An inpainted sheet and the relaxation rung each regenerated voice needed.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub sheet: Sheet,
    pub rungs: BTreeMap<usize, Rung>,
}

impl Outcome {
    /// The worst rung over all voices; `Full` when nothing was relaxed.
    pub fn max_rung(&self) -> Rung {
        self.rungs.values().copied().max().unwrap_or(Rung::Full)
    }
}

/// Regenerates `range` of `sheet`, one voice at a time in index order, drawing
/// all randomness from one generator seeded with `seed`.
pub fn inpaint_sheet(
    sheet: &Sheet,
    range: &TimeRange,
    models: &ModelSet,
    seed: u64,
) -> Result<Outcome, EngineError> {
    let violations = validate_sheet(sheet);
    if !violations.is_empty() {
        return Err(EngineError::InvalidSheet(violations));
    }
    range.check(sheet)?;
    let roles = sheet.mode.roles();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (start, end) = (range.start as usize, range.end as usize);
    let mut fills = BTreeMap::new();
    let mut rungs = BTreeMap::new();
    for &v in &range.voices {
        let role = roles[v];
        let model = models.get(role)?;
        let voice = &sheet.voices[v];
        let right: Vec<Token> = voice[end..voice.len().min(end + model.order())].to_vec();
        // A HOLD right after the gap continues whatever the fill leaves sounding;
        // require that to be the same pitch as before.
        let continuation = match right.first() {
            Some(Token::Hold) => Some(Continuation {
                entering: start.checked_sub(1).and_then(|s| governing_pitch(voice, s)),
                pitch: governing_pitch(voice, end),
            }),
            _ => None,
        };
        let problem = FillProblem {
            left: context_before(voice, start, model.order()),
            right,
            len: range.len(),
            constraints: constraints_from_metadata(sheet, range, role),
            continuation,
        };
        let fill = sample_fill_with(model, &problem, &mut rng)?;
        if fill.rung > Rung::Full {
            log::info!(
                "voice {v} ({role}) slots {start}..{end}: relaxed to rung {}",
                fill.rung.level()
            );
        }
        rungs.insert(v, fill.rung);
        fills.insert(v, fill.tokens);
    }
    let sheet = splice_range(sheet, range, &fills)?;
    Ok(Outcome { sheet, rungs })
}

/// Samples a fresh sheet. Chorale voices are independent runs from START; a
/// leadsheet first draws one chord per measure, then the melody under them.
pub fn generate_sheet(
    models: &ModelSet,
    mode: Mode,
    num_measures: usize,
    time_signature: TimeSignature,
    seed: u64,
) -> Result<Sheet, EngineError> {
    if num_measures == 0 {
        return Err(ScoreError::Range("at least one measure is required".into()).into());
    }
    let spm = time_signature.slots_per_measure().ok_or_else(|| {
        ScoreError::Range(format!(
            "time signature {}/{} is not on the sixteenth grid",
            time_signature.beats, time_signature.beat_unit
        ))
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sheet = Sheet::silent(mode, time_signature, num_measures);
    let len = sheet.len_slots();

    if mode == Mode::Leadsheet {
        let role = mode.roles()[0];
        let chord_model = models
            .get(role)?
            .chord_model()
            .ok_or(EngineError::MissingChordModel(role))?;
        let mut prev: Option<ChordLabel> = None;
        for m in 0..num_measures as u32 {
            let dist = chord_model.next_distribution(prev);
            let label = pick(&dist, &mut rng);
            sheet.chords.push(ChordSymbol {
                onset: m * spm,
                root_pc: label.root_pc,
                kind: label.kind,
            });
            prev = Some(label);
        }
    }

    let whole = TimeRange::new(0, len as u32, 0..sheet.voices.len());
    for (v, &role) in mode.roles().iter().enumerate() {
        let model = models.get(role)?;
        let problem = FillProblem {
            left: Vec::new(),
            right: Vec::new(),
            len,
            constraints: constraints_from_metadata(&sheet, &whole, role),
            continuation: None,
        };
        let fill = sample_fill_with(model, &problem, &mut rng)?;
        if fill.rung > Rung::Full {
            log::info!("generated voice {v} ({role}) needed rung {}", fill.rung.level());
        }
        sheet.voices[v] = fill.tokens;
    }
    debug_assert!(validate_sheet(&sheet).is_empty());
    Ok(sheet)
}

fn pick<R: Rng>(dist: &[(ChordLabel, f64)], rng: &mut R) -> ChordLabel {
    let mut u = rng.random::<f64>();
    for (label, p) in dist {
        if u < *p {
            return *label;
        }
        u -= p;
    }
    dist.last().expect("chord model has at least one chord").0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::model::{train, ChordModel};
    use crate::score::{ChordKind, VoiceRole};

    fn chorale_models() -> ModelSet {
        let corpus = vec![
            vec![Token::On(60), Token::Hold, Token::On(62), Token::Hold, Token::Hold, Token::On(64), Token::Rest, Token::On(60)],
            vec![Token::On(67), Token::Hold, Token::Hold, Token::Hold, Token::On(65), Token::Hold, Token::On(64), Token::Hold],
        ];
        [VoiceRole::Soprano, VoiceRole::Alto, VoiceRole::Tenor, VoiceRole::Bass]
            .into_iter()
            .map(|r| train(&corpus, 2, r).unwrap())
            .collect()
    }

    fn melody_models() -> ModelSet {
        let corpus: Vec<Vec<Token>> = vec![(0..64)
            .map(|i| match i % 4 {
                0 => Token::On(55 + ((i * 7) % 24) as u8),
                3 if i % 8 == 3 => Token::Rest,
                _ => Token::Hold,
            })
            .collect()];
        let mut m = train(&corpus, 2, VoiceRole::Melody).unwrap();
        let c = |r, k| ChordLabel { root_pc: r, kind: k };
        let chords = ChordModel::train(&[vec![
            c(0, ChordKind::Maj),
            c(7, ChordKind::Dom7),
            c(9, ChordKind::Min),
            c(5, ChordKind::Maj7),
        ]])
        .unwrap();
        m = m.with_chord_model(chords);
        std::iter::once(m).collect()
    }

    #[test]
    fn generated_shape_and_determinism() {
        let models = chorale_models();
        let s = generate_sheet(&models, Mode::Chorale, 1, TimeSignature::COMMON, 7).unwrap();
        assert_eq!(s.voices.len(), 4);
        assert!(s.voices.iter().all(|v| v.len() == 16));
        assert!(validate_sheet(&s).is_empty());
        assert_eq!(s, generate_sheet(&models, Mode::Chorale, 1, TimeSignature::COMMON, 7).unwrap());
    }

    #[test]
    fn missing_role_is_reported() {
        let models = melody_models();
        assert!(matches!(
            generate_sheet(&models, Mode::Chorale, 2, TimeSignature::COMMON, 1),
            Err(EngineError::MissingModel(VoiceRole::Soprano))
        ));
    }

    #[test]
    fn leadsheet_melody_uses_chord_tones() {
        let models = melody_models();
        for seed in 0..20 {
            let s = generate_sheet(&models, Mode::Leadsheet, 4, TimeSignature::COMMON, seed).unwrap();
            assert_eq!(s.chords.len(), 4);
            for (i, t) in s.voices[0].iter().enumerate() {
                if let Token::On(p) = t {
                    assert!(s.chord_at(i as u32).unwrap().contains_pitch_class(p % 12));
                }
            }
        }
    }

    #[test]
    fn rest_model_leaves_rests() {
        let models: ModelSet = [VoiceRole::Soprano, VoiceRole::Alto, VoiceRole::Tenor, VoiceRole::Bass]
            .into_iter()
            .map(|r| train(&[vec![Token::Rest; 8]], 2, r).unwrap())
            .collect();
        let sheet = Sheet::silent(Mode::Chorale, TimeSignature::COMMON, 2);
        let range = TimeRange::new(5, 20, 0..4);
        let out = inpaint_sheet(&sheet, &range, &models, 3).unwrap();
        assert_eq!(out.sheet, sheet);
        assert_eq!(out.max_rung(), Rung::Full);
    }

    #[test]
    fn outside_range_untouched_and_seeded() {
        let models = chorale_models();
        let sheet = generate_sheet(&models, Mode::Chorale, 4, TimeSignature::COMMON, 11).unwrap();
        for seed in 0..30 {
            let range = TimeRange::new(seed as u32 % 20 + 3, seed as u32 % 20 + 17, [0, 2, 3]);
            let a = inpaint_sheet(&sheet, &range, &models, seed).unwrap();
            assert_eq!(a, inpaint_sheet(&sheet, &range, &models, seed).unwrap());
            assert!(validate_sheet(&a.sheet).is_empty());
            for (v, voice) in a.sheet.voices.iter().enumerate() {
                for (i, t) in voice.iter().enumerate() {
                    if !range.voices.contains(&v) || !range.contains_slot(i as u32) {
                        assert_eq!(*t, sheet.voices[v][i]);
                        assert_eq!(governing_pitch(voice, i), governing_pitch(&sheet.voices[v], i));
                    }
                }
            }
        }
    }
}
