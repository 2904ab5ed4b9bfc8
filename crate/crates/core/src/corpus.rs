//! Corpus ingestion: a directory of MusicXML files to per-role token sequences.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::engine::{train, ChordLabel, ChordModel, EngineError, ModelSet};
use crate::musicxml::parse_musicxml;
use crate::score::{Mode, TokenSequence, VoiceRole};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("no parseable MusicXML files in {path} ({skipped} skipped)")]
    Empty { path: PathBuf, skipped: usize },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IngestSummary {
    pub files_ok: usize,
    pub files_skipped: usize,
    pub total_slots: usize,
    /// Skipped files with the reason, in name order.
    pub skipped: Vec<(PathBuf, String)>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub sequences: BTreeMap<VoiceRole, Vec<TokenSequence>>,
    /// One chord label per measure for every leadsheet.
    pub progressions: Vec<Vec<ChordLabel>>,
    pub summary: IngestSummary,
}

fn is_musicxml(p: &Path) -> bool {
    p.extension()
        .and_then(|x| x.to_str())
        .is_some_and(|x| matches!(x.to_ascii_lowercase().as_str(), "xml" | "musicxml"))
}

/// Parses every `.xml` / `.musicxml` file directly inside `dir`, in file-name
/// order. Files that fail to parse are skipped and logged.
pub fn ingest_corpus(dir: &Path) -> Result<Corpus, CorpusError> {
    let io = |source| CorpusError::Io {
        path: dir.to_owned(),
        source,
    };
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io)?
        .collect::<Result<Vec<_>, _>>()
        .map_err(io)?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.is_file() && is_musicxml(p))
        .collect();
    files.sort();

    let mut corpus = Corpus::default();
    for path in files {
        let sheet = fs::read(&path)
            .map_err(|e| e.to_string())
            .and_then(|bytes| parse_musicxml(&bytes).map_err(|e| e.to_string()));
        let sheet = match sheet {
            Ok(s) => s,
            Err(reason) => {
                log::warn!("skipping {}: {reason}", path.display());
                corpus.summary.files_skipped += 1;
                corpus.summary.skipped.push((path, reason));
                continue;
            }
        };
        log::debug!("ingested {} ({} measures)", path.display(), sheet.num_measures);
        corpus.summary.files_ok += 1;
        corpus.summary.total_slots += sheet.voices.iter().map(Vec::len).sum::<usize>();
        if sheet.mode == Mode::Leadsheet && !sheet.chords.is_empty() {
            let spm = sheet.slots_per_measure() as u32;
            let prog = (0..sheet.num_measures as u32)
                .filter_map(|m| sheet.chord_at(m * spm))
                .map(|c| ChordLabel {
                    root_pc: c.root_pc,
                    kind: c.kind,
                })
                .collect();
            corpus.progressions.push(prog);
        }
        for (role, voice) in sheet.mode.roles().iter().zip(sheet.voices) {
            corpus.sequences.entry(*role).or_default().push(voice);
        }
    }
    if corpus.summary.files_ok == 0 {
        return Err(CorpusError::Empty {
            path: dir.to_owned(),
            skipped: corpus.summary.files_skipped,
        });
    }
    Ok(corpus)
}

/// Trains one model per voice role present in the corpus. The melody model
/// also gets a chord model when the corpus has chord progressions.
pub fn train_models(corpus: &Corpus, order: usize) -> Result<ModelSet, CorpusError> {
    let mut set = ModelSet::new();
    for (role, seqs) in &corpus.sequences {
        let mut model = train(seqs, order, *role)?;
        if *role == VoiceRole::Melody && !corpus.progressions.is_empty() {
            model = model.with_chord_model(ChordModel::train(&corpus.progressions)?);
        }
        set.insert(model);
    }
    Ok(set)
}
