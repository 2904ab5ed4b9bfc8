//! Human-readable JSON persistence for trained models.
//!
//! Keys are sorted and the output is pretty-printed, so equal models always
//! produce byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{ChordLabel, ChordModel, EngineError, MarkovModel, ModelSet, Symbol};
use crate::score::{Token, VoiceRole};

pub const MODEL_FILE_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed model file: {0}")]
    Json(String),
    #[error("unsupported model file version {0} (expected {MODEL_FILE_VERSION})")]
    Version(u64),
    #[error("field `{field}`: {detail}")]
    Field { field: &'static str, detail: String },
    #[error(transparent)]
    Model(#[from] EngineError),
}

fn field(field: &'static str, detail: impl Into<String>) -> ModelFileError {
    ModelFileError::Field {
        field,
        detail: detail.into(),
    }
}

type CountTable = BTreeMap<String, BTreeMap<String, u64>>;

// fields in alphabetical order so the document's keys are sorted throughout
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Repr {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    chord_model: Option<CountTable>,
    counts: CountTable,
    order_k: usize,
    version: u64,
    vocab: Vec<String>,
    voice_role: String,
}

const STATE_SEP: &str = "|";
const START: &str = "START";

/// Renders a model as its file contents.
pub fn model_to_string(model: &MarkovModel) -> String {
    let counts = model
        .counts()
        .iter()
        .map(|(ctx, next)| {
            let key = ctx.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(STATE_SEP);
            (key, next.iter().map(|(t, c)| (t.to_string(), *c)).collect())
        })
        .collect();
    let chord_model = model.chord_model().map(|cm| {
        cm.counts
            .iter()
            .map(|(prev, next)| {
                let key = prev.map_or_else(|| START.to_string(), |c| c.to_string());
                (key, next.iter().map(|(c, n)| (c.to_string(), *n)).collect())
            })
            .collect()
    });
    let repr = Repr {
        chord_model,
        counts,
        order_k: model.order(),
        version: MODEL_FILE_VERSION,
        vocab: model.vocab().iter().map(|t| t.to_string()).collect(),
        voice_role: model.role().to_string(),
    };
    let mut s = serde_json::to_string_pretty(&repr).expect("string-keyed maps always serialize");
    s.push('\n');
    s
}

/// Parses file contents back into a model.
pub fn model_from_str(text: &str) -> Result<MarkovModel, ModelFileError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| ModelFileError::Json(e.to_string()))?;
    match value.get("version") {
        None => return Err(field("version", "missing")),
        Some(v) => match v.as_u64() {
            Some(MODEL_FILE_VERSION) => {}
            Some(other) => return Err(ModelFileError::Version(other)),
            None => return Err(field("version", format!("expected an integer, got {v}"))),
        },
    }
    let repr: Repr = serde_json::from_value(value).map_err(|e| ModelFileError::Json(e.to_string()))?;

    let role: VoiceRole = repr.voice_role.parse().map_err(|e: String| field("voice_role", e))?;
    let vocab = repr
        .vocab
        .iter()
        .filter(|s| s.as_str() != START)
        .map(|s| s.parse::<Token>().map_err(|e| field("vocab", e)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut counts = BTreeMap::new();
    for (state, next) in &repr.counts {
        let ctx = state
            .split(STATE_SEP)
            .map(|s| s.parse::<Symbol>().map_err(|e| field("counts", format!("state {state:?}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let next = next
            .iter()
            .map(|(t, c)| {
                let t = t
                    .parse::<Token>()
                    .map_err(|e| field("counts", format!("state {state:?}: {e}")))?;
                Ok((t, *c))
            })
            .collect::<Result<BTreeMap<_, _>, ModelFileError>>()?;
        counts.insert(ctx, next);
    }
    let chord_model = repr
        .chord_model
        .as_ref()
        .map(|table| -> Result<ChordModel, ModelFileError> {
            let mut counts = BTreeMap::new();
            for (prev, next) in table {
                let prev = match prev.as_str() {
                    START => None,
                    p => Some(p.parse::<ChordLabel>().map_err(|e| field("chord_model", e))?),
                };
                let next = next
                    .iter()
                    .map(|(c, n)| {
                        if *n == 0 {
                            return Err(field("chord_model", format!("zero count for {c}")));
                        }
                        Ok((c.parse::<ChordLabel>().map_err(|e| field("chord_model", e))?, *n))
                    })
                    .collect::<Result<BTreeMap<_, _>, _>>()?;
                counts.insert(prev, next);
            }
            if counts.is_empty() {
                return Err(field("chord_model", "empty table"));
            }
            Ok(ChordModel { counts })
        })
        .transpose()?;
    if repr.order_k == 0 {
        return Err(field("order_k", "must be at least 1"));
    }
    Ok(MarkovModel::from_parts(repr.order_k, role, vocab, counts, chord_model)?)
}

pub fn save_model(model: &MarkovModel, path: &Path) -> Result<(), ModelFileError> {
    fs::write(path, model_to_string(model)).map_err(|source| ModelFileError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<MarkovModel, ModelFileError> {
    let text = fs::read_to_string(path).map_err(|source| ModelFileError::Io {
        path: path.to_owned(),
        source,
    })?;
    model_from_str(&text)
}

/// File name a model is saved under inside a model directory.
pub fn model_file_name(role: VoiceRole) -> String {
    format!("{role}.json")
}

/// Loads model files, expanding directories to the `*.json` files they
/// contain (in name order). Later files replace earlier ones for the same role.
pub fn load_model_set<P: AsRef<Path>>(paths: &[P]) -> Result<ModelSet, ModelFileError> {
    let mut set = ModelSet::new();
    for p in paths {
        let p = p.as_ref();
        if p.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|source| ModelFileError::Io {
                    path: p.to_owned(),
                    source,
                })?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "json"))
                .collect();
            files.sort();
            for f in files {
                set.insert(load_model(&f)?);
            }
        } else {
            set.insert(load_model(p)?);
        }
    }
    Ok(set)
}
