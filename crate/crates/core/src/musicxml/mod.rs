//! MusicXML (score-partwise) subset used as the protocol payload.
//!
//! Parsing accepts any positive `divisions`, merges ties and pads short
//! measures with rests. Serialization is canonical: `divisions = 4`, one part
//! per voice, notes split at barlines, fermatas and chord onsets with ties.

mod parse;
mod write;

pub use parse::{parse_musicxml, parse_musicxml_with_warnings};
pub use write::serialize_musicxml;

use thiserror::Error;

use crate::score::Violation;

/// Content type used on the wire.
pub const MUSICXML_MIME: &str = "application/vnd.recordare.musicxml+xml";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MusicXmlError {
    #[error("malformed xml: {0}")]
    Xml(String),
    #[error("unsupported musicxml feature <{element}>: {detail}")]
    Unsupported {
        element: String,
        detail: String,
    },
    #[error("part {part} measure {measure}: {detail} is not on the sixteenth grid")]
    Quantization {
        part: usize,
        measure: usize,
        detail: String,
    },
    #[error("invalid score structure: {0}")]
    Structure(String),
    #[error("sheet violates invariants: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", "))]
    Contract(Vec<Violation>),
}

impl MusicXmlError {
    pub(crate) fn unsupported(element: &str, detail: impl Into<String>) -> Self {
        MusicXmlError::Unsupported {
            element: element.to_string(),
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseWarning(pub String);

impl std::fmt::Display for ParseWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}
