//! Reference inpainting back-end: per-voice Markov models and exact
//! conditional sampling of gaps under metadata constraints.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::score::{Mode, ScoreError, Violation, VoiceRole};

mod constraints;
mod inpaint;
pub mod model;
pub mod sampler;

pub use constraints::constraints_from_metadata;
pub use inpaint::{generate_sheet, inpaint_sheet, Outcome};
pub use model::{context_before, train, ChordLabel, ChordModel, MarkovModel, Symbol};
pub use sampler::{
    backward_table, sample_fill, sample_fill_with, Allowed, BackwardTable, Continuation, Fill,
    FillProblem, Rung, UnaryConstraint,
};

/// Default model order over slot tokens.
pub const DEFAULT_ORDER: usize = 2;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("model order must be at least 1, got {0}")]
    Order(usize),
    #[error("inconsistent model: {0}")]
    Model(String),
    #[error("no model loaded for voice role {0}")]
    MissingModel(VoiceRole),
    #[error("model for voice role {0} carries no chord model")]
    MissingChordModel(VoiceRole),
    #[error("sheet violates {} rule(s), first: {}", .0.len(), .0.first().map(|v| v.to_string()).unwrap_or_default())]
    InvalidSheet(Vec<Violation>),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("state space of order {order} over {alphabet} symbols does not fit in 64 bits")]
    StateSpace { order: usize, alphabet: usize },
    #[error("no relaxation rung produced a feasible fill")]
    Infeasible,
}

/// Trained models keyed by the voice role they generate.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelSet {
    models: BTreeMap<VoiceRole, MarkovModel>,
}

impl ModelSet {
    pub fn new() -> ModelSet {
        ModelSet::default()
    }

    /// Adds a model under its own role, replacing any previous one.
    pub fn insert(&mut self, model: MarkovModel) {
        self.models.insert(model.role(), model);
    }

    pub fn get(&self, role: VoiceRole) -> Result<&MarkovModel, EngineError> {
        self.models.get(&role).ok_or(EngineError::MissingModel(role))
    }

    /// True when every role of `mode` has a model (and the melody model carries
    /// chords in leadsheet mode).
    pub fn supports(&self, mode: Mode) -> bool {
        mode.roles().iter().all(|r| match self.models.get(r) {
            Some(m) => mode != Mode::Leadsheet || m.chord_model().is_some(),
            None => false,
        })
    }

    pub fn roles(&self) -> impl Iterator<Item = VoiceRole> + '_ {
        self.models.keys().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

impl FromIterator<MarkovModel> for ModelSet {
    fn from_iter<I: IntoIterator<Item = MarkovModel>>(iter: I) -> Self {
        let mut set = ModelSet::new();
        for m in iter {
            set.insert(m);
        }
        set
    }
}
