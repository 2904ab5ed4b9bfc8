use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use super::EngineError;
use crate::score::{ChordKind, Token, TokenSequence, VoiceRole};

/// A context symbol: a token, or the padding before the first slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Symbol {
    Start,
    Tok(Token),
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Start => f.write_str("START"),
            Symbol::Tok(t) => t.fmt(f),
        }
    }
}

impl FromStr for Symbol {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "START" {
            Ok(Symbol::Start)
        } else {
            s.parse().map(Symbol::Tok)
        }
    }
}

/// The last `order` symbols before position `at` of `tokens`, START padded.
pub fn context_before(tokens: &[Token], at: usize, order: usize) -> Vec<Symbol> {
    (0..order)
        .map(|i| {
            let back = order - i;
            if at >= back {
                Symbol::Tok(tokens[at - back])
            } else {
                Symbol::Start
            }
        })
        .collect()
}

/// Order-k token model with longest-suffix backoff.
///
/// Counts are stored for every context length `1..=order`. A context that was
/// never observed at any length yields the uniform distribution over the
/// vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkovModel {
    order: usize,
    role: VoiceRole,
    vocab: Vec<Token>,
    counts: BTreeMap<Vec<Symbol>, BTreeMap<Token, u64>>,
    chord_model: Option<ChordModel>,
}

impl MarkovModel {
    /// Assembles a model from stored parts, checking its invariants.
    pub fn from_parts(
        order: usize,
        role: VoiceRole,
        vocab: Vec<Token>,
        counts: BTreeMap<Vec<Symbol>, BTreeMap<Token, u64>>,
        chord_model: Option<ChordModel>,
    ) -> Result<MarkovModel, EngineError> {
        if order == 0 {
            return Err(EngineError::Order(order));
        }
        let set: BTreeSet<Token> = vocab.iter().copied().collect();
        if set.len() != vocab.len() || set.is_empty() {
            return Err(EngineError::Model(
                "vocab must be non-empty and free of duplicates".into(),
            ));
        }
        for (ctx, next) in &counts {
            if ctx.is_empty() || ctx.len() > order {
                return Err(EngineError::Model(format!(
                    "context of length {} in an order-{order} model",
                    ctx.len()
                )));
            }
            for (tok, c) in next {
                if *c == 0 {
                    return Err(EngineError::Model(format!("zero count stored for {tok}")));
                }
                if !set.contains(tok) {
                    return Err(EngineError::Model(format!("{tok} counted but not in vocab")));
                }
            }
        }
        Ok(MarkovModel {
            order,
            role,
            vocab: set.into_iter().collect(),
            counts,
            chord_model,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }
    pub fn role(&self) -> VoiceRole {
        self.role
    }
    pub fn vocab(&self) -> &[Token] {
        &self.vocab
    }
    pub fn counts(&self) -> &BTreeMap<Vec<Symbol>, BTreeMap<Token, u64>> {
        &self.counts
    }
    pub fn chord_model(&self) -> Option<&ChordModel> {
        self.chord_model.as_ref()
    }

    pub fn with_chord_model(mut self, chord_model: ChordModel) -> MarkovModel {
        self.chord_model = Some(chord_model);
        self
    }

    pub fn vocab_index(&self, tok: Token) -> Option<usize> {
        self.vocab.binary_search(&tok).ok()
    }

    /// Count map of the longest observed suffix of `state`, with its length.
    pub fn backoff_counts(&self, state: &[Symbol]) -> Option<(usize, &BTreeMap<Token, u64>)> {
        let max = self.order.min(state.len());
        (1..=max)
            .rev()
            .find_map(|j| self.counts.get(&state[state.len() - j..]).map(|m| (j, m)))
    }

    /// Next-token distribution aligned with [`MarkovModel::vocab`].
    pub fn transition_distribution(&self, state: &[Symbol]) -> Vec<f64> {
        match self.backoff_counts(state) {
            Some((_, next)) => {
                let total: u64 = next.values().sum();
                let mut p = vec![0.0; self.vocab.len()];
                for (tok, c) in next {
                    if let Some(i) = self.vocab_index(*tok) {
                        p[i] = *c as f64 / total as f64;
                    }
                }
                p
            }
            None => vec![1.0 / self.vocab.len() as f64; self.vocab.len()],
        }
    }
}

/// Counts every context length `1..=order` over START-padded sequences.
pub fn train(
    sequences: &[TokenSequence],
    order: usize,
    role: VoiceRole,
) -> Result<MarkovModel, EngineError> {
    if order == 0 {
        return Err(EngineError::Order(order));
    }
    if sequences.iter().all(|s| s.is_empty()) {
        return Err(EngineError::EmptyCorpus);
    }
    let mut counts: BTreeMap<Vec<Symbol>, BTreeMap<Token, u64>> = BTreeMap::new();
    let mut vocab = BTreeSet::new();
    for seq in sequences {
        for (i, &tok) in seq.iter().enumerate() {
            vocab.insert(tok);
            let ctx = context_before(seq, i, order);
            for j in 1..=order {
                *counts
                    .entry(ctx[order - j..].to_vec())
                    .or_default()
                    .entry(tok)
                    .or_default() += 1;
            }
        }
    }
    Ok(MarkovModel {
        order,
        role,
        vocab: vocab.into_iter().collect(),
        counts,
        chord_model: None,
    })
}

/// A chord symbol without its position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChordLabel {
    pub root_pc: u8,
    pub kind: ChordKind,
}

const PC_NAMES: [&str; 12] = [
    "C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B",
];

impl fmt::Display for ChordLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", PC_NAMES[self.root_pc as usize % 12], self.kind.as_str())
    }
}

impl FromStr for ChordLabel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (root, kind) = s.split_once(':').ok_or_else(|| format!("bad chord {s:?}"))?;
        let root_pc = PC_NAMES
            .iter()
            .position(|n| *n == root)
            .ok_or_else(|| format!("bad chord root {root:?}"))? as u8;
        Ok(ChordLabel {
            root_pc,
            kind: kind.parse()?,
        })
    }
}

/// Order-1 chord transition table; `None` is the START state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChordModel {
    pub counts: BTreeMap<Option<ChordLabel>, BTreeMap<ChordLabel, u64>>,
}

impl ChordModel {
    pub fn train(progressions: &[Vec<ChordLabel>]) -> Result<ChordModel, EngineError> {
        let mut counts: BTreeMap<Option<ChordLabel>, BTreeMap<ChordLabel, u64>> = BTreeMap::new();
        for prog in progressions {
            let mut prev = None;
            for &c in prog {
                *counts.entry(prev).or_default().entry(c).or_default() += 1;
                prev = Some(c);
            }
        }
        if counts.is_empty() {
            return Err(EngineError::EmptyCorpus);
        }
        Ok(ChordModel { counts })
    }

    pub fn vocab(&self) -> BTreeSet<ChordLabel> {
        self.counts.values().flat_map(|m| m.keys().copied()).collect()
    }

    /// Next-chord distribution; unseen states fall back to uniform.
    pub fn next_distribution(&self, prev: Option<ChordLabel>) -> Vec<(ChordLabel, f64)> {
        match self.counts.get(&prev) {
            Some(next) => {
                let total: u64 = next.values().sum();
                next.iter()
                    .map(|(c, n)| (*c, *n as f64 / total as f64))
                    .collect()
            }
            None => {
                let vocab = self.vocab();
                let p = 1.0 / vocab.len() as f64;
                vocab.into_iter().map(|c| (c, p)).collect()
            }
        }
    }
}
