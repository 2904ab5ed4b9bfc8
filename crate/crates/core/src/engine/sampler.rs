//! Exact conditional sampling of a gap between fixed left and right contexts.
//!
//! The gap is filled by a forward pass over a backward table: `beta[t][s]` is
//! the probability, from state `s` before slot `t`, of emitting allowed tokens
//! for the rest of the gap and then the right context. Choosing each token
//! with weight `P(x | s) * beta[t + 1][shift(s, x)]` draws from the chain
//! conditioned on the whole problem.
//!
//! States are the last `order` symbols, encoded base-`|alphabet|` in a `u64`,
//! plus one bit that tracks whether a required tie continuation still holds.
//! Only states reachable from the left context are materialized. Each layer
//! is rescaled to a maximum of one and the log scale kept alongside.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{MarkovModel, Symbol};
use super::EngineError;
use crate::score::Token;

/// Tokens permitted at one slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Allowed {
    /// Only a continuation of the sounding note.
    HoldOnly,
    /// HOLD, REST, or a note whose pitch class is in the mask (bit = pc).
    ChordTones(u16),
}

impl Allowed {
    pub fn allows(self, tok: Token) -> bool {
        match (self, tok) {
            (Allowed::HoldOnly, t) => t == Token::Hold,
            (Allowed::ChordTones(mask), Token::On(p)) => mask & (1 << (p % 12)) != 0,
            (Allowed::ChordTones(_), _) => true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UnaryConstraint {
    /// Index within the gap.
    pub slot: usize,
    pub allowed: Allowed,
}

/// The right context opens with a HOLD: the fill must leave `pitch` sounding,
/// or any note at all when `pitch` is `None`. `entering` is the pitch
/// sounding just before the gap, if any.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Continuation {
    pub entering: Option<u8>,
    pub pitch: Option<u8>,
}

impl Continuation {
    fn satisfied_by(self, sounding: Option<u8>) -> bool {
        match self.pitch {
            Some(p) => sounding == Some(p),
            None => sounding.is_some(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FillProblem {
    /// Symbols before the gap; the last `order` are used, START padded.
    pub left: Vec<Symbol>,
    /// Up to `order` tokens following the gap; empty at the end of a voice.
    pub right: Vec<Token>,
    pub len: usize,
    pub constraints: Vec<UnaryConstraint>,
    pub continuation: Option<Continuation>,
}

/// Relaxation ladder, from the full problem down to uniform tokens.
///
/// Every rung keeps the continuation: if the voice holds a note into the slot
/// after the gap, the fill must leave that pitch sounding, so the material
/// after the gap is never rewritten. The uniform rung draws from the
/// vocabulary plus REST and the held pitch, so it is always feasible.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rung {
    Full = 0,
    NoRightContext = 1,
    NoConstraints = 2,
    Uniform = 3,
}

impl Rung {
    pub const LADDER: [Rung; 4] = [
        Rung::Full,
        Rung::NoRightContext,
        Rung::NoConstraints,
        Rung::Uniform,
    ];

    pub fn level(self) -> u8 {
        self as u8
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fill {
    pub tokens: Vec<Token>,
    pub rung: Rung,
}

/// Whether `tok` may follow `prev`: HOLD needs a sounding note before it.
pub fn grammatical(prev: Symbol, tok: Token) -> bool {
    tok != Token::Hold || !matches!(prev, Symbol::Start | Symbol::Tok(Token::Rest))
}

struct Chain<'m> {
    model: &'m MarkovModel,
    uniform: bool,
    symbols: Vec<Symbol>,
    index: HashMap<Symbol, u64>,
    /// Emittable tokens with their symbol index, aligned with every row.
    emit: Vec<(u64, Token)>,
    emit_pos: HashMap<Token, usize>,
    base: u64,
    order: usize,
    modulus: u64,
    rows: HashMap<u64, Vec<f64>>,
}

impl<'m> Chain<'m> {
    fn new(model: &'m MarkovModel, problem: &FillProblem, uniform: bool) -> Result<Self, EngineError> {
        let mut symbols = vec![Symbol::Start];
        let mut emit_tokens: Vec<Token> = model.vocab().to_vec();
        if uniform {
            // REST, and the held pitch, so any gap can be closed off cleanly
            let held = problem.continuation.and_then(|c| c.pitch).map(Token::On);
            for t in std::iter::once(Token::Rest).chain(held) {
                if !emit_tokens.contains(&t) {
                    emit_tokens.push(t);
                }
            }
        }
        symbols.extend(emit_tokens.iter().map(|t| Symbol::Tok(*t)));
        let extras = problem
            .left
            .iter()
            .copied()
            .chain(problem.right.iter().map(|t| Symbol::Tok(*t)));
        for s in extras {
            if !symbols.contains(&s) {
                symbols.push(s);
            }
        }
        let index: HashMap<Symbol, u64> = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (*s, i as u64))
            .collect();
        let base = symbols.len() as u64;
        let order = model.order();
        let modulus = base
            .checked_pow(order as u32)
            .and_then(|m| m.checked_mul(base))
            .map(|m| m / base)
            .ok_or(EngineError::StateSpace {
                order,
                alphabet: symbols.len(),
            })?;
        let emit: Vec<(u64, Token)> = emit_tokens
            .iter()
            .map(|t| (index[&Symbol::Tok(*t)], *t))
            .collect();
        let emit_pos = emit.iter().enumerate().map(|(i, (_, t))| (*t, i)).collect();
        Ok(Chain {
            model,
            uniform,
            symbols,
            index,
            emit,
            emit_pos,
            base,
            order,
            modulus,
            rows: HashMap::new(),
        })
    }

    fn encode(&self, left: &[Symbol]) -> u64 {
        let take = left.len().min(self.order);
        let pad = self.order - take;
        std::iter::repeat_n(Symbol::Start, pad)
            .chain(left[left.len() - take..].iter().copied())
            .fold(0u64, |g, s| g * self.base + self.index[&s])
    }

    fn decode(&self, mut gram: u64) -> Vec<Symbol> {
        let mut out = vec![Symbol::Start; self.order];
        for slot in out.iter_mut().rev() {
            *slot = self.symbols[(gram % self.base) as usize];
            gram /= self.base;
        }
        out
    }

    fn shift(&self, gram: u64, sym: u64) -> u64 {
        (gram % (self.modulus / self.base)) * self.base + sym
    }

    fn last(&self, gram: u64) -> Symbol {
        self.symbols[(gram % self.base) as usize]
    }

    fn row(&mut self, gram: u64) -> &[f64] {
        if !self.rows.contains_key(&gram) {
            let row = if self.uniform {
                vec![1.0 / self.emit.len() as f64; self.emit.len()]
            } else {
                self.model.transition_distribution(&self.decode(gram))
            };
            self.rows.insert(gram, row);
        }
        &self.rows[&gram]
    }
}

struct Layer {
    states: Vec<u64>,
    pos: HashMap<u64, usize>,
    beta: Vec<f64>,
    log_scale: f64,
}

impl Layer {
    fn new(states: Vec<u64>) -> Layer {
        let pos = states.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        Layer {
            beta: vec![0.0; states.len()],
            states,
            pos,
            log_scale: 0.0,
        }
    }

    fn rescale(&mut self, below: f64) {
        let max = self.beta.iter().copied().fold(0.0f64, f64::max);
        if max > 0.0 {
            self.beta.iter_mut().for_each(|b| *b /= max);
            self.log_scale = below + max.ln();
        }
    }
}

/// Backward probabilities for one fill problem over the reachable states.
pub struct BackwardTable<'m> {
    chain: Chain<'m>,
    layers: Vec<Layer>,
    allowed: Vec<Vec<Allowed>>,
    continuation: Option<Continuation>,
    start: u64,
}

impl<'m> BackwardTable<'m> {
    pub fn build(model: &'m MarkovModel, problem: &FillProblem) -> Result<Self, EngineError> {
        Self::build_with(model, problem, false)
    }

    fn build_with(
        model: &'m MarkovModel,
        problem: &FillProblem,
        uniform: bool,
    ) -> Result<Self, EngineError> {
        let mut chain = Chain::new(model, problem, uniform)?;
        let n = problem.len;
        let mut allowed = vec![Vec::new(); n];
        for c in &problem.constraints {
            if c.slot < n {
                allowed[c.slot].push(c.allowed);
            }
        }
        let cont = problem.continuation;
        let flag0 = cont.is_some_and(|c| c.satisfied_by(c.entering)) as u64;
        let start = chain.encode(&problem.left) * 2 + flag0;

        // forward reachability
        let mut layers = vec![Layer::new(vec![start])];
        for t in 0..n {
            let mut next: Vec<u64> = Vec::new();
            let mut seen = std::collections::HashSet::new();
            for &key in &layers[t].states {
                let (gram, flag) = (key / 2, key % 2);
                let prev = chain.last(gram);
                let emit = chain.emit.clone();
                let row = chain.row(gram).to_vec();
                for (i, (sym, tok)) in emit.into_iter().enumerate() {
                    if row[i] > 0.0
                        && grammatical(prev, tok)
                        && allowed[t].iter().all(|a| a.allows(tok))
                    {
                        let nk = chain.shift(gram, sym) * 2 + next_flag(cont, flag, tok);
                        if seen.insert(nk) {
                            next.push(nk);
                        }
                    }
                }
            }
            layers.push(Layer::new(next));
        }

        // base case: emit the right context
        {
            let last = &mut layers[n];
            for (i, &key) in last.states.clone().iter().enumerate() {
                let (gram, flag) = (key / 2, key % 2);
                last.beta[i] = if cont.is_some() && flag == 0 {
                    0.0
                } else {
                    right_mass(&mut chain, gram, &problem.right)
                };
            }
            last.rescale(0.0);
        }
        for t in (0..n).rev() {
            let (head, tail) = layers.split_at_mut(t + 1);
            let (cur, below) = (&mut head[t], &tail[0]);
            for (i, &key) in cur.states.iter().enumerate() {
                let (gram, flag) = (key / 2, key % 2);
                let prev = chain.last(gram);
                let row = chain.row(gram).to_vec();
                let mut acc = 0.0;
                for (j, &(sym, tok)) in chain.emit.iter().enumerate() {
                    if row[j] > 0.0
                        && grammatical(prev, tok)
                        && allowed[t].iter().all(|a| a.allows(tok))
                    {
                        let nk = chain.shift(gram, sym) * 2 + next_flag(cont, flag, tok);
                        acc += row[j] * below.beta[below.pos[&nk]];
                    }
                }
                cur.beta[i] = acc;
            }
            cur.rescale(below.log_scale);
        }

        Ok(BackwardTable {
            chain,
            layers,
            allowed,
            continuation: cont,
            start,
        })
    }

    /// `beta[0][left]`: total probability of all fills consistent with the problem.
    pub fn start_mass(&self) -> f64 {
        let l = &self.layers[0];
        l.beta[l.pos[&self.start]] * l.log_scale.exp()
    }

    /// Natural log of [`BackwardTable::start_mass`], usable when the mass underflows.
    pub fn log_start_mass(&self) -> f64 {
        let l = &self.layers[0];
        l.beta[l.pos[&self.start]].ln() + l.log_scale
    }

    /// `beta[t][state]` for a state reachable before slot `t`, summed over the
    /// tie-tracking bit. `None` if the state is unreachable from the left context.
    pub fn mass(&self, t: usize, state: &[Symbol]) -> Option<f64> {
        let layer = self.layers.get(t)?;
        let gram = self.chain.encode(state);
        let found: Vec<f64> = [gram * 2, gram * 2 + 1]
            .iter()
            .filter_map(|k| layer.pos.get(k))
            .map(|&i| layer.beta[i] * layer.log_scale.exp())
            .collect();
        (!found.is_empty()).then(|| found.iter().sum())
    }

    pub fn is_feasible(&self) -> bool {
        let l = &self.layers[0];
        l.beta[l.pos[&self.start]] > 0.0
    }

    /// Draws one fill. Only meaningful when [`BackwardTable::is_feasible`].
    pub fn sample<R: Rng>(&mut self, rng: &mut R) -> Vec<Token> {
        let n = self.layers.len() - 1;
        let mut out = Vec::with_capacity(n);
        let mut key = self.start;
        let mut weights = Vec::with_capacity(self.chain.emit.len());
        for t in 0..n {
            let (gram, flag) = (key / 2, key % 2);
            let prev = self.chain.last(gram);
            let row = self.chain.row(gram).to_vec();
            let below = &self.layers[t + 1];
            weights.clear();
            let mut total = 0.0;
            for (j, &(sym, tok)) in self.chain.emit.iter().enumerate() {
                let mut w = 0.0;
                let mut nk = 0;
                if row[j] > 0.0
                    && grammatical(prev, tok)
                    && self.allowed[t].iter().all(|a| a.allows(tok))
                {
                    nk = self.chain.shift(gram, sym) * 2 + next_flag(self.continuation, flag, tok);
                    w = row[j] * below.beta[below.pos[&nk]];
                }
                total += w;
                weights.push((w, nk, tok));
            }
            let mut u = rng.random::<f64>() * total;
            let mut pick = None;
            for &(w, nk, tok) in &weights {
                if w > 0.0 {
                    pick = Some((nk, tok));
                    if u < w {
                        break;
                    }
                    u -= w;
                }
            }
            let (nk, tok) = pick.expect("feasible table has a positive weight at every step");
            out.push(tok);
            key = nk;
        }
        out
    }
}

fn next_flag(cont: Option<Continuation>, flag: u64, tok: Token) -> u64 {
    match (cont, tok) {
        (None, _) => 0,
        (Some(c), Token::On(p)) => c.satisfied_by(Some(p)) as u64,
        (Some(_), Token::Hold) => flag,
        (Some(_), Token::Rest) => 0,
    }
}

fn right_mass(chain: &mut Chain, mut gram: u64, right: &[Token]) -> f64 {
    let mut p = 1.0;
    for &tok in right {
        if !grammatical(chain.last(gram), tok) {
            return 0.0;
        }
        let Some(&pos) = chain.emit_pos.get(&tok) else {
            return 0.0;
        };
        p *= chain.row(gram)[pos];
        if p == 0.0 {
            return 0.0;
        }
        gram = chain.shift(gram, chain.index[&Symbol::Tok(tok)]);
    }
    p
}

/// Builds the backward table for a problem.
pub fn backward_table<'m>(
    model: &'m MarkovModel,
    problem: &FillProblem,
) -> Result<BackwardTable<'m>, EngineError> {
    BackwardTable::build(model, problem)
}

/// Samples a fill for `problem`, descending the relaxation ladder until a rung
/// is feasible. Deterministic in `seed`.
pub fn sample_fill(model: &MarkovModel, problem: &FillProblem, seed: u64) -> Result<Fill, EngineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_fill_with(model, problem, &mut rng)
}

pub fn sample_fill_with<R: Rng>(
    model: &MarkovModel,
    problem: &FillProblem,
    rng: &mut R,
) -> Result<Fill, EngineError> {
    // a continuation with no pitch may still be out of reach of the vocabulary
    let last_resort = FillProblem {
        continuation: None,
        ..relax(problem, Rung::Uniform)
    };
    let ladder = Rung::LADDER.into_iter().map(|r| (r, relax(problem, r)));
    for (rung, relaxed) in ladder.chain(std::iter::once((Rung::Uniform, last_resort))) {
        let mut table = BackwardTable::build_with(model, &relaxed, rung == Rung::Uniform)?;
        if table.is_feasible() {
            if rung > Rung::Full {
                log::debug!("fill of {} slots needed relaxation rung {}", problem.len, rung.level());
            }
            return Ok(Fill {
                tokens: table.sample(rng),
                rung,
            });
        }
    }
    Err(EngineError::Infeasible)
}

fn relax(problem: &FillProblem, rung: Rung) -> FillProblem {
    let mut p = problem.clone();
    if rung >= Rung::NoRightContext {
        p.right.clear();
    }
    if rung >= Rung::NoConstraints {
        p.constraints.clear();
    }
    p
}
