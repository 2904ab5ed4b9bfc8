//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Run with `cargo test -p inpaint-cli --test acceptance`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tower::ServiceExt;

use inpaint_core::corpus::{ingest_corpus, train_models};
use inpaint_core::engine::{
    sample_fill, Allowed, BackwardTable, Continuation, FillProblem, MarkovModel, ModelSet, Rung,
    Symbol, UnaryConstraint,
};
use inpaint_core::musicxml::{parse_musicxml, serialize_musicxml, MUSICXML_MIME};
use inpaint_core::playback::{MidiEvent, MidiEventKind, Player, RecordingSink, Scheduler, SimClock};
use inpaint_core::score::{
    governing_pitch, validate_sheet, ChordKind, ChordSymbol, Mode, Sheet, TimeSignature, Token,
    VoiceRole,
};
use inpaint_core::sync::sim::SimNetwork;
use inpaint_core::sync::{encode_message, decode_message, MessageType, SyncMessage, SyncState};
use inpaint_server::{app, AppState};

type Check = fn() -> Result<String, String>;

fn main() {
    let criteria: [(&str, Check); 6] = [
        ("exact sampling matches enumeration", exact_sampling),
        ("timerange-change protocol conformance", protocol_conformance),
        ("MusicXML round trip", musicxml_round_trip),
        ("playback continuity under sheet swaps", playback_continuity),
        ("tempo sync convergence", sync_convergence),
        ("end-to-end determinism", end_to_end_determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let t = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|e| {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panicked".into());
                Err(format!("panic: {msg}"))
            });
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn repo_path(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

// ---------------------------------------------------------------- sampling

const POOL: [Token; 6] = [
    Token::On(60),
    Token::On(62),
    Token::On(64),
    Token::On(67),
    Token::Hold,
    Token::Rest,
];

struct SamplingCase {
    model: MarkovModel,
    problem: FillProblem,
}

fn random_model(rng: &mut ChaCha8Rng, order: usize, vocab_size: usize) -> MarkovModel {
    let mut vocab: Vec<Token> = POOL.to_vec();
    while vocab.len() > vocab_size {
        let i = rng.random_range(0..vocab.len());
        vocab.remove(i);
    }
    let symbols: Vec<Symbol> = std::iter::once(Symbol::Start)
        .chain(vocab.iter().map(|t| Symbol::Tok(*t)))
        .collect();
    let mut counts: BTreeMap<Vec<Symbol>, BTreeMap<Token, u64>> = BTreeMap::new();
    let mut contexts: Vec<Vec<Symbol>> = vec![vec![]];
    for _ in 0..order {
        contexts = contexts
            .into_iter()
            .flat_map(|c| {
                symbols.iter().map(move |s| {
                    let mut c = c.clone();
                    c.push(*s);
                    c
                })
            })
            .collect();
        for ctx in &contexts {
            // sparse rows keep the conditional support small
            if !rng.random_bool(0.7) {
                continue;
            }
            let mut next = BTreeMap::new();
            let width = rng.random_range(1..=2);
            for _ in 0..width {
                let t = vocab[rng.random_range(0..vocab.len())];
                next.insert(t, rng.random_range(1..=5u64));
            }
            counts.insert(ctx.clone(), next);
        }
    }
    MarkovModel::from_parts(order, VoiceRole::Soprano, vocab, counts, None).expect("valid model")
}

/// Brute-force reference: the backoff rule read straight off the counts.
fn oracle_prob(model: &MarkovModel, ctx: &[Symbol], tok: Token) -> f64 {
    for j in (1..=model.order().min(ctx.len())).rev() {
        if let Some(next) = model.counts().get(&ctx[ctx.len() - j..]) {
            let total: u64 = next.values().sum();
            return *next.get(&tok).unwrap_or(&0) as f64 / total as f64;
        }
    }
    if model.vocab().contains(&tok) {
        1.0 / model.vocab().len() as f64
    } else {
        0.0
    }
}

fn oracle_distribution(model: &MarkovModel, p: &FillProblem) -> BTreeMap<Vec<Token>, f64> {
    let k = model.order();
    let vocab = model.vocab();
    let mut padded: Vec<Symbol> = vec![Symbol::Start; k];
    padded.extend(p.left.iter().copied());
    let mut out = BTreeMap::new();
    let total = vocab.len().pow(p.len as u32);
    for code in 0..total {
        let mut c = code;
        let fill: Vec<Token> = (0..p.len)
            .map(|_| {
                let t = vocab[c % vocab.len()];
                c /= vocab.len();
                t
            })
            .collect();
        let mut seq = padded.clone();
        let mut w = 1.0;
        let mut sounding = p.continuation.and_then(|c| c.entering);
        for (t, &tok) in fill.iter().chain(p.right.iter()).enumerate() {
            let prev = *seq.last().unwrap();
            let hold_ok = tok != Token::Hold || matches!(prev, Symbol::Tok(Token::On(_) | Token::Hold));
            let allowed = t >= p.len
                || p.constraints.iter().filter(|c| c.slot == t).all(|c| match (c.allowed, tok) {
                    (Allowed::HoldOnly, x) => x == Token::Hold,
                    (Allowed::ChordTones(mask), Token::On(q)) => mask >> (q % 12) & 1 == 1,
                    (Allowed::ChordTones(_), _) => true,
                });
            if !hold_ok || !allowed {
                w = 0.0;
                break;
            }
            w *= oracle_prob(model, &seq[seq.len() - k..], tok);
            seq.push(Symbol::Tok(tok));
            if t < p.len {
                sounding = match tok {
                    Token::On(q) => Some(q),
                    Token::Rest => None,
                    Token::Hold => sounding,
                };
            }
        }
        if let Some(c) = p.continuation {
            let ok = match c.pitch {
                Some(q) => sounding == Some(q),
                None => sounding.is_some(),
            };
            if !ok {
                w = 0.0;
            }
        }
        if w > 0.0 {
            out.insert(fill, w);
        }
    }
    out
}

fn random_problem(rng: &mut ChaCha8Rng, model: &MarkovModel, n: usize, constrained: bool) -> FillProblem {
    let k = model.order();
    let vocab = model.vocab().to_vec();
    // a grammatical left context, possibly START padded
    let real = rng.random_range(0..=k);
    let mut left = Vec::new();
    let mut entering = None;
    for i in 0..real {
        let options: Vec<Token> = vocab
            .iter()
            .copied()
            .filter(|t| *t != Token::Hold || (i > 0 && entering.is_some()))
            .collect();
        if options.is_empty() {
            break;
        }
        let t = options[rng.random_range(0..options.len())];
        entering = match t {
            Token::On(q) => Some(q),
            Token::Rest => None,
            Token::Hold => entering,
        };
        left.push(Symbol::Tok(t));
    }
    let right: Vec<Token> = (0..rng.random_range(0..=k))
        .map(|_| vocab[rng.random_range(0..vocab.len())])
        .collect();
    let continuation = (right.first() == Some(&Token::Hold)).then(|| {
        let pitches: Vec<u8> = vocab
            .iter()
            .filter_map(|t| match t {
                Token::On(q) => Some(*q),
                _ => None,
            })
            .collect();
        Continuation {
            entering,
            pitch: (!pitches.is_empty()).then(|| pitches[rng.random_range(0..pitches.len())]),
        }
    });
    let mut constraints = Vec::new();
    if constrained {
        for slot in 0..n {
            match rng.random_range(0..4) {
                0 => constraints.push(UnaryConstraint { slot, allowed: Allowed::HoldOnly }),
                1 => {
                    let mask = [0b1001_0001u16, 0b0001_0100, 0b1001_0000][rng.random_range(0..3)];
                    constraints.push(UnaryConstraint { slot, allowed: Allowed::ChordTones(mask) });
                }
                _ => {}
            }
        }
    }
    FillProblem {
        left,
        right,
        len: n,
        constraints,
        continuation,
    }
}

/// Support cap: with 10^5 draws the sampling noise alone puts the expected
/// distance near 0.5 * sqrt(2K / (pi N)), which stays well under 0.01 only
/// for small supports K.
const MAX_SUPPORT: usize = 24;

fn sampling_cases() -> Vec<SamplingCase> {
    // (order, vocab size, gap length, constrained)
    let shapes = [
        (1, 4, 3, false),
        (2, 5, 4, false),
        (2, 6, 5, false),
        (1, 6, 5, true),
        (2, 4, 5, true),
        (2, 6, 3, true),
        (1, 3, 4, false),
        (2, 5, 5, true),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut cases = Vec::new();
    for (order, vocab, n, constrained) in shapes {
        loop {
            let model = random_model(&mut rng, order, vocab);
            let problem = random_problem(&mut rng, &model, n, constrained);
            let support = oracle_distribution(&model, &problem).len();
            let has_constraints = !problem.constraints.is_empty();
            if (2..=MAX_SUPPORT).contains(&support) && has_constraints == constrained {
                cases.push(SamplingCase { model, problem });
                break;
            }
        }
    }
    cases
}

fn exact_sampling() -> Result<String, String> {
    const DRAWS: u64 = 100_000;
    let t = Instant::now();
    let cases = sampling_cases();
    let mut worst_tv: f64 = 0.0;
    let mut worst_rel: f64 = 0.0;
    for (i, case) in cases.iter().enumerate() {
        let oracle = oracle_distribution(&case.model, &case.problem);
        let mass: f64 = oracle.values().sum();
        let table = BackwardTable::build(&case.model, &case.problem).map_err(|e| e.to_string())?;
        let rel = (table.start_mass() - mass).abs() / mass;
        worst_rel = worst_rel.max(rel);
        ensure!(rel < 1e-9, "case {i}: start mass {} vs enumeration {mass}", table.start_mass());

        let mut hist: BTreeMap<Vec<Token>, u64> = BTreeMap::new();
        for seed in 0..DRAWS {
            let fill = sample_fill(&case.model, &case.problem, seed).map_err(|e| e.to_string())?;
            ensure!(fill.rung == Rung::Full, "case {i}: seed {seed} relaxed to {:?}", fill.rung);
            *hist.entry(fill.tokens).or_default() += 1;
        }
        let mut keys: BTreeSet<&Vec<Token>> = oracle.keys().collect();
        keys.extend(hist.keys());
        let tv: f64 = keys
            .into_iter()
            .map(|x| {
                let p = oracle.get(x).copied().unwrap_or(0.0) / mass;
                let q = hist.get(x).copied().unwrap_or(0) as f64 / DRAWS as f64;
                (p - q).abs()
            })
            .sum::<f64>()
            / 2.0;
        worst_tv = worst_tv.max(tv);
        ensure!(tv < 0.01, "case {i}: total variation {tv:.5} (support {})", oracle.len());
    }
    let secs = t.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "took {secs:.1}s, limit 60s");
    Ok(format!(
        "{} models, {DRAWS} draws each, max TV {worst_tv:.5}, max mass rel err {worst_rel:.1e}",
        cases.len()
    ))
}

// ---------------------------------------------------------------- protocol

fn trained_models() -> ModelSet {
    let mut set = train_models(&ingest_corpus(&repo_path("corpus/chorales")).unwrap(), 2).unwrap();
    let lead = train_models(&ingest_corpus(&repo_path("corpus/leadsheets")).unwrap(), 2).unwrap();
    set.insert(lead.get(VoiceRole::Melody).unwrap().clone());
    set
}

struct Reply {
    status: StatusCode,
    body: Vec<u8>,
}

async fn post(state: &AppState, uri: &str, body: Vec<u8>) -> Reply {
    let req = Request::post(uri)
        .header("content-type", MUSICXML_MIME)
        .body(Body::from(body))
        .unwrap();
    let resp = app(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let body = to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec();
    Reply { status, body }
}

/// The text of every `<measure>` element, per part.
fn measure_chunks(xml: &str) -> Vec<Vec<&str>> {
    xml.split("<part id=")
        .skip(1)
        .map(|part| {
            part.split("<measure ")
                .skip(1)
                .map(|m| m.split("</measure>").next().unwrap())
                .collect()
        })
        .collect()
}

fn quarters(slot: u32) -> String {
    format!("{}", slot as f64 / 4.0)
}

fn protocol_conformance() -> Result<String, String> {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    let state = AppState::new(trained_models(), None);
    let t = Instant::now();

    // request bodies: corpus chorales with fermatas as found on disk, plus
    // generated chorales and leadsheets
    let mut bodies: Vec<Vec<u8>> = Vec::new();
    let mut files: Vec<PathBuf> = std::fs::read_dir(repo_path("corpus/chorales"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    for f in files {
        let raw = std::fs::read(&f).unwrap();
        if let Ok(s) = parse_musicxml(&raw) {
            if !s.fermatas.is_empty() && bodies.len() < 12 {
                bodies.push(raw);
            }
        }
    }
    ensure!(!bodies.is_empty(), "no corpus chorale with fermatas");
    rt.block_on(async {
        for (mode, seed) in [("chorale", 1), ("chorale", 2), ("leadsheet", 3), ("leadsheet", 4), ("leadsheet", 5)] {
            let r = post(&state, &format!("/generate?mode={mode}&measures=4&seed={seed}"), vec![]).await;
            assert_eq!(r.status, StatusCode::OK);
            bodies.push(r.body);
        }
    });

    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
    for trial in 0..100 {
        let body = &bodies[rng.random_range(0..bodies.len())];
        let sheet = parse_musicxml(body).map_err(|e| e.to_string())?;
        let len = sheet.len_slots() as u32;
        let start = rng.random_range(0..len);
        let end = rng.random_range(start + 1..=(start + 32).min(len));
        let nv = sheet.voices.len();
        let mut voices: Vec<usize> = (0..nv).filter(|_| rng.random_bool(0.6)).collect();
        if voices.is_empty() {
            voices.push(rng.random_range(0..nv));
        }
        let seed: u64 = rng.random();
        let vlist: Vec<String> = voices.iter().map(|v| v.to_string()).collect();
        let uri = format!(
            "/timerange-change?start={}&end={}&voices={}&seed={seed}",
            quarters(start),
            quarters(end),
            vlist.join(",")
        );
        let (a, b) = rt.block_on(async {
            (post(&state, &uri, body.clone()).await, post(&state, &uri, body.clone()).await)
        });
        ensure!(a.status == StatusCode::OK, "trial {trial}: {uri} -> {}", a.status);
        ensure!(a.body == b.body, "trial {trial}: repeated request differs");
        let out = parse_musicxml(&a.body).map_err(|e| format!("trial {trial}: {e}"))?;
        ensure!(validate_sheet(&out).is_empty(), "trial {trial}: invalid response sheet");
        let canonical = serialize_musicxml(&out).unwrap();
        ensure!(canonical == a.body, "trial {trial}: response is not canonical");
        ensure!(
            out.fermatas == sheet.fermatas
                && out.chords == sheet.chords
                && out.time_signature == sheet.time_signature
                && out.num_measures == sheet.num_measures,
            "trial {trial}: metadata changed"
        );
        for v in 0..nv {
            for i in 0..len as usize {
                let inside = voices.contains(&v) && (start..end).contains(&(i as u32));
                if !inside {
                    ensure!(
                        out.voices[v][i] == sheet.voices[v][i]
                            && governing_pitch(&out.voices[v], i) == governing_pitch(&sheet.voices[v], i),
                        "trial {trial}: voice {v} slot {i} outside the range changed"
                    );
                }
            }
        }
        // compare canonical bytes of everything the range cannot touch: other
        // parts whole, and measures whose span (plus the following slot, which
        // decides a trailing tie) misses the range
        let before = String::from_utf8(serialize_musicxml(&sheet).unwrap()).unwrap();
        let after = String::from_utf8(a.body.clone()).unwrap();
        let (mb, ma) = (measure_chunks(&before), measure_chunks(&after));
        let spm = sheet.slots_per_measure() as u32;
        for v in 0..nv {
            for m in 0..sheet.num_measures as u32 {
                let (lo, hi) = (m * spm, (m + 1) * spm);
                let touched = voices.contains(&v) && start <= hi && end > lo;
                if !touched {
                    ensure!(
                        mb[v][m as usize] == ma[v][m as usize],
                        "trial {trial}: part {v} measure {} bytes changed",
                        m + 1
                    );
                }
            }
        }
        let head = |s: &str| s.split("<part id=").next().unwrap().to_owned();
        ensure!(head(&before) == head(&after), "trial {trial}: header changed");
    }
    let secs = t.elapsed().as_secs_f64();
    ensure!(secs < 30.0, "took {secs:.1}s, limit 30s");
    Ok(format!("100 triples over {} sheets, each sent twice", bodies.len()))
}

// ---------------------------------------------------------------- MusicXML

fn random_voice(rng: &mut ChaCha8Rng, len: usize) -> Vec<Token> {
    let mut out: Vec<Token> = Vec::with_capacity(len);
    for _ in 0..len {
        let t = match rng.random_range(0..4) {
            0 => Token::On(rng.random_range(24..=108)),
            1 | 2 if matches!(out.last(), Some(Token::On(_) | Token::Hold)) => Token::Hold,
            _ => Token::Rest,
        };
        out.push(t);
    }
    out
}

fn random_sheet(rng: &mut ChaCha8Rng) -> Sheet {
    let signatures = [(4, 4), (3, 4), (6, 8), (2, 2), (5, 8), (2, 4), (7, 8)];
    let (beats, unit) = signatures[rng.random_range(0..signatures.len())];
    let ts = TimeSignature { beats, beat_unit: unit };
    let mode = if rng.random_bool(0.5) { Mode::Chorale } else { Mode::Leadsheet };
    let measures = rng.random_range(1..=4);
    let mut sheet = Sheet::silent(mode, ts, measures);
    let len = sheet.len_slots();
    for v in sheet.voices.iter_mut() {
        *v = random_voice(rng, len);
    }
    for _ in 0..rng.random_range(0..3) {
        sheet.fermatas.insert(rng.random_range(0..len as u32 / 4));
    }
    if mode == Mode::Leadsheet {
        let mut onset = 0;
        while onset < len as u32 && rng.random_bool(0.8) {
            sheet.chords.push(ChordSymbol {
                onset,
                root_pc: rng.random_range(0..12),
                kind: ChordKind::ALL[rng.random_range(0..ChordKind::ALL.len())],
            });
            onset += rng.random_range(1..=12);
        }
    }
    sheet.tempo_bpm = [60.0, 72.5, 96.0, 120.0, 144.25][rng.random_range(0..5)];
    sheet
}

fn musicxml_round_trip() -> Result<String, String> {
    let mut files = 0;
    for dir in ["corpus/chorales", "corpus/leadsheets"] {
        for entry in std::fs::read_dir(repo_path(dir)).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().and_then(|e| e.to_str()) != Some("xml") {
                continue;
            }
            let raw = std::fs::read(&path).unwrap();
            let sheet = parse_musicxml(&raw).map_err(|e| format!("{}: {e}", path.display()))?;
            let doc = serialize_musicxml(&sheet).map_err(|e| format!("{}: {e}", path.display()))?;
            let back = parse_musicxml(&doc).map_err(|e| format!("{}: re-parse: {e}", path.display()))?;
            ensure!(back == sheet, "{}: parse of serialize differs", path.display());
            ensure!(serialize_musicxml(&back).unwrap() == doc, "{}: not idempotent", path.display());
            files += 1;
        }
    }
    ensure!(files >= 50, "only {files} corpus files");
    let mut rng = ChaCha8Rng::seed_from_u64(0xA11CE);
    for i in 0..500 {
        let sheet = random_sheet(&mut rng);
        ensure!(validate_sheet(&sheet).is_empty(), "generator produced an invalid sheet {i}");
        let doc = serialize_musicxml(&sheet).map_err(|e| format!("sheet {i}: {e}"))?;
        let back = parse_musicxml(&doc).map_err(|e| format!("sheet {i}: re-parse: {e}"))?;
        ensure!(back == sheet, "sheet {i}: parse of serialize differs");
    }
    Ok(format!("{files} corpus files and 500 random sheets"))
}

// ---------------------------------------------------------------- playback

type Trace = Vec<(f64, Vec<MidiEvent>)>;

/// Plays `ticks` ticks, applying `swaps[i]` (if any) just before tick `i`,
/// then stops. Checks every tick against the sheet in force and returns the
/// timed trace.
fn run_playback(base: &Sheet, swaps: &BTreeMap<usize, Sheet>, ticks: usize) -> Result<Trace, String> {
    let mut player = Player::new(base.clone()).map_err(|e| e.to_string())?;
    let handle = player.swap_handle();
    player.play();
    let mut sched = Scheduler::new(SimClock { now: 3.5 });
    let mut sink = RecordingSink::default();
    let len = base.len_slots();
    let period = 60.0 / (4.0 * base.tempo_bpm);
    let mut current = base.clone();
    let mut sounding: Vec<Option<u8>> = vec![None; base.voices.len()];
    let mut trace: Trace = Vec::new();
    let mut last_at: Option<f64> = None;
    for i in 0..ticks {
        if let Some(s) = swaps.get(&i) {
            handle.request(s.clone()).map_err(|e| e.to_string())?;
            current = s.clone();
        }
        let mark = sink.events.len();
        let at = sched.step(&mut player, &mut sink, None).map_err(|e| e.to_string())?;
        if let Some(prev) = last_at {
            ensure!(((at - prev) - period).abs() < 1e-9, "tick {i}: spacing {} vs {period}", at - prev);
        }
        last_at = Some(at);
        ensure!(player.ticks() == i as u64 + 1, "tick {i}: tick count {}", player.ticks());
        ensure!(player.state().slot_pos == (i + 1) % len, "tick {i}: slot skipped or repeated");
        let events: Vec<MidiEvent> = sink.events[mark..].iter().map(|(_, e)| *e).collect();
        for e in &events {
            ensure!(e.at_slot == i % len, "tick {i}: event stamped slot {}", e.at_slot);
            let ch = e.channel as usize;
            match e.kind {
                MidiEventKind::NoteOn => {
                    ensure!(sounding[ch].is_none(), "tick {i}: note_on over a sounding note");
                    sounding[ch] = Some(e.pitch);
                }
                MidiEventKind::NoteOff => {
                    ensure!(sounding[ch] == Some(e.pitch), "tick {i}: note_off without note_on");
                    sounding[ch] = None;
                }
            }
        }
        for (v, voice) in current.voices.iter().enumerate() {
            ensure!(
                sounding[v] == governing_pitch(voice, i % len),
                "tick {i}: voice {v} sounds {:?}, sheet says {:?}",
                sounding[v],
                governing_pitch(voice, i % len)
            );
        }
        trace.push((at, events));
    }
    let released = player.stop();
    for e in &released {
        ensure!(e.kind == MidiEventKind::NoteOff, "stop sent a note_on");
        let ch = e.channel as usize;
        ensure!(sounding[ch] == Some(e.pitch), "stop released a silent note");
        sounding[ch] = None;
    }
    ensure!(sounding.iter().all(Option::is_none), "notes left hanging after stop");
    trace.push((f64::NAN, released));
    let all: Vec<&MidiEvent> = trace.iter().flat_map(|(_, e)| e).collect();
    let ons = all.iter().filter(|e| e.kind == MidiEventKind::NoteOn).count();
    ensure!(ons * 2 == all.len(), "unbalanced: {ons} on of {}", all.len());
    Ok(trace)
}

fn same_trace(a: &Trace, b: &Trace) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|((ta, ea), (tb, eb))| {
            (ta == tb || (ta.is_nan() && tb.is_nan())) && ea == eb
        })
}

fn playback_continuity() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xBEA7);
    let mut swaps_applied = 0;
    for run in 0..100 {
        let mut base = random_sheet(&mut rng);
        base.tempo_bpm = rng.random_range(40.0..200.0);
        let len = base.len_slots();
        let ticks = len * 3 + rng.random_range(0..len);
        let mut swaps = BTreeMap::new();
        let mut identity = BTreeMap::new();
        for _ in 0..rng.random_range(1..8) {
            let at = rng.random_range(0..ticks);
            let mut other = random_sheet(&mut rng);
            // same shape as the playing sheet
            other.mode = base.mode;
            other.time_signature = base.time_signature;
            other.num_measures = base.num_measures;
            other.tempo_bpm = base.tempo_bpm;
            other.fermatas.retain(|b| (*b as usize) * 4 < len);
            other.chords.clear();
            other.voices = base.voices.iter().map(|v| random_voice(&mut rng, v.len())).collect();
            swaps.insert(at, other);
            identity.insert(at, base.clone());
        }
        swaps_applied += swaps.len();
        run_playback(&base, &swaps, ticks).map_err(|e| format!("run {run}: {e}"))?;
        let plain = run_playback(&base, &BTreeMap::new(), ticks).map_err(|e| format!("run {run}: {e}"))?;
        let same = run_playback(&base, &identity, ticks).map_err(|e| format!("run {run}: {e}"))?;
        ensure!(same_trace(&plain, &same), "run {run}: identity swaps changed the trace");
    }
    Ok(format!("100 runs, {swaps_applied} swaps, identity swaps trace-equal"))
}

// ---------------------------------------------------------------- sync

fn golden_vectors() -> Result<(), String> {
    let m = SyncMessage {
        kind: MessageType::Pong,
        peer_id: 0x0102030405060708,
        session_id: 0x1112131415161718,
        tempo_mbpm: 120_000,
        beat_origin_us: 0x2122232425262728,
        lamport: 7,
        tempo_setter: 0x3132333435363738,
        t0: 100,
        t1: 150,
    };
    let hex: String = encode_message(&m).iter().map(|b| format!("{b:02x}")).collect();
    ensure!(
        hex == concat!(
            "4e4c4e4b0103",
            "0102030405060708",
            "1112131415161718",
            "0001d4c0",
            "2122232425262728",
            "00000007",
            "3132333435363738",
            "0000000000000064",
            "0000000000000096"
        ),
        "golden PONG encodes as {hex}"
    );
    ensure!(decode_message(&encode_message(&m)) == Ok(m), "golden PONG does not decode");
    let alive = SyncMessage {
        kind: MessageType::Alive,
        peer_id: 0,
        session_id: 0,
        tempo_mbpm: 0,
        beat_origin_us: 0,
        lamport: 0,
        tempo_setter: 0,
        t0: 0,
        t1: 0,
    };
    let mut zero = b"NLNK\x01\x01".to_vec();
    zero.resize(62, 0);
    ensure!(encode_message(&alive).to_vec() == zero, "zero ALIVE encoding");
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Event {
    Set(usize),
    Deliver { from: usize, to: usize },
}

/// Every order of the two tempo changes and their four deliveries in which a
/// delivery follows its change.
fn interleavings(a: usize, b: usize, others: [[usize; 2]; 2]) -> Vec<Vec<Event>> {
    fn go(pending: &mut Vec<Event>, done: &mut Vec<Event>, out: &mut Vec<Vec<Event>>) {
        if pending.is_empty() {
            out.push(done.clone());
            return;
        }
        for i in 0..pending.len() {
            let e = pending[i];
            if let Event::Deliver { from, .. } = e {
                if !done.contains(&Event::Set(from)) {
                    continue;
                }
            }
            pending.remove(i);
            done.push(e);
            go(pending, done, out);
            done.pop();
            pending.insert(i, e);
        }
    }
    let mut pending = vec![Event::Set(a), Event::Set(b)];
    for (from, to) in [(a, others[0]), (b, others[1])] {
        for t in to {
            pending.push(Event::Deliver { from, to: t });
        }
    }
    let mut out = Vec::new();
    go(&mut pending, &mut Vec::new(), &mut out);
    out
}

fn sync_interleavings() -> Result<usize, String> {
    let ids = [0x30u64, 0x10, 0x20];
    let tempos = [90.0, 150.0, 111.0];
    let base = 1u64 << 40;
    let mut explored = 0;
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        let others = |p: usize| -> [usize; 2] {
            let v: Vec<usize> = (0..3).filter(|q| *q != p).collect();
            [v[0], v[1]]
        };
        let orders = interleavings(a, b, [others(a), others(b)]);
        ensure!(orders.len() == 80, "expected 80 interleavings, got {}", orders.len());
        for order in orders {
            let mut now = base;
            let mut peers: Vec<SyncState> =
                ids.iter().map(|id| SyncState::new(*id, 120.0, now).unwrap()).collect();
            // bootstrap: everyone hears everyone
            for _ in 0..2 {
                for from in 0..3 {
                    let msg = peers[from].alive();
                    for to in (0..3).filter(|t| *t != from) {
                        now += 100;
                        peers[to].on_receive(&msg, now);
                    }
                }
            }
            // reference: the (lamport, setter) rule applied to plain pairs
            let mut know: Vec<(u32, u64)> = peers.iter().map(|p| (p.lamport(), p.tempo_setter())).collect();
            let mut issued: Vec<((u32, u64), u32)> = Vec::new();
            let mut sent: BTreeMap<usize, SyncMessage> = BTreeMap::new();
            for e in &order {
                now += 250;
                match *e {
                    Event::Set(p) => {
                        let msg = peers[p].set_tempo(tempos[p], now).unwrap();
                        know[p] = (know[p].0 + 1, ids[p]);
                        issued.push((know[p], (tempos[p] * 1000.0) as u32));
                        sent.insert(p, msg);
                    }
                    Event::Deliver { from, to } => {
                        peers[to].on_receive(&sent[&from], now);
                        let carried = (sent[&from].lamport, sent[&from].tempo_setter);
                        if carried > know[to] {
                            know[to] = carried;
                        }
                    }
                }
            }
            for from in 0..3 {
                let msg = peers[from].alive();
                for to in (0..3).filter(|t| *t != from) {
                    now += 100;
                    peers[to].on_receive(&msg, now);
                }
            }
            let (winner, tempo) = issued.iter().max_by_key(|(k, _)| *k).copied().unwrap();
            let beat0 = peers[0].beat_at(now);
            for (i, p) in peers.iter().enumerate() {
                ensure!(
                    p.session_id() == 0x10,
                    "{order:?}: peer {i} in session {:x}",
                    p.session_id()
                );
                ensure!(
                    (p.lamport(), p.tempo_setter()) == winner && p.tempo_mbpm() == tempo,
                    "{order:?}: peer {i} holds ({}, {:x}) {} mbpm, expected {winner:?} {tempo}",
                    p.lamport(),
                    p.tempo_setter(),
                    p.tempo_mbpm()
                );
                ensure!((p.beat_at(now) - beat0).abs() < 1e-6, "{order:?}: beat disagreement");
            }
            explored += 1;
        }
    }
    Ok(explored)
}

fn sync_convergence() -> Result<String, String> {
    golden_vectors()?;
    let explored = sync_interleavings()?;

    let mut worst_skew: f64 = 0.0;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<u64> = (0..3).map(|_| rng.random()).collect();
        let bases: Vec<u64> = (0..3).map(|_| (1 << 40) + rng.random_range(0..10_000_000_000u64)).collect();
        let mut net = SimNetwork::new(&ids, &bases, 120.0, 5_000, seed).map_err(|e| e.to_string())?;
        net.run_until(4_000_000);
        let expected_session = *ids.iter().min().unwrap();
        // two concurrent changes
        net.set_tempo(0, 97.0).map_err(|e| e.to_string())?;
        net.set_tempo(2, 133.0).map_err(|e| e.to_string())?;
        net.run_until(8_000_000);
        ensure!(net.agreed(), "seed {seed}: peers disagree after concurrent changes");
        let winner = if ids[0] > ids[2] { 97_000 } else { 133_000 };
        for p in &net.peers {
            ensure!(p.session_id() == expected_session, "seed {seed}: session {:x}", p.session_id());
            ensure!(p.tempo_mbpm() == winner, "seed {seed}: tempo {} expected {winner}", p.tempo_mbpm());
        }
        // back to 120 and measure the steady state
        net.set_tempo(1, 120.0).map_err(|e| e.to_string())?;
        net.run_until(14_000_000);
        for step in 0..200 {
            net.run_until(14_000_000 + step * 25_000);
            ensure!(net.agreed(), "seed {seed}: disagreement in steady state");
            worst_skew = worst_skew.max(net.max_beat_skew());
        }
    }
    ensure!(worst_skew < 0.02, "steady-state skew {worst_skew:.4} beats at 120 bpm");

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst_jump: f64 = 0.0;
    for _ in 0..200 {
        let start = (1 << 40) + rng.random_range(0..1_000_000_000u64);
        let mut s = SyncState::new(rng.random(), rng.random_range(20.0..999.0), start).unwrap();
        let mut now = start;
        for _ in 0..50 {
            now += rng.random_range(1..100_000_000u64);
            let before = s.beat_at(now);
            s.set_tempo(rng.random_range(20.0..999.0), now).unwrap();
            worst_jump = worst_jump.max((s.beat_at(now) - before).abs());
        }
    }
    ensure!(worst_jump < 1e-9, "beat jumped {worst_jump:e} across set_tempo");
    Ok(format!(
        "{explored} interleavings, max skew {worst_skew:.4} beats, max jump {worst_jump:.1e} beats, golden vectors exact"
    ))
}

// ---------------------------------------------------------------- end to end

struct Server {
    child: Child,
    addr: String,
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn inpaint() -> Command {
    Command::new(env!("CARGO_BIN_EXE_inpaint"))
}

fn start_server(models: &str) -> Result<Server, String> {
    let mut child = inpaint()
        .args(["serve", "--models", models, "--listen", "127.0.0.1:0"])
        .env("RUST_LOG", "info")
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| e.to_string())?;
    let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
    let addr = loop {
        match lines.next() {
            Some(Ok(line)) => {
                if let Some(rest) = line.split("listening on http://").nth(1) {
                    break rest.trim().to_owned();
                }
            }
            _ => return Err("server exited before listening".into()),
        }
    };
    std::thread::spawn(move || for _ in lines {});
    Ok(Server { child, addr })
}

fn http_post(addr: &str, path: &str) -> Result<(u16, Vec<u8>), String> {
    let mut s = TcpStream::connect(addr).map_err(|e| e.to_string())?;
    s.set_read_timeout(Some(Duration::from_secs(30))).unwrap();
    write!(s, "POST {path} HTTP/1.1\r\nHost: {addr}\r\nContent-Length: 0\r\nConnection: close\r\n\r\n")
        .map_err(|e| e.to_string())?;
    let mut raw = Vec::new();
    s.read_to_end(&mut raw).map_err(|e| e.to_string())?;
    let split = raw.windows(4).position(|w| w == b"\r\n\r\n").ok_or("no header end")?;
    let head = String::from_utf8_lossy(&raw[..split]).to_string();
    let status = head.split(' ').nth(1).and_then(|s| s.parse().ok()).ok_or("bad status line")?;
    ensure!(
        !head.to_ascii_lowercase().contains("transfer-encoding: chunked"),
        "unexpected chunked response"
    );
    Ok((status, raw[split + 4..].to_vec()))
}

fn train_into(corpus: &str, out: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let st = inpaint()
        .args(["train", "--corpus"])
        .arg(repo_path(corpus))
        .arg("--out")
        .arg(out)
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .status()
        .map_err(|e| e.to_string())?;
    ensure!(st.success(), "train {corpus} exited with {st}");
    let mut files = BTreeMap::new();
    for e in std::fs::read_dir(out).map_err(|e| e.to_string())? {
        let p = e.unwrap().path();
        files.insert(p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap());
    }
    Ok(files)
}

fn end_to_end_determinism() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut model_dirs = Vec::new();
    for corpus in ["corpus/chorales", "corpus/leadsheets"] {
        let name = corpus.rsplit('/').next().unwrap();
        let a = train_into(corpus, &tmp.path().join(format!("{name}-a")))?;
        let b = train_into(corpus, &tmp.path().join(format!("{name}-b")))?;
        ensure!(!a.is_empty(), "train wrote nothing for {corpus}");
        ensure!(a == b, "train on {corpus} is not byte-stable");
        model_dirs.push(tmp.path().join(format!("{name}-a")).display().to_string());
    }
    let models = model_dirs.join(",");
    let one = start_server(&models)?;
    let two = start_server(&models)?;
    let mut compared = 0;
    for (mode, measures, seed) in [
        ("chorale", 8, 0u64),
        ("chorale", 3, 42),
        ("leadsheet", 8, 7),
        ("leadsheet", 16, u64::MAX),
    ] {
        let path = format!("/generate?mode={mode}&measures={measures}&seed={seed}");
        let (sa, a) = http_post(&one.addr, &path)?;
        let (sb, b) = http_post(&two.addr, &path)?;
        ensure!(sa == 200 && sb == 200, "{path}: status {sa} / {sb}");
        ensure!(a == b, "{path}: servers disagree");
        let (_, again) = http_post(&one.addr, &path)?;
        ensure!(a == again, "{path}: repeat differs");
        // the offline generator produces the same document
        let out = inpaint()
            .args(["generate", "--models", &models, "--mode", mode])
            .args(["--measures", &measures.to_string(), "--seed", &seed.to_string()])
            .stderr(Stdio::null())
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(out.status.success() && out.stdout == a, "{path}: CLI generate differs");
        compared += 1;
    }
    Ok(format!("train byte-stable on 2 corpora, {compared} generate requests identical across 2 servers"))
}
