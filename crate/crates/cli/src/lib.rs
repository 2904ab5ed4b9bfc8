//! The `inpaint` command line.

use std::fs;
use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Instant, SystemTime};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use inpaint_core::corpus::{ingest_corpus, train_models};
use inpaint_core::engine::{generate_sheet, DEFAULT_ORDER};
use inpaint_core::modelfile::{load_model_set, model_file_name, save_model};
use inpaint_core::musicxml::{parse_musicxml, parse_musicxml_with_warnings, serialize_musicxml};
use inpaint_core::playback::{BeatSource, MidiSink, Player, RawMidiSink, Scheduler, SystemClock};
use inpaint_core::score::{validate_sheet, Mode, Sheet, TimeSignature};
use inpaint_core::sync::udp::{MonoClock, SyncNode, UdpTransport, MULTICAST_GROUP, PORT};

pub mod bridge;

#[derive(Debug, Parser)]
#[command(name = "inpaint", version, about = "Score inpainting: train, serve, play, validate")]
pub struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

impl Cli {
    pub fn log_level(&self) -> &'static str {
        match self.verbose {
            0 => "info",
            1 => "debug",
            _ => "trace",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model per voice role from a directory of MusicXML files.
    Train(TrainArgs),
    /// Run the HTTP generation server.
    Serve(ServeArgs),
    /// Loop a sheet to a MIDI output.
    Play(PlayArgs),
    /// Parse and check MusicXML files.
    Validate(ValidateArgs),
    /// Generate a sheet offline and write it as MusicXML.
    Generate(GenerateArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = DEFAULT_ORDER)]
    pub order: usize,
    /// Output directory; receives `<role>.json` for each voice role.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Model files or directories of model files.
    #[arg(long, num_args = 1.., required = true, env = "INPAINT_MODELS", value_delimiter = ',')]
    pub models: Vec<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8765", env = "INPAINT_LISTEN")]
    pub listen: SocketAddr,
    /// Mode used by /generate requests that name none.
    #[arg(long, env = "INPAINT_MODE")]
    pub mode: Option<Mode>,
}

#[derive(Debug, Args)]
pub struct PlayArgs {
    #[arg(long)]
    pub sheet: PathBuf,
    /// ALSA card name fragment or a device/FIFO path receiving raw MIDI bytes.
    #[arg(long)]
    pub midi_port: String,
    /// Join the LAN tempo session and follow its beat grid.
    #[arg(long)]
    pub link: bool,
    /// Override the sheet's tempo.
    #[arg(long)]
    pub tempo: Option<f64>,
    /// Stop after this many passes through the loop.
    #[arg(long)]
    pub loops: Option<u64>,
    /// Swap in the sheet file whenever it changes on disk.
    #[arg(long)]
    pub watch: bool,
    /// Serve the playback control endpoints at this address.
    #[arg(long)]
    pub bridge: Option<SocketAddr>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, num_args = 1.., required = true, value_delimiter = ',')]
    pub models: Vec<PathBuf>,
    #[arg(long)]
    pub mode: Mode,
    #[arg(long, default_value_t = 8)]
    pub measures: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    /// 1 for usage errors, 2 for bad data or failed I/O.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(a) => train(&a),
        Command::Serve(a) => serve(a),
        Command::Play(a) => play(a),
        Command::Validate(a) => validate(&a),
        Command::Generate(a) => generate(&a),
    }
}

fn train(a: &TrainArgs) -> Result<(), CliError> {
    if a.order == 0 {
        return Err(CliError::Usage("--order must be at least 1".into()));
    }
    let corpus = ingest_corpus(&a.corpus).map_err(data)?;
    let s = &corpus.summary;
    log::info!(
        "ingested {} files ({} skipped), {} slots",
        s.files_ok,
        s.files_skipped,
        s.total_slots
    );
    let models = train_models(&corpus, a.order).map_err(data)?;
    fs::create_dir_all(&a.out).map_err(|e| data(format!("{}: {e}", a.out.display())))?;
    for role in models.roles() {
        let path = a.out.join(model_file_name(role));
        save_model(models.get(role).map_err(data)?, &path).map_err(data)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn serve(a: ServeArgs) -> Result<(), CliError> {
    let models = load_model_set(&a.models).map_err(data)?;
    if models.is_empty() {
        return Err(CliError::Data("no models found".into()));
    }
    for mode in [Mode::Chorale, Mode::Leadsheet] {
        log::info!("{} mode: {}", mode.as_str(), if models.supports(mode) { "ready" } else { "no models" });
    }
    let rt = tokio::runtime::Runtime::new().map_err(data)?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(a.listen)
            .await
            .map_err(|e| data(format!("{}: {e}", a.listen)))?;
        log::info!("listening on http://{}", listener.local_addr().map_err(data)?);
        inpaint_server::serve(listener, inpaint_server::AppState::new(models, a.mode))
            .await
            .map_err(data)
    })
}

fn read_sheet(path: &Path) -> Result<Sheet, CliError> {
    let bytes = fs::read(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    parse_musicxml(&bytes).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn modified(path: &Path) -> Option<SystemTime> {
    fs::metadata(path).and_then(|m| m.modified()).ok()
}

fn play(a: PlayArgs) -> Result<(), CliError> {
    let sheet = read_sheet(&a.sheet)?;
    let mut player = Player::new(sheet).map_err(data)?;
    if let Some(t) = a.tempo {
        player.set_tempo(t).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let mut sink = RawMidiSink::open_port(&a.midi_port).map_err(data)?;
    log::info!("MIDI output {}", sink.path().display());

    let origin = Instant::now();
    let node = if a.link {
        let transport = UdpTransport::join(MULTICAST_GROUP, PORT, Ipv4Addr::UNSPECIFIED)
            .map_err(|e| data(format!("joining {MULTICAST_GROUP}:{PORT}: {e}")))?;
        let node = SyncNode::spawn(transport, rand::random(), player.state().tempo_bpm, MonoClock { origin })
            .map_err(data)?;
        log::info!("joined tempo session as {:016x}", node.snapshot().peer_id());
        Some(node)
    } else {
        None
    };

    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = Arc::clone(&stop);
        std::thread::spawn(move || {
            if let Ok(rt) = tokio::runtime::Builder::new_current_thread().enable_all().build() {
                rt.block_on(async {
                    let _ = tokio::signal::ctrl_c().await;
                });
                stop.store(true, Ordering::Relaxed);
            }
        });
    }
    let bridge = a
        .bridge
        .map(|addr| bridge::spawn(addr, player.swap_handle()))
        .transpose()
        .map_err(data)?;

    let mut sched = Scheduler::new(SystemClock::new(origin));
    let loop_len = player.state().loop_len_slots as u64;
    let mut last_mtime = modified(&a.sheet);
    player.play();
    while !stop.load(Ordering::Relaxed) {
        if let Some(b) = &bridge {
            for cmd in b.commands() {
                match cmd {
                    bridge::Command::Play => {
                        if !player.state().playing {
                            sched.reset();
                            player.play();
                        }
                    }
                    bridge::Command::Stop => send_all(&mut sink, &player.stop())?,
                    bridge::Command::Tempo(bpm) => {
                        if let Some(n) = &node {
                            if let Err(e) = n.set_tempo(bpm) {
                                log::warn!("{e}");
                            }
                        }
                        if let Err(e) = player.set_tempo(bpm) {
                            log::warn!("{e}");
                        }
                    }
                }
            }
        }
        if a.watch && player.ticks() % 4 == 0 {
            let m = modified(&a.sheet);
            if m != last_mtime {
                last_mtime = m;
                match read_sheet(&a.sheet).and_then(|s| player.swap_sheet(s).map_err(data)) {
                    Ok(()) => log::info!("swapped in {}", a.sheet.display()),
                    Err(e) => log::warn!("not swapping: {e}"),
                }
            }
        }
        if !player.state().playing {
            std::thread::sleep(std::time::Duration::from_millis(10));
            if let Some(b) = &bridge {
                b.publish(player.state());
            }
            continue;
        }
        let follow = node.as_ref().map(|n| n as &dyn BeatSource);
        sched.step(&mut player, &mut sink, follow).map_err(data)?;
        if let Some(b) = &bridge {
            b.publish(player.state());
        }
        if a.loops.is_some_and(|n| player.ticks() >= n * loop_len) {
            break;
        }
    }
    send_all(&mut sink, &player.stop())?;
    log::info!("stopped after {} ticks", player.ticks());
    Ok(())
}

fn send_all(sink: &mut dyn MidiSink, events: &[inpaint_core::playback::MidiEvent]) -> Result<(), CliError> {
    for e in events {
        sink.send(e).map_err(data)?;
    }
    sink.flush().map_err(data)
}

fn validate(a: &ValidateArgs) -> Result<(), CliError> {
    let mut failed = 0;
    for f in &a.files {
        let result = fs::read(f)
            .map_err(|e| e.to_string())
            .and_then(|b| parse_musicxml_with_warnings(&b).map_err(|e| e.to_string()));
        match result {
            Ok((sheet, warnings)) => {
                for w in &warnings {
                    log::warn!("{}: {}", f.display(), w.0);
                }
                let violations = validate_sheet(&sheet);
                if violations.is_empty() {
                    println!(
                        "ok {}: {} mode, {} measures, {} voices, {} fermatas, {} chords",
                        f.display(),
                        sheet.mode.as_str(),
                        sheet.num_measures,
                        sheet.voices.len(),
                        sheet.fermatas.len(),
                        sheet.chords.len()
                    );
                } else {
                    failed += 1;
                    for v in violations {
                        println!("invalid {}: {v}", f.display());
                    }
                }
            }
            Err(e) => {
                failed += 1;
                println!("error {}: {e}", f.display());
            }
        }
    }
    if failed > 0 {
        return Err(CliError::Data(format!("{failed} of {} files failed", a.files.len())));
    }
    Ok(())
}

fn generate(a: &GenerateArgs) -> Result<(), CliError> {
    if a.measures == 0 {
        return Err(CliError::Usage("--measures must be at least 1".into()));
    }
    let models = load_model_set(&a.models).map_err(data)?;
    let seed = a.seed.unwrap_or_else(rand::random);
    let sheet = generate_sheet(&models, a.mode, a.measures, TimeSignature::COMMON, seed).map_err(data)?;
    let doc = serialize_musicxml(&sheet).map_err(data)?;
    log::info!("seed {seed}");
    match &a.out {
        Some(p) => fs::write(p, doc).map_err(|e| data(format!("{}: {e}", p.display()))),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(&doc).map_err(data)
        }
    }
}
