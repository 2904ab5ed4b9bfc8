//! Local HTTP control of a running `play` session, for a browser front end in
//! MIDI mode: swap the sheet, start/stop, change tempo, read the cursor.
//!
//! - `POST /sheet` with a MusicXML body swaps at the next tick.
//! - `POST /transport?action=play|stop` and/or `&tempo=BPM`.
//! - `GET /transport` returns `{"playing":..,"slot":..,"tempo_bpm":..,"loop_len":..}`.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::Router;

use inpaint_core::musicxml::parse_musicxml;
use inpaint_core::playback::{PlaybackError, SwapHandle, TransportState};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Command {
    Play,
    Stop,
    Tempo(f64),
}

#[derive(Clone)]
struct Shared {
    swap: SwapHandle,
    commands: Sender<Command>,
    status: Arc<Mutex<Option<TransportState>>>,
}

/// The playback loop's side of the bridge.
pub struct Bridge {
    commands: Receiver<Command>,
    status: Arc<Mutex<Option<TransportState>>>,
    pub addr: SocketAddr,
}

impl Bridge {
    /// Commands received since the last call.
    pub fn commands(&self) -> Vec<Command> {
        self.commands.try_iter().collect()
    }

    pub fn publish(&self, state: &TransportState) {
        *self.status.lock().unwrap_or_else(|e| e.into_inner()) = Some(state.clone());
    }
}

/// Router plus the receiving ends, without binding a socket.
pub fn router(swap: SwapHandle) -> (Router, Receiver<Command>, Arc<Mutex<Option<TransportState>>>) {
    let (tx, rx) = mpsc::channel();
    let status = Arc::new(Mutex::new(None));
    let shared = Shared {
        swap,
        commands: tx,
        status: Arc::clone(&status),
    };
    let app = Router::new()
        .route("/sheet", post(post_sheet))
        .route("/transport", post(post_transport).get(get_transport))
        .with_state(shared);
    (app, rx, status)
}

/// Binds `addr` and serves the bridge on a background thread.
pub fn spawn(addr: SocketAddr, swap: SwapHandle) -> std::io::Result<Bridge> {
    let listener = std::net::TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let local = listener.local_addr()?;
    let (app, commands, status) = router(swap);
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
    std::thread::spawn(move || {
        rt.block_on(async move {
            match tokio::net::TcpListener::from_std(listener) {
                Ok(l) => {
                    if let Err(e) = axum::serve(l, app).await {
                        log::error!("bridge stopped: {e}");
                    }
                }
                Err(e) => log::error!("bridge listener: {e}"),
            }
        })
    });
    log::info!("playback bridge on http://{local}");
    Ok(Bridge {
        commands,
        status,
        addr: local,
    })
}

fn text(status: StatusCode, msg: String) -> Response {
    (status, [(header::CONTENT_TYPE, "text/plain; charset=utf-8")], msg + "\n").into_response()
}

async fn post_sheet(State(s): State<Shared>, body: Bytes) -> Response {
    let sheet = match parse_musicxml(&body) {
        Ok(sheet) => sheet,
        Err(e) => return text(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
    };
    match s.swap.request(sheet) {
        Ok(()) => StatusCode::NO_CONTENT.into_response(),
        Err(e @ PlaybackError::LengthMismatch { .. }) => text(StatusCode::CONFLICT, e.to_string()),
        Err(e) => text(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
    }
}

async fn post_transport(State(s): State<Shared>, Query(q): Query<HashMap<String, String>>) -> Response {
    let mut cmds = Vec::new();
    match q.get("action").map(String::as_str) {
        None => {}
        Some("play") => cmds.push(Command::Play),
        Some("stop") => cmds.push(Command::Stop),
        Some(other) => return text(StatusCode::BAD_REQUEST, format!("unknown action {other:?}")),
    }
    if let Some(t) = q.get("tempo") {
        match t.parse::<f64>() {
            Ok(bpm) if bpm.is_finite() && bpm > 0.0 => cmds.push(Command::Tempo(bpm)),
            _ => return text(StatusCode::BAD_REQUEST, format!("bad tempo {t:?}")),
        }
    }
    if cmds.is_empty() {
        return text(StatusCode::BAD_REQUEST, "nothing to do: give action and/or tempo".into());
    }
    for c in cmds {
        if s.commands.send(c).is_err() {
            return text(StatusCode::SERVICE_UNAVAILABLE, "playback has ended".into());
        }
    }
    StatusCode::NO_CONTENT.into_response()
}

async fn get_transport(State(s): State<Shared>) -> Response {
    let status = s.status.lock().unwrap_or_else(|e| e.into_inner()).clone();
    match status {
        Some(t) => (
            [(header::CONTENT_TYPE, "application/json")],
            format!(
                "{{\"playing\":{},\"slot\":{},\"tempo_bpm\":{},\"loop_len\":{}}}\n",
                t.playing, t.slot_pos, t.tempo_bpm, t.loop_len_slots
            ),
        )
            .into_response(),
        None => text(StatusCode::SERVICE_UNAVAILABLE, "playback not started".into()),
    }
}
