//! A local chat-completions server that replays canned transcripts.
//!
//! Rollout requests match a query exactly; synthesis requests match the
//! longest synthesis key contained in the prompt. Fault scripts are served,
//! in order, before the transcript reply for their key.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::Router;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Fault {
    /// Reply with this HTTP status.
    Status(u16),
    /// `"malformed"`: a body that is not JSON. `"short"`: one choice fewer than asked.
    Kind(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Transcript {
    /// Query text → responses, cycled to fill `n`.
    pub rollouts: BTreeMap<String, Vec<String>>,
    /// Query text → the completion returned for its synthesis prompt.
    pub synthesis: BTreeMap<String, String>,
    pub faults: BTreeMap<String, Vec<Fault>>,
}

impl Transcript {
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    /// Queries of the rollout table, in key order.
    pub fn queries(&self) -> Vec<String> {
        self.rollouts.keys().cloned().collect()
    }
}

struct ServerState {
    transcript: Transcript,
    fault_cursor: Mutex<HashMap<String, usize>>,
    requests: Mutex<Vec<Value>>,
}

enum Route {
    Rollouts(String),
    Synthesis(String),
}

impl ServerState {
    fn route(&self, content: &str) -> Option<Route> {
        if self.transcript.rollouts.contains_key(content) {
            return Some(Route::Rollouts(content.to_string()));
        }
        self.transcript
            .synthesis
            .keys()
            .filter(|k| content.contains(k.as_str()))
            .max_by_key(|k| k.len())
            .map(|k| Route::Synthesis(k.clone()))
    }

    fn next_fault(&self, key: &str) -> Option<Fault> {
        let script = self.transcript.faults.get(key)?;
        let mut cursor = self.fault_cursor.lock().unwrap();
        let i = cursor.entry(key.to_string()).or_insert(0);
        let fault = script.get(*i).cloned();
        *i += 1;
        fault
    }
}

fn error(status: StatusCode, msg: &str) -> Response {
    (status, axum::Json(json!({"error": {"message": msg}}))).into_response()
}

fn completion(texts: impl Iterator<Item = String>) -> Response {
    let choices: Vec<Value> = texts
        .enumerate()
        .map(|(i, t)| json!({"index": i, "message": {"role": "assistant", "content": t}, "finish_reason": "stop"}))
        .collect();
    axum::Json(json!({"object": "chat.completion", "choices": choices})).into_response()
}

async fn chat(State(state): State<Arc<ServerState>>, body: Bytes) -> Response {
    let Ok(request) = serde_json::from_slice::<Value>(&body) else {
        return error(StatusCode::BAD_REQUEST, "body is not JSON");
    };
    state.requests.lock().unwrap().push(request.clone());
    let n = request["n"].as_u64().unwrap_or(1) as usize;
    let content = request["messages"]
        .as_array()
        .and_then(|m| m.iter().rev().find(|m| m["role"] == "user"))
        .and_then(|m| m["content"].as_str())
        .unwrap_or_default();
    let Some(route) = state.route(content) else {
        return error(StatusCode::NOT_FOUND, "no transcript entry for this request");
    };
    let key = match &route {
        Route::Rollouts(k) | Route::Synthesis(k) => k.clone(),
    };
    let mut count = n;
    match state.next_fault(&key) {
        Some(Fault::Status(s)) => {
            let status = StatusCode::from_u16(s).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
            return error(status, "scripted fault");
        }
        Some(Fault::Kind(kind)) if kind == "malformed" => {
            return (StatusCode::OK, "{\"choices\": [").into_response();
        }
        Some(Fault::Kind(kind)) if kind == "short" => count = n.saturating_sub(1),
        _ => {}
    }
    match route {
        Route::Rollouts(k) => {
            let canned = &state.transcript.rollouts[&k];
            if canned.is_empty() {
                return error(StatusCode::INTERNAL_SERVER_ERROR, "empty rollout transcript");
            }
            completion(canned.iter().cycle().take(count).cloned())
        }
        Route::Synthesis(k) => {
            let text = &state.transcript.synthesis[&k];
            completion(std::iter::repeat_n(text.clone(), count))
        }
    }
}

pub struct FixtureServer {
    pub addr: SocketAddr,
    state: Arc<ServerState>,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<std::io::Result<()>>,
}

impl FixtureServer {
    /// Serves `transcript` on an ephemeral localhost port.
    pub async fn start(transcript: Transcript) -> std::io::Result<Self> {
        Self::bind(transcript, SocketAddr::from(([127, 0, 0, 1], 0))).await
    }

    pub async fn bind(transcript: Transcript, addr: SocketAddr) -> std::io::Result<Self> {
        let state = Arc::new(ServerState {
            transcript,
            fault_cursor: Mutex::new(HashMap::new()),
            requests: Mutex::new(Vec::new()),
        });
        let app = Router::new()
            .route("/v1/chat/completions", post(chat))
            .route("/chat/completions", post(chat))
            .with_state(state.clone());
        let listener = TcpListener::bind(addr).await?;
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        let task = tokio::spawn(async move {
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    rx.await.ok();
                })
                .await
        });
        Ok(Self {
            addr,
            state,
            shutdown: Some(tx),
            task,
        })
    }

    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    /// Every JSON request body received so far, in arrival order.
    pub fn requests(&self) -> Vec<Value> {
        self.state.requests.lock().unwrap().clone()
    }

    /// Runs until the process is stopped.
    pub async fn wait(mut self) -> std::io::Result<()> {
        let _keep_open = self.shutdown.take();
        (&mut self.task).await.map_err(std::io::Error::other)?
    }

    pub async fn stop(mut self) -> std::io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        (&mut self.task).await.map_err(std::io::Error::other)?
    }
}
