//! One axum listener hosting any number of agents under
//! `/agents/<domain>/<agent>` and, optionally, the ledger REST API.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use fabric_core::did::{Did, DidDocument};
use fabric_core::crypto::DetachedSignature;
use fabric_core::ledger::{LedgerApi, LedgerError};
use fabric_core::transport::{AgentCard, Inbox, TransportError};
use serde::{Deserialize, Serialize};
use tokio::sync::oneshot;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterRequest {
    pub document: DidDocument,
    pub signature: DetachedSignature,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateRequest {
    pub did: Did,
    pub document: DidDocument,
    pub signature: DetachedSignature,
    pub expected_version: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolutionResult {
    #[serde(rename = "didDocument")]
    pub did_document: DidDocument,
}

struct Hosted {
    inbox: Arc<Inbox>,
    card: AgentCard,
}

#[derive(Default)]
struct ServerState {
    agents: RwLock<HashMap<(String, String), Hosted>>,
    ledger: Option<Arc<dyn LedgerApi>>,
}

pub struct HttpServer {
    addr: SocketAddr,
    state: Arc<ServerState>,
    shutdown: Option<oneshot::Sender<()>>,
    runtime: Option<tokio::runtime::Runtime>,
}

impl HttpServer {
    /// Binds `addr` (port 0 picks a free port) and serves on a background runtime.
    pub fn start(addr: SocketAddr, ledger: Option<Arc<dyn LedgerApi>>) -> Result<Self, TransportError> {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .map_err(|e| TransportError::Bind(e.to_string()))?;
        let listener = runtime
            .block_on(tokio::net::TcpListener::bind(addr))
            .map_err(|e| TransportError::Bind(format!("{addr}: {e}")))?;
        let addr = listener.local_addr().map_err(|e| TransportError::Bind(e.to_string()))?;
        let state = Arc::new(ServerState {
            agents: RwLock::default(),
            ledger,
        });
        let app = router(state.clone());
        let (tx, rx) = oneshot::channel::<()>();
        runtime.spawn(async move {
            let shutdown = async {
                rx.await.ok();
            };
            if let Err(e) = axum::serve(listener, app).with_graceful_shutdown(shutdown).await {
                tracing::error!("http server stopped: {e}");
            }
        });
        tracing::debug!("listening on {addr}");
        Ok(Self {
            addr,
            state,
            shutdown: Some(tx),
            runtime: Some(runtime),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn host(&self, domain: &str, agent: &str, inbox: Arc<Inbox>, card: AgentCard) -> Result<(), TransportError> {
        let mut agents = self.state.agents.write().expect("agent table poisoned");
        let key = (domain.to_string(), agent.to_string());
        if agents.contains_key(&key) {
            return Err(TransportError::Bind(format!("{domain}/{agent} already hosted")));
        }
        agents.insert(key, Hosted { inbox, card });
        Ok(())
    }

    /// Blocks the calling thread until the process is killed.
    pub fn wait(mut self) {
        if let Some(rt) = self.runtime.take() {
            rt.block_on(std::future::pending::<()>());
        }
    }
}

impl Drop for HttpServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(rt) = self.runtime.take() {
            rt.shutdown_background();
        }
    }
}

fn router(state: Arc<ServerState>) -> Router {
    Router::new()
        .route("/agents/{domain}/{agent}/rpc", post(rpc))
        .route("/agents/{domain}/{agent}/.well-known/agent-card", get(agent_card))
        .route("/1.0/identifiers/{did}", get(resolve))
        .route("/history/{did}", get(history))
        .route("/register", post(register))
        .route("/update", post(update))
        .with_state(state)
}

type Shared = State<Arc<ServerState>>;

async fn rpc(State(state): Shared, Path((domain, agent)): Path<(String, String)>, body: Bytes) -> Response {
    let inbox = {
        let agents = state.agents.read().expect("agent table poisoned");
        agents.get(&(domain, agent)).map(|h| h.inbox.clone())
    };
    match inbox {
        Some(inbox) => Json(inbox.handle_rpc(&body)).into_response(),
        None => StatusCode::NOT_FOUND.into_response(),
    }
}

async fn agent_card(State(state): Shared, Path((domain, agent)): Path<(String, String)>) -> Response {
    let agents = state.agents.read().expect("agent table poisoned");
    match agents.get(&(domain, agent)) {
        Some(h) => Json(h.card.clone()).into_response(),
        None => StatusCode::NOT_FOUND.into_response(),
    }
}

fn ledger_error(err: LedgerError) -> Response {
    let status = match &err {
        LedgerError::UnknownDid(_) => StatusCode::NOT_FOUND,
        LedgerError::AlreadyRegistered(_) | LedgerError::StaleVersion { .. } => StatusCode::CONFLICT,
        LedgerError::BadSignature => StatusCode::UNAUTHORIZED,
        LedgerError::SelfCertificationMismatch | LedgerError::InvalidDocument(_) => StatusCode::BAD_REQUEST,
        LedgerError::Unavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
        LedgerError::Journal(_) => StatusCode::INTERNAL_SERVER_ERROR,
    };
    (status, Json(err)).into_response()
}

fn with_ledger<T: Serialize>(state: &ServerState, f: impl FnOnce(&dyn LedgerApi) -> Result<T, LedgerError>) -> Response {
    match &state.ledger {
        None => ledger_error(LedgerError::Unavailable("no ledger on this server".into())),
        Some(ledger) => match f(ledger.as_ref()) {
            Ok(value) => Json(value).into_response(),
            Err(e) => ledger_error(e),
        },
    }
}

fn parse_did(text: &str) -> Result<Did, LedgerError> {
    text.parse::<Did>().map_err(|e| LedgerError::InvalidDocument(e.to_string()))
}

async fn resolve(State(state): Shared, Path(did): Path<String>) -> Response {
    with_ledger(&state, |ledger| {
        let did_document = ledger.resolve(&parse_did(&did)?)?;
        Ok(ResolutionResult { did_document })
    })
}

async fn history(State(state): Shared, Path(did): Path<String>) -> Response {
    with_ledger(&state, |ledger| ledger.history(&parse_did(&did)?))
}

async fn register(State(state): Shared, body: Bytes) -> Response {
    with_ledger(&state, |ledger| {
        let req: RegisterRequest =
            serde_json::from_slice(&body).map_err(|e| LedgerError::InvalidDocument(e.to_string()))?;
        ledger.register(&req.document, &req.signature)
    })
}

async fn update(State(state): Shared, body: Bytes) -> Response {
    with_ledger(&state, |ledger| {
        let req: UpdateRequest =
            serde_json::from_slice(&body).map_err(|e| LedgerError::InvalidDocument(e.to_string()))?;
        ledger.update(&req.did, &req.document, &req.signature, req.expected_version)
    })
}
