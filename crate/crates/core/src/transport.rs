//! Message delivery: an A2A-style JSON-RPC envelope, agent cards, the
//! per-agent inbox that dispatches envelopes, and the in-process bus.
//!
//! Both bindings move the same serialized bytes through the same
//! [`Inbox::handle_rpc`], so the protocol layer cannot tell them apart.

use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use uuid::Uuid;

use crate::crypto;
use crate::did::Did;
use crate::protocol::{MessageKind, ProtocolMessage};

pub const JSONRPC_VERSION: &str = "2.0";
pub const METHOD_SEND: &str = "message/send";
pub const AGENT_ROLE: &str = "agent";
pub const DATA_PART: &str = "data";
pub const MUTUAL_AUTH_PROTOCOL: &str = "mutual-auth/1";
pub const ATTESTATION_PROTOCOL: &str = "attestation/1";
pub const AGENT_CARD_PATH: &str = "/.well-known/agent-card";
pub const RPC_PATH: &str = "/rpc";
/// DID-document service type naming an agent's message endpoint.
pub const ENDPOINT_SERVICE_TYPE: &str = "A2AEndpoint";

pub const ERR_MALFORMED: i64 = -32600;
pub const ERR_UNKNOWN_THREAD: i64 = -32001;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("connect: {0}")]
    Connect(String),
    #[error("timeout: {0}")]
    Timeout(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("malformed envelope: {0}")]
    Malformed(String),
    #[error("peer rejected message ({code}): {message}")]
    Rejected { code: i64, message: String },
    #[error("bind: {0}")]
    Bind(String),
}

impl TransportError {
    pub fn code(&self) -> &'static str {
        match self {
            TransportError::Connect(_) => "connect",
            TransportError::Timeout(_) => "timeout",
            TransportError::MalformedResponse(_) => "malformed-response",
            TransportError::Malformed(_) => "malformed",
            TransportError::Rejected { .. } => "rejected",
            TransportError::Bind(_) => "bind",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Part {
    pub kind: String,
    pub data: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct A2aMessage {
    pub role: String,
    pub message_id: Uuid,
    pub parts: Vec<Part>,
    pub context_id: Uuid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SendParams {
    pub message: A2aMessage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub jsonrpc: String,
    pub method: String,
    pub id: Value,
    pub params: SendParams,
}

impl Envelope {
    /// Wraps one protocol message. The message id is derived from the
    /// thread, sequence and kind, so identical runs produce identical ids.
    pub fn wrap(msg: &ProtocolMessage, request_id: impl Into<Value>) -> Self {
        let kind = serde_json::to_string(&msg.kind).expect("kind serializes");
        let seed = format!("{}|{}|{}", msg.thread_id, msg.sequence, kind);
        let digest = crypto::sha256(seed.as_bytes());
        let mut id = [0u8; 16];
        id.copy_from_slice(&digest[..16]);
        Self {
            jsonrpc: JSONRPC_VERSION.to_string(),
            method: METHOD_SEND.to_string(),
            id: request_id.into(),
            params: SendParams {
                message: A2aMessage {
                    role: AGENT_ROLE.to_string(),
                    message_id: Uuid::new_v8(id),
                    parts: vec![Part {
                        kind: DATA_PART.to_string(),
                        data: serde_json::to_value(msg).expect("protocol message serializes"),
                    }],
                    context_id: msg.thread_id,
                },
            },
        }
    }

    /// The embedded protocol message, if the envelope is well formed.
    pub fn protocol_message(&self) -> Result<ProtocolMessage, TransportError> {
        let bad = |why: &str| Err(TransportError::Malformed(why.to_string()));
        if self.jsonrpc != JSONRPC_VERSION {
            return bad("jsonrpc must be 2.0");
        }
        if self.method != METHOD_SEND {
            return bad("unsupported method");
        }
        let message = &self.params.message;
        if message.role != AGENT_ROLE {
            return bad("role must be agent");
        }
        let [part] = message.parts.as_slice() else {
            return bad("exactly one part required");
        };
        if part.kind != DATA_PART {
            return bad("part must be a data part");
        }
        let msg: ProtocolMessage = serde_json::from_value(part.data.clone())
            .map_err(|e| TransportError::Malformed(format!("data part: {e}")))?;
        if msg.thread_id != message.context_id {
            return bad("context_id differs from thread_id");
        }
        Ok(msg)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("envelope serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RpcError {
    pub code: i64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RpcResponse {
    pub jsonrpc: String,
    pub id: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<RpcError>,
}

impl RpcResponse {
    pub fn accepted(id: Value) -> Self {
        Self {
            jsonrpc: JSONRPC_VERSION.to_string(),
            id,
            result: Some(json!({ "status": "accepted" })),
            error: None,
        }
    }

    pub fn error(id: Value, code: i64, message: impl Into<String>) -> Self {
        Self {
            jsonrpc: JSONRPC_VERSION.to_string(),
            id,
            result: None,
            error: Some(RpcError {
                code,
                message: message.into(),
            }),
        }
    }

    /// Interprets a response body as a delivery receipt.
    pub fn into_receipt(self) -> Result<Receipt, TransportError> {
        if self.jsonrpc != JSONRPC_VERSION {
            return Err(TransportError::MalformedResponse("jsonrpc must be 2.0".into()));
        }
        match (self.result, self.error) {
            (_, Some(err)) => Err(TransportError::Rejected {
                code: err.code,
                message: err.message,
            }),
            (Some(result), None) if result.get("status").and_then(Value::as_str) == Some("accepted") => {
                Ok(Receipt { response_id: self.id })
            }
            _ => Err(TransportError::MalformedResponse("no accepted status".into())),
        }
    }
}

pub fn parse_response(bytes: &[u8]) -> Result<Receipt, TransportError> {
    serde_json::from_slice::<RpcResponse>(bytes)
        .map_err(|e| TransportError::MalformedResponse(e.to_string()))?
        .into_receipt()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub response_id: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentCard {
    pub name: String,
    pub did: Did,
    pub endpoint: String,
    pub supported_protocols: Vec<String>,
}

impl AgentCard {
    pub fn new(name: impl Into<String>, did: Did, endpoint: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            did,
            endpoint: endpoint.into(),
            supported_protocols: vec![MUTUAL_AUTH_PROTOCOL.to_string(), ATTESTATION_PROTOCOL.to_string()],
        }
    }

    pub fn validate(&self) -> Result<(), TransportError> {
        validate_endpoint(&self.endpoint)
    }

    /// Parses and validates a card document.
    pub fn from_json(bytes: &[u8]) -> Result<Self, TransportError> {
        let card: AgentCard =
            serde_json::from_slice(bytes).map_err(|e| TransportError::MalformedResponse(e.to_string()))?;
        card.validate()
            .map_err(|e| TransportError::MalformedResponse(e.to_string()))?;
        Ok(card)
    }
}

pub fn validate_endpoint(endpoint: &str) -> Result<(), TransportError> {
    let url = url::Url::parse(endpoint).map_err(|e| TransportError::Malformed(format!("{endpoint}: {e}")))?;
    match url.scheme() {
        "http" | "https" | "inproc" if url.host_str().is_some_and(|h| !h.is_empty()) => Ok(()),
        _ => Err(TransportError::Malformed(format!("{endpoint}: unsupported endpoint"))),
    }
}

/// Per-agent mailbox. Accepts an envelope when it opens a thread
/// (AUTH_REQUEST) or belongs to a thread the agent already knows.
#[derive(Debug, Default)]
pub struct Inbox {
    queue: Mutex<VecDeque<ProtocolMessage>>,
    threads: Mutex<HashSet<Uuid>>,
}

impl Inbox {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn register_thread(&self, thread_id: Uuid) {
        self.threads.lock().expect("inbox poisoned").insert(thread_id);
    }

    pub fn knows_thread(&self, thread_id: &Uuid) -> bool {
        self.threads.lock().expect("inbox poisoned").contains(thread_id)
    }

    pub fn pop(&self) -> Option<ProtocolMessage> {
        self.queue.lock().expect("inbox poisoned").pop_front()
    }

    pub fn len(&self) -> usize {
        self.queue.lock().expect("inbox poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Decodes one JSON-RPC request body and enqueues its message.
    pub fn handle_rpc(&self, body: &[u8]) -> RpcResponse {
        let raw: Value = match serde_json::from_slice(body) {
            Ok(v) => v,
            Err(e) => return RpcResponse::error(Value::Null, ERR_MALFORMED, format!("parse error: {e}")),
        };
        let id = raw.get("id").cloned().unwrap_or(Value::Null);
        let envelope: Envelope = match serde_json::from_value(raw) {
            Ok(env) => env,
            Err(e) => return RpcResponse::error(id, ERR_MALFORMED, format!("invalid envelope: {e}")),
        };
        let msg = match envelope.protocol_message() {
            Ok(msg) => msg,
            Err(e) => return RpcResponse::error(id, ERR_MALFORMED, e.to_string()),
        };
        {
            let mut threads = self.threads.lock().expect("inbox poisoned");
            if msg.kind == MessageKind::AuthRequest {
                threads.insert(msg.thread_id);
            } else if !threads.contains(&msg.thread_id) {
                return RpcResponse::error(id, ERR_UNKNOWN_THREAD, "unknown thread");
            }
        }
        self.queue.lock().expect("inbox poisoned").push_back(msg);
        RpcResponse::accepted(id)
    }
}

pub trait Transport: Send + Sync {
    fn name(&self) -> &'static str;

    /// Delivers an envelope at most once.
    fn send(&self, endpoint: &str, envelope: &Envelope) -> Result<Receipt, TransportError>;

    fn fetch_agent_card(&self, endpoint: &str) -> Result<AgentCard, TransportError>;
}

/// A transport plus the ability to host agents on it.
pub trait Binding: Send + Sync {
    fn transport(&self) -> Arc<dyn Transport>;

    /// Endpoint an agent of `domain` named `agent` will be reachable at.
    fn endpoint_for(&self, domain: &str, agent: &str) -> String;

    fn mount(&self, endpoint: &str, inbox: Arc<Inbox>, card: AgentCard) -> Result<(), TransportError>;
}

/// Checks the single-part invariant before anything is sent.
pub fn check_outgoing(envelope: &Envelope) -> Result<(), TransportError> {
    envelope.protocol_message().map(|_| ())
}

#[derive(Default)]
struct BusTable {
    inboxes: HashMap<String, Arc<Inbox>>,
    cards: HashMap<String, AgentCard>,
}

/// In-process binding: endpoints are `inproc://<domain>/<agent>`.
#[derive(Default)]
pub struct InProcBus {
    table: RwLock<BusTable>,
    requests: AtomicU64,
}

impl InProcBus {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }
}

impl Transport for InProcBus {
    fn name(&self) -> &'static str {
        "inproc"
    }

    fn send(&self, endpoint: &str, envelope: &Envelope) -> Result<Receipt, TransportError> {
        check_outgoing(envelope)?;
        let inbox = self
            .table
            .read()
            .expect("bus poisoned")
            .inboxes
            .get(endpoint)
            .cloned()
            .ok_or_else(|| TransportError::Connect(format!("no inbox at {endpoint}")))?;
        self.requests.fetch_add(1, Ordering::Relaxed);
        let response = inbox.handle_rpc(&envelope.to_bytes());
        parse_response(&serde_json::to_vec(&response).expect("response serializes"))
    }

    fn fetch_agent_card(&self, endpoint: &str) -> Result<AgentCard, TransportError> {
        self.table
            .read()
            .expect("bus poisoned")
            .cards
            .get(endpoint)
            .cloned()
            .ok_or_else(|| TransportError::Connect(format!("no agent at {endpoint}")))
    }
}

/// The bus is its own transport; this adapter lets an `Arc<InProcBus>` be handed
/// out as `Arc<dyn Transport>`.
pub struct InProcBinding(pub Arc<InProcBus>);

impl InProcBinding {
    pub fn new() -> Self {
        Self(InProcBus::new())
    }
}

impl Default for InProcBinding {
    fn default() -> Self {
        Self::new()
    }
}

impl Binding for InProcBinding {
    fn transport(&self) -> Arc<dyn Transport> {
        self.0.clone()
    }

    fn endpoint_for(&self, domain: &str, agent: &str) -> String {
        format!("inproc://{domain}/{agent}")
    }

    fn mount(&self, endpoint: &str, inbox: Arc<Inbox>, card: AgentCard) -> Result<(), TransportError> {
        validate_endpoint(endpoint)?;
        let mut table = self.0.table.write().expect("bus poisoned");
        if table.inboxes.contains_key(endpoint) {
            return Err(TransportError::Bind(format!("{endpoint} already mounted")));
        }
        table.inboxes.insert(endpoint.to_string(), inbox);
        table.cards.insert(endpoint.to_string(), card);
        Ok(())
    }
}
