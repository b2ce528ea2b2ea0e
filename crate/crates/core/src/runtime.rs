//! Synchronous driver: hosts agents on a binding, routes envelopes to their
//! sessions, and records state traces and wire metrics.
//!
//! Each agent processes its inbox strictly in order. When every inbox is
//! empty, open sessions receive a timeout; failures are terminal.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use uuid::Uuid;

use crate::credentials::{Claims, VerifiableCredential};
use crate::crypto;
use crate::did::Did;
use crate::protocol::{
    attestation_step, handshake_step, reasons, AttestationRole, thread_id_for, AttestationPhase, AttestationState, AuthRequest,
    Event, HandshakePhase, HandshakeState, MessageKind, PartyContext, ProtocolMessage, SessionSeed,
};
use crate::transport::{AgentCard, Binding, Envelope, Inbox, Transport, TransportError, ENDPOINT_SERVICE_TYPE};
use crate::wallet::{add_credential, Wallet};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("no agent labelled {0}")]
    UnknownAgent(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionKind {
    Handshake,
    Attestation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "machine", content = "state", rename_all = "lowercase")]
#[allow(clippy::large_enum_variant)]
pub enum Session {
    Handshake(HandshakeState),
    Attestation(AttestationState),
}

impl Session {
    pub fn initiator(kind: SessionKind, handshake: HandshakeState) -> Self {
        match kind {
            SessionKind::Handshake => Session::Handshake(handshake),
            SessionKind::Attestation => Session::Attestation(AttestationState::requester(handshake)),
        }
    }

    pub fn responder(kind: SessionKind, handshake: HandshakeState) -> Self {
        match kind {
            SessionKind::Handshake => Session::Handshake(handshake),
            SessionKind::Attestation => Session::Attestation(AttestationState::issuer(handshake)),
        }
    }

    pub fn step(&self, ctx: &PartyContext, event: &Event) -> (Session, Vec<ProtocolMessage>) {
        match self {
            Session::Handshake(s) => {
                let (s, out) = handshake_step(s, ctx, event);
                (Session::Handshake(s), out)
            }
            Session::Attestation(s) => {
                let (s, out) = attestation_step(s, ctx, event);
                (Session::Attestation(s), out)
            }
        }
    }

    pub fn handshake(&self) -> &HandshakeState {
        match self {
            Session::Handshake(s) => s,
            Session::Attestation(s) => &s.handshake,
        }
    }

    pub fn is_terminal(&self) -> bool {
        match self {
            Session::Handshake(s) => s.phase.is_terminal(),
            Session::Attestation(s) => s.phase.is_terminal(),
        }
    }

    /// Authenticated (handshake) or done (attestation).
    pub fn completed(&self) -> bool {
        match self {
            Session::Handshake(s) => s.phase == HandshakePhase::Authenticated,
            Session::Attestation(s) => s.phase == AttestationPhase::Done,
        }
    }

    pub fn failure(&self) -> Option<&str> {
        match self {
            Session::Handshake(s) => s.phase.failure(),
            Session::Attestation(s) => s.phase.failure(),
        }
    }

    pub fn credential(&self) -> Option<&VerifiableCredential> {
        match self {
            Session::Attestation(s) => s.credential.as_ref(),
            Session::Handshake(_) => None,
        }
    }

    /// Fails the session locally, without telling the peer.
    fn fail_local(&mut self, reason: &str) {
        if self.is_terminal() {
            return;
        }
        match self {
            Session::Handshake(s) => s.phase = HandshakePhase::Failed(reason.to_string()),
            Session::Attestation(s) => {
                s.phase = AttestationPhase::Failed(reason.to_string());
                if !s.handshake.phase.is_terminal() {
                    s.handshake.phase = HandshakePhase::Failed(reason.to_string());
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub agent: String,
    pub thread_id: Uuid,
    pub event: String,
    pub session: Session,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRecord {
    pub from: String,
    pub to: String,
    pub thread_id: Uuid,
    pub kind: MessageKind,
    pub sequence: u64,
    pub bytes: usize,
    pub latency_us: u64,
    pub error: Option<String>,
}

/// Man-in-the-middle hook over every outgoing message. Returns what is
/// actually sent to `to`.
pub trait Interceptor: Send {
    fn intercept(&mut self, from: &str, to: &str, msg: ProtocolMessage) -> Vec<ProtocolMessage>;
}

pub struct Passthrough;

impl Interceptor for Passthrough {
    fn intercept(&mut self, _from: &str, _to: &str, msg: ProtocolMessage) -> Vec<ProtocolMessage> {
        vec![msg]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionOutcome {
    pub thread_id: Uuid,
    pub completed: bool,
    pub failure: Option<String>,
    pub peer: Option<Did>,
    pub peer_claims: Claims,
    pub credential: Option<VerifiableCredential>,
}

/// An agent as the network sees it.
pub struct AgentSpec {
    pub label: String,
    pub card: AgentCard,
    /// Context and machine used when a peer opens a thread with this agent.
    pub responder: Option<(PartyContext, SessionKind)>,
    /// Receives credentials obtained through attestation.
    pub wallet: Option<Wallet>,
}

struct Slot {
    session: Session,
    ctx: PartyContext,
    peer_endpoint: Option<String>,
}

struct Agent {
    label: String,
    endpoint: String,
    inbox: Arc<Inbox>,
    responder: Option<(PartyContext, SessionKind)>,
    wallet: Option<Wallet>,
    sessions: BTreeMap<Uuid, Slot>,
}

pub struct Network {
    transport: Arc<dyn Transport>,
    agents: Vec<Agent>,
    run_seed: [u8; 32],
    started: u64,
    requests: u64,
    interceptor: Box<dyn Interceptor>,
    trace: Vec<TraceEntry>,
    wire: Vec<WireRecord>,
}

fn derive_seed(run_seed: &[u8; 32], label: &str) -> SessionSeed {
    let mut input = run_seed.to_vec();
    input.extend_from_slice(label.as_bytes());
    crypto::sha256(&input)
}

fn event_label(event: &Event) -> String {
    match event {
        Event::Start => "start".into(),
        Event::Timeout => "timeout".into(),
        Event::Message(m) => serde_json::to_value(m.kind)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default(),
    }
}

impl Network {
    pub fn new(transport: Arc<dyn Transport>, run_seed: [u8; 32]) -> Self {
        Self {
            transport,
            agents: Vec::new(),
            run_seed,
            started: 0,
            requests: 0,
            interceptor: Box::new(Passthrough),
            trace: Vec::new(),
            wire: Vec::new(),
        }
    }

    pub fn set_interceptor(&mut self, interceptor: Box<dyn Interceptor>) {
        self.interceptor = interceptor;
    }

    pub fn transport_name(&self) -> &'static str {
        self.transport.name()
    }

    pub fn add_agent(&mut self, binding: &dyn Binding, spec: AgentSpec) -> Result<(), RuntimeError> {
        let inbox = Inbox::new();
        binding.mount(&spec.card.endpoint, inbox.clone(), spec.card.clone())?;
        self.agents.push(Agent {
            label: spec.label,
            endpoint: spec.card.endpoint,
            inbox,
            responder: spec.responder,
            wallet: spec.wallet,
            sessions: BTreeMap::new(),
        });
        Ok(())
    }

    fn agent_index(&self, label: &str) -> Result<usize, RuntimeError> {
        self.agents
            .iter()
            .position(|a| a.label == label)
            .ok_or_else(|| RuntimeError::UnknownAgent(label.to_string()))
    }

    pub fn set_responder(&mut self, label: &str, ctx: PartyContext, kind: SessionKind) -> Result<(), RuntimeError> {
        let idx = self.agent_index(label)?;
        self.agents[idx].responder = Some((ctx, kind));
        Ok(())
    }

    pub fn wallet(&self, label: &str) -> Option<&Wallet> {
        self.agents.iter().find(|a| a.label == label)?.wallet.as_ref()
    }

    pub fn endpoint(&self, label: &str) -> Option<&str> {
        self.agents.iter().find(|a| a.label == label).map(|a| a.endpoint.as_str())
    }

    /// Opens a session from `label` to the agent at `peer_endpoint`, whose
    /// DID is learned from its agent card.
    pub fn start(
        &mut self,
        label: &str,
        ctx: PartyContext,
        kind: SessionKind,
        peer_endpoint: &str,
    ) -> Result<Uuid, RuntimeError> {
        let idx = self.agent_index(label)?;
        let card = self.transport.fetch_agent_card(peer_endpoint)?;
        self.started += 1;
        let seed = derive_seed(&self.run_seed, &format!("initiator|{label}|{}", self.started));
        let thread_id = thread_id_for(&seed);
        let handshake = HandshakeState::initiator(thread_id, ctx.did.clone(), card.did, seed);
        let agent = &mut self.agents[idx];
        agent.inbox.register_thread(thread_id);
        agent.sessions.insert(
            thread_id,
            Slot {
                session: Session::initiator(kind, handshake),
                ctx,
                peer_endpoint: Some(card.endpoint),
            },
        );
        self.step(idx, thread_id, &Event::Start);
        Ok(thread_id)
    }

    /// Processes messages until every inbox is empty and no session changes
    /// on timeout.
    pub fn run(&mut self) {
        loop {
            let mut progressed = false;
            for idx in 0..self.agents.len() {
                while let Some(msg) = self.agents[idx].inbox.pop() {
                    progressed = true;
                    self.deliver(idx, msg);
                }
            }
            if progressed {
                continue;
            }
            let mut changed = false;
            for idx in 0..self.agents.len() {
                let open: Vec<Uuid> = self.agents[idx]
                    .sessions
                    .iter()
                    .filter(|(_, s)| !s.session.is_terminal())
                    .map(|(id, _)| *id)
                    .collect();
                for thread in open {
                    changed |= self.step(idx, thread, &Event::Timeout);
                }
            }
            if !changed {
                break;
            }
        }
    }

    fn deliver(&mut self, idx: usize, msg: ProtocolMessage) {
        let thread = msg.thread_id;
        if !self.agents[idx].sessions.contains_key(&thread) {
            if msg.kind != MessageKind::AuthRequest {
                return;
            }
            let Some((ctx, kind)) = self.agents[idx].responder.clone() else {
                return;
            };
            let peer_endpoint = msg
                .decode::<AuthRequest>()
                .and_then(|req| lookup_endpoint(&ctx, &req.did));
            let seed = derive_seed(&self.run_seed, &format!("responder|{}|{thread}", self.agents[idx].label));
            let handshake = HandshakeState::responder(thread, ctx.did.clone(), seed);
            self.agents[idx].sessions.insert(
                thread,
                Slot {
                    session: Session::responder(kind, handshake),
                    ctx,
                    peer_endpoint,
                },
            );
        }
        self.step(idx, thread, &Event::Message(msg));
    }

    /// Steps one session, records the trace, stores obtained credentials and
    /// sends the output. Returns whether the state changed.
    fn step(&mut self, idx: usize, thread: Uuid, event: &Event) -> bool {
        let agent = &mut self.agents[idx];
        let Some(slot) = agent.sessions.get_mut(&thread) else {
            return false;
        };
        let (next, out) = slot.session.step(&slot.ctx, event);
        let changed = next != slot.session;
        if changed {
            self.trace.push(TraceEntry {
                agent: agent.label.clone(),
                thread_id: thread,
                event: event_label(event),
                session: next.clone(),
            });
        }
        let newly_done = !slot.session.completed() && next.completed();
        slot.session = next;
        if newly_done {
            if let (Session::Attestation(s), Some(wallet)) = (&slot.session, agent.wallet.as_mut()) {
                if let (Some(vc), AttestationRole::Requester) = (&s.credential, s.role) {
                    if add_credential(wallet, vc.clone(), &slot.ctx.resolver).is_err() {
                        slot.session.fail_local(reasons::BAD_FULFILLMENT);
                    }
                }
            }
        }
        let peer_endpoint = slot.peer_endpoint.clone();
        let from = agent.label.clone();
        for msg in out {
            self.send(idx, &from, peer_endpoint.as_deref(), msg);
        }
        changed
    }

    fn send(&mut self, idx: usize, from: &str, to: Option<&str>, msg: ProtocolMessage) {
        let Some(to) = to else {
            self.record(from, "", &msg, 0, 0, Some("no-endpoint".into()));
            return;
        };
        for msg in self.interceptor.intercept(from, to, msg) {
            self.requests += 1;
            let envelope = Envelope::wrap(&msg, Value::String(format!("req-{}", self.requests)));
            let bytes = envelope.to_bytes().len();
            let t0 = Instant::now();
            let result = self.transport.send(to, &envelope);
            let latency = t0.elapsed().as_micros() as u64;
            match result {
                Ok(_) => self.record(from, to, &msg, bytes, latency, None),
                Err(err) => {
                    self.record(from, to, &msg, bytes, latency, Some(err.to_string()));
                    if matches!(
                        err,
                        TransportError::Connect(_) | TransportError::Timeout(_) | TransportError::MalformedResponse(_)
                    ) {
                        if let Some(slot) = self.agents[idx].sessions.get_mut(&msg.thread_id) {
                            slot.session.fail_local(reasons::TRANSPORT);
                        }
                    }
                }
            }
        }
    }

    fn record(&mut self, from: &str, to: &str, msg: &ProtocolMessage, bytes: usize, latency_us: u64, error: Option<String>) {
        self.wire.push(WireRecord {
            from: from.to_string(),
            to: to.to_string(),
            thread_id: msg.thread_id,
            kind: msg.kind,
            sequence: msg.sequence,
            bytes,
            latency_us,
            error,
        });
    }

    /// Sends `msg` to `endpoint` outside any session, as an attacker would.
    pub fn inject(&mut self, endpoint: &str, msg: ProtocolMessage) -> Result<(), TransportError> {
        self.requests += 1;
        let envelope = Envelope::wrap(&msg, Value::String(format!("inject-{}", self.requests)));
        let result = self.transport.send(endpoint, &envelope);
        self.record("injected", endpoint, &msg, envelope.to_bytes().len(), 0, result.as_ref().err().map(|e| e.to_string()));
        result.map(|_| ())
    }

    pub fn session(&self, label: &str, thread: Uuid) -> Option<&Session> {
        self.agents.iter().find(|a| a.label == label)?.sessions.get(&thread).map(|s| &s.session)
    }

    /// The session `label` holds on `thread`, as an outcome summary.
    pub fn outcome(&self, label: &str, thread: Uuid) -> Option<SessionOutcome> {
        let session = self.session(label, thread)?;
        let hs = session.handshake();
        Some(SessionOutcome {
            thread_id: thread,
            completed: session.completed(),
            failure: session.failure().map(str::to_string),
            peer: hs.peer.clone(),
            peer_claims: hs.peer_claims.clone(),
            credential: session.credential().cloned(),
        })
    }

    /// Sessions every agent holds, by agent label.
    pub fn sessions(&self) -> Vec<(String, Uuid, Session)> {
        self.agents
            .iter()
            .flat_map(|a| a.sessions.iter().map(|(id, s)| (a.label.clone(), *id, s.session.clone())))
            .collect()
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    pub fn wire(&self) -> &[WireRecord] {
        &self.wire
    }

    /// Protocol messages accepted by a peer's inbox.
    pub fn delivered_messages(&self) -> usize {
        self.wire.iter().filter(|w| w.error.is_none()).count()
    }

    pub fn bytes_on_wire(&self) -> usize {
        self.wire.iter().map(|w| w.bytes).sum()
    }
}

/// Endpoint of `did` from its DID document's message service.
fn lookup_endpoint(ctx: &PartyContext, did: &Did) -> Option<String> {
    let doc = ctx.resolver.resolve(did).ok()?;
    let endpoint = doc
        .services
        .iter()
        .find(|s| s.service_type == ENDPOINT_SERVICE_TYPE)
        .map(|s| s.endpoint.clone());
    endpoint
}
