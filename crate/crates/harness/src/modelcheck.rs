//! Exhaustive breadth-first exploration of one attestation session between a
//! requester and an issuer, with the network under adversary control.
//!
//! Actions: deliver any in-flight message (in any order), drop one, time a
//! party out, or inject a message into a party at its next sequence number.
//! Injected messages are replays of anything seen so far (including a prior
//! honest session) or forgeries by Mallory, an agent with a registered DID
//! whose credentials come from issuers the domain does not trust.
//!
//! Properties checked in every reachable state:
//! - a party that is AUTHENTICATED verified its peer's VP, and the peer
//!   verified its own;
//! - CRED_FULFILLMENT is only emitted when both VPs were verified and the
//!   issuer's authenticated peer is the requester;
//! - a requester that is DONE holds a credential from its issuer.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::sync::Arc;
use std::time::Instant;

use fabric_core::clock::LogicalClock;
use fabric_core::credentials::{issue_credential, VerifiableCredential, BASIC_CREDENTIAL, RICH_CREDENTIAL};
use fabric_core::crypto::{self, sha256, KeyPair};
use fabric_core::did::{new_self_certified_document, Did};
use fabric_core::domain::{agent_definition, deploy_domain, DomainConfig};
use fabric_core::ledger::{Ledger, LedgerApi};
use fabric_core::presentation::{present, Challenge, PresentationDefinition, NONCE_LEN};
use fabric_core::protocol::{
    ack_receipt_payload, attestation_step, thread_id_for, AbortBody, Application, AttestationPhase,
    AttestationState, AuthAck, AuthComplete, AuthRequest, AuthResponse, CredentialManifest, Event, Fulfillment,
    HandshakePhase, HandshakeState, ManifestBody, MessageKind, OutputDescriptor, PartyContext, ProtocolMessage,
};
use fabric_core::transport::InProcBinding;
use serde::Serialize;
use serde_json::{json, Value};
use uuid::Uuid;

use crate::world::{domain_seed, SetupError};

#[derive(Debug, Clone)]
pub struct ModelCheckConfig {
    pub max_depth: usize,
    pub seed: [u8; 32],
    /// Without the adversary only delivery order and timeouts vary.
    pub adversary: bool,
    /// Makes the issuer trust Mallory's credential issuer. Used to confirm
    /// the checker reports the resulting violations.
    pub trust_adversary: bool,
}

impl Default for ModelCheckConfig {
    fn default() -> Self {
        Self {
            max_depth: 12,
            seed: [0; 32],
            adversary: true,
            trust_adversary: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub property: &'static str,
    pub trace: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelCheckReport {
    pub max_depth: usize,
    pub states: usize,
    pub transitions: usize,
    pub party_states: usize,
    pub distinct_messages: usize,
    /// States in which both parties finished the attestation.
    pub completed_states: usize,
    /// States reached with a fulfilment on the wire.
    pub fulfilment_states: usize,
    pub violations: Vec<Violation>,
    pub elapsed_ms: u128,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Party {
    Requester,
    Issuer,
}

impl Party {
    fn other(self) -> Party {
        match self {
            Party::Requester => Party::Issuer,
            Party::Issuer => Party::Requester,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Party::Requester => "requester",
            Party::Issuer => "issuer",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Ev {
    Start,
    Timeout,
    Msg(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct Global {
    requester: u32,
    issuer: u32,
    /// In-flight messages with their addressee, sorted.
    bag: Vec<(Party, u32)>,
    /// Interned (kind, body) templates the adversary has observed.
    knowledge: BTreeSet<u32>,
    fulfilled: bool,
}

struct Node {
    global: Global,
    parent: Option<usize>,
    action: String,
    depth: usize,
}

/// Identity and signing material of the attacker.
struct Mallory {
    did: Did,
    keypair: KeyPair,
    credentials: Vec<VerifiableCredential>,
}

fn key(bytes: &[u8]) -> [u8; 32] {
    sha256(bytes)
}

fn canonical<T: Serialize>(value: &T) -> Vec<u8> {
    crypto::to_canonical_bytes(value).expect("canonicalizable")
}

fn body<T: Serialize>(value: T) -> Value {
    serde_json::to_value(value).expect("serializable")
}

struct Checker {
    requester_ctx: PartyContext,
    issuer_ctx: PartyContext,
    mallory: Mallory,
    thread: Uuid,
    states: Vec<AttestationState>,
    state_ids: HashMap<[u8; 32], u32>,
    messages: Vec<ProtocolMessage>,
    message_ids: HashMap<[u8; 32], u32>,
    templates: Vec<(MessageKind, Value)>,
    template_ids: HashMap<[u8; 32], u32>,
    forged: HashMap<u32, Vec<u32>>,
    statics: Vec<u32>,
    steps: HashMap<(u32, Ev), (u32, Vec<u32>)>,
}

impl Checker {
    fn intern_state(&mut self, state: AttestationState) -> u32 {
        let k = key(&canonical(&state));
        if let Some(id) = self.state_ids.get(&k) {
            return *id;
        }
        let id = self.states.len() as u32;
        self.states.push(state);
        self.state_ids.insert(k, id);
        id
    }

    fn intern_message(&mut self, msg: ProtocolMessage) -> u32 {
        let k = key(&canonical(&msg));
        if let Some(id) = self.message_ids.get(&k) {
            return *id;
        }
        let id = self.messages.len() as u32;
        self.messages.push(msg);
        self.message_ids.insert(k, id);
        id
    }

    fn intern_template(&mut self, kind: MessageKind, body: Value) -> u32 {
        let k = key(&canonical(&(kind, &body)));
        if let Some(id) = self.template_ids.get(&k) {
            return *id;
        }
        let id = self.templates.len() as u32;
        self.templates.push((kind, body));
        self.template_ids.insert(k, id);
        id
    }

    fn ctx(&self, party: Party) -> &PartyContext {
        match party {
            Party::Requester => &self.requester_ctx,
            Party::Issuer => &self.issuer_ctx,
        }
    }

    fn step(&mut self, party: Party, state: u32, ev: Ev) -> (u32, Vec<u32>) {
        if let Some(hit) = self.steps.get(&(state, ev)) {
            return hit.clone();
        }
        let event = match ev {
            Ev::Start => Event::Start,
            Ev::Timeout => Event::Timeout,
            Ev::Msg(m) => Event::Message(self.messages[m as usize].clone()),
        };
        let (next, out) = attestation_step(&self.states[state as usize], self.ctx(party), &event);
        let next = self.intern_state(next);
        let out: Vec<u32> = out.into_iter().map(|m| self.intern_message(m)).collect();
        self.steps.insert((state, ev), (next, out.clone()));
        (next, out)
    }

    fn mallory_presentation(&self, challenge: &Challenge, verifier: &Did, pd: &PresentationDefinition) -> Option<Value> {
        let now = self.requester_ctx.clock.now();
        let vp = present(
            &self.mallory.keypair,
            &self.mallory.did,
            &self.mallory.credentials,
            pd,
            challenge,
            verifier,
            now,
        )
        .ok()?;
        Some(body(vp))
    }

    fn mallory_challenge(&self, audience: Did, label: &str) -> Challenge {
        let digest = sha256(format!("{}|{label}", self.mallory.did).as_bytes());
        let mut nonce = [0u8; NONCE_LEN];
        nonce.copy_from_slice(&digest[..NONCE_LEN]);
        Challenge::new(nonce, audience, self.requester_ctx.clock.now())
    }

    /// Forgeries derived from an observed template.
    fn forge(&mut self, template: u32) -> Vec<u32> {
        if let Some(hit) = self.forged.get(&template) {
            return hit.clone();
        }
        let (kind, value) = self.templates[template as usize].clone();
        let mut out = Vec::new();
        match kind {
            MessageKind::AuthRequest => {
                if let Ok(req) = serde_json::from_value::<AuthRequest>(value) {
                    if let Some(vp) = self.mallory_presentation(&req.challenge, &req.did, &req.presentation_definition) {
                        let response = json!({
                            "vp": vp,
                            "challenge": self.mallory_challenge(req.did.clone(), "response"),
                            "presentation_definition": agent_definition(),
                        });
                        out.push((MessageKind::AuthResponse, response));
                    }
                }
            }
            MessageKind::AuthResponse => {
                if let Ok(resp) = serde_json::from_value::<AuthResponse>(value) {
                    if let Some(vp) =
                        self.mallory_presentation(&resp.challenge, &resp.vp.holder, &resp.presentation_definition)
                    {
                        out.push((MessageKind::AuthComplete, json!({ "vp": vp })));
                    }
                }
            }
            MessageKind::AuthComplete => {
                if let Ok(complete) = serde_json::from_value::<AuthComplete>(value) {
                    let payload = ack_receipt_payload(self.thread, "ok", &complete.vp.proof.jws.compact_form());
                    let receipt = crypto::sign_detached(&payload, &self.mallory.keypair).expect("signs");
                    out.push((MessageKind::AuthAck, body(AuthAck { status: "ok".into(), receipt })));
                }
            }
            MessageKind::CredManifest => {
                if let Ok(m) = serde_json::from_value::<ManifestBody>(value) {
                    out.push((MessageKind::CredApplication, body(Application { manifest_id: m.manifest.manifest_id })));
                }
            }
            _ => {}
        }
        let ids: Vec<u32> = out.into_iter().map(|(k, v)| self.intern_template(k, v)).collect();
        self.forged.insert(template, ids.clone());
        ids
    }

    fn static_forgeries(&mut self) -> Vec<u32> {
        let requester = self.requester_ctx.did.clone();
        let issuer = self.issuer_ctx.did.clone();
        let now = self.requester_ctx.clock.now();
        let manifest = CredentialManifest {
            manifest_id: format!("urn:uuid:{}", Uuid::from_u128(1)),
            issuer: self.mallory.did.clone(),
            output_descriptors: vec![OutputDescriptor {
                credential_type: RICH_CREDENTIAL.into(),
                claim_template: json!({"role": "admin"}).as_object().cloned().unwrap_or_default(),
            }],
            presentation_definition: agent_definition(),
        };
        let rogue_rvc = issue_credential(
            &self.mallory.keypair,
            &self.mallory.did,
            &requester,
            RICH_CREDENTIAL,
            json!({"role": "admin"}).as_object().cloned().unwrap_or_default(),
            now,
        )
        .expect("issues");
        let items = vec![
            (
                MessageKind::AuthRequest,
                body(AuthRequest {
                    did: self.mallory.did.clone(),
                    challenge: self.mallory_challenge(issuer, "request"),
                    presentation_definition: self.requester_ctx.definition.clone(),
                }),
            ),
            (MessageKind::CredManifestRequest, json!({})),
            (MessageKind::CredManifest, body(ManifestBody { manifest })),
            (
                MessageKind::CredApplication,
                body(Application {
                    manifest_id: format!("urn:uuid:{}", Uuid::from_u128(2)),
                }),
            ),
            (MessageKind::CredFulfillment, body(Fulfillment { credential: rogue_rvc })),
            (MessageKind::Abort, body(AbortBody { reason: "injected".into() })),
        ];
        items.into_iter().map(|(k, v)| self.intern_template(k, v)).collect()
    }

    fn state(&self, id: u32) -> &AttestationState {
        &self.states[id as usize]
    }

    fn party_state(&self, g: &Global, p: Party) -> u32 {
        match p {
            Party::Requester => g.requester,
            Party::Issuer => g.issuer,
        }
    }

    /// Applies `ev` to `party`, routes its output and updates knowledge.
    fn apply(&mut self, g: &Global, party: Party, ev: Ev) -> Option<(Global, bool)> {
        let before = self.party_state(g, party);
        let (after, out) = self.step(party, before, ev);
        let mut next = g.clone();
        match party {
            Party::Requester => next.requester = after,
            Party::Issuer => next.issuer = after,
        }
        let mut fulfilment_emitted = false;
        for m in out {
            let msg = self.messages[m as usize].clone();
            fulfilment_emitted |= msg.kind == MessageKind::CredFulfillment;
            next.bag.push((party.other(), m));
            let t = self.intern_template(msg.kind, msg.body);
            next.knowledge.insert(t);
        }
        next.bag.sort_unstable();
        next.fulfilled |= fulfilment_emitted;
        Some((next, fulfilment_emitted))
    }

    fn successors(&mut self, g: &Global, adversary: bool) -> Vec<(String, Global, bool)> {
        let mut out = Vec::new();
        let mut seen_bag = HashSet::new();
        for (idx, (to, m)) in g.bag.clone().into_iter().enumerate() {
            if !seen_bag.insert((to, m)) {
                continue;
            }
            let mut rest = g.clone();
            rest.bag.remove(idx);
            let kind = self.messages[m as usize].kind;
            if let Some((next, f)) = self.apply(&rest, to, Ev::Msg(m)) {
                out.push((format!("deliver {kind:?} to {}", to.name()), next, f));
            }
            if adversary {
                out.push((format!("drop {kind:?} to {}", to.name()), rest, false));
            }
        }
        for party in [Party::Requester, Party::Issuer] {
            let sid = self.party_state(g, party);
            if self.state(sid).phase.is_terminal() {
                continue;
            }
            if let Some((next, f)) = self.apply(g, party, Ev::Timeout) {
                out.push((format!("timeout {}", party.name()), next, f));
            }
            if !adversary {
                continue;
            }
            let mut candidates: BTreeSet<u32> = g.knowledge.clone();
            for t in g.knowledge.clone() {
                candidates.extend(self.forge(t));
            }
            candidates.extend(self.statics.iter().copied());
            let seq = self.state(sid).handshake.last_sequence + 1;
            for t in candidates {
                let (kind, body) = self.templates[t as usize].clone();
                let m = self.intern_message(ProtocolMessage {
                    thread_id: self.thread,
                    sequence: seq,
                    kind,
                    body,
                });
                if let Some((next, f)) = self.apply(g, party, Ev::Msg(m)) {
                    out.push((format!("inject {kind:?}#{t} to {}", party.name()), next, f));
                }
            }
        }
        out
    }

    fn check(&self, g: &Global, fulfilment_emitted: bool) -> Option<&'static str> {
        let r = self.state(g.requester);
        let i = self.state(g.issuer);
        let (rh, ih) = (&r.handshake, &i.handshake);
        let authenticated_soundly = |me: &HandshakeState, other: &HandshakeState| {
            me.phase != HandshakePhase::Authenticated
                || (me.inbound_verified && other.inbound_verified && me.peer.as_ref() == Some(&other.me))
        };
        if !authenticated_soundly(rh, ih) {
            return Some("requester authenticated without mutual verification");
        }
        if !authenticated_soundly(ih, rh) {
            return Some("issuer authenticated without mutual verification");
        }
        if fulfilment_emitted
            && !(ih.phase == HandshakePhase::Authenticated
                && ih.inbound_verified
                && rh.inbound_verified
                && ih.peer.as_ref() == Some(&rh.me))
        {
            return Some("fulfilment without both presentations verified");
        }
        if r.phase == AttestationPhase::Done
            && !(ih.inbound_verified
                && rh.inbound_verified
                && r.credential.as_ref().is_some_and(|c| c.issuer == ih.me && c.subject() == &rh.me))
        {
            return Some("requester accepted a credential outside a mutually authenticated session");
        }
        None
    }
}

fn build(config: &ModelCheckConfig, dir: &std::path::Path) -> Result<Checker, SetupError> {
    let ledger = Arc::new(Ledger::new());
    let clock = LogicalClock::new();
    let domain = deploy_domain(
        DomainConfig::new("A", domain_seed(&config.seed, "A")),
        ledger.clone(),
        &InProcBinding::new(),
        dir,
        clock.clone(),
    )?;
    let requester_ctx = domain.attestation_context(&domain.workers[0]);
    let mut issuer_ctx = domain.issuer_context();

    let mallory_kp = crypto::generate_keypair(&sha256(&[&config.seed[..], b"mallory"].concat())).expect("seed");
    let (mallory_did, mallory_doc) = new_self_certified_document(&mallory_kp, vec![]);
    ledger
        .register_signed(&mallory_doc, &mallory_kp)
        .map_err(|e| SetupError::Other(e.to_string()))?;
    let rogue_kp = crypto::generate_keypair(&sha256(&[&config.seed[..], b"rogue-org"].concat())).expect("seed");
    let (rogue_did, rogue_doc) = new_self_certified_document(&rogue_kp, vec![]);
    ledger
        .register_signed(&rogue_doc, &rogue_kp)
        .map_err(|e| SetupError::Other(e.to_string()))?;
    if config.trust_adversary {
        issuer_ctx
            .registry
            .trust(rogue_did.clone(), [BASIC_CREDENTIAL, RICH_CREDENTIAL], "rogue");
    }
    let now = clock.now();
    let rogue_claims = |v: Value| v.as_object().cloned().unwrap_or_default();
    let credentials = vec![
        issue_credential(&rogue_kp, &rogue_did, &mallory_did, BASIC_CREDENTIAL, rogue_claims(json!({"agent": true})), now)
            .map_err(|e| SetupError::Other(e.to_string()))?,
        issue_credential(
            &rogue_kp,
            &rogue_did,
            &mallory_did,
            RICH_CREDENTIAL,
            rogue_claims(json!({"role": "identity-issuer"})),
            now,
        )
        .map_err(|e| SetupError::Other(e.to_string()))?,
    ];

    let thread = thread_id_for(&sha256(&[&config.seed[..], b"thread"].concat()));
    Ok(Checker {
        requester_ctx,
        issuer_ctx,
        mallory: Mallory {
            did: mallory_did,
            keypair: mallory_kp,
            credentials,
        },
        thread,
        states: Vec::new(),
        state_ids: HashMap::new(),
        messages: Vec::new(),
        message_ids: HashMap::new(),
        templates: Vec::new(),
        template_ids: HashMap::new(),
        forged: HashMap::new(),
        statics: Vec::new(),
        steps: HashMap::new(),
    })
}

fn session_pair(checker: &Checker, thread: Uuid, seed: [u8; 32]) -> (AttestationState, AttestationState) {
    let mut rs = seed;
    rs[0] ^= 1;
    let requester = HandshakeState::initiator(thread, checker.requester_ctx.did.clone(), checker.issuer_ctx.did.clone(), seed);
    let issuer = HandshakeState::responder(thread, checker.issuer_ctx.did.clone(), rs);
    (AttestationState::requester(requester), AttestationState::issuer(issuer))
}

/// Runs an honest session on another thread; its messages seed the
/// adversary's knowledge.
fn prior_session(checker: &mut Checker, seed: [u8; 32]) -> BTreeSet<u32> {
    let thread = thread_id_for(&sha256(&[&seed[..], b"prior"].concat()));
    let (r, i) = session_pair(checker, thread, sha256(&[&seed[..], b"prior-seed"].concat()));
    let (r, i) = (checker.intern_state(r), checker.intern_state(i));
    let mut g = Global {
        requester: r,
        issuer: i,
        bag: Vec::new(),
        knowledge: BTreeSet::new(),
        fulfilled: false,
    };
    g = checker.apply(&g, Party::Requester, Ev::Start).expect("starts").0;
    while let Some((to, m)) = g.bag.first().copied() {
        g.bag.remove(0);
        g = checker.apply(&g, to, Ev::Msg(m)).expect("steps").0;
    }
    g.knowledge
}

pub fn model_check(config: &ModelCheckConfig) -> Result<ModelCheckReport, SetupError> {
    let started = Instant::now();
    let dir = tempfile::tempdir()?;
    let mut checker = build(config, dir.path())?;
    let knowledge = if config.adversary {
        checker.statics = checker.static_forgeries();
        prior_session(&mut checker, config.seed)
    } else {
        BTreeSet::new()
    };
    let (r, i) = session_pair(&checker, checker.thread, sha256(&[&config.seed[..], b"session"].concat()));
    let root = Global {
        requester: checker.intern_state(r),
        issuer: checker.intern_state(i),
        bag: Vec::new(),
        knowledge,
        fulfilled: false,
    };

    let mut nodes = vec![Node {
        global: root.clone(),
        parent: None,
        action: "init".into(),
        depth: 0,
    }];
    let mut visited: HashSet<Global> = HashSet::from([root]);
    let mut violations = Vec::new();
    let mut transitions = 0usize;
    let mut frontier = 0usize;
    while frontier < nodes.len() {
        let idx = frontier;
        frontier += 1;
        if nodes[idx].depth >= config.max_depth {
            continue;
        }
        let g = nodes[idx].global.clone();
        let mut succ = Vec::new();
        if checker.state(g.requester).handshake.phase == HandshakePhase::Start && g.bag.is_empty() {
            if let Some((next, f)) = checker.apply(&g, Party::Requester, Ev::Start) {
                succ.push(("start requester".to_string(), next, f));
            }
        }
        succ.extend(checker.successors(&g, config.adversary));
        for (action, next, fulfilment_emitted) in succ {
            transitions += 1;
            if let Some(property) = checker.check(&next, fulfilment_emitted) {
                let mut trace = vec![action.clone()];
                let mut at = Some(idx);
                while let Some(n) = at {
                    trace.push(nodes[n].action.clone());
                    at = nodes[n].parent;
                }
                trace.reverse();
                violations.push(Violation { property, trace });
            }
            if visited.insert(next.clone()) {
                nodes.push(Node {
                    global: next,
                    parent: Some(idx),
                    action,
                    depth: nodes[idx].depth + 1,
                });
            }
        }
    }

    let completed_states = visited
        .iter()
        .filter(|g| {
            checker.state(g.requester).phase == AttestationPhase::Done && checker.state(g.issuer).phase == AttestationPhase::Done
        })
        .count();
    Ok(ModelCheckReport {
        max_depth: config.max_depth,
        states: visited.len(),
        transitions,
        party_states: checker.states.len(),
        distinct_messages: checker.messages.len(),
        completed_states,
        fulfilment_states: visited.iter().filter(|g| g.fulfilled).count(),
        violations,
        elapsed_ms: started.elapsed().as_millis(),
    })
}
