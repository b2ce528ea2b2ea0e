//! Fault injection: single-point JSON mutations and message interceptors.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use fabric_core::clock::LogicalClock;
use fabric_core::credentials::{verify_credential, VerifiableCredential, BASIC_CREDENTIAL, RICH_CREDENTIAL};
use fabric_core::crypto::KeyPair;
use fabric_core::did::{Did, DidDocument};
use fabric_core::domain::{agent_definition, deploy_domain, DomainConfig};
use fabric_core::ledger::{Ledger, LedgerApi};
use fabric_core::presentation::{
    present, verify_presentation, Challenge, ChallengeStore, VerifiablePresentation, VerificationContext,
};
use fabric_core::protocol::{Application, MessageKind, ProtocolMessage};
use fabric_core::runtime::Interceptor;
use fabric_core::transport::InProcBinding;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde_json::Value;

use crate::world::{domain_seed, SetupError};

const ALPHABET: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_:.";

fn leaves(value: &Value, path: String, out: &mut Vec<String>) {
    match value {
        Value::Object(map) => map
            .iter()
            .for_each(|(k, v)| leaves(v, format!("{path}/{}", k.replace('~', "~0").replace('/', "~1")), out)),
        Value::Array(items) => items
            .iter()
            .enumerate()
            .for_each(|(i, v)| leaves(v, format!("{path}/{i}"), out)),
        Value::String(s) if s.is_empty() => {}
        Value::Null => {}
        _ => out.push(path),
    }
}

/// Changes exactly one scalar in `value`: one character of a string, a
/// boolean, or a number. Returns the JSON pointer of the changed leaf.
pub fn mutate_once<R: Rng + ?Sized>(value: &mut Value, rng: &mut R) -> Option<String> {
    let mut paths = Vec::new();
    leaves(value, String::new(), &mut paths);
    let path = paths.choose(rng)?.clone();
    let leaf = value.pointer_mut(&path)?;
    let replacement = match &*leaf {
        Value::String(s) => {
            let mut chars: Vec<char> = s.chars().collect();
            let i = rng.gen_range(0..chars.len());
            let replacement = loop {
                let c = ALPHABET[rng.gen_range(0..ALPHABET.len())] as char;
                if c != chars[i] {
                    break c;
                }
            };
            chars[i] = replacement;
            Value::String(chars.into_iter().collect())
        }
        Value::Bool(b) => Value::Bool(!*b),
        Value::Number(n) => Value::from(n.as_u64().map_or(0, |x| x.wrapping_add(1))),
        other => other.clone(),
    };
    *leaf = replacement;
    Some(path)
}

/// Mutates the `vp` of the first message of `kind`.
pub struct TamperOnce {
    kind: MessageKind,
    rng: ChaCha20Rng,
    done: bool,
    pub mutated: Arc<Mutex<Option<String>>>,
}

impl TamperOnce {
    pub fn new(kind: MessageKind, seed: [u8; 32]) -> Self {
        Self {
            kind,
            rng: ChaCha20Rng::from_seed(seed),
            done: false,
            mutated: Arc::default(),
        }
    }
}

impl Interceptor for TamperOnce {
    fn intercept(&mut self, _from: &str, _to: &str, mut msg: ProtocolMessage) -> Vec<ProtocolMessage> {
        if !self.done && msg.kind == self.kind {
            if let Some(vp) = msg.body.get_mut("vp") {
                self.done = true;
                *self.mutated.lock().expect("poisoned") = mutate_once(vp, &mut self.rng);
            }
        }
        vec![msg]
    }
}

/// Keeps a copy of every VP carried by AUTH_COMPLETE.
#[derive(Default)]
pub struct Recorder {
    pub presentations: Arc<Mutex<Vec<VerifiablePresentation>>>,
}

impl Interceptor for Recorder {
    fn intercept(&mut self, _from: &str, _to: &str, msg: ProtocolMessage) -> Vec<ProtocolMessage> {
        if msg.kind == MessageKind::AuthComplete {
            if let Some(vp) = msg.body.get("vp").and_then(|v| serde_json::from_value(v.clone()).ok()) {
                self.presentations.lock().expect("poisoned").push(vp);
            }
        }
        vec![msg]
    }
}

/// Suppresses AUTH_COMPLETE and sends CRED_APPLICATION in its place, as if
/// one-way authentication were enough to apply.
pub struct Downgrade;

impl Interceptor for Downgrade {
    fn intercept(&mut self, _from: &str, _to: &str, msg: ProtocolMessage) -> Vec<ProtocolMessage> {
        if msg.kind != MessageKind::AuthComplete {
            return vec![msg];
        }
        let application = Application {
            manifest_id: format!("urn:uuid:{}", uuid::Uuid::from_u128(0)),
        };
        vec![ProtocolMessage {
            kind: MessageKind::CredApplication,
            body: serde_json::to_value(application).expect("serializable"),
            ..msg
        }]
    }
}

/// Rotates `did`'s key on the ledger just before `sender` delivers its
/// AUTH_COMPLETE, so the presentation in flight is signed with a retired key.
pub struct RotateBeforeComplete {
    pub sender: String,
    pub did: Did,
    pub current: KeyPair,
    pub next: KeyPair,
    pub ledger: Arc<dyn LedgerApi>,
    pub rotated: Arc<Mutex<Option<u64>>>,
}

impl Interceptor for RotateBeforeComplete {
    fn intercept(&mut self, from: &str, _to: &str, msg: ProtocolMessage) -> Vec<ProtocolMessage> {
        let mut rotated = self.rotated.lock().expect("poisoned");
        if rotated.is_none() && from == self.sender && msg.kind == MessageKind::AuthComplete {
            if let Ok(doc) = self.ledger.resolve(&self.did) {
                let new_doc = DidDocument::single_key(self.did.clone(), &self.next, doc.services);
                if let Ok(receipt) = self.ledger.update_signed(&self.did, &new_doc, &self.current, None) {
                    *rotated = Some(receipt.version);
                }
            }
        }
        vec![msg]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TamperSummary {
    pub attempts: usize,
    pub rejections: usize,
    pub by_reason: BTreeMap<String, usize>,
    /// Mutations that verified anyway, as (target, pointer).
    pub accepted: Vec<(String, String)>,
}

/// Applies `n` random single mutations to a domain's credentials and to a
/// presentation built from them, verifying each mutant independently.
pub fn tamper_suite(seed: [u8; 32], n: usize) -> Result<TamperSummary, SetupError> {
    let dir = tempfile::tempdir()?;
    let ledger = Arc::new(Ledger::new());
    let clock = LogicalClock::new();
    let domain = deploy_domain(
        DomainConfig::new("A", domain_seed(&seed, "A")),
        ledger,
        &InProcBinding::new(),
        dir.path(),
        clock.clone(),
    )?;
    let worker = &domain.workers[0];
    let issuer = &domain.issuer;
    let resolver = domain.resolver(&issuer.label);
    let registry = &issuer.wallet.registry;
    let definition = agent_definition();

    let mut rng = ChaCha20Rng::from_seed(seed);
    let mut nonce = [0u8; 16];
    rng.fill_bytes(&mut nonce);
    let challenge = Challenge::new(nonce, worker.did.clone(), clock.now());
    let vp = present(
        &worker.wallet.keypair,
        &worker.did,
        &worker.wallet.credentials(),
        &definition,
        &challenge,
        &issuer.did,
        clock.now(),
    )
    .map_err(|e| SetupError::Other(e.to_string()))?;
    let credentials: Vec<VerifiableCredential> = worker
        .wallet
        .credentials_of_type(BASIC_CREDENTIAL)
        .chain(issuer.wallet.credentials_of_type(RICH_CREDENTIAL))
        .cloned()
        .collect();

    let check_vp = |vp: &VerifiablePresentation| {
        let guard = ChallengeStore::new();
        verify_presentation(
            vp,
            &VerificationContext {
                definition: &definition,
                expected_challenge: &challenge,
                verifier: &issuer.did,
                resolver: &resolver,
                registry,
                guard: &guard,
                now: clock.now(),
            },
        )
        .map(|_| ())
        .map_err(|r| r.code())
    };
    let check_vc = |vc: &VerifiableCredential| verify_credential(vc, &resolver, registry).map_err(|r| format!("vc-rejected({r})"));

    check_vp(&vp).map_err(|r| SetupError::Other(format!("honest presentation rejected: {r}")))?;
    for vc in &credentials {
        check_vc(vc).map_err(|r| SetupError::Other(format!("honest credential rejected: {r}")))?;
    }

    let vp_json = serde_json::to_value(&vp).expect("serializable");
    let vc_json: Vec<Value> = credentials.iter().map(|c| serde_json::to_value(c).expect("serializable")).collect();
    let mut summary = TamperSummary::default();
    for i in 0..n {
        let (target, mut doc) = if i % 2 == 0 {
            ("vp".to_string(), vp_json.clone())
        } else {
            let k = rng.gen_range(0..vc_json.len());
            (format!("vc{k}"), vc_json[k].clone())
        };
        let Some(pointer) = mutate_once(&mut doc, &mut rng) else {
            continue;
        };
        summary.attempts += 1;
        let verdict = if target == "vp" {
            serde_json::from_value::<VerifiablePresentation>(doc)
                .map_err(|_| "malformed".to_string())
                .and_then(|vp| check_vp(&vp))
        } else {
            serde_json::from_value::<VerifiableCredential>(doc)
                .map_err(|_| "malformed".to_string())
                .and_then(|vc| check_vc(&vc))
        };
        match verdict {
            Ok(()) => summary.accepted.push((target, pointer)),
            Err(reason) => {
                summary.rejections += 1;
                *summary.by_reason.entry(reason).or_default() += 1;
            }
        }
    }
    Ok(summary)
}
