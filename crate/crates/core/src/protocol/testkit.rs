//! Shared fixtures for protocol unit tests.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use serde_json::json;
use uuid::Uuid;

use super::*;
use crate::credentials::{
    issue_credential, ClaimPolicy, TrustScope, BASIC_CREDENTIAL, RICH_CREDENTIAL,
};
use crate::crypto::generate_keypair;
use crate::did::{new_off_ledger_document, new_self_certified_document, ResolverConfig};
use crate::ledger::{Ledger, LedgerApi};
use crate::presentation::InputDescriptor;

pub struct Pair {
    pub thread: Uuid,
    /// Worker: holds a bVC, asks for an rVC.
    pub a: PartyContext,
    /// Identity issuer: holds an rVC, asks for a bVC.
    pub b: PartyContext,
}

fn claims(v: serde_json::Value) -> Claims {
    v.as_object().unwrap().clone()
}

pub fn honest_pair() -> Pair {
    let ledger = Arc::new(Ledger::new());
    let clock = LogicalClock::new();
    let org_key = generate_keypair(&[40; 32]).unwrap();
    let (org, org_doc) = new_off_ledger_document(&org_key, vec![]);
    let register = |seed: u8| {
        let kp = generate_keypair(&[seed; 32]).unwrap();
        let (did, doc) = new_self_certified_document(&kp, vec![]);
        ledger.register_signed(&doc, &kp).unwrap();
        (kp, did)
    };
    let (worker_key, worker) = register(41);
    let (issuer_key, issuer) = register(42);
    let resolver = || {
        Arc::new(
            Resolver::new(
                ResolverConfig::new(ledger.clone())
                    .with_local_documents(BTreeMap::from([(org.clone(), org_doc.clone())])),
                clock.clone(),
            )
            .unwrap(),
        )
    };
    let mut registry = TrustRegistry::new(TrustScope::Intra);
    registry.trust(org.clone(), [BASIC_CREDENTIAL, RICH_CREDENTIAL], "orchestrator");
    registry.trust(issuer.clone(), [RICH_CREDENTIAL], "identity issuer");

    let bvc = issue_credential(&org_key, &org, &worker, BASIC_CREDENTIAL, claims(json!({"agent": true})), 0).unwrap();
    let issuer_rvc = issue_credential(
        &org_key,
        &org,
        &issuer,
        RICH_CREDENTIAL,
        claims(json!({"role": "identity-issuer", "authorizations": ["issue-rich-credentials"]})),
        0,
    )
    .unwrap();
    let a = PartyContext {
        did: worker,
        keypair: worker_key,
        credentials: vec![bvc],
        resolver: resolver(),
        registry: registry.clone(),
        definition: PresentationDefinition::new(
            "issuer-identity",
            vec![InputDescriptor::new("role", RICH_CREDENTIAL).with_claims(["role"])],
        ),
        clock: clock.clone(),
        issuance: None,
    };
    let policy = ClaimPolicy {
        required_fields: ["agent".to_string()].into(),
        ..Default::default()
    };
    let b = PartyContext {
        did: issuer,
        keypair: issuer_key,
        credentials: vec![issuer_rvc],
        resolver: resolver(),
        registry,
        definition: PresentationDefinition::new(
            "agent-basic",
            vec![InputDescriptor::new("agent", BASIC_CREDENTIAL).with_claims(["agent"])],
        ),
        clock,
        issuance: Some(IssuanceSettings {
            evaluator: Arc::new(policy),
            output: OutputDescriptor {
                credential_type: RICH_CREDENTIAL.into(),
                claim_template: claims(json!({"role": "travel-booking", "capabilities": ["quote", "book"]})),
            },
        }),
    };
    Pair {
        thread: Uuid::from_u128(7),
        a,
        b,
    }
}

/// Runs a handshake with in-order delivery; returns both states and every
/// message sent.
pub fn run_to_quiescence(
    pair: &Pair,
    init: HandshakeState,
    resp: HandshakeState,
) -> (HandshakeState, HandshakeState, Vec<ProtocolMessage>) {
    let (mut init, first) = handshake_step(&init, &pair.a, &Event::Start);
    let mut resp = resp;
    let mut wire = Vec::new();
    let mut queue: VecDeque<(bool, ProtocolMessage)> = first.into_iter().map(|m| (true, m)).collect();
    while let Some((to_responder, msg)) = queue.pop_front() {
        wire.push(msg.clone());
        let out = if to_responder {
            let (s, out) = handshake_step(&resp, &pair.b, &Event::Message(msg));
            resp = s;
            out
        } else {
            let (s, out) = handshake_step(&init, &pair.a, &Event::Message(msg));
            init = s;
            out
        };
        queue.extend(out.into_iter().map(|m| (!to_responder, m)));
    }
    (init, resp, wire)
}

pub fn attestation_pair(pair: &Pair) -> (AttestationState, AttestationState) {
    (
        AttestationState::requester(HandshakeState::initiator(pair.thread, pair.a.did.clone(), pair.b.did.clone(), [5; 32])),
        AttestationState::issuer(HandshakeState::responder(pair.thread, pair.b.did.clone(), [6; 32])),
    )
}

/// Runs an attestation, dropping messages for which `deliver` is false.
pub fn run_attestation(
    pair: &Pair,
    req: AttestationState,
    iss: AttestationState,
    deliver: impl Fn(&ProtocolMessage) -> bool,
) -> (AttestationState, AttestationState, Vec<ProtocolMessage>) {
    let (mut req, first) = attestation_step(&req, &pair.a, &Event::Start);
    let mut iss = iss;
    let mut wire = Vec::new();
    let mut queue: VecDeque<(bool, ProtocolMessage)> = first.into_iter().map(|m| (true, m)).collect();
    while let Some((to_issuer, msg)) = queue.pop_front() {
        wire.push(msg.clone());
        if !deliver(&msg) {
            continue;
        }
        let out = if to_issuer {
            let (s, out) = attestation_step(&iss, &pair.b, &Event::Message(msg));
            iss = s;
            out
        } else {
            let (s, out) = attestation_step(&req, &pair.a, &Event::Message(msg));
            req = s;
            out
        };
        queue.extend(out.into_iter().map(|m| (!to_issuer, m)));
    }
    (req, iss, wire)
}
