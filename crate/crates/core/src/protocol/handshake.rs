//! Four-message mutual authentication.

use std::cell::Cell;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use uuid::Uuid;

use super::{
    derive_bytes, reasons, AbortBody, AuthAck, AuthComplete, AuthRequest, AuthResponse, Event, MessageKind,
    PartyContext, ProtocolMessage, SessionSeed,
};
use crate::credentials::Claims;
use crate::crypto::{self, DetachedSignature};
use crate::did::Did;
use crate::presentation::{
    present, verify_presentation, AcceptedPresentation, Challenge, ChallengeGuard, PresentationError,
    PresentationRejection, VerificationContext,
    VerifiablePresentation, NONCE_LEN,
};

pub const ACK_OK: &str = "ok";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Initiator,
    Responder,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE", tag = "phase", content = "reason")]
pub enum HandshakePhase {
    Start,
    AwaitResponse,
    AwaitComplete,
    AwaitAck,
    Authenticated,
    Failed(String),
}

impl HandshakePhase {
    pub fn is_terminal(&self) -> bool {
        matches!(self, HandshakePhase::Authenticated | HandshakePhase::Failed(_))
    }

    pub fn failure(&self) -> Option<&str> {
        match self {
            HandshakePhase::Failed(r) => Some(r),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HandshakeState {
    pub thread_id: Uuid,
    pub role: Role,
    pub phase: HandshakePhase,
    pub me: Did,
    /// Initiator: the party it addressed. Responder: the DID the request claimed.
    pub expected_peer: Option<Did>,
    pub issued_challenge: Option<Challenge>,
    pub challenge_consumed: bool,
    /// Set only once the peer's VP has verified.
    pub peer: Option<Did>,
    pub peer_claims: Claims,
    pub inbound_verified: bool,
    pub outbound_acknowledged: bool,
    /// Signature of the VP this party sent, bound into the ACK receipt.
    pub outbound_proof: Option<String>,
    pub last_sequence: u64,
    #[serde(with = "super::serde_seed")]
    pub session_seed: SessionSeed,
}

impl HandshakeState {
    pub fn initiator(thread_id: Uuid, me: Did, peer: Did, session_seed: SessionSeed) -> Self {
        Self::new(thread_id, Role::Initiator, me, Some(peer), session_seed)
    }

    pub fn responder(thread_id: Uuid, me: Did, session_seed: SessionSeed) -> Self {
        Self::new(thread_id, Role::Responder, me, None, session_seed)
    }

    fn new(thread_id: Uuid, role: Role, me: Did, expected_peer: Option<Did>, session_seed: SessionSeed) -> Self {
        Self {
            thread_id,
            role,
            phase: HandshakePhase::Start,
            me,
            expected_peer,
            issued_challenge: None,
            challenge_consumed: false,
            peer: None,
            peer_claims: Claims::new(),
            inbound_verified: false,
            outbound_acknowledged: false,
            outbound_proof: None,
            last_sequence: 0,
            session_seed,
        }
    }

    pub fn is_authenticated(&self) -> bool {
        self.phase == HandshakePhase::Authenticated
    }

    pub(crate) fn emit(&mut self, kind: MessageKind, body: Value) -> ProtocolMessage {
        self.last_sequence += 1;
        ProtocolMessage {
            thread_id: self.thread_id,
            sequence: self.last_sequence,
            kind,
            body,
        }
    }

    /// Moves to `Failed(reason)` and returns the ABORT announcing it.
    pub(crate) fn fail(&mut self, reason: impl Into<String>) -> Vec<ProtocolMessage> {
        let reason = reason.into();
        self.phase = HandshakePhase::Failed(reason.clone());
        vec![self.emit(MessageKind::Abort, json!({ "reason": reason }))]
    }

    fn challenge_for(&self, audience: Did, now: u64) -> Challenge {
        Challenge::new(derive_bytes::<NONCE_LEN>(&self.session_seed, "challenge"), audience, now)
    }
}

/// Guard backed by the state's own single-use flag.
struct StateGuard<'a>(&'a Cell<bool>);

impl ChallengeGuard for StateGuard<'_> {
    fn consume(&self, _nonce: &str) -> bool {
        !self.0.replace(true)
    }
}

/// Bytes an AUTH_ACK receipt signs.
pub fn ack_receipt_payload(thread_id: Uuid, status: &str, vp_proof: &str) -> Vec<u8> {
    crypto::canonicalize(&json!({
        "thread_id": thread_id.to_string(),
        "status": status,
        "vp_proof": vp_proof,
    }))
    .expect("ack receipt payload is plain JSON")
}

fn presentation_failure(err: PresentationError) -> String {
    match err {
        PresentationError::Unsatisfiable(_) => reasons::UNSATISFIABLE.to_string(),
        PresentationError::ExpiredChallenge => "bad-challenge".to_string(),
        _ => reasons::PROTOCOL_ERROR.to_string(),
    }
}

/// One transition. Terminal states ignore every event.
pub fn handshake_step(
    state: &HandshakeState,
    ctx: &PartyContext,
    event: &Event,
) -> (HandshakeState, Vec<ProtocolMessage>) {
    let mut next = state.clone();
    if state.phase.is_terminal() {
        return (next, Vec::new());
    }
    let out = match event {
        Event::Start => on_start(&mut next, ctx),
        Event::Timeout => match next.phase {
            HandshakePhase::Start if next.role == Role::Initiator => Vec::new(),
            _ => next.fail(reasons::TIMEOUT),
        },
        Event::Message(msg) => on_message(&mut next, ctx, msg),
    };
    (next, out)
}

fn on_start(state: &mut HandshakeState, ctx: &PartyContext) -> Vec<ProtocolMessage> {
    if state.role != Role::Initiator || state.phase != HandshakePhase::Start {
        return Vec::new();
    }
    let Some(peer) = state.expected_peer.clone() else {
        return state.fail(reasons::PROTOCOL_ERROR);
    };
    let challenge = state.challenge_for(peer, ctx.clock.now());
    state.issued_challenge = Some(challenge.clone());
    state.phase = HandshakePhase::AwaitResponse;
    let body = AuthRequest {
        did: state.me.clone(),
        challenge,
        presentation_definition: ctx.definition.clone(),
    };
    vec![state.emit(MessageKind::AuthRequest, serde_json::to_value(body).expect("serializable"))]
}

fn on_message(state: &mut HandshakeState, ctx: &PartyContext, msg: &ProtocolMessage) -> Vec<ProtocolMessage> {
    if msg.thread_id != state.thread_id {
        return Vec::new();
    }
    if msg.kind == MessageKind::Abort {
        let reason = msg
            .decode::<AbortBody>()
            .map(|b| b.reason)
            .unwrap_or_else(|| reasons::PROTOCOL_ERROR.to_string());
        state.phase = HandshakePhase::Failed(reason);
        return Vec::new();
    }
    if msg.sequence != state.last_sequence + 1 {
        return state.fail(reasons::PROTOCOL_ERROR);
    }
    state.last_sequence = msg.sequence;
    match (state.role, &state.phase, msg.kind) {
        (Role::Responder, HandshakePhase::Start, MessageKind::AuthRequest) => on_request(state, ctx, msg),
        (Role::Initiator, HandshakePhase::AwaitResponse, MessageKind::AuthResponse) => on_response(state, ctx, msg),
        (Role::Responder, HandshakePhase::AwaitComplete, MessageKind::AuthComplete) => on_complete(state, ctx, msg),
        (Role::Initiator, HandshakePhase::AwaitAck, MessageKind::AuthAck) => on_ack(state, ctx, msg),
        _ => state.fail(reasons::PROTOCOL_ERROR),
    }
}

/// Verifies `vp` as the inbound presentation of `state`'s session. Returns
/// the verdict and whether the challenge is consumed afterwards.
fn check_inbound(
    state: &HandshakeState,
    ctx: &PartyContext,
    vp: &VerifiablePresentation,
) -> (Result<AcceptedPresentation, PresentationRejection>, bool) {
    let Some(expected) = state.issued_challenge.as_ref() else {
        return (Err(PresentationRejection::BadChallenge), state.challenge_consumed);
    };
    let consumed = Cell::new(state.challenge_consumed);
    let guard = StateGuard(&consumed);
    let verdict = verify_presentation(
        vp,
        &VerificationContext {
            definition: &ctx.definition,
            expected_challenge: expected,
            verifier: &state.me,
            resolver: &ctx.resolver,
            registry: &ctx.registry,
            guard: &guard,
            now: ctx.clock.now(),
        },
    );
    (verdict, consumed.get())
}

/// Checks a presentation against a session without changing it. Once the
/// session has verified its peer, any further presentation is a replay.
pub fn verify_session_presentation(
    state: &HandshakeState,
    ctx: &PartyContext,
    vp: &VerifiablePresentation,
) -> Result<AcceptedPresentation, PresentationRejection> {
    check_inbound(state, ctx, vp).0
}

fn verify_inbound(
    state: &mut HandshakeState,
    ctx: &PartyContext,
    vp: &VerifiablePresentation,
) -> Result<(), String> {
    if state.issued_challenge.is_none() {
        return Err(reasons::PROTOCOL_ERROR.to_string());
    }
    let (verdict, consumed) = check_inbound(state, ctx, vp);
    state.challenge_consumed = consumed;
    let accepted = verdict.map_err(|r| r.code())?;
    state.peer = Some(accepted.holder.clone());
    state.peer_claims = accepted.merged_claims();
    state.inbound_verified = true;
    Ok(())
}

fn prove(
    state: &mut HandshakeState,
    ctx: &PartyContext,
    challenge: &Challenge,
    pd: &crate::presentation::PresentationDefinition,
    verifier: &Did,
) -> Result<VerifiablePresentation, String> {
    if challenge.audience != state.me {
        return Err("bad-challenge".to_string());
    }
    let vp = present(
        &ctx.keypair,
        &state.me,
        &ctx.credentials,
        pd,
        challenge,
        verifier,
        ctx.clock.now(),
    )
    .map_err(presentation_failure)?;
    state.outbound_proof = Some(vp.proof.jws.compact_form());
    Ok(vp)
}

fn on_request(state: &mut HandshakeState, ctx: &PartyContext, msg: &ProtocolMessage) -> Vec<ProtocolMessage> {
    let Some(req) = msg.decode::<AuthRequest>() else {
        return state.fail(reasons::PROTOCOL_ERROR);
    };
    if req.did == state.me || req.presentation_definition.validate().is_err() {
        return state.fail(reasons::PROTOCOL_ERROR);
    }
    state.expected_peer = Some(req.did.clone());
    let vp = match prove(state, ctx, &req.challenge, &req.presentation_definition, &req.did) {
        Ok(vp) => vp,
        Err(reason) => return state.fail(reason),
    };
    let challenge = state.challenge_for(req.did, ctx.clock.now());
    state.issued_challenge = Some(challenge.clone());
    state.phase = HandshakePhase::AwaitComplete;
    let body = AuthResponse {
        vp,
        challenge,
        presentation_definition: ctx.definition.clone(),
    };
    vec![state.emit(MessageKind::AuthResponse, serde_json::to_value(body).expect("serializable"))]
}

fn on_response(state: &mut HandshakeState, ctx: &PartyContext, msg: &ProtocolMessage) -> Vec<ProtocolMessage> {
    let Some(resp) = msg.decode::<AuthResponse>() else {
        return state.fail(reasons::PROTOCOL_ERROR);
    };
    if let Err(reason) = verify_inbound(state, ctx, &resp.vp) {
        return state.fail(reason);
    }
    if resp.presentation_definition.validate().is_err() {
        return state.fail(reasons::PROTOCOL_ERROR);
    }
    let peer = state.peer.clone().expect("set by verify_inbound");
    let vp = match prove(state, ctx, &resp.challenge, &resp.presentation_definition, &peer) {
        Ok(vp) => vp,
        Err(reason) => return state.fail(reason),
    };
    state.phase = HandshakePhase::AwaitAck;
    let body = AuthComplete { vp };
    vec![state.emit(MessageKind::AuthComplete, serde_json::to_value(body).expect("serializable"))]
}

fn on_complete(state: &mut HandshakeState, ctx: &PartyContext, msg: &ProtocolMessage) -> Vec<ProtocolMessage> {
    let Some(complete) = msg.decode::<AuthComplete>() else {
        return state.fail(reasons::PROTOCOL_ERROR);
    };
    if let Err(reason) = verify_inbound(state, ctx, &complete.vp) {
        return state.fail(reason);
    }
    // The initiator only answers with its own VP after accepting ours.
    state.outbound_acknowledged = true;
    state.phase = HandshakePhase::Authenticated;
    let payload = ack_receipt_payload(state.thread_id, ACK_OK, &complete.vp.proof.jws.compact_form());
    let receipt = match crypto::sign_detached(&payload, &ctx.keypair) {
        Ok(sig) => sig,
        Err(_) => return state.fail(reasons::PROTOCOL_ERROR),
    };
    let body = AuthAck {
        status: ACK_OK.to_string(),
        receipt,
    };
    vec![state.emit(MessageKind::AuthAck, serde_json::to_value(body).expect("serializable"))]
}

fn on_ack(state: &mut HandshakeState, ctx: &PartyContext, msg: &ProtocolMessage) -> Vec<ProtocolMessage> {
    let Some(ack) = msg.decode::<AuthAck>() else {
        return state.fail(reasons::PROTOCOL_ERROR);
    };
    if ack.status != ACK_OK || !ack_is_genuine(state, ctx, &ack.receipt) {
        return state.fail(reasons::BAD_ACK);
    }
    state.outbound_acknowledged = true;
    if state.inbound_verified {
        state.phase = HandshakePhase::Authenticated;
        Vec::new()
    } else {
        state.fail(reasons::PROTOCOL_ERROR)
    }
}

fn ack_is_genuine(state: &HandshakeState, ctx: &PartyContext, receipt: &DetachedSignature) -> bool {
    let (Some(peer), Some(proof)) = (&state.peer, &state.outbound_proof) else {
        return false;
    };
    let Ok(doc) = ctx.resolver.resolve(peer) else {
        return false;
    };
    let payload = ack_receipt_payload(state.thread_id, ACK_OK, proof);
    let genuine = doc
        .authentication_keys()
        .any(|vm| crypto::verify_detached(&payload, receipt, &vm.public_key).is_ok());
    genuine
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::testkit::{honest_pair, run_to_quiescence, Pair};

    fn start(pair: &Pair) -> (HandshakeState, HandshakeState) {
        let init = HandshakeState::initiator(pair.thread, pair.a.did.clone(), pair.b.did.clone(), [1; 32]);
        let resp = HandshakeState::responder(pair.thread, pair.b.did.clone(), [2; 32]);
        (init, resp)
    }

    #[test]
    fn honest_run_authenticates_in_four_messages() {
        let pair = honest_pair();
        let (init, resp) = start(&pair);
        let (init, resp, wire) = run_to_quiescence(&pair, init, resp);
        assert_eq!(wire.len(), 4);
        assert_eq!(
            wire.iter().map(|m| m.kind).collect::<Vec<_>>(),
            [MessageKind::AuthRequest, MessageKind::AuthResponse, MessageKind::AuthComplete, MessageKind::AuthAck]
        );
        assert!(init.is_authenticated() && resp.is_authenticated());
        assert_eq!(init.peer.as_ref(), Some(&pair.b.did));
        assert_eq!(resp.peer.as_ref(), Some(&pair.a.did));
        assert_eq!(init.peer_claims["role"], "identity-issuer");
        assert_eq!(resp.peer_claims["agent"], true);
    }

    #[test]
    fn deterministic_transitions() {
        let pair = honest_pair();
        let (i1, r1) = start(&pair);
        let (i2, r2) = start(&pair);
        let a = run_to_quiescence(&pair, i1, r1);
        let b = run_to_quiescence(&pair, i2, r2);
        assert_eq!(serde_json::to_string(&a.2).unwrap(), serde_json::to_string(&b.2).unwrap());
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn complete_before_request_is_protocol_error() {
        let pair = honest_pair();
        let (_, resp) = start(&pair);
        let msg = ProtocolMessage {
            thread_id: pair.thread,
            sequence: 1,
            kind: MessageKind::AuthComplete,
            body: json!({}),
        };
        let (resp, out) = handshake_step(&resp, &pair.b, &Event::Message(msg));
        assert_eq!(resp.phase.failure(), Some(reasons::PROTOCOL_ERROR));
        assert_eq!(out[0].abort_reason(), Some(reasons::PROTOCOL_ERROR));
    }

    #[test]
    fn tampered_response_vp_aborts() {
        let pair = honest_pair();
        let (init, resp) = start(&pair);
        let (init, req) = handshake_step(&init, &pair.a, &Event::Start);
        let (resp, mut out) = handshake_step(&resp, &pair.b, &Event::Message(req[0].clone()));
        out[0].body["vp"]["credentials"][0]["credential_subject"]["claims"]["role"] = json!("root");
        let (init, abort) = handshake_step(&init, &pair.a, &Event::Message(out[0].clone()));
        assert_eq!(init.phase.failure(), Some("bad-holder-proof"));
        assert!(init.peer.is_none());
        let (resp, _) = handshake_step(&resp, &pair.b, &Event::Message(abort[0].clone()));
        assert_eq!(resp.phase.failure(), Some("bad-holder-proof"));
    }

    #[test]
    fn replayed_response_in_new_thread_is_bad_challenge() {
        let pair = honest_pair();
        let (init, resp) = start(&pair);
        let (_, req) = handshake_step(&init, &pair.a, &Event::Start);
        let (_, recorded) = handshake_step(&resp, &pair.b, &Event::Message(req[0].clone()));

        let thread = Uuid::from_u128(99);
        let fresh = HandshakeState::initiator(thread, pair.a.did.clone(), pair.b.did.clone(), [3; 32]);
        let (fresh, _) = handshake_step(&fresh, &pair.a, &Event::Start);
        let mut replay = recorded[0].clone();
        replay.thread_id = thread;
        let (fresh, out) = handshake_step(&fresh, &pair.a, &Event::Message(replay));
        assert_eq!(fresh.phase.failure(), Some("bad-challenge"));
        assert_eq!(out[0].abort_reason(), Some("bad-challenge"));
    }

    #[test]
    fn forged_ack_is_rejected() {
        let pair = honest_pair();
        let (init, resp) = start(&pair);
        let (init, req) = handshake_step(&init, &pair.a, &Event::Start);
        let (_, rsp) = handshake_step(&resp, &pair.b, &Event::Message(req[0].clone()));
        let (init, complete) = handshake_step(&init, &pair.a, &Event::Message(rsp[0].clone()));
        let forged_sig = crypto::sign_detached(b"anything", &pair.a.keypair).unwrap();
        let forged = ProtocolMessage {
            thread_id: pair.thread,
            sequence: complete[0].sequence + 1,
            kind: MessageKind::AuthAck,
            body: serde_json::to_value(AuthAck {
                status: ACK_OK.into(),
                receipt: forged_sig,
            })
            .unwrap(),
        };
        let (init, _) = handshake_step(&init, &pair.a, &Event::Message(forged));
        assert_eq!(init.phase.failure(), Some(reasons::BAD_ACK));
    }

    #[test]
    fn timeout_fails_without_retry() {
        let pair = honest_pair();
        let (init, _) = start(&pair);
        let (init, _) = handshake_step(&init, &pair.a, &Event::Start);
        let (init, out) = handshake_step(&init, &pair.a, &Event::Timeout);
        assert_eq!(init.phase.failure(), Some(reasons::TIMEOUT));
        assert_eq!(out.len(), 1);
        let (again, out) = handshake_step(&init, &pair.a, &Event::Start);
        assert_eq!(again, init);
        assert!(out.is_empty());
    }

    #[test]
    fn wrong_sequence_is_protocol_error() {
        let pair = honest_pair();
        let (init, resp) = start(&pair);
        let (_, mut req) = handshake_step(&init, &pair.a, &Event::Start);
        req[0].sequence = 5;
        let (resp, _) = handshake_step(&resp, &pair.b, &Event::Message(req[0].clone()));
        assert_eq!(resp.phase.failure(), Some(reasons::PROTOCOL_ERROR));
    }

    #[test]
    fn unsatisfiable_definition() {
        let mut pair = honest_pair();
        pair.b.credentials.clear();
        let (init, resp) = start(&pair);
        let (init, resp, _) = run_to_quiescence(&pair, init, resp);
        assert_eq!(resp.phase.failure(), Some(reasons::UNSATISFIABLE));
        assert_eq!(init.phase.failure(), Some(reasons::UNSATISFIABLE));
    }

    #[test]
    fn state_json_shape() {
        let pair = honest_pair();
        let (init, _) = start(&pair);
        let v = serde_json::to_value(&init).unwrap();
        assert_eq!(v["phase"], json!({"phase": "START"}));
        assert_eq!(v["role"], "initiator");
        let back: HandshakeState = serde_json::from_value(v).unwrap();
        assert_eq!(back, init);
        let failed = HandshakePhase::Failed("timeout".into());
        assert_eq!(serde_json::to_value(&failed).unwrap(), json!({"phase": "FAILED", "reason": "timeout"}));
    }
}
