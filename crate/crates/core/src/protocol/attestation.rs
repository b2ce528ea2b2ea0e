//! Attestation: after mutual authentication the requester applies for an
//! rVC through a Credential Manifest exchange on the same thread.

use serde::{Deserialize, Serialize};
use serde_json::json;
use uuid::Uuid;

use super::handshake::{handshake_step, HandshakePhase, HandshakeState};
use super::{
    derive_bytes, reasons, AbortBody, Application, CredentialManifest, Event, Fulfillment, ManifestBody,
    MessageKind, PartyContext, ProtocolMessage,
};
use crate::credentials::{issue_credential, verify_credential, ClaimDecision, VerifiableCredential};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttestationRole {
    Requester,
    Issuer,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE", tag = "phase", content = "reason")]
pub enum AttestationPhase {
    AwaitAuth,
    /// Issuer side: authenticated, waiting for the requester to ask.
    AwaitManifestRequest,
    AwaitManifest,
    AwaitApplication,
    AwaitFulfillment,
    Done,
    Failed(String),
}

impl AttestationPhase {
    pub fn is_terminal(&self) -> bool {
        matches!(self, AttestationPhase::Done | AttestationPhase::Failed(_))
    }

    pub fn failure(&self) -> Option<&str> {
        match self {
            AttestationPhase::Failed(r) => Some(r),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttestationState {
    pub role: AttestationRole,
    pub phase: AttestationPhase,
    pub handshake: HandshakeState,
    pub manifest: Option<CredentialManifest>,
    /// Requester: the verified rVC received. Issuer: the rVC it issued.
    pub credential: Option<VerifiableCredential>,
}

impl AttestationState {
    pub fn requester(handshake: HandshakeState) -> Self {
        Self::new(AttestationRole::Requester, handshake)
    }

    pub fn issuer(handshake: HandshakeState) -> Self {
        Self::new(AttestationRole::Issuer, handshake)
    }

    fn new(role: AttestationRole, handshake: HandshakeState) -> Self {
        Self {
            role,
            phase: AttestationPhase::AwaitAuth,
            handshake,
            manifest: None,
            credential: None,
        }
    }

    pub fn thread_id(&self) -> Uuid {
        self.handshake.thread_id
    }

    fn fail(&mut self, reason: &str) -> Vec<ProtocolMessage> {
        self.phase = AttestationPhase::Failed(reason.to_string());
        let out = self.handshake.emit(MessageKind::Abort, json!({ "reason": reason }));
        if !self.handshake.phase.is_terminal() {
            self.handshake.phase = HandshakePhase::Failed(reason.to_string());
        }
        vec![out]
    }

    fn emit<T: Serialize>(&mut self, kind: MessageKind, body: T) -> Vec<ProtocolMessage> {
        vec![self
            .handshake
            .emit(kind, serde_json::to_value(body).expect("serializable"))]
    }
}

/// One transition. Attestation messages before the handshake is
/// authenticated end the session with `not-authenticated`.
pub fn attestation_step(
    state: &AttestationState,
    ctx: &PartyContext,
    event: &Event,
) -> (AttestationState, Vec<ProtocolMessage>) {
    let mut next = state.clone();
    if state.phase.is_terminal() {
        return (next, Vec::new());
    }
    let out = match event {
        Event::Start | Event::Timeout if next.phase == AttestationPhase::AwaitAuth => delegate(&mut next, ctx, event),
        Event::Start => Vec::new(),
        Event::Timeout => next.fail(reasons::TIMEOUT),
        Event::Message(msg) => on_message(&mut next, ctx, msg),
    };
    (next, out)
}

fn delegate(state: &mut AttestationState, ctx: &PartyContext, event: &Event) -> Vec<ProtocolMessage> {
    let (handshake, mut out) = handshake_step(&state.handshake, ctx, event);
    state.handshake = handshake;
    match &state.handshake.phase {
        HandshakePhase::Failed(reason) => state.phase = AttestationPhase::Failed(reason.clone()),
        HandshakePhase::Authenticated => match state.role {
            AttestationRole::Requester => {
                state.phase = AttestationPhase::AwaitManifest;
                out.extend(state.emit(MessageKind::CredManifestRequest, json!({})));
            }
            AttestationRole::Issuer => state.phase = AttestationPhase::AwaitManifestRequest,
        },
        _ => {}
    }
    out
}

fn on_message(state: &mut AttestationState, ctx: &PartyContext, msg: &ProtocolMessage) -> Vec<ProtocolMessage> {
    if msg.thread_id != state.thread_id() {
        return Vec::new();
    }
    if state.phase == AttestationPhase::AwaitAuth {
        if msg.kind.is_attestation() {
            return state.fail(reasons::NOT_AUTHENTICATED);
        }
        return delegate(state, ctx, &Event::Message(msg.clone()));
    }
    if msg.kind == MessageKind::Abort {
        let reason = msg
            .decode::<AbortBody>()
            .map(|b| b.reason)
            .unwrap_or_else(|| reasons::PROTOCOL_ERROR.to_string());
        state.phase = AttestationPhase::Failed(reason);
        return Vec::new();
    }
    if !state.handshake.is_authenticated() {
        return state.fail(reasons::NOT_AUTHENTICATED);
    }
    if msg.sequence != state.handshake.last_sequence + 1 {
        return state.fail(reasons::PROTOCOL_ERROR);
    }
    state.handshake.last_sequence = msg.sequence;
    match (state.role, &state.phase, msg.kind) {
        (AttestationRole::Issuer, AttestationPhase::AwaitManifestRequest, MessageKind::CredManifestRequest) => {
            on_manifest_request(state, ctx)
        }
        (AttestationRole::Requester, AttestationPhase::AwaitManifest, MessageKind::CredManifest) => {
            on_manifest(state, msg)
        }
        (AttestationRole::Issuer, AttestationPhase::AwaitApplication, MessageKind::CredApplication) => {
            on_application(state, ctx, msg)
        }
        (AttestationRole::Requester, AttestationPhase::AwaitFulfillment, MessageKind::CredFulfillment) => {
            on_fulfillment(state, ctx, msg)
        }
        _ => state.fail(reasons::PROTOCOL_ERROR),
    }
}

fn on_manifest_request(state: &mut AttestationState, ctx: &PartyContext) -> Vec<ProtocolMessage> {
    let Some(issuance) = &ctx.issuance else {
        return state.fail(reasons::PROTOCOL_ERROR);
    };
    let manifest = CredentialManifest {
        manifest_id: format!(
            "urn:uuid:{}",
            Uuid::new_v8(derive_bytes::<16>(&state.handshake.session_seed, "manifest"))
        ),
        issuer: state.handshake.me.clone(),
        output_descriptors: vec![issuance.output.clone()],
        presentation_definition: ctx.definition.clone(),
    };
    state.manifest = Some(manifest.clone());
    state.phase = AttestationPhase::AwaitApplication;
    state.emit(MessageKind::CredManifest, ManifestBody { manifest })
}

fn on_manifest(state: &mut AttestationState, msg: &ProtocolMessage) -> Vec<ProtocolMessage> {
    let Some(ManifestBody { manifest }) = msg.decode() else {
        return state.fail(reasons::PROTOCOL_ERROR);
    };
    if Some(&manifest.issuer) != state.handshake.peer.as_ref()
        || manifest.output_descriptors.is_empty()
        || manifest.presentation_definition.validate().is_err()
    {
        return state.fail(reasons::PROTOCOL_ERROR);
    }
    let manifest_id = manifest.manifest_id.clone();
    state.manifest = Some(manifest);
    state.phase = AttestationPhase::AwaitFulfillment;
    state.emit(MessageKind::CredApplication, Application { manifest_id })
}

fn on_application(state: &mut AttestationState, ctx: &PartyContext, msg: &ProtocolMessage) -> Vec<ProtocolMessage> {
    let (Some(application), Some(manifest), Some(issuance)) =
        (msg.decode::<Application>(), state.manifest.clone(), ctx.issuance.clone())
    else {
        return state.fail(reasons::PROTOCOL_ERROR);
    };
    if application.manifest_id != manifest.manifest_id {
        return state.fail(reasons::PROTOCOL_ERROR);
    }
    let hs = &state.handshake;
    let subject = match (&hs.peer, hs.is_authenticated() && hs.inbound_verified) {
        (Some(peer), true) => peer.clone(),
        _ => return state.fail(reasons::NOT_AUTHENTICATED),
    };
    if let ClaimDecision::Refused(refusal) = issuance.evaluator.evaluate(&hs.peer_claims) {
        return state.fail(&reasons::claims_refused(refusal));
    }
    let credential = match issue_credential(
        &ctx.keypair,
        &state.handshake.me,
        &subject,
        &issuance.output.credential_type,
        issuance.output.claim_template.clone(),
        ctx.clock.now(),
    ) {
        Ok(vc) => vc,
        Err(_) => return state.fail(reasons::PROTOCOL_ERROR),
    };
    state.credential = Some(credential.clone());
    state.phase = AttestationPhase::Done;
    state.emit(MessageKind::CredFulfillment, Fulfillment { credential })
}

fn on_fulfillment(state: &mut AttestationState, ctx: &PartyContext, msg: &ProtocolMessage) -> Vec<ProtocolMessage> {
    let Some(Fulfillment { credential }) = msg.decode() else {
        return state.fail(reasons::BAD_FULFILLMENT);
    };
    let offered = state
        .manifest
        .as_ref()
        .is_some_and(|m| m.output_descriptors.iter().any(|o| o.credential_type == credential.credential_type()));
    let bound = credential.subject() == &state.handshake.me && Some(&credential.issuer) == state.handshake.peer.as_ref();
    if !offered || !bound || verify_credential(&credential, &ctx.resolver, &ctx.registry).is_err() {
        return state.fail(reasons::BAD_FULFILLMENT);
    }
    state.credential = Some(credential);
    state.phase = AttestationPhase::Done;
    Vec::new()
}
