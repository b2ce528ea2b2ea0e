//! Deterministic state machines for mutual authentication and attestation.
//!
//! Transitions are pure given the party context: all randomness comes from a
//! per-session seed fixed at construction, and time from a logical clock.
//!
//! Honest message flow on one thread (sequence numbers 1..=8):
//!
//! ```text
//! initiator/requester                 responder/issuer
//!   AUTH_REQUEST {did, challenge, pd}   ->
//!                                     <-  AUTH_RESPONSE {vp, challenge, pd}
//!   AUTH_COMPLETE {vp}                  ->
//!                                     <-  AUTH_ACK {status, receipt}
//!   CRED_MANIFEST_REQUEST {}            ->
//!                                     <-  CRED_MANIFEST {manifest}
//!   CRED_APPLICATION {manifest_id}      ->
//!                                     <-  CRED_FULFILLMENT {credential}
//! ```

mod attestation;
mod handshake;

pub use attestation::{attestation_step, AttestationPhase, AttestationRole, AttestationState};
pub use handshake::{ack_receipt_payload, handshake_step, verify_session_presentation, HandshakePhase, HandshakeState, Role};

use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use uuid::Uuid;

use crate::clock::LogicalClock;
use crate::credentials::{ClaimEvaluator, Claims, TrustRegistry, VerifiableCredential};
use crate::crypto::{self, DetachedSignature, KeyPair};
use crate::did::{Did, Resolver};
use crate::presentation::{Challenge, PresentationDefinition, VerifiablePresentation};

/// Failure reason codes carried by ABORT and `Failed` phases, besides the
/// presentation rejection codes.
pub mod reasons {
    pub const PROTOCOL_ERROR: &str = "protocol-error";
    pub const TIMEOUT: &str = "timeout";
    pub const NOT_AUTHENTICATED: &str = "not-authenticated";
    pub const BAD_FULFILLMENT: &str = "bad-fulfillment";
    pub const BAD_ACK: &str = "bad-ack";
    pub const TRANSPORT: &str = "transport";
    pub const UNSATISFIABLE: &str = "vc-rejected(unsatisfiable)";

    pub fn claims_refused(detail: impl std::fmt::Display) -> String {
        format!("claims-refused({detail})")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MessageKind {
    AuthRequest,
    AuthResponse,
    AuthComplete,
    AuthAck,
    CredManifestRequest,
    CredManifest,
    CredApplication,
    CredFulfillment,
    Abort,
}

impl MessageKind {
    pub const ALL: [MessageKind; 9] = [
        MessageKind::AuthRequest,
        MessageKind::AuthResponse,
        MessageKind::AuthComplete,
        MessageKind::AuthAck,
        MessageKind::CredManifestRequest,
        MessageKind::CredManifest,
        MessageKind::CredApplication,
        MessageKind::CredFulfillment,
        MessageKind::Abort,
    ];

    pub fn is_handshake(self) -> bool {
        matches!(
            self,
            MessageKind::AuthRequest | MessageKind::AuthResponse | MessageKind::AuthComplete | MessageKind::AuthAck
        )
    }

    pub fn is_attestation(self) -> bool {
        matches!(
            self,
            MessageKind::CredManifestRequest
                | MessageKind::CredManifest
                | MessageKind::CredApplication
                | MessageKind::CredFulfillment
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolMessage {
    pub thread_id: Uuid,
    pub sequence: u64,
    pub kind: MessageKind,
    pub body: Value,
}

impl ProtocolMessage {
    pub fn abort_reason(&self) -> Option<&str> {
        match self.kind {
            MessageKind::Abort => self.body.get("reason").and_then(Value::as_str),
            _ => None,
        }
    }

    pub(crate) fn decode<T: DeserializeOwned>(&self) -> Option<T> {
        serde_json::from_value(self.body.clone()).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthRequest {
    pub did: Did,
    pub challenge: Challenge,
    pub presentation_definition: PresentationDefinition,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthResponse {
    pub vp: VerifiablePresentation,
    pub challenge: Challenge,
    pub presentation_definition: PresentationDefinition,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthComplete {
    pub vp: VerifiablePresentation,
}

/// The responder's acknowledgement. `receipt` signs the thread, status and
/// the accepted VP's signature, so an ACK cannot be forged or replayed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthAck {
    pub status: String,
    pub receipt: DetachedSignature,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputDescriptor {
    pub credential_type: String,
    pub claim_template: Claims,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CredentialManifest {
    pub manifest_id: String,
    pub issuer: Did,
    pub output_descriptors: Vec<OutputDescriptor>,
    pub presentation_definition: PresentationDefinition,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestBody {
    pub manifest: CredentialManifest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Application {
    pub manifest_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fulfillment {
    pub credential: VerifiableCredential,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbortBody {
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    Start,
    Message(ProtocolMessage),
    Timeout,
}

/// What an issuer offers through the attestation dialogue.
#[derive(Clone)]
pub struct IssuanceSettings {
    pub evaluator: Arc<dyn ClaimEvaluator>,
    pub output: OutputDescriptor,
}

impl std::fmt::Debug for IssuanceSettings {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("IssuanceSettings").field("output", &self.output).finish_non_exhaustive()
    }
}

/// Everything a party consults while stepping its machines.
#[derive(Debug, Clone)]
pub struct PartyContext {
    pub did: Did,
    pub keypair: KeyPair,
    pub credentials: Vec<VerifiableCredential>,
    pub resolver: Arc<Resolver>,
    /// Issuers trusted for credentials presented by peers and delivered by issuers.
    pub registry: TrustRegistry,
    /// What this party asks its peer to present.
    pub definition: PresentationDefinition,
    pub clock: LogicalClock,
    pub issuance: Option<IssuanceSettings>,
}

/// Per-session seed from which nonces and identifiers are derived.
pub type SessionSeed = [u8; 32];

pub(crate) fn derive_bytes<const N: usize>(seed: &SessionSeed, label: &str) -> [u8; N] {
    let mut input = seed.to_vec();
    input.extend_from_slice(label.as_bytes());
    let digest = crypto::sha256(&input);
    let mut out = [0u8; N];
    out.copy_from_slice(&digest[..N]);
    out
}

/// Deterministic thread id for a session seed.
pub fn thread_id_for(seed: &SessionSeed) -> Uuid {
    Uuid::new_v8(derive_bytes::<16>(seed, "thread"))
}

pub(crate) mod serde_seed {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(seed: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(seed))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let text = String::deserialize(d)?;
        let bytes = hex::decode(&text).map_err(serde::de::Error::custom)?;
        bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("session seed must be 32 bytes"))
    }
}


#[cfg(test)]
pub(crate) mod testkit;
