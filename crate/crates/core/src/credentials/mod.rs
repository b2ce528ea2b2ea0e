//! Verifiable credentials: the basic (bVC) / rich (rVC) model, issuance and
//! verification against a trust registry.
//!
//! A bVC is issued by a domain orchestrator and claims nothing but agenthood.
//! An rVC carries role, capability or authorization claims, structured or as
//! free text. Proofs sign the canonical document with only `proof.jws`
//! removed, so every proof option is covered by the signature.

mod policy;

pub use policy::{evaluate_claims, ClaimDecision, ClaimEvaluator, ClaimPolicy, Refusal};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;
use uuid::Uuid;

use crate::clock;
use crate::crypto::{self, CryptoError, DetachedSignature, KeyPair, ProtectedHeader};
use crate::did::{self, Did, Resolver};

pub const VC_TYPE: &str = "VerifiableCredential";
pub const BASIC_CREDENTIAL: &str = "BasicAgentCredential";
pub const RICH_CREDENTIAL: &str = "RichAgentCredential";
pub const PROOF_TYPE: &str = "Ed25519DetachedJws2020";
pub const CREDENTIALS_CONTEXT: &str = "https://www.w3.org/2018/credentials/v1";
pub const AGENT_CONTEXT: &str = "https://agentsim.example/contexts/agent/v1";

/// Claim keys of which an rVC must carry at least one.
pub const RICH_CLAIM_KEYS: [&str; 3] = ["role", "capabilities", "authorizations"];

pub type Claims = Map<String, Value>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CredentialError {
    #[error("claims do not fit the credential type: {0}")]
    ClaimShapeViolation(String),
    #[error("unknown credential type {0:?}")]
    UnknownType(String),
    #[error("issuer and subject must differ")]
    SelfIssued,
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ProofPurpose {
    AssertionMethod,
    Authentication,
}

/// Everything in a proof except the signature value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofOptions {
    pub proof_type: String,
    pub created: String,
    pub verification_method: String,
    pub proof_purpose: ProofPurpose,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub challenge: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proof {
    #[serde(flatten)]
    pub options: ProofOptions,
    pub jws: DetachedSignature,
}

impl Proof {
    /// DID and key id named by `verification_method`.
    pub fn signer(&self) -> Result<(Did, String), did::DidError> {
        did::split_key_url(&self.options.verification_method)
    }
}

/// Canonical signing payload of a proof-carrying document: the whole
/// document minus `proof.jws`.
pub fn signing_payload<T: Serialize>(document: &T) -> Result<Vec<u8>, CryptoError> {
    let mut value =
        serde_json::to_value(document).map_err(|e| CryptoError::NonCanonicalizable(e.to_string()))?;
    if let Some(Value::Object(proof)) = value.get_mut("proof") {
        proof.remove("jws");
    }
    crypto::canonicalize(&value)
}

/// Stand-in signature used while computing a payload; never leaves this crate.
pub(crate) fn placeholder_signature() -> DetachedSignature {
    DetachedSignature::with_header(ProtectedHeader::eddsa(), [0; crypto::SIGNATURE_LEN])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CredentialSubject {
    pub id: Did,
    pub claims: Claims,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifiableCredential {
    #[serde(rename = "@context")]
    pub context: Vec<String>,
    pub cred_id: String,
    pub types: Vec<String>,
    pub issuer: Did,
    pub issuance_date: String,
    pub credential_subject: CredentialSubject,
    pub proof: Proof,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CredentialKind {
    Basic,
    Rich,
}

impl CredentialKind {
    pub fn type_name(self) -> &'static str {
        match self {
            CredentialKind::Basic => BASIC_CREDENTIAL,
            CredentialKind::Rich => RICH_CREDENTIAL,
        }
    }

    pub fn from_type_name(name: &str) -> Option<Self> {
        match name {
            BASIC_CREDENTIAL => Some(CredentialKind::Basic),
            RICH_CREDENTIAL => Some(CredentialKind::Rich),
            _ => None,
        }
    }
}

impl VerifiableCredential {
    /// The bVC/rVC kind, if `types` is exactly `VerifiableCredential` plus one
    /// known agent credential type.
    pub fn kind(&self) -> Option<CredentialKind> {
        if self.types.len() != 2 || self.types[0] != VC_TYPE {
            return None;
        }
        CredentialKind::from_type_name(&self.types[1])
    }

    /// The specific credential type (`BasicAgentCredential`, ...).
    pub fn credential_type(&self) -> &str {
        self.types.get(1).map(String::as_str).unwrap_or("")
    }

    pub fn subject(&self) -> &Did {
        &self.credential_subject.id
    }

    pub fn claims(&self) -> &Claims {
        &self.credential_subject.claims
    }
}

/// Looks up a dot-separated claim path (`profile.region`).
pub fn claim_at<'a>(claims: &'a Claims, path: &str) -> Option<&'a Value> {
    let mut parts = path.split('.');
    let mut current = claims.get(parts.next()?)?;
    for part in parts {
        current = current.as_object()?.get(part)?;
    }
    Some(current)
}

pub fn check_claim_shape(kind: CredentialKind, claims: &Claims) -> Result<(), CredentialError> {
    match kind {
        CredentialKind::Basic => {
            if claims.len() == 1 && claims.get("agent") == Some(&Value::Bool(true)) {
                Ok(())
            } else {
                Err(CredentialError::ClaimShapeViolation(
                    "a basic credential carries only {\"agent\": true}".into(),
                ))
            }
        }
        CredentialKind::Rich => {
            if RICH_CLAIM_KEYS.iter().any(|k| claims.contains_key(*k)) {
                Ok(())
            } else {
                Err(CredentialError::ClaimShapeViolation(
                    "a rich credential needs a role, capabilities or authorizations claim".into(),
                ))
            }
        }
    }
}

/// Signs and returns a credential about `subject`. `issued_at` is logical
/// time and fixes both `issuance_date` and `proof.created`.
pub fn issue_credential(
    issuer_key: &KeyPair,
    issuer_did: &Did,
    subject: &Did,
    credential_type: &str,
    claims: Claims,
    issued_at: u64,
) -> Result<VerifiableCredential, CredentialError> {
    let kind = CredentialKind::from_type_name(credential_type)
        .ok_or_else(|| CredentialError::UnknownType(credential_type.to_string()))?;
    check_claim_shape(kind, &claims)?;
    if issuer_did == subject {
        return Err(CredentialError::SelfIssued);
    }
    let timestamp = clock::iso8601(issued_at);
    let mut vc = VerifiableCredential {
        context: vec![CREDENTIALS_CONTEXT.to_string(), AGENT_CONTEXT.to_string()],
        cred_id: String::new(),
        types: vec![VC_TYPE.to_string(), credential_type.to_string()],
        issuer: issuer_did.clone(),
        issuance_date: timestamp.clone(),
        credential_subject: CredentialSubject {
            id: subject.clone(),
            claims,
        },
        proof: Proof {
            options: ProofOptions {
                proof_type: PROOF_TYPE.to_string(),
                created: timestamp,
                verification_method: issuer_did.key_url(issuer_key.key_id()),
                proof_purpose: ProofPurpose::AssertionMethod,
                challenge: None,
                domain: None,
            },
            jws: placeholder_signature(),
        },
    };
    vc.cred_id = derive_cred_id(&vc)?;
    vc.proof.jws = crypto::sign_detached(&signing_payload(&vc)?, issuer_key)?;
    Ok(vc)
}

/// Content-derived `urn:uuid:` identifier, stable for identical issuance input.
fn derive_cred_id(vc: &VerifiableCredential) -> Result<String, CryptoError> {
    let digest = crypto::sha256(&signing_payload(vc)?);
    let mut bytes = [0u8; 16];
    bytes.copy_from_slice(&digest[..16]);
    Ok(format!("urn:uuid:{}", Uuid::new_v8(bytes)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrustScope {
    Intra,
    Cross,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustedIssuer {
    pub accepted_types: BTreeSet<String>,
    pub label: String,
}

/// Issuers a verifier recognizes, and for which credential types.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustRegistry {
    pub trusted_issuers: BTreeMap<Did, TrustedIssuer>,
    pub scope: TrustScope,
}

impl TrustRegistry {
    pub fn new(scope: TrustScope) -> Self {
        Self {
            trusted_issuers: BTreeMap::new(),
            scope,
        }
    }

    pub fn trust<I, S>(&mut self, issuer: Did, types: I, label: impl Into<String>) -> &mut Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let entry = self.trusted_issuers.entry(issuer).or_insert_with(|| TrustedIssuer {
            accepted_types: BTreeSet::new(),
            label: String::new(),
        });
        entry.accepted_types.extend(types.into_iter().map(Into::into));
        entry.label = label.into();
        self
    }

    pub fn distrust(&mut self, issuer: &Did) -> Option<TrustedIssuer> {
        self.trusted_issuers.remove(issuer)
    }

    pub fn validate(&self) -> Result<(), String> {
        match self
            .trusted_issuers
            .iter()
            .find(|(_, t)| t.accepted_types.is_empty())
        {
            Some((did, _)) => Err(format!("{did} has no accepted credential types")),
            None => Ok(()),
        }
    }
}

/// Why a credential failed verification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CredentialRejection {
    ProofPurpose,
    UnresolvableIssuer,
    UnknownKey,
    BadSignature,
    UntrustedIssuer,
    TypeNotAccepted,
    ClaimShape,
}

impl CredentialRejection {
    pub fn as_str(&self) -> &'static str {
        match self {
            CredentialRejection::ProofPurpose => "proof-purpose",
            CredentialRejection::UnresolvableIssuer => "unresolvable-issuer",
            CredentialRejection::UnknownKey => "unknown-key",
            CredentialRejection::BadSignature => "bad-signature",
            CredentialRejection::UntrustedIssuer => "untrusted-issuer",
            CredentialRejection::TypeNotAccepted => "type-not-accepted",
            CredentialRejection::ClaimShape => "claim-shape",
        }
    }
}

impl fmt::Display for CredentialRejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Verifies proof, issuer trust and claim shape. Verification uses the
/// issuer's current DID document: proofs by a rotated-away key stop verifying.
pub fn verify_credential(
    vc: &VerifiableCredential,
    resolver: &Resolver,
    registry: &TrustRegistry,
) -> Result<(), CredentialRejection> {
    if vc.proof.options.proof_purpose != ProofPurpose::AssertionMethod {
        return Err(CredentialRejection::ProofPurpose);
    }
    let issuer_doc = resolver
        .resolve(&vc.issuer)
        .map_err(|_| CredentialRejection::UnresolvableIssuer)?;
    let (signer, key_id) = vc.proof.signer().map_err(|_| CredentialRejection::UnknownKey)?;
    if signer != vc.issuer {
        return Err(CredentialRejection::UnknownKey);
    }
    let key = issuer_doc.key(&key_id).ok_or(CredentialRejection::UnknownKey)?;
    let payload = signing_payload(vc).map_err(|_| CredentialRejection::BadSignature)?;
    crypto::verify_detached(&payload, &vc.proof.jws, &key.public_key)
        .map_err(|_| CredentialRejection::BadSignature)?;

    let trusted = registry
        .trusted_issuers
        .get(&vc.issuer)
        .ok_or(CredentialRejection::UntrustedIssuer)?;
    if !trusted.accepted_types.contains(vc.credential_type()) {
        return Err(CredentialRejection::TypeNotAccepted);
    }
    let kind = vc.kind().ok_or(CredentialRejection::ClaimShape)?;
    check_claim_shape(kind, vc.claims()).map_err(|_| CredentialRejection::ClaimShape)?;
    if vc.subject() == &vc.issuer {
        return Err(CredentialRejection::ClaimShape);
    }
    Ok(())
}
