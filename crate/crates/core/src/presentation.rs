//! Verifiable presentations with a small Presentation Exchange subset:
//! definitions, credential selection, submissions, and two-stage
//! verification (holder proof first, then each contained credential).

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::sync::Mutex;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock;
use crate::credentials::{
    self, claim_at, placeholder_signature, signing_payload, Claims, CredentialRejection, Proof,
    ProofOptions, ProofPurpose, TrustRegistry, VerifiableCredential, CREDENTIALS_CONTEXT, PROOF_TYPE,
};
use crate::crypto::{self, CryptoError, KeyPair};
use crate::did::{Did, Resolver};

pub const VP_TYPE: &str = "VerifiablePresentation";
pub const NONCE_LEN: usize = 16;
pub const DEFAULT_CHALLENGE_TTL: u64 = 120;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDescriptor {
    pub descriptor_id: String,
    pub required_credential_type: String,
    #[serde(default)]
    pub required_claims: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub issuer_constraint: Option<BTreeSet<Did>>,
}

impl InputDescriptor {
    pub fn new(descriptor_id: impl Into<String>, credential_type: impl Into<String>) -> Self {
        Self {
            descriptor_id: descriptor_id.into(),
            required_credential_type: credential_type.into(),
            required_claims: Vec::new(),
            issuer_constraint: None,
        }
    }

    pub fn with_claims<I, S>(mut self, paths: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.required_claims.extend(paths.into_iter().map(Into::into));
        self
    }

    pub fn with_issuers(mut self, issuers: impl IntoIterator<Item = Did>) -> Self {
        self.issuer_constraint = Some(issuers.into_iter().collect());
        self
    }

    /// Whether `vc` has the right type, carries every required claim path and
    /// comes from an allowed issuer. Says nothing about its proof.
    pub fn matches(&self, vc: &VerifiableCredential) -> bool {
        vc.credential_type() == self.required_credential_type
            && self.required_claims.iter().all(|p| claim_at(vc.claims(), p).is_some())
            && self
                .issuer_constraint
                .as_ref()
                .map_or(true, |allowed| allowed.contains(&vc.issuer))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresentationDefinition {
    pub pd_id: String,
    pub input_descriptors: Vec<InputDescriptor>,
}

impl PresentationDefinition {
    pub fn new(pd_id: impl Into<String>, input_descriptors: Vec<InputDescriptor>) -> Self {
        Self {
            pd_id: pd_id.into(),
            input_descriptors,
        }
    }

    pub fn validate(&self) -> Result<(), PresentationError> {
        if self.input_descriptors.is_empty() {
            return Err(PresentationError::InvalidDefinition("no input descriptors".into()));
        }
        let mut seen = HashSet::new();
        for d in &self.input_descriptors {
            if !seen.insert(d.descriptor_id.as_str()) {
                return Err(PresentationError::InvalidDefinition(format!(
                    "duplicate descriptor {}",
                    d.descriptor_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptorMapping {
    pub descriptor_id: String,
    pub credential_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Submission {
    pub pd_id: String,
    pub descriptor_map: Vec<DescriptorMapping>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifiablePresentation {
    #[serde(rename = "@context")]
    pub context: Vec<String>,
    pub types: Vec<String>,
    pub holder: Did,
    pub credentials: Vec<VerifiableCredential>,
    pub submission: Submission,
    pub proof: Proof,
}

/// A verifier-issued nonce, bound to the prover it was sent to.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Challenge {
    pub nonce: String,
    pub audience: Did,
    pub issued_at: u64,
    pub ttl: u64,
}

impl Challenge {
    pub fn new(nonce: [u8; NONCE_LEN], audience: Did, issued_at: u64) -> Self {
        Self {
            nonce: crypto::b64url_encode(&nonce),
            audience,
            issued_at,
            ttl: DEFAULT_CHALLENGE_TTL,
        }
    }

    pub fn random<R: RngCore + ?Sized>(rng: &mut R, audience: Did, issued_at: u64) -> Self {
        let mut nonce = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut nonce);
        Self::new(nonce, audience, issued_at)
    }

    pub fn with_ttl(mut self, ttl: u64) -> Self {
        self.ttl = ttl;
        self
    }

    pub fn is_expired(&self, now: u64) -> bool {
        now > self.issued_at.saturating_add(self.ttl)
    }
}

/// Single-use bookkeeping for challenge nonces.
pub trait ChallengeGuard {
    /// Marks `nonce` consumed. Returns false if it already was.
    fn consume(&self, nonce: &str) -> bool;
}

/// Thread-safe guard shared by every verification a verifier performs.
#[derive(Debug, Default)]
pub struct ChallengeStore {
    consumed: Mutex<HashSet<String>>,
}

impl ChallengeStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_consumed(&self, nonce: &str) -> bool {
        self.consumed.lock().expect("challenge store poisoned").contains(nonce)
    }
}

impl ChallengeGuard for ChallengeStore {
    fn consume(&self, nonce: &str) -> bool {
        self.consumed
            .lock()
            .expect("challenge store poisoned")
            .insert(nonce.to_string())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PresentationError {
    #[error("challenge expired")]
    ExpiredChallenge,
    #[error("nothing selected to present")]
    EmptySelection,
    #[error("no credential satisfies descriptor {0}")]
    Unsatisfiable(String),
    #[error("invalid presentation definition: {0}")]
    InvalidDefinition(String),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// Picks one credential per descriptor. Among matches the newest
/// `issuance_date` wins, then the lexicographically smallest `cred_id`.
pub fn select_credentials(
    credentials: &[VerifiableCredential],
    pd: &PresentationDefinition,
) -> Result<Vec<(String, VerifiableCredential)>, PresentationError> {
    pd.validate()?;
    pd.input_descriptors
        .iter()
        .map(|d| {
            credentials
                .iter()
                .filter(|vc| d.matches(vc))
                .min_by(|a, b| {
                    b.issuance_date
                        .cmp(&a.issuance_date)
                        .then_with(|| a.cred_id.cmp(&b.cred_id))
                })
                .map(|vc| (d.descriptor_id.clone(), vc.clone()))
                .ok_or_else(|| PresentationError::Unsatisfiable(d.descriptor_id.clone()))
        })
        .collect()
}

/// Signs a presentation of `selections` answering the definition `pd_id`.
pub fn create_presentation(
    holder_key: &KeyPair,
    holder: &Did,
    pd_id: &str,
    selections: &[(String, VerifiableCredential)],
    challenge: &Challenge,
    verifier: &Did,
    now: u64,
) -> Result<VerifiablePresentation, PresentationError> {
    if selections.is_empty() {
        return Err(PresentationError::EmptySelection);
    }
    if challenge.is_expired(now) {
        return Err(PresentationError::ExpiredChallenge);
    }
    let mut credentials: Vec<VerifiableCredential> = Vec::new();
    let mut descriptor_map = Vec::new();
    for (descriptor_id, vc) in selections {
        let index = match credentials.iter().position(|c| c.cred_id == vc.cred_id) {
            Some(i) => i,
            None => {
                credentials.push(vc.clone());
                credentials.len() - 1
            }
        };
        descriptor_map.push(DescriptorMapping {
            descriptor_id: descriptor_id.clone(),
            credential_index: index,
        });
    }
    let mut vp = VerifiablePresentation {
        context: vec![CREDENTIALS_CONTEXT.to_string()],
        types: vec![VP_TYPE.to_string()],
        holder: holder.clone(),
        credentials,
        submission: Submission {
            pd_id: pd_id.to_string(),
            descriptor_map,
        },
        proof: Proof {
            options: ProofOptions {
                proof_type: PROOF_TYPE.to_string(),
                created: clock::iso8601(now),
                verification_method: holder.key_url(holder_key.key_id()),
                proof_purpose: ProofPurpose::Authentication,
                challenge: Some(challenge.nonce.clone()),
                domain: Some(verifier.to_string()),
            },
            jws: placeholder_signature(),
        },
    };
    vp.proof.jws = crypto::sign_detached(&signing_payload(&vp)?, holder_key)?;
    Ok(vp)
}

/// Selects credentials for `pd` and signs the presentation answering it.
pub fn present(
    holder_key: &KeyPair,
    holder: &Did,
    credentials: &[VerifiableCredential],
    pd: &PresentationDefinition,
    challenge: &Challenge,
    verifier: &Did,
    now: u64,
) -> Result<VerifiablePresentation, PresentationError> {
    let selections = select_credentials(credentials, pd)?;
    create_presentation(holder_key, holder, &pd.pd_id, &selections, challenge, verifier, now)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PresentationRejection {
    BadHolderProof,
    BadChallenge,
    ReplayedChallenge,
    SubmissionMismatch,
    VcRejected {
        descriptor_id: String,
        reason: CredentialRejection,
    },
    SubjectMismatch,
}

impl PresentationRejection {
    /// Stable reason code, e.g. `vc-rejected(untrusted-issuer)`.
    pub fn code(&self) -> String {
        match self {
            PresentationRejection::BadHolderProof => "bad-holder-proof".into(),
            PresentationRejection::BadChallenge => "bad-challenge".into(),
            PresentationRejection::ReplayedChallenge => "replayed-challenge".into(),
            PresentationRejection::SubmissionMismatch => "submission-mismatch".into(),
            PresentationRejection::VcRejected { reason, .. } => format!("vc-rejected({reason})"),
            PresentationRejection::SubjectMismatch => "subject-mismatch".into(),
        }
    }
}

impl fmt::Display for PresentationRejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PresentationRejection::VcRejected { descriptor_id, reason } => {
                write!(f, "vc-rejected({descriptor_id}, {reason})")
            }
            other => f.write_str(&other.code()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AcceptedPresentation {
    pub holder: Did,
    pub claims: BTreeMap<String, Claims>,
}

impl AcceptedPresentation {
    /// All disclosed claims merged, later descriptors overriding earlier ones.
    pub fn merged_claims(&self) -> Claims {
        let mut merged = Claims::new();
        for claims in self.claims.values() {
            merged.extend(claims.clone());
        }
        merged
    }
}

/// Inputs a verifier holds while checking one presentation.
pub struct VerificationContext<'a> {
    pub definition: &'a PresentationDefinition,
    pub expected_challenge: &'a Challenge,
    pub verifier: &'a Did,
    pub resolver: &'a Resolver,
    pub registry: &'a TrustRegistry,
    pub guard: &'a dyn ChallengeGuard,
    pub now: u64,
}

/// Runs the ordered checks: holder proof, challenge, submission coverage,
/// each credential, holder binding. The expected challenge is consumed on
/// entry whatever the outcome.
pub fn verify_presentation(
    vp: &VerifiablePresentation,
    ctx: &VerificationContext<'_>,
) -> Result<AcceptedPresentation, PresentationRejection> {
    let fresh = ctx.guard.consume(&ctx.expected_challenge.nonce);

    verify_holder_proof(vp, ctx.resolver).map_err(|_| PresentationRejection::BadHolderProof)?;

    let challenge = ctx.expected_challenge;
    let options = &vp.proof.options;
    if options.challenge.as_deref() != Some(challenge.nonce.as_str())
        || options.domain.as_deref() != Some(ctx.verifier.to_string().as_str())
        || challenge.audience != vp.holder
        || challenge.is_expired(ctx.now)
    {
        return Err(PresentationRejection::BadChallenge);
    }
    if !fresh {
        return Err(PresentationRejection::ReplayedChallenge);
    }

    let mapped = check_submission(vp, ctx.definition).ok_or(PresentationRejection::SubmissionMismatch)?;

    for (descriptor, vc) in &mapped {
        credentials::verify_credential(vc, ctx.resolver, ctx.registry).map_err(|reason| {
            PresentationRejection::VcRejected {
                descriptor_id: descriptor.descriptor_id.clone(),
                reason,
            }
        })?;
    }
    if mapped.iter().any(|(_, vc)| vc.subject() != &vp.holder) {
        return Err(PresentationRejection::SubjectMismatch);
    }
    Ok(AcceptedPresentation {
        holder: vp.holder.clone(),
        claims: mapped
            .into_iter()
            .map(|(d, vc)| (d.descriptor_id.clone(), vc.claims().clone()))
            .collect(),
    })
}

fn verify_holder_proof(vp: &VerifiablePresentation, resolver: &Resolver) -> Result<(), ()> {
    if vp.proof.options.proof_purpose != ProofPurpose::Authentication {
        return Err(());
    }
    let (signer, key_id) = vp.proof.signer().map_err(|_| ())?;
    if signer != vp.holder {
        return Err(());
    }
    let doc = resolver.resolve(&vp.holder).map_err(|_| ())?;
    if !doc.is_authentication_key(&key_id) {
        return Err(());
    }
    let key = doc.key(&key_id).ok_or(())?;
    let payload = signing_payload(vp).map_err(|_| ())?;
    crypto::verify_detached(&payload, &vp.proof.jws, &key.public_key).map_err(|_| ())
}

/// Descriptor-to-credential pairs if the submission covers `pd` exactly once
/// per descriptor with matching credentials.
fn check_submission<'a>(
    vp: &'a VerifiablePresentation,
    pd: &'a PresentationDefinition,
) -> Option<Vec<(&'a InputDescriptor, &'a VerifiableCredential)>> {
    if vp.types != [VP_TYPE] || vp.submission.pd_id != pd.pd_id || pd.validate().is_err() {
        return None;
    }
    if vp.submission.descriptor_map.len() != pd.input_descriptors.len() {
        return None;
    }
    let mut out = Vec::with_capacity(pd.input_descriptors.len());
    for descriptor in &pd.input_descriptors {
        let mut hits = vp
            .submission
            .descriptor_map
            .iter()
            .filter(|m| m.descriptor_id == descriptor.descriptor_id);
        let mapping = hits.next()?;
        if hits.next().is_some() {
            return None;
        }
        let vc = vp.credentials.get(mapping.credential_index)?;
        if !descriptor.matches(vc) {
            return None;
        }
        out.push((descriptor, vc));
    }
    Some(out)
}
