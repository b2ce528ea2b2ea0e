//! DID syntax, DID documents and the resolver.
//!
//! Ledger-anchored DIDs are self-certifying: the method-specific id is the
//! base58 encoding of the first 16 octets of SHA-256 over the initial
//! authentication key. Orchestrator DIDs never touch the ledger; they carry
//! the `org-` prefix and are handed to agents through local documents.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::clock::LogicalClock;
use crate::crypto::{self, KeyPair, PublicKey};
use crate::ledger::LedgerApi;

pub const METHOD: &str = "agentsim";
pub const OFF_LEDGER_PREFIX: &str = "org-";
const DIGEST_LEN: usize = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DidError {
    #[error("malformed DID: {0}")]
    Malformed(String),
    #[error("invalid DID document: {0}")]
    InvalidDocument(String),
    #[error("unresolvable DID {0}")]
    Unresolvable(String),
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Did {
    msid: String,
}

impl Did {
    pub fn method(&self) -> &str {
        METHOD
    }

    pub fn msid(&self) -> &str {
        &self.msid
    }

    /// True for orchestrator DIDs that are distributed outside the ledger.
    pub fn is_off_ledger(&self) -> bool {
        self.msid.starts_with(OFF_LEDGER_PREFIX)
    }

    /// The self-certifying DID for an initial authentication key.
    pub fn from_public_key(key: &PublicKey) -> Self {
        Self {
            msid: self_certifying_id(key),
        }
    }

    pub fn off_ledger_from_public_key(key: &PublicKey) -> Self {
        Self {
            msid: format!("{OFF_LEDGER_PREFIX}{}", self_certifying_id(key)),
        }
    }

    /// DID URL naming one verification method, `did:agentsim:<msid>#<key_id>`.
    pub fn key_url(&self, key_id: &str) -> String {
        format!("{self}#{key_id}")
    }
}

pub fn self_certifying_id(key: &PublicKey) -> String {
    let digest = crypto::sha256(key.as_bytes());
    bs58::encode(&digest[..DIGEST_LEN]).into_string()
}

pub fn parse_did(s: &str) -> Result<Did, DidError> {
    let mut parts = s.splitn(3, ':');
    let (Some("did"), Some(method), Some(msid)) = (parts.next(), parts.next(), parts.next()) else {
        return Err(DidError::Malformed(format!("{s:?} is not of the form did:<method>:<id>")));
    };
    if method != METHOD {
        return Err(DidError::Malformed(format!("unsupported method {method:?}")));
    }
    let body = msid.strip_prefix(OFF_LEDGER_PREFIX).unwrap_or(msid);
    if body.is_empty() || bs58::decode(body).into_vec().is_err() {
        return Err(DidError::Malformed(format!("method-specific id {msid:?} is not base58")));
    }
    Ok(Did {
        msid: msid.to_string(),
    })
}

pub fn serialize_did(did: &Did) -> String {
    did.to_string()
}

/// Splits `did#fragment` into its DID and key id.
pub fn split_key_url(url: &str) -> Result<(Did, String), DidError> {
    let (did, fragment) = url
        .split_once('#')
        .ok_or_else(|| DidError::Malformed(format!("{url:?} has no key fragment")))?;
    if fragment.is_empty() {
        return Err(DidError::Malformed(format!("{url:?} has an empty key fragment")));
    }
    Ok((parse_did(did)?, fragment.to_string()))
}

impl fmt::Display for Did {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "did:{METHOD}:{}", self.msid)
    }
}

impl fmt::Debug for Did {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Did({self})")
    }
}

impl FromStr for Did {
    type Err = DidError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_did(s)
    }
}

impl Serialize for Did {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Did {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse_did(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationMethod {
    pub key_id: String,
    pub controller: Did,
    pub public_key: PublicKey,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Service {
    pub service_id: String,
    #[serde(rename = "type")]
    pub service_type: String,
    pub endpoint: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DidDocument {
    pub id: Did,
    pub verification_methods: Vec<VerificationMethod>,
    pub authentication: Vec<String>,
    #[serde(default)]
    pub services: Vec<Service>,
}

impl DidDocument {
    /// A document with a single key used for authentication and assertions.
    pub fn single_key(id: Did, keypair: &KeyPair, services: Vec<Service>) -> Self {
        Self {
            verification_methods: vec![VerificationMethod {
                key_id: keypair.key_id().to_string(),
                controller: id.clone(),
                public_key: keypair.public_key(),
            }],
            authentication: vec![keypair.key_id().to_string()],
            id,
            services,
        }
    }

    pub fn validate(&self) -> Result<(), DidError> {
        if self.authentication.is_empty() {
            return Err(DidError::InvalidDocument("no authentication key".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for vm in &self.verification_methods {
            if vm.key_id.is_empty() {
                return Err(DidError::InvalidDocument("empty key_id".into()));
            }
            if !seen.insert(vm.key_id.as_str()) {
                return Err(DidError::InvalidDocument(format!("duplicate key_id {}", vm.key_id)));
            }
        }
        for reference in &self.authentication {
            if !seen.contains(reference.as_str()) {
                return Err(DidError::InvalidDocument(format!(
                    "authentication reference {reference} has no verification method"
                )));
            }
        }
        Ok(())
    }

    pub fn key(&self, key_id: &str) -> Option<&VerificationMethod> {
        self.verification_methods.iter().find(|vm| vm.key_id == key_id)
    }

    pub fn authentication_keys(&self) -> impl Iterator<Item = &VerificationMethod> {
        self.authentication.iter().filter_map(|id| self.key(id))
    }

    pub fn is_authentication_key(&self, key_id: &str) -> bool {
        self.authentication.iter().any(|k| k == key_id)
    }

    pub fn first_authentication_key(&self) -> Option<&VerificationMethod> {
        self.authentication_keys().next()
    }
}

pub fn new_self_certified_document(keypair: &KeyPair, services: Vec<Service>) -> (Did, DidDocument) {
    let did = Did::from_public_key(&keypair.public_key());
    let doc = DidDocument::single_key(did.clone(), keypair, services);
    (did, doc)
}

/// Document for an orchestrator, which lives outside the ledger.
pub fn new_off_ledger_document(keypair: &KeyPair, services: Vec<Service>) -> (Did, DidDocument) {
    let did = Did::off_ledger_from_public_key(&keypair.public_key());
    let doc = DidDocument::single_key(did.clone(), keypair, services);
    (did, doc)
}

#[derive(Clone)]
pub struct ResolverConfig {
    pub ledger: Arc<dyn LedgerApi>,
    pub local_documents: BTreeMap<Did, DidDocument>,
    /// Logical ticks a ledger answer may be served from cache; 0 disables caching.
    pub cache_ttl: u64,
}

impl ResolverConfig {
    pub fn new(ledger: Arc<dyn LedgerApi>) -> Self {
        Self {
            ledger,
            local_documents: BTreeMap::new(),
            cache_ttl: 0,
        }
    }

    pub fn with_local_documents(mut self, docs: BTreeMap<Did, DidDocument>) -> Self {
        self.local_documents = docs;
        self
    }

    pub fn with_cache_ttl(mut self, ttl: u64) -> Self {
        self.cache_ttl = ttl;
        self
    }

    pub fn ledger_endpoint(&self) -> String {
        self.ledger.endpoint()
    }
}

impl fmt::Debug for ResolverConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ResolverConfig")
            .field("ledger_endpoint", &self.ledger.endpoint())
            .field("local_documents", &self.local_documents.keys().collect::<Vec<_>>())
            .field("cache_ttl", &self.cache_ttl)
            .finish()
    }
}

/// Resolves local orchestrator documents first, then the ledger.
pub struct Resolver {
    config: ResolverConfig,
    clock: LogicalClock,
    cache: Mutex<HashMap<Did, (DidDocument, u64)>>,
    ledger_reads: AtomicU64,
}

impl fmt::Debug for Resolver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Resolver")
            .field("config", &self.config)
            .field("ledger_reads", &self.ledger_reads())
            .finish_non_exhaustive()
    }
}

impl Resolver {
    pub fn new(config: ResolverConfig, clock: LogicalClock) -> Result<Self, DidError> {
        for (did, doc) in &config.local_documents {
            doc.validate()?;
            if &doc.id != did {
                return Err(DidError::InvalidDocument(format!(
                    "local document for {did} has id {}",
                    doc.id
                )));
            }
        }
        Ok(Self {
            config,
            clock,
            cache: Mutex::new(HashMap::new()),
            ledger_reads: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &ResolverConfig {
        &self.config
    }

    /// Number of lookups that reached the ledger.
    pub fn ledger_reads(&self) -> u64 {
        self.ledger_reads.load(Ordering::Relaxed)
    }

    pub fn resolve(&self, did: &Did) -> Result<DidDocument, DidError> {
        if let Some(doc) = self.config.local_documents.get(did) {
            return Ok(doc.clone());
        }
        if did.is_off_ledger() {
            return Err(DidError::Unresolvable(did.to_string()));
        }
        let now = self.clock.now();
        let ttl = self.config.cache_ttl;
        if ttl > 0 {
            let cache = self.cache.lock().expect("resolver cache poisoned");
            if let Some((doc, fetched)) = cache.get(did) {
                if now < fetched.saturating_add(ttl) {
                    return Ok(doc.clone());
                }
            }
        }
        self.ledger_reads.fetch_add(1, Ordering::Relaxed);
        let doc = self
            .config
            .ledger
            .resolve(did)
            .map_err(|_| DidError::Unresolvable(did.to_string()))?;
        if ttl > 0 {
            self.cache
                .lock()
                .expect("resolver cache poisoned")
                .insert(did.clone(), (doc.clone(), now));
        }
        Ok(doc)
    }
}

pub fn resolve_any(did: &Did, resolver: &Resolver) -> Result<DidDocument, DidError> {
    resolver.resolve(did)
}
