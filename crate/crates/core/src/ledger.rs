//! Simulated append-only ledger anchoring DID documents.
//!
//! Registration is permissionless but self-certifying: a document is only
//! accepted when its DID derives from its first authentication key and the
//! registration is signed by that key. Updates must be signed by an
//! authentication key of the current head. Entries are never mutated or
//! removed; a journal file (one JSON entry per line) makes state replayable.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{self, DetachedSignature, KeyPair};
use crate::did::{self, Did, DidDocument};

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "error", content = "detail", rename_all = "kebab-case")]
pub enum LedgerError {
    #[error("{0} is already registered")]
    AlreadyRegistered(String),
    #[error("DID does not derive from the document's first authentication key")]
    SelfCertificationMismatch,
    #[error("signature does not verify under an authorized key")]
    BadSignature,
    #[error("unknown DID {0}")]
    UnknownDid(String),
    #[error("stale version: expected {expected}, head is {actual}")]
    StaleVersion { expected: u64, actual: u64 },
    #[error("invalid document: {0}")]
    InvalidDocument(String),
    #[error("ledger unavailable: {0}")]
    Unavailable(String),
    #[error("journal error: {0}")]
    Journal(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub did: Did,
    pub version: u64,
    pub document: DidDocument,
    pub registered_by_signature: DetachedSignature,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub did: Did,
    pub version: u64,
    pub timestamp: u64,
}

/// Read/write surface of a ledger, local or remote.
pub trait LedgerApi: Send + Sync {
    /// Human-readable location, e.g. `inproc://ledger` or an HTTP base URL.
    fn endpoint(&self) -> String;

    fn register(&self, document: &DidDocument, signature: &DetachedSignature) -> Result<Receipt, LedgerError>;

    fn update(
        &self,
        did: &Did,
        new_document: &DidDocument,
        signature: &DetachedSignature,
        expected_version: Option<u64>,
    ) -> Result<Receipt, LedgerError>;

    fn resolve(&self, did: &Did) -> Result<DidDocument, LedgerError>;

    fn history(&self, did: &Did) -> Result<Vec<LedgerEntry>, LedgerError>;

    fn register_signed(&self, document: &DidDocument, key: &KeyPair) -> Result<Receipt, LedgerError> {
        self.register(document, &sign_document(document, key)?)
    }

    fn update_signed(
        &self,
        did: &Did,
        new_document: &DidDocument,
        authorizing_key: &KeyPair,
        expected_version: Option<u64>,
    ) -> Result<Receipt, LedgerError> {
        let sig = sign_document(new_document, authorizing_key)?;
        self.update(did, new_document, &sig, expected_version)
    }
}

/// Detached signature over the canonical bytes of a DID document.
pub fn sign_document(document: &DidDocument, key: &KeyPair) -> Result<DetachedSignature, LedgerError> {
    let bytes = crypto::to_canonical_bytes(document).map_err(|e| LedgerError::InvalidDocument(e.to_string()))?;
    crypto::sign_detached(&bytes, key).map_err(|e| LedgerError::InvalidDocument(e.to_string()))
}

fn document_signed_by(document: &DidDocument, sig: &DetachedSignature, key: &crypto::PublicKey) -> bool {
    crypto::to_canonical_bytes(document)
        .map(|bytes| crypto::verify_detached(&bytes, sig, key).is_ok())
        .unwrap_or(false)
}

#[derive(Debug, Default, Clone)]
struct LedgerState {
    entries: Vec<LedgerEntry>,
    head_index: HashMap<Did, usize>,
}

impl LedgerState {
    fn head(&self, did: &Did) -> Option<&LedgerEntry> {
        self.head_index.get(did).map(|&i| &self.entries[i])
    }

    fn check_register(&self, document: &DidDocument, sig: &DetachedSignature) -> Result<(), LedgerError> {
        if self.head_index.contains_key(&document.id) {
            return Err(LedgerError::AlreadyRegistered(document.id.to_string()));
        }
        document
            .validate()
            .map_err(|e| LedgerError::InvalidDocument(e.to_string()))?;
        let key = document
            .first_authentication_key()
            .ok_or(LedgerError::SelfCertificationMismatch)?;
        if document.id.is_off_ledger() || document.id.msid() != did::self_certifying_id(&key.public_key) {
            return Err(LedgerError::SelfCertificationMismatch);
        }
        if !document_signed_by(document, sig, &key.public_key) {
            return Err(LedgerError::BadSignature);
        }
        Ok(())
    }

    fn check_update(
        &self,
        did: &Did,
        new_document: &DidDocument,
        sig: &DetachedSignature,
        expected_version: Option<u64>,
    ) -> Result<u64, LedgerError> {
        let head = self.head(did).ok_or_else(|| LedgerError::UnknownDid(did.to_string()))?;
        if let Some(expected) = expected_version {
            if expected != head.version {
                return Err(LedgerError::StaleVersion {
                    expected,
                    actual: head.version,
                });
            }
        }
        if &new_document.id != did {
            return Err(LedgerError::InvalidDocument(format!(
                "document id {} does not match {did}",
                new_document.id
            )));
        }
        new_document
            .validate()
            .map_err(|e| LedgerError::InvalidDocument(e.to_string()))?;
        let authorized = head
            .document
            .authentication_keys()
            .any(|vm| document_signed_by(new_document, sig, &vm.public_key));
        if !authorized {
            return Err(LedgerError::BadSignature);
        }
        Ok(head.version + 1)
    }

    fn push(&mut self, entry: LedgerEntry) {
        self.head_index.insert(entry.did.clone(), self.entries.len());
        self.entries.push(entry);
    }

    /// Re-validates and appends a journaled entry.
    fn replay(&mut self, entry: LedgerEntry) -> Result<(), LedgerError> {
        if entry.document.id != entry.did {
            return Err(LedgerError::Journal(format!("entry for {} holds another DID's document", entry.did)));
        }
        let next_version = if entry.version == 1 {
            self.check_register(&entry.document, &entry.registered_by_signature)?;
            1
        } else {
            self.check_update(&entry.did, &entry.document, &entry.registered_by_signature, None)?
        };
        if next_version != entry.version {
            return Err(LedgerError::Journal(format!(
                "{} jumps to version {} (expected {next_version})",
                entry.did, entry.version
            )));
        }
        if entry.timestamp != self.entries.len() as u64 + 1 {
            return Err(LedgerError::Journal(format!("timestamp {} out of sequence", entry.timestamp)));
        }
        self.push(entry);
        Ok(())
    }
}

/// In-process ledger. Writers serialize on one lock; readers see only
/// committed entries.
#[derive(Debug, Default)]
pub struct Ledger {
    state: RwLock<LedgerState>,
    journal: Option<Mutex<(PathBuf, File)>>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens (or creates) a journal-backed ledger, replaying existing entries.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, LedgerError> {
        let path = path.as_ref();
        let state = if path.exists() {
            read_journal(path)?
        } else {
            LedgerState::default()
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| LedgerError::Journal(format!("{}: {e}", path.display())))?;
        Ok(Self {
            state: RwLock::new(state),
            journal: Some(Mutex::new((path.to_path_buf(), file))),
        })
    }

    /// Loads a journal into a ledger that is not attached to any file.
    pub fn load_journal(path: impl AsRef<Path>) -> Result<Self, LedgerError> {
        Ok(Self {
            state: RwLock::new(read_journal(path.as_ref())?),
            journal: None,
        })
    }

    /// Writes the full journal to `path`, replacing any existing file.
    pub fn save_journal(&self, path: impl AsRef<Path>) -> Result<(), LedgerError> {
        let path = path.as_ref();
        let mut out = String::new();
        for entry in self.entries() {
            out.push_str(&journal_line(&entry)?);
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| LedgerError::Journal(format!("{}: {e}", path.display())))
    }

    /// Snapshot of all committed entries in append order.
    pub fn entries(&self) -> Vec<LedgerEntry> {
        self.read().entries.clone()
    }

    pub fn len(&self) -> usize {
        self.read().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, LedgerState> {
        self.state.read().expect("ledger lock poisoned")
    }

    fn commit(
        &self,
        state: &mut LedgerState,
        did: &Did,
        version: u64,
        document: &DidDocument,
        signature: &DetachedSignature,
    ) -> Result<Receipt, LedgerError> {
        let entry = LedgerEntry {
            did: did.clone(),
            version,
            document: document.clone(),
            registered_by_signature: signature.clone(),
            timestamp: state.entries.len() as u64 + 1,
        };
        if let Some(journal) = &self.journal {
            let mut guard = journal.lock().expect("journal lock poisoned");
            let line = journal_line(&entry)?;
            writeln!(guard.1, "{line}")
                .and_then(|_| guard.1.flush())
                .map_err(|e| LedgerError::Journal(format!("{}: {e}", guard.0.display())))?;
        }
        let receipt = Receipt {
            did: entry.did.clone(),
            version: entry.version,
            timestamp: entry.timestamp,
        };
        state.push(entry);
        Ok(receipt)
    }
}

fn journal_line(entry: &LedgerEntry) -> Result<String, LedgerError> {
    let bytes = crypto::to_canonical_bytes(entry).map_err(|e| LedgerError::Journal(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| LedgerError::Journal(e.to_string()))
}

fn read_journal(path: &Path) -> Result<LedgerState, LedgerError> {
    let file = File::open(path).map_err(|e| LedgerError::Journal(format!("{}: {e}", path.display())))?;
    let mut state = LedgerState::default();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| LedgerError::Journal(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: LedgerEntry = serde_json::from_str(&line)
            .map_err(|e| LedgerError::Journal(format!("line {}: {e}", n + 1)))?;
        state.replay(entry)?;
    }
    Ok(state)
}

impl LedgerApi for Ledger {
    fn endpoint(&self) -> String {
        "inproc://ledger".to_string()
    }

    fn register(&self, document: &DidDocument, signature: &DetachedSignature) -> Result<Receipt, LedgerError> {
        let mut state = self.state.write().expect("ledger lock poisoned");
        state.check_register(document, signature)?;
        self.commit(&mut state, &document.id, 1, document, signature)
    }

    fn update(
        &self,
        did: &Did,
        new_document: &DidDocument,
        signature: &DetachedSignature,
        expected_version: Option<u64>,
    ) -> Result<Receipt, LedgerError> {
        let mut state = self.state.write().expect("ledger lock poisoned");
        let version = state.check_update(did, new_document, signature, expected_version)?;
        self.commit(&mut state, did, version, new_document, signature)
    }

    fn resolve(&self, did: &Did) -> Result<DidDocument, LedgerError> {
        self.read()
            .head(did)
            .map(|e| e.document.clone())
            .ok_or_else(|| LedgerError::UnknownDid(did.to_string()))
    }

    fn history(&self, did: &Did) -> Result<Vec<LedgerEntry>, LedgerError> {
        let state = self.read();
        if !state.head_index.contains_key(did) {
            return Err(LedgerError::UnknownDid(did.to_string()));
        }
        Ok(state.entries.iter().filter(|e| &e.did == did).cloned().collect())
    }
}

impl<T: LedgerApi + ?Sized> LedgerApi for std::sync::Arc<T> {
    fn endpoint(&self) -> String {
        (**self).endpoint()
    }

    fn register(&self, document: &DidDocument, signature: &DetachedSignature) -> Result<Receipt, LedgerError> {
        (**self).register(document, signature)
    }

    fn update(
        &self,
        did: &Did,
        new_document: &DidDocument,
        signature: &DetachedSignature,
        expected_version: Option<u64>,
    ) -> Result<Receipt, LedgerError> {
        (**self).update(did, new_document, signature, expected_version)
    }

    fn resolve(&self, did: &Did) -> Result<DidDocument, LedgerError> {
        (**self).resolve(did)
    }

    fn history(&self, did: &Did) -> Result<Vec<LedgerEntry>, LedgerError> {
        (**self).history(did)
    }
}
