//! File-system wallet: the agent's key, its own credentials, locally trusted
//! DID documents and trust registries.
//!
//! Layout under the root directory, every file canonical JSON:
//!
//! ```text
//! key.json                      {agent_did, key_id, seed}
//! credentials/<sha256(cred_id)>.json
//! trusted_docs/<sha256(did)>.json
//! registry.json                 {intra, cross}
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::credentials::{
    verify_credential, CredentialRejection, TrustRegistry, TrustScope, VerifiableCredential,
};
use crate::crypto::{self, generate_keypair, KeyPair, SEED_LEN};
use crate::did::{Did, DidDocument, Resolver};
use crate::presentation::{select_credentials, PresentationDefinition, PresentationError};

pub const KEY_FILE: &str = "key.json";
pub const REGISTRY_FILE: &str = "registry.json";
pub const CREDENTIALS_DIR: &str = "credentials";
pub const TRUSTED_DOCS_DIR: &str = "trusted_docs";
pub const LOCK_FILE: &str = ".lock";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WalletError {
    #[error("corrupt wallet store: {0}")]
    CorruptStore(String),
    #[error("wallet not writable: {0}")]
    Unwritable(String),
    #[error("credential subject is not the wallet owner")]
    SubjectMismatch,
    #[error("credential failed verification: {0}")]
    UnverifiedCredential(CredentialRejection),
    #[error("wallet at {0} is locked by another owner")]
    Locked(String),
}

/// At-rest protection for the seed in key.json. Only the plaintext form
/// ships; an encrypting implementation can be swapped in here.
pub trait SeedSealer {
    fn seal(&self, seed: &[u8; SEED_LEN]) -> String;
    fn unseal(&self, sealed: &str) -> Result<[u8; SEED_LEN], WalletError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PlaintextSealer;

impl SeedSealer for PlaintextSealer {
    fn seal(&self, seed: &[u8; SEED_LEN]) -> String {
        hex::encode(seed)
    }

    fn unseal(&self, sealed: &str) -> Result<[u8; SEED_LEN], WalletError> {
        hex::decode(sealed)
            .ok()
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| WalletError::CorruptStore("seed is not 32 hex-encoded bytes".into()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KeyFile {
    agent_did: Did,
    key_id: String,
    seed: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegistryFile {
    intra: TrustRegistry,
    cross: TrustRegistry,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Wallet {
    pub agent_did: Did,
    pub keypair: KeyPair,
    credentials: BTreeMap<String, VerifiableCredential>,
    pub local_documents: BTreeMap<Did, DidDocument>,
    /// Registry for credentials from the agent's own domain.
    pub registry: TrustRegistry,
    /// Registry for credentials presented by agents of other domains.
    pub cross_registry: TrustRegistry,
    pub root_path: PathBuf,
}

fn hashed_name(id: &str) -> String {
    format!("{}.json", hex::encode(crypto::sha256(id.as_bytes())))
}

fn write_canonical<T: Serialize>(path: &Path, value: &T) -> Result<(), WalletError> {
    let bytes = crypto::to_canonical_bytes(value).map_err(|e| WalletError::Unwritable(e.to_string()))?;
    fs::write(path, bytes).map_err(|e| WalletError::Unwritable(format!("{}: {e}", path.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, WalletError> {
    let bytes = fs::read(path).map_err(|e| WalletError::CorruptStore(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| WalletError::CorruptStore(format!("{}: {e}", path.display())))
}

/// `*.json` files in `dir`, sorted; a missing directory reads as empty.
fn json_files(dir: &Path) -> Result<Vec<PathBuf>, WalletError> {
    let entries = match fs::read_dir(dir) {
        Ok(entries) => entries,
        Err(e) if e.kind() == ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(WalletError::CorruptStore(format!("{}: {e}", dir.display()))),
    };
    let mut files = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|e| WalletError::CorruptStore(e.to_string()))?
            .path();
        if path.extension().is_some_and(|ext| ext == "json") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

impl Wallet {
    pub fn new(root_path: impl Into<PathBuf>, agent_did: Did, keypair: KeyPair) -> Self {
        Self {
            agent_did,
            keypair,
            credentials: BTreeMap::new(),
            local_documents: BTreeMap::new(),
            registry: TrustRegistry::new(TrustScope::Intra),
            cross_registry: TrustRegistry::new(TrustScope::Cross),
            root_path: root_path.into(),
        }
    }

    /// Credentials ordered by `cred_id`.
    pub fn credentials(&self) -> Vec<VerifiableCredential> {
        self.credentials.values().cloned().collect()
    }

    pub fn credential(&self, cred_id: &str) -> Option<&VerifiableCredential> {
        self.credentials.get(cred_id)
    }

    pub fn credentials_of_type<'a>(&'a self, credential_type: &'a str) -> impl Iterator<Item = &'a VerifiableCredential> {
        self.credentials.values().filter(move |vc| vc.credential_type() == credential_type)
    }

    pub fn select(&self, pd: &PresentationDefinition) -> Result<Vec<(String, VerifiableCredential)>, PresentationError> {
        select_credentials(&self.credentials(), pd)
    }

    /// Inserts without verification. Deployment uses this for credentials it
    /// has just issued itself; everything else goes through [`add_credential`].
    pub fn insert_trusted(&mut self, vc: VerifiableCredential) -> Result<(), WalletError> {
        if vc.subject() != &self.agent_did {
            return Err(WalletError::SubjectMismatch);
        }
        self.credentials.insert(vc.cred_id.clone(), vc);
        Ok(())
    }

    pub fn remove_credential(&mut self, cred_id: &str) -> Option<VerifiableCredential> {
        self.credentials.remove(cred_id)
    }

    pub fn save(&self) -> Result<(), WalletError> {
        self.save_with(&PlaintextSealer)
    }

    pub fn save_with(&self, sealer: &dyn SeedSealer) -> Result<(), WalletError> {
        let root = &self.root_path;
        let cred_dir = root.join(CREDENTIALS_DIR);
        let docs_dir = root.join(TRUSTED_DOCS_DIR);
        for dir in [root, &cred_dir, &docs_dir] {
            fs::create_dir_all(dir).map_err(|e| WalletError::Unwritable(format!("{}: {e}", dir.display())))?;
        }
        write_canonical(
            &root.join(KEY_FILE),
            &KeyFile {
                agent_did: self.agent_did.clone(),
                key_id: self.keypair.key_id().to_string(),
                seed: sealer.seal(self.keypair.seed()),
            },
        )?;
        let mut keep_creds = Vec::new();
        for (id, vc) in &self.credentials {
            let name = hashed_name(id);
            write_canonical(&cred_dir.join(&name), vc)?;
            keep_creds.push(name);
        }
        let mut keep_docs = Vec::new();
        for (did, doc) in &self.local_documents {
            let name = hashed_name(&did.to_string());
            write_canonical(&docs_dir.join(&name), doc)?;
            keep_docs.push(name);
        }
        for (dir, keep) in [(&cred_dir, keep_creds), (&docs_dir, keep_docs)] {
            for stale in json_files(dir)? {
                let name = stale.file_name().and_then(|n| n.to_str()).unwrap_or_default();
                if !keep.iter().any(|k| k == name) {
                    fs::remove_file(&stale).map_err(|e| WalletError::Unwritable(e.to_string()))?;
                }
            }
        }
        write_canonical(
            &root.join(REGISTRY_FILE),
            &RegistryFile {
                intra: self.registry.clone(),
                cross: self.cross_registry.clone(),
            },
        )
    }

    pub fn load(root_path: impl AsRef<Path>) -> Result<Self, WalletError> {
        Self::load_with(root_path, &PlaintextSealer)
    }

    pub fn load_with(root_path: impl AsRef<Path>, sealer: &dyn SeedSealer) -> Result<Self, WalletError> {
        let root = root_path.as_ref();
        let key: KeyFile = read_json(&root.join(KEY_FILE))?;
        let keypair = generate_keypair(&sealer.unseal(&key.seed)?)
            .map_err(|e| WalletError::CorruptStore(e.to_string()))?
            .with_key_id(key.key_id.clone());
        if keypair.key_id() != key.key_id {
            return Err(WalletError::CorruptStore("empty key_id".into()));
        }
        let mut wallet = Wallet::new(root, key.agent_did, keypair);

        for path in json_files(&root.join(CREDENTIALS_DIR))? {
            let vc: VerifiableCredential = read_json(&path)?;
            if path.file_name().and_then(|n| n.to_str()) != Some(hashed_name(&vc.cred_id).as_str()) {
                return Err(WalletError::CorruptStore(format!("{} does not match its cred_id", path.display())));
            }
            if vc.subject() != &wallet.agent_did {
                return Err(WalletError::CorruptStore(format!("{} is about another subject", path.display())));
            }
            wallet.credentials.insert(vc.cred_id.clone(), vc);
        }
        for path in json_files(&root.join(TRUSTED_DOCS_DIR))? {
            let doc: DidDocument = read_json(&path)?;
            doc.validate().map_err(|e| WalletError::CorruptStore(e.to_string()))?;
            if path.file_name().and_then(|n| n.to_str()) != Some(hashed_name(&doc.id.to_string()).as_str()) {
                return Err(WalletError::CorruptStore(format!("{} does not match its DID", path.display())));
            }
            wallet.local_documents.insert(doc.id.clone(), doc);
        }
        let registries: RegistryFile = read_json(&root.join(REGISTRY_FILE))?;
        for (registry, scope) in [(&registries.intra, TrustScope::Intra), (&registries.cross, TrustScope::Cross)] {
            if registry.scope != scope {
                return Err(WalletError::CorruptStore("registry scope mismatch".into()));
            }
            registry.validate().map_err(WalletError::CorruptStore)?;
        }
        wallet.registry = registries.intra;
        wallet.cross_registry = registries.cross;
        Ok(wallet)
    }
}

/// Verifies `vc` against the wallet's intra-domain registry, stores it and
/// persists the wallet. Adding the same `cred_id` again is a no-op.
pub fn add_credential(wallet: &mut Wallet, vc: VerifiableCredential, resolver: &Resolver) -> Result<(), WalletError> {
    if vc.subject() != &wallet.agent_did {
        return Err(WalletError::SubjectMismatch);
    }
    if wallet.credentials.get(&vc.cred_id) == Some(&vc) {
        return Ok(());
    }
    verify_credential(&vc, resolver, &wallet.registry).map_err(WalletError::UnverifiedCredential)?;
    wallet.credentials.insert(vc.cred_id.clone(), vc);
    wallet.save()
}

/// Advisory single-owner lock; released on drop.
#[derive(Debug)]
pub struct WalletLock {
    path: PathBuf,
}

impl WalletLock {
    pub fn acquire(root_path: impl AsRef<Path>) -> Result<Self, WalletError> {
        let root = root_path.as_ref();
        fs::create_dir_all(root).map_err(|e| WalletError::Unwritable(e.to_string()))?;
        let path = root.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(WalletError::Locked(root.display().to_string())),
            Err(e) => Err(WalletError::Unwritable(e.to_string())),
        }
    }
}

impl Drop for WalletLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
