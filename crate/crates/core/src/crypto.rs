//! Key material, canonical JSON bytes and detached Ed25519 JWS.
//!
//! Every proof in the fabric is a detached compact JWS (`header..signature`).
//! The signing input is `header_b64 "." base64url(payload)`. Signatures are
//! pure Ed25519 and therefore deterministic.

use std::fmt;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine as _;
use ed25519_dalek::{Signer as _, SigningKey, Verifier as _, VerifyingKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const SEED_LEN: usize = 32;
pub const PUBLIC_KEY_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;

/// The only algorithm accepted by [`verify_detached`].
pub const JWS_ALGORITHM: &str = "EdDSA";

/// Multicodec prefix for an Ed25519 public key (`0xed 0x01`).
const ED25519_MULTICODEC: [u8; 2] = [0xed, 0x01];

const DEFAULT_KEY_ID: &str = "key-1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("seed must be exactly {SEED_LEN} octets, got {0}")]
    SeedLength(usize),
    #[error("document cannot be canonicalized: {0}")]
    NonCanonicalizable(String),
    #[error("payload must not be empty")]
    EmptyPayload,
    #[error("malformed encoding: {0}")]
    Malformed(String),
}

pub fn b64url_encode(bytes: &[u8]) -> String {
    URL_SAFE_NO_PAD.encode(bytes)
}

pub fn b64url_decode(s: &str) -> Result<Vec<u8>, CryptoError> {
    URL_SAFE_NO_PAD
        .decode(s)
        .map_err(|e| CryptoError::Malformed(format!("base64url: {e}")))
}

pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

/// An Ed25519 verification key.
///
/// Serializes as a multibase (`z` + base58btc) string of the multicodec
/// prefixed key, the form used inside DID documents.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey([u8; PUBLIC_KEY_LEN]);

impl PublicKey {
    pub fn from_bytes(bytes: [u8; PUBLIC_KEY_LEN]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; PUBLIC_KEY_LEN] {
        &self.0
    }

    pub fn to_multibase(&self) -> String {
        let mut buf = Vec::with_capacity(2 + PUBLIC_KEY_LEN);
        buf.extend_from_slice(&ED25519_MULTICODEC);
        buf.extend_from_slice(&self.0);
        format!("z{}", bs58::encode(buf).into_string())
    }

    pub fn from_multibase(s: &str) -> Result<Self, CryptoError> {
        let body = s
            .strip_prefix('z')
            .ok_or_else(|| CryptoError::Malformed("multibase key must use base58btc ('z')".into()))?;
        let raw = bs58::decode(body)
            .into_vec()
            .map_err(|e| CryptoError::Malformed(format!("base58: {e}")))?;
        let key = raw
            .strip_prefix(&ED25519_MULTICODEC[..])
            .ok_or_else(|| CryptoError::Malformed("not an Ed25519 multicodec key".into()))?;
        let bytes: [u8; PUBLIC_KEY_LEN] = key
            .try_into()
            .map_err(|_| CryptoError::Malformed(format!("public key length {}", key.len())))?;
        Ok(Self(bytes))
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", self.to_multibase())
    }
}

impl Serialize for PublicKey {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_multibase())
    }
}

impl<'de> Deserialize<'de> for PublicKey {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Self::from_multibase(&s).map_err(serde::de::Error::custom)
    }
}

/// Signing key material bound to the fragment that names it in a DID document.
#[derive(Clone, PartialEq, Eq)]
pub struct KeyPair {
    seed: [u8; SEED_LEN],
    public_key: PublicKey,
    key_id: String,
}

impl KeyPair {
    pub fn seed(&self) -> &[u8; SEED_LEN] {
        &self.seed
    }

    pub fn public_key(&self) -> PublicKey {
        self.public_key
    }

    pub fn key_id(&self) -> &str {
        &self.key_id
    }

    /// Rebinds the key to another fragment. Empty ids are ignored.
    pub fn with_key_id(mut self, key_id: impl Into<String>) -> Self {
        let key_id = key_id.into();
        if !key_id.is_empty() {
            self.key_id = key_id;
        }
        self
    }

    fn signing_key(&self) -> SigningKey {
        SigningKey::from_bytes(&self.seed)
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("public_key", &self.public_key)
            .field("key_id", &self.key_id)
            .finish_non_exhaustive()
    }
}

pub fn generate_keypair(seed: &[u8]) -> Result<KeyPair, CryptoError> {
    let seed: [u8; SEED_LEN] = seed
        .try_into()
        .map_err(|_| CryptoError::SeedLength(seed.len()))?;
    let public_key = PublicKey(SigningKey::from_bytes(&seed).verifying_key().to_bytes());
    Ok(KeyPair {
        seed,
        public_key,
        key_id: DEFAULT_KEY_ID.to_string(),
    })
}

// ---------------------------------------------------------------------------
// Canonical JSON
// ---------------------------------------------------------------------------

/// Serializes a JSON value with code-point-sorted object keys, no
/// insignificant whitespace and minimal string escaping.
pub fn canonicalize(document: &Value) -> Result<Vec<u8>, CryptoError> {
    let mut out = String::new();
    write_canonical(document, &mut out)?;
    Ok(out.into_bytes())
}

/// Parses JSON text and canonicalizes it. Non-JSON input, including the
/// `NaN`/`Infinity` literals some encoders emit, is rejected.
pub fn canonicalize_str(text: &str) -> Result<Vec<u8>, CryptoError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| CryptoError::NonCanonicalizable(e.to_string()))?;
    canonicalize(&value)
}

pub fn to_canonical_bytes<T: Serialize>(document: &T) -> Result<Vec<u8>, CryptoError> {
    let value =
        serde_json::to_value(document).map_err(|e| CryptoError::NonCanonicalizable(e.to_string()))?;
    canonicalize(&value)
}

fn write_canonical(value: &Value, out: &mut String) -> Result<(), CryptoError> {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => write_number(n, out)?,
        Value::String(s) => write_string(s, out),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out)?;
            }
            out.push(']');
        }
        Value::Object(map) => {
            // Rust string ordering is byte order of UTF-8, which equals
            // code point order.
            let mut entries: Vec<(&String, &Value)> = map.iter().collect();
            entries.sort_by(|a, b| a.0.cmp(b.0));
            out.push('{');
            for (i, (key, item)) in entries.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_string(key, out);
                out.push(':');
                write_canonical(item, out)?;
            }
            out.push('}');
        }
    }
    Ok(())
}

fn write_number(n: &serde_json::Number, out: &mut String) -> Result<(), CryptoError> {
    if let Some(i) = n.as_i64() {
        out.push_str(&i.to_string());
    } else if let Some(u) = n.as_u64() {
        out.push_str(&u.to_string());
    } else {
        let f = n
            .as_f64()
            .ok_or_else(|| CryptoError::NonCanonicalizable(format!("number {n}")))?;
        if !f.is_finite() {
            return Err(CryptoError::NonCanonicalizable(format!("non-finite number {f}")));
        }
        if f.fract() == 0.0 && f.abs() < 1e21 {
            out.push_str(&format!("{f:.0}"));
        } else {
            out.push_str(&n.to_string());
        }
    }
    Ok(())
}

fn write_string(s: &str, out: &mut String) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\u{08}' => out.push_str("\\b"),
            '\u{0c}' => out.push_str("\\f"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
}

// ---------------------------------------------------------------------------
// Detached JWS
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtectedHeader {
    pub alg: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b64: Option<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub crit: Vec<String>,
}

impl ProtectedHeader {
    pub fn eddsa() -> Self {
        Self {
            alg: JWS_ALGORITHM.to_string(),
            b64: Some(true),
            crit: vec!["b64".to_string()],
        }
    }

    fn is_supported(&self) -> bool {
        self.alg == JWS_ALGORITHM
            && self.b64 == Some(true)
            && self.crit.iter().all(|c| c == "b64")
    }
}

/// A compact JWS with an empty payload segment.
///
/// The encoded header segment is kept verbatim so that decoding and
/// re-encoding are byte-exact even for headers this crate would not emit.
#[derive(Clone, PartialEq, Eq)]
pub struct DetachedSignature {
    header_segment: String,
    protected_header: ProtectedHeader,
    signature: [u8; SIGNATURE_LEN],
}

impl DetachedSignature {
    pub fn protected_header(&self) -> &ProtectedHeader {
        &self.protected_header
    }

    pub fn signature(&self) -> &[u8; SIGNATURE_LEN] {
        &self.signature
    }

    pub fn compact_form(&self) -> String {
        format!("{}..{}", self.header_segment, b64url_encode(&self.signature))
    }

    pub fn from_compact(compact: &str) -> Result<Self, CryptoError> {
        let mut parts = compact.split('.');
        let (Some(header_segment), Some(payload), Some(sig_segment), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(CryptoError::Malformed("compact JWS needs exactly two dots".into()));
        };
        if !payload.is_empty() {
            return Err(CryptoError::Malformed("payload segment must be empty".into()));
        }
        let header_json = b64url_decode(header_segment)?;
        let protected_header: ProtectedHeader = serde_json::from_slice(&header_json)
            .map_err(|e| CryptoError::Malformed(format!("protected header: {e}")))?;
        let raw = b64url_decode(sig_segment)?;
        let signature: [u8; SIGNATURE_LEN] = raw
            .as_slice()
            .try_into()
            .map_err(|_| CryptoError::Malformed(format!("signature length {}", raw.len())))?;
        Ok(Self {
            header_segment: header_segment.to_string(),
            protected_header,
            signature,
        })
    }

    /// Builds a signature whose header segment is the canonical encoding of
    /// `header`. Intended for constructing test inputs with odd headers.
    pub fn with_header(header: ProtectedHeader, signature: [u8; SIGNATURE_LEN]) -> Self {
        let header_segment = encode_header(&header);
        Self {
            header_segment,
            protected_header: header,
            signature,
        }
    }
}

impl fmt::Debug for DetachedSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("DetachedSignature").field(&self.compact_form()).finish()
    }
}

impl fmt::Display for DetachedSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.compact_form())
    }
}

impl Serialize for DetachedSignature {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.compact_form())
    }
}

impl<'de> Deserialize<'de> for DetachedSignature {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Self::from_compact(&s).map_err(serde::de::Error::custom)
    }
}

fn encode_header(header: &ProtectedHeader) -> String {
    // A struct of strings, a bool and a list of strings always canonicalizes.
    let bytes = to_canonical_bytes(header).expect("protected header canonicalizes");
    b64url_encode(&bytes)
}

fn signing_input(header_segment: &str, payload: &[u8]) -> Vec<u8> {
    format!("{header_segment}.{}", b64url_encode(payload)).into_bytes()
}

pub fn sign_detached(payload: &[u8], key: &KeyPair) -> Result<DetachedSignature, CryptoError> {
    if payload.is_empty() {
        return Err(CryptoError::EmptyPayload);
    }
    let protected_header = ProtectedHeader::eddsa();
    let header_segment = encode_header(&protected_header);
    let signature = key
        .signing_key()
        .sign(&signing_input(&header_segment, payload))
        .to_bytes();
    Ok(DetachedSignature {
        header_segment,
        protected_header,
        signature,
    })
}

/// Why a detached signature was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignatureFault {
    BadSignature,
    BadHeader,
    Malformed,
}

impl SignatureFault {
    pub fn as_str(&self) -> &'static str {
        match self {
            SignatureFault::BadSignature => "bad-signature",
            SignatureFault::BadHeader => "bad-header",
            SignatureFault::Malformed => "malformed",
        }
    }
}

impl fmt::Display for SignatureFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn verify_detached(
    payload: &[u8],
    sig: &DetachedSignature,
    public_key: &PublicKey,
) -> Result<(), SignatureFault> {
    if !sig.protected_header.is_supported() {
        return Err(SignatureFault::BadHeader);
    }
    let key = VerifyingKey::from_bytes(public_key.as_bytes()).map_err(|_| SignatureFault::Malformed)?;
    let signature = ed25519_dalek::Signature::from_bytes(&sig.signature);
    key.verify_strict(&signing_input(&sig.header_segment, payload), &signature)
        .map_err(|_| SignatureFault::BadSignature)
}

/// Like [`verify_detached`] but starting from the compact string form.
pub fn verify_compact(payload: &[u8], compact: &str, public_key: &PublicKey) -> Result<(), SignatureFault> {
    let sig = DetachedSignature::from_compact(compact).map_err(|_| SignatureFault::Malformed)?;
    verify_detached(payload, &sig, public_key)
}

/// Raw Ed25519 signature over `message`, without any JWS framing.
pub fn sign_raw(key: &KeyPair, message: &[u8]) -> [u8; SIGNATURE_LEN] {
    key.signing_key().sign(message).to_bytes()
}

pub fn verify_raw(public_key: &PublicKey, message: &[u8], signature: &[u8; SIGNATURE_LEN]) -> bool {
    VerifyingKey::from_bytes(public_key.as_bytes())
        .map(|key| {
            key.verify(message, &ed25519_dalek::Signature::from_bytes(signature))
                .is_ok()
        })
        .unwrap_or(false)
}
