#!/usr/bin/env python3
"""Independent oracle for the crypto and DID fixtures.

Uses the `cryptography` package for Ed25519, Python's json module for the
sorted-key compact serialization, and a hand-written base58 encoder. Nothing
here shares code with the Rust implementation. Run once; outputs are frozen
into crypto_fixtures.json.
"""
import base64
import hashlib
import json

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
from cryptography.hazmat.primitives import serialization

B58 = "123456789ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz"


def b58(data: bytes) -> str:
    n = int.from_bytes(data, "big")
    out = ""
    while n:
        n, r = divmod(n, 58)
        out = B58[r] + out
    pad = len(data) - len(data.lstrip(b"\0"))
    return "1" * pad + out


def b64u(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode()


def canon(doc) -> bytes:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode()


def pk_of(seed: bytes) -> bytes:
    return Ed25519PrivateKey.from_private_bytes(seed).public_key().public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw
    )


def sign(seed: bytes, msg: bytes) -> bytes:
    return Ed25519PrivateKey.from_private_bytes(seed).sign(msg)


HEADER = {"alg": "EdDSA", "b64": True, "crit": ["b64"]}


def jws(seed: bytes, payload: bytes) -> str:
    h = b64u(canon(HEADER))
    sig = sign(seed, (h + "." + b64u(payload)).encode())
    return h + ".." + b64u(sig)


RFC_TEST1_SEED = bytes.fromhex("9d61b19deffd5a60ba844af492ec2cc44449c5697b326919703bac031cae7f60")
RFC_TEST2_SEED = bytes.fromhex("4ccd089b28ff96da9db6c346ec114e0f5b8a319f35aba624da8cf6ed4fb8a6fb")
ORCH_SEED = bytes(range(32))

credential = {
    "@context": ["https://www.w3.org/2018/credentials/v1", "https://example.org/agents/v1"],
    "type": ["VerifiableCredential", "BasicAgentCredential"],
    "cred_id": "urn:uuid:3f1c2b8e-0000-8000-8000-00000000beef",
    "issuer": "did:agentsim:org-5xQWyjdjJ5Ra2gaFQRBVco",
    "issuance_date": "2025-01-01T00:00:00Z",
    "credential_subject": {
        "id": "did:agentsim:Wf4Fh7E3UmgAPW6T2hYkX3",
        "claims": {"agent": True, "profile": {"note": "café \"quoted\"\n", "levels": {"depth": 3, "tags": ["b", "a"]}}},
    },
}

zero_pk = pk_of(bytes(32))
t1_pk = pk_of(RFC_TEST1_SEED)
canon_cred = canon(credential)

out = {
    "zero_seed_public_key_hex": zero_pk.hex(),
    "rfc_test1_public_key_hex": t1_pk.hex(),
    "rfc_test1_did": "did:agentsim:" + b58(hashlib.sha256(t1_pk).digest()[:16]),
    "rfc_test1_multibase": "z" + b58(bytes([0xED, 0x01]) + t1_pk),
    "orchestrator_seed_hex": ORCH_SEED.hex(),
    "orchestrator_public_key_hex": pk_of(ORCH_SEED).hex(),
    "nested_credential": credential,
    "nested_credential_canonical": canon_cred.decode(),
    "nested_credential_jws": jws(ORCH_SEED, canon_cred),
    "rfc_test2_detached_jws": jws(RFC_TEST2_SEED, bytes([0x72])),
    "header_segment": b64u(canon(HEADER)),
}
print(json.dumps(out, indent=2, ensure_ascii=False))
