//! Blocking HTTP clients: the JSON-RPC transport and a remote ledger.

use std::time::Duration;

use fabric_core::crypto::DetachedSignature;
use fabric_core::did::{Did, DidDocument};
use fabric_core::ledger::{LedgerApi, LedgerEntry, LedgerError, Receipt as LedgerReceipt};
use fabric_core::transport::{
    check_outgoing, parse_response, AgentCard, Envelope, Receipt, Transport, TransportError, AGENT_CARD_PATH, RPC_PATH,
};
use reqwest::blocking::{Client, Response};
use reqwest::StatusCode;
use serde::de::DeserializeOwned;

use crate::server::{RegisterRequest, ResolutionResult, UpdateRequest};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);

fn build_client(timeout: Duration) -> Client {
    Client::builder()
        .timeout(timeout)
        .build()
        .expect("http client builds")
}

fn transport_error(err: reqwest::Error) -> TransportError {
    if err.is_timeout() {
        TransportError::Timeout(err.to_string())
    } else if err.is_connect() || err.is_request() {
        TransportError::Connect(err.to_string())
    } else {
        TransportError::MalformedResponse(err.to_string())
    }
}

pub struct HttpTransport {
    client: Client,
}

impl HttpTransport {
    pub fn new() -> Self {
        Self::with_timeout(DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(timeout: Duration) -> Self {
        Self {
            client: build_client(timeout),
        }
    }

    fn body(response: Response, endpoint: &str) -> Result<Vec<u8>, TransportError> {
        if response.status() == StatusCode::NOT_FOUND {
            return Err(TransportError::Connect(format!("no agent at {endpoint}")));
        }
        if !response.status().is_success() {
            return Err(TransportError::MalformedResponse(format!("{endpoint}: HTTP {}", response.status())));
        }
        response
            .bytes()
            .map(|b| b.to_vec())
            .map_err(transport_error)
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        Self::new()
    }
}

impl Transport for HttpTransport {
    fn name(&self) -> &'static str {
        "http"
    }

    fn send(&self, endpoint: &str, envelope: &Envelope) -> Result<Receipt, TransportError> {
        check_outgoing(envelope)?;
        let response = self
            .client
            .post(format!("{endpoint}{RPC_PATH}"))
            .header("content-type", "application/json")
            .body(envelope.to_bytes())
            .send()
            .map_err(transport_error)?;
        parse_response(&Self::body(response, endpoint)?)
    }

    fn fetch_agent_card(&self, endpoint: &str) -> Result<AgentCard, TransportError> {
        let response = self
            .client
            .get(format!("{endpoint}{AGENT_CARD_PATH}"))
            .send()
            .map_err(transport_error)?;
        AgentCard::from_json(&Self::body(response, endpoint)?)
    }
}

/// Ledger reached over its REST API.
pub struct HttpLedger {
    base_url: String,
    client: Client,
}

impl HttpLedger {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            client: build_client(DEFAULT_TIMEOUT),
        }
    }

    fn decode<T: DeserializeOwned>(&self, result: reqwest::Result<Response>) -> Result<T, LedgerError> {
        let response = result.map_err(|e| LedgerError::Unavailable(format!("{}: {e}", self.base_url)))?;
        let status = response.status();
        let bytes = response
            .bytes()
            .map_err(|e| LedgerError::Unavailable(e.to_string()))?;
        if status.is_success() {
            serde_json::from_slice(&bytes).map_err(|e| LedgerError::Unavailable(format!("bad ledger response: {e}")))
        } else {
            Err(serde_json::from_slice::<LedgerError>(&bytes)
                .unwrap_or_else(|_| LedgerError::Unavailable(format!("{}: HTTP {status}", self.base_url))))
        }
    }
}

impl LedgerApi for HttpLedger {
    fn endpoint(&self) -> String {
        self.base_url.clone()
    }

    fn register(&self, document: &DidDocument, signature: &DetachedSignature) -> Result<LedgerReceipt, LedgerError> {
        let req = RegisterRequest {
            document: document.clone(),
            signature: signature.clone(),
        };
        self.decode(self.client.post(format!("{}/register", self.base_url)).json(&req).send())
    }

    fn update(
        &self,
        did: &Did,
        new_document: &DidDocument,
        signature: &DetachedSignature,
        expected_version: Option<u64>,
    ) -> Result<LedgerReceipt, LedgerError> {
        let req = UpdateRequest {
            did: did.clone(),
            document: new_document.clone(),
            signature: signature.clone(),
            expected_version,
        };
        self.decode(self.client.post(format!("{}/update", self.base_url)).json(&req).send())
    }

    fn resolve(&self, did: &Did) -> Result<DidDocument, LedgerError> {
        let result: ResolutionResult = self.decode(
            self.client
                .get(format!("{}/1.0/identifiers/{did}", self.base_url))
                .send(),
        )?;
        Ok(result.did_document)
    }

    fn history(&self, did: &Did) -> Result<Vec<LedgerEntry>, LedgerError> {
        self.decode(self.client.get(format!("{}/history/{did}", self.base_url)).send())
    }
}
