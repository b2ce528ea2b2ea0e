//! HTTP binding for the agent identity fabric: a JSON-RPC 2.0 wire in the A2A
//! style and the ledger's REST API.
//!
//! Agents are hosted as `http://<host>:<port>/agents/<domain>/<agent>`, with
//! `POST {endpoint}/rpc` for messages and `GET {endpoint}/.well-known/agent-card`
//! for discovery.

mod client;
mod server;

use std::net::{Ipv4Addr, SocketAddr};
use std::sync::Arc;

use fabric_core::ledger::LedgerApi;
use fabric_core::transport::{AgentCard, Binding, Inbox, Transport, TransportError};

pub use client::{HttpLedger, HttpTransport, DEFAULT_TIMEOUT};
pub use server::{HttpServer, RegisterRequest, ResolutionResult, UpdateRequest};

/// Server and client for one HTTP deployment.
pub struct HttpBinding {
    server: HttpServer,
    transport: Arc<HttpTransport>,
}

impl HttpBinding {
    /// Listens on 127.0.0.1:`port`; port 0 picks a free one.
    pub fn start(port: u16) -> Result<Self, TransportError> {
        Self::start_with_ledger(port, None)
    }

    /// Also serves `ledger` over REST from the same listener.
    pub fn start_with_ledger(port: u16, ledger: Option<Arc<dyn LedgerApi>>) -> Result<Self, TransportError> {
        let server = HttpServer::start(SocketAddr::from((Ipv4Addr::LOCALHOST, port)), ledger)?;
        Ok(Self {
            server,
            transport: Arc::new(HttpTransport::new()),
        })
    }

    pub fn base_url(&self) -> String {
        self.server.base_url()
    }

    pub fn server(&self) -> &HttpServer {
        &self.server
    }
}

impl Binding for HttpBinding {
    fn transport(&self) -> Arc<dyn Transport> {
        self.transport.clone()
    }

    fn endpoint_for(&self, domain: &str, agent: &str) -> String {
        format!("{}/agents/{domain}/{agent}", self.server.base_url())
    }

    fn mount(&self, endpoint: &str, inbox: Arc<Inbox>, card: AgentCard) -> Result<(), TransportError> {
        let prefix = format!("{}/agents/", self.server.base_url());
        let path = endpoint
            .strip_prefix(&prefix)
            .ok_or_else(|| TransportError::Bind(format!("{endpoint} is not served by {}", self.server.base_url())))?;
        match path.split('/').collect::<Vec<_>>()[..] {
            [domain, agent] if !domain.is_empty() && !agent.is_empty() => self.server.host(domain, agent, inbox, card),
            _ => Err(TransportError::Bind(format!("{endpoint}: expected .../agents/<domain>/<agent>"))),
        }
    }
}
