//! Per-run environment: ledger, binding, network and deployed domains.

use std::sync::Arc;

use fabric_core::clock::LogicalClock;
use fabric_core::crypto::sha256;
use fabric_core::domain::{deploy_domain, run_attestation, Domain, DomainConfig, DomainError};
use fabric_core::ledger::{Ledger, LedgerApi};
use fabric_core::runtime::Network;
use fabric_core::transport::{Binding, InProcBinding, TransportError};
use fabric_net::{HttpBinding, HttpLedger};
use serde::{Deserialize, Serialize};
use tempfile::TempDir;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SetupError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Runtime(#[from] fabric_core::runtime::RuntimeError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("setup: {0}")]
    Other(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    Inproc,
    Http,
}

impl TransportKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TransportKind::Inproc => "inproc",
            TransportKind::Http => "http",
        }
    }
}

/// Seed of domain `name` within a run.
pub fn domain_seed(run_seed: &[u8; 32], name: &str) -> [u8; 32] {
    let mut input = run_seed.to_vec();
    input.extend_from_slice(name.as_bytes());
    sha256(&input)
}

pub struct World {
    pub clock: LogicalClock,
    pub local_ledger: Arc<Ledger>,
    /// What agents talk to: the local ledger, or the same ledger over REST.
    pub ledger: Arc<dyn LedgerApi>,
    pub binding: Arc<dyn Binding>,
    pub net: Network,
    pub domains: Vec<Domain>,
    _dir: TempDir,
}

impl World {
    /// Deploys one domain per name. Domain `a` trusts the issuer of domain
    /// `b` for cross-domain credentials when `trusts(a, b)`.
    pub fn build(
        transport: TransportKind,
        run_seed: [u8; 32],
        names: &[&str],
        trusts: impl Fn(&str, &str) -> bool,
    ) -> Result<Self, SetupError> {
        let local_ledger = Arc::new(Ledger::new());
        let (binding, ledger): (Arc<dyn Binding>, Arc<dyn LedgerApi>) = match transport {
            TransportKind::Inproc => (Arc::new(InProcBinding::new()), local_ledger.clone()),
            TransportKind::Http => {
                let http = HttpBinding::start_with_ledger(0, Some(local_ledger.clone()))?;
                let remote = Arc::new(HttpLedger::new(http.base_url()));
                (Arc::new(http), remote)
            }
        };
        let dir = tempfile::tempdir()?;
        let clock = LogicalClock::new();
        let configs: Vec<DomainConfig> = names
            .iter()
            .map(|n| DomainConfig::new(*n, domain_seed(&run_seed, n)))
            .collect();
        let mut domains = Vec::new();
        for config in &configs {
            let mut config = config.clone();
            config.cross_domain_trusted_issuers = configs
                .iter()
                .filter(|other| other.domain_name != config.domain_name && trusts(&config.domain_name, &other.domain_name))
                .map(DomainConfig::issuer_did)
                .collect();
            domains.push(deploy_domain(config, ledger.clone(), binding.as_ref(), dir.path(), clock.clone())?);
        }
        let net = Network::new(binding.transport(), run_seed);
        Ok(Self {
            clock,
            local_ledger,
            ledger,
            binding,
            net,
            domains,
            _dir: dir,
        })
    }

    /// Gives worker 0 of every domain its rVC over a private bus, outside
    /// the measured network.
    pub fn pre_attest(&mut self) -> Result<(), SetupError> {
        for domain in &mut self.domains {
            let outcome = run_attestation(domain, 0)?;
            if !outcome.completed {
                return Err(SetupError::Other(format!(
                    "pre-attestation in {} failed: {:?}",
                    domain.name(),
                    outcome.failure
                )));
            }
        }
        Ok(())
    }

    /// Mounts every domain's agents on the network.
    pub fn join_all(&mut self) -> Result<(), SetupError> {
        for domain in &self.domains {
            domain.join(&mut self.net, self.binding.as_ref())?;
        }
        Ok(())
    }

    pub fn ledger_reads(&self) -> u64 {
        self.domains.iter().map(Domain::ledger_reads).sum()
    }
}
