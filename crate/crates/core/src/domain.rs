//! Security-domain deployment: orchestrator, identity issuer and workers with
//! their keys, credentials, local documents and trust registries.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::clock::LogicalClock;
use crate::credentials::{
    check_claim_shape, issue_credential, ClaimPolicy, Claims, CredentialError, CredentialKind, TrustRegistry,
    TrustScope, BASIC_CREDENTIAL, RICH_CREDENTIAL,
};
use crate::crypto::{self, KeyPair};
use crate::did::{new_off_ledger_document, new_self_certified_document, Did, DidDocument, Resolver, ResolverConfig, Service};
use crate::ledger::{LedgerApi, LedgerError};
use crate::presentation::{InputDescriptor, PresentationDefinition};
use crate::protocol::{IssuanceSettings, OutputDescriptor, PartyContext};
use crate::runtime::{AgentSpec, Network, RuntimeError, SessionKind, SessionOutcome};
use crate::transport::{AgentCard, Binding, InProcBinding, ENDPOINT_SERVICE_TYPE};
use crate::wallet::{Wallet, WalletError};

pub const ORCHESTRATOR_LABEL: &str = "orchestrator";
pub const ISSUER_LABEL: &str = "issuer";

pub fn worker_label(index: usize) -> String {
    format!("worker-{}", index + 1)
}

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("invalid domain config: {0}")]
    InvalidConfig(String),
    #[error("ledger unavailable: {0}")]
    LedgerUnavailable(String),
    #[error("registration failed: {0}")]
    Registration(LedgerError),
    #[error(transparent)]
    Credential(#[from] CredentialError),
    #[error(transparent)]
    Wallet(#[from] WalletError),
    #[error("resolver setup failed: {0}")]
    Resolver(String),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("no worker {0}")]
    UnknownWorker(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransportBinding {
    InProcess,
    Http(u16),
}

fn default_issuer_claims() -> Claims {
    claims(json!({"role": "identity-issuer", "authorizations": ["issue-rich-credentials"]}))
}

fn default_worker_claims() -> Claims {
    claims(json!({"role": "travel-booking", "capabilities": ["quote", "book"]}))
}

fn default_binding() -> TransportBinding {
    TransportBinding::InProcess
}

fn claims(value: Value) -> Claims {
    match value {
        Value::Object(map) => map,
        _ => Claims::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub domain_name: String,
    #[serde(with = "crate::protocol::serde_seed")]
    pub rng_seed: [u8; 32],
    pub worker_count: usize,
    #[serde(default = "default_issuer_claims")]
    pub issuer_rvc_claims: Claims,
    /// Template for the rVCs the issuer grants to attested workers.
    #[serde(default = "default_worker_claims")]
    pub worker_rvc_claims: Claims,
    #[serde(default)]
    pub cross_domain_trusted_issuers: Vec<Did>,
    #[serde(default = "default_binding")]
    pub transport_binding: TransportBinding,
}

impl DomainConfig {
    pub fn new(domain_name: impl Into<String>, rng_seed: [u8; 32]) -> Self {
        Self {
            domain_name: domain_name.into(),
            rng_seed,
            worker_count: 1,
            issuer_rvc_claims: default_issuer_claims(),
            worker_rvc_claims: default_worker_claims(),
            cross_domain_trusted_issuers: Vec::new(),
            transport_binding: TransportBinding::InProcess,
        }
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, DomainError> {
        let config: Self = serde_json::from_slice(bytes).map_err(|e| DomainError::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        let name_ok = !self.domain_name.is_empty()
            && self
                .domain_name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        if !name_ok {
            return Err(DomainError::InvalidConfig(format!(
                "domain_name {:?} must be non-empty [A-Za-z0-9_-]",
                self.domain_name
            )));
        }
        if self.worker_count < 1 {
            return Err(DomainError::InvalidConfig("worker_count must be at least 1".into()));
        }
        for (field, claims) in [("issuer_rvc_claims", &self.issuer_rvc_claims), ("worker_rvc_claims", &self.worker_rvc_claims)] {
            check_claim_shape(CredentialKind::Rich, claims)
                .map_err(|e| DomainError::InvalidConfig(format!("{field}: {e}")))?;
            if !claims.contains_key("role") {
                return Err(DomainError::InvalidConfig(format!("{field} needs a role claim")));
            }
        }
        Ok(())
    }

    pub fn agent_keypair(&self, label: &str) -> KeyPair {
        let mut input = self.rng_seed.to_vec();
        input.extend_from_slice(label.as_bytes());
        crypto::generate_keypair(&crypto::sha256(&input)).expect("32-byte seed")
    }

    /// DID the issuer of this domain will have, known before deployment so
    /// that other domains can trust it.
    pub fn issuer_did(&self) -> Did {
        new_self_certified_document(&self.agent_keypair(ISSUER_LABEL), Vec::new()).0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Orchestrator,
    IdentityIssuer,
    Worker,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentHandle {
    pub label: String,
    pub did: Did,
    pub role: AgentRole,
    pub wallet: Wallet,
    /// Discovery card; the orchestrator has none as it takes part in no dialogue.
    pub card: Option<AgentCard>,
}

impl AgentHandle {
    pub fn endpoint(&self) -> Option<&str> {
        self.card.as_ref().map(|c| c.endpoint.as_str())
    }
}

/// DIDs and endpoints of a deployment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvisioningManifest {
    pub domain_name: String,
    pub orchestrator: Did,
    pub issuer: Did,
    pub workers: Vec<Did>,
    pub endpoints: BTreeMap<String, String>,
    pub ledger: String,
}

pub struct Domain {
    pub config: DomainConfig,
    pub ledger: Arc<dyn LedgerApi>,
    pub clock: LogicalClock,
    pub orchestrator: AgentHandle,
    pub issuer: AgentHandle,
    pub workers: Vec<AgentHandle>,
    resolvers: BTreeMap<String, Arc<Resolver>>,
}

fn card_for(binding: &dyn Binding, domain: &str, label: &str, did: &Did) -> AgentCard {
    AgentCard::new(format!("{domain}/{label}"), did.clone(), binding.endpoint_for(domain, label))
}

fn endpoint_service(did: &Did, endpoint: &str) -> Service {
    Service {
        service_id: format!("{did}#a2a"),
        service_type: ENDPOINT_SERVICE_TYPE.to_string(),
        endpoint: endpoint.to_string(),
    }
}

/// Deploys a domain. Wallets are written under `wallet_root/<domain_name>/<label>`.
pub fn deploy_domain(
    config: DomainConfig,
    ledger: Arc<dyn LedgerApi>,
    binding: &dyn Binding,
    wallet_root: &Path,
    clock: LogicalClock,
) -> Result<Domain, DomainError> {
    config.validate()?;
    let name = config.domain_name.clone();
    let root: PathBuf = wallet_root.join(&name);
    let register = |doc: &DidDocument, kp: &KeyPair| {
        ledger.register_signed(doc, kp).map_err(|e| match e {
            LedgerError::Unavailable(m) => DomainError::LedgerUnavailable(m),
            other => DomainError::Registration(other),
        })
    };

    let org_kp = config.agent_keypair(ORCHESTRATOR_LABEL);
    let (org_did, org_doc) = new_off_ledger_document(&org_kp, Vec::new());
    let local_documents = BTreeMap::from([(org_did.clone(), org_doc)]);

    let mut intra = TrustRegistry::new(TrustScope::Intra);
    let mut cross = TrustRegistry::new(TrustScope::Cross);
    for issuer in &config.cross_domain_trusted_issuers {
        cross.trust(issuer.clone(), [RICH_CREDENTIAL], "foreign identity issuer");
    }

    let issuer_kp = config.agent_keypair(ISSUER_LABEL);
    let issuer_did = config.issuer_did();
    let issuer_card = card_for(binding, &name, ISSUER_LABEL, &issuer_did);
    let issuer_doc = new_self_certified_document(&issuer_kp, vec![endpoint_service(&issuer_did, &issuer_card.endpoint)]).1;
    register(&issuer_doc, &issuer_kp)?;

    intra
        .trust(org_did.clone(), [BASIC_CREDENTIAL, RICH_CREDENTIAL], "orchestrator")
        .trust(issuer_did.clone(), [RICH_CREDENTIAL], "identity issuer");

    let new_wallet = |label: &str, did: &Did, kp: &KeyPair| {
        let mut w = Wallet::new(root.join(label), did.clone(), kp.clone());
        w.local_documents = local_documents.clone();
        w.registry = intra.clone();
        w.cross_registry = cross.clone();
        w
    };

    let org_wallet = new_wallet(ORCHESTRATOR_LABEL, &org_did, &org_kp);
    org_wallet.save()?;

    let mut issuer_wallet = new_wallet(ISSUER_LABEL, &issuer_did, &issuer_kp);
    let issuer_rvc = issue_credential(
        &org_kp,
        &org_did,
        &issuer_did,
        RICH_CREDENTIAL,
        config.issuer_rvc_claims.clone(),
        clock.now(),
    )?;
    issuer_wallet.insert_trusted(issuer_rvc)?;
    issuer_wallet.save()?;

    let mut workers = Vec::with_capacity(config.worker_count);
    for i in 0..config.worker_count {
        let label = worker_label(i);
        let kp = config.agent_keypair(&label);
        let did = new_self_certified_document(&kp, Vec::new()).0;
        let card = card_for(binding, &name, &label, &did);
        let doc = new_self_certified_document(&kp, vec![endpoint_service(&did, &card.endpoint)]).1;
        register(&doc, &kp)?;
        let bvc = issue_credential(&org_kp, &org_did, &did, BASIC_CREDENTIAL, claims(json!({"agent": true})), clock.now())?;
        let mut wallet = new_wallet(&label, &did, &kp);
        wallet.insert_trusted(bvc)?;
        wallet.save()?;
        workers.push(AgentHandle {
            label,
            did,
            role: AgentRole::Worker,
            wallet,
            card: Some(card),
        });
    }

    let orchestrator = AgentHandle {
        label: ORCHESTRATOR_LABEL.into(),
        did: org_did,
        role: AgentRole::Orchestrator,
        wallet: org_wallet,
        card: None,
    };
    let issuer = AgentHandle {
        label: ISSUER_LABEL.into(),
        did: issuer_did,
        role: AgentRole::IdentityIssuer,
        wallet: issuer_wallet,
        card: Some(issuer_card),
    };

    let mut resolvers = BTreeMap::new();
    for handle in std::iter::once(&issuer).chain(workers.iter()) {
        let config = ResolverConfig::new(ledger.clone()).with_local_documents(handle.wallet.local_documents.clone());
        let resolver = Resolver::new(config, clock.clone()).map_err(|e| DomainError::Resolver(e.to_string()))?;
        resolvers.insert(handle.label.clone(), Arc::new(resolver));
    }

    Ok(Domain {
        config,
        ledger,
        clock,
        orchestrator,
        issuer,
        workers,
        resolvers,
    })
}

/// What a worker asks the identity issuer to present.
pub fn issuer_identity_definition() -> PresentationDefinition {
    PresentationDefinition::new(
        "pd-identity-issuer",
        vec![InputDescriptor::new("role", RICH_CREDENTIAL).with_claims(["role"])],
    )
}

/// What the identity issuer asks an applicant to present.
pub fn agent_definition() -> PresentationDefinition {
    PresentationDefinition::new(
        "pd-domain-agent",
        vec![InputDescriptor::new("agent", BASIC_CREDENTIAL).with_claims(["agent"])],
    )
}

/// What agents of different domains ask each other to present.
pub fn cross_domain_definition() -> PresentationDefinition {
    PresentationDefinition::new(
        "pd-cross-domain",
        vec![InputDescriptor::new("role", RICH_CREDENTIAL).with_claims(["role"])],
    )
}

impl Domain {
    pub fn name(&self) -> &str {
        &self.config.domain_name
    }

    pub fn worker(&self, index: usize) -> Result<&AgentHandle, DomainError> {
        self.workers.get(index).ok_or(DomainError::UnknownWorker(index))
    }

    pub fn worker_mut(&mut self, index: usize) -> Result<&mut AgentHandle, DomainError> {
        self.workers.get_mut(index).ok_or(DomainError::UnknownWorker(index))
    }

    pub fn manifest(&self) -> ProvisioningManifest {
        let endpoints = std::iter::once(&self.issuer)
            .chain(self.workers.iter())
            .filter_map(|h| Some((h.label.clone(), h.endpoint()?.to_string())))
            .collect();
        ProvisioningManifest {
            domain_name: self.config.domain_name.clone(),
            orchestrator: self.orchestrator.did.clone(),
            issuer: self.issuer.did.clone(),
            workers: self.workers.iter().map(|w| w.did.clone()).collect(),
            endpoints,
            ledger: self.ledger.endpoint(),
        }
    }

    pub fn resolver(&self, label: &str) -> Arc<Resolver> {
        self.resolvers[label].clone()
    }

    /// Ledger lookups made by all resolvers of this domain.
    pub fn ledger_reads(&self) -> u64 {
        self.resolvers.values().map(|r| r.ledger_reads()).sum()
    }

    /// Context for `handle` under the given trust scope and definition.
    pub fn party(&self, handle: &AgentHandle, scope: TrustScope, definition: PresentationDefinition) -> PartyContext {
        let registry = match scope {
            TrustScope::Intra => handle.wallet.registry.clone(),
            TrustScope::Cross => handle.wallet.cross_registry.clone(),
        };
        PartyContext {
            did: handle.did.clone(),
            keypair: handle.wallet.keypair.clone(),
            credentials: handle.wallet.credentials(),
            resolver: self.resolver(&handle.label),
            registry,
            definition,
            clock: self.clock.clone(),
            issuance: None,
        }
    }

    /// Issuer side of attestation: requires a bVC and grants an rVC built
    /// from `worker_rvc_claims`.
    pub fn issuer_context(&self) -> PartyContext {
        let mut ctx = self.party(&self.issuer, TrustScope::Intra, agent_definition());
        let policy = ClaimPolicy {
            required_fields: ["agent".to_string()].into(),
            ..ClaimPolicy::default()
        };
        ctx.issuance = Some(IssuanceSettings {
            evaluator: Arc::new(policy),
            output: OutputDescriptor {
                credential_type: RICH_CREDENTIAL.to_string(),
                claim_template: self.config.worker_rvc_claims.clone(),
            },
        });
        ctx
    }

    pub fn attestation_context(&self, worker: &AgentHandle) -> PartyContext {
        self.party(worker, TrustScope::Intra, issuer_identity_definition())
    }

    pub fn cross_context(&self, worker: &AgentHandle) -> PartyContext {
        self.party(worker, TrustScope::Cross, cross_domain_definition())
    }

    /// Registers the issuer and all workers on `net`. Workers answer
    /// cross-domain handshakes with their current credentials.
    pub fn join(&self, net: &mut Network, binding: &dyn Binding) -> Result<(), DomainError> {
        net.add_agent(
            binding,
            AgentSpec {
                label: self.qualified(&self.issuer.label),
                card: self.issuer.card.clone().expect("issuer has a card"),
                responder: Some((self.issuer_context(), SessionKind::Attestation)),
                wallet: None,
            },
        )?;
        for worker in &self.workers {
            net.add_agent(
                binding,
                AgentSpec {
                    label: self.qualified(&worker.label),
                    card: worker.card.clone().expect("worker has a card"),
                    responder: Some((self.cross_context(worker), SessionKind::Handshake)),
                    wallet: Some(worker.wallet.clone()),
                },
            )?;
        }
        Ok(())
    }

    /// Network label of a local agent, e.g. `A/worker-1`.
    pub fn qualified(&self, label: &str) -> String {
        format!("{}/{label}", self.config.domain_name)
    }

    /// Starts attestation of worker `index` with this domain's issuer on `net`.
    pub fn start_attestation(&self, net: &mut Network, index: usize) -> Result<uuid::Uuid, DomainError> {
        let worker = self.worker(index)?;
        let endpoint = self.issuer.endpoint().expect("issuer has a card").to_string();
        Ok(net.start(
            &self.qualified(&worker.label),
            self.attestation_context(worker),
            SessionKind::Attestation,
            &endpoint,
        )?)
    }

    /// Pulls the wallet of worker `index` back from `net` and refreshes its
    /// responder context so later handshakes present newly obtained credentials.
    pub fn sync_worker(&mut self, net: &mut Network, index: usize) -> Result<(), DomainError> {
        let label = self.qualified(&self.worker(index)?.label);
        if let Some(wallet) = net.wallet(&label) {
            self.workers[index].wallet = wallet.clone();
        }
        let ctx = self.cross_context(self.worker(index)?);
        net.set_responder(&label, ctx, SessionKind::Handshake)?;
        Ok(())
    }
}

/// Runs attestation between worker `index` and the issuer over a private
/// in-process bus. On success the worker's wallet holds the new rVC.
pub fn run_attestation(domain: &mut Domain, index: usize) -> Result<SessionOutcome, DomainError> {
    let binding = InProcBinding::new();
    let mut net = Network::new(binding.transport(), crypto::sha256(&domain.config.rng_seed));
    domain.join(&mut net, &binding)?;
    let thread = domain.start_attestation(&mut net, index)?;
    net.run();
    domain.sync_worker(&mut net, index)?;
    let label = domain.qualified(&domain.worker(index)?.label);
    Ok(net.outcome(&label, thread).expect("session exists"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::credentials::{verify_credential, CredentialRejection};
    use crate::ledger::Ledger;
    use crate::protocol::reasons;

    fn deploy(name: &str, seed: u8, trusted: Vec<Did>, ledger: Arc<Ledger>, dir: &Path) -> Domain {
        let mut config = DomainConfig::new(name, [seed; 32]);
        config.cross_domain_trusted_issuers = trusted;
        deploy_domain(config, ledger, &InProcBinding::new(), dir, LogicalClock::new()).unwrap()
    }

    #[test]
    fn single_worker_topology() {
        let dir = tempfile::tempdir().unwrap();
        let ledger = Arc::new(Ledger::new());
        let d = deploy("A", 1, vec![], ledger.clone(), dir.path());
        assert_eq!(d.workers.len(), 1);
        assert_eq!(ledger.len(), 2);
        assert!(d.orchestrator.did.is_off_ledger());
        let bvcs: Vec<_> = d.workers[0].wallet.credentials_of_type(BASIC_CREDENTIAL).collect();
        assert_eq!(bvcs.len(), 1);
        assert_eq!(bvcs[0].issuer, d.orchestrator.did);
        assert!(d.issuer.wallet.credentials_of_type(RICH_CREDENTIAL).count() >= 1);
        for h in [&d.orchestrator, &d.issuer, &d.workers[0]] {
            assert!(h.wallet.local_documents.contains_key(&d.orchestrator.did));
            assert_eq!(Wallet::load(&h.wallet.root_path).unwrap(), h.wallet);
        }
        let m = d.manifest();
        assert_eq!(m.endpoints["issuer"], "inproc://A/issuer");
        assert_eq!(m.workers, vec![d.workers[0].did.clone()]);
    }

    #[test]
    fn deployment_is_deterministic() {
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let a = deploy("A", 7, vec![], Arc::new(Ledger::new()), d1.path());
        let b = deploy("A", 7, vec![], Arc::new(Ledger::new()), d2.path());
        assert_eq!(a.manifest(), b.manifest());
        assert_eq!(a.workers[0].wallet.credentials(), b.workers[0].wallet.credentials());
        let c = deploy("A", 8, vec![], Arc::new(Ledger::new()), d2.path().join("x").as_path());
        assert_ne!(a.issuer.did, c.issuer.did);
    }

    #[test]
    fn config_invariants() {
        let mut config = DomainConfig::new("A", [0; 32]);
        config.worker_count = 0;
        assert!(matches!(config.validate(), Err(DomainError::InvalidConfig(_))));
        let mut config = DomainConfig::new("A/B", [0; 32]);
        assert!(config.validate().is_err());
        config.domain_name = "A".into();
        config.issuer_rvc_claims = claims(json!({"capabilities": ["x"]}));
        assert!(config.validate().is_err());
    }

    #[test]
    fn config_json() {
        let text = format!(
            r#"{{"domain_name":"B","rng_seed":"{}","worker_count":2,"transport_binding":{{"http":8080}}}}"#,
            "ab".repeat(32)
        );
        let config = DomainConfig::from_json(text.as_bytes()).unwrap();
        assert_eq!(config.transport_binding, TransportBinding::Http(8080));
        assert_eq!(config.rng_seed, [0xab; 32]);
        assert_eq!(config.issuer_rvc_claims["role"], "identity-issuer");
        let back: DomainConfig = serde_json::from_value(serde_json::to_value(&config).unwrap()).unwrap();
        assert_eq!(back, config);
        assert_eq!(serde_json::to_value(TransportBinding::InProcess).unwrap(), json!("in-process"));
        assert!(DomainConfig::from_json(br#"{"domain_name":"B","rng_seed":"00","worker_count":1}"#).is_err());
    }

    #[test]
    fn fresh_deployment_attests() {
        let dir = tempfile::tempdir().unwrap();
        let mut d = deploy("A", 1, vec![], Arc::new(Ledger::new()), dir.path());
        let outcome = run_attestation(&mut d, 0).unwrap();
        assert!(outcome.completed, "{outcome:?}");
        let rvc = outcome.credential.unwrap();
        assert_eq!(rvc.issuer, d.issuer.did);
        let w = &d.workers[0];
        assert_eq!(w.wallet.credential(&rvc.cred_id), Some(&rvc));
        assert_eq!(Wallet::load(&w.wallet.root_path).unwrap().credential(&rvc.cred_id), Some(&rvc));
        assert_eq!(verify_credential(&rvc, &d.resolver(&w.label), &w.wallet.registry), Ok(()));
    }

    #[test]
    fn worker_without_bvc_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut d = deploy("A", 1, vec![], Arc::new(Ledger::new()), dir.path());
        let id = d.workers[0].wallet.credentials()[0].cred_id.clone();
        d.workers[0].wallet.remove_credential(&id);
        let outcome = run_attestation(&mut d, 0).unwrap();
        assert_eq!(outcome.failure.as_deref(), Some(reasons::UNSATISFIABLE));
    }

    #[test]
    fn issuer_without_orchestrator_trust_refuses() {
        let dir = tempfile::tempdir().unwrap();
        let mut d = deploy("A", 1, vec![], Arc::new(Ledger::new()), dir.path());
        let org = d.orchestrator.did.clone();
        d.issuer.wallet.registry.distrust(&org);
        let outcome = run_attestation(&mut d, 0).unwrap();
        assert_eq!(outcome.failure.as_deref(), Some("vc-rejected(untrusted-issuer)"));
        assert!(d.workers[0].wallet.credentials_of_type(RICH_CREDENTIAL).next().is_none());
    }

    #[test]
    fn bvc_is_domain_bound() {
        let dir = tempfile::tempdir().unwrap();
        let ledger = Arc::new(Ledger::new());
        let cfg_b = DomainConfig::new("B", [2; 32]);
        let cfg_a = DomainConfig::new("A", [1; 32]);
        let a = deploy("A", 1, vec![cfg_b.issuer_did()], ledger.clone(), dir.path());
        let b = deploy("B", 2, vec![cfg_a.issuer_did()], ledger, dir.path());
        for (home, other) in [(&a, &b), (&b, &a)] {
            let bvc = home.workers[0].wallet.credentials_of_type(BASIC_CREDENTIAL).next().unwrap().clone();
            let own = &home.workers[0];
            assert_eq!(verify_credential(&bvc, &home.resolver(&own.label), &own.wallet.registry), Ok(()));
            let foreign = &other.workers[0];
            assert_eq!(
                verify_credential(&bvc, &other.resolver(&foreign.label), &foreign.wallet.cross_registry),
                Err(CredentialRejection::UnresolvableIssuer)
            );
        }
    }
}
