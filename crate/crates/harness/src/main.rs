use std::collections::BTreeMap;
use std::io::Write;
use std::net::{Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};
use fabric_core::clock::LogicalClock;
use fabric_core::credentials::{verify_credential, TrustRegistry, VerifiableCredential};
use fabric_core::crypto::{generate_keypair, KeyPair};
use fabric_core::did::{
    new_off_ledger_document, new_self_certified_document, parse_did, DidDocument, Resolver, ResolverConfig,
};
use fabric_core::domain::{deploy_domain, DomainConfig, TransportBinding};
use fabric_core::ledger::{Ledger, LedgerApi};
use fabric_core::transport::{Binding, InProcBinding};
use fabric_harness::{run_scenario, Scenario, ScenarioName, TransportKind};
use fabric_net::{HttpBinding, HttpLedger, HttpServer};
use serde_json::json;

const DEFAULT_LEDGER: &str = "http://127.0.0.1:7878";

#[derive(Parser)]
#[command(name = "fabric", version, about = "Agent identity fabric: ledger, domains and scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Derive a key pair and DIDs from a 32-byte hex seed.
    Keygen {
        #[arg(long)]
        seed: String,
    },
    /// Verifiable data registry operations.
    Ledger {
        #[command(subcommand)]
        command: LedgerCommand,
    },
    /// Domain provisioning.
    Domain {
        #[command(subcommand)]
        command: DomainCommand,
    },
    /// Run a scenario and write its report.
    Run {
        #[arg(long)]
        scenario: String,
        /// Defaults to 100 runs, or 10 for cross-auth and full.
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long, default_value_t = "00".repeat(32))]
        seed: String,
        #[arg(long, value_enum, default_value = "inproc")]
        transport: TransportArg,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        parallel: bool,
    },
    /// Credential operations.
    Vc {
        #[command(subcommand)]
        command: VcCommand,
    },
    /// Resolve a DID through a ledger's REST interface.
    Resolve {
        did: String,
        #[arg(long, default_value = DEFAULT_LEDGER)]
        ledger: String,
    },
}

#[derive(Subcommand)]
enum LedgerCommand {
    /// Serve a journal-backed ledger over HTTP until interrupted.
    Serve {
        #[arg(long, default_value_t = 7878)]
        port: u16,
        #[arg(long)]
        journal: PathBuf,
    },
}

#[derive(Subcommand)]
enum DomainCommand {
    /// Register a domain's agents, issue their credentials and print the manifest.
    Deploy {
        #[arg(long)]
        config: PathBuf,
        /// Ledger to register on; an in-memory one is used when absent.
        #[arg(long)]
        ledger: Option<String>,
        /// Where wallets and the manifest are written.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum VcCommand {
    /// Verify a credential against a trust registry.
    Verify {
        #[arg(long)]
        vc: PathBuf,
        #[arg(long)]
        registry: PathBuf,
        /// Ledger base URL used for resolution.
        #[arg(long)]
        resolver: String,
        /// DID documents resolvable without the ledger, such as an orchestrator's.
        #[arg(long = "doc")]
        docs: Vec<PathBuf>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum TransportArg {
    Inproc,
    Http,
}

impl From<TransportArg> for TransportKind {
    fn from(t: TransportArg) -> Self {
        match t {
            TransportArg::Inproc => TransportKind::Inproc,
            TransportArg::Http => TransportKind::Http,
        }
    }
}

/// Setup problems exit with 2, failed scenarios and verifications with 1.
enum Failure {
    Scenario(String),
    Setup(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Setup(e)
    }
}

fn parse_seed(hex_seed: &str) -> Result<[u8; 32]> {
    hex::decode(hex_seed.trim())
        .context("seed is not hex")?
        .try_into()
        .map_err(|v: Vec<u8>| anyhow!("seed must be 32 bytes, got {}", v.len()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn print_json(value: &impl serde::Serialize) {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

/// A bare registry, or a wallet's `registry.json` holding both scopes.
#[derive(serde::Deserialize)]
#[serde(untagged)]
enum RegistryFile {
    Single(TrustRegistry),
    Wallet { intra: TrustRegistry, cross: TrustRegistry },
}

fn keygen(seed: &str) -> Result<()> {
    let keypair: KeyPair = generate_keypair(&parse_seed(seed)?)?;
    let (did, document) = new_self_certified_document(&keypair, vec![]);
    let (off_ledger, _) = new_off_ledger_document(&keypair, vec![]);
    print_json(&json!({
        "did": did,
        "off_ledger_did": off_ledger,
        "public_key_multibase": keypair.public_key().to_multibase(),
        "document": document,
    }));
    Ok(())
}

fn serve_ledger(port: u16, journal: PathBuf) -> Result<()> {
    let ledger: Arc<dyn LedgerApi> = Arc::new(Ledger::open(&journal)?);
    let server = HttpServer::start(SocketAddr::from((Ipv4Addr::LOCALHOST, port)), Some(ledger))?;
    println!("ledger listening on {} (journal {})", server.base_url(), journal.display());
    server.wait();
    Ok(())
}

fn deploy(config: PathBuf, ledger_url: Option<String>, out: Option<PathBuf>) -> Result<()> {
    let text = std::fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
    let config = DomainConfig::from_json(text.as_bytes())?;
    let ledger: Arc<dyn LedgerApi> = match ledger_url {
        Some(url) => Arc::new(HttpLedger::new(url)),
        None => Arc::new(Ledger::new()),
    };
    let binding: Box<dyn Binding> = match config.transport_binding {
        TransportBinding::InProcess => Box::new(InProcBinding::new()),
        TransportBinding::Http(port) => Box::new(HttpBinding::start(port)?),
    };
    let scratch = tempfile::tempdir()?;
    let root = out.clone().unwrap_or_else(|| scratch.path().to_path_buf());
    let orchestrator_doc = new_off_ledger_document(&config.agent_keypair(fabric_core::domain::ORCHESTRATOR_LABEL), vec![]).1;
    let domain = deploy_domain(config, ledger, binding.as_ref(), &root, LogicalClock::new())?;
    let manifest = domain.manifest();
    if let Some(dir) = out {
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        std::fs::write(dir.join("orchestrator.did.json"), serde_json::to_string_pretty(&orchestrator_doc)?)?;
    }
    print_json(&manifest);
    Ok(())
}

fn ledger_resolver(url: &str, docs: BTreeMap<fabric_core::did::Did, DidDocument>) -> Result<Resolver> {
    let config = ResolverConfig::new(Arc::new(HttpLedger::new(url))).with_local_documents(docs);
    Ok(Resolver::new(config, LogicalClock::new())?)
}

fn verify_vc(vc: PathBuf, registry: PathBuf, resolver: String, docs: Vec<PathBuf>) -> Result<(), Failure> {
    let vc: VerifiableCredential = read_json(&vc)?;
    let registry = match read_json::<RegistryFile>(&registry)? {
        RegistryFile::Single(r) => r,
        RegistryFile::Wallet { intra, .. } if intra.trusted_issuers.contains_key(&vc.issuer) => intra,
        RegistryFile::Wallet { cross, .. } => cross,
    };
    let docs = docs
        .iter()
        .map(|p| read_json::<DidDocument>(p).map(|d| (d.id.clone(), d)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let resolver = ledger_resolver(&resolver, docs)?;
    match verify_credential(&vc, &resolver, &registry) {
        Ok(()) => {
            println!("valid");
            Ok(())
        }
        Err(reason) => Err(Failure::Scenario(format!("vc-rejected({reason})"))),
    }
}

fn resolve(did: &str, ledger: &str) -> Result<()> {
    let did = parse_did(did)?;
    let resolver = ledger_resolver(ledger, BTreeMap::new())?;
    print_json(&resolver.resolve(&did)?);
    Ok(())
}

fn run(
    scenario: &str,
    runs: Option<usize>,
    seed: &str,
    transport: TransportArg,
    report: Option<PathBuf>,
    parallel: bool,
) -> Result<(), Failure> {
    let name: ScenarioName = scenario.parse().map_err(anyhow::Error::from)?;
    let mut spec = Scenario::new(name)
        .seed(parse_seed(seed)?)
        .transport(transport.into())
        .parallel(parallel);
    if let Some(runs) = runs {
        if runs == 0 {
            return Err(Failure::Setup(anyhow!("--runs must be at least 1")));
        }
        spec = spec.runs(runs);
    }
    let result = run_scenario(&spec).map_err(anyhow::Error::from)?;
    if let Some(path) = report {
        std::fs::write(&path, result.to_json_pretty()).with_context(|| format!("writing {}", path.display()))?;
    }
    let a = &result.aggregates;
    println!(
        "{}: runs={} completion_rate={:.3} mean_messages={:.1} mean_time_ms={:.3} mean_ledger_reads={:.1}{}",
        result.scenario,
        a.runs,
        a.completion_rate,
        a.mean_messages,
        a.mean_time_ms,
        a.mean_ledger_reads,
        a.defense_rate.map(|d| format!(" defense_rate={d:.3}")).unwrap_or_default()
    );
    if result.passed() {
        Ok(())
    } else {
        Err(Failure::Scenario(format!("{} did not pass", result.scenario)))
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Keygen { seed } => keygen(&seed)?,
        Command::Ledger {
            command: LedgerCommand::Serve { port, journal },
        } => serve_ledger(port, journal)?,
        Command::Domain {
            command: DomainCommand::Deploy { config, ledger, out },
        } => deploy(config, ledger, out)?,
        Command::Run {
            scenario,
            runs,
            seed,
            transport,
            report,
            parallel,
        } => run(&scenario, runs, &seed, transport, report, parallel)?,
        Command::Vc {
            command: VcCommand::Verify {
                vc,
                registry,
                resolver,
                docs,
            },
        } => verify_vc(vc, registry, resolver, docs)?,
        Command::Resolve { did, ledger } => resolve(&did, &ledger)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Scenario(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Setup(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
