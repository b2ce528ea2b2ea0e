//! Scenario runner: honest processes and adversarial faults, one fresh world
//! per run.

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use fabric_core::credentials::{verify_credential, TrustScope, BASIC_CREDENTIAL, RICH_CREDENTIAL};
use fabric_core::crypto::{generate_keypair, sha256};
use fabric_core::domain::{worker_label, Domain, ISSUER_LABEL};
use fabric_core::presentation::{InputDescriptor, PresentationDefinition};
use fabric_core::protocol::{reasons, verify_session_presentation, MessageKind};
use fabric_core::runtime::{Interceptor, Network, Session, SessionKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use uuid::Uuid;

use crate::adversary::{Downgrade, Recorder, RotateBeforeComplete, TamperOnce};
use crate::report::{ReportMetadata, RunRecord, RunReport, NOT_REPRODUCED, SCHEMA_VERSION};
use crate::world::{SetupError, TransportKind, World};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Attack {
    Tamper,
    Replay,
    UntrustedIssuer,
    Downgrade,
    RotateMidSession,
}

impl Attack {
    pub const ALL: [Attack; 5] = [
        Attack::Tamper,
        Attack::Replay,
        Attack::UntrustedIssuer,
        Attack::Downgrade,
        Attack::RotateMidSession,
    ];

    fn as_str(self) -> &'static str {
        match self {
            Attack::Tamper => "tamper",
            Attack::Replay => "replay",
            Attack::UntrustedIssuer => "untrusted-issuer",
            Attack::Downgrade => "downgrade",
            Attack::RotateMidSession => "rotate-mid-session",
        }
    }

    /// Rejection the defending party must report; tampering has no single one.
    pub fn expected_failure(self) -> Option<&'static str> {
        match self {
            Attack::Tamper => None,
            Attack::Replay => Some("replayed-challenge"),
            Attack::UntrustedIssuer => Some("vc-rejected(untrusted-issuer)"),
            Attack::Downgrade => Some(reasons::NOT_AUTHENTICATED),
            Attack::RotateMidSession => Some("bad-holder-proof"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioName {
    /// Attestation within domain A.
    IntraAttestA,
    /// Attestation within domain B.
    IntraAttestB,
    /// Mutual authentication between workers of A and B holding rVCs.
    CrossAuth,
    /// Both attestations followed by cross-domain authentication.
    Full,
    /// Cross-domain authentication with basic credentials only.
    DomainBoundary,
    Adversarial(Attack),
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 10] = [
        ScenarioName::IntraAttestA,
        ScenarioName::IntraAttestB,
        ScenarioName::CrossAuth,
        ScenarioName::Full,
        ScenarioName::DomainBoundary,
        ScenarioName::Adversarial(Attack::Tamper),
        ScenarioName::Adversarial(Attack::Replay),
        ScenarioName::Adversarial(Attack::UntrustedIssuer),
        ScenarioName::Adversarial(Attack::Downgrade),
        ScenarioName::Adversarial(Attack::RotateMidSession),
    ];

    pub fn default_runs(self) -> usize {
        match self {
            ScenarioName::IntraAttestA | ScenarioName::IntraAttestB => 100,
            ScenarioName::CrossAuth | ScenarioName::Full => 10,
            ScenarioName::DomainBoundary | ScenarioName::Adversarial(_) => 100,
        }
    }

    /// Fault the run must be stopped by, for scenarios that inject one.
    fn expected_failure(self) -> Option<&'static str> {
        match self {
            ScenarioName::DomainBoundary => Some("vc-rejected(unresolvable-issuer)"),
            ScenarioName::Adversarial(a) => a.expected_failure(),
            _ => None,
        }
    }

    pub fn is_adversarial(self) -> bool {
        matches!(self, ScenarioName::DomainBoundary | ScenarioName::Adversarial(_))
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioName::IntraAttestA => f.write_str("intra-attest-A"),
            ScenarioName::IntraAttestB => f.write_str("intra-attest-B"),
            ScenarioName::CrossAuth => f.write_str("cross-auth"),
            ScenarioName::Full => f.write_str("full"),
            ScenarioName::DomainBoundary => f.write_str("domain-boundary"),
            ScenarioName::Adversarial(a) => write!(f, "adversarial({})", a.as_str()),
        }
    }
}

impl FromStr for ScenarioName {
    type Err = SetupError;

    /// Accepts `adversarial(x)`, `adversarial-x` and `adversarial:x`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(name) = ScenarioName::ALL.iter().find(|n| n.to_string() == s) {
            return Ok(*name);
        }
        let attack = s
            .strip_prefix("adversarial-")
            .or_else(|| s.strip_prefix("adversarial:"))
            .and_then(|a| Attack::ALL.into_iter().find(|x| x.as_str() == a));
        attack
            .map(ScenarioName::Adversarial)
            .ok_or_else(|| SetupError::InvalidScenario(format!("unknown scenario {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub name: ScenarioName,
    pub runs: usize,
    pub seed: [u8; 32],
    pub transport: TransportKind,
    pub parallel: bool,
}

impl Scenario {
    pub fn new(name: ScenarioName) -> Self {
        Self {
            name,
            runs: name.default_runs(),
            seed: [0; 32],
            transport: TransportKind::Inproc,
            parallel: false,
        }
    }

    pub fn runs(mut self, runs: usize) -> Self {
        self.runs = runs;
        self
    }

    pub fn seed(mut self, seed: [u8; 32]) -> Self {
        self.seed = seed;
        self
    }

    pub fn transport(mut self, transport: TransportKind) -> Self {
        self.transport = transport;
        self
    }

    pub fn parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }
}

pub fn run_seed(seed: &[u8; 32], run: usize) -> [u8; 32] {
    let mut input = seed.to_vec();
    input.extend_from_slice(&(run as u64).to_le_bytes());
    sha256(&input)
}

pub fn run_scenario(scenario: &Scenario) -> Result<RunReport, SetupError> {
    if scenario.runs < 1 {
        return Err(SetupError::InvalidScenario("runs must be at least 1".into()));
    }
    let one = |run: usize| run_once(scenario.name, run, run_seed(&scenario.seed, run), scenario.transport);
    let records: Vec<RunRecord> = if scenario.parallel {
        let workers = std::thread::available_parallelism().map_or(4, |n| n.get()).min(scenario.runs);
        let results = Mutex::new(Vec::with_capacity(scenario.runs));
        std::thread::scope(|s| {
            for w in 0..workers {
                let (one, results) = (&one, &results);
                s.spawn(move || {
                    for run in (w..scenario.runs).step_by(workers) {
                        let record = one(run);
                        results.lock().expect("poisoned").push((run, record));
                    }
                });
            }
        });
        let mut results = results.into_inner().expect("poisoned");
        results.sort_by_key(|(run, _)| *run);
        results.into_iter().map(|(_, r)| r).collect::<Result<_, _>>()?
    } else {
        (0..scenario.runs).map(one).collect::<Result<_, _>>()?
    };
    let metadata = ReportMetadata {
        schema_version: SCHEMA_VERSION.into(),
        generator: format!("fabric {}", env!("CARGO_PKG_VERSION")),
        transport: scenario.transport.as_str().into(),
        seed: hex::encode(scenario.seed),
        parallel: scenario.parallel,
        not_reproduced: NOT_REPRODUCED.iter().map(|s| s.to_string()).collect(),
        note: "Language-model metrics (calls, tokens, per-model rates, model latency) are not reproduced; \
               protocol messages, bytes on the wire and ledger reads are reported instead."
            .into(),
    };
    Ok(RunReport::new(scenario.name.to_string(), metadata, records))
}

/// Network/ledger counters at the start of the measured phase.
struct Mark {
    wire: usize,
    reads: u64,
    started: Instant,
}

impl Mark {
    fn now(world: &World) -> Self {
        Self {
            wire: world.net.wire().len(),
            reads: world.ledger_reads(),
            started: Instant::now(),
        }
    }
}

struct Verdict {
    completed: bool,
    failure: Option<String>,
}

fn record(run: usize, world: &World, mark: Mark, verdict: Verdict, name: ScenarioName) -> RunRecord {
    let wall_time_ms = mark.started.elapsed().as_secs_f64() * 1e3;
    let wire = &world.net.wire()[mark.wire..];
    let adversarial = name.is_adversarial();
    RunRecord {
        run,
        completed: verdict.completed,
        failure_reason: verdict.failure,
        wall_time_ms,
        message_count: wire.iter().filter(|w| w.error.is_none()).count(),
        bytes_on_wire: wire.iter().map(|w| w.bytes).sum(),
        ledger_reads: world.ledger_reads() - mark.reads,
        attack_succeeded: adversarial.then_some(verdict.completed),
        expected_failure_reason: name.expected_failure().map(str::to_string),
    }
}

fn label(domain: &Domain, local: &str) -> String {
    domain.qualified(local)
}

/// Requester-side outcome of an attestation, checking the stored rVC.
fn attestation_verdict(world: &World, d: usize, thread: Uuid) -> Verdict {
    let domain = &world.domains[d];
    let worker = label(domain, &worker_label(0));
    let Some(outcome) = world.net.outcome(&worker, thread) else {
        return Verdict {
            completed: false,
            failure: Some("no-session".into()),
        };
    };
    let stored = world.net.wallet(&worker).is_some_and(|w| {
        w.credentials_of_type(RICH_CREDENTIAL).any(|vc| {
            vc.issuer == domain.issuer.did
                && verify_credential(vc, &domain.resolver(&worker_label(0)), &w.registry).is_ok()
        })
    });
    Verdict {
        completed: outcome.completed && stored,
        failure: outcome
            .failure
            .or_else(|| (outcome.completed && !stored).then(|| "rvc-not-stored".to_string())),
    }
}

/// Both sides of a cross-domain handshake from A's worker to B's.
fn start_cross(world: &mut World, definition: Option<PresentationDefinition>) -> Result<Uuid, SetupError> {
    let (a, b) = (&world.domains[0], &world.domains[1]);
    let initiator = &a.workers[0];
    let responder = &b.workers[0];
    let (ctx, peer_ctx) = match definition {
        Some(pd) => (
            a.party(initiator, TrustScope::Cross, pd.clone()),
            Some(b.party(responder, TrustScope::Cross, pd)),
        ),
        None => (a.cross_context(initiator), None),
    };
    if let Some(peer_ctx) = peer_ctx {
        world
            .net
            .set_responder(&label(b, &responder.label), peer_ctx, SessionKind::Handshake)?;
    }
    let endpoint = responder.endpoint().expect("worker has a card").to_string();
    Ok(world.net.start(&label(a, &initiator.label), ctx, SessionKind::Handshake, &endpoint)?)
}

fn handshake_verdict(world: &World, thread: Uuid) -> Verdict {
    let a = label(&world.domains[0], &worker_label(0));
    let b = label(&world.domains[1], &worker_label(0));
    let ours = world.net.outcome(&a, thread);
    let theirs = world.net.outcome(&b, thread);
    let completed = ours.as_ref().is_some_and(|o| o.completed) && theirs.as_ref().is_some_and(|o| o.completed);
    let failure = ours
        .and_then(|o| o.failure)
        .or_else(|| theirs.and_then(|o| o.failure))
        .or_else(|| (!completed).then(|| "incomplete".to_string()));
    Verdict { completed, failure }
}

fn any_session_completed(net: &Network) -> bool {
    net.sessions().iter().any(|(_, _, s)| s.completed())
}

fn run_once(name: ScenarioName, run: usize, seed: [u8; 32], transport: TransportKind) -> Result<RunRecord, SetupError> {
    match name {
        ScenarioName::IntraAttestA | ScenarioName::IntraAttestB => {
            let domain = if name == ScenarioName::IntraAttestA { "A" } else { "B" };
            let mut world = World::build(transport, seed, &[domain], |_, _| false)?;
            world.join_all()?;
            let mark = Mark::now(&world);
            let thread = world.domains[0].start_attestation(&mut world.net, 0)?;
            world.net.run();
            let verdict = attestation_verdict(&world, 0, thread);
            Ok(record(run, &world, mark, verdict, name))
        }
        ScenarioName::CrossAuth => {
            let mut world = World::build(transport, seed, &["A", "B"], |_, _| true)?;
            world.pre_attest()?;
            world.join_all()?;
            let mark = Mark::now(&world);
            let thread = start_cross(&mut world, None)?;
            world.net.run();
            let verdict = handshake_verdict(&world, thread);
            Ok(record(run, &world, mark, verdict, name))
        }
        ScenarioName::Full => {
            let mut world = World::build(transport, seed, &["A", "B"], |_, _| true)?;
            world.join_all()?;
            let mark = Mark::now(&world);
            let ta = world.domains[0].start_attestation(&mut world.net, 0)?;
            let tb = world.domains[1].start_attestation(&mut world.net, 0)?;
            world.net.run();
            let attested = [attestation_verdict(&world, 0, ta), attestation_verdict(&world, 1, tb)];
            for domain in &mut world.domains {
                domain.sync_worker(&mut world.net, 0)?;
            }
            let thread = start_cross(&mut world, None)?;
            world.net.run();
            let cross = handshake_verdict(&world, thread);
            let verdict = Verdict {
                completed: attested.iter().all(|v| v.completed) && cross.completed,
                failure: attested.into_iter().find_map(|v| v.failure).or(cross.failure),
            };
            Ok(record(run, &world, mark, verdict, name))
        }
        ScenarioName::DomainBoundary => {
            let mut world = World::build(transport, seed, &["A", "B"], |_, _| true)?;
            world.join_all()?;
            let basic = PresentationDefinition::new(
                "pd-cross-domain-basic",
                vec![InputDescriptor::new("agent", BASIC_CREDENTIAL).with_claims(["agent"])],
            );
            let mark = Mark::now(&world);
            let thread = start_cross(&mut world, Some(basic))?;
            world.net.run();
            let verdict = handshake_verdict(&world, thread);
            Ok(record(run, &world, mark, verdict, name))
        }
        ScenarioName::Adversarial(attack) => run_attack(attack, run, seed, transport),
    }
}

fn intra_world(transport: TransportKind, seed: [u8; 32]) -> Result<World, SetupError> {
    let mut world = World::build(transport, seed, &["A"], |_, _| false)?;
    world.join_all()?;
    Ok(world)
}

fn run_attack(attack: Attack, run: usize, seed: [u8; 32], transport: TransportKind) -> Result<RunRecord, SetupError> {
    let name = ScenarioName::Adversarial(attack);
    match attack {
        Attack::Tamper => {
            let mut world = intra_world(transport, seed)?;
            let mut rng = ChaCha20Rng::from_seed(seed);
            let kind = if rng.gen_bool(0.5) {
                MessageKind::AuthResponse
            } else {
                MessageKind::AuthComplete
            };
            let tamper = TamperOnce::new(kind, rng.gen());
            let mutated = tamper.mutated.clone();
            world.net.set_interceptor(Box::new(tamper));
            let mark = Mark::now(&world);
            let thread = world.domains[0].start_attestation(&mut world.net, 0)?;
            world.net.run();
            if mutated.lock().expect("poisoned").is_none() {
                return Err(SetupError::Other("tamper target never sent".into()));
            }
            let failure = attestation_verdict(&world, 0, thread).failure;
            let verdict = Verdict {
                completed: any_session_completed(&world.net),
                failure,
            };
            Ok(record(run, &world, mark, verdict, name))
        }
        Attack::Replay => {
            let mut world = intra_world(transport, seed)?;
            let recorder = Recorder::default();
            let captured = recorder.presentations.clone();
            world.net.set_interceptor(Box::new(recorder));
            let thread = world.domains[0].start_attestation(&mut world.net, 0)?;
            world.net.run();
            if !attestation_verdict(&world, 0, thread).completed {
                return Err(SetupError::Other("honest attestation before replay failed".into()));
            }
            let vp = captured
                .lock()
                .expect("poisoned")
                .first()
                .cloned()
                .ok_or_else(|| SetupError::Other("no presentation captured".into()))?;
            let mark = Mark::now(&world);
            let domain = &world.domains[0];
            let issuer = label(domain, ISSUER_LABEL);
            let Some(Session::Attestation(state)) = world.net.session(&issuer, thread) else {
                return Err(SetupError::Other("issuer session missing".into()));
            };
            let verdict = match verify_session_presentation(&state.handshake, &domain.issuer_context(), &vp) {
                Ok(_) => Verdict {
                    completed: true,
                    failure: None,
                },
                Err(rejection) => Verdict {
                    completed: false,
                    failure: Some(rejection.code()),
                },
            };
            Ok(record(run, &world, mark, verdict, name))
        }
        Attack::UntrustedIssuer => {
            let mut world = World::build(transport, seed, &["A", "B"], |from, _| from != "A")?;
            world.pre_attest()?;
            world.join_all()?;
            let mark = Mark::now(&world);
            let thread = start_cross(&mut world, None)?;
            world.net.run();
            let verdict = handshake_verdict(&world, thread);
            Ok(record(run, &world, mark, verdict, name))
        }
        Attack::Downgrade => {
            let mut world = intra_world(transport, seed)?;
            world.net.set_interceptor(Box::new(Downgrade));
            let mark = Mark::now(&world);
            let thread = world.domains[0].start_attestation(&mut world.net, 0)?;
            world.net.run();
            let issuer = label(&world.domains[0], ISSUER_LABEL);
            let fulfilled = world
                .net
                .wire()
                .iter()
                .any(|w| w.kind == MessageKind::CredFulfillment && w.error.is_none());
            let issuer_failure = world.net.outcome(&issuer, thread).and_then(|o| o.failure);
            let verdict = Verdict {
                completed: fulfilled || any_session_completed(&world.net),
                failure: issuer_failure.or(attestation_verdict(&world, 0, thread).failure),
            };
            Ok(record(run, &world, mark, verdict, name))
        }
        Attack::RotateMidSession => {
            let mut world = intra_world(transport, seed)?;
            let domain = &world.domains[0];
            let worker = &domain.workers[0];
            let next = generate_keypair(&sha256(&[&seed[..], b"rotated"].concat()))
                .expect("32-byte seed")
                .with_key_id("key-2");
            let rotated = Arc::new(Mutex::new(None));
            let rotator = RotateBeforeComplete {
                sender: label(domain, &worker.label),
                did: worker.did.clone(),
                current: worker.wallet.keypair.clone(),
                next,
                ledger: world.ledger.clone(),
                rotated: rotated.clone(),
            };
            world.net.set_interceptor(Box::new(rotator) as Box<dyn Interceptor>);
            let mark = Mark::now(&world);
            let thread = world.domains[0].start_attestation(&mut world.net, 0)?;
            world.net.run();
            if rotated.lock().expect("poisoned").is_none() {
                return Err(SetupError::Other("key rotation did not happen".into()));
            }
            let issuer = label(&world.domains[0], ISSUER_LABEL);
            let verdict = Verdict {
                completed: any_session_completed(&world.net),
                failure: world.net.outcome(&issuer, thread).and_then(|o| o.failure),
            };
            Ok(record(run, &world, mark, verdict, name))
        }
    }
}
