//! Acceptance suite. Runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line per criterion; exits non-zero if any fails.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use fabric_core::clock::LogicalClock;
use fabric_core::credentials::{issue_credential, verify_credential, TrustRegistry, TrustScope, RICH_CREDENTIAL};
use fabric_core::crypto::{self, canonicalize, generate_keypair, sha256, KeyPair};
use fabric_core::did::{new_off_ledger_document, new_self_certified_document, DidDocument, Service};
use fabric_core::domain::{agent_definition, deploy_domain, run_attestation, Domain, DomainConfig};
use fabric_core::ledger::{Ledger, LedgerApi};
use fabric_core::presentation::{present, verify_presentation, Challenge, ChallengeStore, VerificationContext};
use fabric_core::runtime::Network;
use fabric_core::transport::{Binding, InProcBinding};
use fabric_core::wallet::Wallet;
use fabric_harness::adversary::tamper_suite;
use fabric_harness::modelcheck::{model_check, ModelCheckConfig};
use fabric_harness::{run_scenario, Attack, RunReport, Scenario, ScenarioName, TransportKind};
use fabric_net::HttpBinding;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde_json::{json, Value};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(started: Instant, limit: Duration) -> Result<(), String> {
    let took = started.elapsed();
    ensure(took < limit, || format!("took {took:.2?}, limit {limit:?}"))
}

fn scenario(name: ScenarioName, runs: usize, transport: TransportKind) -> Result<RunReport, String> {
    run_scenario(&Scenario::new(name).runs(runs).transport(transport)).map_err(|e| format!("{name}: setup error: {e}"))
}

fn all_fail_with(report: &RunReport, reason: &str) -> Result<(), String> {
    let hits = report
        .records
        .iter()
        .filter(|r| !r.completed && r.failure_reason.as_deref() == Some(reason))
        .count();
    ensure(hits == report.records.len(), || {
        let other = report.records.iter().find(|r| r.failure_reason.as_deref() != Some(reason));
        format!(
            "{}: {hits}/{} failed with {reason}; first other: {:?}",
            report.scenario,
            report.records.len(),
            other.map(|r| &r.failure_reason)
        )
    })
}

/// RFC 8032 Ed25519 test vectors TEST 1-3: (secret key, public key, message, signature).
const RFC8032: [(&str, &str, &str, &str); 3] = [
    (
        "9d61b19deffd5a60ba844af492ec2cc44449c5697b326919703bac031cae7f60",
        "d75a980182b10ab7d54bfed3c964073a0ee172f3daa62325af021a68f707511a",
        "",
        "e5564300c360ac729086e2cc806e828a84877f1eb8e5d974d873e065224901555fb8821590a33bacc61e39701cf9b46bd25bf5f0595bbe24655141438e7a100b",
    ),
    (
        "4ccd089b28ff96da9db6c346ec114e0f5b8a319f35aba624da8cf6ed4fb8a6fb",
        "3d4017c3e843895a92b70aa74d1b7ebc9c982ccf2ec4968cc0cd55f12af4660c",
        "72",
        "92a009a9f0d4cab8720e820b5f642540a2b27b5416503f8fb3762223ebdb69da085ac1e43e15996e458f3613d0f11d8c387b2eaeb4302aeeb00d291612bb0c00",
    ),
    (
        "c5aa8df43f9f837bedb7442f31dcb7b166d38535076f094b85ce3a2e0b4458f7",
        "fc51cd8e6218a1a38da47ed00230f0580816ed13ba3303ac5deb911548908025",
        "af82",
        "6291d657deec24024827e69c3abe01a30ce548a284743a445e3680d7db5ac3ac18ff9b538d16f290ae67f760984dc6594a7c15e9716ed28dc027beceea1ec40a",
    ),
];

fn json_doc() -> impl Strategy<Value = Value> {
    let leaf = prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::Bool),
        any::<i64>().prop_map(Value::from),
        "[ -~é\u{1}\n\"\\\\]{0,8}".prop_map(Value::String),
    ];
    leaf.prop_recursive(4, 48, 6, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..6).prop_map(Value::Array),
            prop::collection::btree_map("[a-zA-Z0-9_@é]{0,6}", inner, 0..6)
                .prop_map(|m| Value::Object(m.into_iter().collect())),
        ]
    })
}

fn reversed_keys(v: &Value) -> Value {
    match v {
        Value::Object(map) => Value::Object(map.iter().rev().map(|(k, v)| (k.clone(), reversed_keys(v))).collect()),
        Value::Array(items) => Value::Array(items.iter().map(reversed_keys).collect()),
        other => other.clone(),
    }
}

fn crypto_vectors() -> Outcome {
    let started = Instant::now();
    for (i, (sk, pk, msg, sig)) in RFC8032.iter().enumerate() {
        let kp = generate_keypair(&hex::decode(sk).unwrap()).map_err(|e| e.to_string())?;
        let msg = hex::decode(msg).unwrap();
        let produced = crypto::sign_raw(&kp, &msg);
        ensure(hex::encode(kp.public_key().as_bytes()) == *pk, || format!("TEST {} public key", i + 1))?;
        ensure(hex::encode(produced) == *sig, || format!("TEST {} signature", i + 1))?;
        ensure(crypto::verify_raw(&kp.public_key(), &msg, &produced), || format!("TEST {} verify", i + 1))?;
    }
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&json_doc(), |doc| {
            let once = canonicalize(&doc).unwrap();
            let reparsed: Value = serde_json::from_slice(&once).unwrap();
            prop_assert_eq!(&canonicalize(&reparsed).unwrap(), &once);
            prop_assert_eq!(&canonicalize(&reversed_keys(&doc)).unwrap(), &once);
            Ok(())
        })
        .map_err(|e| format!("canonicalization: {e}"))?;
    within(started, Duration::from_secs(5))?;
    Ok(format!("3/3 RFC 8032 vectors, 1000 canonical documents, {:.2?}", started.elapsed()))
}

fn intra_attestation() -> Outcome {
    let started = Instant::now();
    let mut summary = Vec::new();
    for name in [ScenarioName::IntraAttestA, ScenarioName::IntraAttestB] {
        let report = scenario(name, 100, TransportKind::Inproc)?;
        ensure(report.aggregates.completion_rate == 1.0, || {
            format!("{name}: completion rate {}", report.aggregates.completion_rate)
        })?;
        ensure(report.records.iter().all(|r| r.message_count == 8), || {
            format!("{name}: message counts {:?}", report.records.iter().map(|r| r.message_count).collect::<Vec<_>>())
        })?;
        summary.push(format!("{name} 100/100 x 8 msgs"));
    }
    // The worker's stored rVC verifies against its own registry.
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut domain = deploy_domain(
        DomainConfig::new("A", [3; 32]),
        Arc::new(Ledger::new()),
        &InProcBinding::new(),
        dir.path(),
        LogicalClock::new(),
    )
    .map_err(|e| e.to_string())?;
    let outcome = run_attestation(&mut domain, 0).map_err(|e| e.to_string())?;
    ensure(outcome.completed, || format!("attestation failed: {:?}", outcome.failure))?;
    let worker = &domain.workers[0];
    let reloaded = Wallet::load(&worker.wallet.root_path).map_err(|e| e.to_string())?;
    let rvc = reloaded
        .credentials_of_type(RICH_CREDENTIAL)
        .next()
        .ok_or("worker wallet holds no rVC")?;
    verify_credential(rvc, &domain.resolver(&worker.label), &reloaded.registry).map_err(|r| format!("rVC rejected: {r}"))?;
    ensure(rvc.issuer == domain.issuer.did, || "rVC issued by someone else".into())?;
    within(started, Duration::from_secs(30))?;
    Ok(format!("{}, stored rVC verifies, {:.2?}", summary.join(", "), started.elapsed()))
}

fn cross_domain() -> Outcome {
    let started = Instant::now();
    let honest = scenario(ScenarioName::CrossAuth, 10, TransportKind::Http)?;
    ensure(honest.aggregates.completion_rate == 1.0, || {
        format!("cross-auth completion rate {}", honest.aggregates.completion_rate)
    })?;
    ensure(honest.records.iter().all(|r| r.message_count == 4), || "cross-auth message count is not 4".into())?;
    let untrusted = scenario(ScenarioName::Adversarial(Attack::UntrustedIssuer), 10, TransportKind::Http)?;
    all_fail_with(&untrusted, "vc-rejected(untrusted-issuer)")?;
    within(started, Duration::from_secs(30))?;
    Ok(format!(
        "http: 10/10 x 4 msgs; foreign issuer untrusted: 10/10 vc-rejected(untrusted-issuer), {:.2?}",
        started.elapsed()
    ))
}

fn domain_boundary() -> Outcome {
    let report = scenario(ScenarioName::DomainBoundary, 100, TransportKind::Inproc)?;
    all_fail_with(&report, "vc-rejected(unresolvable-issuer)")?;
    Ok("bVC-only cross-domain authentication: 100/100 vc-rejected(unresolvable-issuer)".into())
}

fn model_checking() -> Outcome {
    let started = Instant::now();
    let report = model_check(&ModelCheckConfig::default()).map_err(|e| e.to_string())?;
    ensure(report.violations.is_empty(), || {
        let v = &report.violations[0];
        format!("{} violations; first: {} via {:?}", report.violations.len(), v.property, v.trace)
    })?;
    ensure(report.completed_states > 0, || "honest completion unreachable".into())?;
    within(started, Duration::from_secs(60))?;
    let elapsed = started.elapsed();
    let broken = model_check(&ModelCheckConfig {
        trust_adversary: true,
        max_depth: 8,
        ..ModelCheckConfig::default()
    })
    .map_err(|e| e.to_string())?;
    ensure(!broken.violations.is_empty(), || "checker missed a planted trust flaw".into())?;
    Ok(format!(
        "depth {}: {} states, {} transitions, 0 violations, {} completed states, {:.2?}",
        report.max_depth, report.states, report.transitions, report.completed_states, elapsed
    ))
}

fn tamper_and_replay() -> Outcome {
    let summary = tamper_suite([11; 32], 500).map_err(|e| e.to_string())?;
    ensure(summary.attempts == 500 && summary.rejections == 500, || {
        format!(
            "{}/{} tampers rejected; accepted: {:?}",
            summary.rejections, summary.attempts, summary.accepted
        )
    })?;
    let tamper = scenario(ScenarioName::Adversarial(Attack::Tamper), 100, TransportKind::Inproc)?;
    ensure(tamper.aggregates.defense_rate == Some(1.0), || "in-protocol tamper succeeded".into())?;
    let replay = scenario(ScenarioName::Adversarial(Attack::Replay), 100, TransportKind::Inproc)?;
    all_fail_with(&replay, "replayed-challenge")?;
    let reasons: Vec<String> = summary.by_reason.iter().map(|(r, n)| format!("{r}={n}")).collect();
    Ok(format!(
        "500/500 tampers rejected ({}), 100/100 in-session tampers stopped, 100/100 replays replayed-challenge",
        reasons.join(" ")
    ))
}

fn key_rotation() -> Outcome {
    const ROTATIONS: usize = 3;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ledger = Arc::new(Ledger::new());
    let clock = LogicalClock::new();
    let domain = deploy_domain(
        DomainConfig::new("A", [4; 32]),
        ledger.clone(),
        &InProcBinding::new(),
        dir.path(),
        clock.clone(),
    )
    .map_err(|e| e.to_string())?;
    let worker = &domain.workers[0];
    let issuer = &domain.issuer;
    let resolver = domain.resolver(&issuer.label);
    let definition = agent_definition();
    let credentials = worker.wallet.credentials();
    let verify_with = |key: &KeyPair, n: u8| {
        let challenge = Challenge::new([n; 16], worker.did.clone(), clock.now());
        let vp = present(key, &worker.did, &credentials, &definition, &challenge, &issuer.did, clock.now())
            .map_err(|e| e.to_string())?;
        let guard = ChallengeStore::new();
        Ok::<_, String>(
            verify_presentation(
                &vp,
                &VerificationContext {
                    definition: &definition,
                    expected_challenge: &challenge,
                    verifier: &issuer.did,
                    resolver: &resolver,
                    registry: &issuer.wallet.registry,
                    guard: &guard,
                    now: clock.now(),
                },
            )
            .map(|_| ())
            .map_err(|r| r.code()),
        )
    };
    ensure(verify_with(&worker.wallet.keypair, 0)? == Ok(()), || "initial key rejected".into())?;
    let services: Vec<Service> = ledger.resolve(&worker.did).map_err(|e| e.to_string())?.services;
    let mut current = worker.wallet.keypair.clone();
    for r in 1..=ROTATIONS {
        let next = generate_keypair(&sha256(format!("rotation-{r}").as_bytes()))
            .map_err(|e| e.to_string())?
            .with_key_id(format!("key-{}", r + 1));
        let doc = DidDocument::single_key(worker.did.clone(), &next, services.clone());
        let receipt = ledger
            .update_signed(&worker.did, &doc, &current, Some(r as u64))
            .map_err(|e| format!("rotation {r}: {e}"))?;
        ensure(receipt.version == r as u64 + 1, || format!("rotation {r}: version {}", receipt.version))?;
        let old = verify_with(&current, 2 * r as u8)?;
        ensure(old == Err("bad-holder-proof".to_string()), || format!("retired key after rotation {r}: {old:?}"))?;
        let new = verify_with(&next, 2 * r as u8 + 1)?;
        ensure(new == Ok(()), || format!("new key after rotation {r}: {new:?}"))?;
        current = next;
    }
    let history = ledger.history(&worker.did).map_err(|e| e.to_string())?;
    let versions: Vec<u64> = history.iter().map(|e| e.version).collect();
    ensure(versions == (1..=ROTATIONS as u64 + 1).collect::<Vec<_>>(), || format!("history versions {versions:?}"))?;
    let mid = scenario(ScenarioName::Adversarial(Attack::RotateMidSession), 100, TransportKind::Inproc)?;
    all_fail_with(&mid, "bad-holder-proof")?;
    Ok(format!(
        "{ROTATIONS} rotations: history {versions:?}, retired keys bad-holder-proof, new keys accepted; mid-session 100/100"
    ))
}

fn attest_over(binding: &dyn Binding, dir: &std::path::Path) -> Result<(Network, Domain), String> {
    let domain = deploy_domain(
        DomainConfig::new("A", [5; 32]),
        Arc::new(Ledger::new()),
        binding,
        dir,
        LogicalClock::new(),
    )
    .map_err(|e| e.to_string())?;
    let mut net = Network::new(binding.transport(), [9; 32]);
    domain.join(&mut net, binding).map_err(|e| e.to_string())?;
    domain.start_attestation(&mut net, 0).map_err(|e| e.to_string())?;
    net.run();
    Ok((net, domain))
}

fn transport_equivalence() -> Outcome {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let http = HttpBinding::start(0).map_err(|e| e.to_string())?;
    let (a, _) = attest_over(&InProcBinding::new(), d1.path())?;
    let (b, _) = attest_over(&http, d2.path())?;
    ensure(b.transport_name() == "http", || "second run was not over http".into())?;
    let (ta, tb) = (a.trace(), b.trace());
    ensure(ta == tb, || {
        let i = ta.iter().zip(tb.iter()).position(|(x, y)| x != y).unwrap_or(ta.len().min(tb.len()));
        format!("traces diverge at entry {i} ({} vs {} entries)", ta.len(), tb.len())
    })?;
    ensure(a.delivered_messages() == 8 && b.delivered_messages() == 8, || "message counts differ from 8".into())?;
    ensure(a.sessions().iter().all(|(_, _, s)| s.completed()), || "attestation did not complete".into())?;
    Ok(format!("{} trace entries identical, 8 messages each", ta.len()))
}

fn random_wallet(rng: &mut ChaCha20Rng, root: &std::path::Path) -> Wallet {
    let kp = generate_keypair(&rng.gen::<[u8; 32]>()).unwrap().with_key_id(format!("key-{}", rng.gen_range(1..5)));
    let (did, _) = new_self_certified_document(&kp, vec![]);
    let mut wallet = Wallet::new(root, did.clone(), kp);
    let mut registry = TrustRegistry::new(TrustScope::Intra);
    let mut cross = TrustRegistry::new(TrustScope::Cross);
    for i in 0..rng.gen_range(0..5) {
        let ikp = generate_keypair(&rng.gen::<[u8; 32]>()).unwrap();
        let (issuer, doc) = if rng.gen_bool(0.5) {
            new_off_ledger_document(&ikp, vec![])
        } else {
            new_self_certified_document(&ikp, vec![])
        };
        let mut claims = serde_json::Map::new();
        for j in 0..rng.gen_range(0..4) {
            let value = match rng.gen_range(0..4) {
                0 => json!(rng.gen::<bool>()),
                1 => json!(rng.gen::<i32>()),
                2 => json!(format!("v{}-é\n\"{}", rng.gen::<u16>(), j)),
                _ => json!([rng.gen::<u8>(), {"nested": rng.gen::<u8>()}]),
            };
            claims.insert(format!("claim{j}"), value);
        }
        let ty = ["BasicAgentCredential", RICH_CREDENTIAL][i % 2];
        if ty != RICH_CREDENTIAL {
            claims = json!({"agent": true}).as_object().cloned().unwrap();
        } else {
            claims.insert("role".into(), json!(format!("role-{}", rng.gen::<u8>())));
        }
        let vc = issue_credential(&ikp, &issuer, &did, ty, claims, rng.gen_range(0..1000)).unwrap();
        wallet.insert_trusted(vc).unwrap();
        if rng.gen_bool(0.5) {
            wallet.local_documents.insert(issuer.clone(), doc);
        }
        let target = if rng.gen_bool(0.5) { &mut registry } else { &mut cross };
        target.trust(issuer, [ty], format!("issuer {i}"));
    }
    wallet.registry = registry;
    wallet.cross_registry = cross;
    wallet
}

fn random_ledger(rng: &mut ChaCha20Rng, ledger: &Ledger) {
    for _ in 0..rng.gen_range(1..6) {
        let mut kp = generate_keypair(&rng.gen::<[u8; 32]>()).unwrap();
        let services = vec![Service {
            service_id: "#a2a".into(),
            service_type: "A2AEndpoint".into(),
            endpoint: format!("inproc://d{}/a{}", rng.next_u32() % 9, rng.next_u32() % 9),
        }];
        let (did, doc) = new_self_certified_document(&kp, services.clone());
        ledger.register_signed(&doc, &kp).unwrap();
        for v in 0..rng.gen_range(0..4) {
            let next = generate_keypair(&rng.gen::<[u8; 32]>()).unwrap().with_key_id(format!("key-{}", v + 2));
            let doc = DidDocument::single_key(did.clone(), &next, services.clone());
            ledger.update_signed(&did, &doc, &kp, None).unwrap();
            kp = next;
        }
    }
}

fn persistence() -> Outcome {
    let mut rng = ChaCha20Rng::from_seed([12; 32]);
    let mut credentials = 0;
    let mut entries = 0;
    for i in 0..100 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let wallet = random_wallet(&mut rng, &dir.path().join("wallet"));
        credentials += wallet.credentials().len();
        wallet.save().map_err(|e| format!("fixture {i}: {e}"))?;
        let loaded = Wallet::load(&wallet.root_path).map_err(|e| format!("fixture {i}: {e}"))?;
        ensure(loaded == wallet, || format!("wallet fixture {i} changed across save/load"))?;

        let ledger = Ledger::new();
        random_ledger(&mut rng, &ledger);
        let journal = dir.path().join("ledger.jsonl");
        ledger.save_journal(&journal).map_err(|e| format!("fixture {i}: {e}"))?;
        let loaded = Ledger::load_journal(&journal).map_err(|e| format!("fixture {i}: {e}"))?;
        ensure(loaded.entries() == ledger.entries(), || format!("ledger fixture {i} changed across save/load"))?;
        let reopened = Ledger::open(&journal).map_err(|e| format!("fixture {i}: {e}"))?;
        ensure(reopened.entries() == ledger.entries(), || format!("ledger fixture {i} changed on reopen"))?;
        entries += ledger.entries().len();
    }
    Ok(format!("100 wallets ({credentials} credentials) and 100 journals ({entries} entries) round-trip"))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("crypto vectors and canonicalization", crypto_vectors),
        ("intra-domain attestation", intra_attestation),
        ("cross-domain authentication", cross_domain),
        ("domain boundary", domain_boundary),
        ("downgrade impossibility (model check)", model_checking),
        ("tamper and replay", tamper_and_replay),
        ("key rotation", key_rotation),
        ("transport equivalence", transport_equivalence),
        ("persistence", persistence),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut results = BTreeMap::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str()) || *f == n.to_string()) {
            continue;
        }
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match &outcome {
            Ok(detail) => println!("PASS [{n}] {name}: {detail} ({secs:.2}s)"),
            Err(why) => {
                failed += 1;
                println!("FAIL [{n}] {name}: {why} ({secs:.2}s)");
            }
        }
        results.insert(n, outcome.is_ok());
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.values().filter(|ok| **ok).count()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
