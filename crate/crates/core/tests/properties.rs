//! Property tests over the public API: ledger, resolution, credentials,
//! challenges and the protocol step functions.

use std::collections::BTreeMap;
use std::sync::Arc;

use fabric_core::clock::LogicalClock;
use fabric_core::credentials::{
    issue_credential, verify_credential, CredentialRejection, TrustRegistry, TrustScope,
    BASIC_CREDENTIAL, RICH_CREDENTIAL,
};
use fabric_core::crypto::{generate_keypair, KeyPair};
use fabric_core::did::{
    new_off_ledger_document, new_self_certified_document, resolve_any, Did, DidDocument, Resolver, ResolverConfig,
};
use fabric_core::domain::{agent_definition, deploy_domain, Domain, DomainConfig};
use fabric_core::ledger::{Ledger, LedgerApi, LedgerEntry, LedgerError};
use fabric_core::presentation::{present, verify_presentation, Challenge, ChallengeStore, VerificationContext};
use fabric_core::protocol::{
    attestation_step, thread_id_for, AttestationPhase, AttestationState, Event, HandshakeState, ProtocolMessage,
};
use fabric_core::transport::InProcBinding;
use fabric_core::wallet::Wallet;
use proptest::prelude::*;
use serde_json::{json, Map, Value};

#[derive(Debug, Clone)]
enum Op {
    Register(u8),
    Update { who: u8, right_key: bool },
    Resolve(u8),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0u8..4).prop_map(Op::Register),
        (0u8..4, any::<bool>()).prop_map(|(who, right_key)| Op::Update { who, right_key }),
        (0u8..4).prop_map(Op::Resolve),
    ]
}

fn key(n: u32) -> KeyPair {
    let mut seed = [0u8; 32];
    seed[..4].copy_from_slice(&n.to_be_bytes());
    generate_keypair(&seed).unwrap().with_key_id(format!("key-{}", n % 1000 + 1))
}

fn claims(v: Value) -> Map<String, Value> {
    v.as_object().cloned().unwrap()
}

struct Fixture {
    domain: Domain,
    _dir: tempfile::TempDir,
}

fn fixture(seed: u8) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let domain = deploy_domain(
        DomainConfig::new("A", [seed; 32]),
        Arc::new(Ledger::new()),
        &InProcBinding::new(),
        dir.path(),
        LogicalClock::new(),
    )
    .unwrap();
    Fixture { domain, _dir: dir }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ledger_is_append_only_authorized_and_read_deterministic(ops in prop::collection::vec(op(), 1..40)) {
        let ledger = Ledger::new();
        // Model: per slot, the DID, its current key and the head document.
        let mut model: BTreeMap<u8, (Did, KeyPair, DidDocument)> = BTreeMap::new();
        let mut snapshots: Vec<(Did, Vec<LedgerEntry>)> = Vec::new();
        let mut counter = 0u32;
        for op in ops {
            counter += 1;
            match op {
                Op::Register(i) => {
                    let kp = key(u32::from(i) * 1000);
                    let (did, doc) = new_self_certified_document(&kp, vec![]);
                    let result = ledger.register_signed(&doc, &kp);
                    if let std::collections::btree_map::Entry::Vacant(e) = model.entry(i) {
                        prop_assert_eq!(result.unwrap().version, 1);
                        e.insert((did, kp, doc));
                    } else {
                        prop_assert!(matches!(result, Err(LedgerError::AlreadyRegistered(_))));
                    }
                }
                Op::Update { who, right_key } => {
                    let Some((did, current, head)) = model.get(&who).cloned() else { continue };
                    let next = key(u32::from(who) * 1000 + counter);
                    let doc = DidDocument::single_key(did.clone(), &next, vec![]);
                    let signer = if right_key { current.clone() } else { key(900_000 + counter) };
                    let result = ledger.update_signed(&did, &doc, &signer, None);
                    if right_key {
                        result.unwrap();
                        model.insert(who, (did, next, doc));
                    } else {
                        prop_assert_eq!(result, Err(LedgerError::BadSignature));
                        prop_assert_eq!(ledger.resolve(&did).unwrap(), head);
                    }
                }
                Op::Resolve(i) => match model.get(&i) {
                    Some((did, _, head)) => prop_assert_eq!(&ledger.resolve(did).unwrap(), head),
                    None => {
                        let (did, _) = new_self_certified_document(&key(u32::from(i) * 1000), vec![]);
                        prop_assert!(matches!(ledger.resolve(&did), Err(LedgerError::UnknownDid(_))));
                    }
                },
            }
            for (did, _, _) in model.values() {
                snapshots.push((did.clone(), ledger.history(did).unwrap()));
            }
            for (did, earlier) in &snapshots {
                let now = ledger.history(did).unwrap();
                prop_assert_eq!(&now[..earlier.len()], &earlier[..]);
            }
        }
        for (did, _, _) in model.values() {
            let versions: Vec<u64> = ledger.history(did).unwrap().iter().map(|e| e.version).collect();
            prop_assert_eq!(versions.clone(), (1..=versions.len() as u64).collect::<Vec<_>>());
        }
    }

    #[test]
    fn resolver_agrees_with_the_ledger(rotations in prop::collection::vec(0u8..3, 0..8)) {
        let ledger = Arc::new(Ledger::new());
        let clock = LogicalClock::new();
        let (org, org_doc) = new_off_ledger_document(&key(7), vec![]);
        let resolver = Resolver::new(
            ResolverConfig::new(ledger.clone()).with_local_documents(BTreeMap::from([(org.clone(), org_doc.clone())])),
            clock,
        )
        .unwrap();
        let mut keys: Vec<(Did, KeyPair)> = (0..3)
            .map(|i| {
                let kp = key(100 + i);
                let (did, doc) = new_self_certified_document(&kp, vec![]);
                ledger.register_signed(&doc, &kp).unwrap();
                (did, kp)
            })
            .collect();
        for (step, who) in rotations.into_iter().enumerate() {
            let (did, current) = keys[who as usize].clone();
            let next = key(200 + step as u32);
            ledger
                .update_signed(&did, &DidDocument::single_key(did.clone(), &next, vec![]), &current, None)
                .unwrap();
            keys[who as usize].1 = next;
            // Default TTL 0: a resolve right after a rotation sees the new head.
            for (did, _) in &keys {
                prop_assert_eq!(resolve_any(did, &resolver).unwrap(), ledger.resolve(did).unwrap());
            }
        }
        prop_assert_eq!(resolve_any(&org, &resolver).unwrap(), org_doc);
        prop_assert!(org.msid().starts_with("org-"));
        prop_assert!(keys.iter().all(|(d, _)| !d.msid().starts_with("org-")));
    }

    #[test]
    fn single_character_claim_mutations_are_rejected(
        role in "[a-z]{1,12}",
        extra in "[ -~]{1,16}",
        pick in any::<prop::sample::Index>(),
        replacement in any::<char>(),
    ) {
        let ledger = Arc::new(Ledger::new());
        let issuer_kp = key(42);
        let (issuer, doc) = new_self_certified_document(&issuer_kp, vec![]);
        ledger.register_signed(&doc, &issuer_kp).unwrap();
        let (subject, _) = new_self_certified_document(&key(43), vec![]);
        let resolver = Resolver::new(ResolverConfig::new(ledger), LogicalClock::new()).unwrap();
        let mut registry = TrustRegistry::new(TrustScope::Intra);
        registry.trust(issuer.clone(), [RICH_CREDENTIAL], "issuer");

        let vc = issue_credential(&issuer_kp, &issuer, &subject, RICH_CREDENTIAL, claims(json!({"role": role, "note": extra})), 5).unwrap();
        prop_assert_eq!(verify_credential(&vc, &resolver, &registry), Ok(()));

        let field = if pick.index(2) == 0 { "role" } else { "note" };
        let mut tampered = vc.clone();
        let value = tampered.credential_subject.claims.get_mut(field).unwrap();
        let mut chars: Vec<char> = value.as_str().unwrap().chars().collect();
        let i = pick.index(chars.len());
        prop_assume!(chars[i] != replacement);
        chars[i] = replacement;
        *value = Value::String(chars.into_iter().collect());
        prop_assert_eq!(verify_credential(&tampered, &resolver, &registry), Err(CredentialRejection::BadSignature));
    }

    #[test]
    fn each_challenge_is_accepted_at_most_once(order in Just((0..6usize).collect::<Vec<_>>()).prop_shuffle()) {
        let fx = fixture(2);
        let (domain, worker) = (&fx.domain, &fx.domain.workers[0]);
        let clock = domain.clock.clone();
        let definition = agent_definition();
        let resolver = domain.resolver(&domain.issuer.label);
        let guard = ChallengeStore::new();
        let challenges: Vec<Challenge> = (0..3u8).map(|n| Challenge::new([n; 16], worker.did.clone(), clock.now())).collect();
        // Two presentations per challenge, verified in a random interleaving.
        let vps: Vec<_> = (0..6)
            .map(|i| {
                present(&worker.wallet.keypair, &worker.did, &worker.wallet.credentials(), &definition, &challenges[i / 2], &domain.issuer.did, clock.now()).unwrap()
            })
            .collect();
        let mut accepted = [0usize; 3];
        for i in order {
            let ctx = VerificationContext {
                definition: &definition,
                expected_challenge: &challenges[i / 2],
                verifier: &domain.issuer.did,
                resolver: &resolver,
                registry: &domain.issuer.wallet.registry,
                guard: &guard,
                now: clock.now(),
            };
            match verify_presentation(&vps[i], &ctx) {
                Ok(_) => accepted[i / 2] += 1,
                Err(r) => prop_assert_eq!(r.code(), "replayed-challenge"),
            }
        }
        prop_assert_eq!(accepted, [1, 1, 1]);
    }
}

fn honest_trace(fx: &Fixture, seed: [u8; 32]) -> (Vec<(bool, Event)>, Vec<String>) {
    let domain = &fx.domain;
    let worker = &domain.workers[0];
    let requester_ctx = domain.attestation_context(worker);
    let issuer_ctx = domain.issuer_context();
    let thread = thread_id_for(&seed);
    let mut requester = AttestationState::requester(HandshakeState::initiator(
        thread,
        worker.did.clone(),
        domain.issuer.did.clone(),
        seed,
    ));
    let mut issuer = AttestationState::issuer(HandshakeState::responder(thread, domain.issuer.did.clone(), [9; 32]));
    let mut events = Vec::new();
    let mut states = Vec::new();
    let mut queue: Vec<(bool, ProtocolMessage)> = Vec::new();
    let (next, out) = attestation_step(&requester, &requester_ctx, &Event::Start);
    events.push((true, Event::Start));
    requester = next;
    states.push(serde_json::to_string(&requester).unwrap());
    queue.extend(out.into_iter().map(|m| (false, m)));
    while !queue.is_empty() {
        let (to_requester, msg) = queue.remove(0);
        let event = Event::Message(msg);
        let (state, ctx) = if to_requester {
            (&mut requester, &requester_ctx)
        } else {
            (&mut issuer, &issuer_ctx)
        };
        let (next, out) = attestation_step(state, ctx, &event);
        *state = next;
        states.push(serde_json::to_string(&*state).unwrap());
        events.push((to_requester, event));
        queue.extend(out.into_iter().map(|m| (!to_requester, m)));
    }
    assert_eq!(requester.phase, AttestationPhase::Done);
    assert_eq!(issuer.phase, AttestationPhase::Done);
    (events, states)
}

#[test]
fn recorded_trace_replays_byte_identically() {
    let fx = fixture(1);
    let (events, states) = honest_trace(&fx, [3; 32]);
    assert_eq!(events.len(), 9);
    let (again, states_again) = honest_trace(&fx, [3; 32]);
    assert_eq!(states, states_again);
    assert_eq!(events.len(), again.len());

    // Feed the recorded events back into fresh initial states.
    let domain = &fx.domain;
    let worker = &domain.workers[0];
    let thread = thread_id_for(&[3; 32]);
    let mut requester = AttestationState::requester(HandshakeState::initiator(
        thread,
        worker.did.clone(),
        domain.issuer.did.clone(),
        [3; 32],
    ));
    let mut issuer = AttestationState::issuer(HandshakeState::responder(thread, domain.issuer.did.clone(), [9; 32]));
    let (rctx, ictx) = (domain.attestation_context(worker), domain.issuer_context());
    let replayed: Vec<String> = events
        .iter()
        .map(|(to_requester, event)| {
            let (state, ctx) = if *to_requester { (&mut requester, &rctx) } else { (&mut issuer, &ictx) };
            *state = attestation_step(state, ctx, event).0;
            serde_json::to_string(&*state).unwrap()
        })
        .collect();
    assert_eq!(replayed, states);
}

#[test]
fn bvc_verifies_at_home_and_fails_abroad_in_both_directions() {
    let (a, b) = (fixture(10), fixture(11));
    for (home, abroad) in [(&a, &b), (&b, &a)] {
        let worker = &home.domain.workers[0];
        let bvc = worker.wallet.credentials_of_type(BASIC_CREDENTIAL).next().unwrap();
        assert_eq!(
            verify_credential(bvc, &home.domain.resolver(&worker.label), &worker.wallet.registry),
            Ok(())
        );
        let foreign = &abroad.domain.workers[0];
        let mut cross = foreign.wallet.cross_registry.clone();
        cross.trust(bvc.issuer.clone(), [BASIC_CREDENTIAL], "even if trusted");
        let verdict = verify_credential(bvc, &abroad.domain.resolver(&foreign.label), &cross);
        assert!(
            matches!(verdict, Err(CredentialRejection::UnresolvableIssuer)),
            "{verdict:?}"
        );
    }
}

#[test]
fn saved_wallet_reloads_identically() {
    let fx = fixture(4);
    for handle in fx.domain.workers.iter().chain([&fx.domain.issuer, &fx.domain.orchestrator]) {
        let loaded = Wallet::load(&handle.wallet.root_path).unwrap();
        assert_eq!(loaded, handle.wallet);
    }
}
