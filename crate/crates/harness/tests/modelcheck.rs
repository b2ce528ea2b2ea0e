use fabric_harness::modelcheck::{model_check, ModelCheckConfig};

#[test]
fn honest_network_reaches_completion_without_violations() {
    let report = model_check(&ModelCheckConfig {
        adversary: false,
        ..ModelCheckConfig::default()
    })
    .unwrap();
    assert!(report.violations.is_empty(), "{:?}", report.violations.first());
    assert!(report.completed_states > 0);
    assert!(report.fulfilment_states > 0);
}

#[test]
fn adversarial_exploration_finds_no_violation() {
    let report = model_check(&ModelCheckConfig::default()).unwrap();
    eprintln!(
        "states={} transitions={} party_states={} messages={} completed={} elapsed={}ms",
        report.states, report.transitions, report.party_states, report.distinct_messages, report.completed_states, report.elapsed_ms
    );
    assert!(report.violations.is_empty(), "{:?}", report.violations.first());
    assert!(report.completed_states > 0);
}

#[test]
fn trusting_the_adversary_is_detected() {
    let report = model_check(&ModelCheckConfig {
        trust_adversary: true,
        max_depth: 8,
        ..ModelCheckConfig::default()
    })
    .unwrap();
    let v = report.violations.first().expect("a violation is reported");
    assert!(v.trace.len() > 1);
    assert_eq!(v.trace[0], "init");
}
