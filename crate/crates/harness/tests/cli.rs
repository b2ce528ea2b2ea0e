use std::net::TcpListener;
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use fabric_harness::report::REPORT_SCHEMA;
use serde_json::Value;

fn fabric(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fabric")).args(args).output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn serve_ledger(journal: &Path) -> (Server, String) {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let child = Command::new(env!("CARGO_BIN_EXE_fabric"))
        .args(["ledger", "serve", "--port", &port.to_string(), "--journal"])
        .arg(journal)
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    let url = format!("http://127.0.0.1:{port}");
    let deadline = Instant::now() + Duration::from_secs(10);
    while std::net::TcpStream::connect(("127.0.0.1", port)).is_err() {
        assert!(Instant::now() < deadline, "ledger did not start");
        std::thread::sleep(Duration::from_millis(20));
    }
    (Server(child), url)
}

#[test]
fn keygen_is_deterministic() {
    let seed = "9d61b19deffd5a60ba844af492ec2cc44449c5697b326919703bac031cae7f60";
    let a = fabric(&["keygen", "--seed", seed]);
    assert_eq!(a.status.code(), Some(0));
    let b = fabric(&["keygen", "--seed", seed]);
    assert_eq!(a.stdout, b.stdout);
    let v = stdout_json(&a);
    assert!(v["did"].as_str().unwrap().starts_with("did:agentsim:"));
    assert!(v["off_ledger_did"].as_str().unwrap().starts_with("did:agentsim:org-"));
    assert_eq!(fabric(&["keygen", "--seed", "abcd"]).status.code(), Some(2));
}

#[test]
fn run_writes_a_valid_report() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    let out = fabric(&[
        "run",
        "--scenario",
        "intra-attest-A",
        "--runs",
        "5",
        "--seed",
        &"42".repeat(32),
        "--report",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let schema: Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
    assert!(jsonschema::is_valid(&schema, &report));
    assert_eq!(report["aggregates"]["completion_rate"], 1.0);
    assert_eq!(report["metadata"]["seed"], "42".repeat(32));
}

#[test]
fn adversarial_run_succeeds_when_defended() {
    let out = fabric(&["run", "--scenario", "adversarial(downgrade)", "--runs", "3"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("defense_rate=1.000"));
}

#[test]
fn setup_errors_exit_with_two() {
    assert_eq!(fabric(&["run", "--scenario", "nope"]).status.code(), Some(2));
    assert_eq!(fabric(&["run", "--scenario", "full", "--runs", "0"]).status.code(), Some(2));
    assert_eq!(fabric(&["run", "--scenario", "full", "--seed", "zz"]).status.code(), Some(2));
    assert_eq!(fabric(&["bogus"]).status.code(), Some(2));
    assert_eq!(
        fabric(&["domain", "deploy", "--config", "/nonexistent/config.json"]).status.code(),
        Some(2)
    );
}

#[test]
fn deploy_resolve_and_verify_against_a_served_ledger() {
    let dir = tempfile::tempdir().unwrap();
    let journal = dir.path().join("ledger.jsonl");
    let (server, url) = serve_ledger(&journal);

    let config = dir.path().join("domain.json");
    std::fs::write(
        &config,
        serde_json::json!({"domain_name": "A", "rng_seed": "ab".repeat(32), "worker_count": 2}).to_string(),
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    std::fs::create_dir(&out_dir).unwrap();
    let out = fabric(&[
        "domain",
        "deploy",
        "--config",
        config.to_str().unwrap(),
        "--ledger",
        &url,
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = stdout_json(&out);
    assert_eq!(manifest["workers"].as_array().unwrap().len(), 2);
    let worker = manifest["workers"][0].as_str().unwrap();

    let resolved = fabric(&["resolve", worker, "--ledger", &url]);
    assert_eq!(resolved.status.code(), Some(0));
    assert_eq!(stdout_json(&resolved)["id"], worker);
    let unknown = worker.replace(|c: char| c.is_ascii_digit(), "1");
    assert_ne!(fabric(&["resolve", &unknown, "--ledger", &url]).status.code(), Some(0));

    let wallet = out_dir.join("A").join("worker-1");
    let vc = std::fs::read_dir(wallet.join("credentials")).unwrap().next().unwrap().unwrap().path();
    let registry = wallet.join("registry.json");
    let org_doc = out_dir.join("orchestrator.did.json");
    let verify = |extra: &[&str]| {
        let mut args = vec![
            "vc",
            "verify",
            "--vc",
            vc.to_str().unwrap(),
            "--registry",
            registry.to_str().unwrap(),
            "--resolver",
            &url,
        ];
        args.extend_from_slice(extra);
        fabric(&args)
    };
    let ok = verify(&["--doc", org_doc.to_str().unwrap()]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    // The orchestrator is off-ledger: without its document the bVC cannot be checked.
    let rejected = verify(&[]);
    assert_eq!(rejected.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&rejected.stderr).contains("unresolvable-issuer"));

    // The journal survives a restart.
    drop(server);
    let (_server, url) = serve_ledger(&journal);
    let resolved = fabric(&["resolve", worker, "--ledger", &url]);
    assert_eq!(resolved.status.code(), Some(0));
}
