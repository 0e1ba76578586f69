//! The command line, both in process and as the built binary.

#[path = "../../core/tests/common/mod.rs"]
mod common;
mod support;

use std::io::{BufRead, BufReader};
use std::process::{Child, Command, Stdio};
use std::time::Duration;

use cimgw::cli::{exit, run_command};
use cimgw_core::cim::load_library;
use cimgw_core::schema::{plan_schema, StorageCatalog};
use cimgw_core::topology::parse_topology;
use support::*;

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("cimgw").chain(args.iter().copied());
    let code = run_command(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn path(name: &str) -> String {
    fixture(name).to_str().unwrap().to_string()
}

#[test]
fn validate_clean_topology() {
    let (code, out, _) = run(&[
        "validate",
        "--library",
        &path("lib-a.xmi"),
        "--topology",
        &path("topo-1.rdf"),
    ]);
    assert_eq!(code, exit::SUCCESS);
    let report: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(report["unknown_classes"].as_array().unwrap().is_empty());
    assert!(out.ends_with("}\n"));
}

#[test]
fn validate_reports_findings() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.rdf");
    let topo = String::from_utf8(fixture_bytes("topo-1.rdf")).unwrap();
    std::fs::write(&bad, topo.replace(">false<", ">maybe<")).unwrap();
    let (code, out, _) = run(&[
        "validate",
        "--library",
        &path("lib-a.xmi"),
        "--topology",
        bad.to_str().unwrap(),
    ]);
    assert_eq!(code, exit::FINDINGS);
    assert!(out.contains("maybe"));
}

#[test]
fn plan_schema_against_empty_and_current_catalogs() {
    let args = [
        "plan-schema",
        "--library",
        &path("lib-a.xmi"),
        "--topology",
        &path("topo-1.rdf"),
    ];
    let (code, out, _) = run(&args);
    assert_eq!(code, exit::FINDINGS);
    let diff: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(diff["create_tables"].as_array().unwrap().len(), 3);

    let lib = lib_a();
    let doc = parse_topology(&fixture_bytes("topo-1.rdf")).unwrap();
    let empty = StorageCatalog::default();
    let catalog = empty
        .apply(&plan_schema(&doc, &lib, &empty).unwrap())
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("catalog.json");
    std::fs::write(&file, serde_json::to_vec(&catalog).unwrap()).unwrap();
    let mut with_catalog = args.to_vec();
    with_catalog.extend(["--catalog", file.to_str().unwrap()]);
    assert_eq!(run(&with_catalog).0, exit::SUCCESS);
}

#[test]
fn diff_lib_exit_codes() {
    let lib = path("lib-a.xmi");
    assert_eq!(
        run(&["diff-lib", "--old", &lib, "--new", &lib]).0,
        exit::SUCCESS
    );
    let dir = tempfile::tempdir().unwrap();
    let newer = dir.path().join("newer.xmi");
    std::fs::write(&newer, common::lib_a_with_disconnector("lib-a-2")).unwrap();
    load_library(&std::fs::read(&newer).unwrap()).unwrap();
    let (code, out, _) = run(&["diff-lib", "--old", &lib, "--new", newer.to_str().unwrap()]);
    assert_eq!(code, exit::FINDINGS);
    assert!(out.contains("Disconnector"));
}

#[test]
fn output_is_byte_stable() {
    let args = [
        "plan-schema",
        "--library",
        &path("lib-a.xmi"),
        "--topology",
        &path("topo-1.rdf"),
    ];
    let first = run(&args);
    for _ in 0..5 {
        assert_eq!(run(&args), first);
    }
}

#[test]
fn usage_and_runtime_errors() {
    let (code, _, err) = run(&["validate", "--library"]);
    assert_eq!(code, exit::USAGE);
    assert!(!err.is_empty());
    assert_eq!(run(&["frobnicate"]).0, exit::USAGE);
    let (code, out, _) = run(&["--help"]);
    assert_eq!(code, exit::SUCCESS);
    assert!(out.contains("plan-schema"));
    let (code, _, err) = run(&[
        "validate",
        "--library",
        "/no/such.xmi",
        "--topology",
        &path("topo-1.rdf"),
    ]);
    assert_eq!(code, exit::RUNTIME);
    assert!(err.contains("/no/such.xmi"));
}

#[test]
fn binary_matches_in_process_output() {
    let args = [
        "validate",
        "--library",
        &path("lib-a.xmi"),
        "--topology",
        &path("topo-1.rdf"),
    ];
    let out = Command::new(env!("CARGO_BIN_EXE_cimgw"))
        .args(args)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8(out.stdout).unwrap(), run(&args).1);
    let bad = Command::new(env!("CARGO_BIN_EXE_cimgw"))
        .arg("bogus")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

/// Kills the child on drop so a failing assertion does not leak processes.
struct Proc(Child);

impl Drop for Proc {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

/// Spawns the binary and returns it with the URL from its first stdout line.
fn spawn(args: &[&str]) -> (Proc, String) {
    let mut child = Command::new(env!("CARGO_BIN_EXE_cimgw"))
        .args(args)
        .env("RUST_LOG", "warn")
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let url = line.trim().rsplit(' ').next().unwrap().to_string();
    assert!(url.starts_with("http://"), "{line:?}");
    (Proc(child), url)
}

#[tokio::test]
async fn sim_and_serve_binaries_talk() {
    let (_sim, sim_url) = spawn(&[
        "sim",
        "--scenario",
        &path("scenario-1.toml"),
        "--listen",
        "127.0.0.1:0",
    ]);
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("gateway.toml");
    std::fs::write(
        &config,
        format!(
            "library = {:?}\nlisten = \"127.0.0.1:0\"\n[refresh]\nperiod_ms = 100\nstaleness_ms = 300\n\
             [source]\nurl = {sim_url:?}\n[topology]\npoll_interval_ms = 100\n",
            path("lib-a.xmi")
        ),
    )
    .unwrap();
    let (_gw, gw_url) = spawn(&["serve", "--config", config.to_str().unwrap()]);

    let http = reqwest::Client::new();
    let mut generation = 0;
    for _ in 0..50 {
        let body: serde_json::Value = http
            .get(format!("{gw_url}/api/generation"))
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        generation = body["generation"].as_u64().unwrap();
        if generation >= 1 {
            break;
        }
        tokio::time::sleep(Duration::from_millis(100)).await;
    }
    assert_eq!(generation, 1);
}

#[test]
fn serve_with_bad_config_exits_with_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("gateway.toml");
    std::fs::write(&config, "library = \"x.xmi\"\n").unwrap();
    let (code, _, err) = run(&["serve", "--config", config.to_str().unwrap()]);
    assert_eq!(code, exit::RUNTIME);
    assert!(err.contains("source"), "{err}");
}

#[test]
fn shipped_config_and_scenarios_load() {
    let cfg = cimgw::config::GatewayConfig::load(&fixture("gateway.toml")).unwrap();
    assert_eq!(cfg.library, fixture("lib-a.xmi"));
    assert_eq!(cfg.writable, ["Switch.normalOpen"]);
    for name in ["scenario-1.toml", "scenario-grow.toml"] {
        cimgw::sim::Scenario::load(&fixture(name)).unwrap();
    }
}
