//! End-to-end checks of the command-line interface over the shipped
//! fixture: run with provenance, write outputs and a graph, query it.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/dealership")
}

fn lipstick(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lipstick"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_fixture(tmp: &Path) -> PathBuf {
    let graph_path = tmp.join("run.pg");
    let out = lipstick(&[
        "run",
        "--workflow",
        fixture_dir().join("workflow.def").to_str().unwrap(),
        "--input-dir",
        fixture_dir().join("inputs").to_str().unwrap(),
        "--state-dir",
        fixture_dir().join("state").to_str().unwrap(),
        "--num-exec",
        "1",
        "--prov",
        "--out-graph",
        graph_path.to_str().unwrap(),
        "--out-dir",
        tmp.join("out").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "run failed: {}", String::from_utf8_lossy(&out.stderr));
    graph_path
}

#[test]
fn run_writes_outputs_and_a_roundtripping_graph() {
    let tmp = tempfile::tempdir().unwrap();
    let graph_path = run_fixture(tmp.path());

    let best = std::fs::read_to_string(tmp.path().join("out/0/agg.BestBid.txt")).unwrap();
    assert_eq!(best, "Civic\t20800\n");

    let bytes = std::fs::read_to_string(&graph_path).unwrap();
    let graph = lipstick::provgraph::ProvGraph::deserialize(&bytes).unwrap();
    assert_eq!(graph.serialize(), bytes);
}

#[test]
fn run_without_prov_emits_no_graph() {
    let tmp = tempfile::tempdir().unwrap();
    let graph_path = tmp.path().join("none.pg");
    let out = lipstick(&[
        "run",
        "--workflow",
        fixture_dir().join("workflow.def").to_str().unwrap(),
        "--input-dir",
        fixture_dir().join("inputs").to_str().unwrap(),
        "--state-dir",
        fixture_dir().join("state").to_str().unwrap(),
        "--num-exec",
        "1",
        "--out-graph",
        graph_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(!graph_path.exists());
}

#[test]
fn missing_state_dir_exits_2() {
    let out = lipstick(&[
        "run",
        "--workflow",
        fixture_dir().join("workflow.def").to_str().unwrap(),
        "--input-dir",
        fixture_dir().join("inputs").to_str().unwrap(),
        "--state-dir",
        "/nonexistent-state-dir",
        "--num-exec",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_error_exits_1() {
    let out = lipstick(&["run", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    let out = lipstick(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn query_depends_and_deletion_match_the_deletion_semantics() {
    let tmp = tempfile::tempdir().unwrap();
    let graph_path = run_fixture(tmp.path());
    let bytes = std::fs::read_to_string(&graph_path).unwrap();
    let graph = lipstick::provgraph::ProvGraph::deserialize(&bytes).unwrap();

    let c2 = graph.find_tokens("C_2")[0];
    let request = graph.find_tokens("B_1")[0];
    let bid_out = graph
        .nodes()
        .find(|n| n.class == lipstick::provgraph::NodeClass::Output)
        .map(|n| n.id)
        .unwrap();

    let gp = graph_path.to_str().unwrap();
    let out = lipstick(&["query", gp, "--depends", &bid_out.to_string(), &c2.to_string()]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "false");

    let out = lipstick(&["query", gp, "--depends", &bid_out.to_string(), &request.to_string()]);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "true");

    // empty deletion list: output graph identical to input
    let out = lipstick(&["query", gp, "--delete", ""]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout), bytes);

    // unknown node id is a data error
    let out = lipstick(&["query", gp, "--subgraph", "999999"]);
    assert_eq!(out.status.code(), Some(2));

    // subgraph of a token works and is a valid graph
    let out = lipstick(&["query", gp, "--subgraph", &c2.to_string()]);
    assert!(out.status.success());
    lipstick::provgraph::ProvGraph::deserialize(&String::from_utf8_lossy(&out.stdout)).unwrap();
}

#[test]
fn query_zoom_roundtrip_via_cli() {
    let tmp = tempfile::tempdir().unwrap();
    let graph_path = run_fixture(tmp.path());
    let bytes = std::fs::read_to_string(&graph_path).unwrap();
    let gp = graph_path.to_str().unwrap();

    let zoomed = lipstick(&["query", gp, "--zoom-out", "M_dealer1"]);
    assert!(zoomed.status.success());
    let view = String::from_utf8_lossy(&zoomed.stdout);
    assert!(view.lines().next().unwrap().ends_with("VIEW"));
    assert!(view.contains("Meta"));

    let back = lipstick(&["query", gp, "--zoom-out", "M_dealer1", "--zoom-in", "M_dealer1"]);
    assert_eq!(String::from_utf8_lossy(&back.stdout), bytes);

    // zooming in on a module that was never collapsed is an error
    let bad = lipstick(&["query", gp, "--zoom-in", "M_agg"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn gen_then_run_works_from_files() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("bench");
    let out = lipstick(&[
        "gen",
        "dealerships",
        "--num-cars",
        "24",
        "--num-exec",
        "2",
        "--seed",
        "5",
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let graph_path = tmp.path().join("bench.pg");
    let out = lipstick(&[
        "run",
        "--workflow",
        dir.join("workflow.def").to_str().unwrap(),
        "--input-dir",
        dir.join("inputs").to_str().unwrap(),
        "--state-dir",
        dir.join("state").to_str().unwrap(),
        "--num-exec",
        "2",
        "--prov",
        "--stop-on-output",
        "--out-graph",
        graph_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stats = lipstick(&["query", graph_path.to_str().unwrap(), "--stats"]);
    assert!(stats.status.success());
    assert!(String::from_utf8_lossy(&stats.stdout).starts_with("nodes "));
}

#[test]
fn shell_answers_queries() {
    use std::io::Write;
    let tmp = tempfile::tempdir().unwrap();
    let graph_path = run_fixture(tmp.path());
    let mut child = Command::new(env!("CARGO_BIN_EXE_lipstick"))
        .args(["shell", graph_path.to_str().unwrap()])
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .as_mut()
        .unwrap()
        .write_all(b"stats\nzoom-out M_dealer1\nzoom-in M_dealer1\nexit\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("nodes "));
    assert!(text.contains("collapsed M_dealer1"));
}
