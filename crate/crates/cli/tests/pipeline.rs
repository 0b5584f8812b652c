use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use axcode_cli::main_with_args;
use sha2::{Digest, Sha256};

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for f in ["debates.jsonl", "pipeline.toml"] {
        std::fs::copy(Path::new(FIXTURES).join(f), dir.path().join(f)).unwrap();
    }
    dir
}

fn axcode(dir: &Path, args: &[&str]) -> i32 {
    let config = dir.join("pipeline.toml");
    let mut argv = vec!["axcode".to_string(), "--config".into(), config.display().to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    main_with_args(argv)
}

/// Relative path to SHA-256 of every file under `root`.
fn tree(root: &Path) -> BTreeMap<PathBuf, String> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, String>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let bytes = std::fs::read(&path).unwrap();
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), hex::encode(Sha256::digest(bytes)));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn edit_config(dir: &Path, from: &str, to: &str) {
    let p = dir.join("pipeline.toml");
    let text = std::fs::read_to_string(&p).unwrap();
    assert!(text.contains(from), "fixture lacks `{from}`");
    std::fs::write(p, text.replacen(from, to, 1)).unwrap();
}

#[test]
fn run_all_writes_every_artifact() {
    let ws = workspace();
    assert_eq!(axcode(ws.path(), &["run-all"]), 0);
    let run = ws.path().join("run");
    for f in [
        "corpus.jsonl",
        "coded.jsonl",
        "sweep.json",
        "sweep.csv",
        "systems/cluster.json",
        "systems/llm-grouper.json",
        "levels/llm-grouper.level2.json",
        "metrics.json",
        "graph/cluster.dot",
        "graph/cluster.json",
        "graph/llm-grouper.dot",
        "graph/llm-grouper.json",
        "report/intrinsic.csv",
        "report/extrinsic.csv",
        "report/scatter.csv",
        "report/report.md",
    ] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let scatter = std::fs::read_to_string(run.join("report/scatter.csv")).unwrap();
    let lines: Vec<&str> = scatter.lines().collect();
    assert_eq!(lines[0], "method,type,level,coverage,cosine");
    assert_eq!(lines.len(), 3, "{scatter}");
    let dot = std::fs::read_to_string(run.join("graph/llm-grouper.dot")).unwrap();
    assert!(dot.starts_with("digraph"));
}

#[test]
fn runs_in_different_directories_are_byte_identical() {
    let (a, b) = (workspace(), workspace());
    assert_eq!(axcode(a.path(), &["run-all"]), 0);
    assert_eq!(axcode(b.path(), &["run-all"]), 0);
    let (ta, tb) = (tree(&a.path().join("run")), tree(&b.path().join("run")));
    assert!(!ta.is_empty());
    assert_eq!(ta, tb);
}

#[test]
fn rerun_is_a_no_op_and_force_recomputes_identically() {
    let ws = workspace();
    assert_eq!(axcode(ws.path(), &["run-all"]), 0);
    let before = tree(&ws.path().join("run"));
    assert_eq!(axcode(ws.path(), &["run-all"]), 0);
    assert_eq!(axcode(ws.path(), &["--force", "run-all"]), 0);
    assert_eq!(before, tree(&ws.path().join("run")));
}

#[test]
fn missing_upstream_artifact_exits_2() {
    let ws = workspace();
    assert_eq!(axcode(ws.path(), &["eval"]), 2);
    assert_eq!(axcode(ws.path(), &["opencode"]), 2);
    assert_eq!(axcode(ws.path(), &["ingest"]), 0);
    assert_eq!(axcode(ws.path(), &["axial-llm"]), 2);
    assert_eq!(axcode(ws.path(), &["report"]), 2);
}

#[test]
fn bad_config_exits_1() {
    let ws = workspace();
    edit_config(ws.path(), "moderator = \"moderator\"", "moderator = \"nobody\"");
    assert_eq!(axcode(ws.path(), &["ingest"]), 1);

    let ws = workspace();
    edit_config(ws.path(), "tau = 0.7", "tau = 1.5");
    assert_eq!(axcode(ws.path(), &["run-all"]), 1);

    let ws = workspace();
    assert_eq!(axcode(ws.path(), &["no-such-command"]), 1);
}

#[test]
fn failing_backends_exit_3() {
    let ws = workspace();
    edit_config(ws.path(), "\"mock:first-words:2\"", "\"mock:fail\"");
    edit_config(ws.path(), "endpoint = \"mock:first\"", "endpoint = \"mock:fail\"");
    assert_eq!(axcode(ws.path(), &["run-all"]), 3);
}

#[test]
fn method_filter_restricts_eval() {
    let ws = workspace();
    assert_eq!(axcode(ws.path(), &["run-all"]), 0);
    assert_eq!(axcode(ws.path(), &["--force", "--method", "llm", "eval"]), 0);
    let metrics = std::fs::read_to_string(ws.path().join("run/metrics.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&metrics).unwrap();
    let reports = v["data"].as_array().unwrap();
    assert_eq!(reports.len(), 1);
    assert!(reports[0]["method"].as_str().unwrap().starts_with("llm"));
}

#[test]
fn out_flag_redirects_the_run_directory() {
    let ws = workspace();
    let elsewhere = ws.path().join("elsewhere");
    assert_eq!(axcode(ws.path(), &["--out", elsewhere.to_str().unwrap(), "ingest"]), 0);
    assert!(elsewhere.join("corpus.jsonl").is_file());
    assert!(!ws.path().join("run").exists());
}

#[test]
fn stage_artifacts_carry_config_hash_and_version() {
    let ws = workspace();
    assert_eq!(axcode(ws.path(), &["run-all"]), 0);
    let run = ws.path().join("run");
    let mut hashes = std::collections::BTreeSet::new();
    let mut checked = 0;
    for rel in tree(&run).into_keys() {
        let ext = rel.extension().and_then(|e| e.to_str()).unwrap_or_default();
        if rel.starts_with("graph") || !matches!(ext, "json" | "jsonl") {
            continue;
        }
        let text = std::fs::read_to_string(run.join(&rel)).unwrap();
        let first = if ext == "jsonl" { text.lines().next().unwrap().to_string() } else { text };
        let header: serde_json::Value = serde_json::from_str(&first).unwrap();
        assert!(header["stage_version"].is_u64(), "{rel:?}");
        hashes.insert(header["config_hash"].as_str().unwrap().to_string());
        checked += 1;
    }
    assert!(checked >= 6);
    assert_eq!(hashes.len(), 1, "{hashes:?}");
}
