use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use serde_json::Value;
use tempfile::TempDir;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

fn appendix() -> PathBuf {
    fixtures().join("appendix")
}

fn clinex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clinex"))
        .args(args)
        .env_remove("CLINEX_API_KEY")
        .env_remove("CLINEX_API_BASE")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_lines(p: &Path) -> Vec<Value> {
    std::fs::read_to_string(p)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn runs() -> Vec<Value> {
    serde_json::from_str(&std::fs::read_to_string(appendix().join("runs.json")).unwrap()).unwrap()
}

fn replay(run: &Value, out: &Path) -> Output {
    let dir = appendix();
    let field = |k: &str| dir.join(run[k].as_str().unwrap());
    let store = dir.join("store.jsonl");
    let snippets = field("snippets");
    let mut args = vec![
        "run",
        "--task",
        run["task"].as_str().unwrap(),
        "--template",
        run["template"].as_str().unwrap(),
        "--store",
        s(&store),
        "--snippets",
        s(&snippets),
        "-o",
        s(out),
    ];
    let inv = run.get("inventory").map(|_| field("inventory"));
    if let Some(inv) = &inv {
        args.extend(["--inventory", s(inv)]);
    }
    clinex(&args)
}

#[test]
fn appendix_replay_matches_goldens() {
    let tmp = TempDir::new().unwrap();
    let started = Instant::now();
    for (i, run) in runs().iter().enumerate() {
        let out = tmp.path().join(format!("{i}.jsonl"));
        let o = replay(run, &out);
        assert_eq!(o.status.code(), Some(0), "{run}: {}", String::from_utf8_lossy(&o.stderr));
        let got = read_lines(&out);
        let want = read_lines(&appendix().join(run["expected"].as_str().unwrap()));
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            assert_eq!(g["id"], w["id"]);
            assert_eq!(g["structured_output"], w["structured_output"], "{run}");
            assert!(g.get("error").is_none());
        }
    }
    assert!(started.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn replay_is_byte_stable_and_leaves_store_alone() {
    let tmp = TempDir::new().unwrap();
    let store = appendix().join("store.jsonl");
    let before = std::fs::read(&store).unwrap();
    let run = &runs()[0];
    let (a, b) = (tmp.path().join("a.jsonl"), tmp.path().join("b.jsonl"));
    assert!(replay(run, &a).status.success());
    assert!(replay(run, &b).status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(std::fs::read(&store).unwrap(), before);
}

#[test]
fn live_without_key_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("p.jsonl");
    let snippets = appendix().join("arms.snippets.jsonl");
    let o = clinex(&[
        "run", "--task", "arms", "--template", "zero_shot", "--backend", "live", "--snippets", s(&snippets), "-o", s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn replay_without_store_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("p.jsonl");
    let snippets = appendix().join("arms.snippets.jsonl");
    let o = clinex(&["run", "--task", "arms", "--template", "zero_shot", "--snippets", s(&snippets), "-o", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_template_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("p.jsonl");
    let store = appendix().join("store.jsonl");
    let snippets = appendix().join("arms.snippets.jsonl");
    let o = clinex(&[
        "run", "--task", "arms", "--template", "nope", "--store", s(&store), "--snippets", s(&snippets), "-o", s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn empty_corpus_gives_empty_predictions() {
    let tmp = TempDir::new().unwrap();
    let empty = tmp.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let out = tmp.path().join("p.jsonl");
    let store = appendix().join("store.jsonl");
    let o = clinex(&[
        "run", "--task", "arms", "--template", "zero_shot", "--store", s(&store), "--snippets", s(&empty), "-o", s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(&out).unwrap(), "");
}

#[test]
fn replay_miss_is_recorded_per_line() {
    let tmp = TempDir::new().unwrap();
    let snippets = tmp.path().join("s.jsonl");
    std::fs::write(&snippets, "{\"id\":\"x\",\"text\":\"Aspirin daily.\"}\n").unwrap();
    let out = tmp.path().join("p.jsonl");
    let store = appendix().join("store.jsonl");
    let o = clinex(&[
        "run", "--task", "arms", "--template", "zero_shot", "--store", s(&store), "--snippets", s(&snippets), "-o", s(&out),
    ]);
    assert_eq!(o.status.code(), Some(4));
    let lines = read_lines(&out);
    assert_eq!(lines.len(), 1);
    assert!(lines[0]["error"].is_string());
    assert!(lines[0]["structured_output"].is_null());
}

#[test]
fn eval_scores_fixture_predictions() {
    let tmp = TempDir::new().unwrap();
    for run in runs() {
        let out = tmp.path().join("p.jsonl");
        assert!(replay(&run, &out).status.success());
        let gold = appendix().join(run["gold"].as_str().unwrap());
        let csv = tmp.path().join("r.csv");
        let o = clinex(&[
            "eval", "--task", run["task"].as_str().unwrap(), "--predictions", s(&out), "--gold", s(&gold), "--csv", s(&csv),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let report: Value = serde_json::from_slice(&o.stdout).unwrap();
        let m = &report["metrics"];
        let headline = match run["task"].as_str().unwrap() {
            "sense" => m["overall"]["accuracy"].as_f64(),
            "arms" => m["accuracy"].as_f64(),
            "coref" => m["recall"].as_f64(),
            "med_status" => {
                assert_eq!(m["names"]["recall"].as_f64(), Some(1.0));
                assert_eq!(m["names"]["precision"].as_f64(), Some(1.0));
                m["status"]["accuracy"].as_f64()
            }
            _ => m["micro"]["f1"].as_f64(),
        };
        let expect = if run["task"] == "med_status" && run["template"] == "one_shot_correct" {
            1.0 / 3.0
        } else {
            1.0
        };
        assert_eq!(headline, Some(expect), "{run}");
        assert!(std::fs::read_to_string(&csv).unwrap().lines().count() > 1);
    }
}

#[test]
fn eval_rejects_wrong_task_gold_and_mismatched_ids() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("p.jsonl");
    assert!(replay(&runs()[0], &out).status.success());
    let sense_gold = appendix().join("gold/sense.jsonl");
    let arms_gold = appendix().join("gold/arms.jsonl");
    let o = clinex(&["eval", "--task", "arms", "--predictions", s(&out), "--gold", s(&sense_gold)]);
    assert_eq!(o.status.code(), Some(3));
    let o = clinex(&["eval", "--task", "arms", "--predictions", s(&out), "--gold", s(&arms_gold)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("a2_copd"));
}

#[test]
fn cache_verify_detects_tamper() {
    let tmp = TempDir::new().unwrap();
    let store = tmp.path().join("store.jsonl");
    std::fs::copy(appendix().join("store.jsonl"), &store).unwrap();
    std::fs::copy(appendix().join("store.jsonl.sum"), tmp.path().join("store.jsonl.sum")).unwrap();
    assert_eq!(clinex(&["cache", "verify", s(&store)]).status.code(), Some(0));
    let list = clinex(&["cache", "list", s(&store)]);
    assert_eq!(String::from_utf8_lossy(&list.stdout).lines().count(), 12);

    let mut bytes = std::fs::read(&store).unwrap();
    bytes[40] ^= 0x01;
    std::fs::write(&store, bytes).unwrap();
    assert_eq!(clinex(&["cache", "verify", s(&store)]).status.code(), Some(1));
}

#[test]
fn pseudolabel_exports_selected_examples() {
    let tmp = TempDir::new().unwrap();
    let preds = tmp.path().join("p.jsonl");
    assert!(replay(&runs()[0], &preds).status.success());
    let out = tmp.path().join("train.jsonl");
    let snippets = appendix().join("sense.snippets.jsonl");
    let inv = appendix().join("inventory.json");
    let o = clinex(&[
        "pseudolabel", "--predictions", s(&preds), "--snippets", s(&snippets), "--inventory", s(&inv), "-o", s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["after_overlap_filter"], 2);
    let text = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<Value> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["label_index"], 1);
    assert_eq!(rows[1]["label_index"], 2);

    let o = clinex(&[
        "pseudolabel", "--predictions", s(&preds), "--snippets", s(&snippets), "--inventory", s(&inv), "--min-overlap",
        "100", "-o", s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["after_overlap_filter"], 0);
}

#[test]
fn reverse_sub_on_sample_corpus_round_trips() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("derived.jsonl");
    let gold = tmp.path().join("gold.jsonl");
    let snips = tmp.path().join("snips.jsonl");
    let notes = fixtures().join("sample/notes.jsonl");
    let inv = fixtures().join("sample/inventory.json");
    let o = clinex(&[
        "reverse-sub", "--snippets", s(&notes), "--inventory", s(&inv), "-o", s(&out), "--gold-out", s(&gold),
        "--snippets-out", s(&snips),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["roundtrip_failures"], 0);
    let derived = read_lines(&out);
    assert_eq!(derived.len(), 10);
    assert_eq!(read_lines(&gold).len(), 10);
    for d in &derived {
        let text = d["text"].as_str().unwrap();
        let at = d["offset"].as_u64().unwrap() as usize;
        let acr = d["acronym"].as_str().unwrap();
        assert_eq!(&text[at..at + acr.len()], acr);
    }
    let o = clinex(&["run", "--task", "sense", "--template", "edit", "--store", "x", "--snippets", s(&snips), "-o", s(&out)]);
    assert_eq!(o.status.code(), Some(2), "sense run needs an inventory");
}
