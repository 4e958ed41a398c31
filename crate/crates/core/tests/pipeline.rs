mod common;

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;

use serde_json::Value;

use opencoding::codebook::Codebook;
use opencoding::gateway::{Mode, Transcript};

use common::*;

const MODELS: [&str; 6] = [
    "gpt-4o-0513",
    "gpt-4o-mini",
    "claude-3.5-sonnet",
    "llama-3.1-70b",
    "mistral-large",
    "gemini-1.5-pro",
];

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn ingested() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixture("pipeline");
    std::fs::copy(fx.join("project.json"), tmp.path().join("project.json")).unwrap();
    cli(tmp.path(), &["ingest", fx.join("raw.jsonl").to_str().unwrap()]).unwrap();
    cli(tmp.path(), &["chunk"]).unwrap();
    tmp
}

fn bin(project: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_opencoding"))
        .arg("-C")
        .arg(project)
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn replayed_item_coding_writes_codebook_and_manifest() {
    let tmp = ingested();
    let fx = fixture("pipeline");
    let args = [
        "code", "--approach", "item", "--verb-phrases", "--model", "gpt-4o-0513", "--temperature", "0.5",
        "--replay", fx.to_str().unwrap(),
    ];
    let out = bin(tmp.path(), &args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let id = "item_verb_gpt-4o-0513_0.5_1";
    let book = Codebook::load(&tmp.path().join(format!("codebooks/{id}.json"))).unwrap();
    assert_eq!(book.coder_id, id);
    assert!(!book.codes.is_empty());

    let m = read_json(&tmp.path().join(format!("manifests/code-{id}.json")));
    assert_eq!(m["command"], "code");
    assert_eq!(m["params"]["model"], "gpt-4o-0513");
    assert_eq!(m["params"]["temperature"], 0.5);
    assert_eq!(m["transcript"]["mode"], "replay");
    let digest = &m["outputs"][format!("codebooks/{id}.json")];
    assert_eq!(
        digest.as_str().unwrap(),
        opencoding::cli::sha256_file(&tmp.path().join(format!("codebooks/{id}.json"))).unwrap()
    );
    assert!(m["inputs"]["corpus.jsonl"].is_string());
}

#[test]
fn pipeline_is_bit_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_pipeline(a.path()).unwrap();
    run_pipeline(b.path()).unwrap();
    for dir in ["manifests", "codebooks", "reports"] {
        let (x, y) = (read_dir_bytes(&a.path().join(dir)), read_dir_bytes(&b.path().join(dir)));
        assert!(!x.is_empty(), "{dir} is empty");
        assert_eq!(x, y, "{dir} differs");
    }
    assert_eq!(
        std::fs::read(a.path().join("merged.json")).unwrap(),
        std::fs::read(b.path().join("merged.json")).unwrap()
    );
}

#[test]
fn matrix_expands_six_models_by_five_temperatures() {
    let tmp = ingested();
    let rec = tmp.path().join("rec");
    let script = fixture("pipeline/script.json");
    let models = MODELS.join(",");
    let grid = [
        "matrix", "--approaches", "item", "--models", &models, "--temperatures", "0,0.25,0.5,0.75,1",
        "--runs", "1",
    ];
    let mut args = grid.to_vec();
    args.extend(["--scripted", script.to_str().unwrap(), "--record", rec.to_str().unwrap()]);
    cli(tmp.path(), &args).unwrap();

    let books: BTreeSet<String> = std::fs::read_dir(tmp.path().join("codebooks"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(books.len(), 30, "{books:?}");
    for m in MODELS {
        for t in ["0", "0.25", "0.5", "0.75", "1"] {
            assert!(books.contains(&format!("item_level_{m}_{t}_1.json")), "missing {m} {t}");
        }
    }
    let manifest = read_json(&tmp.path().join("manifests/matrix.json"));
    assert_eq!(manifest["outputs"].as_object().unwrap().len(), 30);

    // the recorded transcript now answers the same grid with no provider at all
    let before = read_dir_bytes(&tmp.path().join("codebooks"));
    let mut args = grid.to_vec();
    args.extend(["--replay", rec.to_str().unwrap()]);
    cli(tmp.path(), &args).unwrap();
    assert_eq!(before, read_dir_bytes(&tmp.path().join("codebooks")));
}

#[test]
fn coding_prompts_never_show_existing_codes() {
    let tmp = tempfile::tempdir().unwrap();
    run_pipeline(tmp.path()).unwrap();
    let labels: BTreeSet<String> = std::fs::read_dir(tmp.path().join("codebooks"))
        .unwrap()
        .flat_map(|e| Codebook::load(&e.unwrap().path()).unwrap().codes)
        .filter(|c| c.label.split_whitespace().count() > 1)
        .map(|c| c.normalized_label)
        .collect();
    assert!(!labels.is_empty());
    let t = Transcript::open(&fixture("pipeline/transcript.jsonl"), Mode::Replay).unwrap();
    let mut coding = 0;
    for e in t.entries() {
        let tag = e.request.tag.as_str();
        if tag.starts_with("merge:") || tag.starts_with("define:") {
            continue;
        }
        coding += 1;
        let prompt = format!("{}\n{}", e.request.system_text, e.request.user_text).to_lowercase();
        for l in &labels {
            assert!(!prompt.contains(l.as_str()), "{tag} prompt mentions code {l:?}");
        }
    }
    assert!(coding > 0);
}

#[test]
fn config_file_sits_between_flags_and_project_defaults() {
    let tmp = ingested();
    let fx = fixture("pipeline");
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"distance_threshold": 0.2, "linkage": "complete"}"#).unwrap();
    for a in APPROACH_RUNS {
        let mut args = vec!["code", "--approach"];
        args.extend(a.split(' '));
        args.extend(["--replay", fx.to_str().unwrap()]);
        cli(tmp.path(), &args).unwrap();
    }
    let scripted = fx.join("script.json");
    let merge = |extra: &[&str]| {
        let mut args = vec!["--config", cfg.to_str().unwrap(), "merge", "--scripted", scripted.to_str().unwrap()];
        args.extend(extra);
        cli(tmp.path(), &args).unwrap();
        read_json(&tmp.path().join("manifests/merge.json"))["params"]["merge"].clone()
    };
    let p = merge(&[]);
    assert_eq!((p["distance_threshold"].as_f64(), p["linkage"].as_str()), (Some(0.2), Some("complete")));
    let p = merge(&["--threshold", "0.3"]);
    assert_eq!((p["distance_threshold"].as_f64(), p["linkage"].as_str()), (Some(0.3), Some("complete")));
}

#[test]
fn failures_are_one_json_line() {
    let tmp = ingested();
    let fx = fixture("pipeline");
    let cases: [&[&str]; 4] = [
        &["code", "--approach", "sideways"],
        &["code", "--approach", "item", "--model", "unseen-model", "--replay", fx.to_str().unwrap()],
        &["report", "--table", "2"],
        &["code", "--approach", "item", "--replay", "/nonexistent/dir"],
    ];
    for args in cases {
        let out = bin(tmp.path(), args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        let err = String::from_utf8(out.stderr).unwrap();
        let lines: Vec<&str> = err.lines().collect();
        assert_eq!(lines.len(), 1, "{args:?}: {err}");
        let v: Value = serde_json::from_str(lines[0]).unwrap();
        assert!(v["error"].is_string() && v["message"].is_string(), "{v}");
    }
    let miss = bin(tmp.path(), cases[1]);
    let v: Value = serde_json::from_slice(&miss.stderr).unwrap();
    assert_eq!(v["error"], "replay_miss");
}

#[test]
fn unknown_subcommand_prints_usage() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin(tmp.path(), &["transmogrify"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}
