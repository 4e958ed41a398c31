#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde::Deserialize;
use serde_json::Value;
use tower::ServiceExt;

use opencoding::codebook::{Code, CoderKind, Codebook};
use opencoding::gateway::{Gateway, Mode, Transcript};
use opencoding::merging::{ChildRef, MergeOutput, MergeParams, MergedCode};
use opencoding::review::{sample_ids, Project, ProjectConfig, ReviewStore};

pub const APPROACH_RUNS: [&str; 5] = [
    "topic",
    "chunk",
    "chunk --structured",
    "item",
    "item --verb-phrases",
];

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

pub fn copy_dir(src: &Path, dst: &Path) {
    std::fs::create_dir_all(dst).unwrap();
    for e in std::fs::read_dir(src).unwrap() {
        let e = e.unwrap();
        let to = dst.join(e.file_name());
        if e.file_type().unwrap().is_dir() {
            copy_dir(&e.path(), &to);
        } else {
            std::fs::copy(e.path(), to).unwrap();
        }
    }
}

/// Runs the CLI in-process; `args` excludes the program name.
pub fn cli(project: &Path, args: &[&str]) -> Result<(), String> {
    let mut argv = vec!["opencoding".to_string(), "-C".into(), project.display().to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    match opencoding::cli::run_from(argv) {
        Err(usage) => Err(usage.to_string()),
        Ok(r) => r.map_err(|e| e.to_line()),
    }
}

/// `ingest → chunk → code ×5 → merge → report` in replay mode.
pub fn run_pipeline(project: &Path) -> Result<(), String> {
    let fx = fixture("pipeline");
    let fxs = fx.display().to_string();
    std::fs::create_dir_all(project).unwrap();
    std::fs::copy(fx.join("project.json"), project.join("project.json")).unwrap();
    cli(project, &["ingest", &fx.join("raw.jsonl").display().to_string()])?;
    cli(project, &["chunk"])?;
    for a in APPROACH_RUNS {
        let mut args = vec!["code", "--approach"];
        args.extend(a.split(' '));
        args.extend(["--replay", &fxs]);
        cli(project, &args)?;
    }
    cli(project, &["merge", "--replay", &fxs])?;
    cli(project, &["report", "--table", "2"])?;
    Ok(())
}

pub fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

pub fn replay_gateway() -> Gateway {
    Gateway::replay(Transcript::in_memory(Mode::Replay, []))
}

pub async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    call_with(app, method, uri, body, &[]).await
}

pub async fn call_with(
    app: &Router,
    method: &str,
    uri: &str,
    body: Option<Value>,
    headers: &[(&str, &str)],
) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    for (k, v) in headers {
        req = req.header(*k, *v);
    }
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, v)
}

#[derive(Debug, Clone, Deserialize)]
pub struct KappaDecision {
    pub r1: bool,
    pub r2: bool,
    pub algorithm: bool,
    pub consensus: bool,
}

#[derive(Debug, Clone, Deserialize)]
pub struct KappaItem {
    pub round: usize,
    pub decisions: BTreeMap<String, KappaDecision>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct KappaFixture {
    pub reviewers: Vec<String>,
    pub rounds: Vec<(usize, usize)>,
    pub coders: Vec<String>,
    pub expected: BTreeMap<String, String>,
    pub items: Vec<KappaItem>,
}

pub const REVIEW_SEED: u64 = 2024;

pub fn kappa_fixture() -> KappaFixture {
    let text = std::fs::read_to_string(fixture("kappa/review81.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// A project whose merged codes carry the fixture's algorithmic coverage at
/// the positions a session seeded with [`REVIEW_SEED`] will draw them.
pub fn review81_project() -> (KappaFixture, Project) {
    let fx = kappa_fixture();
    let population: Vec<String> = (1..=fx.items.len()).map(|i| format!("m{i:04}")).collect();
    let order = sample_ids(&population, population.len(), REVIEW_SEED).unwrap();
    let mut codebooks: BTreeMap<String, Codebook> = fx
        .coders
        .iter()
        .map(|c| {
            (
                c.clone(),
                Codebook {
                    coder_id: c.clone(),
                    kind: if c == "humans" { CoderKind::Human } else { CoderKind::Machine },
                    approach: None,
                    codes: Vec::new(),
                },
            )
        })
        .collect();
    let mut merged: BTreeMap<String, MergedCode> = BTreeMap::new();
    for (item, id) in fx.items.iter().zip(&order) {
        let mut children = Vec::new();
        let mut coverage = BTreeMap::new();
        for (coder, d) in &item.decisions {
            coverage.insert(coder.clone(), d.algorithm);
            if d.algorithm {
                let cb = codebooks.get_mut(coder).unwrap();
                let code_id = format!("{coder}/{:04}", cb.codes.len() + 1);
                let label = format!("{coder} code for {id}");
                cb.codes.push(Code {
                    id: code_id.clone(),
                    normalized_label: label.clone(),
                    label,
                    definition: format!("Something {coder} saw around {id}."),
                    example_message_ids: Vec::new(),
                    coder_id: coder.clone(),
                    is_theme: false,
                    parent: None,
                    source_approach: None,
                    needs_review: false,
                });
                children.push(ChildRef {
                    coder_id: coder.clone(),
                    code_id,
                });
            }
        }
        merged.insert(
            id.clone(),
            MergedCode {
                id: id.clone(),
                label: format!("merged {id}"),
                definition: format!("Merged code {id}."),
                children,
                algorithmic_coverage: coverage,
            },
        );
    }
    let out = MergeOutput {
        params: MergeParams::default(),
        embed_model: "stub-hash-64".into(),
        coder_ids: fx.coders.clone(),
        merged: merged.into_values().collect(),
    };
    let project = Project::new(
        ProjectConfig::default(),
        None,
        codebooks.into_values().collect(),
        out,
        ReviewStore::in_memory(),
        replay_gateway(),
    )
    .unwrap();
    (fx, project)
}
