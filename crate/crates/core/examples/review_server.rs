//! Serves the review API over a small merged project, drives one blind
//! review step through HTTP, and exits. Pass `--serve` to keep it running.
//!
//!     cargo run --example review_server [-- --serve]

use std::path::Path;

use opencoding::cli;
use opencoding::gateway::{Gateway, Mode, Transcript};
use opencoding::review::{router, AppState, Project};
use serde_json::{json, Value};

fn main() {
    let keep = std::env::args().any(|a| a == "--serve");
    let fx = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/merge_mini");
    let tmp = tempfile::tempdir().unwrap();
    for rel in ["project.json", "corpus.jsonl", "codebooks/humans.json", "codebooks/item_level.json", "codebooks/item_verb.json"] {
        std::fs::create_dir_all(tmp.path().join(rel).parent().unwrap()).unwrap();
        std::fs::copy(fx.join(rel), tmp.path().join(rel)).unwrap();
    }
    let args = ["opencoding", "-C", tmp.path().to_str().unwrap(), "merge", "--replay", fx.to_str().unwrap()];
    cli::run_from(args).unwrap().unwrap();
    let project = Project::open(tmp.path(), Gateway::replay(Transcript::in_memory(Mode::Replay, []))).unwrap();
    let app = router(AppState::new([("merge_mini".to_string(), project)]));

    let rt = tokio::runtime::Runtime::new().unwrap();
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}/projects/merge_mini", listener.local_addr().unwrap());
        println!("review API at {base}");
        let server = tokio::spawn(async move { axum::serve(listener, app).await });

        let walk = tokio::task::spawn_blocking(move || {
            let http = reqwest::blocking::Client::new();
            let post = |url: String, body: Value| -> Value {
                http.post(url).json(&body).send().unwrap().json().unwrap()
            };
            let session = post(
                format!("{base}/sessions"),
                json!({ "id": "demo", "sample_size": 5, "seed": 1, "reviewers": ["ana", "ben"] }),
            );
            let first = session["merged_code_ids"][0].as_str().unwrap().to_string();
            let items_url = format!("{base}/sessions/demo/items?reviewer=ana");
            let card = |v: Value| v[0].clone();
            let before = card(http.get(&items_url).send().unwrap().json().unwrap());
            println!("{first} {} before saving: coverage {}", before["label"], before["algorithmic_coverage"]);
            post(
                format!("{base}/sessions/demo/decisions"),
                json!({ "merged_code_id": first, "reviewer": "ana", "coder_id": "item_verb", "covered": true,
                        "memo": "same idea, narrower wording" }),
            );
            let after = card(http.get(&items_url).send().unwrap().json().unwrap());
            println!("after saving: coverage {}", after["algorithmic_coverage"]);
        });
        walk.await.unwrap();
        if keep {
            println!("serving until interrupted");
            server.await.unwrap().unwrap();
        }
    });
}
