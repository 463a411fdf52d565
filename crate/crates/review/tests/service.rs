use af_core::corpus::{Answerability, QAItem, UnanswerabilityKind, VideoRef};
use af_core::review::{export_curated, ReviewStore};
use af_review::{router, serve, AppState};
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

fn queue(n: usize) -> Vec<QAItem> {
    (0..n)
        .map(|i| {
            let video = VideoRef {
                id: format!("vid{i}"),
                source_dataset: "synthetic".into(),
                frame_uris: vec![format!("vid{i}/0.png")],
                duration_s: None,
            };
            let mut it =
                QAItem::answerable(format!("q{i:02}"), video, "What is on the table?", "A cup.");
            if i % 2 == 1 {
                it.k = Answerability::Unanswerable;
                it.unanswerability_kind = Some(UnanswerabilityKind::Object);
                it.gt_answer = "The question is unanswerable because there is no table.".into();
            }
            it
        })
        .collect()
}

fn start(items: Vec<QAItem>, log: &Path, frames: Option<PathBuf>, ui: Option<PathBuf>) -> String {
    let store = ReviewStore::open(items, log).unwrap();
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let app = router(AppState::new(store, frames), ui.as_deref());
            let addr: SocketAddr = "127.0.0.1:0".parse().unwrap();
            serve(addr, app, |a| tx.send(a).unwrap()).await.unwrap();
        });
    });
    format!("http://{}", rx.recv().unwrap())
}

fn next(c: &Client, base: &str, who: &str) -> Option<Value> {
    let r = c
        .get(format!("{base}/api/queue/next?annotator={who}"))
        .send()
        .unwrap();
    match r.status() {
        StatusCode::NO_CONTENT => None,
        StatusCode::OK => Some(r.json().unwrap()),
        s => panic!("unexpected {s}"),
    }
}

fn decide(c: &Client, base: &str, id: &str, verdict: &str, who: &str) -> Value {
    let r = c
        .post(format!("{base}/api/decisions"))
        .json(&json!({"item_id": id, "verdict": verdict, "annotator": who}))
        .send()
        .unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    r.json().unwrap()
}

#[test]
fn scripted_session_export_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("decisions.jsonl");
    let base = start(queue(20), &log, None, None);
    let c = Client::new();

    let mut decided = 0;
    while let Some(item) = next(&c, &base, "ann") {
        let id = item["item"]["id"].as_str().unwrap().to_string();
        assert_eq!(item["status"], "pending");
        let verdict = if decided < 12 { "pass" } else { "filtered" };
        let ack = decide(&c, &base, &id, verdict, "ann");
        assert_eq!(ack["progress"]["pending"], 20 - decided - 1);
        decided += 1;
    }
    assert_eq!(decided, 20);
    let progress: Value = c
        .get(format!("{base}/api/progress"))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(
        (progress["pass"].as_u64(), progress["filtered"].as_u64()),
        (Some(12), Some(8))
    );

    let reopened = ReviewStore::open(queue(20), &log).unwrap();
    let out = dir.path().join("curated.jsonl");
    assert_eq!(export_curated(reopened.state(), &out).unwrap(), 12);
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 12);
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 20);

    let again = start(queue(20), &log, None, None);
    let replayed: Value = c
        .get(format!("{again}/api/progress"))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(replayed, progress);
    assert!(next(&c, &again, "ann").is_none());
}

#[test]
fn error_statuses() {
    let dir = tempfile::tempdir().unwrap();
    let base = start(queue(2), &dir.path().join("log.jsonl"), None, None);
    let c = Client::new();
    let r = c
        .post(format!("{base}/api/decisions"))
        .json(&json!({"item_id": "missing", "verdict": "pass", "annotator": "a"}))
        .send()
        .unwrap();
    assert_eq!(r.status(), StatusCode::NOT_FOUND);
    assert_eq!(r.json::<Value>().unwrap()["error"], "unknown_item");

    let rate = |id: &str, rubric: &str, score: u8| {
        c.post(format!("{base}/api/ratings"))
            .json(&json!({"item_id": id, "rubric": rubric, "score": score, "annotator": "a"}))
            .send()
            .unwrap()
    };
    assert_eq!(rate("q01", "unanswerable", 5).status(), StatusCode::OK);
    let r = rate("q01", "unanswerable", 7);
    assert_eq!(r.status(), StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.json::<Value>().unwrap()["error"], "score_out_of_range");
    let r = rate("q01", "answerable", 5);
    assert_eq!(r.json::<Value>().unwrap()["error"], "rubric_mismatch");

    assert_eq!(
        c.get(format!("{base}/api/queue/next"))
            .send()
            .unwrap()
            .status(),
        StatusCode::BAD_REQUEST
    );
    let r = c
        .get(format!("{base}/api/queue/next"))
        .header("x-annotator", "h")
        .send()
        .unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    assert_eq!(
        c.get(format!("{base}/api/items/none"))
            .send()
            .unwrap()
            .status(),
        StatusCode::NOT_FOUND
    );
    let item: Value = c
        .get(format!("{base}/api/items/q01"))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(item["item"]["k"], -1);
}

#[test]
fn tie_filters_and_other_annotators_still_served() {
    let dir = tempfile::tempdir().unwrap();
    let base = start(queue(1), &dir.path().join("log.jsonl"), None, None);
    let c = Client::new();
    assert_eq!(decide(&c, &base, "q00", "pass", "a")["status"], "pass");
    assert_eq!(next(&c, &base, "b").unwrap()["item"]["id"], "q00");
    assert_eq!(
        decide(&c, &base, "q00", "filtered", "b")["status"],
        "filtered"
    );
    assert!(next(&c, &base, "a").is_none());
}

#[test]
fn frames_ui_and_compose() {
    let dir = tempfile::tempdir().unwrap();
    let frames = dir.path().join("frames");
    std::fs::create_dir_all(frames.join("vid0")).unwrap();
    std::fs::write(frames.join("vid0/0.png"), b"\x89PNGfake").unwrap();
    let ui = dir.path().join("ui");
    std::fs::create_dir_all(&ui).unwrap();
    std::fs::write(ui.join("index.html"), "<html>review</html>").unwrap();
    let base = start(
        queue(1),
        &dir.path().join("log.jsonl"),
        Some(frames),
        Some(ui),
    );
    let c = Client::new();

    let r = c.get(format!("{base}/api/frames/vid0/0")).send().unwrap();
    assert_eq!(r.headers()["content-type"], "image/png");
    assert_eq!(&r.bytes().unwrap()[..], b"\x89PNGfake");
    assert_eq!(
        c.get(format!("{base}/api/frames/vid0/3"))
            .send()
            .unwrap()
            .status(),
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        c.get(format!("{base}/api/frames/nope/0"))
            .send()
            .unwrap()
            .status(),
        StatusCode::NOT_FOUND
    );
    assert!(c
        .get(format!("{base}/"))
        .send()
        .unwrap()
        .text()
        .unwrap()
        .contains("review"));

    let r = c
        .post(format!("{base}/api/compose"))
        .json(&json!({
            "video": {"id": "ood1", "source": "msrvtt", "frames": []},
            "question": "What is the parrot saying?",
            "gt_answer": "The question is unanswerable because no parrot appears.",
            "kind": "object",
            "annotator": "a"
        }))
        .send()
        .unwrap();
    assert_eq!(r.status(), StatusCode::CREATED);
    let created: Value = r.json().unwrap();
    assert_eq!(created["item"]["k"], -1);
    let progress: Value = c
        .get(format!("{base}/api/progress"))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(progress["total"], 2);
}
