use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use serde_json::{json, Value};

fn capfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_capfuse"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn capfuse")
}

fn ok(args: &[&str]) -> String {
    let out = capfuse(args);
    assert!(
        out.status.success(),
        "capfuse {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_jsonl(path: &Path, rows: &[Value]) {
    let text: String = rows.iter().map(|r| format!("{r}\n")).collect();
    std::fs::write(path, text).unwrap();
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn manifest(dir: &Path, n: usize) -> PathBuf {
    let media = dir.join("media");
    std::fs::create_dir_all(&media).unwrap();
    let rows: Vec<Value> = (0..n)
        .map(|i| {
            let audio = media.join(format!("c{i:02}.wav"));
            std::fs::write(&audio, [i as u8]).unwrap();
            json!({
                "clip_id": format!("c{i:02}"),
                "audio_path": audio,
                "video_path": null,
                "duration_s": 10.0,
                "tags": [{"label": "Speech", "confidence_pct": 80.0}],
            })
        })
        .collect();
    let path = dir.join("manifest.jsonl");
    write_jsonl(&path, &rows);
    path
}

fn shard_files(out: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(out.join("shards"))
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

/// A background `capfuse` server, killed on drop.
struct Server {
    child: Child,
    addr: String,
}

impl Server {
    fn start(args: &[&str]) -> Self {
        let mut child = Command::new(env!("CARGO_BIN_EXE_capfuse"))
            .args(args)
            .args(["--addr", "127.0.0.1:0"])
            .env("RUST_LOG", "warn")
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .expect("spawn server");
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let addr = line
            .trim()
            .strip_prefix("listening on http://")
            .unwrap_or_else(|| panic!("unexpected banner {line:?}"))
            .to_owned();
        Self { child, addr }
    }

    /// Plain HTTP/1.1 GET; returns (status line, body).
    fn get(&self, path: &str, token: Option<&str>) -> (String, String) {
        let mut stream = TcpStream::connect(&self.addr).unwrap();
        let auth = token.map(|t| format!("Authorization: Bearer {t}\r\n")).unwrap_or_default();
        write!(stream, "GET {path} HTTP/1.1\r\nHost: {}\r\n{auth}Connection: close\r\n\r\n", self.addr).unwrap();
        let mut resp = String::new();
        stream.read_to_string(&mut resp).unwrap();
        let (head, body) = resp.split_once("\r\n\r\n").unwrap();
        (head.lines().next().unwrap().to_owned(), body.to_owned())
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[test]
fn run_is_deterministic_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = manifest(dir.path(), 5);
    let out = dir.path().join("out");

    let first: Value = serde_json::from_str(&ok(&["run", "--manifest", p(&manifest), "--out", p(&out), "--seed", "4", "--limit", "3"])).unwrap();
    assert_eq!(first["ingested"], 3);
    assert_eq!(first["failed"], 0);
    assert_eq!(read_json(&out.join("summary.json")), first);

    let again = capfuse(&["run", "--manifest", p(&manifest), "--out", p(&out), "--seed", "4"]);
    assert!(!again.status.success(), "a finished run must not be overwritten without --resume");

    let full: Value = serde_json::from_str(&ok(&["run", "--manifest", p(&manifest), "--out", p(&out), "--seed", "4", "--resume"])).unwrap();
    assert_eq!(full["ingested"], 5);

    // A fresh run over the same clips produces the same bytes.
    let fresh = dir.path().join("fresh");
    ok(&["run", "--manifest", p(&manifest), "--out", p(&fresh), "--seed", "4"]);
    assert_eq!(shard_files(&fresh), shard_files(&out));
    assert_eq!(std::fs::read(fresh.join("clips.jsonl")).unwrap(), std::fs::read(out.join("clips.jsonl")).unwrap());

    // Nothing listens on port 1: every clip fails, outputs are still written.
    let dead = dir.path().join("dead.json");
    std::fs::write(&dead, r#"{"endpoints": {"separator": {"base_url": "http://127.0.0.1:1/separator", "max_retries": 0}}}"#).unwrap();
    let failed_out = dir.path().join("failed");
    let out = capfuse(&["run", "--manifest", p(&manifest), "--config", p(&dead), "--out", p(&failed_out)]);
    assert!(!out.status.success());
    assert_eq!(read_json(&failed_out.join("summary.json"))["failed"], 5);
    assert_eq!(std::fs::read_to_string(failed_out.join("failures.jsonl")).unwrap().lines().count(), 5);

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"filter_threshold": 2}"#).unwrap();
    let out = capfuse(&["run", "--manifest", p(&manifest), "--config", p(&bad), "--out", p(&dir.path().join("x"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("filter_threshold"));
}

#[test]
fn mock_backend_over_http_matches_in_process_run() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = manifest(dir.path(), 4);
    let server = Server::start(&["mock-backend", "--seed", "9"]);

    let roles = ["separator", "asr", "audio_captioner", "music_gate", "music_captioner", "video_captioner", "synthesizer", "embedder"];
    let endpoints: serde_json::Map<String, Value> = roles
        .iter()
        .map(|r| (r.to_string(), json!({"base_url": format!("http://{}/{r}", server.addr)})))
        .collect();
    let config = dir.path().join("http.json");
    std::fs::write(&config, json!({"endpoints": endpoints}).to_string()).unwrap();

    let remote = dir.path().join("remote");
    let local = dir.path().join("local");
    let a = ok(&["run", "--manifest", p(&manifest), "--config", p(&config), "--out", p(&remote)]);
    let b = ok(&["run", "--manifest", p(&manifest), "--out", p(&local), "--seed", "9"]);
    assert_eq!(a, b);
    assert_eq!(shard_files(&remote), shard_files(&local));

    // Stats passes can use the remote synthesizer too.
    let stats = dir.path().join("stats.json");
    ok(&["stats", "--shards", p(&remote.join("shards")), "--out", p(&stats), "--with-modality", "--config", p(&config)]);
    let stats = read_json(&stats);
    assert_eq!(stats["modality"]["failed"], 0);
    let kept = stats["kept"].as_u64().unwrap();
    assert_eq!(stats["modality"]["clips"].as_u64().unwrap(), kept);
}

#[test]
fn stats_summarise_shards() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = manifest(dir.path(), 6);
    let out = dir.path().join("out");
    let summary: Value = serde_json::from_str(&ok(&["run", "--manifest", p(&manifest), "--out", p(&out), "--seed", "2"])).unwrap();

    let path = dir.path().join("stats.json");
    ok(&["stats", "--shards", p(&out.join("shards")), "--out", p(&path), "--with-modality", "--with-semantic", "--length-bins", "4"]);
    let stats = read_json(&path);
    assert_eq!(stats["records"], 6);
    assert_eq!(stats["kept"], summary["kept"]);
    assert_eq!(stats["lengths"]["captions"], summary["kept"]);
    assert_eq!(stats["lengths"]["histogram"]["counts"].as_array().unwrap().len(), 4);
    let score_total: u64 = stats["scores"]["counts"].as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).sum();
    assert_eq!(score_total + stats["scores"]["out_of_range"].as_u64().unwrap(), 6);
    let fraction = stats["modality"]["multimodal_fraction"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&fraction));
    assert_eq!(stats["semantic"]["dropped_terms"], 0);

    let plain = dir.path().join("plain.json");
    ok(&["stats", "--shards", p(&out.join("shards")), "--out", p(&plain)]);
    let plain = read_json(&plain);
    assert!(plain.get("modality").is_none() && plain.get("semantic").is_none());
}

#[test]
fn calibrate_writes_report_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let cosines = [0.01, 0.02, 0.03, 0.5, 0.6, 0.7];
    let scores: Vec<Value> = cosines.iter().enumerate().map(|(i, c)| json!({"clip_id": format!("c{i}"), "cosine": c})).collect();
    let mut labels = Vec::new();
    for i in 0..6 {
        let e = if i < 3 { 1.0 } else { 0.0 };
        for who in ["r1", "r2"] {
            labels.push(json!({
                "clip_id": format!("c{i}"),
                "annotator_id": who,
                "detailness": 2,
                "phrase_errors": [e, e, 0.0],
                "extra_units": ["x"],
            }));
        }
    }
    // Labelled but unscored; left out with a warning.
    labels.push(json!({"clip_id": "c9", "annotator_id": "r1", "detailness": 1, "phrase_errors": [1.0], "extra_units": []}));
    let (s, l, report) = (dir.path().join("s.jsonl"), dir.path().join("l.jsonl"), dir.path().join("report.json"));
    write_jsonl(&s, &scores);
    write_jsonl(&l, &labels);

    let table = ok(&["calibrate", "--scores", p(&s), "--labels", p(&l), "--step", "0.005", "--out", p(&report)]);
    let r = read_json(&report);
    assert_eq!(r["chosen_threshold"], 0.035);
    assert_eq!(r["chosen_f_beta"], 1.0);
    assert_eq!(r["samples"], 6);
    assert_eq!(r["positives"], 3);
    assert_eq!(r["grid"].as_array().unwrap().len(), 241);
    assert!(table.lines().count() > 241, "{table}");
    assert!(table.contains("0.035"));

    let coarse = dir.path().join("coarse.json");
    ok(&["calibrate", "--scores", p(&s), "--labels", p(&l), "--step", "0.1", "--lo", "-0.1", "--hi", "0.9", "--out", p(&coarse)]);
    let coarse = read_json(&coarse);
    assert_eq!(coarse["grid"].as_array().unwrap().len(), 11);
    assert_eq!(coarse["chosen_threshold"], 0.1);

    labels.push(json!({"clip_id": "c0", "annotator_id": "r3", "detailness": 2, "phrase_errors": [0.3], "extra_units": []}));
    write_jsonl(&l, &labels);
    let out = capfuse(&["calibrate", "--scores", p(&s), "--labels", p(&l), "--out", p(&report)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains(":14"), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn distances_report_both_modes() {
    let dir = tempfile::tempdir().unwrap();
    let (e, l) = (dir.path().join("e.jsonl"), dir.path().join("l.jsonl"));
    write_jsonl(
        &e,
        &[
            json!({"id": "m1", "vector": [1.0, 0.0]}),
            json!({"id": "m2", "vector": [3.0, 0.0]}),
            json!({"id": "s1", "vector": [0.0, 2.0]}),
            json!({"id": "s2", "vector": [0.0, 0.5]}),
            json!({"id": "v1", "vector": [1.0, 1.0]}),
        ],
    );
    write_jsonl(
        &l,
        &[
            json!({"clip_id": "m1", "category": "music"}),
            json!({"clip_id": "m2", "category": "music"}),
            json!({"clip_id": "s1", "category": "speech"}),
            json!({"clip_id": "s2", "category": "speech"}),
            json!({"clip_id": "v1", "category": "vehicle"}),
        ],
    );
    for mode in ["pairwise", "centroid"] {
        let r: Value = serde_json::from_str(&ok(&["distances", "--embeddings", p(&e), "--labels", p(&l), "--mode", mode])).unwrap();
        assert_eq!(r["mode"], mode);
        assert_eq!(r["intra"]["music"]["distance"], 0.0);
        assert_eq!(r["intra"]["vehicle"]["distance"], Value::Null);
        let inter = r["inter"].as_array().unwrap();
        let ms = inter.iter().find(|d| d["a"] == "music" && d["b"] == "speech").unwrap();
        assert_eq!(ms["distance"], 1.0);
        assert_eq!(inter.len(), 3);
    }
    let out = capfuse(&["distances", "--embeddings", p(&e), "--labels", p(&l), "--mode", "median"]);
    assert!(!out.status.success());
}

#[test]
fn eval_retrieval_reports_recall() {
    let dir = tempfile::tempdir().unwrap();
    let (q, c, t) = (dir.path().join("q.jsonl"), dir.path().join("c.jsonl"), dir.path().join("t.jsonl"));
    // Query i is closest to candidate i, except q2, whose match ranks second.
    let queries = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.9, 0.0, 0.1]];
    let cands = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    write_jsonl(&q, &queries.iter().enumerate().map(|(i, v)| json!({"id": format!("q{i}"), "vector": v})).collect::<Vec<_>>());
    write_jsonl(&c, &cands.iter().enumerate().map(|(i, v)| json!({"id": format!("a{i}"), "vector": v})).collect::<Vec<_>>());
    write_jsonl(&t, &(0..3).map(|i| json!({"query_id": format!("q{i}"), "positives": [format!("a{i}")]})).collect::<Vec<_>>());

    let r: Value = serde_json::from_str(&ok(&["eval-retrieval", "--queries", p(&q), "--candidates", p(&c), "--truth", p(&t), "--k", "1,2,3"])).unwrap();
    let recalls: Vec<f64> = r["rows"].as_array().unwrap().iter().map(|row| row["recall"].as_f64().unwrap()).collect();
    assert_eq!(recalls.len(), 3);
    assert!((recalls[0] - 200.0 / 3.0).abs() < 1e-12);
    assert_eq!(&recalls[1..], &[100.0, 100.0]);

    let out = dir.path().join("r.json");
    ok(&["eval-retrieval", "--queries", p(&q), "--candidates", p(&c), "--truth", p(&t), "--k", "1", "--both-directions", "--out", p(&out)]);
    let r = read_json(&out);
    let dirs: Vec<&str> = r["rows"].as_array().unwrap().iter().map(|row| row["direction"].as_str().unwrap()).collect();
    assert_eq!(dirs, ["query_to_candidate", "candidate_to_query"]);
}

#[test]
fn serve_imports_tasks_and_answers() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("service.json");
    std::fs::write(
        &config,
        json!({
            "data_dir": "data",
            "admin_tokens": ["root"],
            "annotators": [{"id": "ann1", "token": "t1"}, {"id": "ann2", "token": "t2"}],
        })
        .to_string(),
    )
    .unwrap();
    let tasks = dir.path().join("tasks.json");
    std::fs::write(
        &tasks,
        json!([{
            "task_id": "t-1",
            "clip_id": "c1",
            "caption": "A dog barks.",
            "flagged_phrases": [{"span": [2, 5], "text": "dog"}],
            "audio_url": "/media/c1.wav",
        }])
        .to_string(),
    )
    .unwrap();

    let server = Server::start(&["serve", "--config", p(&config), "--tasks", p(&tasks)]);
    let (status, body) = server.get("/bootstrap", None);
    assert!(status.contains("200"), "{status}");
    assert!(body.contains("annotators_per_task"));
    let (status, _) = server.get("/annotation/tasks", None);
    assert!(status.contains("401"), "{status}");
    let (status, body) = server.get("/annotation/tasks", Some("t2"));
    assert!(status.contains("200"), "{status}");
    assert!(body.contains("\"t-1\""), "{body}");
    assert!(dir.path().join("data").join("annotation").join("tasks.jsonl").exists());
}

#[test]
fn help_lists_every_command() {
    let help = ok(&["--help"]);
    for cmd in ["run", "calibrate", "stats", "distances", "eval-retrieval", "serve", "mock-backend"] {
        assert!(help.contains(cmd), "{cmd} missing from:\n{help}");
    }
    assert!(!capfuse(&["frobnicate"]).status.success());
}
