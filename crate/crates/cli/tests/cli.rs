use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use image::{GrayImage, Luma, Rgb, RgbImage};
use serde_json::Value;
use sha2::{Digest, Sha256};
use somtom::evalkit::{render_scene, texture_value, write_annotations, Camera, SceneObject, Shape, SyntheticScene};
use somtom::tracking::write_traces;
use somtom::{ImageDims, Point2, Trace};

fn somtom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_somtom"))
        .args(args)
        .env_remove("SOMTOM_SEED")
        .env_remove("SOMTOM_WORKERS")
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_slice(&fs::read(p).unwrap()).unwrap()
}

fn jsonl_lines(p: &Path) -> Vec<Value> {
    fs::read_to_string(p)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// Relative path to bytes for every file under `root`.
fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn write_lines(p: &Path, lines: &[String]) {
    fs::write(p, lines.join("\n") + "\n").unwrap();
}

// ---------------------------------------------------------------- som-ui

fn ui_corpus(dir: &Path, n: usize, missing_boxes: usize) -> PathBuf {
    let mut lines = Vec::new();
    for i in 0..n {
        let img = RgbImage::from_fn(48, 40, |x, y| Rgb([(x * 5) as u8, (y * 6) as u8, (i % 256) as u8]));
        img.save(dir.join(format!("ui{i}.png"))).unwrap();
        if i >= missing_boxes {
            fs::write(
                dir.join(format!("ui{i}.json")),
                "[[0.1, 0.1, 0.3, 0.2], [0.5, 0.5, 0.4, 0.4]]",
            )
            .unwrap();
        }
        lines.push(format!(
            r#"{{"type":"ui-image","id":"ui{i}","image":"ui{i}.png","boxes":"ui{i}.json","actions":[{{"kind":"click","mark":2}},{{"kind":"type","mark":1,"text":"hello"}}]}}"#
        ));
    }
    let m = dir.join("ui.jsonl");
    write_lines(&m, &lines);
    m
}

#[test]
fn som_ui_marks_every_valid_record() {
    let dir = tempfile::tempdir().unwrap();
    let m = ui_corpus(dir.path(), 3, 0);
    let out = dir.path().join("out");
    let o = somtom(&["som-ui", s(&m), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let man = read_json(&out.join("manifest.json"));
    let recs = man["records"].as_array().unwrap();
    assert_eq!(recs.len(), 3);
    for r in recs {
        assert_eq!(r["status"], "done");
        let files = r["files"].as_object().unwrap();
        assert!(files.contains_key("marked.png") && files.contains_key("marks.json"));
    }
    let pngs = tree(&out.join("records"))
        .keys()
        .filter(|p| p.ends_with("marked.png"))
        .count();
    assert_eq!(pngs, 3);
    let tokens = jsonl_lines(&out.join("tokens.jsonl"));
    assert_eq!(tokens.len(), 6);
    assert_eq!(tokens[0]["kind"], "grounding");
    assert!(tokens[0]["text"].as_str().unwrap().starts_with("click : mark 2"));
    assert_eq!(read_json(&out.join("report.json"))["summary"]["marked"], 3);
}

#[test]
fn failure_budget_boundary() {
    let dir = tempfile::tempdir().unwrap();
    let m = ui_corpus(dir.path(), 100, 1);
    let out = dir.path().join("out1");
    let o = somtom(&["som-ui", s(&m), "--out", s(&out), "--workers", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["summary"]["marked"], 99);
    assert_eq!(report["summary"]["failed"], 1);
    let failed = &read_json(&out.join("manifest.json"))["records"][0];
    assert_eq!(failed["status"], "failed");
    assert!(failed["detail"].as_str().unwrap().contains("ui0.json"));

    let five = dir.path().join("five");
    fs::create_dir_all(&five).unwrap();
    let m = ui_corpus(&five, 100, 5);
    let out = dir.path().join("out5");
    let o = somtom(&["som-ui", s(&m), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("5 of 100 records failed"));
    // a looser budget lets the same run pass
    let o = somtom(&["som-ui", s(&m), "--out", s(&out), "--fail-budget", "0.05"]);
    assert!(o.status.success());
}

#[test]
fn resume_skips_valid_records_and_redoes_damaged_ones() {
    let dir = tempfile::tempdir().unwrap();
    let m = ui_corpus(dir.path(), 4, 0);
    let out = dir.path().join("out");
    assert!(somtom(&["som-ui", s(&m), "--out", s(&out)]).status.success());
    let before = tree(&out);

    let marked = before
        .keys()
        .find(|p| p.ends_with("marked.png"))
        .unwrap()
        .clone();
    let victim = out.join(&marked);
    fs::write(&victim, b"corrupt").unwrap();
    let side = victim.with_file_name("done.json");
    let side_mtime = fs::metadata(&side).unwrap().modified().unwrap();
    let untouched = before
        .keys()
        .filter(|p| p.ends_with("done.json") && p.parent() != marked.parent())
        .map(|p| (out.join(p), fs::metadata(out.join(p)).unwrap().modified().unwrap()))
        .collect::<Vec<_>>();
    std::thread::sleep(std::time::Duration::from_millis(20));

    assert!(somtom(&["som-ui", s(&m), "--out", s(&out)]).status.success());
    assert_eq!(tree(&out), before);
    assert_ne!(fs::metadata(&side).unwrap().modified().unwrap(), side_mtime);
    for (p, t) in untouched {
        assert_eq!(fs::metadata(&p).unwrap().modified().unwrap(), t, "{} rewritten", p.display());
    }
}

#[test]
fn config_hash_matches_embedded_config_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let m = ui_corpus(dir.path(), 1, 0);
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"seed": 3, "tom": {"epsilon": 3.0}}"#).unwrap();
    let out = dir.path().join("out");
    assert!(somtom(&["som-ui", s(&m), "--config", s(&cfg), "--out", s(&out)]).status.success());
    let man = read_json(&out.join("manifest.json"));
    let mut embedded = man["config"].clone();
    assert_eq!(embedded["seed"], 3);
    assert_eq!(embedded["tom"]["epsilon"], 3.0);
    assert_eq!(embedded["stage"], "som-ui");
    let obj = embedded.as_object_mut().unwrap();
    obj.remove("workers");
    obj.remove("out");
    let hash = hex::encode(Sha256::digest(serde_json::to_vec(&embedded).unwrap()));
    assert_eq!(man["config_hash"], hash.as_str());
    assert_eq!(read_json(&out.join("report.json"))["config_hash"], hash.as_str());

    // environment and flag overrides land in the config
    let out2 = dir.path().join("out2");
    let o = Command::new(env!("CARGO_BIN_EXE_somtom"))
        .args(["som-ui", s(&m), "--config", s(&cfg), "--out", s(&out2)])
        .env("SOMTOM_SEED", "11")
        .env("SOMTOM_WORKERS", "2")
        .output()
        .unwrap();
    assert!(o.status.success());
    let man2 = read_json(&out2.join("manifest.json"));
    assert_eq!(man2["config"]["seed"], 11);
    assert_ne!(man2["config_hash"], man["config_hash"]);
    let out3 = dir.path().join("out3");
    assert!(somtom(&["som-ui", s(&m), "--config", s(&cfg), "--out", s(&out3), "--seed", "11"])
        .status
        .success());
    assert_eq!(read_json(&out3.join("manifest.json"))["config_hash"], man2["config_hash"]);
}

// ---------------------------------------------------------------- segment

fn texture_video(dir: &Path, name: &str, shots: &[(u64, usize)]) -> PathBuf {
    let v = dir.join(name);
    fs::create_dir_all(&v).unwrap();
    let mut f = 0;
    for &(seed, len) in shots {
        for _ in 0..len {
            let drift = f as f64 * 0.7;
            GrayImage::from_fn(96, 72, |x, y| {
                Luma([(texture_value(seed, x as f64 + drift, y as f64) * 255.0) as u8])
            })
            .save(v.join(format!("{f:04}.png")))
            .unwrap();
            f += 1;
        }
    }
    v
}

#[test]
fn segment_splits_on_cuts_and_filters_by_score() {
    let dir = tempfile::tempdir().unwrap();
    texture_video(dir.path(), "calm", &[(1, 20)]);
    texture_video(dir.path(), "cut", &[(2, 15), (99, 18)]);
    let m = dir.path().join("videos.jsonl");
    write_lines(
        &m,
        &[
            r#"{"type":"video-clip","id":"calm","frames":"calm"}"#.into(),
            r#"{"type":"video-clip","id":"cut","frames":"cut","segments":[{"start":0,"end":33,"text":"pour water"}]}"#
                .into(),
        ],
    );
    let out = dir.path().join("out");
    let o = somtom(&["segment", s(&m), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let clips = jsonl_lines(&out.join("clips.jsonl"));
    let ids: Vec<&str> = clips.iter().map(|c| c["clip"].as_str().unwrap()).collect();
    assert_eq!(ids, ["calm:0-20", "cut:0-15", "cut:15-33"]);
    assert_eq!(clips[1]["text"], "pour water");
    assert!(clips[0]["frames"].as_str().unwrap().ends_with("calm"));

    let scores = dir.path().join("scores.csv");
    fs::write(&scores, "clip,score\ncalm:0-20,0.3\ncut:0-15,0.1\ncut:15-33,0.25\n").unwrap();
    let out = dir.path().join("filtered");
    let o = somtom(&["segment", s(&m), "--out", s(&out), "--scores", s(&scores)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ids: Vec<String> = jsonl_lines(&out.join("clips.jsonl"))
        .iter()
        .map(|c| c["clip"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(ids, ["calm:0-20", "cut:15-33"]);

    fs::write(&scores, "calm:0-20,0.1\ncut:0-15,0.1\ncut:15-33,0.2\n").unwrap();
    let out = dir.path().join("empty");
    let o = Command::new(env!("CARGO_BIN_EXE_somtom"))
        .args(["segment", s(&m), "--out", s(&out), "--scores", s(&scores)])
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(jsonl_lines(&out.join("clips.jsonl")).is_empty());
    assert!(stderr(&o).contains("similarity threshold"), "{}", stderr(&o));

    let o = somtom(&["segment", s(&m), "--out", s(&out), "--scores", s(&dir.path().join("nope.csv"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("configuration error"), "{}", stderr(&o));
}

// ---------------------------------------------------------------- tom

fn scene(seed: u64, velocity: [f64; 2]) -> SyntheticScene {
    SyntheticScene {
        canvas: ImageDims::new(128, 128),
        objects: vec![SceneObject {
            id: "box".into(),
            shape: Shape::Rect,
            size: [40.0, 40.0],
            texture_seed: seed + 100,
            start: [30.0, 40.0],
            velocity,
        }],
        camera: Camera::default(),
        frames: 12,
        fps: 30.0,
        grid_size: 15,
        background_seed: seed,
    }
}

fn clip_corpus(dir: &Path, scenes: &[SyntheticScene]) -> PathBuf {
    let mut lines = Vec::new();
    for (i, sc) in scenes.iter().enumerate() {
        let r = render_scene(sc).unwrap();
        let fdir = dir.join(format!("clip{i}"));
        fs::create_dir_all(&fdir).unwrap();
        for (f, img) in r.seq.frames().iter().enumerate() {
            img.save(fdir.join(format!("{f:03}.png"))).unwrap();
        }
        lines.push(format!(
            r#"{{"clip":"clip{i}:0-{n}","segment":"clip{i}:0-{n}","video":"clip{i}","start":0,"end":{n},"text":"move the box","shot_scores":[],"frames":"clip{i}","fps":30.0}}"#,
            n = sc.frames
        ));
    }
    let m = dir.join("clips.jsonl");
    write_lines(&m, &lines);
    m
}

#[test]
fn tom_on_moving_corpus_is_deterministic_across_workers() {
    let dir = tempfile::tempdir().unwrap();
    let scenes: Vec<_> = (0..10).map(|i| scene(i, [2.0 + i as f64 * 0.2, 1.0])).collect();
    let m = clip_corpus(dir.path(), &scenes);
    let run = |name: &str, workers: &str| {
        let out = dir.path().join(name);
        let o = somtom(&["tom", s(&m), "--out", s(&out), "--seed", "42", "--workers", workers]);
        assert!(o.status.success(), "{}", stderr(&o));
        out
    };
    let a = run("a", "1");
    let b = run("b", "4");
    let report = read_json(&a.join("report.json"))["summary"].clone();
    assert_eq!(report["records"], 10, "{report}");
    assert_eq!(report["supervision_yield"], 1.0);
    let tokens = jsonl_lines(&a.join("tokens.jsonl"));
    assert_eq!(tokens.len(), 10);
    assert!(tokens[0]["text"].as_str().unwrap().starts_with("move the box : marks {1"));
    assert_eq!(tree(&a), tree(&b));

    let c = dir.path().join("c");
    assert!(somtom(&["tom", s(&m), "--out", s(&c), "--seed", "43"]).status.success());
    assert_ne!(
        read_json(&a.join("manifest.json"))["config_hash"],
        read_json(&c.join("manifest.json"))["config_hash"]
    );
}

#[test]
fn tom_static_and_mixed_corpora() {
    let dir = tempfile::tempdir().unwrap();
    let scenes: Vec<_> = (0..3).map(|i| scene(i, [0.0, 0.0])).collect();
    let m = clip_corpus(dir.path(), &scenes);
    let out = dir.path().join("static");
    let o = somtom(&["tom", s(&m), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let sum = read_json(&out.join("report.json"))["summary"].clone();
    assert_eq!(sum["records"], 0);
    assert_eq!(sum["skipped_no_foreground"], 3);
    assert_eq!(sum["supervision_yield"], 0.0);
    assert!(stdout(&o).contains("0.0% yield"));
    assert!(fs::read(out.join("tokens.jsonl")).unwrap().is_empty());

    let mixed_dir = dir.path().join("mixed");
    fs::create_dir_all(&mixed_dir).unwrap();
    let mixed = [scene(5, [0.0, 0.0]), scene(6, [3.0, 0.0]), scene(7, [0.0, 0.0]), scene(8, [0.0, -2.5])];
    let m = clip_corpus(&mixed_dir, &mixed);
    let out = dir.path().join("mixed_out");
    assert!(somtom(&["tom", s(&m), "--out", s(&out)]).status.success());
    let man = read_json(&out.join("manifest.json"));
    let statuses: Vec<&str> = man["records"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["status"].as_str().unwrap())
        .collect();
    assert_eq!(statuses, ["skipped", "done", "skipped", "done"]);
    assert_eq!(jsonl_lines(&out.join("tokens.jsonl")).len(), 2);
}

#[test]
fn tom_uses_precomputed_traces_when_given() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scene(3, [3.0, 0.0]);
    let m = clip_corpus(dir.path(), std::slice::from_ref(&sc));
    let gt = render_scene(&sc).unwrap().ground_truth.traces;
    let mut f = fs::File::create(dir.path().join("gt.jsonl")).unwrap();
    write_traces(&mut f, &gt).unwrap();
    let line = fs::read_to_string(&m).unwrap().trim().replace("}", r#","traces":"gt.jsonl"}"#);
    fs::write(&m, line + "\n").unwrap();
    let out = dir.path().join("out");
    let o = somtom(&["tom", s(&m), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rec = &read_json(&out.join("manifest.json"))["records"][0];
    assert_eq!(rec["status"], "done", "{rec}");
    let dir_name = out.join("records");
    let tom_json = fs::read_dir(&dir_name).unwrap().next().unwrap().unwrap().path().join("tom.json");
    let res = read_json(&tom_json);
    // exact traces: every foreground trace starts on the moving box
    for t in res["fg_traces"].as_array().unwrap() {
        let p = &t["points"][0];
        let (x, y) = (p[0].as_f64().unwrap() * 128.0, p[1].as_f64().unwrap() * 128.0);
        assert!((30.0..=70.0).contains(&x) && (40.0..=80.0).contains(&y), "({x}, {y})");
    }
}

// ---------------------------------------------------------------- encode-robot

fn trajectory(dir: &Path, name: &str, n: usize, cols: usize) -> String {
    let rows: Vec<String> = (0..n)
        .map(|i| {
            (0..cols)
                .map(|d| format!("{:.6}", ((i * 7 + d * 13) % 97) as f64 / 97.0 - 0.5 + d as f64))
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect();
    write_lines(&dir.join(name), &rows);
    format!(r#"{{"type":"robot-trajectory","id":"{name}","path":"{name}"}}"#)
}

#[test]
fn encode_robot_ids_in_reserved_range_and_reuses_stats() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("robot.jsonl");
    write_lines(&m, &[trajectory(dir.path(), "t1.csv", 600, 7), trajectory(dir.path(), "t2.csv", 400, 7)]);
    let out = dir.path().join("out");
    let o = somtom(&["encode-robot", s(&m), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let recs = jsonl_lines(&out.join("tokens.jsonl"));
    assert_eq!(recs.len(), 1000);
    for r in &recs {
        let ids = r["ids"].as_array().unwrap();
        assert_eq!(ids.len(), 7);
        assert!(ids.iter().all(|v| (31744..32000).contains(&v.as_u64().unwrap())), "{r}");
    }
    assert_eq!(recs[600]["id"], "t2.csv");
    assert_eq!(recs[600]["step"], 0);

    let stats = out.join("action_stats.json");
    let again = dir.path().join("again");
    let o = somtom(&["encode-robot", s(&m), "--out", s(&again), "--stats", s(&stats), "--workers", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(out.join("tokens.jsonl")).unwrap(), fs::read(again.join("tokens.jsonl")).unwrap());
    assert_eq!(read_json(&again.join("report.json"))["summary"]["stats_source"], "provided");

    let bad = dir.path().join("bad.jsonl");
    write_lines(&bad, &[trajectory(dir.path(), "six.csv", 10, 6)]);
    let o = somtom(&["encode-robot", s(&bad), "--out", s(&dir.path().join("bad"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("expected 7 values"), "{}", stderr(&o));
}

// ---------------------------------------------------------------- eval-traces

fn eval_fixture(dir: &Path, corrupt: bool) -> (PathBuf, PathBuf) {
    let sc = SyntheticScene {
        frames: 40,
        ..scene(9, [1.0, 0.5])
    };
    let r = render_scene(&sc).unwrap();
    let horizon = 30;
    let mut traces: Vec<Trace> = r.ground_truth.traces.clone();
    if corrupt {
        let mut flip = false;
        for (t, owner) in traces.iter_mut().zip(&r.ground_truth.seed_objects) {
            if owner.is_some() {
                if flip {
                    let mut pts = t.points().to_vec();
                    pts[horizon] = Point2::new(0.95, 0.05).unwrap();
                    *t = t.with_points(pts).unwrap();
                }
                flip = !flip;
            }
        }
    }
    let tp = dir.join(if corrupt { "bad_traces.jsonl" } else { "traces.jsonl" });
    write_traces(fs::File::create(&tp).unwrap(), &traces).unwrap();
    let ap = dir.join("ann.jsonl");
    write_annotations(fs::File::create(&ap).unwrap(), &r.annotations).unwrap();
    (tp, ap)
}

#[test]
fn eval_traces_reports_precision_and_rejects_empty_annotations() {
    let dir = tempfile::tempdir().unwrap();
    let (gt, ann) = eval_fixture(dir.path(), false);
    let out = dir.path().join("out");
    let o = somtom(&["eval-traces", "--traces", s(&gt), "--annotations", s(&ann), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rep = read_json(&out.join("precision.json"));
    assert_eq!(rep["precision"], 1.0);
    assert_eq!(rep["horizon_frames"], 30);
    assert!(rep.get("per_clip").is_none());

    let (bad, _) = eval_fixture(dir.path(), true);
    let o = somtom(&[
        "eval-traces", "--traces", s(&gt), "--annotations", s(&ann), "--traces", s(&bad), "--annotations",
        s(&ann), "--out", s(&out), "--per-clip",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rep = read_json(&out.join("precision.json"));
    let rows = rep["per_clip"].as_array().unwrap();
    assert_eq!(rows[0]["precision"], 1.0);
    let half = rows[1]["precision"].as_f64().unwrap();
    assert!((half - 0.5).abs() < 0.02, "{half}");

    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let o = somtom(&["eval-traces", "--traces", s(&gt), "--annotations", s(&empty), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("metric undefined"), "{}", stderr(&o));
}

// ---------------------------------------------------------------- validate

#[test]
fn validate_reports_missing_paths_and_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let m = ui_corpus(dir.path(), 3, 1);
    let o = somtom(&["validate", s(&m)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("ui0: missing"), "{}", stderr(&o));

    let m = ui_corpus(dir.path(), 3, 0);
    let o = somtom(&["validate", s(&m)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("3 records ok"));

    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"fail_budget": 2.0}"#).unwrap();
    let o = somtom(&["validate", s(&m), "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    fs::write(&cfg, r#"{"unknown_key": 1}"#).unwrap();
    assert_eq!(somtom(&["validate", s(&m), "--config", s(&cfg)]).status.code(), Some(2));

    let clips = clip_corpus(dir.path(), &[scene(1, [1.0, 0.0])]);
    let o = somtom(&["validate", s(&clips)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("1 clips ok"));
}
