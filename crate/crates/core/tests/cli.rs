use std::path::Path;
use std::process::{Command, Output};

use diffreason::dataset::write_scenes;
use diffreason::diagnostics::{read_csv, COLUMNS};
use diffreason::fol::parse_kb;
use diffreason::grounding::Scene;
use diffreason::model::{encode_degree_table, Params};
use diffreason::train::TrainConfig;

const FURNITURE: &str = "data/furniture.kb";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diffreason"))
        .args(args)
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .env_remove("DR_THREADS")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn validate_bundled_rules_is_silent() {
    let o = run(&["validate", "--kb", FURNITURE]);
    assert_eq!(code(&o), 0);
    assert!(o.stdout.is_empty());
}

#[test]
fn usage_and_input_errors() {
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["validate"])), 1);
    assert_eq!(code(&run(&["validate", "--kb", FURNITURE, "--bogus"])), 1);
    assert_eq!(code(&run(&["--threads", "0", "validate", "--kb", FURNITURE])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);

    let o = run(&["validate", "--kb", "no/such/file.kb"]);
    assert_eq!(code(&o), 2);
    assert!(!o.stderr.is_empty());

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.kb");
    std::fs::write(&bad, "pred p/1;\nforall x: q(x)\n").unwrap();
    let o = run(&["validate", "--kb", p(&bad)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains(":2:"), "{}", String::from_utf8_lossy(&o.stderr));
}

const EXAMPLE_KB: &str = "pred chair/1 @types; pred cushion/1 @types; pred armRest/1 @types; pred partOf/2;\n\
                          forall x,y: chair(x) & partOf(y,x) -> cushion(y) | armRest(y)\n";
const EXAMPLE_DEGREES: [f64; 10] = [0.9, 0.4, 0.05, 0.5, 0.05, 0.1, 0.001, 0.01, 0.95, 0.001];

#[test]
fn eval_reproduces_the_example_degree() {
    let dir = tempfile::tempdir().unwrap();
    let kb_path = dir.path().join("example.kb");
    std::fs::write(&kb_path, EXAMPLE_KB).unwrap();
    let kb = parse_kb(EXAMPLE_KB).unwrap();
    let (params, objects) = encode_degree_table(&kb.signature, 2, &EXAMPLE_DEGREES).unwrap();
    let ck = dir.path().join("ck.bin");
    params.write_checkpoint(&ck).unwrap();
    let scenes = dir.path().join("scenes.jsonl");
    write_scenes(&scenes, objects[0].len(), &[Scene::new("ab", objects)], &kb.signature).unwrap();

    let o = run(&[
        "eval", "--kb", p(&kb_path), "--checkpoint", p(&ck), "--data", p(&scenes), "--binding", "x=0,y=1",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("scene\tformula\tdegree\tbindings\tloss"));
    let row: Vec<&str> = lines.next().unwrap().split('\t').collect();
    assert_eq!(&row[..2], ["ab", "0"]);
    assert!((row[2].parse::<f64>().unwrap() - 0.61525).abs() < 1e-5);
    assert_eq!(row[3], "4");
    assert!((row[4].parse::<f64>().unwrap() - 0.49034).abs() < 1e-5);

    let o = run(&["eval", "--kb", p(&kb_path), "--checkpoint", p(&ck), "--data", p(&scenes)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).lines().nth(1).unwrap().contains("\t-\t"));
    let o = run(&[
        "eval", "--kb", p(&kb_path), "--checkpoint", p(&ck), "--data", p(&scenes), "--binding", "x=0,y=9",
    ]);
    assert_eq!(code(&o), 2);
    // A checkpoint for another signature is rejected.
    let o = run(&["eval", "--kb", FURNITURE, "--checkpoint", p(&ck), "--data", p(&scenes)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn oracle_check_reports_exactness() {
    let dir = tempfile::tempdir().unwrap();
    let text = "pred a/1; pred b/1; pred c/1; pred d/1; forall x: a(x) & b(x) -> c(x) | d(x)\n";
    let kb_path = dir.path().join("k.kb");
    std::fs::write(&kb_path, text).unwrap();
    let kb = parse_kb(text).unwrap();
    let (params, objects) = encode_degree_table(&kb.signature, 1, &[0.9, 0.95, 0.5, 0.1]).unwrap();
    let ck = dir.path().join("ck.bin");
    params.write_checkpoint(&ck).unwrap();
    let scenes = dir.path().join("s.jsonl");
    write_scenes(&scenes, objects[0].len(), &[Scene::new("one", objects)], &kb.signature).unwrap();
    let o = run(&["oracle-check", "--kb", p(&kb_path), "--checkpoint", p(&ck), "--data", p(&scenes)]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["scene_id"], "one");
    assert_eq!(v["assumptions_hold"], true);
    assert!((v["exact"].as_f64().unwrap() - 0.61525).abs() < 1e-12);
}

#[test]
fn synth_train_diagnose_pipeline_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let synth_cfg = dir.path().join("synth.cfg");
    std::fs::write(
        &synth_cfg,
        "n_labeled_scenes = 2\nn_unlabeled_scenes = 3\nn_test_scenes = 2\nobjects_per_scene = 2-4\nseed = 5\n",
    )
    .unwrap();
    let data = dir.path().join("data");
    let o = run(&["--quiet", "synth", "--config", p(&synth_cfg), "--out", p(&data)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());

    let train_cfg = dir.path().join("train.cfg");
    std::fs::write(&train_cfg, "iterations = 6\nlog_every = 2\nbatch_size_labeled = 8\nbatch_size_unlabeled = 8\nseed = 3\n").unwrap();
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = run(&[
            "train", "--kb", FURNITURE, "--data", p(&data), "--config", p(&train_cfg), "--out", p(&out),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        // progress rows go to stderr, one per record
        assert_eq!(String::from_utf8_lossy(&o.stderr).lines().count(), 4);
        outputs.push((std::fs::read(out.join("metrics.csv")).unwrap(), std::fs::read(out.join("checkpoint.bin")).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    let cfg = TrainConfig::read(&dir.path().join("a/config.cfg")).unwrap();
    assert_eq!(cfg.seed, 3);
    assert_eq!(cfg.iterations, 6);
    let records = read_csv(&dir.path().join("a/metrics.csv")).unwrap();
    assert_eq!(records.iter().map(|r| r.iteration).collect::<Vec<_>>(), vec![0, 2, 4, 6]);

    let ck = dir.path().join("a/checkpoint.bin");
    assert!(Params::read_checkpoint(&ck).is_ok());
    let diag = dir.path().join("diag.csv");
    let o = run(&[
        "diagnose", "--kb", FURNITURE, "--checkpoint", p(&ck), "--data", p(&data), "--out", p(&diag), "--iteration", "6",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o), std::fs::read_to_string(&diag).unwrap());
    assert!(stdout(&o).starts_with(&COLUMNS.join(",")));
    let d = read_csv(&diag).unwrap();
    assert_eq!(d.len(), 1);
    assert_eq!(d[0], *records.last().unwrap());

    let quiet = dir.path().join("q");
    let o = run(&[
        "--quiet", "train", "--kb", FURNITURE, "--data", p(&data), "--config", p(&train_cfg), "--out", p(&quiet),
    ]);
    assert_eq!(code(&o), 0);
    assert!(o.stdout.is_empty() && o.stderr.is_empty());

    let bad_cfg = dir.path().join("bad.cfg");
    std::fs::write(&bad_cfg, "learning_rate = -1\n").unwrap();
    let o = run(&["train", "--kb", FURNITURE, "--data", p(&data), "--config", p(&bad_cfg), "--out", p(&quiet)]);
    assert_eq!(code(&o), 2);
}
