use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ecgwave(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ecgwave"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(ecgwave(&["--help"]).status.code(), Some(0));
    assert_eq!(ecgwave(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(ecgwave(&["train", "--epochs", "many"]).status.code(), Some(1));
    assert_eq!(ecgwave(&["--threads", "0", "synth"]).status.code(), Some(1));
}

#[test]
fn bad_config_is_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[train]\nlr = -3.0\n").unwrap();
    let o = ecgwave(&["--config", p(&cfg), "train"]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    fs::write(&cfg, "no_such_key = true\n").unwrap();
    assert_eq!(ecgwave(&["--config", p(&cfg), "train"]).status.code(), Some(1));
    // no manifest anywhere
    fs::write(&cfg, "seed = 3\n").unwrap();
    assert_eq!(ecgwave(&["--config", p(&cfg), "train"]).status.code(), Some(1));
}

#[test]
fn missing_data_is_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let o = ecgwave(&["--out", p(dir.path()), "preprocess", p(&missing)]);
    assert_eq!(o.status.code(), Some(2));
    let blank = dir.path().join("imgs");
    fs::create_dir_all(&blank).unwrap();
    fs::write(blank.join("a.pgm"), b"P5\n4 4\n255\n\xff\xff\xff\xff\xff\xff\xff\xff\xff\xff\xff\xff\xff\xff\xff\xff")
        .unwrap();
    let o = ecgwave(&["--out", p(&dir.path().join("d")), "digitize", p(&blank)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn preprocess_and_cwt_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("r.csv");
    let text: String = (0..1500)
        .map(|i| format!("{}\n", (i as f64 * 0.05).sin() + if i % 250 == 0 { 3.0 } else { 0.0 }))
        .collect();
    fs::write(&rec, text).unwrap();
    let out = dir.path().join("out");
    let o = ecgwave(&["--out", p(&out), "preprocess", p(&rec)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let std_lines = fs::read_to_string(out.join("r.std.csv")).unwrap().lines().count();
    assert_eq!(std_lines, 3000);

    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[cwt]\nheight = 32\nwidth = 48\n").unwrap();
    let o = ecgwave(&["--config", p(&cfg), "--out", p(&out), "cwt", p(&rec)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let pgm = fs::read(out.join("r.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n48 32\n255\n"));
    let bin = fs::read(out.join("r.scalogram")).unwrap();
    assert_eq!(bin.len(), 8 + 4 * 32 * 48);
}

#[test]
fn synth_train_evaluate_predict() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = ecgwave(&[
        "--seed", "5", "--out", p(&data), "synth", "--normal-train", "21", "--af-train", "3",
        "--normal-test", "5", "--af-test", "3", "--duration", "5",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = data.join("manifest.csv");
    assert_eq!(fs::read_to_string(&manifest).unwrap().lines().count(), 33);

    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "[data]\ntarget_fs = 100.0\nlength = 500\n[cwt]\nscales = 16\nheight = 16\nwidth = 16\n\
         [train]\nepochs = 2\nbatch_size = 8\nwidths = [2, 2, 4, 4]\n",
    )
    .unwrap();
    let run = dir.path().join("run");
    let o = ecgwave(&[
        "--config", p(&cfg), "--out", p(&run), "train", "--manifest", p(&manifest), "--branches", "auto",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("test AUROC"));
    let snapshot = fs::read_to_string(run.join("resolved_config.toml")).unwrap();
    assert!(snapshot.contains("branches = 7"), "{snapshot}");
    assert!(run.join("loss.csv").exists());

    let ckpt = run.join("model.ckpt");
    let o = ecgwave(&["evaluate", p(&ckpt)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = fs::read_to_string(run.join("eval/report.json")).unwrap();
    assert!(report.contains("\"auroc\""));
    let scores = fs::read_to_string(run.join("eval/scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 1 + 8);

    let rec = data.join("records/at0000.csv");
    let a = ecgwave(&["predict", p(&ckpt), p(&rec)]);
    let b = ecgwave(&["predict", p(&ckpt), p(&rec)]);
    assert!(a.status.success());
    assert_eq!(stdout(&a), stdout(&b));
    let fields: Vec<String> = stdout(&a).trim().split('\t').map(str::to_string).collect();
    assert_eq!(fields[0], "at0000");
    let prob: f64 = fields[1].parse().unwrap();
    assert!((0.0..=1.0).contains(&prob));
    let line = scores.lines().find(|l| l.starts_with("at0000,")).unwrap();
    let score: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
    assert!((score - prob).abs() < 1e-6);

    let o = ecgwave(&["predict", p(&data.join("manifest.csv")), p(&rec)]);
    assert_eq!(o.status.code(), Some(2));
}
