use std::path::Path;
use std::process::{Command, Output};

fn salite(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_salite")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn synth_train_resume_eval_infer() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = salite(&["synth", "--out", s(&data), "--set", "seed=5", "--set", "count=4", "--set", "size=48"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = data.join("manifest.tsv");
    assert!(manifest.exists());

    let run = dir.path().join("run");
    let small = ["--set", "model.input_size=32", "--set", "trainer.batch=2", "--set", "trainer.checkpoint_every=2"];
    let mut args = vec!["train", "--manifest", s(&manifest), "--out", s(&run), "--set", "trainer.max_steps=2"];
    args.extend(small);
    let o = salite(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(run.join("step-000002.salt").exists());

    let final_ck = run.join("final.salt");
    let o = salite(&[
        "train",
        "--manifest",
        s(&manifest),
        "--out",
        s(&run),
        "--resume",
        s(&final_ck),
        "--set",
        "trainer.max_steps=3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log = std::fs::read_to_string(run.join("train.log")).unwrap();
    let steps: Vec<&str> = log.lines().map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(steps, ["1", "2", "3"]);

    let report = dir.path().join("report.tsv");
    let o = salite(&["eval", "--manifest", s(&manifest), "--checkpoint", s(&final_ck), "--report", s(&report), "--threads", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("F-Score\tMAE"));
    let text = std::fs::read_to_string(&report).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("000")).count(), 4);

    let map = dir.path().join("map.pgm");
    let o = salite(&["infer", "--checkpoint", s(&final_ck), "--image", s(&data.join("images/0000.ppm")), "--out", s(&map)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(std::fs::read(&map).unwrap().starts_with(b"P5\n32 32\n255\n"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(salite(&["train"]).status.code(), Some(1));
    assert_eq!(salite(&["params", "--spec", "desk"]).status.code(), Some(0));

    let missing = dir.path().join("nope.tsv");
    let o = salite(&["train", "--manifest", s(&missing), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));

    let bad = dir.path().join("bad.salt");
    std::fs::write(&bad, b"not a checkpoint").unwrap();
    let o = salite(&["infer", "--checkpoint", s(&bad), "--image", s(&bad), "--out", s(&dir.path().join("x.pgm"))]);
    assert_eq!(o.status.code(), Some(2));

    let o = salite(&["train", "--manifest", s(&missing), "--out", s(dir.path()), "--set", "trainer.batch=0"]);
    assert_eq!(o.status.code(), Some(1));
}
