use std::path::Path;
use std::process::{Command, Output};

fn duet(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_duet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn duet");
    assert!(
        out.status.success(),
        "duet {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn print_config_round_trips_through_file() {
    let dir = tempfile::tempdir().unwrap();
    let text = String::from_utf8(duet(&["--preset", "smoke", "--seed", "9", "print-config"]).stdout).unwrap();
    assert!(text.contains("seed = 9"));
    let path = dir.path().join("c.toml");
    std::fs::write(&path, &text).unwrap();
    let again = String::from_utf8(duet(&["--config", s(&path), "print-config"]).stdout).unwrap();
    assert_eq!(text, again);
}

#[test]
fn unknown_preset_is_an_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_duet"))
        .args(["--preset", "nope", "print-config"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown preset"));
}

#[test]
fn smoke_run_then_file_commands() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let table = String::from_utf8(duet(&["--preset", "smoke", "run", "--out", s(&run)]).stdout).unwrap();
    for row in ["ground truth", "raw", "refined", "FID_cd", "BAS"] {
        assert!(table.contains(row), "missing {row} in\n{table}");
    }
    assert!(run.join("manifest.json").is_file());
    assert!(run.join("report.csv").is_file() || run.join("eval/final.json").is_file());

    let raw_dir = run.join("gen/raw");
    let id = std::fs::read_dir(&raw_dir).unwrap().next().unwrap().unwrap().file_name();
    let leader = run.join("data").join(&id);
    let generated = raw_dir.join(&id);
    let out = dir.path().join("refined.duet");
    duet(&["refine", "--in", s(&run), "--duet", s(&leader), "--follower", s(&generated), "--out", s(&out)]);
    let first = std::fs::read(&out).unwrap();
    assert!(!first.is_empty());
    // same seed, same bytes
    duet(&["refine", "--in", s(&run), "--duet", s(&leader), "--follower", s(&generated), "--out", s(&out)]);
    assert_eq!(first, std::fs::read(&out).unwrap());

    let captions = String::from_utf8(duet(&["describe", "--in", s(&out)]).stdout).unwrap();
    assert!(captions.lines().any(|l| l.starts_with("leader\t0\t")));
    assert!(captions.lines().any(|l| l.starts_with("follower\t0\t")));

    let report = String::from_utf8(duet(&["report", "--out", s(&run)]).stdout).unwrap();
    assert_eq!(report, table);
}

#[test]
fn file_mode_needs_a_model() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("x.duet");
    let out = Command::new(env!("CARGO_BIN_EXE_duet"))
        .args(["refine", "--duet", s(&f), "--follower", s(&f), "--out", s(&f)])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
