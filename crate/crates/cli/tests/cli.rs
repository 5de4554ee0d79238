use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn corpus(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus").join(name)
}

/// Copies corpus files into a fresh directory so outputs land beside them.
fn workdir(files: &[&str]) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    for f in files {
        fs::copy(corpus(f), dir.path().join(f)).unwrap();
    }
    dir
}

fn neckcut(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neckcut")).current_dir(dir).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn phases_compose_to_the_debloated_golden() {
    let d = workdir(&["wc.ir"]);
    let p = d.path();
    assert_eq!(code(&neckcut(p, &["mine", "wc.ir", "--category", "cli"])), 0);
    let neck: serde_json::Value = serde_json::from_str(&read(p, "wc.neck.json")).unwrap();
    assert!(neck.get("chosen").is_some());

    let o = neckcut(p, &["interpret-to-neck", "wc.necked.ir", "--arg", "-l"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let state: serde_json::Value = serde_json::from_str(&read(p, "wc.state.json")).unwrap();
    assert_eq!(state["neckCrossings"], 1);

    assert_eq!(code(&neckcut(p, &["convert", "wc.necked.ir", "--state", "wc.state.json"])), 0);
    assert!(p.join("wc.ccplan.json").exists());
    assert_eq!(code(&neckcut(p, &["simplify", "wc.cc.ir", "--state", "wc.state.json"])), 0);

    let golden = fs::read_to_string(corpus("wc.l.expected.ir")).unwrap();
    assert_eq!(read(p, "wc.debloated.ir"), golden);
    let report: serde_json::Value = serde_json::from_str(&read(p, "wc.report.json")).unwrap();
    assert_eq!(report["after"]["irInsts"], 49);
}

#[test]
fn debloat_is_reentrant() {
    let d = workdir(&["wc.ir"]);
    let p = d.path();
    let args = ["debloat", "wc.ir", "--category", "cli", "--arg", "-l"];
    assert_eq!(code(&neckcut(p, &args)), 0);
    let (ir, report) = (read(p, "wc.debloated.ir"), read(p, "wc.report.json"));
    assert_eq!(code(&neckcut(p, &args)), 0);
    assert_eq!(read(p, "wc.debloated.ir"), ir);
    assert_eq!(read(p, "wc.report.json"), report);
}

#[test]
fn diff_exit_code_reflects_verdict() {
    let d = workdir(&["wc.ir", "wc.l.expected.ir"]);
    let p = d.path();
    let ok = neckcut(p, &["diff", "wc.ir", "wc.l.expected.ir", "--arg", "-l", "--trials", "20"]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
    let report: serde_json::Value = serde_json::from_str(&read(p, "wc-wc.l.expected.diff.json")).unwrap();
    assert_eq!(report["verdict"], "Pass");
    assert_eq!(report["trials"], 20);

    let bad = neckcut(p, &["diff", "wc.ir", "wc.l.expected.ir", "--arg", "-c", "--trials", "20"]);
    assert_eq!(code(&bad), 1);
}

#[test]
fn input_errors_exit_with_two() {
    let d = workdir(&[]);
    let p = d.path();
    assert_eq!(code(&neckcut(p, &["stats", "missing.ir"])), 2);
    fs::write(p.join("broken.ir"), "fn @main( {").unwrap();
    assert_eq!(code(&neckcut(p, &["stats", "broken.ir"])), 2);
    assert_eq!(code(&neckcut(p, &["no-such-command"])), 2);
    fs::write(p.join("bad.json"), r#"{"category":"cli","bogus":1}"#).unwrap();
    fs::copy(corpus("wc.ir"), p.join("wc.ir")).unwrap();
    assert_eq!(code(&neckcut(p, &["--config", "bad.json", "debloat", "wc.ir"])), 2);
}

#[test]
fn phase_errors_exit_with_three() {
    let d = workdir(&[]);
    let p = d.path();
    fs::write(p.join("plain.ir"), "fn @main(%argc: int, %argv: ptr<ptr<byte>>) -> int {\nentry:\n  ret 0\n}\n").unwrap();
    let o = neckcut(p, &["mine", "plain.ir", "--category", "cli"]);
    assert_eq!(code(&o), 3);
    assert!(!o.stderr.is_empty());
}

#[test]
fn config_file_drives_the_pipeline() {
    let d = workdir(&["config_demo.ir", "config_demo.upper.cfg", "config_demo.upper.expected.ir"]);
    let p = d.path();
    fs::write(p.join("run.json"), r#"{"category":"config","configFile":"config_demo.upper.cfg"}"#).unwrap();
    let o = neckcut(p, &["--config", "run.json", "--json", "debloat", "config_demo.ir"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["metricKind"], "ir");
    assert_eq!(read(p, "config_demo.debloated.ir"), read(p, "config_demo.upper.expected.ir"));
}

#[test]
fn out_dir_and_json_stats() {
    let d = workdir(&["fptr_demo.ir"]);
    let p = d.path();
    let o = neckcut(p, &["--out-dir", "out", "mine", "fptr_demo.ir", "--category", "cli"]);
    assert_eq!(code(&o), 0);
    assert!(p.join("out/fptr_demo.necked.ir").exists());
    let o = neckcut(p, &["--json", "stats", "fptr_demo.ir"]);
    let s: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(s["irInsts"].as_u64().unwrap() > 0);
}

#[test]
fn run_prints_program_output() {
    let d = workdir(&["wc.ir"]);
    let p = d.path();
    fs::write(p.join("in.txt"), "a\nb\n").unwrap();
    let o = neckcut(p, &["run", "wc.ir", "--arg", "-l", "--stdin", "in.txt"]);
    assert_eq!(code(&o), 0);
    assert_eq!(o.stdout, b"#Lines = 2");
}
