use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pcgrow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcgrow"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_owned()
}

const NON_SMOOTH: &str = "PC v1 2 1\n2\n2\n0 I 0 0.5 0.5\n1 I 1 0.5 0.5\n2 P 0\n3 P 1\n4 S 2:0.5 3:0.5\nROOTS 4\n";

fn uniform_bytes() -> String {
    let p = vec![format!("{:.16e}", 1.0 / 256.0); 256].join(" ");
    format!("PC v1 2 1\n256\n256\n0 I 0 {p}\n1 I 1 {p}\n2 P 0 1\n3 S 2:1\nROOTS 3\n")
}

const BYTES_DATA: &str = "DS v1 3 2 1 1 1\n0 255\n0.5\n17 3\n-1.0\n128 128\n2.0\n";

#[test]
fn validate_names_the_non_smooth_unit() {
    let dir = tempfile::tempdir().unwrap();
    let c = path(dir.path(), "bad.pc");
    fs::write(&c, NON_SMOOTH).unwrap();
    let o = pcgrow(&["validate", "--circuit-in", &c]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("unit 4"), "{}", stderr(&o));
    assert_eq!(stderr(&o).lines().count(), 1);
    assert!(stdout(&o).is_empty());
}

#[test]
fn uniform_byte_model_scores_eight_bits() {
    let dir = tempfile::tempdir().unwrap();
    let (c, d) = (path(dir.path(), "u.pc"), path(dir.path(), "d.ds"));
    fs::write(&c, uniform_bytes()).unwrap();
    fs::write(&d, BYTES_DATA).unwrap();
    let o = pcgrow(&["validate", "--circuit-in", &c]);
    assert!(stdout(&o).starts_with("RESULT valid=true"));
    let o = pcgrow(&["eval", "--dataset", &d, "--circuit-in", &c]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("RESULT bpd=8.000000 "), "{}", stdout(&o));
}

#[test]
fn exit_codes_follow_the_failure_kind() {
    let dir = tempfile::tempdir().unwrap();
    let (c, d) = (path(dir.path(), "u.pc"), path(dir.path(), "d.ds"));
    fs::write(&d, BYTES_DATA).unwrap();
    // argument errors
    assert_eq!(pcgrow(&["eval", "--dataset", &d]).status.code(), Some(2));
    assert_eq!(pcgrow(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(pcgrow(&["eval", "--dataset", &d, "--circuit-in", &c]).status.code(), Some(2));
    // malformed input
    fs::write(&c, "PC v1 2 1\n256\n").unwrap();
    let o = pcgrow(&["eval", "--dataset", &d, "--circuit-in", &c]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("parse error"), "{}", stderr(&o));
    // zero likelihood
    let point = (0..256).map(|v| if v == 0 { "1" } else { "0" }).collect::<Vec<_>>().join(" ");
    fs::write(&c, format!("PC v1 2 1\n256\n256\n0 I 0 {point}\n1 I 1 {point}\n2 P 0 1\n3 S 2:1\nROOTS 3\n")).unwrap();
    let o = pcgrow(&["eval", "--dataset", &d, "--circuit-in", &c]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn failed_runs_leave_no_output() {
    let dir = tempfile::tempdir().unwrap();
    let (c, d, out) = (path(dir.path(), "bad.pc"), path(dir.path(), "d.ds"), path(dir.path(), "out.pc"));
    fs::write(&c, NON_SMOOTH).unwrap();
    fs::write(&d, "DS v1 1 2 1 1 1\n0 1\n0.0\n").unwrap();
    let o = pcgrow(&["train", "--dataset", &d, "--circuit-in", &c, "--circuit-out", &out, "--epochs", "1"]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 2);
}

fn grow(dir: &Path, data: &str, tag: &str, threads: &str) -> (Vec<u8>, Vec<u8>) {
    let (c, l) = (path(dir, &format!("{tag}.pc")), path(dir, &format!("{tag}.cm")));
    let o = pcgrow(&[
        "grow", "--dataset", data, "--image", "8,8,1", "--K", "4", "--hidden", "4", "--epochs", "2",
        "--batch", "1024", "--lr", "0.8:0.3", "--circuit-out", &c, "--labels", &l, "--seed", "11",
        "--threads", threads,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("RESULT clusters=4 "), "{}", stdout(&o));
    (fs::read(c).unwrap(), fs::read(l).unwrap())
}

#[test]
fn grow_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = path(dir.path(), "bench.ds");
    let o = pcgrow(&["synth", "--out", &d, "--samples", "150", "--seed", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let a = grow(dir.path(), &d, "a", "1");
    let b = grow(dir.path(), &d, "b", "1");
    let c = grow(dir.path(), &d, "c", "3");
    assert!(a == b, "same seed, different files");
    assert!(a == c, "thread count changed the result");
}

#[test]
fn full_pipeline_reports_consistent_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let d = path(dir.path(), "bench.ds");
    pcgrow(&["synth", "--out", &d, "--samples", "100", "--seed", "3"]);
    grow(dir.path(), &d, "g", "2");
    let (cond, maps) = (path(dir.path(), "g.pc"), path(dir.path(), "g.cm"));
    let (full, prior, cond2) = (path(dir.path(), "full.pc"), path(dir.path(), "prior.pc"), path(dir.path(), "c2.pc"));
    let o = pcgrow(&[
        "assemble", "--dataset", &d, "--image", "8,8,1", "--circuit-in", &cond, "--labels", &maps,
        "--circuit-out", &full, "--prior-out", &prior, "--conditional-out", &cond2, "--prior-hidden", "4",
        "--prior-iters", "5",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let assembled = stdout(&o);
    let o = pcgrow(&["eval", "--dataset", &d, "--circuit-in", &full]);
    let bpd = |s: &str| s.split_whitespace().find_map(|t| t.strip_prefix("bpd=")).unwrap().to_owned();
    assert_eq!(bpd(&assembled), bpd(&stdout(&o)));
    let o = pcgrow(&[
        "gaps", "--dataset", &d, "--image", "8,8,1", "--prior", &prior, "--circuit-in", &cond2, "--labels", &maps,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let gap: f64 = stdout(&o)
        .split_whitespace()
        .find_map(|t| t.strip_prefix("gap="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(gap >= 0.0);
}
