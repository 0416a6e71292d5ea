use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn vfmax(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vfmax")).current_dir(dir).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn unknown_flag_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = vfmax(dir.path(), &["verify", "--bogus"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn bad_values_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&vfmax(dir.path(), &["kakeya", "--delta", "3/8"])), 2);
    assert_eq!(code(&vfmax(dir.path(), &["enumerate", "--offstep", "w3"])), 2);
    assert_eq!(code(&vfmax(dir.path(), &["enumerate", "--m", "4", "--mw", "3"])), 2);
    fs::write(dir.path().join("bad.cfg"), "colour = red\n").unwrap();
    assert_eq!(code(&vfmax(dir.path(), &["sweep", "lp", "--config", "bad.cfg"])), 2);
}

#[test]
fn delta_sweep_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = vfmax(dir.path(), &["sweep", "delta", "--delta", "1/8,1/16,1/32", "--out", "s.csv"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("s.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("experiment,delta"));
    assert!(lines[3].starts_with("delta,1/2^5,"));
    assert!(String::from_utf8_lossy(&o.stderr).contains("fit_b"));
}

#[test]
fn sweeps_are_deterministic_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    for kind in ["delta", "lp"] {
        let a = vfmax(dir.path(), &["sweep", kind, "--delta", "1/8,1/16"]);
        let b = vfmax(dir.path(), &["sweep", kind, "--delta", "1/8,1/16"]);
        let c = vfmax(dir.path(), &["sweep", kind, "--delta", "1/8,1/16", "--threads", "1"]);
        assert_eq!(code(&a), 0);
        assert_eq!(a.stdout, b.stdout);
        assert_eq!(a.stdout, c.stdout);
    }
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.cfg"), "# lp sweep\ndelta = 1/8, 1/16\np = 1.5\n").unwrap();
    let from_file = vfmax(dir.path(), &["sweep", "lp", "--config", "run.cfg"]);
    assert_eq!(String::from_utf8_lossy(&from_file.stdout).lines().count(), 3);
    let overridden = vfmax(dir.path(), &["sweep", "lp", "--config", "run.cfg", "--delta", "1/16"]);
    let text = String::from_utf8_lossy(&overridden.stdout).to_string();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().nth(1).unwrap().starts_with("square,1/2^4,,1.5,"));
}

#[test]
fn verify_small_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let o = vfmax(dir.path(), &["verify", "--m", "4"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let again = vfmax(dir.path(), &["verify", "--m", "4", "--threads", "1"]);
    assert_eq!(o.stdout, again.stdout);
    assert!(String::from_utf8_lossy(&o.stdout).contains("criterion 1:"));
}

#[test]
fn instance_commands() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let o = vfmax(p, &["kakeya", "--delta", "1/8", "--out", "k.txt"]);
    assert_eq!(code(&o), 0);
    let k = fs::read_to_string(p.join("k.txt")).unwrap();
    assert!(k.contains("\"tubes\"") && k.contains("maxgrid 1"));

    let o = vfmax(p, &["enumerate", "--m", "4", "--mw", "2", "--delta", "1/2", "--field", "identity", "--out", "fam.txt"]);
    assert_eq!(code(&o), 0);
    assert!(fs::metadata(p.join("fam.txt")).unwrap().len() > 0);

    let o = vfmax(p, &["maximal", "--m", "4", "--delta", "1/2", "--out", "mf.txt"]);
    assert_eq!(code(&o), 0);
    assert!(fs::read_to_string(p.join("mf.txt")).unwrap().starts_with("maxgrid 1"));

    let o = vfmax(p, &["decompose", "--m", "5", "--mw", "3", "--delta", "1/2", "--field", "identity"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("\"generations\""));

    let o = vfmax(p, &["badness", "--m", "4", "--delta", "1/2", "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("k,base,slope,offset,nu,b\n"));
}
