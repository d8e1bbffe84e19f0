use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn manifest(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("manifests").join(name)
}

fn run(args: &[&str], manifest: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maryland"))
        .args(args)
        .arg("--manifest")
        .arg(manifest)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn without_wall_time(text: &str) -> String {
    text.lines().filter(|l| !l.starts_with("# wall-time-s:")).collect::<Vec<_>>().join("\n")
}

#[test]
fn verify_passes_for_the_canonical_block() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify"], &manifest("example1.toml"), dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let list = std::fs::read_to_string(dir.path().join("checklist.txt")).unwrap();
    assert!(list.contains("(gen3) block 0 = pass"));
    assert!(list.contains("sha256"));
}

#[test]
fn short_piece_names_the_failing_hypothesis() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify"], &manifest("example1_short.toml"), dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("(z2) fails"));
}

#[test]
fn malformed_manifest_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "name = \"bad\"\nexample = \"example1\"\nunknown_key = 3\n").unwrap();
    assert_eq!(run(&["verify"], &bad, dir.path()).status.code(), Some(2));
    std::fs::write(&bad, "name = \"bad\"\nexample = \"example1\"\neps = []\n").unwrap();
    assert_eq!(run(&["spectrum"], &bad, dir.path()).status.code(), Some(2));
    std::fs::write(&bad, "name = \"bad\"\nexample = \"example1\"\n").unwrap();
    // `series` needs its own section.
    assert_eq!(run(&["series"], &bad, dir.path()).status.code(), Some(2));
}

#[test]
fn outputs_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let o = run(&["dump-operator"], &manifest("example1.toml"), dir.path());
        assert_eq!(o.status.code(), Some(0));
        let o = run(&["series"], &manifest("example1.toml"), dir.path());
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for file in ["operator.txt", "series.csv", "convergence.csv"] {
        let x = std::fs::read_to_string(a.path().join(file)).unwrap();
        let y = std::fs::read_to_string(b.path().join(file)).unwrap();
        assert!(x.contains("# wall-time-s:"));
        assert_eq!(without_wall_time(&x), without_wall_time(&y), "{file}");
    }
}

#[test]
fn spectrum_reports_h2_agreement() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["spectrum"], &manifest("example1.toml"), dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let checks = String::from_utf8_lossy(&o.stdout);
    assert!(checks.contains("spectrum of H2 = pass"));
    assert!(checks.contains("warning = smallest IPR of H"));
    let strict = Command::new(env!("CARGO_BIN_EXE_maryland"))
        .args(["spectrum", "--strict", "--manifest"])
        .arg(manifest("example1.toml"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(strict.status.code(), Some(1));
    let csv = std::fs::read_to_string(dir.path().join("spectrum.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("index,energy,ipr")));
}
