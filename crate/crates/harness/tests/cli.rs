use std::process::{Command, Output};

fn harness(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_candor-harness"))
        .args(args)
        .output()
        .expect("harness binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn passing_run_exits_zero_with_json_report() {
    let out = harness(&["run", "--seed", "3", "--policy", "wrong", "--format", "json"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["overall"], true);
    assert!(report["checks"].as_array().unwrap().len() > 10);
}

#[test]
fn run_writes_the_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.json");
    let out = harness(&["run", "--seed", "5", "--out", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let t: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(t["turns"].as_array().unwrap().len(), 10);
    assert_eq!(t["completed"], true);
}

#[test]
fn broken_stub_script_fails_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stub.toml");
    let entries: String = ["indirect_speech_act", "figurative_expression", "emoji_variable", "misperceived_blunt"]
        .iter()
        .map(|k| format!("[[entry]]\ntask = \"options\"\nkind = \"{k}\"\noutputs = [\"nonsense\"]\n\n"))
        .collect();
    std::fs::write(&path, entries).unwrap();
    let out = harness(&["run", "--stub-script", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1), "{}", stdout(&out));
    assert!(stdout(&out).contains("FAIL  completed"));
}

#[test]
fn bad_arguments_exit_two() {
    assert_eq!(harness(&["run", "--policy", "sometimes"]).status.code(), Some(2));
    assert_eq!(harness(&["fuzz", "--iterations", "0"]).status.code(), Some(2));
    assert_eq!(harness(&["sweep", "--count", "0"]).status.code(), Some(2));
    assert_eq!(harness(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn fuzz_is_identical_sequential_and_parallel() {
    let a = harness(&["fuzz", "--iterations", "50", "--seed", "8", "--format", "json"]);
    let b = harness(&["fuzz", "--iterations", "50", "--seed", "8", "--format", "json", "--sequential"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn goldens_export_matches_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let out = harness(&["goldens", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let fixtures = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/goldens");
    for entry in std::fs::read_dir(&fixtures).unwrap() {
        let entry = entry.unwrap();
        let exported = std::fs::read(dir.path().join(entry.file_name())).unwrap();
        assert_eq!(exported, std::fs::read(entry.path()).unwrap(), "{:?}", entry.file_name());
    }
}
