use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssd-autotune"))
        .args(args)
        .current_dir(dir)
        .env_remove("SSD_AUTOTUNE_DB")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails_with(dir: &Path, args: &[&str], code: &str) {
    let out = run(dir, args);
    assert!(!out.status.success(), "{args:?} succeeded");
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with(&format!("error: {code}: ")), "{err}");
}

fn field(stdout: &str, key: &str) -> f64 {
    let line = stdout.lines().find(|l| l.starts_with(key)).unwrap();
    line[key.len()..].split_whitespace().next().unwrap().parse().unwrap()
}

/// Generates two workloads, clusters them, and tunes the sequential one.
fn pipeline(dir: &Path) -> (String, String) {
    std::fs::create_dir_all(dir.join("traces")).unwrap();
    for p in ["seqread", "randwrite"] {
        ok(dir, &["generate", "--profile", p, "--records", "12000", "--seed", "2", "--out", &format!("traces/{p}.trace")]);
    }
    std::fs::write(dir.join("labels.txt"), "# stem label\nseqread seqread\nrandwrite randwrite\n").unwrap();
    let clusters = ok(dir, &["cluster", "--traces", "traces", "--db", "store", "--labels", "labels.txt"]);
    let tuned = ok(
        dir,
        &[
            "tune", "--workload", "traces/seqread.trace", "--db", "store", "--capacity", "512GiB",
            "--interface", "nvme", "--flash", "mlc", "--seed", "5", "--max-iterations", "6",
            "--out", "history.ndjson", "--config-out", "best.json",
        ],
    );
    (clusters, tuned)
}

#[test]
fn tune_improves_on_reference_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let (clusters, tuned) = pipeline(&a);
    assert!(clusters.contains("seqread"));
    assert!(field(&tuned, "best grade") <= field(&tuned, "reference grade"));
    assert!(tuned.contains("PageAllocationScheme"));

    let history = std::fs::read_to_string(a.join("history.ndjson")).unwrap();
    for line in history.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["grade"].is_f64());
    }

    let show = ok(&a, &["db", "show", "seqread", "--db", "store"]);
    assert!(field(&show, "records") >= 1.0, "{show}");
    let ls = ok(&a, &["db", "ls", "--db", "store"]);
    assert!(ls.contains("randwrite") && ls.contains("seqread"));

    let validated = ok(&a, &["validate", "--config", "best.json", "--db", "store", "--target", "seqread"]);
    assert!(validated.contains("seqread (target)"));

    assert_eq!(pipeline(&b), (clusters, tuned));
    for f in ["store/manifest.json", "store/clusters/seqread.json", "store/traces/seqread.trace", "history.ndjson", "best.json"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn errors_are_one_machine_readable_line() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::create_dir(dir.join("traces")).unwrap();
    ok(dir, &["generate", "--profile", "mixed50", "--records", "6000", "--out", "traces/m.trace"]);

    std::fs::write(dir.join("small.json"), r#"{"FlashChannelCount": 4, "ChipNoPerChannel": 1}"#).unwrap();
    fails_with(dir, &["validate", "--config", "small.json", "--traces", "traces"], "constraint_violation");

    std::fs::write(dir.join("odd.json"), r#"{"FlashChannelCount": 7}"#).unwrap();
    fails_with(dir, &["validate", "--config", "odd.json", "--traces", "traces"], "invalid_argument");

    std::fs::write(dir.join("broken.trace"), "10 0 0 4096 R\n5 0 8 4096 W\n").unwrap();
    fails_with(dir, &["prune", "--workload", "broken.trace", "--db", "store"], "trace");

    fails_with(dir, &["db", "show", "nothing", "--db", "store"], "not_found");
    fails_with(dir, &["validate", "--config", "missing.json", "--traces", "traces"], "io");
}

#[test]
fn db_defaults_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::create_dir(dir.join("traces")).unwrap();
    ok(dir, &["generate", "--profile", "randread", "--records", "9000", "--out", "traces/r.trace"]);
    let out = Command::new(env!("CARGO_BIN_EXE_ssd-autotune"))
        .args(["cluster", "--traces", "traces"])
        .current_dir(dir)
        .env("SSD_AUTOTUNE_DB", dir.join("envstore"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("envstore/manifest.json").exists());
}
