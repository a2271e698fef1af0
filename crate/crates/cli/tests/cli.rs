use std::path::Path;
use std::process::{Command, Output};

fn hillsignal(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hillsignal"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

const GEN: &str = "seed = 9\nn_patients = 1500\nn_drug_groups = 3\noutcomes_per_drug = 30\nadr_fraction = 0.3\nbaseline_event_rate = 1e-3\n";
const RUN: &str = "output_dir = \"out\"\nn_trees = 30\nmtry_grid = [3, 5]\ncv_folds = 3\nsubsets = [\"all\", \"strength\"]\n";

fn setup(dir: &Path) {
    std::fs::write(dir.join("gen.toml"), GEN).unwrap();
    std::fs::write(dir.join("run.toml"), RUN).unwrap();
    let out = hillsignal(&["synth", "-c", "gen.toml", "-o", "."], dir);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_writes_five_files_deterministically() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    setup(a.path());
    setup(b.path());
    for f in ["patients.csv", "prescriptions.csv", "events.csv", "reference.csv", "truth.csv"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        assert!(!x.is_empty(), "{f}");
        assert_eq!(x, std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn usage_and_config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&hillsignal(&["synth", "-c", "missing.toml", "-o", "x"], dir.path())), 1);
    assert_eq!(code(&hillsignal(&["no-such-command"], dir.path())), 1);
    std::fs::write(dir.path().join("bad.toml"), "window = [30, 1]\n").unwrap();
    assert_eq!(code(&hillsignal(&["features", "-c", "bad.toml"], dir.path())), 1);
    std::fs::write(dir.path().join("ok.toml"), RUN).unwrap();
    assert_eq!(code(&hillsignal(&["features", "-c", "ok.toml", "--partition", "3/2"], dir.path())), 1);
}

#[test]
fn malformed_csv_is_a_data_error_with_row() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let path = dir.path().join("events.csv");
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str("P000001,G57,not-a-date\n");
    std::fs::write(&path, text).unwrap();
    let out = hillsignal(&["features", "-c", "run.toml"], dir.path());
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("events.csv") && err.contains("row"), "{err}");
}

#[test]
fn partitions_merge_to_full_features() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    assert_eq!(code(&hillsignal(&["features", "-c", "run.toml"], dir.path())), 0);
    let mut snapshots = Vec::new();
    for k in 0..4 {
        let part = format!("{k}/4");
        assert_eq!(code(&hillsignal(&["features", "-c", "run.toml", "--partition", &part], dir.path())), 0);
        snapshots.push(format!("out/stats_{k}_of_4.stats"));
    }
    let mut args = vec!["merge", "-c", "run.toml", "-o", "merged.csv"];
    args.extend(snapshots.iter().rev().map(String::as_str));
    assert_eq!(code(&hillsignal(&args, dir.path())), 0);
    let full = std::fs::read(dir.path().join("out/features.csv")).unwrap();
    assert_eq!(full, std::fs::read(dir.path().join("merged.csv")).unwrap());

    // a snapshot from a different window refuses to merge
    std::fs::write(dir.path().join("wide.toml"), format!("{RUN}window = [1, 60]\n")).unwrap();
    assert_eq!(
        code(&hillsignal(&["features", "-c", "wide.toml", "--partition", "0/4", "-o", "wide.stats"], dir.path())),
        0
    );
    let out = hillsignal(&["merge", "-o", "x.csv", "wide.stats", &snapshots[1], &snapshots[2], &snapshots[3]], dir.path());
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("merge conflict"));
}

#[test]
fn evaluate_report_and_train() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let out = hillsignal(&["--threads", "1", "report", "-c", "run.toml"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("Overall Average [all]"), "{stdout}");
    let first: Vec<Vec<u8>> = ["report.csv", "delong.csv", "importance.csv", "roc_points.csv"]
        .iter()
        .map(|f| std::fs::read(dir.path().join("out").join(f)).unwrap())
        .collect();
    let report = String::from_utf8_lossy(&first[0]);
    // three groups plus the average, per subset
    assert_eq!(report.lines().count(), 1 + 2 * 4);
    assert_eq!(String::from_utf8_lossy(&first[1]).lines().count(), 1 + 3);

    let out = hillsignal(&["--threads", "2", "evaluate", "-c", "run.toml", "-f", "out/features.csv"], dir.path());
    assert_eq!(code(&out), 0);
    for (f, before) in ["report.csv", "delong.csv", "importance.csv", "roc_points.csv"].iter().zip(&first) {
        assert_eq!(&std::fs::read(dir.path().join("out").join(f)).unwrap(), before, "{f}");
    }

    let out = hillsignal(&["train", "-c", "run.toml", "-f", "out/features.csv", "-o", "model.json"], dir.path());
    assert_eq!(code(&out), 0);
    let model = std::fs::read_to_string(dir.path().join("model.json")).unwrap();
    assert!(model.contains("\"version\":1"));
}

#[test]
fn empty_events_give_empty_matrix() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    std::fs::write(dir.path().join("events.csv"), "patient_id,readcode,date\n").unwrap();
    let out = hillsignal(&["features", "-c", "run.toml"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("out/features.csv")).unwrap();
    assert_eq!(text.lines().count(), 1);
    let out = hillsignal(&["pairs", "-c", "run.toml"], dir.path());
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("0 of"));
}

#[test]
fn degenerate_labels_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("gen.toml"), GEN.replace("adr_fraction = 0.3", "adr_fraction = 0.0")).unwrap();
    std::fs::write(dir.path().join("run.toml"), RUN).unwrap();
    assert_eq!(code(&hillsignal(&["synth", "-c", "gen.toml", "-o", "."], dir.path())), 0);
    let out = hillsignal(&["report", "-c", "run.toml"], dir.path());
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn ingest_check_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let out = hillsignal(&["ingest-check", "-c", "run.toml"], dir.path());
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("patients=1500"), "{text}");
    assert!(text.contains("censored="));
}
