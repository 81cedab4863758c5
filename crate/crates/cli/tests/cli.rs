//! End-to-end tests of the `edupipe` binary: exit codes, artifact
//! files, and the bundled scenarios.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use eductive::pipeline::classify::TrainingSet;

fn edupipe() -> Command {
    Command::new(env!("CARGO_BIN_EXE_edupipe"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn write_corpus(root: &Path) {
    for (subject, base) in [(1u32, 440.0), (2, 1400.0)] {
        let dir = root.join(subject.to_string());
        std::fs::create_dir_all(&dir).unwrap();
        for seed in 0..2 {
            let spec = format!(
                "rate=8000;dur=0.5;tones={base}:1,{}:0.5;noise=0.02;seed={seed}",
                base * 2.0
            );
            std::fs::write(dir.join(format!("s{seed}.sine")), spec).unwrap();
        }
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process exited")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn train_then_recognize_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let out_dir = dir.path().join("out");
    write_corpus(&corpus);

    let train = edupipe()
        .args(["--loader", "sine", "--store"])
        .arg(&out_dir)
        .arg("train")
        .arg(&corpus)
        .output()
        .unwrap();
    assert_eq!(code(&train), 0, "{train:?}");

    let ts_path = out_dir.join("trainingset.dtsf");
    let ts = TrainingSet::decode(&std::fs::read(&ts_path).unwrap()).unwrap();
    assert_eq!(ts.entries.len(), 2);
    assert!(out_dir.join("report.json").exists());

    let rec = edupipe()
        .args(["--loader", "sine", "--store"])
        .arg(&out_dir)
        .arg("recognize")
        .arg(corpus.join("2/s0.sine"))
        .arg(&ts_path)
        .output()
        .unwrap();
    assert_eq!(code(&rec), 0, "{rec:?}");
    let text = stdout(&rec);
    assert!(text.contains("subject 2"), "{text}");
    assert!(text.contains("1. subject 2"), "ranked list missing: {text}");
}

#[test]
fn empty_corpus_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    std::fs::create_dir_all(&corpus).unwrap();
    let out = edupipe().args(["--loader", "sine", "train"]).arg(&corpus).output().unwrap();
    assert_eq!(code(&out), 2, "{out:?}");
}

#[test]
fn malformed_file_fails_that_file_only() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let out_dir = dir.path().join("out");
    write_corpus(&corpus);
    std::fs::write(corpus.join("1/broken.sine"), "this is not a sine spec").unwrap();

    let out = edupipe()
        .args(["--loader", "sine", "--store"])
        .arg(&out_dir)
        .arg("train")
        .arg(&corpus)
        .output()
        .unwrap();
    assert_eq!(code(&out), 1, "{out:?}");
    // The good files still trained both subjects.
    let ts = TrainingSet::decode(&std::fs::read(out_dir.join("trainingset.dtsf")).unwrap())
        .unwrap();
    assert_eq!(ts.entries.len(), 2);
}

#[test]
fn corrupt_training_set_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let out_dir = dir.path().join("out");
    write_corpus(&corpus);
    edupipe()
        .args(["--loader", "sine", "--store"])
        .arg(&out_dir)
        .arg("train")
        .arg(&corpus)
        .output()
        .unwrap();

    let ts_path = out_dir.join("trainingset.dtsf");
    let mut bytes = std::fs::read(&ts_path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xFF;
    std::fs::write(&ts_path, bytes).unwrap();

    let out = edupipe()
        .args(["--loader", "sine", "recognize"])
        .arg(corpus.join("1/s0.sine"))
        .arg(&ts_path)
        .output()
        .unwrap();
    assert_eq!(code(&out), 2, "{out:?}");
}

#[test]
fn numeric_module_ids_select_operations() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let out_dir = dir.path().join("out");
    write_corpus(&corpus);
    // 104 = FFT low-pass filter, 301 = FFT features, 504 = Chebyshev.
    let train = edupipe()
        .args(["--loader", "sine", "--preproc", "104", "--fe", "301", "--store"])
        .arg(&out_dir)
        .arg("train")
        .arg(&corpus)
        .output()
        .unwrap();
    assert_eq!(code(&train), 0, "{train:?}");
    let rec = edupipe()
        .args(["--loader", "sine", "--preproc", "104", "--metric", "504", "--store"])
        .arg(&out_dir)
        .arg("recognize")
        .arg(corpus.join("1/s1.sine"))
        .arg(out_dir.join("trainingset.dtsf"))
        .output()
        .unwrap();
    assert_eq!(code(&rec), 0, "{rec:?}");
    assert!(stdout(&rec).contains("subject 1"), "{rec:?}");

    let bad = edupipe()
        .args(["--loader", "sine", "--metric", "501", "--store"])
        .arg(&out_dir)
        .arg("recognize")
        .arg(corpus.join("1/s1.sine"))
        .arg(out_dir.join("trainingset.dtsf"))
        .output()
        .unwrap();
    assert_eq!(code(&bad), 2, "unimplemented module id should be rejected: {bad:?}");
}

#[test]
fn bundled_scenarios_and_policy_override() {
    let ok = edupipe().arg("simulate").arg(scenario("fault_free.ini")).output().unwrap();
    assert_eq!(code(&ok), 0, "{ok:?}");
    assert!(stdout(&ok).contains("outcome: completed"));

    let healed = edupipe()
        .arg("simulate")
        .arg(scenario("kill_worker_policy4.ini"))
        .output()
        .unwrap();
    assert_eq!(code(&healed), 0, "{healed:?}");

    let stalled = edupipe()
        .arg("simulate")
        .arg(scenario("kill_worker_policy0.ini"))
        .output()
        .unwrap();
    assert_eq!(code(&stalled), 0, "{stalled:?}");
    assert!(stdout(&stalled).contains("outcome: stalled"));

    // Forcing policy 0 onto the healing scenario breaks its
    // completion expectation.
    let broken = edupipe()
        .args(["--policy", "0", "simulate"])
        .arg(scenario("kill_worker_policy4.ini"))
        .output()
        .unwrap();
    assert_eq!(code(&broken), 3, "{broken:?}");

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ini");
    std::fs::write(&bad, "[topology]\nworkers = many\n").unwrap();
    let parse = edupipe().arg("simulate").arg(&bad).output().unwrap();
    assert_eq!(code(&parse), 2, "{parse:?}");
}

#[test]
fn simulate_is_deterministic() {
    let run = || {
        let out = edupipe().arg("simulate").arg(scenario("fault_free.ini")).output().unwrap();
        assert_eq!(code(&out), 0);
        stdout(&out)
            .lines()
            .find(|l| l.starts_with("ledger digest:"))
            .unwrap()
            .to_string()
    };
    assert_eq!(run(), run());
}

#[test]
fn store_inspect_dumps_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let out_dir = dir.path().join("out");
    write_corpus(&corpus);
    let wal = out_dir.join("store.wal");
    std::fs::create_dir_all(&out_dir).unwrap();
    let train = edupipe()
        .args(["--loader", "sine", "--store"])
        .arg(&out_dir)
        .arg("--wal")
        .arg(&wal)
        .arg("train")
        .arg(&corpus)
        .output()
        .unwrap();
    assert_eq!(code(&train), 0, "{train:?}");

    let out = edupipe().arg("store-inspect").arg(&wal).output().unwrap();
    assert_eq!(code(&out), 0, "{out:?}");
    let text = stdout(&out);
    assert!(text.contains("live records"), "{text}");
    assert!(text.contains("seq"), "{text}");

    let missing = edupipe().arg("store-inspect").arg(out_dir.join("nope.wal")).output().unwrap();
    assert_eq!(code(&missing), 2, "{missing:?}");
}

#[test]
fn config_file_feeds_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let out_dir = dir.path().join("out");
    write_corpus(&corpus);

    // Config alone supplies the loader.
    let config = dir.path().join("edupipe.ini");
    std::fs::write(&config, "[pipeline]\nloader = sine\n").unwrap();
    let from_file = edupipe()
        .arg("--config")
        .arg(&config)
        .arg("--store")
        .arg(&out_dir)
        .arg("train")
        .arg(&corpus)
        .output()
        .unwrap();
    assert_eq!(code(&from_file), 0, "{from_file:?}");

    // A flag overrides the file: loader=wav in the file would fail on
    // sine specs, but --loader sine wins.
    std::fs::write(&config, "[pipeline]\nloader = wav\n").unwrap();
    let overridden = edupipe()
        .arg("--config")
        .arg(&config)
        .args(["--loader", "sine", "--store"])
        .arg(&out_dir)
        .arg("train")
        .arg(&corpus)
        .output()
        .unwrap();
    assert_eq!(code(&overridden), 0, "{overridden:?}");

    // The env var points at the same config when --config is absent.
    let via_env = edupipe()
        .env("EDU_PIPE_CONFIG", &config)
        .args(["--loader", "sine", "--store"])
        .arg(&out_dir)
        .arg("train")
        .arg(&corpus)
        .output()
        .unwrap();
    assert_eq!(code(&via_env), 0, "{via_env:?}");
}

#[test]
fn mode_flag_must_agree_with_the_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    write_corpus(&corpus);
    let out = edupipe()
        .args(["--mode", "recognize", "--loader", "sine", "train"])
        .arg(&corpus)
        .output()
        .unwrap();
    assert_eq!(code(&out), 2, "{out:?}");
}
