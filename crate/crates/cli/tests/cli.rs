//! End-to-end tests of the `midcs` binary: exit codes, file inventories,
//! manifest digests, and replay verification.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn midcs(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_midcs"))
        .current_dir(dir)
        .env_remove("MIDCS_THREADS")
        .args(args)
        .output()
        .expect("binary should spawn")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, text).unwrap();
    path
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn manifest_value(dir: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.join("manifest.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn output_digests(manifest: &serde_json::Value) -> Vec<(String, String)> {
    manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| {
            (o["path"].as_str().unwrap().to_string(), o["sha256"].as_str().unwrap().to_string())
        })
        .collect()
}

fn file_sha256(path: &Path) -> String {
    let bytes = std::fs::read(path).unwrap();
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

const GENERATE_CONFIG: &str = r#"{
    "version": 1,
    "seed": 11,
    "process": {"kind": "iid_uniform"},
    "generate": {"n": 3, "trials": 40}
}"#;

#[test]
fn generate_writes_batches_and_a_stable_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), GENERATE_CONFIG);

    for out in ["run1", "run2"] {
        let result = midcs(dir.path(), &["generate", "--config", "config.json", "--out", out]);
        assert!(result.status.success(), "{}", stderr_of(&result));
    }
    let first = manifest_value(&dir.path().join("run1"));
    let second = manifest_value(&dir.path().join("run2"));

    let digests = output_digests(&first);
    let names: Vec<&str> = digests.iter().map(|(p, _)| p.as_str()).collect();
    assert_eq!(names, ["batch.csv", "batch.bin"]);
    assert_eq!(digests, output_digests(&second), "re-runs must reproduce every digest");
    assert_eq!(first["config_sha256"], second["config_sha256"]);
    assert_eq!(first["subcommand"], "generate");
    assert_eq!(first["seed"], 11);
    assert_eq!(first["config"]["process"]["kind"], "iid_uniform");

    for (path, sha) in &digests {
        assert_eq!(&file_sha256(&dir.path().join("run1").join(path)), sha);
    }
    assert_eq!(file_sha256(&config), first["config_sha256"].as_str().unwrap());

    let result = midcs(
        dir.path(),
        &["generate", "--config", "config.json", "--out", "csvonly", "--format", "csv"],
    );
    assert!(result.status.success());
    let restricted = manifest_value(&dir.path().join("csvonly"));
    let restricted_names: Vec<(String, String)> = output_digests(&restricted);
    assert_eq!(restricted_names.len(), 1);
    assert_eq!(restricted_names[0].0, "batch.csv");
    assert_eq!(restricted_names[0].1, digests[0].1, "format restriction must not change bytes");
}

#[test]
fn config_mistakes_exit_2_and_name_the_field() {
    let dir = tempfile::tempdir().unwrap();

    let cases: &[(&str, &str)] = &[
        (
            r#"{"version":1,"seed":1,"process":{"kind":{"iid_mixed":{"p":1.5}}},"generate":{"n":2,"trials":5}}"#,
            "params.p",
        ),
        (
            r#"{"version":1,"seed":1,"process":{"kind":"iid_uniform"},"generate":{"n":2,"trials":5},"exta":1}"#,
            "unknown field",
        ),
        (r#"{"version":9,"seed":1,"process":{"kind":"iid_uniform"}}"#, "version"),
    ];
    for (text, needle) in cases {
        write_config(dir.path(), text);
        let result = midcs(dir.path(), &["generate", "--config", "config.json"]);
        assert_eq!(result.status.code(), Some(2), "{text}");
        assert!(stderr_of(&result).contains(needle), "stderr: {}", stderr_of(&result));
    }

    write_config(dir.path(), GENERATE_CONFIG);
    let missing_section = midcs(dir.path(), &["estimate-dim", "--config", "config.json"]);
    assert_eq!(missing_section.status.code(), Some(2));
    assert!(stderr_of(&missing_section).contains("dimension"));

    let no_flag = midcs(dir.path(), &["generate"]);
    assert_eq!(no_flag.status.code(), Some(2));
    assert!(stderr_of(&no_flag).contains("--config"));

    let no_file = midcs(dir.path(), &["generate", "--config", "nope.json"]);
    assert_eq!(no_file.status.code(), Some(2));
}

#[test]
fn the_seed_flag_overrides_the_config_and_changes_the_data() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), GENERATE_CONFIG);

    let base = midcs(dir.path(), &["generate", "--config", "config.json", "--out", "a"]);
    assert!(base.status.success());
    let reseeded =
        midcs(dir.path(), &["generate", "--config", "config.json", "--out", "b", "--seed", "12"]);
    assert!(reseeded.status.success());

    let a = manifest_value(&dir.path().join("a"));
    let b = manifest_value(&dir.path().join("b"));
    assert_eq!(b["seed"], 12);
    assert_ne!(
        output_digests(&a)[0].1,
        output_digests(&b)[0].1,
        "different seeds must change the batch digest"
    );

    let header = |run: &str| {
        let text = std::fs::read_to_string(dir.path().join(run).join("batch.csv")).unwrap();
        text.lines().next().unwrap().to_string()
    };
    assert_eq!(header("a"), header("b"), "schema must not depend on the seed");
}

#[test]
fn replay_reproduces_digests_and_catches_tampering() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        r#"{
            "version": 1,
            "seed": 21,
            "process": {"kind": {"iid_mixed": {"p": 0.5}}},
            "dimension": {
                "flavor": "mid",
                "grid": {"n_ladder": [1, 2], "k_ladder": [4, 16]},
                "trials": 500
            }
        }"#,
    );
    let run = midcs(dir.path(), &["estimate-dim", "--config", "config.json", "--out", "run"]);
    assert!(run.status.success(), "{}", stderr_of(&run));

    let ok = midcs(dir.path(), &["replay", "run/manifest.json"]);
    assert!(ok.status.success(), "{}", stderr_of(&ok));
    let stdout = String::from_utf8_lossy(&ok.stdout).into_owned();
    assert!(stdout.contains("estimates.csv: ok"), "{stdout}");
    assert!(stdout.contains("replay ok"), "{stdout}");

    let manifest_path = dir.path().join("run/manifest.json");
    let mut manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&manifest_path).unwrap()).unwrap();
    manifest["outputs"][0]["sha256"] = serde_json::Value::String("0".repeat(64));
    let tampered = dir.path().join("tampered.json");
    std::fs::write(&tampered, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();

    let caught = midcs(dir.path(), &["replay", "tampered.json"]);
    assert_eq!(caught.status.code(), Some(3));
    assert!(stderr_of(&caught).contains("digest mismatch"), "{}", stderr_of(&caught));

    std::fs::write(&tampered, "{not json").unwrap();
    let malformed = midcs(dir.path(), &["replay", "tampered.json"]);
    assert_eq!(malformed.status.code(), Some(3));
}

#[test]
fn thread_settings_come_from_the_flag_then_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), GENERATE_CONFIG);

    let bad_env = Command::new(env!("CARGO_BIN_EXE_midcs"))
        .current_dir(dir.path())
        .env("MIDCS_THREADS", "lots")
        .args(["generate", "--config", "config.json", "--out", "x"])
        .output()
        .unwrap();
    assert_eq!(bad_env.status.code(), Some(2));
    assert!(stderr_of(&bad_env).contains("MIDCS_THREADS"));

    let good_env = Command::new(env!("CARGO_BIN_EXE_midcs"))
        .current_dir(dir.path())
        .env("MIDCS_THREADS", "1")
        .args(["generate", "--config", "config.json", "--out", "y"])
        .output()
        .unwrap();
    assert!(good_env.status.success(), "{}", stderr_of(&good_env));

    let flag_wins = Command::new(env!("CARGO_BIN_EXE_midcs"))
        .current_dir(dir.path())
        .env("MIDCS_THREADS", "lots")
        .args(["generate", "--config", "config.json", "--out", "z", "--threads", "2"])
        .output()
        .unwrap();
    assert!(flag_wins.status.success(), "{}", stderr_of(&flag_wins));
}

#[test]
fn phase_emits_diagram_plot_and_threshold() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        r#"{
            "version": 1,
            "seed": 31,
            "process": {"kind": "iid_uniform"},
            "phase": {
                "n": 8,
                "rate_grid": [0.25, 0.5, 0.75, 1.0],
                "trials": 30,
                "decoder": "least_squares"
            }
        }"#,
    );
    let run = midcs(dir.path(), &["phase", "--config", "config.json", "--out", "run"]);
    assert!(run.status.success(), "{}", stderr_of(&run));

    let manifest = manifest_value(&dir.path().join("run"));
    let names: Vec<String> = output_digests(&manifest).into_iter().map(|(p, _)| p).collect();
    assert_eq!(names, ["phase.csv", "phase_plot.csv", "threshold.csv"]);

    let threshold = std::fs::read_to_string(dir.path().join("run/threshold.csv")).unwrap();
    assert!(threshold.starts_with("decoder,status,rate,band_lo,band_hi,slope,intercept\n"));
    assert!(threshold.contains("least_squares,crossing,"), "{threshold}");

    let phase = std::fs::read_to_string(dir.path().join("run/phase.csv")).unwrap();
    let last = phase.lines().last().unwrap();
    assert!(last.starts_with("1,8,30,30,1,"), "rate 1 must recover exactly: {last}");
}

#[test]
fn report_on_a_constant_process_is_all_zero() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        r#"{
            "version": 1,
            "seed": 41,
            "process": {"kind": {"gaussian_stationary": {"cov": {"constant_correlation": {"sigma2": 0.0}}}}},
            "report": {
                "theta_grid": [0.0, 0.5],
                "rate_grid": [0.25, 0.5, 0.75, 1.0],
                "n_ladder": [2, 4],
                "decoders": ["zero"],
                "trials": 40,
                "mid_trials": 100
            }
        }"#,
    );
    let run = midcs(dir.path(), &["report", "--config", "config.json", "--out", "run"]);
    assert!(run.status.success(), "{}", stderr_of(&run));

    let manifest = manifest_value(&dir.path().join("run"));
    let names: Vec<String> = output_digests(&manifest).into_iter().map(|(p, _)| p).collect();
    assert_eq!(names, ["report.txt"]);

    let text = std::fs::read_to_string(dir.path().join("run/report.txt")).unwrap();
    assert!(text.contains("verdict: PASS"), "{text}");
    assert!(text.contains("theta_star = 0\n"), "{text}");
    assert!(text.contains("mid_estimate = 0\n"), "{text}");
}
