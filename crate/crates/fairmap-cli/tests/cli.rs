//! Command-line behavior: exit codes, error surfaces, config precedence.

use std::path::Path;
use std::process::{Command, Output};

fn fairmap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairmap"))
        .args(args)
        .env_remove("FAIRMAP_CONFIG")
        .output()
        .expect("binary runs")
}

fn fairmap_with_config(args: &[&str], config: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairmap"))
        .args(args)
        .env("FAIRMAP_CONFIG", config)
        .output()
        .expect("binary runs")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_fixture(dir: &Path) -> (String, String) {
    let keywords = dir.join("keywords.txt");
    let attributes = dir.join("gender.txt");
    std::fs::write(&keywords, "doctor\nnurse\n").unwrap();
    std::fs::write(&attributes, "gender\nmale\nfemale\n").unwrap();
    (
        keywords.to_str().unwrap().to_string(),
        attributes.to_str().unwrap().to_string(),
    )
}

#[test]
fn missing_required_setting_exits_1_with_error_line() {
    let out = fairmap(&["synth-embed", "--attributes", "bundled:gender"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_of(&out);
    assert!(err.starts_with("error: "), "{err}");
    assert!(err.contains("keywords"), "{err}");
}

#[test]
fn nonexistent_keyword_file_exits_1() {
    let out = fairmap(&[
        "synth-embed", "--keywords", "/nonexistent/kw.txt", "--attributes", "bundled:gender",
        "--dim", "8", "--out", "/tmp",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).starts_with("error: "));
}

#[test]
fn keyword_containing_attribute_word_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let keywords = dir.path().join("keywords.txt");
    std::fs::write(&keywords, "doctor\nmale model\n").unwrap();
    let out = fairmap(&[
        "synth-embed", "--keywords", keywords.to_str().unwrap(), "--attributes",
        "bundled:gender", "--dim", "8", "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_of(&out);
    assert!(err.contains("male"), "{err}");
}

#[test]
fn train_names_missing_prompts_and_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let (keywords, attributes) = write_fixture(dir.path());
    let out_dir = dir.path().to_str().unwrap();
    let synth = fairmap(&[
        "synth-embed", "--keywords", &keywords, "--attributes", &attributes, "--dim", "8",
        "--seed", "3", "--out", out_dir,
    ]);
    assert_eq!(synth.status.code(), Some(0));

    // Drop one attributed record and retrain.
    let embeddings = dir.path().join("embeddings.jsonl");
    let kept: Vec<String> = std::fs::read_to_string(&embeddings)
        .unwrap()
        .lines()
        .filter(|l| !l.contains("an image of an female nurse"))
        .map(str::to_string)
        .collect();
    std::fs::write(&embeddings, kept.join("\n") + "\n").unwrap();

    let train = fairmap(&[
        "train", "--keywords", &keywords, "--attributes", &attributes, "--embeddings",
        embeddings.to_str().unwrap(), "--out", out_dir,
    ]);
    assert_eq!(train.status.code(), Some(1));
    let err = stderr_of(&train);
    assert!(err.contains("nurse (female)"), "{err}");
}

#[test]
fn divergent_training_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let (keywords, attributes) = write_fixture(dir.path());
    let out_dir = dir.path().to_str().unwrap();
    fairmap(&[
        "synth-embed", "--keywords", &keywords, "--attributes", &attributes, "--dim", "8",
        "--seed", "3", "--out", out_dir,
    ]);
    let train = fairmap(&[
        "train", "--keywords", &keywords, "--attributes", &attributes, "--embeddings",
        dir.path().join("embeddings.jsonl").to_str().unwrap(), "--lr", "1e150", "--epochs",
        "50", "--out", out_dir,
    ]);
    assert_eq!(train.status.code(), Some(2));
    let err = stderr_of(&train);
    assert!(err.contains("diverged"), "{err}");
}

#[test]
fn zero_lambda_identity_training_reports_zero_losses() {
    let dir = tempfile::tempdir().unwrap();
    let (keywords, attributes) = write_fixture(dir.path());
    let out_dir = dir.path().to_str().unwrap();
    fairmap(&[
        "synth-embed", "--keywords", &keywords, "--attributes", &attributes, "--dim", "8",
        "--seed", "3", "--out", out_dir,
    ]);
    let train = fairmap(&[
        "train", "--keywords", &keywords, "--attributes", &attributes, "--embeddings",
        dir.path().join("embeddings.jsonl").to_str().unwrap(), "--lambda", "0", "--epochs",
        "20", "--out", out_dir,
    ]);
    assert_eq!(train.status.code(), Some(0));
    // The identity-initialized network is already at the optimum of the
    // zero-lambda objective: text loss and total stay exactly zero and the
    // parameters never move. The fairness diagnostic still reports the
    // data's actual root-variance.
    let text = stdout_of(&train);
    assert!(text.contains("final: l_text=0 l_fair="), "{text}");
    assert!(text.contains("l_total=0\n"), "{text}");
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let (keywords, attributes) = write_fixture(dir.path());
    let config = dir.path().join("fairmap.conf");
    let out_a = dir.path().join("a");
    std::fs::write(
        &config,
        format!(
            "keywords = {keywords}\nattributes = {attributes}\ndim = 8\nseed = 5\nout = {}\n",
            out_a.display()
        ),
    )
    .unwrap();

    // All settings come from the config file.
    let from_config = fairmap_with_config(&["synth-embed"], &config);
    assert_eq!(from_config.status.code(), Some(0), "{}", stderr_of(&from_config));
    let header = std::fs::read_to_string(out_a.join("embeddings.jsonl"))
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    assert!(header.contains("\"dim\":8"), "{header}");

    // A flag overrides the config value.
    let out_b = dir.path().join("b");
    let overridden = fairmap_with_config(
        &["synth-embed", "--dim", "4", "--out", out_b.to_str().unwrap()],
        &config,
    );
    assert_eq!(overridden.status.code(), Some(0), "{}", stderr_of(&overridden));
    let header = std::fs::read_to_string(out_b.join("embeddings.jsonl"))
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    assert!(header.contains("\"dim\":4"), "{header}");
}

#[test]
fn bundled_occupations_produce_450_records() {
    let dir = tempfile::tempdir().unwrap();
    let out = fairmap(&[
        "synth-embed", "--keywords", "bundled:occupations", "--attributes", "bundled:gender",
        "--dim", "8", "--seed", "1", "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));
    assert!(stdout_of(&out).contains("records: 450"), "{}", stdout_of(&out));
}

#[test]
fn missing_config_file_from_env_exits_1() {
    let out = Command::new(env!("CARGO_BIN_EXE_fairmap"))
        .args(["detect", "x", "--keywords", "bundled:emotions", "--attributes", "bundled:gender", "--dim", "8"])
        .env("FAIRMAP_CONFIG", "/nonexistent/fairmap.conf")
        .output()
        .expect("binary runs");
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).starts_with("error: "));
}

#[test]
fn detect_routes_out_of_domain_prompt_unchanged() {
    let out = fairmap(&[
        "detect", "a watercolor of mountains at dusk", "--keywords", "bundled:emotions",
        "--attributes", "bundled:gender", "--template", "an image of an {a} {c} person",
        "--dim", "16", "--seed", "7",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout_of(&out);
    assert!(text.contains("route: skip_mapping"), "{text}");
    assert!(text.contains("matched_prompt: none"), "{text}");
    assert!(
        text.contains("encoded_text: a watercolor of mountains at dusk"),
        "{text}"
    );
}

#[test]
fn audit_without_inputs_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let (keywords, attributes) = write_fixture(dir.path());
    let out = fairmap(&[
        "audit", "--keywords", &keywords, "--attributes", &attributes, "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_of(&out);
    assert!(err.contains("generations") || err.contains("embeddings"), "{err}");
}

#[test]
fn audit_rejects_unknown_reference_attribute() {
    let dir = tempfile::tempdir().unwrap();
    let (keywords, attributes) = write_fixture(dir.path());
    let out_dir = dir.path().to_str().unwrap();
    fairmap(&[
        "synth-embed", "--keywords", &keywords, "--attributes", &attributes, "--dim", "8",
        "--seed", "3", "--out", out_dir,
    ]);
    let out = fairmap(&[
        "audit", "--keywords", &keywords, "--attributes", &attributes, "--embeddings",
        dir.path().join("embeddings.jsonl").to_str().unwrap(), "--reference-attribute",
        "purple", "--out", out_dir,
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("purple"));
}

#[test]
fn audit_with_jobs_matches_serial_output() {
    let dir = tempfile::tempdir().unwrap();
    let (keywords, attributes) = write_fixture(dir.path());
    let out_dir = dir.path().to_str().unwrap();
    fairmap(&[
        "synth-embed", "--keywords", &keywords, "--attributes", &attributes, "--dim", "8",
        "--seed", "3", "--out", out_dir,
    ]);
    let embeddings = dir.path().join("embeddings.jsonl");
    let serial_dir = dir.path().join("serial");
    let parallel_dir = dir.path().join("parallel");
    let serial = fairmap(&[
        "audit", "--keywords", &keywords, "--attributes", &attributes, "--embeddings",
        embeddings.to_str().unwrap(), "--out", serial_dir.to_str().unwrap(),
    ]);
    assert_eq!(serial.status.code(), Some(0));
    let parallel = fairmap(&[
        "audit", "--keywords", &keywords, "--attributes", &attributes, "--embeddings",
        embeddings.to_str().unwrap(), "--jobs", "4", "--out", parallel_dir.to_str().unwrap(),
    ]);
    assert_eq!(parallel.status.code(), Some(0));
    assert_eq!(
        std::fs::read(serial_dir.join("report.json")).unwrap(),
        std::fs::read(parallel_dir.join("report.json")).unwrap()
    );
}

#[test]
fn debias_writes_one_record_with_matched_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let (keywords, attributes) = write_fixture(dir.path());
    let out_dir = dir.path().to_str().unwrap();
    fairmap(&[
        "synth-embed", "--keywords", &keywords, "--attributes", &attributes, "--dim", "8",
        "--seed", "3", "--out", out_dir,
    ]);
    fairmap(&[
        "train", "--keywords", &keywords, "--attributes", &attributes, "--embeddings",
        dir.path().join("embeddings.jsonl").to_str().unwrap(), "--epochs", "10", "--out",
        out_dir,
    ]);
    let out = fairmap(&[
        "debias", "an image of an doctor", "--keywords", &keywords, "--attributes",
        &attributes, "--checkpoint", dir.path().join("checkpoint.json").to_str().unwrap(),
        "--dim", "8", "--seed", "3", "--out", out_dir,
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));
    assert!(stdout_of(&out).contains("route: through_mapping"));
    let lines: Vec<String> = std::fs::read_to_string(dir.path().join("debias.jsonl"))
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect();
    assert_eq!(lines.len(), 2, "header plus one record");
    assert!(lines[1].contains("\"keyword\":\"doctor\""), "{}", lines[1]);
}

#[test]
fn checkpoint_dim_mismatch_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let (keywords, attributes) = write_fixture(dir.path());
    let out_dir = dir.path().to_str().unwrap();
    fairmap(&[
        "synth-embed", "--keywords", &keywords, "--attributes", &attributes, "--dim", "8",
        "--seed", "3", "--out", out_dir,
    ]);
    fairmap(&[
        "train", "--keywords", &keywords, "--attributes", &attributes, "--embeddings",
        dir.path().join("embeddings.jsonl").to_str().unwrap(), "--epochs", "5", "--out",
        out_dir,
    ]);
    // Encoder dim 16 against the dim-8 checkpoint.
    let out = fairmap(&[
        "debias", "an image of an doctor", "--keywords", &keywords, "--attributes",
        &attributes, "--checkpoint", dir.path().join("checkpoint.json").to_str().unwrap(),
        "--dim", "16", "--seed", "3", "--out", out_dir,
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("dimension mismatch"));
}
