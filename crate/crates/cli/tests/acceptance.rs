//! Acceptance criterion 8: two executions of the online command with an
//! identical config produce byte-identical CSV outputs.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

fn run(args: &[&str]) {
    let output = Command::new(env!("CARGO_BIN_EXE_cascade"))
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        output.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&output.stderr)
    );
}

fn collect_csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|entry| {
            let entry = entry.unwrap();
            (
                entry.file_name().to_string_lossy().into_owned(),
                std::fs::read(entry.path()).unwrap(),
            )
        })
        .collect();
    files.sort_by(|a, b| a.0.cmp(&b.0));
    files
}

#[test]
fn criterion_8_end_to_end_determinism() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let config = format!(
        r#"
trace_path = "{root}/traces.jsonl"
calib_n = 60
n_draws = 300
seeds = [0, 1]

[synth]
n_records = 260
"#,
        root = root.display()
    );
    let config_path = root.join("config.toml");
    std::fs::write(&config_path, config).unwrap();
    let config_arg = config_path.display().to_string();

    run(&["synth", "--config", &config_arg]);
    let out_a = root.join("out_a");
    let out_b = root.join("out_b");
    run(&[
        "online",
        "--grid",
        "--config",
        &config_arg,
        "--out",
        &out_a.display().to_string(),
    ]);
    run(&[
        "online",
        "--grid",
        "--config",
        &config_arg,
        "--out",
        &out_b.display().to_string(),
    ]);

    let first = collect_csvs(&out_a);
    let second = collect_csvs(&out_b);
    assert!(!first.is_empty());
    assert_eq!(first.len(), second.len());
    for ((name_a, bytes_a), (name_b, bytes_b)) in first.iter().zip(&second) {
        assert_eq!(name_a, name_b);
        assert_eq!(bytes_a, bytes_b, "output {name_a} differs between runs");
    }

    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 120.0, "criterion 8 exceeded 120s: {elapsed:.1}s");
    println!("ACCEPTANCE 8 (end-to-end determinism): PASS [{elapsed:.2}s]");
}
