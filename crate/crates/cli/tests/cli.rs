//! Command-line behaviour: required flags, config errors, staged outputs.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn wfkit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wfkit"))
        .args(args)
        .current_dir(dir)
        .env_remove("WFKIT_OUT_DIR")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = r#"
[synthetic]
n_classes = 3
n_instances = 6
trace_len_mean = 80

[features]
kind = "cell_direction"
dim = 60

[model]
kind = "mlp"
hidden_units = [8, 8]

[train]
optimizer = "sgd"
learning_rate = 0.05
epochs = 2
batch_size = 4
seed = 0

[split]
ratio = 0.7
n_iters = 2
"#;

#[test]
fn train_requires_seed_flag() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), format!("seed = 4\n{SMALL}")).unwrap();
    let o = wfkit(dir.path(), &["-c", "run.toml", "train"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--seed is required"), "{}", stderr(&o));
    assert!(!dir.path().join("wfkit-out").exists());
}

#[test]
fn unknown_config_field_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), "[split]\nratoi = 0.5\n").unwrap();
    let o = wfkit(dir.path(), &["-c", "run.toml", "synth"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("ratoi"), "{}", stderr(&o));
}

#[test]
fn eval_writes_stamped_reports() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), format!("{SMALL}\n[eval]\nsweep = [0.5, 0.9]\n")).unwrap();
    let o = wfkit(dir.path(), &["-c", "run.toml", "--seed", "7", "-o", "out", "-j", "1", "eval"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("out");
    let mut names: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["eval_report.json", "eval_report.txt", "site_accuracy.csv", "sweep.csv"]);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("eval_report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 7);
    assert_eq!(report["command"], "eval");
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn failed_command_leaves_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    // batch larger than the training split
    let cfg = SMALL.replace("batch_size = 4", "batch_size = 400");
    fs::write(dir.path().join("run.toml"), cfg).unwrap();
    let o = wfkit(dir.path(), &["-c", "run.toml", "--seed", "1", "-o", "out", "train"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("batch"), "{}", stderr(&o));
    assert!(fs::read_dir(dir.path().join("out")).map_or(true, |mut d| d.next().is_none()));
}
