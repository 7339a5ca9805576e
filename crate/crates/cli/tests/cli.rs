use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dibod(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dibod")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

const TINY: &str = r#"
folds = 4
max_folds = 1
epochs = 1

[source]
kind = "synthetic"
variant = "clean"
graphs = 20
seed = 1

[model]
adapter_width = 6
hidden = 8
gcn_layers = 2
proj_dim = 4
critic_hidden = 6
"#;

#[test]
fn missing_dataset_exits_2_and_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[source]\nkind = \"tudataset\"\nroot = \"/no/such/PROTEINS\"\nname = \"PROTEINS\"\n",
    );
    let o = dibod(&["pretrain", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/no/such/PROTEINS"), "{}", stderr(&o));
}

#[test]
fn bad_config_value_exits_2_and_names_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{TINY}\n[train]\nlr = 0.0\n"));
    let o = dibod(&["pretrain", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("train.lr"), "{}", stderr(&o));
}

#[test]
fn corrupted_table_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("table.json");
    fs::write(&t, r#"{"axes": [["Y", 2]], "probs": [0.7, 0.7]}"#).unwrap();
    let o = dibod(&["oracle-check", "--table", t.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn oracle_check_prints_one_entry_per_check() {
    let o = dibod(&["oracle-check", "--seed", "1"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let entries = v["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 9);
    for e in entries {
        assert!(e["name"].is_string() && e["pass"].is_boolean() && e["report"].is_object());
    }
    let all_pass = v["all_pass"].as_bool().unwrap();
    assert_eq!(all_pass, entries.iter().all(|e| e["pass"].as_bool().unwrap()));
    assert_eq!(o.status.code(), Some(if all_pass { 0 } else { 1 }));
    if !all_pass {
        assert!(stderr(&o).contains("failed checks"));
    }
}

#[test]
fn pretrain_then_mi_curve() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("runs");
    let o = dibod(&["pretrain", "--config", &cfg, "--output", out.to_str().unwrap(), "--sequential"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = out.join("pretrain/fold0/metrics.csv");
    let o = dibod(&["mi-curve", log.to_str().unwrap()]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("epoch,I_zvs_x_proxy,I_zvs_y,I_zvr_y\n"));
    assert_eq!(text.lines().count(), 3);
}
