use std::path::Path;
use std::process::Command;

use serde_json::{json, Value};
use superdiff::campaign::{template, CampaignConfig, KINDS};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_superdiff"))
}

fn write_config(dir: &Path, v: &Value) -> std::path::PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, serde_json::to_vec_pretty(v).unwrap()).unwrap();
    p
}

#[test]
fn describe_prints_parseable_templates() {
    for kind in KINDS {
        let out = bin().args(["describe", kind]).output().unwrap();
        assert!(out.status.success(), "{kind}");
        let v: Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(v, template(kind).unwrap());
    }
    assert_eq!(bin().args(["describe", "nope"]).status().unwrap().code(), Some(2));
}

#[test]
fn run_writes_digest_stamped_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = template("fk").unwrap();
    v["reps"] = json!(200);
    let cfg = write_config(tmp.path(), &v);
    let out = bin().arg("run").arg(&cfg).env("SUPERDIFF_OUTPUT_ROOT", tmp.path().join("runs")).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let mut lines = stdout.lines();
    let dir = Path::new(lines.next().unwrap()).to_path_buf();
    let digest = lines.next().unwrap().strip_prefix("manifest-digest ").unwrap().to_owned();
    assert_eq!(digest, CampaignConfig::from_value(v).unwrap().digest());

    let manifest: Value = serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_digest"], digest.as_str());
    let mut csvs = 0;
    for f in manifest["files"].as_array().unwrap() {
        let name = f["name"].as_str().unwrap();
        let bytes = std::fs::read(dir.join(name)).unwrap();
        assert_eq!(f["sha256"], superdiff::io::sha256_hex(&bytes).as_str(), "{name}");
        if name.ends_with(".csv") {
            csvs += 1;
            assert!(String::from_utf8(bytes).unwrap().ends_with(&format!("# manifest-digest: {digest}\n")));
        }
    }
    assert!(csvs > 0);
    assert!(dir.join("plot.gp").exists() && dir.join("summary.json").exists());
}

#[test]
fn unknown_key_exits_with_validation_code_and_names_key() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = template("tail").unwrap();
    v["reps_typo"] = json!(3);
    let cfg = write_config(tmp.path(), &v);
    let out = bin().arg("run").arg(&cfg).env("SUPERDIFF_OUTPUT_ROOT", tmp.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("reps_typo"));
}

#[test]
fn invalid_value_exits_with_validation_code() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = template("fk").unwrap();
    v["dt"] = json!(-0.1);
    let cfg = write_config(tmp.path(), &v);
    let st = bin().arg("run").arg(&cfg).env("SUPERDIFF_OUTPUT_ROOT", tmp.path()).status().unwrap();
    assert_eq!(st.code(), Some(2));
}

#[test]
fn missing_config_file_is_internal_error() {
    let st = bin().args(["run", "/nonexistent/superdiff.json"]).status().unwrap();
    assert_eq!(st.code(), Some(1));
}

#[test]
fn insufficient_growth_data_is_inconclusive() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = template("growth").unwrap();
    v["horizon"] = json!(0.5);
    v["reps"] = json!(2);
    let cfg = write_config(tmp.path(), &v);
    let out = bin().arg("run").arg(&cfg).env("SUPERDIFF_OUTPUT_ROOT", tmp.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn verify_subset_prints_one_line_per_criterion() {
    let out = bin().args(["verify", "fast", "--only", "1,13"]).output().unwrap();
    assert!(out.status.success());
    let s = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = s.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines.iter().all(|l| l.contains("PASS")));
}
