use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_mcdl");

fn mcdl(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("MCDL_OUT_DIR").output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn help_exits_zero() {
    for args in [&["--help"][..], &["solve", "--help"], &["bench", "--help"]] {
        let out = mcdl(args);
        assert_eq!(code(&out), 0, "{args:?}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"));
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&mcdl(&[])), 1);
    assert_eq!(code(&mcdl(&["solve", "--bogus"])), 1);
    assert_eq!(code(&mcdl(&["solve", "--alpha", "abc"])), 1);
    assert_eq!(code(&mcdl(&["certify", "--all", "--loss", "mcdnn"])), 1);
}

#[test]
fn missing_config_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let missing = tmp.path().join("missing.toml");
    let out = mcdl(&["bench", "--config", missing.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("missing.toml"));
}

#[test]
fn unknown_config_key_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    write(&cfg, "seed = 3\n# comment\nalfa = 2.0\n");
    let out = mcdl(&["solve", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    let err = stderr(&out);
    assert!(err.contains("alfa"), "{err}");
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn nested_config_tables_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    write(&cfg, "[solve]\nalpha = 2.0\n");
    let out = mcdl(&["solve", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&out), 1);
}

#[test]
fn certify_all_passes_and_lists_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mcdl(&["certify", "--all", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let m = manifest(tmp.path());
    assert_eq!(m["status"], "ok");
    assert_eq!(m["subcommand"], "certify");
    for f in m["outputs"].as_array().unwrap() {
        assert!(tmp.path().join(f.as_str().unwrap()).is_file(), "{f}");
    }
    let csv = std::fs::read_to_string(tmp.path().join("certificates.csv")).unwrap();
    assert!(csv.starts_with("loss_kind,construction,"));
}

#[test]
fn output_directory_defaults_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let target = tmp.path().join("from-env");
    let out = Command::new(BIN)
        .args(["solve", "--seed", "2"])
        .env("MCDL_OUT_DIR", &target)
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(target.join("manifest.json").is_file());
    assert!(target.join("weight.csv").is_file());
    assert!(!tmp.path().join("mcdl-out").exists());
}

#[test]
fn singular_prior_covariance_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write(&d.join("g.csv"), "2,2\n1,0\n0,1\n");
    write(&d.join("u.csv"), "2,3\n1,2,3\n0,1,0\n");
    write(&d.join("y.csv"), "2,3\n1,2,3\n0,1,0\n");
    write(&d.join("obs.csv"), "2,1\n0.5\n0.5\n");
    write(&d.join("cov.csv"), "2,2\n0,0\n0,0\n");
    write(
        &d.join("run.toml"),
        "forward = \"g.csv\"\ntrain_params = \"u.csv\"\ntrain_data = \"y.csv\"\n\
         observations = \"obs.csv\"\nprior_covariance = \"cov.csv\"\n",
    );
    let out_dir = d.join("out");
    let out = mcdl(&["solve", "--config", d.join("run.toml").to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    let m = manifest(&out_dir);
    assert_eq!(m["status"], "failed");
    assert!(m["error"].as_str().unwrap().contains("prior"));
}

#[test]
fn malformed_matrix_names_file_and_line() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write(&d.join("g.csv"), "2,2\n1,0\n0,x\n");
    write(&d.join("run.toml"), "forward = \"g.csv\"\n");
    let out = mcdl(&["solve", "--config", d.join("run.toml").to_str().unwrap(), "--out", d.join("o").to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    let err = stderr(&out);
    assert!(err.contains("g.csv") && err.contains("3"), "{err}");
}

#[test]
fn file_mode_solve_writes_matrices() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write(&d.join("g.csv"), "2,3\n1,0,1\n0,1,1\n");
    write(&d.join("u.csv"), "3,4\n1,2,3,0\n0,1,0,2\n1,1,2,1\n");
    write(&d.join("y.csv"), "2,4\n2,3,5,1\n1,2,2,3\n");
    write(&d.join("obs.csv"), "2,1\n1.5\n2.5\n");
    write(
        &d.join("run.toml"),
        "forward = \"g.csv\"\ntrain_params = \"u.csv\"\ntrain_data = \"y.csv\"\nobservations = \"obs.csv\"\n",
    );
    let out_dir = d.join("out");
    let out = mcdl(&["solve", "--config", d.join("run.toml").to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let w = std::fs::read_to_string(out_dir.join("weight.csv")).unwrap();
    assert!(w.starts_with("3,2\n"), "{w}");
    let p = std::fs::read_to_string(out_dir.join("prediction.csv")).unwrap();
    assert!(p.starts_with("3,1\n"), "{p}");
}
