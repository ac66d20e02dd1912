use std::fs;
use std::path::Path;
use std::process::Command;

fn pbnn(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_pbnn")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: &str = r#"{
  "pretrain": {"iterations": 5},
  "chain": {"n_steps": 12, "burn_in": 6, "thin": 2, "step": 0.001,
            "plan": {"batch_size": 20, "num_batches": 4}},
  "benchmark": {"replicates": 1, "band_points": 3},
  "validate": {"mc_steps": 2000, "mc_seeds": 1}
}"#;

#[test]
fn generate_data_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = pbnn(&["generate-data", "--out", path(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let csv = fs::read(a.join("pendulum.csv")).unwrap();
    assert_eq!(csv, fs::read(b.join("pendulum.csv")).unwrap());
    assert_eq!(fs::read(a.join("pendulum.json")).unwrap(), fs::read(b.join("pendulum.json")).unwrap());
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("t,y1,y2,y3,y4\n"));
    assert_eq!(text.lines().count(), 1 + 9999);
}

#[test]
fn run_writes_train_and_test_rows_and_nonzero_chi2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, TINY).unwrap();
    let out = dir.path().join("out");
    assert!(pbnn(&["generate-data", "--out", path(&out)]).status.success());
    let o = pbnn(&["run", "--config", path(&cfg), "--out", path(&out), "--sampler", "pbnn"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = fs::read_to_string(out.join("report_pbnn.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].ends_with(",config_hash"));
    assert!(lines[1].starts_with("pbnn,20,4,train,"));
    assert!(lines[2].starts_with("pbnn,20,4,test,"));
    let log = fs::read_to_string(out.join("steplog_pbnn.csv")).unwrap();
    assert!(log.starts_with("step,delta,chi2,accepted,log_q_ratio\n"));
    assert!(log.lines().skip(1).any(|l| l.split(',').nth(2).unwrap().parse::<f64>().unwrap() > 0.0));
}

#[test]
fn resume_continues_to_the_same_result() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert!(pbnn(&["generate-data", "--out", path(&out)]).status.success());
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, TINY).unwrap();
    let full = pbnn(&["run", "--config", path(&cfg), "--out", path(&out), "--sampler", "batched"]);
    assert!(full.status.success());
    let expected = fs::read(out.join("report_batched.csv")).unwrap();

    // First half, then resume to the full length.
    let half = dir.path().join("half");
    fs::create_dir_all(&half).unwrap();
    let data = out.join("pendulum.csv");
    let o = pbnn(&["run", "--config", path(&cfg), "--out", path(&half), "--data", path(&data), "--sampler", "batched", "--n-steps", "8"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ck = half.join("checkpoint_batched.bin");
    let mut ckpt = pbnn::io::load_checkpoint(&ck).unwrap();
    ckpt.1.config.n_steps = 12;
    pbnn::io::save_checkpoint(&ck, &ckpt.0, &ckpt.1).unwrap();
    let o = pbnn(&["run", "--config", path(&cfg), "--out", path(&half), "--data", path(&data), "--sampler", "batched", "--resume", path(&ck)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(half.join("report_batched.csv")).unwrap(), expected);
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = pbnn(&["run", "--out", path(dir.path())]);
    assert_eq!(missing.status.code(), Some(2));
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"chain": {"n_steps": 5, "burn_in": 5}}"#).unwrap();
    assert_eq!(pbnn(&["validate", "--config", path(&cfg), "--out", path(dir.path())]).status.code(), Some(2));
    fs::write(&cfg, r#"{"no_such_field": 1}"#).unwrap();
    assert_eq!(pbnn(&["validate", "--config", path(&cfg), "--out", path(dir.path())]).status.code(), Some(2));
}

#[test]
fn validate_prints_a_passing_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"validate": {"deltas": [0.5], "sigmas": [1.0], "mc_steps": 20000, "mc_seeds": 1, "mc_sigmas": [1.0], "mc_tolerance": 0.05}}"#).unwrap();
    let o = pbnn(&["validate", "--config", path(&cfg), "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(0));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.starts_with("check,delta,sigma,value,threshold,pass,config_hash\n"));
    assert!(stdout.lines().skip(1).all(|l| l.split(',').nth(5) == Some("true")));
}

#[test]
fn failing_validation_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    // A tolerance of zero cannot be met by a finite Monte Carlo run.
    fs::write(&cfg, r#"{"validate": {"deltas": [0.5], "sigmas": [1.0], "mc_steps": 1000, "mc_seeds": 1, "mc_sigmas": [1.0], "mc_tolerance": 0.0}}"#).unwrap();
    assert_eq!(pbnn(&["validate", "--config", path(&cfg), "--out", path(dir.path())]).status.code(), Some(1));
}

#[test]
fn single_point_sweep_has_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert!(pbnn(&["generate-data", "--out", path(&out)]).status.success());
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, TINY).unwrap();
    let o = pbnn(&["sweep", "--config", path(&cfg), "--out", path(&out), "--batch-sizes", "30"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("30,99,"));
}
