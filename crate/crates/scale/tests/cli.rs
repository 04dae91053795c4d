use std::path::Path;
use std::process::Command;

const BS: &str = r#"{"family":{"type":"bolthausen_sznitman"}}"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_coalesce-scale"))
}

fn stdout(args: &[&str]) -> (i32, String) {
    let out = bin().args(args).env_remove("COALESCE_SCALE_THREADS").output().unwrap();
    (out.status.code().unwrap(), String::from_utf8(out.stdout).unwrap())
}

#[test]
fn rates_header_and_rows() {
    let (code, text) = stdout(&["rates", "--measure", BS, "--x-min", "10", "--x-max", "1000", "--points", "3"]);
    assert_eq!(code, 0);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "x,gamma,gamma1,gamma2,x_gamma2,L");
    assert_eq!(lines.count(), 3);
}

#[test]
fn scaling_reports_closed_form_ratio() {
    let m = r#"{"family":{"type":"beta","a":1.0,"b":2.0}}"#;
    let (code, text) = stdout(&["scaling", "--measure", m, "--x", "1e6", "--t", "0.5"]);
    assert_eq!(code, 0);
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    let ratio: f64 = row[5].parse().unwrap();
    assert!((ratio - 1.0).abs() < 0.02, "{ratio}");
}

#[test]
fn rates_table_and_duality() {
    let (code, text) = stdout(&["rates-table", "--measure", BS, "--n", "4", "--process", "fixation"]);
    assert_eq!(code, 0);
    assert!(text.starts_with("row,col,rate\n1,2,"));
    let (code, text) = stdout(&["duality-check", "--measure", BS, "--n-max", "8", "--t", "0.5"]);
    assert_eq!(code, 0, "{text}");
    assert!(text.contains(",true"));
    let (code, _) = stdout(&["duality-check", "--measure", BS, "--n-max", "8", "--t", "0.5", "--tol=-1"]);
    assert_eq!(code, 1);
}

#[test]
fn simulate_writes_csv_and_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let s = bin()
            .args(["--seed", "5", "--threads", "1", "simulate", "--measure", BS, "--n", "100", "--t", "0.5", "--reps", "50", "--out"])
            .arg(p)
            .status()
            .unwrap();
        assert!(s.success());
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert!(text.starts_with("rep,value,raw\n"));
    assert_eq!(text.lines().count(), 51);
}

#[test]
fn limit_cf_files() {
    let dir = tempfile::tempdir().unwrap();
    let s = bin()
        .args(["--out"])
        .arg(dir.path())
        .args(["limit-cf", "--measure", BS, "--t", "0.5", "--x", "1", "--q", "0"])
        .status()
        .unwrap();
    assert!(s.success());
    let cf = std::fs::read_to_string(dir.path().join("limit_cf.csv")).unwrap();
    assert!(cf.starts_with("x,re,im\n1.0,"));
    let cdf = std::fs::read_to_string(dir.path().join("limit_cdf.csv")).unwrap();
    let v: f64 = cdf.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!(v > 0.0 && v < 1.0);
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("cfg.json");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn experiment_outputs_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"measure":{"family":{"type":"bolthausen_sznitman"}},"kind":"duality","params":{"n_max":10,"t_grid":[0.5]}}"#,
    );
    let out = dir.path().join("out");
    let s = bin().arg("--config").arg(&cfg).arg("--out").arg(&out).arg("experiment").output().unwrap().status;
    assert_eq!(s.code(), Some(0));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("duality.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], true);
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
    assert!(out.join("duality.csv").exists());

    let strict = write_config(
        dir.path(),
        r#"{"measure":{"family":{"type":"bolthausen_sznitman"}},"kind":"duality",
            "params":{"n_max":10,"t_grid":[0.5],"thresholds":{"duality":-1.0}}}"#,
    );
    let s = bin().arg("--config").arg(&strict).arg("experiment").output().unwrap();
    assert_eq!(s.status.code(), Some(1));

    let cdi = write_config(
        dir.path(),
        r#"{"measure":{"family":{"type":"beta","a":0.5,"b":1.0}},"kind":"convergence_block","params":{"reps":100}}"#,
    );
    let s = bin().arg("--config").arg(&cdi).arg("experiment").output().unwrap();
    assert_eq!(s.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&s.stderr).contains("comes down from infinity"));
}

#[test]
fn bad_input_is_an_error() {
    let (code, _) = stdout(&["rates", "--measure", r#"{"family":{"type":"nope"}}"#]);
    assert_eq!(code, 2);
    let (code, _) = stdout(&["rates"]);
    assert_eq!(code, 2);
    let s = bin().args(["rates", "--measure", BS]).env("COALESCE_SCALE_THREADS", "x").output().unwrap();
    assert_eq!(s.status.code(), Some(2));
}
