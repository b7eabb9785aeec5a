use std::path::PathBuf;
use std::process::{Command, Output};

fn gfe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gfe")).args(args).output().expect("binary runs")
}

fn panel() -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/panel.csv").display().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn help_exits_zero() {
    assert_eq!(gfe(&["--help"]).status.code(), Some(0));
    assert_eq!(gfe(&["estimate", "--help"]).status.code(), Some(0));
}

#[test]
fn unknown_flag_exits_two() {
    assert_eq!(gfe(&["estimate", "--bogus"]).status.code(), Some(2));
}

#[test]
fn missing_input_exits_one() {
    let o = gfe(&["estimate", "--input", "/nonexistent/panel.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn gamma_and_k_together_is_a_usage_error() {
    let p = panel();
    let o = gfe(&["estimate", "--input", &p, "--mode", "gfe", "--gamma", "0.5", "--k", "3"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn estimate_reports_fit_and_apes() {
    let p = panel();
    let o = gfe(&["--no-timestamp", "estimate", "--input", &p, "--mode", "gfe", "--k", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let doc: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(doc["covariates"], serde_json::json!(["x1", "x2"]));
    assert_eq!(doc["gfe"]["k"], 3);
    assert_eq!(doc["apes"].as_array().unwrap().len(), 2);
    assert_eq!(doc["fit"]["coefficients"].as_array().unwrap().len(), 2);
    assert_eq!(doc["gfe"]["assignments"].as_array().unwrap().len(), doc["n_units"].as_u64().unwrap() as usize);
}

#[test]
fn estimate_writes_ape_csv() {
    let p = panel();
    let dir = tempfile::tempdir().unwrap();
    let ape = dir.path().join("apes.csv");
    let json = dir.path().join("fit.json");
    let o = gfe(&[
        "--no-timestamp",
        "estimate",
        "--input",
        &p,
        "--dynamic",
        "--out",
        json.to_str().unwrap(),
        "--ape-out",
        ape.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&ape).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "covariate,estimate,se,method,kind,n_units");
    assert!(rows[1].starts_with("y_lag,") && rows[1].contains(",discrete,"));
    assert_eq!(rows.len(), 4);
}

#[test]
fn simulate_is_deterministic() {
    let args = [
        "--no-timestamp",
        "simulate",
        "--design",
        "static",
        "--n",
        "30",
        "--t",
        "6",
        "--nu-alpha",
        "-0.5",
        "--reps",
        "3",
        "--gamma",
        "0.4",
        "--seed",
        "5",
    ];
    let a = gfe(&args);
    let b = gfe(&args);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout(&a).lines().any(|l| l.starts_with("gfe")));
}

#[test]
fn timestamp_appears_by_default() {
    let o = gfe(&["simulate", "--design", "static", "--n", "10", "--t", "4", "--nu-alpha", "0", "--reps", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).lines().any(|l| l.starts_with("# timestamp:")));
}

#[test]
fn bad_gamma_grid_exits_one() {
    let o = gfe(&["simulate", "--design", "static", "--nu-alpha", "0", "--gamma", "0.4,abc"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn forecast_prints_one_row_per_window() {
    let p = panel();
    let o = gfe(&["--no-timestamp", "forecast", "--input", &p, "--dynamic", "--train-ends", "2006..2008"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert!(rows[0].starts_with("method,train_end,forecast_time"));
    assert_eq!(rows.len(), 4);
    assert!(rows[1].starts_with("ml,2006,2007,"));
}
