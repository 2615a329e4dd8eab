use std::path::PathBuf;
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn dpmsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpmsim")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn validate_bundled_scenario() {
    let o = dpmsim(&["validate", scenario("case_study.scenario").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o), "ok: case-study\n");
}

#[test]
fn run_writes_csv_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.csv");
    let trace = dir.path().join("trace.txt");
    let o = dpmsim(&[
        "run",
        scenario("case_study.scenario").to_str().unwrap(),
        "--format",
        "csv",
        "--out",
        out.to_str().unwrap(),
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(&out).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("cycle,start_us,consumed_nJ,harvested_nJ,net_nJ,end_soc"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "1");
    let net: f64 = row[4].parse().unwrap();
    assert!((net * 1e-6 - 23.8936).abs() < 1e-3, "{net}");
    let trace = std::fs::read_to_string(&trace).unwrap();
    assert!(trace.starts_with("time_us,event_kind,mode,latch,v_store_uV,e_store_nJ\n"));
    assert!(trace.contains(",rtc_alarm,normal,1,"));
}

#[test]
fn run_is_byte_identical() {
    let path = scenario("case_study.scenario");
    let a = dpmsim(&["run", path.to_str().unwrap(), "--format", "json"]);
    let b = dpmsim(&["run", path.to_str().unwrap(), "--format", "json"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn text_report_has_per_step_rows() {
    let o = dpmsim(&["run", scenario("case_study.scenario").to_str().unwrap()]);
    let text = stdout(&o);
    for needle in ["Data acquisition", "1.1000 mJ", "0.0462 mJ", "0.4000 mJ", "Always-on domain"] {
        assert!(text.contains(needle), "{needle} missing from\n{text}");
    }
}

#[test]
fn compare_reports_idle_ratio() {
    let o = dpmsim(&[
        "compare",
        scenario("case_study.scenario").to_str().unwrap(),
        scenario("case_study_software.scenario").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("idle ratio (software / hardware): 6.637168141592"), "{}", stdout(&o));
}

#[test]
fn sweep_finds_breakeven() {
    let o = dpmsim(&["sweep", scenario("case_study.scenario").to_str().unwrap(), "--lo", "1", "--hi", "200"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let last = stdout(&o).lines().last().unwrap().to_string();
    let lux: f64 = last.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!((lux - 16.485).abs() < 0.1, "{last}");
}

#[test]
fn sweep_without_sign_change_is_a_validation_error() {
    let o = dpmsim(&["sweep", scenario("case_study.scenario").to_str().unwrap(), "--lo", "100", "--hi", "200"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("does not change sign"));
}

#[test]
fn oracle_agrees_on_bundled_scenario() {
    let o = dpmsim(&["oracle", scenario("case_study.scenario").to_str().unwrap(), "--timestep", "1ms"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("sequences match"), "{}", stdout(&o));
}

#[test]
fn invalid_thresholds_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.scenario");
    let text = std::fs::read_to_string(scenario("case_study.scenario")).unwrap().replace("v_ovch = \"4.1V\"", "v_ovch = \"3.4V\"");
    std::fs::write(&path, text).unwrap();
    let o = dpmsim(&["validate", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("v_ovch"), "{}", stderr(&o));
}

#[test]
fn unknown_field_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("typo.scenario");
    let text = std::fs::read_to_string(scenario("case_study.scenario")).unwrap().replace("initial_soc = 0.8", "initial_soc = 0.8\ninitial_charge = 1");
    std::fs::write(&path, text).unwrap();
    let o = dpmsim(&["run", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("initial_charge") && err.contains("line 22"), "{err}");
}

#[test]
fn missing_file_and_bad_arguments_exit_with_one() {
    assert_eq!(dpmsim(&["validate", "/nonexistent/x.scenario"]).status.code(), Some(1));
    assert_eq!(dpmsim(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(dpmsim(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_thresholds_warn() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("defaults.scenario");
    let text = std::fs::read_to_string(scenario("case_study.scenario"))
        .unwrap()
        .replace("v_chrdy = \"3.5V\"\n", "")
        .replace("{ soc = 0.0, voltage = \"3V\" }", "{ soc = 0.0, voltage = \"2.8V\" }");
    std::fs::write(&path, text).unwrap();
    let o = dpmsim(&["validate", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("warning: pmic.v_chrdy"), "{}", stderr(&o));
    assert!(stdout(&o).contains("note: pmic.v_chrdy defaulted to 3 V"), "{}", stdout(&o));
}
