use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use marfe_core::io;

fn marfe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_marfe"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, body).unwrap();
    path
}

fn stderr_record(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("an error record");
    serde_json::from_str(line).expect("stderr ends with a JSON record")
}

#[test]
fn marfe_run_on_bundled_instance_writes_parseable_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let data = repo_root().join("data/random_s4_a2_h4.json");
    let cfg = write_config(
        dir.path(),
        &format!(
            "kind = \"marfe\"\nseed = 1\noutput_dir = \"out\"\n\n[instance]\nsource = \"file\"\npath = {:?}\n\n\
             [algorithm]\nm = 4000\ndump_phase_logs = true\n\n[evaluation]\nepsilon = 0.5\nrewards = 10\npolicies = 20\n",
            data.display().to_string()
        ),
    );
    let out = marfe(&["--quiet", "run", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out_dir = dir.path().join("out");

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["seed"], 1);
    let est = io::estimate_from_str(&fs::read_to_string(out_dir.join("estimate.json")).unwrap(), "estimate").unwrap();
    assert!(est.violations().is_empty());
    let logs = io::phase_logs_from_str(&fs::read_to_string(out_dir.join("phase_logs.json")).unwrap(), "logs").unwrap();
    assert_eq!(logs.len(), 4);

    let gaps = fs::read_to_string(out_dir.join("gap_report.csv")).unwrap();
    let mut lines = gaps.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert!(header.contains(&"gap"), "{header:?}");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 13);
    let gap_col = header.iter().position(|&c| c == "gap").unwrap();
    for row in &rows {
        let g: f64 = row[gap_col].parse().unwrap();
        assert!(g >= -1e-9);
    }
    assert!(out_dir.join("summary.csv").exists());
}

#[test]
fn grid_table_has_the_documented_header() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "kind = \"lower-bound-grid\"\nseed = 2\noutput_dir = \"grid\"\n\n[lower_bound]\nactions = 2\nhorizon = 4\n\
         phase_budgets = [1, 2]\nagent_counts = [2, 8]\ntrials = 20\nexplorer = \"uniform\"\n",
    );
    let out = marfe(&["--quiet", "run", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(dir.path().join("grid/grid.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next().unwrap(), "rho,m,A,H,failure_rate,trials,ci_halfwidth");
    assert_eq!(lines.count(), 4);
}

#[test]
fn missing_agent_count_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "kind = \"marfe\"\n\n[instance]\nsource = \"random\"\nstates = 3\nactions = 2\nhorizon = 3\n\n[evaluation]\nepsilon = 0.5\n",
    );
    let out = marfe(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let record = stderr_record(&out);
    assert_eq!(record["error"]["kind"], "config");
    let details = record["error"]["details"].as_array().unwrap();
    assert!(details.iter().any(|d| d.as_str().unwrap().contains("algorithm.m")), "{details:?}");
}

#[test]
fn unknown_config_field_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "kind = \"marfe\"\n\n[algorithm]\nagents = 10\n");
    let out = marfe(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_record(&out)["error"]["message"].as_str().unwrap().contains("agents"));
}

#[test]
fn missing_config_file_is_a_config_error() {
    let out = marfe(&["run", "--config", "/nonexistent/marfe.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bound_prints_beta_and_agent_counts() {
    let out = marfe(&["bound", "--states", "4", "--actions", "2", "--horizon", "4", "--epsilon", "0.25"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let beta: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("beta: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((beta - 0.25 / 128.0).abs() < 1e-15);
    assert!(text.contains("sufficient_m: ") && text.contains("desk_m: "));

    let bad = marfe(&["bound", "--states", "4", "--actions", "2", "--horizon", "4", "--epsilon", "2"]);
    assert_eq!(bad.status.code(), Some(3));
    assert_eq!(stderr_record(&bad)["error"]["kind"], "domain");
}

#[test]
fn generated_instances_validate() {
    let dir = tempfile::tempdir().unwrap();
    let key = dir.path().join("key.json");
    let out = marfe(&["gen-key", "--horizon", "4", "--actions", "3", "--key", "2,0,1,1", "--out", key.to_str().unwrap()]);
    assert!(out.status.success());
    let mdp = io::read_mdp(&key).unwrap();
    assert_eq!(mdp.prob(0, 0, 2, 0), 1.0);
    assert_eq!(mdp.prob(0, 0, 1, 1), 1.0);

    let random = dir.path().join("random.json");
    assert!(marfe(&["gen-mdp", "--states", "3", "--actions", "2", "--horizon", "2", "--seed", "5", "--out", random.to_str().unwrap()])
        .status
        .success());
    let out = marfe(&["validate", random.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().contains("S=3, A=2, H=2"));

    let bad_key = marfe(&["gen-key", "--horizon", "3", "--actions", "2", "--key", "0,2,0", "--out", key.to_str().unwrap()]);
    assert_eq!(bad_key.status.code(), Some(3));
}

#[test]
fn validate_reports_broken_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(
        &path,
        r#"{"format": "marfe.mdp/v1", "states": 2, "actions": 1, "horizon": 1, "initial_state": 0,
            "transitions": [[[[0.5, 0.3]], [[0.0, 1.0]]]]}"#,
    )
    .unwrap();
    let out = marfe(&["validate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let record = stderr_record(&out);
    assert_eq!(record["error"]["kind"], "invariant_violation");
    assert_eq!(record["error"]["details"].as_array().unwrap().len(), 1);

    fs::write(&path, r#"{"format": "something/v9"}"#).unwrap();
    assert_eq!(stderr_record(&marfe(&["validate", path.to_str().unwrap()]))["error"]["kind"], "parse");
}
