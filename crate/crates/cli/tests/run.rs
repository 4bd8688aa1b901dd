use std::fs;
use std::path::Path;
use std::process::Command;

fn labelshift() -> Command {
    Command::new(env!("CARGO_BIN_EXE_labelshift"))
}

fn write_config(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn strip_header(csv: &str) -> String {
    csv.lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect()
}

const SWEEP: &str = "scenario = categorical_vs_n\nestimator = E2\nstatistic_mode = hypercube\n\
sweep = 400, 800\nseeds = 1, 2\ne2_radius_scale = 0.1\nerm = true\n";

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "sweep.cfg", SWEEP);
    let outputs: Vec<String> = ["a.csv", "b.csv"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            let status = labelshift()
                .args([
                    "run",
                    cfg.to_str().unwrap(),
                    "--quiet",
                    "--out",
                    out.to_str().unwrap(),
                ])
                .status()
                .unwrap();
            assert!(status.success());
            fs::read_to_string(out).unwrap()
        })
        .collect();
    assert!(outputs[0].starts_with('#'));
    assert_eq!(strip_header(&outputs[0]), strip_header(&outputs[1]));
    let body = strip_header(&outputs[0]);
    assert_eq!(body.lines().count(), 5);
    assert!(body.starts_with(
        "scenario,estimator,statistic_mode,k_or_bandwidth,n,m,seed,relative_error,epsilon_delta,burn_in_ok,target_risk,wall_ms\n"
    ));
    let summary = fs::read_to_string(dir.path().join("a_summary.csv")).unwrap();
    assert_eq!(strip_header(&summary).lines().count(), 3);
}

#[test]
fn seeds_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "sweep.cfg", SWEEP);
    let out = dir.path().join("seeded.csv");
    let status = labelshift()
        .args([
            "run",
            cfg.to_str().unwrap(),
            "--quiet",
            "--seeds",
            "7",
            "--out",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let body = strip_header(&fs::read_to_string(out).unwrap());
    assert_eq!(body.lines().count(), 3);
    assert!(body
        .lines()
        .skip(1)
        .all(|l| l.split(',').nth(6) == Some("7")));
}

#[test]
fn output_key_is_used_without_flag() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("nested/out.csv");
    let cfg = write_config(
        dir.path(),
        "single.cfg",
        &format!(
            "scenario = single_run\nestimator = E1\nn = 500\noutput = {}\n",
            target.display()
        ),
    );
    let status = labelshift()
        .args(["run", cfg.to_str().unwrap(), "--quiet"])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(target.exists());
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(
        dir.path(),
        "bad.cfg",
        "scenario = categorical_vs_n\nestimator = E4\nsweep = 100\n",
    );
    let output = labelshift()
        .args(["run", bad.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("line 2"));

    let missing = dir.path().join("missing.cfg");
    let status = labelshift()
        .args(["run", missing.to_str().unwrap(), "--quiet"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    let ok = write_config(dir.path(), "ok.cfg", SWEEP);
    let status = labelshift()
        .args(["run", ok.to_str().unwrap(), "--quiet", "--seeds", ""])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn numerical_failures_exit_with_three() {
    // a statistic trained on a split missing a class cannot be fitted
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "tiny.cfg",
        "scenario = single_run\nestimator = E1\nk = 6\nn = 3\n",
    );
    let status = labelshift()
        .args(["run", cfg.to_str().unwrap(), "--quiet"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
}
