//! End-to-end experiment runs: file layout, determinism, summaries and shipped configs.

use std::fs;
use std::path::{Path, PathBuf};

use pmd_core::experiment::{read_trajectories, run_experiment, summarize, ExperimentConfig, COLUMNS};

const SMALL: &str = "
seed = 5
n_states = 5
n_actions = 6
gamma = 0.9
max_iter = 40
value_gap_tol = none

[method]
id = L2
divergence = euclidean

[method]
id = TS
divergence = tsallis
q = 0.5
schedule = constant

[method]
id = KL-reg
divergence = kl
regularized = true
";

fn config(text: &str, out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::parse(text).unwrap();
    c.output_path = out.to_path_buf();
    c
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

#[test]
fn writes_one_file_per_method_with_the_schema() {
    let dir = tempfile::tempdir().unwrap();
    let summary = run_experiment(&config(SMALL, dir.path())).unwrap();
    let names: Vec<String> = files(dir.path())
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, ["KL-reg.csv", "L2.csv", "TS.csv", "VI.csv", "summary.txt"]);
    assert_eq!(
        summary.methods.iter().map(|m| m.id.as_str()).collect::<Vec<_>>(),
        ["L2", "TS", "KL-reg", "VI"]
    );
    assert_eq!(summary.violations(), 0);

    let text = fs::read_to_string(dir.path().join("L2.csv")).unwrap();
    assert!(!text.contains('\r'));
    assert_eq!(text.lines().next().unwrap(), COLUMNS.join(","));
    let rows = read_trajectories(&dir.path().join("L2.csv")).unwrap();
    assert_eq!(rows.len(), 41);
    assert!(rows
        .iter()
        .enumerate()
        .all(|(i, r)| r.k == i && r.seed == 5 && r.wall_time_ms.is_none()));
    assert!(rows.iter().all(|r| r.bound_value.is_some()));
    // 17 significant digits: one leading digit and sixteen after the point.
    let gap_cell = text.lines().nth(2).unwrap().split(',').nth(7).unwrap();
    let mantissa = gap_cell.split('e').next().unwrap();
    assert_eq!(
        mantissa.trim_start_matches('-').replace('.', "").len(),
        17,
        "{gap_cell}"
    );

    let reg = read_trajectories(&dir.path().join("KL-reg.csv")).unwrap();
    assert!(reg.iter().all(|r| r.regularized && r.bound_value.is_none()));
    let summary_text = fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    for needle in [
        "delta = ",
        "ln(1/gamma) = ",
        "normalized to the uniform distribution",
        "total violations = 0",
    ] {
        assert!(summary_text.contains(needle), "{needle}");
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_experiment(&config(SMALL, a.path())).unwrap();
    run_experiment(&config(SMALL, b.path())).unwrap();
    for (x, y) in files(a.path()).iter().zip(files(b.path())) {
        assert_eq!(fs::read(x).unwrap(), fs::read(&y).unwrap(), "{}", x.display());
    }
}

#[test]
fn zero_iterations_give_single_rows() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("max_iter = 40", "max_iter = 0");
    run_experiment(&config(&text, dir.path())).unwrap();
    for id in ["L2", "TS", "KL-reg", "VI"] {
        let rows = read_trajectories(&dir.path().join(format!("{id}.csv"))).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].k, 0);
    }
}

#[test]
fn timing_fills_the_wall_time_column() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("timing = true\n{SMALL}");
    run_experiment(&config(&text, dir.path())).unwrap();
    let rows = read_trajectories(&dir.path().join("L2.csv")).unwrap();
    assert!(rows.iter().all(|r| r.wall_time_ms.is_some_and(|t| t >= 0.0)));
    let s = summarize(&[dir.path().join("L2.csv")]).unwrap();
    assert!(s.methods[0].wall_time_ms.is_some());
}

#[test]
fn summarize_reports_and_flags_corruption() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&config(SMALL, dir.path())).unwrap();
    let l2 = dir.path().join("L2.csv");
    let s = summarize(std::slice::from_ref(&l2)).unwrap();
    assert_eq!(s.methods.len(), 1);
    assert_eq!(s.violations(), 0);
    assert!(s.methods[0].max_bound_excess.unwrap() < 0.0);

    let both = summarize(&[l2.clone(), dir.path().join("VI.csv")]).unwrap();
    assert_eq!(
        both.methods.iter().map(|m| m.method_id.as_str()).collect::<Vec<_>>(),
        ["L2", "VI"]
    );

    let text = fs::read_to_string(&l2).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut cells: Vec<String> = lines[3].split(',').map(str::to_string).collect();
    cells[7] = "5.0e3".into();
    lines[3] = cells.join(",");
    let corrupt = dir.path().join("corrupt.csv");
    fs::write(&corrupt, lines.join("\n") + "\n").unwrap();
    assert_eq!(summarize(&[corrupt]).unwrap().violations(), 1);

    assert!(summarize(&[]).is_err());
}

#[test]
fn unwritable_output_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    assert!(run_experiment(&config(SMALL, &blocker.join("out"))).is_err());
}

#[test]
fn shipped_fast_config_has_no_violations() {
    let dir = tempfile::tempdir().unwrap();
    let text = include_str!("../../../configs/fast.cfg");
    let summary = run_experiment(&config(text, dir.path())).unwrap();
    assert_eq!(summary.violations(), 0, "{}", summary.text);
    assert_eq!(summary.methods.len(), 6);
}
