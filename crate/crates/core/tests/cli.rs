use std::path::Path;
use std::process::{Command, Output};

use groupsens::report::{analyze, AnalyzeOptions};
use groupsens::sim::{generate_study, SamplingSituation};
use groupsens::Direction;

fn groupsens(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_groupsens"))
        .args(args)
        .env_remove("GROUPSENS_SEED")
        .env("RUST_LOG", "off")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

/// 40 pairs over one covariate with a clear positive shift.
fn shifted_csv() -> String {
    let mut s = String::from("pair_id,young,d\n");
    for i in 0..40 {
        let d = 1.0 + (i % 7) as f64 * 0.5 - if i % 5 == 0 { 2.5 } else { 0.0 };
        s.push_str(&format!("p{i},{},{d}\n", i % 2));
    }
    s
}

#[test]
fn analyze_json_matches_the_library() {
    let out = groupsens(&["analyze", "--simulate", "3:7", "--gamma", "1,2.5,4", "--format", "json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let study = generate_study(&SamplingSituation::get(3).unwrap(), 7, 0);
    let report = analyze(&study, &[1.0, 2.5, 4.0], &AnalyzeOptions::default()).unwrap();
    let mut expected = serde_json::to_string_pretty(&report).unwrap();
    expected.push('\n');
    assert_eq!(String::from_utf8(out.stdout).unwrap(), expected);
}

#[test]
fn analyze_tsv_has_one_row_per_gamma() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "pairs.csv", &shifted_csv());
    let out = groupsens(&[
        "analyze",
        "--data",
        &data,
        "--method",
        "m",
        "--gamma",
        "1.0,1.5",
        "--direction",
        "less",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "gamma\tAll\tyoung=1\tyoung=0\tmax\targmax\tkappa\treject");
    assert_eq!(rows.len(), 3);
    assert!(text.contains("direction=less"));
}

#[test]
fn less_direction_negates_the_data() {
    let study = generate_study(&SamplingSituation::get(3).unwrap(), 7, 0);
    let flipped = study.map_differences(|d| -d);
    let opts = AnalyzeOptions {
        direction: Direction::Less,
        ..AnalyzeOptions::default()
    };
    let a = analyze(&flipped, &[2.0], &opts).unwrap();
    let b = analyze(&study, &[2.0], &AnalyzeOptions::default()).unwrap();
    assert_eq!(a.results[0].deviates, b.results[0].deviates);
}

#[test]
fn missing_difference_column_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "bad.csv", "pair_id,young\na,1\nb,0\n");
    let out = groupsens(&["analyze", "--data", &data]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("pair_id"));
}

#[test]
fn invalid_covariate_exits_2_and_names_the_row() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "bad.csv", "pair_id,young,d\na,1,0.5\nb,2,1.0\n");
    let out = groupsens(&["analyze", "--data", &data]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr).to_string();
    assert!(err.contains('2') && err.contains('b'), "{err}");
}

#[test]
fn all_zero_differences_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let body: String = std::iter::once("pair_id,young,d\n".to_string())
        .chain((0..20).map(|i| format!("p{i},{},0\n", i % 2)))
        .collect();
    let data = write(dir.path(), "zeros.csv", &body);
    for method in ["mean-diff", "m", "group-m"] {
        let out = groupsens(&["analyze", "--data", &data, "--method", method]);
        assert_eq!(out.status.code(), Some(3), "method {method}");
    }
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(groupsens(&["analyze", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(groupsens(&["analyze", "--simulate", "9:1"]).status.code(), Some(1));
    assert_eq!(
        groupsens(&["analyze", "--simulate", "3:1", "--gamma", "0.5"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        groupsens(&["analyze", "--simulate", "3:1", "--alpha", "1.5"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn export_scores_writes_one_row_per_pair() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "pairs.csv", &shifted_csv());
    let out_path = dir.path().join("scores.tsv");
    let out = groupsens(&["export-scores", "--data", &data, "--out", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(out_path).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "pair_id\tgroup\td\tmean_difference\tm_statistic\tgroup_m_statistic"
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 40);
    for r in &rows {
        assert_eq!(r[2], r[3], "mean difference score is the difference itself");
        assert!(r[1] == "1" || r[1] == "2");
    }
}

#[test]
fn critval_from_a_matrix_file() {
    let dir = tempfile::tempdir().unwrap();
    let rho = write(dir.path(), "rho.json", "[[1.0]]");
    let out = groupsens(&["critval", "--rho", &rho, "--format", "json"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["kappa"].as_f64().unwrap() - 1.6449).abs() < 1e-3);

    let bad = write(dir.path(), "bad.json", "[[1.0, 2.0], [2.0, 1.0]]");
    assert_eq!(groupsens(&["critval", "--rho", &bad]).status.code(), Some(4));
}

#[test]
fn sensitivity_value_reports_gamma_star() {
    let out = groupsens(&[
        "sensitivity-value",
        "--simulate",
        "3:2",
        "--method",
        "mean-diff",
        "--gamma-max",
        "8",
        "--step",
        "0.5",
        "--format",
        "json",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let star = v["gamma_star"].as_f64().unwrap();
    assert!((1.0..8.0).contains(&star));
    assert_eq!(v["curve"].as_array().unwrap().len(), 15);
}

#[test]
fn power_is_reproducible_for_a_seed() {
    let args = [
        "power",
        "--situations",
        "5",
        "--gammas",
        "2",
        "--reps",
        "40",
        "--seed",
        "9",
    ];
    let a = groupsens(&args);
    let b = groupsens(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("5\t2\t")).count(), 3);
}

#[test]
fn version_reports_defaults() {
    let out = groupsens(&["--version"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains(env!("CARGO_PKG_VERSION")));
    assert!(text.contains("trim=3") && text.contains("target_se=5e-4"));
}
