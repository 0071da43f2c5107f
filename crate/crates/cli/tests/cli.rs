use std::path::Path;
use std::process::{Command, Output};

fn hrg(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hrg"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn data_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn selftest_passes_quickly() {
    let dir = tempfile::tempdir().unwrap();
    let t = std::time::Instant::now();
    let out = hrg(&["selftest"], dir.path());
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(t.elapsed().as_secs() < 60);
    let rows = data_rows(&dir.path().join("selftest.csv"));
    assert!(rows.iter().all(|r| r[3] == "true"));
}

#[test]
fn solve_without_noise_is_constant() {
    let dir = tempfile::tempdir().unwrap();
    let out = hrg(&["solve", "--g", "0", "--r", "2"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let rows = data_rows(&dir.path().join("solution.csv"));
    assert_eq!(rows.len(), 729);
    // columns: index, x0, x1, u, v
    assert!(rows
        .iter()
        .all(|r| (r[3].parse::<f64>().unwrap() + 0.5).abs() < 1e-14));
}

#[test]
fn flow_without_coupling_has_zero_psi() {
    let dir = tempfile::tempdir().unwrap();
    let out = hrg(&["flow", "--g", "0"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    for r in data_rows(&dir.path().join("fields.csv")) {
        assert_eq!(r[1].parse::<f64>().unwrap(), 0.0);
        assert_eq!(r[2].parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn config_file_flags_and_echo() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"g": 0.5, "seed": 99, "Nmax": 2}"#).unwrap();
    let out_dir = dir.path().join("out");
    let out = hrg(
        &["sample", "--config", cfg.to_str().unwrap(), "--g", "0.1"],
        &out_dir,
    );
    assert_eq!(out.status.code(), Some(0));
    let echo: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("config.json")).unwrap())
            .unwrap();
    assert_eq!(echo["g"], 0.1);
    assert_eq!(echo["seed"], 99);
    assert_eq!(echo["Nmax"], 2);
    let csv = std::fs::read_to_string(out_dir.join("noise.csv")).unwrap();
    assert!(csv.starts_with("# engine_version="));
    assert!(csv.contains("# seed=99\n"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["provenance"]["seed"], 99);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(hrg(&["frobnicate"], dir.path()).status.code(), Some(2));
    let bad = hrg(&["solve", "--L", "4", "--r", "0.5"], dir.path());
    assert_eq!(bad.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&bad.stderr);
    assert!(
        msg.contains("L must be odd") && msg.contains("r must be at least 1"),
        "{msg}"
    );
    assert_eq!(
        hrg(&["converge", "--g", "0"], dir.path()).status.code(),
        Some(2)
    );
}

#[test]
fn failed_assertion_exits_1_and_names_it() {
    // At kappa_s = 0.05 every sample leaves Ω_g, so the log-linear fit is degenerate.
    let dir = tempfile::tempdir().unwrap();
    let out = hrg(&["tail", "--samples", "200", "--Nmax", "3"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tail_log_linear"));
}
