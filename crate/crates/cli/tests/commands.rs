use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ecloo::data::{load_csv, read_fit_json, read_loo_csv, read_sweep_csv, FitFile};
use ecloo::hyper::{sweep, SweepGrid, SweepOptions};
use ecloo::loocv::{approx_looe, literal_loocv, CvOptions};
use ecloo::{fit, PriorFamily, PriorSpec};
use tempfile::TempDir;

fn ecloo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ecloo"))
        .args(args)
        .env_remove("ECLOO_WORKERS")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes `<dir>/d_train.csv` and friends and returns the train path.
fn synth(dir: &TempDir, n: &str, seed: &str) -> PathBuf {
    ok(&ecloo(&[
        "synth", "--n", n, "--alpha", "0.5", "--rho0", "0.1", "--sigma-w0-sq", "10", "--sigma-n0-sq", "0.1",
        "--seed", seed, "--test-samples", "50", "--out-dir", s(dir.path()), "--prefix", "d",
    ]));
    dir.path().join("d_train.csv")
}

/// The CSV body without `#` lines.
fn body(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn synth_writes_reproducible_tables() {
    let dir = tempfile::tempdir().unwrap();
    let train = synth(&dir, "40", "7");
    for part in ["d_train.csv", "d_test.csv", "d_truth.csv"] {
        assert!(dir.path().join(part).exists(), "{part}");
    }
    let first = std::fs::read(&train).unwrap();
    let text = String::from_utf8(first.clone()).unwrap();
    assert!(text.lines().next().unwrap().starts_with("# ecloo"));
    assert_eq!(body(&train).lines().count(), 1 + 20);
    assert_eq!(body(&dir.path().join("d_test.csv")).lines().count(), 1 + 50);
    synth(&dir, "40", "7");
    assert_eq!(std::fs::read(&train).unwrap(), first);
}

#[test]
fn fit_output_equals_library_fit() {
    let dir = tempfile::tempdir().unwrap();
    let train = synth(&dir, "40", "1");
    let out = dir.path().join("fit.json");
    let stdout = ok(&ecloo(&[
        "fit", "--data", s(&train), "--rho", "0.1", "--sigma-w2", "10", "--beta", "10", "--out", s(&out),
    ]));
    assert!(stdout.contains("converged = true"));
    let from_cli = read_fit_json(std::fs::File::open(&out).unwrap()).unwrap();
    let d = load_csv(&train, "y", false).unwrap().dataset;
    let f = fit(&d, &PriorSpec::bernoulli_gauss(0.1, 10.0).unwrap(), 10.0, None).unwrap();
    assert_eq!(from_cli, FitFile::from(&f));
}

#[test]
fn loocv_matches_library_and_ignores_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let train = synth(&dir, "60", "2");
    let run = |workers: &str, name: &str| {
        let out = dir.path().join(name);
        let stdout = ok(&ecloo(&[
            "loocv", "--data", s(&train), "--rho", "0.1", "--sigma-w2", "10", "--beta", "10", "--literal", "--kfold",
            "5", "--workers", workers, "--out", s(&out),
        ]));
        (stdout, out)
    };
    let (stdout1, out1) = run("1", "loo1.csv");
    let (stdout8, out8) = run("8", "loo8.csv");
    let numbers = |s: &str| s.lines().filter(|l| !l.starts_with("wrote ")).collect::<Vec<_>>().join("\n");
    assert_eq!(numbers(&stdout1), numbers(&stdout8));
    assert_eq!(body(&out1), body(&out8));
    for key in ["eps_loo_approx = ", "eps_loo_refit = ", "relative_difference = ", "eps_kfold = "] {
        assert!(stdout1.contains(key), "{key}");
    }

    let d = load_csv(&train, "y", false).unwrap().dataset;
    let prior = PriorSpec::bernoulli_gauss(0.1, 10.0).unwrap();
    let lit = literal_loocv(&d, &prior, 10.0, &CvOptions::default()).unwrap();
    let approx = approx_looe(&fit(&d, &prior, 10.0, None).unwrap(), &d).unwrap();
    assert!(stdout1.contains(&format!("eps_loo_refit = {}\n", lit.eps_loo)));
    assert!(stdout1.contains(&format!("eps_loo_approx = {}\n", approx.eps_loo)));
    let (rows, comments) = read_loo_csv(std::fs::File::open(&out1).unwrap()).unwrap();
    assert!(comments.iter().any(|c| c.starts_with("settings:")));
    for (row, sample) in rows.iter().zip(&lit.samples) {
        assert_eq!(row.residual_loo_refit, sample.residual_loo_literal);
        assert_eq!(row.residual_loo, sample.residual_loo_approx);
    }
}

#[test]
fn sweep_reports_argmin_and_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let train = synth(&dir, "40", "3");
    let out = dir.path().join("sweep.csv");
    let stdout = ok(&ecloo(&[
        "sweep", "--data", s(&train), "--betas", "2,10,50", "--rhos", "0.05,0.1", "--sigma-w2s", "10", "--workers", "8",
        "--out", s(&out),
    ]));
    assert!(stdout.contains("argmin eps_loo: beta = "));
    let (records, comments) = read_sweep_csv(std::fs::File::open(&out).unwrap()).unwrap();
    assert!(comments.iter().any(|c| c == "workers = 8"));
    let d = load_csv(&train, "y", false).unwrap().dataset;
    let grid = SweepGrid::new(vec![2.0, 10.0, 50.0], vec![0.05, 0.1], vec![10.0]);
    let lib = sweep(&d, PriorFamily::BernoulliGauss { sigma_w2: 10.0 }, &grid, &SweepOptions::default()).unwrap();
    assert_eq!(records, lib.records);
    let best = lib.best();
    assert!(stdout.contains(&format!("beta = {}, rho = {}", best.beta, best.rho)));
}

#[test]
fn calibrate_prints_one_column_per_target() {
    let dir = tempfile::tempdir().unwrap();
    let train = synth(&dir, "40", "4");
    let out = dir.path().join("cal.csv");
    let stdout = ok(&ecloo(&[
        "calibrate", "--data", s(&train), "--k-target", "2,3", "--beta-grid", "5,10", "--out", s(&out),
    ]));
    for row in ["K", "beta", "rho", "Approx.", "RSS"] {
        let line = stdout.lines().find(|l| l.split_whitespace().next() == Some(row)).unwrap();
        assert_eq!(line.split_whitespace().count(), 3, "{line}");
    }
    let text = body(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "k_target,beta,rho,achieved_k,eps_loo_approx,eps_loo_refit,eps");
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        let k: f64 = cells[0].parse().unwrap();
        let achieved: f64 = cells[3].parse().unwrap();
        assert!((achieved - k).abs() <= 1e-6 * k);
    }
}

#[test]
fn validate_passes_on_default_instance() {
    let stdout = ok(&ecloo(&["validate"]));
    assert!(!stdout.contains("FAIL"));
    assert!(stdout.lines().last().unwrap().ends_with("checks passed"));
}

#[test]
fn worker_count_can_come_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let train = synth(&dir, "20", "5");
    let out = dir.path().join("sweep.csv");
    let status = Command::new(env!("CARGO_BIN_EXE_ecloo"))
        .args(["sweep", "--data", s(&train), "--betas", "5", "--rhos", "0.1", "--sigma-w2s", "10", "--out", s(&out)])
        .env("ECLOO_WORKERS", "3")
        .output()
        .unwrap();
    ok(&status);
    assert!(std::fs::read_to_string(&out).unwrap().contains("# workers = 3"));
}

fn code(out: &Output) -> Option<i32> {
    out.status.code()
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let train = synth(&dir, "20", "6");
    let bad_rho = ecloo(&["fit", "--data", s(&train), "--rho", "1.5", "--sigma-w2", "10", "--beta", "10"]);
    assert_eq!(code(&bad_rho), Some(2));
    assert!(String::from_utf8_lossy(&bad_rho.stderr).contains("--rho"));

    let missing = ecloo(&["fit", "--data", "/nonexistent/x.csv", "--rho", "0.1", "--sigma-w2", "10", "--beta", "10"]);
    assert_eq!(code(&missing), Some(2));

    let no_slab = ecloo(&["fit", "--data", s(&train), "--rho", "0.1", "--beta", "10"]);
    assert_eq!(code(&no_slab), Some(2));
    assert!(String::from_utf8_lossy(&no_slab.stderr).contains("--sigma-w2"));

    let no_target = ecloo(&["fit", "--data", s(&train), "--target", "z", "--rho", "0.1", "--sigma-w2", "10", "--beta", "10"]);
    assert_eq!(code(&no_target), Some(2));

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "x1,y\n1,2\nabc,3\n").unwrap();
    let cell = ecloo(&["fit", "--data", s(&bad), "--rho", "0.1", "--sigma-w2", "10", "--beta", "10"]);
    assert_eq!(code(&cell), Some(2));

    assert_eq!(code(&ecloo(&["loocv", "--data", s(&train), "--rho", "0.1", "--sigma-w2", "10", "--beta", "1", "--kfold", "1"])), Some(2));
    assert_eq!(code(&ecloo(&["frobnicate"])), Some(2));
}

#[test]
fn numerical_failures_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let train = synth(&dir, "30", "8");
    // One Newton step is not enough for any grid point to converge.
    let out = ecloo(&[
        "sweep", "--data", s(&train), "--betas", "10", "--rhos", "0.1", "--sigma-w2s", "10", "--max-outer", "1",
        "--out", s(&dir.path().join("s.csv")),
    ]);
    assert_eq!(code(&out), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}
