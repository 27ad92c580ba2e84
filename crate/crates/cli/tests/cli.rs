use std::path::{Path, PathBuf};
use std::process::Command;

use tempfile::TempDir;

const B1: &str = r#"
seed = 11
study_id = "b1"
output_dir = "out"

[model]
kind = "gamma"
alpha = 1.0
beta = 1.0
representation = "bondesson"

[problem]
name = "zero_generator"

[scheme]
steps = [32]
levels = [10.0]
paths = 10000
"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("study.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn fbsde(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_fbsde"))
        .args(args)
        .env("FBSDE_THREADS", "1")
        .output()
        .unwrap()
}

fn read_ledger(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .map(|r| r.unwrap())
        .collect()
}

fn column(path: &Path, name: &str) -> usize {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    rdr.headers().unwrap().iter().position(|h| h == name).unwrap()
}

#[test]
fn smoke_study_recovers_closed_form_y0() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), B1);
    let out = fbsde(&["run", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ledger = dir.path().join("out/ledger.csv");
    let rows = read_ledger(&ledger);
    assert_eq!(rows.len(), 1);
    let get = |name: &str| rows[0][column(&ledger, name)].to_string();
    assert_eq!(get("status"), "ok");
    let (y0, se, y_ref): (f64, f64, f64) = (
        get("y0").parse().unwrap(),
        get("y0_se").parse().unwrap(),
        get("y0_ref").parse().unwrap(),
    );
    assert_eq!(y_ref, 1.1);
    assert!(se > 0.0);
    assert!((y0 - 1.1).abs() <= 3.0 * se, "Y0 {y0} +- {se}");
    for file in ["table.csv", "rates.csv", "manifest.toml"] {
        assert!(dir.path().join("out").join(file).exists(), "{file}");
    }
}

#[test]
fn reruns_are_byte_identical() {
    let text = B1
        .replace("paths = 10000", "paths = 2000")
        .replace("steps = [32]", "steps = [8, 16]");
    let mut outputs = Vec::new();
    for threads in ["1", "2"] {
        let dir = TempDir::new().unwrap();
        let cfg = write_config(dir.path(), &text);
        let out = Command::new(env!("CARGO_BIN_EXE_fbsde"))
            .args(["run", cfg.to_str().unwrap(), "--dump-paths", "3"])
            .env("FBSDE_THREADS", threads)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let read = |f: &str| std::fs::read(dir.path().join("out").join(f)).unwrap();
        outputs.push((read("ledger.csv"), read("manifest.toml"), read("paths_n10_N16.csv")));
    }
    assert_eq!(outputs[0], outputs[1]);
    let manifest = String::from_utf8(outputs[0].1.clone()).unwrap();
    assert!(manifest.contains("config_sha256") && manifest.contains("seed = 11"));
    assert!(manifest.contains("paths_n10_N8.csv"));
}

#[test]
fn config_errors_exit_before_work() {
    let dir = TempDir::new().unwrap();
    for text in [
        B1.replace("steps = [32]", "steps = []"),
        B1.replace("levels = [10.0]", "levels = []"),
        B1.replace("seed = 11", ""),
        B1.replace("kind = \"gamma\"", "kind = \"stable\""),
    ] {
        let cfg = write_config(dir.path(), &text);
        for verb in ["run", "validate", "moments"] {
            let out = fbsde(&[verb, cfg.to_str().unwrap()]);
            assert_eq!(
                out.status.code(),
                Some(2),
                "{verb}: {}",
                String::from_utf8_lossy(&out.stderr)
            );
        }
        assert!(!dir.path().join("out").exists());
    }
    let out = fbsde(&["run", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn failing_cells_are_recorded_and_exit_three() {
    // A strongly nonlinear generator on a coarse grid makes the Picard iteration diverge.
    let text = B1
        .replace(
            "name = \"zero_generator\"",
            "name = \"stiff\"\nx0 = 0.0\na = \"0.3\"\nh = \"0.2\"\nf = \"-20 * y\"\nlipschitz = 20.0",
        )
        .replace("steps = [32]", "steps = [4, 64]")
        .replace("paths = 10000", "paths = 500")
        + "[reference]\nmode = \"fine\"\nsteps = 128\nlevel = 10.0\n";
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &text);
    let out = fbsde(&["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let ledger = dir.path().join("out/ledger.csv");
    let rows = read_ledger(&ledger);
    let status = column(&ledger, "status");
    assert_eq!(&rows[0][status], "failed");
    assert!(rows[0][column(&ledger, "message")].contains("fixed-point"));
    assert_eq!(&rows[1][status], "ok");
}

#[test]
fn moments_table_rows() {
    let text =
        B1.to_string() + "[moments]\nlevels = [0.0, 2.0, 4.0]\nrepresentations = [\"bondesson\", \"inverse_levy\"]\n";
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &text);
    let out = fbsde(&["moments", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let path = dir.path().join("out/moments.csv");
    let mut rdr = csv::Reader::from_path(&path).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(
        header,
        ["representation", "n", "sigma2", "sigma_p", "m1", "m_p", "zeta"]
    );
    let rows: Vec<(String, f64, f64)> = rdr
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].to_string(), r[1].parse().unwrap(), r[2].parse().unwrap())
        })
        .collect();
    let sigma2 = |rep: &str, n: f64| rows.iter().find(|r| r.0 == rep && r.1 == n).unwrap().2;
    // Full second moment of the gamma(1, 1) Lévy measure: ∫ e² e^{-e}/e de = 1.
    assert!((sigma2("bondesson", 0.0) - 1.0).abs() < 1e-8);
    assert!((sigma2("inverse_levy", 0.0) - 1.0).abs() < 1e-8);
    assert!((sigma2("bondesson", 2.0) - (-4.0f64).exp()).abs() < 1e-10);
    for n in [2.0, 4.0] {
        assert!(sigma2("inverse_levy", n) <= sigma2("bondesson", n));
    }
}

#[test]
fn validate_reports_assumption_violation() {
    let text =
        B1.replace(
            "kind = \"gamma\"\nalpha = 1.0\nbeta = 1.0\nrepresentation = \"bondesson\"",
            "kind = \"compound_poisson\"\natoms = [[-1.0, 1.0], [0.5, 1.0]]",
        )
        .replace(
            "name = \"zero_generator\"",
            "name = \"linear-jump\"\nx0 = 1.0\nh = \"x\"",
        ) + "[reference]\nmode = \"fine\"\nsteps = 64\nlevel = 10.0\n";
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &text);
    let out = fbsde(&["validate", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = String::from_utf8(out.stdout).unwrap();
    assert!(report.contains("FAIL at t = "), "{report}");
    assert!(report.contains("e = -1"), "{report}");
}
