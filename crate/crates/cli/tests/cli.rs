use std::path::Path;
use std::process::Command;

fn surfvor(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_surfvor"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn out_arg(dir: &Path) -> String {
    dir.to_string_lossy().into_owned()
}

#[test]
fn validate_planar_fixture_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let res = surfvor(&[
        "--fixture", "planar:600", "--random-sites", "15", "--mode", "validate", "--seed", "7", "--out",
        &out_arg(&out),
    ]);
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(res.status.success(), "{stdout}\n{}", String::from_utf8_lossy(&res.stderr));
    assert!(stdout.contains("compatibility: ok"), "{stdout}");
    for f in ["cells.obj", "cells.mtl", "bisectors.obj", "diagnostics.json", "sites.txt"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let diag: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("diagnostics.json")).unwrap()).unwrap();
    assert!(diag["coverage_rel_err"].as_f64().unwrap() < 1e-6);
}

#[test]
fn missing_sites_file_fails_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let missing = tmp.path().join("nope.txt");
    let res = surfvor(&["--fixture", "planar:200", "--sites", &out_arg(&missing), "--out", &out_arg(&out)]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("sites"));
    assert!(!out.exists());
}

#[test]
fn power_mode_rejects_unweighted_sites() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let res = surfvor(&["--fixture", "planar:200", "--random-sites", "5", "--mode", "power", "--out", &out_arg(&out)]);
    assert!(!res.status.success());
    assert!(!out.exists());
}

#[test]
fn density_requires_euclidean_solver() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let res = surfvor(&[
        "--fixture", "icosphere:2", "--random-sites", "5", "--solver", "fmm", "--density", "constant:2", "--out",
        &out_arg(&out),
    ]);
    assert!(!res.status.success());
    assert!(!out.exists());
}

#[test]
fn identical_runs_give_identical_exports() {
    let tmp = tempfile::tempdir().unwrap();
    let sites = tmp.path().join("sites.txt");
    std::fs::write(&sites, "p 3 0.2 0.3 0.5\np 40 0.6 0.2 0.2 0.01\np 200 0.1 0.1 0.8\np 300 0.3 0.3 0.4\n").unwrap();
    let mut runs = Vec::new();
    for (i, threads) in ["1", "4"].iter().enumerate() {
        let out = tmp.path().join(format!("run{i}"));
        let res = surfvor(&[
            "--fixture", "icosphere:3", "--sites", &out_arg(&sites), "--mode", "remesh", "--threads", threads,
            "--out", &out_arg(&out),
        ]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
        runs.push(out);
    }
    for f in ["cells.obj", "cells.mtl", "bisectors.obj", "dual.obj", "diagnostics.json"] {
        let a = std::fs::read(runs[0].join(f)).unwrap();
        let b = std::fs::read(runs[1].join(f)).unwrap();
        assert!(a == b, "{f} differs between runs");
    }
}

#[test]
fn bench_prints_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("bench");
    let res = surfvor(&["--fixture", "icosphere:3", "--mode", "bench", "--site-counts", "10,40", "--out", &out_arg(&out)]);
    assert!(res.status.success());
    let stdout = String::from_utf8_lossy(&res.stdout);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines[0], "mesh,faces,sites,solver,wall_ms,peak_survivors");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("icosphere:3,1280,10,euclidean,"));
    assert!(out.join("bench.csv").exists());
}
