use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn se2inv(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_se2inv"))
        .args(args)
        .current_dir(cwd)
        .env_remove("SE2INV_DESIGN_DIR")
        .output()
        .expect("spawn se2inv")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = se2inv(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str], cwd: &Path) -> i32 {
    se2inv(args, cwd).status.code().unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|x| x.unwrap().iter().map(str::to_owned).collect()).collect()
}

#[test]
fn gen_image_is_deterministic_and_validates_size() {
    let d = tempfile::tempdir().unwrap();
    ok(&["gen-image", "--seed", "4", "-o", "a.img"], d.path());
    ok(&["gen-image", "--seed", "4", "-o", "b.img"], d.path());
    ok(&["gen-image", "--seed", "5", "-o", "c.img"], d.path());
    let a = fs::read(d.path().join("a.img")).unwrap();
    assert_eq!(a, fs::read(d.path().join("b.img")).unwrap());
    assert_ne!(a, fs::read(d.path().join("c.img")).unwrap());
    ok(&["gen-image", "--seed", "4", "-o", "a.csv"], d.path());
    assert_eq!(csv_rows(&d.path().join("a.csv")).len() + 1, 101);
    assert_eq!(code(&["gen-image", "-n", "30", "-o", "x.img"], d.path()), 1);
}

#[test]
fn project_backproject_round_trip() {
    let d = tempfile::tempdir().unwrap();
    ok(&["gen-image", "--seed", "1", "-o", "a.img"], d.path());
    // Random images are built at bandlimit 16, so reprojecting there is nearly lossless.
    ok(&["project", "-i", "a.img", "-L", "16", "-o", "a.csv"], d.path());
    let rows = csv_rows(&d.path().join("a.csv"));
    assert_eq!(rows.len(), 289);
    ok(&["backproject", "-c", "a.csv", "-o", "b.img"], d.path());
    ok(&["project", "-i", "b.img", "-L", "16", "-o", "b.csv"], d.path());
    let again = csv_rows(&d.path().join("b.csv"));
    let num = |r: &Vec<String>, i: usize| r[i].parse::<f64>().unwrap();
    let (mut diff, mut norm) = (0.0, 0.0);
    for (x, y) in rows.iter().zip(&again) {
        assert_eq!(x[..2], y[..2]);
        diff += (num(x, 2) - num(y, 2)).powi(2) + (num(x, 3) - num(y, 3)).powi(2);
        norm += num(x, 2).powi(2) + num(x, 3).powi(2);
    }
    assert!((diff / norm).sqrt() < 0.1, "relative change {}", (diff / norm).sqrt());
    let stdout = ok(&["project", "-i", "a.img", "-L", "16"], d.path());
    assert_eq!(stdout, fs::read_to_string(d.path().join("a.csv")).unwrap());
}

#[test]
fn bispectrum_outputs_and_cache() {
    let d = tempfile::tempdir().unwrap();
    ok(&["gen-image", "--seed", "2", "-o", "a.img"], d.path());
    ok(&["project", "-i", "a.img", "-L", "6", "-o", "a.csv"], d.path());
    ok(&["bispectrum", "-c", "a.csv", "-o", "b.csv"], d.path());
    ok(&["bispectrum", "-i", "a.img", "-L", "6", "-o", "b.bsp"], d.path());
    assert!(!csv_rows(&d.path().join("b.csv")).is_empty());
    assert!(fs::metadata(d.path().join("b.bsp")).unwrap().len() > 0);

    ok(&["cg-table", "-L", "8", "-o", "cg.bin"], d.path());
    ok(&["bispectrum", "-c", "a.csv", "--cg-cache", "cg.bin", "-o", "c.csv"], d.path());
    assert_eq!(
        fs::read(d.path().join("b.csv")).unwrap(),
        fs::read(d.path().join("c.csv")).unwrap()
    );
    ok(&["cg-table", "-L", "4", "-o", "cg4.bin"], d.path());
    assert_eq!(code(&["bispectrum", "-c", "a.csv", "--cg-cache", "cg4.bin", "-o", "x.csv"], d.path()), 1);
    assert_eq!(code(&["bispectrum", "-c", "a.csv", "-i", "a.img", "-o", "x.csv"], d.path()), 1);
    assert_eq!(code(&["bispectrum", "-o", "x.csv"], d.path()), 1);
    fs::write(d.path().join("junk.bin"), b"not a table").unwrap();
    assert_eq!(code(&["bispectrum", "-c", "a.csv", "--cg-cache", "junk.bin", "-o", "x.csv"], d.path()), 1);
}

#[test]
fn invariance_rows_and_numerical_exit_code() {
    let d = tempfile::tempdir().unwrap();
    ok(&["gen-image", "--seed", "0", "-o", "a.img"], d.path());
    ok(
        &["invariance", "-i", "a.img", "-L", "6", "--samples", "8", "--t-max", "0,4", "-o", "inv.csv"],
        d.path(),
    );
    let rows = csv_rows(&d.path().join("inv.csv"));
    assert_eq!(rows.len(), 5);
    let mean = |kind: &str, size: f64| {
        rows.iter()
            .find(|r| r[0] == kind && r[1].parse::<f64>().unwrap() == size)
            .map(|r| r[2].parse::<f64>().unwrap())
            .unwrap()
    };
    assert!(mean("translation", 0.0) < 1e-12);
    let (rot, rigid0) = (mean("rotation", 0.0), mean("rigid", 0.0));
    assert!((rot - rigid0).abs() < 0.5 * rot.max(1e-3), "{rot} vs {rigid0}");

    // A 41-pixel image with the default margin has no interior signal reaching the quadrature.
    ok(&["gen-image", "-n", "41", "-o", "z.img"], d.path());
    assert_eq!(code(&["invariance", "-i", "z.img", "-L", "4", "--samples", "2"], d.path()), 2);
}

#[test]
fn config_dump_round_trip_and_rejection() {
    let d = tempfile::tempdir().unwrap();
    for cmd in ["invariance", "mra", "classify"] {
        let dumped = ok(&[cmd, "--dump-config", "--seed", "9"], d.path());
        let file = d.path().join(format!("{cmd}.json"));
        fs::write(&file, &dumped).unwrap();
        let again = ok(&[cmd, "--dump-config", "--config", file.to_str().unwrap()], d.path());
        assert_eq!(dumped, again);
        assert!(dumped.contains("\"seed\": 9"));
    }
    fs::write(d.path().join("bad.json"), r#"{"trails": 3}"#).unwrap();
    assert_eq!(code(&["mra", "--config", "bad.json", "--out-dir", "o"], d.path()), 1);
    assert_eq!(code(&["mra", "--config", "missing.json", "--out-dir", "o"], d.path()), 1);
}

#[test]
fn param_sweep_directory_handling() {
    let d = tempfile::tempdir().unwrap();
    fs::create_dir(d.path().join("imgs")).unwrap();
    fs::create_dir(d.path().join("empty")).unwrap();
    ok(&["gen-image", "--seed", "3", "-o", "imgs/a.img"], d.path());
    let out = ok(&["param-sweep", "--images-dir", "imgs", "--bandlimits", "6,10", "--lambdas", "1"], d.path());
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], "bandlimit,lambda,mean_error,images");
    assert_eq!(code(&["param-sweep", "--images-dir", "empty"], d.path()), 1);
    assert_eq!(code(&["param-sweep", "--images-dir", "nope"], d.path()), 1);
}

#[test]
fn noise_stats_single_image_reproducible() {
    let d = tempfile::tempdir().unwrap();
    let args = ["noise-stats", "-L", "5", "-n", "41", "--count", "1", "--seed", "7"];
    let a = ok(&args, d.path());
    assert_eq!(a, ok(&args, d.path()));
    assert_eq!(a.lines().count(), 7);
    ok(&["noise-stats", "-L", "5", "-n", "41", "--count", "2", "-o", "s.csv", "--pixel-out", "p.csv"], d.path());
    assert_eq!(csv_rows(&d.path().join("p.csv")).len(), 41 * 41);
    assert_eq!(code(&["noise-stats", "--count", "0"], d.path()), 1);
}

#[test]
fn small_mra_run_writes_reports() {
    let d = tempfile::tempdir().unwrap();
    let args = [
        "mra", "--out-dir", "m", "-N", "20", "--snr", "none,1", "--trials", "1", "-L", "4", "-n", "51",
    ];
    ok(&args, d.path());
    let sweep = csv_rows(&d.path().join("m/sweep.csv"));
    assert_eq!(sweep.len(), 2);
    assert_eq!(csv_rows(&d.path().join("m/trials.csv")).len(), 2);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.path().join("m/report.json")).unwrap()).unwrap();
    assert!(report.get("points").is_some());
    // Every column but the wall time must repeat exactly.
    let untimed = |rows: Vec<Vec<String>>| rows.into_iter().map(|mut r| { r.pop(); r }).collect::<Vec<_>>();
    let first = untimed(csv_rows(&d.path().join("m/trials.csv")));
    fs::remove_dir_all(d.path().join("m")).unwrap();
    ok(&args, d.path());
    assert_eq!(first, untimed(csv_rows(&d.path().join("m/trials.csv"))));
    assert_eq!(code(&["mra", "--out-dir", "m", "--trials", "0"], d.path()), 1);
}

#[test]
fn small_classify_run_histograms() {
    let d = tempfile::tempdir().unwrap();
    let args = [
        "classify", "--out-dir", "c", "--t-max", "0,5", "--classes", "3", "-N", "12", "-K", "2", "-L", "4",
        "--snr", "none",
    ];
    ok(&args, d.path());
    let hist = csv_rows(&d.path().join("c/histograms.csv"));
    let mut keys: Vec<(String, String)> = hist.iter().map(|r| (r[0].clone(), r[1].clone())).collect();
    keys.dedup();
    assert_eq!(keys.len(), 4);
    for key in &keys {
        let total: usize = hist
            .iter()
            .filter(|r| (&r[0], &r[1]) == (&key.0, &key.1))
            .map(|r| r[4].parse::<usize>().unwrap())
            .sum();
        assert_eq!(total, 12);
    }
    let first = fs::read(d.path().join("c/histograms.csv")).unwrap();
    ok(&args, d.path());
    assert_eq!(first, fs::read(d.path().join("c/histograms.csv")).unwrap());
    assert_eq!(code(&["classify", "--out-dir", "c", "--metrics", "euclid"], d.path()), 1);
}

#[test]
fn cg_table_check_and_usage_errors() {
    let d = tempfile::tempdir().unwrap();
    let out = ok(&["cg-table", "-L", "6", "--check"], d.path());
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["bandlimit"], 6);
    assert!(v["max_nullspace_residual"].as_f64().unwrap() < 1e-10);
    assert_eq!(code(&["frobnicate"], d.path()), 1);
    assert_eq!(code(&["--help"], d.path()), 0);
}
