use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lensless_cli::io::{decode_llv, encode_llv, read_llv};
use ndarray::Array3;

fn lensless(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lensless"))
        .args(args)
        .current_dir(dir)
        .env_remove("LENSLESS_OUT")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// All files under `dir` with their contents, sorted by relative path.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Single-plane scene on a 32x32 grid for the small, well-conditioned preset.
fn write_small_preset(dir: &Path, extra: &str) {
    let n = 32;
    let planes = Array3::from_shape_fn((2, n, n), |(k, i, j)| {
        if k == 0 {
            50.0
        } else {
            let (x, y) = (i as f64 / n as f64, j as f64 / n as f64);
            0.6 + 0.3 * (6.0 * x).sin() * (4.0 * y).cos() + 0.1 * x
        }
    });
    fs::write(dir.join("flat.llv"), encode_llv(&planes)).unwrap();
    let text = format!(
        "# one plane, mask features matching the sensor pitch\n\
         sensor_pixels = 64\nsensor_pitch_um = 10\nmask_order = 6\nmask_pitch_um = 10\n\
         baseline_mm = 0\nscene_angles = 32\nprojector_tan = 0.1\n\
         depth_near_cm = 50\ndepth_far_cm = 50\nrecon_planes = 1\nsim_planes = 1\n\
         pattern_k = 8\nscene_file = flat.llv\n{extra}"
    );
    fs::write(dir.join("small.cfg"), text).unwrap();
}

#[test]
fn default_preset_records_the_line_count() {
    let tmp = tempfile::tempdir().unwrap();
    let o = lensless(&["simulate", "--out", "run"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = fs::read_to_string(tmp.path().join("run/manifest.txt")).unwrap();
    assert!(manifest.contains("pattern_k = 24"));
    assert!(manifest.contains("(48 frames)"));
    assert!(manifest.contains("seed = 0"));
    assert!(manifest.lines().any(|l| l.starts_with("config_sha256 = ") && l.len() == 16 + 64));
    let patterns = read_llv(&tmp.path().join("run/patterns.llv")).unwrap();
    assert_eq!(patterns.dim(), (48, 64, 64));
    let frames = read_llv(&tmp.path().join("run/slanted_plane/measurements.llv")).unwrap();
    assert_eq!(frames.dim(), (48, 128, 128));
    let truth = read_llv(&tmp.path().join("run/slanted_plane/truth.llv")).unwrap();
    assert_eq!(truth.dim(), (15, 64, 64));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    write_small_preset(tmp.path(), "");
    for run in ["a", "b"] {
        for cmd in ["simulate", "reconstruct", "evaluate"] {
            let o = lensless(&[cmd, "--config", "small.cfg", "--out", run, "--seed", "7"], tmp.path());
            assert!(o.status.success(), "{cmd}: {}", stderr(&o));
        }
    }
    let a = snapshot(&tmp.path().join("a"));
    assert!(a.len() >= 9);
    assert_eq!(a, snapshot(&tmp.path().join("b")));

    let o = lensless(&["simulate", "--config", "small.cfg", "--out", "c", "--seed", "8"], tmp.path());
    assert!(o.status.success());
    let c = fs::read(tmp.path().join("c/flat/measurements.llv")).unwrap();
    assert_ne!(c, fs::read(tmp.path().join("a/flat/measurements.llv")).unwrap());
}

#[test]
fn small_noiseless_preset_recovers_the_scene() {
    let tmp = tempfile::tempdir().unwrap();
    write_small_preset(tmp.path(), "noise = false\nlambda_factors = 1e-8\nmax_iters = 500\nstep = lipschitz\n");
    for cmd in ["simulate", "reconstruct"] {
        let o = lensless(&[cmd, "--config", "small.cfg", "--out", "run"], tmp.path());
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
    }
    let truth = read_llv(&tmp.path().join("run/flat/truth.llv")).unwrap();
    let est = read_llv(&tmp.path().join("run/flat/volume.llv")).unwrap();
    assert_eq!(truth.dim(), (1, 32, 32));
    let err = (&est - &truth).mapv(|v| v * v).sum().sqrt() / truth.mapv(|v| v * v).sum().sqrt();
    assert!(err <= 1e-2, "relative error {err}");
}

#[test]
fn zero_iterations_write_the_initial_volume() {
    let tmp = tempfile::tempdir().unwrap();
    write_small_preset(tmp.path(), "lambda_factors = 0\nmax_iters = 0\n");
    for cmd in ["simulate", "reconstruct"] {
        let o = lensless(&[cmd, "--config", "small.cfg", "--out", "run"], tmp.path());
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
    }
    let vol = read_llv(&tmp.path().join("run/flat/volume.llv")).unwrap();
    assert!(vol.iter().all(|&v| v == 0.0));
    let report = fs::read_to_string(tmp.path().join("run/flat/report.txt")).unwrap();
    assert!(report.contains("iterations = 0\n"));
    assert!(report.contains("stop_reason = not_run\n"));
    // nothing to score in an empty volume
    let o = lensless(&["evaluate", "--config", "small.cfg", "--out", "run"], tmp.path());
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn corrupted_measurements_are_diagnosed() {
    let tmp = tempfile::tempdir().unwrap();
    write_small_preset(tmp.path(), "");
    assert!(lensless(&["simulate", "--config", "small.cfg", "--out", "run"], tmp.path()).status.success());
    let path = tmp.path().join("run/flat/measurements.llv");
    let mut bytes = fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 3);
    fs::write(&path, &bytes).unwrap();
    let o = lensless(&["reconstruct", "--config", "small.cfg", "--out", "run"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("payload"), "{}", stderr(&o));
    assert!(decode_llv(&bytes).is_err());

    fs::write(&path, b"not an array").unwrap();
    let o = lensless(&["reconstruct", "--config", "small.cfg", "--out", "run"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("magic"));

    fs::remove_file(&path).unwrap();
    let o = lensless(&["reconstruct", "--config", "small.cfg", "--out", "run"], tmp.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn missing_scene_file_leaves_no_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.cfg"), "seed = 3\nscene_file = nowhere.llv\n").unwrap();
    let o = lensless(&["simulate", "--config", "bad.cfg", "--out", "run"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
    assert!(!tmp.path().join("run").exists());
}

#[test]
fn config_errors_and_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("typo.cfg"), "baseline_mm = 50\nbaselin_mm = 20\n").unwrap();
    let o = lensless(&["simulate", "--config", "typo.cfg", "--out", "run"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2: unknown key `baselin_mm`"));

    let o = lensless(&["simulate", "--config", "absent.cfg", "--out", "run"], tmp.path());
    assert_eq!(o.status.code(), Some(3));

    let o = lensless(&["study", "--study", "colour_sweep", "--out", "run"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown study"));

    let o = lensless(&["simulate"], tmp.path());
    assert_eq!(o.status.code(), Some(2));

    let o = lensless(&["frobnicate"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn output_directory_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    write_small_preset(tmp.path(), "");
    let o = Command::new(env!("CARGO_BIN_EXE_lensless"))
        .args(["simulate", "--config", "small.cfg", "--out", "ignored", "--threads", "1"])
        .current_dir(tmp.path())
        .env("LENSLESS_OUT", tmp.path().join("from_env"))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(tmp.path().join("from_env/manifest.txt").is_file());
    assert!(!tmp.path().join("ignored").exists());
}
