//! `simulate`, `reconstruct` and `evaluate`.
//!
//! All three work inside one output directory:
//!
//! ```text
//! manifest.txt            simulate manifest
//! patterns.llv            projector patterns (coded illumination only)
//! shifts.csv              mask positions (mask sweep only)
//! <scene>/measurements.llv
//! <scene>/truth.llv       ground truth on the simulation grid
//! <scene>/scene.txt       exposure factor
//! <scene>/volume.llv      written by reconstruct
//! <scene>/depth.pgm
//! <scene>/aif.pgm
//! <scene>/report.txt
//! metrics.csv             written by evaluate
//! ```

use std::fs;
use std::path::Path;

use lensless_core::MeasurementSet;
use ndarray::Array3;

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::experiment::{evaluate, load_scenes, reconstruct, scene_seed, simulate, Instrument, Setup};
use crate::io;
use crate::study::report_text;

fn write_all(out: &Path, files: Vec<(String, Vec<u8>)>) -> Result<Vec<String>, CliError> {
    let mut names = Vec::new();
    for (name, bytes) in files {
        let path = out.join(&name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        io::write_bytes(&path, &bytes)?;
        names.push(name);
    }
    Ok(names)
}

/// Everything is computed before the first file is written, so a failed
/// run leaves no outputs behind.
pub fn run_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<String>, CliError> {
    let setup = Setup::new(cfg)?;
    let instrument = Instrument::build(cfg, &setup, &setup.sim_grid)?;
    let scenes = load_scenes(cfg)?;
    let mut files = Vec::new();
    match instrument.sequence() {
        Some(seq) => {
            let n = seq.size();
            let mut stack = Array3::zeros((seq.len(), n, n));
            for (i, p) in seq.patterns.iter().enumerate() {
                stack.index_axis_mut(ndarray::Axis(0), i).assign(&p.matrix().mapv(f64::from));
            }
            files.push(("patterns.llv".to_string(), io::encode_llv(&stack)));
        }
        None => {
            let shifts = lensless_core::forward::sweep_shifts(cfg.sweep_positions, cfg.sweep_range_mm);
            let rows: Vec<Vec<String>> = shifts
                .iter()
                .enumerate()
                .map(|(i, (a, b))| vec![i.to_string(), format!("{a:e}"), format!("{b:e}")])
                .collect();
            files.push(("shifts.csv".to_string(), io::csv_text(&["frame", "row_mm", "col_mm"], &rows)?.into_bytes()));
        }
    }
    for (i, scene) in scenes.iter().enumerate() {
        let sim = simulate(cfg, &setup, &instrument, scene, scene_seed(cfg, i))?;
        files.push((format!("{}/measurements.llv", scene.name), io::encode_llv(&sim.measurements.frames)));
        files.push((format!("{}/truth.llv", scene.name), io::encode_llv(&sim.truth.planes)));
        files.push((format!("{}/scene.txt", scene.name), format!("exposure = {:e}\n", sim.exposure).into_bytes()));
    }
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut names = write_all(out, files)?;
    let manifest = io::manifest_text(&format!("simulate ({} frames)", instrument.frame_count()), &cfg.canonical_text(), cfg.seed, &names);
    io::write_bytes(&out.join("manifest.txt"), manifest.as_bytes())?;
    names.push("manifest.txt".into());
    Ok(names)
}

/// Reconstructs every scene from `<out>/<scene>/measurements.llv` with the
/// first lambda factor of the config.
pub fn run_reconstruct(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<String>, CliError> {
    let setup = Setup::new(cfg)?;
    let instrument = Instrument::build(cfg, &setup, &setup.recon_grid)?;
    let scenes = load_scenes(cfg)?;
    let factor = cfg.lambda_factors[0];
    let mut files = Vec::new();
    for scene in &scenes {
        let frames = io::read_llv(&out.join(&scene.name).join("measurements.llv"))?;
        let measurements = MeasurementSet { frames, noise: None };
        let rec = reconstruct(cfg, &setup.recon_grid, &instrument, &measurements, factor)?;
        let (depth, aif) = lensless_core::eval::extract_depth_and_aif(&rec.volume);
        files.push((format!("{}/volume.llv", scene.name), io::encode_llv(&rec.volume.planes)));
        files.push((format!("{}/depth.pgm", scene.name), io::depth_pgm(&depth.depth_cm, &depth.valid)));
        files.push((format!("{}/aif.pgm", scene.name), io::intensity_pgm(&aif)));
        files.push((format!("{}/report.txt", scene.name), report_text(&rec.report, factor).into_bytes()));
    }
    write_all(out, files)
}

fn read_exposure(path: &Path) -> Result<f64, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .find_map(|l| l.strip_prefix("exposure = "))
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| CliError::Config(format!("{}: no exposure line", path.display())))
}

/// Scores every reconstructed scene against its ground truth and writes
/// `metrics.csv`.
pub fn run_evaluate(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<String>, CliError> {
    let setup = Setup::new(cfg)?;
    let scenes = load_scenes(cfg)?;
    let mut rows = Vec::new();
    for scene in &scenes {
        let dir = out.join(&scene.name);
        let planes = io::read_llv(&dir.join("volume.llv"))?;
        let volume = lensless_core::SceneVolume::new(planes, setup.recon_grid.clone())
            .map_err(|e| CliError::Config(format!("{}: {e}", dir.join("volume.llv").display())))?;
        let exposure = read_exposure(&dir.join("scene.txt"))?;
        let (metrics, _, _) = evaluate(scene, exposure, &volume)?;
        let residuals: Vec<String> = metrics.per_plane_residuals.iter().map(|r| format!("{r:e}")).collect();
        rows.push(vec![
            scene.name.clone(),
            format!("{:.6}", metrics.depth_rmse_cm),
            format!("{:.6}", metrics.ssim),
            residuals.join(" "),
        ]);
    }
    let csv = io::csv_text(&["scene", "depth_rmse_cm", "ssim", "plane_residuals"], &rows)?;
    io::write_bytes(&out.join("metrics.csv"), csv.as_bytes())?;
    Ok(vec!["metrics.csv".into()])
}
