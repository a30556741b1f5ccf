//! The four comparison studies. Each runs a list of conditions over the
//! configured scenes and writes one CSV row per condition.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use lensless_core::SolverReport;

use crate::config::{ExperimentConfig, MaskChoice, PatternChoice};
use crate::error::CliError;
use crate::experiment::{evaluate, load_scenes, reconstruct, scene_seed, simulate, Instrument, Setup};
use crate::io;

pub const STUDIES: [&str; 4] = ["pattern_count", "baseline_sweep", "pinhole_vs_mls", "sweepcam_vs_coded"];

pub const CSV_HEADER: [&str; 7] = [
    "condition",
    "scenes",
    "lambda_factor",
    "depth_rmse_cm",
    "ssim",
    "objective_decreased",
    "runtime_s",
];

/// A named change to the base config.
#[derive(Debug, Clone)]
pub struct Condition {
    pub label: String,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionResult {
    pub label: String,
    pub scenes: usize,
    /// The lambda factor with the lowest mean depth RMSE.
    pub lambda_factor: f64,
    pub depth_rmse_cm: f64,
    pub ssim: f64,
    /// Final objective at or below the initial one in every solve.
    pub objective_decreased: bool,
    pub runtime_s: f64,
}

fn lines(base: &ExperimentConfig, k: usize) -> ExperimentConfig {
    ExperimentConfig { patterns: PatternChoice::Lines, pattern_k: k, ..base.clone() }
}

/// Conditions of a study, sorted by label.
pub fn conditions(study: &str, base: &ExperimentConfig) -> Result<Vec<Condition>, CliError> {
    let c = |label: &str, config: ExperimentConfig| Condition { label: label.to_string(), config };
    let mut list = match study {
        "pattern_count" => vec![
            c("uniform_1", ExperimentConfig { patterns: PatternChoice::Uniform, ..base.clone() }),
            c("lines_16", lines(base, 8)),
            c("lines_48", lines(base, 24)),
            c("dots_64", ExperimentConfig { patterns: PatternChoice::Dots, pattern_k: 8, ..base.clone() }),
            c("random_48", ExperimentConfig { patterns: PatternChoice::Random, random_count: 48, ..base.clone() }),
        ],
        "baseline_sweep" => [0.0, 25.0, 50.0, 75.0]
            .iter()
            .map(|&b| c(&format!("baseline_{b:03}mm"), ExperimentConfig { baseline_mm: b, ..lines(base, 24) }))
            .collect(),
        "pinhole_vs_mls" => [("mask_mls", MaskChoice::Mls), ("mask_pinhole", MaskChoice::Pinhole)]
            .iter()
            .map(|&(label, mask)| c(label, ExperimentConfig { mask, noise: false, ..lines(base, 24) }))
            .collect(),
        "sweepcam_vs_coded" => vec![
            c("coded_lines_48", lines(base, 24)),
            c(
                "sweepcam_48",
                ExperimentConfig {
                    patterns: PatternChoice::Sweep,
                    sweep_positions: 48,
                    sweep_range_mm: 2.88,
                    ..base.clone()
                },
            ),
        ],
        other => {
            return Err(CliError::Config(format!(
                "unknown study `{other}`; expected one of {}",
                STUDIES.join(", ")
            )))
        }
    };
    for cond in &list {
        cond.config.validate()?;
    }
    list.sort_by(|a, b| a.label.cmp(&b.label));
    Ok(list)
}

/// Solver summary as `key = value` lines.
pub fn report_text(report: &SolverReport, lambda_factor: f64) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "lambda = {:e}", report.lambda);
    let _ = writeln!(s, "lambda_factor = {lambda_factor:e}");
    let _ = writeln!(s, "tv_smoothing = {:e}", report.tv_smoothing);
    let _ = writeln!(s, "step = {:e}", report.step);
    let _ = writeln!(s, "iterations = {}", report.iterations);
    let _ = writeln!(s, "stop_reason = {}", report.stop_reason.name());
    let _ = writeln!(s, "restarts = {}", report.restarts);
    let _ = writeln!(s, "initial_objective = {:e}", report.initial_objective());
    let _ = writeln!(s, "final_objective = {:e}", report.final_objective());
    let _ = writeln!(s, "data_residual = {:e}", report.data_residual);
    let _ = writeln!(s, "tv_value = {:e}", report.tv_value);
    let trace: Vec<String> = report.objective_trace.iter().map(|v| format!("{v:e}")).collect();
    let _ = writeln!(s, "objective_trace = {}", trace.join(" "));
    s
}

struct SceneOutput {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

/// Runs one condition; per-scene outputs of the selected lambda go under
/// `dir/<scene>/`.
pub fn run_condition(cond: &Condition, dir: &Path) -> Result<ConditionResult, CliError> {
    let start = Instant::now();
    let cfg = &cond.config;
    let setup = Setup::new(cfg)?;
    let sim_instrument = Instrument::build(cfg, &setup, &setup.sim_grid)?;
    let recon_instrument = Instrument::build(cfg, &setup, &setup.recon_grid)?;
    let scenes = load_scenes(cfg)?;
    let sims = scenes
        .iter()
        .enumerate()
        .map(|(i, s)| simulate(cfg, &setup, &sim_instrument, s, scene_seed(cfg, i)))
        .collect::<Result<Vec<_>, _>>()?;

    let mut best: Option<(f64, f64, f64, bool, Vec<SceneOutput>)> = None;
    for &factor in &cfg.lambda_factors {
        let (mut rmse, mut ssim, mut decreased) = (0.0, 0.0, true);
        let mut outputs = Vec::new();
        for (scene, sim) in scenes.iter().zip(&sims) {
            let rec = reconstruct(cfg, &setup.recon_grid, &recon_instrument, &sim.measurements, factor)?;
            let (metrics, depth, aif) = evaluate(scene, sim.exposure, &rec.volume)?;
            rmse += metrics.depth_rmse_cm;
            ssim += metrics.ssim;
            decreased &= rec.report.final_objective() <= rec.report.initial_objective();
            let mut report = report_text(&rec.report, factor);
            let _ = writeln!(report, "depth_rmse_cm = {:e}", metrics.depth_rmse_cm);
            let _ = writeln!(report, "ssim = {:e}", metrics.ssim);
            outputs.push(SceneOutput {
                dir: dir.join(&scene.name),
                files: vec![
                    ("volume.llv".into(), io::encode_llv(&rec.volume.planes)),
                    ("depth.pgm".into(), io::depth_pgm(&depth.depth_cm, &depth.valid)),
                    ("aif.pgm".into(), io::intensity_pgm(&aif)),
                    ("report.txt".into(), report.into_bytes()),
                ],
            });
        }
        let n = scenes.len() as f64;
        let (rmse, ssim) = (rmse / n, ssim / n);
        if best.as_ref().is_none_or(|b| rmse < b.1) {
            best = Some((factor, rmse, ssim, decreased, outputs));
        }
    }
    let (factor, rmse, ssim, decreased, outputs) = best.expect("config holds at least one lambda factor");
    for out in outputs {
        fs::create_dir_all(&out.dir).map_err(|e| CliError::io(&out.dir, e))?;
        for (name, bytes) in out.files {
            io::write_bytes(&out.dir.join(name), &bytes)?;
        }
    }
    Ok(ConditionResult {
        label: cond.label.clone(),
        scenes: scenes.len(),
        lambda_factor: factor,
        depth_rmse_cm: rmse,
        ssim,
        objective_decreased: decreased,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

pub fn csv_rows(results: &[ConditionResult]) -> Vec<Vec<String>> {
    results
        .iter()
        .map(|r| {
            vec![
                r.label.clone(),
                r.scenes.to_string(),
                format!("{:e}", r.lambda_factor),
                format!("{:.6}", r.depth_rmse_cm),
                format!("{:.6}", r.ssim),
                r.objective_decreased.to_string(),
                format!("{:.3}", r.runtime_s),
            ]
        })
        .collect()
}

/// Runs every condition of `study` (or only those in `only`) and writes
/// `out/<study>.csv`, `out/<study>/<condition>/<scene>/...` and
/// `out/<study>/manifest.txt`.
pub fn run_study(
    study: &str,
    base: &ExperimentConfig,
    out: &Path,
    only: Option<&[&str]>,
) -> Result<Vec<ConditionResult>, CliError> {
    let mut conds = conditions(study, base)?;
    if let Some(names) = only {
        conds.retain(|c| names.contains(&c.label.as_str()));
    }
    let root = out.join(study);
    fs::create_dir_all(&root).map_err(|e| CliError::io(&root, e))?;
    let mut results = Vec::new();
    let mut files = vec![format!("{study}.csv")];
    for cond in &conds {
        let dir = root.join(&cond.label);
        results.push(run_condition(cond, &dir)?);
        files.push(format!("{study}/{}/", cond.label));
    }
    let csv = io::csv_text(&CSV_HEADER, &csv_rows(&results))?;
    io::write_bytes(&out.join(format!("{study}.csv")), csv.as_bytes())?;
    let config_text = base.canonical_text();
    let mut manifest = io::manifest_text(&format!("study {study}"), &config_text, base.seed, &files);
    manifest.push_str("\n[conditions]\n");
    for cond in &conds {
        let _ = writeln!(manifest, "{} = sha256 {}", cond.label, io::sha256_hex(cond.config.canonical_text().as_bytes()));
    }
    io::write_bytes(&root.join("manifest.txt"), manifest.as_bytes())?;
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conditions_are_sorted_and_named() {
        let base = ExperimentConfig::default();
        let labels = |s: &str| conditions(s, &base).unwrap().into_iter().map(|c| c.label).collect::<Vec<_>>();
        assert_eq!(
            labels("baseline_sweep"),
            ["baseline_000mm", "baseline_025mm", "baseline_050mm", "baseline_075mm"]
        );
        assert_eq!(labels("pattern_count"), ["dots_64", "lines_16", "lines_48", "random_48", "uniform_1"]);
        assert_eq!(labels("pinhole_vs_mls"), ["mask_mls", "mask_pinhole"]);
        assert_eq!(labels("sweepcam_vs_coded"), ["coded_lines_48", "sweepcam_48"]);
        assert!(matches!(conditions("nope", &base), Err(CliError::Config(_))));
    }

    #[test]
    fn study_settings() {
        let base = ExperimentConfig::default();
        let b: Vec<f64> = conditions("baseline_sweep", &base).unwrap().iter().map(|c| c.config.baseline_mm).collect();
        assert_eq!(b, [0.0, 25.0, 50.0, 75.0]);
        for c in conditions("pinhole_vs_mls", &base).unwrap() {
            assert!(!c.config.noise);
        }
        let sweep = &conditions("sweepcam_vs_coded", &base).unwrap()[1];
        assert_eq!(sweep.config.sweep_positions, 48);
        assert_eq!(sweep.config.sweep_range_mm, 2.88);
    }
}
