//! Simulation, reconstruction and scoring of one scene under one config.

use lensless_core::eval::{depth_rmse, extract_depth_and_aif, per_plane_residuals, ssim};
use lensless_core::forward::{add_noise, sweep_shifts};
use lensless_core::optics::build_system_matrices;
use lensless_core::patterns::{
    make_mask, random_sequence, shifting_dots_sequence, shifting_lines_sequence, uniform_sequence,
    MaskParams,
};
use lensless_core::recon::{intensity_scale_estimate, solve};
use lensless_core::{
    CameraGeometry, CodedIllumination, DepthGrid, DepthMap, IlluminationSequence, MaskSpec, MaskSweep, MeasurementSet, MetricReport, NoiseModel, ReconProblem, SceneOperator,
    SceneVolume, SolverReport, StepRule, SystemModel,
};
use ndarray::Array2;

use crate::config::{ExperimentConfig, MaskChoice, PatternChoice, SceneChoice, StepChoice};
use crate::error::CliError;
use crate::io;
use crate::scenes::{SceneKind, SyntheticScene};

/// Geometry, mask and depth grids derived from a config.
#[derive(Debug, Clone)]
pub struct Setup {
    pub geometry: CameraGeometry,
    pub mask: MaskSpec,
    pub sim_grid: DepthGrid,
    pub recon_grid: DepthGrid,
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        let geometry = CameraGeometry {
            sensor_pixels: cfg.sensor_pixels,
            sensor_pitch_um: cfg.sensor_pitch_um,
            mask_features: cfg.mask_features(),
            mask_pitch_um: cfg.mask_pitch_um,
            mask_distance_mm: cfg.mask_distance_mm,
            baseline_mm: cfg.baseline_mm,
            axial_offset_mm: cfg.axial_offset_mm,
            scene_angles: cfg.scene_angles,
            projector_half_fov: cfg.projector_tan.atan(),
        };
        geometry.validate()?;
        let near = cfg.depth_near_cm * 10.0;
        let far = cfg.depth_far_cm * 10.0;
        let params = match cfg.mask {
            MaskChoice::Mls => MaskParams::Mls { order: cfg.mask_order },
            MaskChoice::Pinhole => {
                let features = cfg.mask_features();
                // Open the feature that images the mid-depth, on-axis ray at
                // the sensor centre, so the baseline does not push the image
                // off the sensor.
                let z_mid = 0.5 * (near + far) + cfg.axial_offset_mm;
                let offset = (cfg.mask_distance_mm * cfg.baseline_mm / (z_mid * geometry.mask_pitch_mm())).round();
                let centre = (features / 2) as f64;
                let row = (centre + offset).clamp(0.0, (features - 1) as f64) as usize;
                MaskParams::Pinhole { features, row_index: row, col_index: features / 2 }
            }
        };
        let mask = make_mask(params, cfg.mask_pitch_um)?;
        Ok(Setup {
            geometry,
            mask,
            sim_grid: DepthGrid::linspace(near, far, cfg.sim_planes)?,
            recon_grid: DepthGrid::linspace(near, far, cfg.recon_planes)?,
        })
    }
}

/// The acquisition for one depth grid: either coded illumination through a
/// fixed mask, or a uniformly lit scene seen through a moving mask.
pub enum Instrument {
    Coded {
        model: SystemModel,
        sequence: IlluminationSequence,
    },
    Sweep(MaskSweep),
}

impl Instrument {
    pub fn build(cfg: &ExperimentConfig, setup: &Setup, grid: &DepthGrid) -> Result<Self, CliError> {
        let n = cfg.scene_angles;
        let sequence = match cfg.patterns {
            PatternChoice::Sweep => {
                let shifts = sweep_shifts(cfg.sweep_positions, cfg.sweep_range_mm);
                return Ok(Instrument::Sweep(MaskSweep::new(&setup.geometry, &setup.mask, grid, &shifts)?));
            }
            PatternChoice::Uniform => uniform_sequence(n)?,
            PatternChoice::Lines => shifting_lines_sequence(n, cfg.pattern_k)?,
            PatternChoice::Dots => shifting_dots_sequence(n, cfg.pattern_k)?,
            PatternChoice::Random => random_sequence(n, cfg.random_count, cfg.seed)?,
        };
        let model = build_system_matrices(&setup.geometry, &setup.mask, grid)?;
        Ok(Instrument::Coded { model, sequence })
    }

    pub fn operator(&self) -> Result<Box<dyn SceneOperator + '_>, CliError> {
        Ok(match self {
            Instrument::Coded { model, sequence } => Box::new(CodedIllumination::new(model, sequence)?),
            Instrument::Sweep(sweep) => Box::new(sweep),
        })
    }

    pub fn frame_count(&self) -> usize {
        match self {
            Instrument::Coded { sequence, .. } => sequence.len(),
            Instrument::Sweep(sweep) => sweep.models().len(),
        }
    }

    pub fn sequence(&self) -> Option<&IlluminationSequence> {
        match self {
            Instrument::Coded { sequence, .. } => Some(sequence),
            Instrument::Sweep(_) => None,
        }
    }
}

/// Measurements of one scene, with the exposure-scaled ground truth.
pub struct Simulation {
    pub truth: SceneVolume,
    pub measurements: MeasurementSet,
    /// Factor applied to the scene texture so the brightest clean pixel
    /// equals `peak_signal`.
    pub exposure: f64,
}

pub fn noise_model(cfg: &ExperimentConfig, seed: u64) -> Option<NoiseModel> {
    cfg.noise.then_some(NoiseModel {
        full_well: cfg.full_well,
        gain: cfg.gain,
        dynamic_range_db: cfg.dynamic_range_db,
        seed,
    })
}

pub fn simulate(
    cfg: &ExperimentConfig,
    setup: &Setup,
    instrument: &Instrument,
    scene: &SyntheticScene,
    noise_seed: u64,
) -> Result<Simulation, CliError> {
    let op = instrument.operator()?;
    let raw = scene.voxelize(&setup.sim_grid);
    let clean = op.apply(raw.planes.view())?;
    let peak = clean.iter().copied().fold(0.0f64, f64::max);
    if peak <= 0.0 {
        return Err(CliError::Numerical("scene produces no signal on the sensor".into()));
    }
    let exposure = cfg.peak_signal / peak;
    let truth = SceneVolume::new(raw.planes * exposure, setup.sim_grid.clone())?;
    let clean = MeasurementSet { frames: clean * exposure, noise: None };
    let measurements = match noise_model(cfg, noise_seed) {
        Some(nm) => add_noise(&clean, &nm)?,
        None => clean,
    };
    Ok(Simulation { truth, measurements, exposure })
}

pub struct Reconstruction {
    pub volume: SceneVolume,
    pub report: SolverReport,
}

pub fn reconstruct(
    cfg: &ExperimentConfig,
    grid: &DepthGrid,
    instrument: &Instrument,
    measurements: &MeasurementSet,
    lambda_factor: f64,
) -> Result<Reconstruction, CliError> {
    let op = instrument.operator()?;
    if measurements.frames.dim() != op.frames_dim() {
        return Err(CliError::Config(format!(
            "measurements are {:?} but the config expects {:?}",
            measurements.frames.dim(),
            op.frames_dim()
        )));
    }
    if measurements.frames.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Numerical("measurements contain non-finite values".into()));
    }
    let back = op.adjoint(measurements.frames.view())?;
    let lambda = lambda_factor * back.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = intensity_scale_estimate(op.as_ref(), measurements.frames.view());
    let mut problem = ReconProblem::new(op.as_ref(), measurements, lambda);
    problem.tv_smoothing = cfg.tv_eps_rel * if scale > 0.0 { scale } else { 1.0 };
    problem.depth_weight = cfg.depth_weight;
    problem.tolerance = cfg.tolerance;
    let rule = match cfg.step {
        StepChoice::Lipschitz => StepRule::Lipschitz,
        StepChoice::Backtracking => StepRule::Backtracking,
    };
    let (planes, report) = solve(&problem, cfg.max_iters, rule)?;
    Ok(Reconstruction { volume: SceneVolume::new(planes, grid.clone())?, report })
}

/// Depth RMSE against the scene's depth map, SSIM of the max-normalized
/// all-in-focus image against the max-normalized texture, and per-plane
/// residuals against the scene voxelized on the reconstruction grid.
pub fn evaluate(
    scene: &SyntheticScene,
    exposure: f64,
    volume: &SceneVolume,
) -> Result<(MetricReport, DepthMap, Array2<f64>), CliError> {
    let (depth, aif) = extract_depth_and_aif(volume);
    let reference = DepthMap {
        depth_cm: scene.depth_cm.clone(),
        valid: scene.texture.mapv(|t| t > 0.0),
    };
    let rmse = depth_rmse(&depth, &reference)?;
    let normalize = |a: &Array2<f64>| {
        let m = a.iter().copied().fold(0.0f64, f64::max);
        if m > 0.0 {
            a / m
        } else {
            a.clone()
        }
    };
    let score = ssim(normalize(&aif).view(), normalize(&scene.texture).view(), 1.0)?;
    let expected = scene.voxelize(&volume.depths).planes * exposure;
    let residuals = per_plane_residuals(volume.planes.view(), expected.view())?;
    Ok((
        MetricReport { depth_rmse_cm: rmse, ssim: score, per_plane_residuals: residuals },
        depth,
        aif,
    ))
}

/// Scenes selected by the config, in a fixed order.
pub fn load_scenes(cfg: &ExperimentConfig) -> Result<Vec<SyntheticScene>, CliError> {
    let n = cfg.scene_angles;
    match &cfg.scene {
        SceneChoice::All => Ok(SceneKind::ALL
            .iter()
            .map(|&k| SyntheticScene::generate(k, n, cfg.depth_near_cm, cfg.depth_far_cm))
            .collect()),
        SceneChoice::Builtin(k) => Ok(vec![SyntheticScene::generate(*k, n, cfg.depth_near_cm, cfg.depth_far_cm)]),
        SceneChoice::File(path) => {
            let planes = io::read_llv(path)?;
            let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scene");
            let scene = SyntheticScene::from_planes(name, &planes)?;
            if scene.size() != n {
                return Err(CliError::Config(format!(
                    "scene file is {0}x{0} but scene_angles is {n}",
                    scene.size()
                )));
            }
            Ok(vec![scene])
        }
    }
}

/// Noise seed for the `index`-th scene of a run.
pub fn scene_seed(cfg: &ExperimentConfig, index: usize) -> u64 {
    cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64)
}
