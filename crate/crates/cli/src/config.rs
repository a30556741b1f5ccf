//! Flat `key = value` experiment configuration.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! Unknown keys, duplicates and malformed values are reported with their
//! line number. Every key has a default (the desk preset), so an empty
//! file is valid.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `sensor_pixels` | 128 | sensor size M (M x M) |
//! | `sensor_pitch_um` | 4.8 | sensor pixel pitch |
//! | `mask` | `mls` | `mls` or `pinhole` |
//! | `mask_order` | 9 | MLS order r; the mask has 2^r - 1 features |
//! | `mask_pitch_um` | 60 | mask feature pitch |
//! | `mask_distance_mm` | 2 | mask-to-sensor distance d |
//! | `baseline_mm` | 50 | camera-projector baseline B |
//! | `axial_offset_mm` | 0 | projector axial offset |
//! | `scene_angles` | 64 | projector grid size N |
//! | `projector_tan` | 0.1 | tangent of the projector half field of view |
//! | `depth_near_cm`, `depth_far_cm` | 40, 60 | depth range |
//! | `recon_planes` | 5 | reconstruction depth planes |
//! | `sim_planes` | 15 | simulation depth planes |
//! | `patterns` | `lines` | `uniform`, `lines`, `dots`, `random` or `sweep` |
//! | `pattern_k` | 24 | line/dot spacing k |
//! | `random_count` | 48 | frames for `random` |
//! | `sweep_positions` | 48 | mask positions for `sweep` |
//! | `sweep_range_mm` | 2.88 | side of the square swept by the mask |
//! | `noise` | `true` | add sensor noise |
//! | `full_well` | 20000 | electrons at saturation |
//! | `gain` | 1 | sensor gain |
//! | `dynamic_range_db` | 60 | sets the read noise |
//! | `peak_signal` | 1 | brightest clean pixel after exposure scaling |
//! | `lambda_factors` | `0.0001` | TV weights relative to max abs(A^T y); a list selects the best |
//! | `tv_eps_rel` | 0.0001 | TV smoothing relative to the intensity scale |
//! | `depth_weight` | 1 | TV weight on depth differences |
//! | `max_iters` | 150 | solver iterations |
//! | `tolerance` | 0 | relative objective change that stops the solver |
//! | `step` | `backtracking` | `lipschitz` or `backtracking` |
//! | `scene` | `all` | a built-in scene name or `all` |
//! | `scene_file` | (none) | two-plane LLV file: depth (cm) and texture |
//! | `seed` | 0 | noise and pattern seed |

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::CliError;
use crate::scenes::SceneKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskChoice {
    Mls,
    Pinhole,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternChoice {
    Uniform,
    Lines,
    Dots,
    Random,
    Sweep,
}

impl PatternChoice {
    pub fn name(self) -> &'static str {
        match self {
            PatternChoice::Uniform => "uniform",
            PatternChoice::Lines => "lines",
            PatternChoice::Dots => "dots",
            PatternChoice::Random => "random",
            PatternChoice::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepChoice {
    Lipschitz,
    Backtracking,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SceneChoice {
    All,
    Builtin(SceneKind),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub sensor_pixels: usize,
    pub sensor_pitch_um: f64,
    pub mask: MaskChoice,
    pub mask_order: u32,
    pub mask_pitch_um: f64,
    pub mask_distance_mm: f64,
    pub baseline_mm: f64,
    pub axial_offset_mm: f64,
    pub scene_angles: usize,
    pub projector_tan: f64,
    pub depth_near_cm: f64,
    pub depth_far_cm: f64,
    pub recon_planes: usize,
    pub sim_planes: usize,
    pub patterns: PatternChoice,
    pub pattern_k: usize,
    pub random_count: usize,
    pub sweep_positions: usize,
    pub sweep_range_mm: f64,
    pub noise: bool,
    pub full_well: f64,
    pub gain: f64,
    pub dynamic_range_db: f64,
    pub peak_signal: f64,
    pub lambda_factors: Vec<f64>,
    pub tv_eps_rel: f64,
    pub depth_weight: f64,
    pub max_iters: usize,
    pub tolerance: f64,
    pub step: StepChoice,
    pub scene: SceneChoice,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            sensor_pixels: 128,
            sensor_pitch_um: 4.8,
            mask: MaskChoice::Mls,
            mask_order: 9,
            mask_pitch_um: 60.0,
            mask_distance_mm: 2.0,
            baseline_mm: 50.0,
            axial_offset_mm: 0.0,
            scene_angles: 64,
            projector_tan: 0.1,
            depth_near_cm: 40.0,
            depth_far_cm: 60.0,
            recon_planes: 5,
            sim_planes: 15,
            patterns: PatternChoice::Lines,
            pattern_k: 24,
            random_count: 48,
            sweep_positions: 48,
            sweep_range_mm: 2.88,
            noise: true,
            full_well: 20000.0,
            gain: 1.0,
            dynamic_range_db: 60.0,
            peak_signal: 1.0,
            lambda_factors: vec![1e-4],
            tv_eps_rel: 1e-4,
            depth_weight: 1.0,
            max_iters: 150,
            tolerance: 0.0,
            step: StepChoice::Backtracking,
            scene: SceneChoice::All,
            seed: 0,
        }
    }
}

fn parse_num<T: std::str::FromStr>(value: &str, key: &str) -> Result<T, String> {
    value
        .parse::<T>()
        .map_err(|_| format!("`{key}` expects a number, got `{value}`"))
}

fn parse_bool(value: &str, key: &str) -> Result<bool, String> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(format!("`{key}` expects true or false, got `{value}`")),
    }
}

impl ExperimentConfig {
    /// Parses config text on top of the defaults. `base_dir` resolves a
    /// relative `scene_file`.
    pub fn parse(text: &str, base_dir: Option<&std::path::Path>) -> Result<Self, CliError> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (index, raw) in text.lines().enumerate() {
            let line_no = index + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config(format!("line {line_no}: expected `key = value`")));
            };
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(CliError::Config(format!("line {line_no}: duplicate key `{key}`")));
            }
            cfg.set(key, value, base_dir)
                .map_err(|m| CliError::Config(format!("line {line_no}: {m}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str, base_dir: Option<&std::path::Path>) -> Result<(), String> {
        match key {
            "sensor_pixels" => self.sensor_pixels = parse_num(value, key)?,
            "sensor_pitch_um" => self.sensor_pitch_um = parse_num(value, key)?,
            "mask" => {
                self.mask = match value {
                    "mls" => MaskChoice::Mls,
                    "pinhole" => MaskChoice::Pinhole,
                    _ => return Err(format!("`mask` is `mls` or `pinhole`, got `{value}`")),
                }
            }
            "mask_order" => self.mask_order = parse_num(value, key)?,
            "mask_pitch_um" => self.mask_pitch_um = parse_num(value, key)?,
            "mask_distance_mm" => self.mask_distance_mm = parse_num(value, key)?,
            "baseline_mm" => self.baseline_mm = parse_num(value, key)?,
            "axial_offset_mm" => self.axial_offset_mm = parse_num(value, key)?,
            "scene_angles" => self.scene_angles = parse_num(value, key)?,
            "projector_tan" => self.projector_tan = parse_num(value, key)?,
            "depth_near_cm" => self.depth_near_cm = parse_num(value, key)?,
            "depth_far_cm" => self.depth_far_cm = parse_num(value, key)?,
            "recon_planes" => self.recon_planes = parse_num(value, key)?,
            "sim_planes" => self.sim_planes = parse_num(value, key)?,
            "patterns" => {
                self.patterns = match value {
                    "uniform" => PatternChoice::Uniform,
                    "lines" => PatternChoice::Lines,
                    "dots" => PatternChoice::Dots,
                    "random" => PatternChoice::Random,
                    "sweep" => PatternChoice::Sweep,
                    _ => return Err(format!("unknown pattern family `{value}`")),
                }
            }
            "pattern_k" => self.pattern_k = parse_num(value, key)?,
            "random_count" => self.random_count = parse_num(value, key)?,
            "sweep_positions" => self.sweep_positions = parse_num(value, key)?,
            "sweep_range_mm" => self.sweep_range_mm = parse_num(value, key)?,
            "noise" => self.noise = parse_bool(value, key)?,
            "full_well" => self.full_well = parse_num(value, key)?,
            "gain" => self.gain = parse_num(value, key)?,
            "dynamic_range_db" => self.dynamic_range_db = parse_num(value, key)?,
            "peak_signal" => self.peak_signal = parse_num(value, key)?,
            "lambda_factors" => {
                self.lambda_factors = value
                    .split(',')
                    .map(|v| parse_num(v.trim(), key))
                    .collect::<Result<_, _>>()?
            }
            "tv_eps_rel" => self.tv_eps_rel = parse_num(value, key)?,
            "depth_weight" => self.depth_weight = parse_num(value, key)?,
            "max_iters" => self.max_iters = parse_num(value, key)?,
            "tolerance" => self.tolerance = parse_num(value, key)?,
            "step" => {
                self.step = match value {
                    "lipschitz" => StepChoice::Lipschitz,
                    "backtracking" => StepChoice::Backtracking,
                    _ => return Err(format!("`step` is `lipschitz` or `backtracking`, got `{value}`")),
                }
            }
            "scene" => {
                self.scene = match value {
                    "all" => SceneChoice::All,
                    name => SceneChoice::Builtin(
                        SceneKind::parse(name).ok_or_else(|| format!("unknown scene `{name}`"))?,
                    ),
                }
            }
            "scene_file" => {
                let path = PathBuf::from(value);
                let path = match base_dir {
                    Some(dir) if path.is_relative() => dir.join(path),
                    _ => path,
                };
                if !path.is_file() {
                    return Err(format!("scene file `{}` does not exist", path.display()));
                }
                self.scene = SceneChoice::File(path);
            }
            "seed" => self.seed = parse_num(value, key)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let positive = [
            ("sensor_pitch_um", self.sensor_pitch_um),
            ("mask_pitch_um", self.mask_pitch_um),
            ("mask_distance_mm", self.mask_distance_mm),
            ("projector_tan", self.projector_tan),
            ("full_well", self.full_well),
            ("gain", self.gain),
            ("peak_signal", self.peak_signal),
            ("tv_eps_rel", self.tv_eps_rel),
            ("depth_weight", self.depth_weight),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("`{key}` must be positive, got {v}"));
            }
        }
        if self.sensor_pixels == 0 || self.scene_angles == 0 {
            return bad("`sensor_pixels` and `scene_angles` must be positive".into());
        }
        if !(2..=20).contains(&self.mask_order) {
            return bad(format!("`mask_order` must be in 2..=20, got {}", self.mask_order));
        }
        if !(self.depth_near_cm <= self.depth_far_cm && self.depth_near_cm * 10.0 > self.mask_distance_mm) {
            return bad("depth range must be increasing and beyond the mask".into());
        }
        let single = self.recon_planes == 1 && self.sim_planes == 1;
        if self.depth_near_cm == self.depth_far_cm && !single {
            return bad("an empty depth range only allows single-plane grids".into());
        }
        if self.recon_planes == 0 || self.sim_planes == 0 {
            return bad("plane counts must be positive".into());
        }
        if self.pattern_k == 0 || self.pattern_k > self.scene_angles {
            return bad(format!("`pattern_k` must be in 1..={}", self.scene_angles));
        }
        if self.lambda_factors.is_empty() || self.lambda_factors.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return bad("`lambda_factors` must be nonnegative numbers".into());
        }
        if !(self.tolerance >= 0.0 && self.tolerance.is_finite()) {
            return bad("`tolerance` must be nonnegative".into());
        }
        if !(self.baseline_mm.is_finite() && self.axial_offset_mm.is_finite() && self.dynamic_range_db.is_finite()) {
            return bad("geometry and noise values must be finite".into());
        }
        if self.sweep_positions == 0 || !(self.sweep_range_mm >= 0.0) {
            return bad("`sweep_positions` must be positive and `sweep_range_mm` nonnegative".into());
        }
        Ok(())
    }

    /// Every key with its value, one per line in a fixed order. Parsing
    /// this text gives back the same config.
    pub fn canonical_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("sensor_pixels", self.sensor_pixels.to_string());
        put("sensor_pitch_um", self.sensor_pitch_um.to_string());
        put("mask", match self.mask { MaskChoice::Mls => "mls", MaskChoice::Pinhole => "pinhole" }.into());
        put("mask_order", self.mask_order.to_string());
        put("mask_pitch_um", self.mask_pitch_um.to_string());
        put("mask_distance_mm", self.mask_distance_mm.to_string());
        put("baseline_mm", self.baseline_mm.to_string());
        put("axial_offset_mm", self.axial_offset_mm.to_string());
        put("scene_angles", self.scene_angles.to_string());
        put("projector_tan", self.projector_tan.to_string());
        put("depth_near_cm", self.depth_near_cm.to_string());
        put("depth_far_cm", self.depth_far_cm.to_string());
        put("recon_planes", self.recon_planes.to_string());
        put("sim_planes", self.sim_planes.to_string());
        put("patterns", self.patterns.name().into());
        put("pattern_k", self.pattern_k.to_string());
        put("random_count", self.random_count.to_string());
        put("sweep_positions", self.sweep_positions.to_string());
        put("sweep_range_mm", self.sweep_range_mm.to_string());
        put("noise", self.noise.to_string());
        put("full_well", self.full_well.to_string());
        put("gain", self.gain.to_string());
        put("dynamic_range_db", self.dynamic_range_db.to_string());
        put("peak_signal", self.peak_signal.to_string());
        put(
            "lambda_factors",
            self.lambda_factors.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(", "),
        );
        put("tv_eps_rel", self.tv_eps_rel.to_string());
        put("depth_weight", self.depth_weight.to_string());
        put("max_iters", self.max_iters.to_string());
        put("tolerance", self.tolerance.to_string());
        put("step", match self.step { StepChoice::Lipschitz => "lipschitz", StepChoice::Backtracking => "backtracking" }.into());
        match &self.scene {
            SceneChoice::All => put("scene", "all".into()),
            SceneChoice::Builtin(k) => put("scene", k.name().into()),
            SceneChoice::File(p) => put("scene_file", p.display().to_string()),
        }
        put("seed", self.seed.to_string());
        s
    }

    pub fn mask_features(&self) -> usize {
        (1usize << self.mask_order) - 1
    }
}
