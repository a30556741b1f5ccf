//! Camera, mask and projector geometry, and the per-depth system matrices.
//!
//! Coordinates: the origin sits at the sensor center, `z` points into the
//! scene, and the projector is displaced by `baseline_mm` along `+x`, which
//! is the row (left-matrix) axis. Lateral lengths are in millimetres.

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::patterns::MaskSpec;

/// Physical layout of sensor, mask and projector.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraGeometry {
    /// Sensor pixels per side, `M`.
    pub sensor_pixels: usize,
    pub sensor_pitch_um: f64,
    /// Mask features per side.
    pub mask_features: usize,
    pub mask_pitch_um: f64,
    /// Sensor-to-mask distance `d`.
    pub mask_distance_mm: f64,
    /// Lateral camera-projector separation `B`.
    pub baseline_mm: f64,
    /// Axial separation; the projector sits this far behind the camera.
    pub axial_offset_mm: f64,
    /// Projector angles per side, `N`.
    pub scene_angles: usize,
    pub projector_half_fov: f64,
}

impl CameraGeometry {
    /// Prototype-scale layout: 512 px at 4.8 um, 511 features at 60 um,
    /// 2 mm mask distance, 5 cm baseline, 128 scene angles.
    pub fn prototype() -> Self {
        CameraGeometry {
            sensor_pixels: 512,
            sensor_pitch_um: 4.8,
            mask_features: 511,
            mask_pitch_um: 60.0,
            mask_distance_mm: 2.0,
            baseline_mm: 50.0,
            axial_offset_mm: 0.0,
            scene_angles: 128,
            projector_half_fov: 0.1f64.atan(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sensor_pitch_um", self.sensor_pitch_um),
            ("mask_pitch_um", self.mask_pitch_um),
            ("mask_distance_mm", self.mask_distance_mm),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Geometry(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("baseline_mm", self.baseline_mm),
            ("axial_offset_mm", self.axial_offset_mm),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Geometry(format!("{name} must be >= 0, got {v}")));
            }
        }
        for (name, v) in [
            ("sensor_pixels", self.sensor_pixels),
            ("mask_features", self.mask_features),
            ("scene_angles", self.scene_angles),
        ] {
            if v == 0 {
                return Err(Error::Geometry(format!("{name} must be at least 1")));
            }
        }
        let fov = self.projector_half_fov;
        if !(fov > 0.0 && fov < std::f64::consts::FRAC_PI_2) {
            return Err(Error::Geometry(format!(
                "projector half field of view must be in (0, pi/2), got {fov}"
            )));
        }
        Ok(())
    }

    pub fn sensor_pitch_mm(&self) -> f64 {
        self.sensor_pitch_um * 1e-3
    }

    pub fn mask_pitch_mm(&self) -> f64 {
        self.mask_pitch_um * 1e-3
    }

    pub fn sensor_extent_mm(&self) -> f64 {
        self.sensor_pixels as f64 * self.sensor_pitch_mm()
    }

    pub fn mask_extent_mm(&self) -> f64 {
        self.mask_features as f64 * self.mask_pitch_mm()
    }

    /// Pixel-center coordinates across the sensor.
    pub fn sensor_coordinates(&self) -> Vec<f64> {
        centered_grid(self.sensor_pixels, self.sensor_pitch_mm())
    }

    fn check_depth(&self, z: f64) -> Result<()> {
        if z > self.mask_distance_mm && z.is_finite() {
            Ok(())
        } else {
            Err(Error::DepthBehindMask {
                depth: z,
                mask_distance: self.mask_distance_mm,
            })
        }
    }
}

fn centered_grid(count: usize, pitch: f64) -> Vec<f64> {
    let mid = (count as f64 - 1.0) / 2.0;
    (0..count).map(|i| (i as f64 - mid) * pitch).collect()
}

/// Depth planes (mm along the camera axis), strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthGrid {
    depths_mm: Vec<f64>,
}

impl DepthGrid {
    pub fn new(depths_mm: Vec<f64>) -> Result<Self> {
        if depths_mm.is_empty() {
            return Err(Error::InvalidParameter("depth grid is empty".into()));
        }
        if depths_mm.iter().any(|z| !(z.is_finite() && *z > 0.0)) {
            return Err(Error::InvalidParameter(
                "depths must be finite and positive".into(),
            ));
        }
        if depths_mm.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "depths must be strictly increasing".into(),
            ));
        }
        Ok(DepthGrid { depths_mm })
    }

    /// `count` planes evenly spaced from `near_mm` to `far_mm` inclusive.
    pub fn linspace(near_mm: f64, far_mm: f64, count: usize) -> Result<Self> {
        match count {
            0 => Err(Error::InvalidParameter("depth grid needs a plane".into())),
            1 => DepthGrid::new(vec![near_mm]),
            _ => {
                let step = (far_mm - near_mm) / (count - 1) as f64;
                DepthGrid::new((0..count).map(|k| near_mm + step * k as f64).collect())
            }
        }
    }

    pub fn depths(&self) -> &[f64] {
        &self.depths_mm
    }

    pub fn len(&self) -> usize {
        self.depths_mm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depths_mm.is_empty()
    }
}

/// Per-depth left/right matrices: plane `k` contributes `L_k (P ⊙ I_k) R_k^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    pub geometry: CameraGeometry,
    pub mask: MaskSpec,
    pub depths: DepthGrid,
    /// `M x N` matrices along the baseline (row) axis.
    pub left: Vec<Array2<f64>>,
    /// `M x N` matrices along the orthogonal (column) axis.
    pub right: Vec<Array2<f64>>,
    /// Mask translation (row axis, column axis) in mm the model was built with.
    pub mask_shift_mm: (f64, f64),
}

impl SystemModel {
    pub fn planes(&self) -> usize {
        self.left.len()
    }

    pub fn sensor_pixels(&self) -> usize {
        self.geometry.sensor_pixels
    }

    pub fn scene_angles(&self) -> usize {
        self.geometry.scene_angles
    }

    /// Same model with every matrix multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> SystemModel {
        let mut out = self.clone();
        out.left.iter_mut().for_each(|m| *m *= factor);
        out.right.iter_mut().for_each(|m| *m *= factor);
        out
    }
}

/// Mask transmittance at `coordinate_mm` (origin at the mask center).
///
/// Feature values sit at feature centers and are linearly interpolated,
/// with zeros assumed past either end. Anything outside the physical mask
/// extent reads as opaque.
pub fn sample_mask_1d(mask_vector: &[u8], pitch_mm: f64, coordinate_mm: f64) -> f64 {
    let len = mask_vector.len();
    if len == 0 || coordinate_mm.abs() > 0.5 * len as f64 * pitch_mm {
        return 0.0;
    }
    let t = coordinate_mm / pitch_mm + (len as f64 - 1.0) / 2.0;
    let lower = t.floor();
    let frac = t - lower;
    let at = |i: f64| -> f64 {
        if i < 0.0 || i >= len as f64 {
            0.0
        } else {
            f64::from(mask_vector[i as usize])
        }
    };
    (1.0 - frac) * at(lower) + frac * at(lower + 1.0)
}

/// Mask coordinate hit by the ray from scene point `(p, z)` to sensor position `s`.
fn mask_argument(s: f64, p: f64, z: f64, d: f64) -> f64 {
    (1.0 - d / z) * s + d * p / z
}

/// 1D point spread function: transmittance seen at sensor position `s_mm`
/// for a point at lateral `p_mm` and depth `z_mm`.
pub fn psf_1d(
    s_mm: f64,
    p_mm: f64,
    z_mm: f64,
    geometry: &CameraGeometry,
    mask_vector: &[u8],
) -> Result<f64> {
    geometry.check_depth(z_mm)?;
    let u = mask_argument(s_mm, p_mm, z_mm, geometry.mask_distance_mm);
    Ok(sample_mask_1d(mask_vector, geometry.mask_pitch_mm(), u))
}

/// Sensor-plane separation (mm) between the PSFs of two depths on the same
/// projector ray, ignoring the small difference in magnification.
pub fn predict_depth_shift(z1_mm: f64, z2_mm: f64, geometry: &CameraGeometry) -> Result<f64> {
    geometry.check_depth(z1_mm)?;
    geometry.check_depth(z2_mm)?;
    let d = geometry.mask_distance_mm;
    let b = geometry.baseline_mm;
    let dz = geometry.axial_offset_mm;
    let shift = |z: f64| d * b / (z + dz - d);
    Ok((shift(z1_mm) - shift(z2_mm)).abs())
}

/// Camera-frame lateral positions of the projector's scene grid at one depth.
#[derive(Debug, Clone, PartialEq)]
pub struct LateralCoordinates {
    /// Along the baseline (row) axis, offset by the baseline.
    pub baseline_axis: Vec<f64>,
    pub orthogonal_axis: Vec<f64>,
}

/// Tangents of the `N` projector angles, uniform in tangent space.
pub fn projector_tangents(geometry: &CameraGeometry) -> Vec<f64> {
    let n = geometry.scene_angles;
    let t = geometry.projector_half_fov.tan();
    if n == 1 {
        return vec![0.0];
    }
    (0..n)
        .map(|i| t * (2.0 * i as f64 / (n - 1) as f64 - 1.0))
        .collect()
}

pub fn scene_lateral_coordinates(z_mm: f64, geometry: &CameraGeometry) -> Result<LateralCoordinates> {
    geometry.check_depth(z_mm)?;
    let range = z_mm + geometry.axial_offset_mm;
    let tangents = projector_tangents(geometry);
    Ok(LateralCoordinates {
        baseline_axis: tangents
            .iter()
            .map(|t| range * t + geometry.baseline_mm)
            .collect(),
        orthogonal_axis: tangents.iter().map(|t| range * t).collect(),
    })
}

fn check_mask(geometry: &CameraGeometry, mask: &MaskSpec) -> Result<()> {
    if mask.row_vector.is_empty() || mask.col_vector.is_empty() {
        return Err(Error::InvalidParameter("mask vectors are empty".into()));
    }
    if mask.row_vector.len() != geometry.mask_features
        || mask.col_vector.len() != geometry.mask_features
    {
        return Err(Error::Geometry(format!(
            "mask has {}x{} features, geometry expects {}",
            mask.row_vector.len(),
            mask.col_vector.len(),
            geometry.mask_features
        )));
    }
    if (mask.feature_pitch_um - geometry.mask_pitch_um).abs() > 1e-12 * geometry.mask_pitch_um {
        return Err(Error::Geometry(format!(
            "mask pitch {} um differs from geometry pitch {} um",
            mask.feature_pitch_um, geometry.mask_pitch_um
        )));
    }
    Ok(())
}

fn axis_matrix(
    sensor: &[f64],
    lateral: &[f64],
    z: f64,
    d: f64,
    pitch: f64,
    mask_vector: &[u8],
    mask_shift: f64,
) -> Array2<f64> {
    Array2::from_shape_fn((sensor.len(), lateral.len()), |(m, n)| {
        let u = mask_argument(sensor[m], lateral[n], z, d) - mask_shift;
        sample_mask_1d(mask_vector, pitch, u)
    })
}

pub fn build_system_matrices(
    geometry: &CameraGeometry,
    mask: &MaskSpec,
    depths: &DepthGrid,
) -> Result<SystemModel> {
    build_shifted_system_matrices(geometry, mask, depths, (0.0, 0.0))
}

/// System matrices with the mask translated by `shift_mm` (row axis,
/// column axis), as used for mask-sweep acquisition.
pub fn build_shifted_system_matrices(
    geometry: &CameraGeometry,
    mask: &MaskSpec,
    depths: &DepthGrid,
    shift_mm: (f64, f64),
) -> Result<SystemModel> {
    geometry.validate()?;
    check_mask(geometry, mask)?;
    for &z in depths.depths() {
        geometry.check_depth(z)?;
    }
    let sensor = geometry.sensor_coordinates();
    let d = geometry.mask_distance_mm;
    let pitch = geometry.mask_pitch_mm();

    let pairs: Vec<(Array2<f64>, Array2<f64>)> = depths
        .depths()
        .par_iter()
        .map(|&z| {
            let lateral = scene_lateral_coordinates(z, geometry)?;
            let left = axis_matrix(
                &sensor,
                &lateral.baseline_axis,
                z,
                d,
                pitch,
                &mask.row_vector,
                shift_mm.0,
            );
            let right = axis_matrix(
                &sensor,
                &lateral.orthogonal_axis,
                z,
                d,
                pitch,
                &mask.col_vector,
                shift_mm.1,
            );
            Ok((left, right))
        })
        .collect::<Result<_>>()?;
    let (left, right) = pairs.into_iter().unzip();

    Ok(SystemModel {
        geometry: geometry.clone(),
        mask: mask.clone(),
        depths: depths.clone(),
        left,
        right,
        mask_shift_mm: shift_mm,
    })
}

/// Integer lag `l` maximizing `sum_m (a[m] - mean a) (b[m + l] - mean b)`
/// over `|l| <= max_lag`.
pub fn cross_correlation_peak(a: &[f64], b: &[f64], max_lag: usize) -> isize {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let (ma, mb) = (mean(a), mean(b));
    let max_lag = max_lag as isize;
    let mut best = (f64::NEG_INFINITY, 0isize);
    for lag in -max_lag..=max_lag {
        let mut acc = 0.0;
        for (m, &av) in a.iter().enumerate() {
            let j = m as isize + lag;
            if j >= 0 && (j as usize) < b.len() {
                acc += (av - ma) * (b[j as usize] - mb);
            }
        }
        if acc > best.0 {
            best = (acc, lag);
        }
    }
    best.1
}
