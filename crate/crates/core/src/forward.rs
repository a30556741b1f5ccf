//! Multi-shot measurement simulation.
//!
//! Frame `i` under coded illumination is
//! `Y_i = sum_k L_k (P_i ⊙ I_k) R_k^T`; the same pattern lights every depth
//! plane. Mask-sweep acquisition instead keeps the illumination uniform and
//! swaps in a differently translated system model per frame.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, ArrayViewMut2, Axis, CowArray, Ix2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::optics::{build_shifted_system_matrices, CameraGeometry, DepthGrid, SystemModel};
use crate::patterns::{IlluminationSequence, MaskSpec, Pattern};

/// `D` planes of `N x N` nonnegative intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneVolume {
    pub planes: Array3<f64>,
    pub depths: DepthGrid,
}

impl SceneVolume {
    pub fn new(planes: Array3<f64>, depths: DepthGrid) -> Result<Self> {
        let (d, rows, cols) = planes.dim();
        if d != depths.len() {
            return Err(Error::ShapeMismatch(format!(
                "{d} planes for a {}-plane depth grid",
                depths.len()
            )));
        }
        if rows != cols {
            return Err(Error::ShapeMismatch(format!(
                "scene planes must be square, got {rows}x{cols}"
            )));
        }
        if planes.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter(
                "scene intensities must be finite and nonnegative".into(),
            ));
        }
        Ok(SceneVolume { planes, depths })
    }

    pub fn zeros(n: usize, depths: DepthGrid) -> Self {
        SceneVolume {
            planes: Array3::zeros((depths.len(), n, n)),
            depths,
        }
    }

    pub fn size(&self) -> usize {
        self.planes.dim().1
    }
}

/// Sensor-noise parameters: full-well capacity `F` (electrons), gain `G`,
/// and dynamic range `R` (dB). Read noise is `sigma = F * 10^(-R/20)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub full_well: f64,
    pub gain: f64,
    pub dynamic_range_db: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("full_well", self.full_well),
            ("gain", self.gain),
            ("dynamic_range_db", self.dynamic_range_db),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn read_noise_sigma(&self) -> f64 {
        self.full_well * 10f64.powf(-self.dynamic_range_db / 20.0)
    }
}

/// One `M x M` frame per shot.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub frames: Array3<f64>,
    /// `None` for clean frames.
    pub noise: Option<NoiseModel>,
}

impl MeasurementSet {
    pub fn len(&self) -> usize {
        self.frames.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Linear map from a `D x N x N` volume to a stack of `M x M` frames.
pub trait SceneOperator: Sync {
    /// `(D, N, N)`
    fn volume_dim(&self) -> (usize, usize, usize);
    /// `(frames, M, M)`
    fn frames_dim(&self) -> (usize, usize, usize);

    /// Forward map. The volume must have shape [`Self::volume_dim`].
    fn apply_unchecked(&self, volume: ArrayView3<f64>) -> Array3<f64>;
    /// Exact transpose. The frames must have shape [`Self::frames_dim`].
    fn adjoint_unchecked(&self, frames: ArrayView3<f64>) -> Array3<f64>;

    fn apply(&self, volume: ArrayView3<f64>) -> Result<Array3<f64>> {
        expect_dim("volume", volume.dim(), self.volume_dim())?;
        Ok(self.apply_unchecked(volume))
    }

    fn adjoint(&self, frames: ArrayView3<f64>) -> Result<Array3<f64>> {
        expect_dim("frames", frames.dim(), self.frames_dim())?;
        Ok(self.adjoint_unchecked(frames))
    }
}

impl<T: SceneOperator + ?Sized> SceneOperator for &T {
    fn volume_dim(&self) -> (usize, usize, usize) {
        (**self).volume_dim()
    }
    fn frames_dim(&self) -> (usize, usize, usize) {
        (**self).frames_dim()
    }
    fn apply_unchecked(&self, volume: ArrayView3<f64>) -> Array3<f64> {
        (**self).apply_unchecked(volume)
    }
    fn adjoint_unchecked(&self, frames: ArrayView3<f64>) -> Array3<f64> {
        (**self).adjoint_unchecked(frames)
    }
}

fn expect_dim(
    what: &str,
    got: (usize, usize, usize),
    want: (usize, usize, usize),
) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "{what} has shape {got:?}, operator expects {want:?}"
        )))
    }
}

fn take_columns<'a>(m: &'a Array2<f64>, idx: &[usize]) -> CowArray<'a, f64, Ix2> {
    if idx.len() == m.ncols() {
        CowArray::from(m.view())
    } else {
        CowArray::from(m.select(Axis(1), idx))
    }
}

fn take_block<'a>(plane: ArrayView2<'a, f64>, rows: &[usize], cols: &[usize]) -> CowArray<'a, f64, Ix2> {
    let (nr, nc) = plane.dim();
    if rows.len() == nr && cols.len() == nc {
        CowArray::from(plane)
    } else {
        CowArray::from(plane.select(Axis(0), rows).select(Axis(1), cols))
    }
}

/// `out += l x rt^T`, choosing the cheaper multiplication order.
fn sandwich_acc(out: &mut ArrayViewMut2<f64>, l: ArrayView2<f64>, x: ArrayView2<f64>, rt: ArrayView2<f64>) {
    let (m1, r) = l.dim();
    let (m2, c) = rt.dim();
    let left_first = m1 * r * c + m1 * c * m2;
    let right_first = r * c * m2 + m1 * r * m2;
    if left_first <= right_first {
        let lx = l.dot(&x);
        general_mat_mul(1.0, &lx, &rt.t(), 1.0, out);
    } else {
        let xr = x.dot(&rt.t());
        general_mat_mul(1.0, &l, &xr, 1.0, out);
    }
}

/// `l^T y rt`, choosing the cheaper multiplication order.
fn adjoint_block(l: ArrayView2<f64>, y: ArrayView2<f64>, rt: ArrayView2<f64>) -> Array2<f64> {
    let (m1, r) = l.dim();
    let (m2, c) = rt.dim();
    let left_first = r * m1 * m2 + r * m2 * c;
    let right_first = m1 * m2 * c + r * m1 * c;
    if left_first <= right_first {
        l.t().dot(&y).dot(&rt)
    } else {
        l.t().dot(&y.dot(&rt))
    }
}

fn pattern_as_f64(p: &Pattern) -> Array2<f64> {
    p.matrix().mapv(f64::from)
}

/// `out += L (P ⊙ I) R^T` for one plane and one pattern.
fn accumulate_plane(
    out: &mut ArrayViewMut2<f64>,
    left: &Array2<f64>,
    right: &Array2<f64>,
    plane: ArrayView2<f64>,
    pattern: &Pattern,
) {
    match pattern.support() {
        Some(support) => {
            if support.rows.is_empty() || support.cols.is_empty() {
                return;
            }
            let l = take_columns(left, &support.rows);
            let r = take_columns(right, &support.cols);
            let x = take_block(plane, &support.rows, &support.cols);
            sandwich_acc(out, l.view(), x.view(), r.view());
        }
        None => {
            let masked = &plane * &pattern_as_f64(pattern);
            sandwich_acc(out, left.view(), masked.view(), right.view());
        }
    }
}

/// `grad += P ⊙ (L^T Y R)` for one plane and one pattern.
fn accumulate_adjoint(
    grad: &mut ArrayViewMut2<f64>,
    left: &Array2<f64>,
    right: &Array2<f64>,
    frame: ArrayView2<f64>,
    pattern: &Pattern,
) {
    match pattern.support() {
        Some(support) => {
            if support.rows.is_empty() || support.cols.is_empty() {
                return;
            }
            let l = take_columns(left, &support.rows);
            let r = take_columns(right, &support.cols);
            let block = adjoint_block(l.view(), frame, r.view());
            for (a, &row) in support.rows.iter().enumerate() {
                let mut dst = grad.row_mut(row);
                let src = block.row(a);
                for (b, &col) in support.cols.iter().enumerate() {
                    dst[col] += src[b];
                }
            }
        }
        None => {
            let block = adjoint_block(left.view(), frame, right.view());
            *grad += &(&block * &pattern_as_f64(pattern));
        }
    }
}

/// One system model observed under a sequence of projector patterns.
#[derive(Debug, Clone, Copy)]
pub struct CodedIllumination<'a> {
    model: &'a SystemModel,
    sequence: &'a IlluminationSequence,
}

impl<'a> CodedIllumination<'a> {
    pub fn new(model: &'a SystemModel, sequence: &'a IlluminationSequence) -> Result<Self> {
        if sequence.is_empty() {
            return Err(Error::InvalidParameter("empty illumination sequence".into()));
        }
        let n = model.scene_angles();
        if sequence.patterns.iter().any(|p| p.matrix().dim() != (n, n)) {
            return Err(Error::ShapeMismatch(format!(
                "patterns must be {n}x{n} to match the scene grid"
            )));
        }
        Ok(CodedIllumination { model, sequence })
    }

    pub fn model(&self) -> &SystemModel {
        self.model
    }

    pub fn sequence(&self) -> &IlluminationSequence {
        self.sequence
    }
}

impl SceneOperator for CodedIllumination<'_> {
    fn volume_dim(&self) -> (usize, usize, usize) {
        let n = self.model.scene_angles();
        (self.model.planes(), n, n)
    }

    fn frames_dim(&self) -> (usize, usize, usize) {
        let m = self.model.sensor_pixels();
        (self.sequence.len(), m, m)
    }

    fn apply_unchecked(&self, volume: ArrayView3<f64>) -> Array3<f64> {
        let mut frames = Array3::zeros(self.frames_dim());
        frames
            .axis_iter_mut(Axis(0))
            .into_par_iter()
            .zip(self.sequence.patterns.par_iter())
            .for_each(|(mut frame, pattern)| {
                for (k, plane) in volume.outer_iter().enumerate() {
                    accumulate_plane(
                        &mut frame,
                        &self.model.left[k],
                        &self.model.right[k],
                        plane,
                        pattern,
                    );
                }
            });
        frames
    }

    fn adjoint_unchecked(&self, frames: ArrayView3<f64>) -> Array3<f64> {
        let mut out = Array3::zeros(self.volume_dim());
        out.axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(k, mut grad)| {
                for (frame, pattern) in frames.outer_iter().zip(&self.sequence.patterns) {
                    accumulate_adjoint(
                        &mut grad,
                        &self.model.left[k],
                        &self.model.right[k],
                        frame,
                        pattern,
                    );
                }
            });
        out
    }
}

/// Uniformly lit scene seen through a mask translated to a new position
/// for every frame.
#[derive(Debug, Clone)]
pub struct MaskSweep {
    models: Vec<SystemModel>,
}

impl MaskSweep {
    pub fn new(
        geometry: &CameraGeometry,
        mask: &MaskSpec,
        depths: &DepthGrid,
        shifts_mm: &[(f64, f64)],
    ) -> Result<Self> {
        if shifts_mm.is_empty() {
            return Err(Error::InvalidParameter("mask sweep needs a shift".into()));
        }
        let limit = 0.5 * geometry.mask_extent_mm();
        if let Some(s) = shifts_mm
            .iter()
            .find(|s| !(s.0.abs() <= limit && s.1.abs() <= limit))
        {
            return Err(Error::Geometry(format!(
                "mask shift {s:?} mm exceeds half the mask extent ({limit} mm)"
            )));
        }
        let models = shifts_mm
            .iter()
            .map(|&shift| build_shifted_system_matrices(geometry, mask, depths, shift))
            .collect::<Result<Vec<_>>>()?;
        Ok(MaskSweep { models })
    }

    pub fn models(&self) -> &[SystemModel] {
        &self.models
    }
}

impl SceneOperator for MaskSweep {
    fn volume_dim(&self) -> (usize, usize, usize) {
        let m = &self.models[0];
        (m.planes(), m.scene_angles(), m.scene_angles())
    }

    fn frames_dim(&self) -> (usize, usize, usize) {
        let m = self.models[0].sensor_pixels();
        (self.models.len(), m, m)
    }

    fn apply_unchecked(&self, volume: ArrayView3<f64>) -> Array3<f64> {
        let mut frames = Array3::zeros(self.frames_dim());
        frames
            .axis_iter_mut(Axis(0))
            .into_par_iter()
            .zip(self.models.par_iter())
            .for_each(|(mut frame, model)| {
                for (k, plane) in volume.outer_iter().enumerate() {
                    sandwich_acc(&mut frame, model.left[k].view(), plane, model.right[k].view());
                }
            });
        frames
    }

    fn adjoint_unchecked(&self, frames: ArrayView3<f64>) -> Array3<f64> {
        let mut out = Array3::zeros(self.volume_dim());
        out.axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(k, mut grad)| {
                for (frame, model) in frames.outer_iter().zip(&self.models) {
                    grad += &adjoint_block(model.left[k].view(), frame, model.right[k].view());
                }
            });
        out
    }
}

fn check_grid(scene: &SceneVolume, model: &SystemModel) -> Result<()> {
    if scene.depths != model.depths {
        return Err(Error::ShapeMismatch(
            "scene depth grid differs from the system model's".into(),
        ));
    }
    Ok(())
}

/// Clean frames `Y_i = sum_k L_k (P_i ⊙ I_k) R_k^T`, one per pattern.
pub fn forward(
    scene: &SceneVolume,
    sequence: &IlluminationSequence,
    model: &SystemModel,
) -> Result<MeasurementSet> {
    check_grid(scene, model)?;
    let op = CodedIllumination::new(model, sequence)?;
    Ok(MeasurementSet {
        frames: op.apply(scene.planes.view())?,
        noise: None,
    })
}

/// Clean frames for a mask translated to each of `shifts_mm` in turn.
pub fn sweepcam_forward(
    scene: &SceneVolume,
    shifts_mm: &[(f64, f64)],
    geometry: &CameraGeometry,
    mask: &MaskSpec,
) -> Result<MeasurementSet> {
    let op = MaskSweep::new(geometry, mask, &scene.depths, shifts_mm)?;
    Ok(MeasurementSet {
        frames: op.apply(scene.planes.view())?,
        noise: None,
    })
}

/// `count` mask translations on a centered square grid spanning `range_mm`
/// per side, in raster order. The grid is the smallest square holding
/// `count` points; surplus points at the end are dropped.
pub fn sweep_shifts(count: usize, range_mm: f64) -> Vec<(f64, f64)> {
    let side = (count as f64).sqrt().ceil() as usize;
    let coord = |i: usize| {
        if side <= 1 {
            0.0
        } else {
            range_mm * (i as f64 / (side - 1) as f64 - 0.5)
        }
    };
    (0..side)
        .flat_map(|a| (0..side).map(move |b| (coord(a), coord(b))))
        .take(count)
        .collect()
}

/// Above this mean the Poisson draw uses its normal approximation.
const POISSON_EXACT_LIMIT: f64 = 1e3;

fn poisson_sample(rng: &mut ChaCha8Rng, mean: f64) -> f64 {
    if mean <= 0.0 {
        0.0
    } else if mean > POISSON_EXACT_LIMIT {
        let z: f64 = StandardNormal.sample(rng);
        mean + mean.sqrt() * z
    } else {
        Poisson::new(mean).map_or(0.0, |d| d.sample(rng))
    }
}

/// Shot plus read noise: `Y_n = (G/F) (Poisson((F/G) Y) + N(0, sigma^2))`.
///
/// Each sensor row draws from its own ChaCha stream keyed by the seed and
/// the row's global index, so the result does not depend on scheduling.
/// Small negative clean values are clamped before the Poisson draw; noisy
/// output may be negative.
pub fn add_noise(clean: &MeasurementSet, noise: &NoiseModel) -> Result<MeasurementSet> {
    noise.validate()?;
    let photons_per_unit = noise.full_well / noise.gain;
    let sigma = noise.read_noise_sigma();
    let (count, rows, cols) = clean.frames.dim();
    let mut frames = clean.frames.as_standard_layout().into_owned();
    if count * rows * cols > 0 {
        let flat = frames
            .as_slice_mut()
            .expect("standard layout arrays are contiguous");
        flat.par_chunks_mut(cols)
            .enumerate()
            .for_each(|(row, values)| {
                let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
                rng.set_stream(row as u64);
                for v in values.iter_mut() {
                    let electrons = poisson_sample(&mut rng, photons_per_unit * v.max(0.0));
                    let read: f64 = rng.sample::<f64, _>(StandardNormal) * sigma;
                    *v = (electrons + read) / photons_per_unit;
                }
            });
    }
    Ok(MeasurementSet {
        frames,
        noise: Some(*noise),
    })
}

/// Inner product over all entries.
pub fn inner(a: ArrayView3<f64>, b: ArrayView3<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Sum of squared entries of `frames[i] - other[i]` for every frame.
pub fn frame_residuals(a: ArrayView3<f64>, b: ArrayView3<f64>) -> Vec<f64> {
    (0..a.dim().0)
        .map(|i| {
            let fa = a.slice(s![i, .., ..]);
            let fb = b.slice(s![i, .., ..]);
            fa.iter().zip(fb.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
        })
        .collect()
}
