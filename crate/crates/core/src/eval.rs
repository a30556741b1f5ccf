//! Depth map / all-in-focus extraction and reconstruction metrics.

use ndarray::{Array2, ArrayView2, ArrayView3, Axis};

use crate::error::{Error, Result};
use crate::forward::SceneVolume;

/// Planes whose peak falls below this fraction of the volume maximum are
/// treated as carrying no signal.
pub const DEFAULT_VALIDITY_THRESHOLD: f64 = 0.05;

/// Per-pixel depth in centimetres with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub depth_cm: Array2<f64>,
    pub valid: Array2<bool>,
}

impl DepthMap {
    /// Every pixel valid.
    pub fn dense(depth_cm: Array2<f64>) -> Self {
        let valid = Array2::from_elem(depth_cm.dim(), true);
        DepthMap { depth_cm, valid }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub depth_rmse_cm: f64,
    pub ssim: f64,
    /// RMS difference per reconstruction plane against the reference volume.
    pub per_plane_residuals: Vec<f64>,
}

/// Brightest plane along every projector ray, with the default threshold.
pub fn extract_depth_and_aif(volume: &SceneVolume) -> (DepthMap, Array2<f64>) {
    extract_depth_and_aif_with(volume, DEFAULT_VALIDITY_THRESHOLD)
}

/// For each pixel: depth of the brightest plane (the nearer one on ties)
/// and that brightness. Pixels dimmer than `threshold * max(volume)` are
/// invalid.
pub fn extract_depth_and_aif_with(volume: &SceneVolume, threshold: f64) -> (DepthMap, Array2<f64>) {
    let planes: ArrayView3<f64> = volume.planes.view();
    let (_, rows, cols) = planes.dim();
    let depths_cm: Vec<f64> = volume.depths.depths().iter().map(|z| z / 10.0).collect();
    let global_max = planes.iter().copied().fold(0.0f64, f64::max);
    let cutoff = threshold * global_max;

    let mut depth = Array2::zeros((rows, cols));
    let mut aif = Array2::zeros((rows, cols));
    let mut valid = Array2::from_elem((rows, cols), false);
    for i in 0..rows {
        for j in 0..cols {
            let ray = planes.slice(ndarray::s![.., i, j]);
            let (best_k, best) = ray
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc });
            depth[[i, j]] = depths_cm[best_k];
            aif[[i, j]] = best.max(0.0);
            valid[[i, j]] = best > 0.0 && best >= cutoff;
        }
    }
    (
        DepthMap {
            depth_cm: depth,
            valid,
        },
        aif,
    )
}

/// RMS depth difference over pixels valid in both maps.
pub fn depth_rmse(estimated: &DepthMap, reference: &DepthMap) -> Result<f64> {
    if estimated.depth_cm.dim() != reference.depth_cm.dim() {
        return Err(Error::ShapeMismatch(format!(
            "depth maps are {:?} and {:?}",
            estimated.depth_cm.dim(),
            reference.depth_cm.dim()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (((a, b), va), vb) in estimated
        .depth_cm
        .iter()
        .zip(reference.depth_cm.iter())
        .zip(estimated.valid.iter())
        .zip(reference.valid.iter())
    {
        if *va && *vb {
            sum += (a - b) * (a - b);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyValidRegion);
    }
    Ok((sum / count as f64).sqrt())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let mid = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let x = i as f64 - mid;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable "valid" filtering with a 1D kernel along both axes.
fn filter_valid(img: &Array2<f64>, kernel: &[f64]) -> Array2<f64> {
    let w = kernel.len();
    let (rows, cols) = img.dim();
    let out_cols = cols + 1 - w;
    let out_rows = rows + 1 - w;
    let mut horiz = Array2::zeros((rows, out_cols));
    for i in 0..rows {
        for j in 0..out_cols {
            horiz[[i, j]] = (0..w).map(|t| kernel[t] * img[[i, j + t]]).sum::<f64>();
        }
    }
    let mut out = Array2::zeros((out_rows, out_cols));
    for j in 0..out_cols {
        for i in 0..out_rows {
            out[[i, j]] = (0..w).map(|t| kernel[t] * horiz[[i + t, j]]).sum::<f64>();
        }
    }
    out
}

/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5) evaluated wherever
/// the window fits inside the image. Images smaller than the window use
/// the largest odd window that fits.
pub fn ssim(a: ArrayView2<f64>, b: ArrayView2<f64>, dynamic_range: f64) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!(
            "images are {:?} and {:?}",
            a.dim(),
            b.dim()
        )));
    }
    if !(dynamic_range > 0.0 && dynamic_range.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "dynamic range must be positive, got {dynamic_range}"
        )));
    }
    let (rows, cols) = a.dim();
    let fit = rows.min(cols);
    if fit == 0 {
        return Err(Error::ShapeMismatch("empty images".into()));
    }
    let size = if fit >= SSIM_WINDOW {
        SSIM_WINDOW
    } else if fit % 2 == 1 {
        fit
    } else {
        fit - 1
    };
    let kernel = gaussian_kernel(size, SSIM_SIGMA);
    let c1 = (SSIM_K1 * dynamic_range).powi(2);
    let c2 = (SSIM_K2 * dynamic_range).powi(2);

    let a = a.to_owned();
    let b = b.to_owned();
    let mu_a = filter_valid(&a, &kernel);
    let mu_b = filter_valid(&b, &kernel);
    let aa = filter_valid(&(&a * &a), &kernel);
    let bb = filter_valid(&(&b * &b), &kernel);
    let ab = filter_valid(&(&a * &b), &kernel);

    let mut total = 0.0;
    for ((((ma, mb), saa), sbb), sab) in mu_a
        .iter()
        .zip(mu_b.iter())
        .zip(aa.iter())
        .zip(bb.iter())
        .zip(ab.iter())
    {
        let va = saa - ma * ma;
        let vb = sbb - mb * mb;
        let cov = sab - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mu_a.len() as f64)
}

/// RMS difference per plane between two volumes on the same grid.
pub fn per_plane_residuals(estimate: ArrayView3<f64>, reference: ArrayView3<f64>) -> Result<Vec<f64>> {
    if estimate.dim() != reference.dim() {
        return Err(Error::ShapeMismatch(format!(
            "volumes are {:?} and {:?}",
            estimate.dim(),
            reference.dim()
        )));
    }
    Ok(estimate
        .axis_iter(Axis(0))
        .zip(reference.axis_iter(Axis(0)))
        .map(|(e, r)| {
            let n = e.len().max(1) as f64;
            (e.iter().zip(r.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n).sqrt()
        })
        .collect())
}
