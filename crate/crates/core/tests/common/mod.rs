#![allow(dead_code)]

use lensless_core::optics::{build_system_matrices, CameraGeometry, DepthGrid, SystemModel};
use lensless_core::patterns::{make_mask, IlluminationSequence, MaskParams};
use nalgebra::DMatrix;
use ndarray::{Array3, ArrayView3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Explicit `(frames*M*M) x (D*N*N)` matrix for coded illumination, built
/// entry by entry from the system matrices and patterns.
pub fn dense_coded_matrix(model: &SystemModel, seq: &IlluminationSequence) -> DMatrix<f64> {
    let m = model.sensor_pixels();
    let n = model.scene_angles();
    let d = model.planes();
    let mut a = DMatrix::zeros(seq.len() * m * m, d * n * n);
    for (i, p) in seq.patterns.iter().enumerate() {
        for k in 0..d {
            for m1 in 0..m {
                for m2 in 0..m {
                    let row = (i * m + m1) * m + m2;
                    for n1 in 0..n {
                        for n2 in 0..n {
                            if p.matrix()[[n1, n2]] == 1 {
                                let col = (k * n + n1) * n + n2;
                                a[(row, col)] = model.left[k][[m1, n1]] * model.right[k][[m2, n2]];
                            }
                        }
                    }
                }
            }
        }
    }
    a
}

pub fn flatten(x: ArrayView3<f64>) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_iterator(x.len(), x.iter().copied())
}

pub fn random_volume(rng: &mut ChaCha8Rng, dim: (usize, usize, usize)) -> Array3<f64> {
    Array3::from_shape_fn(dim, |_| rng.random::<f64>())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    num / den
}

/// Small geometry with a real baseline: N=4, M=8, two planes.
pub fn tiny_model(baseline_mm: f64, planes: usize) -> SystemModel {
    let g = CameraGeometry {
        sensor_pixels: 8,
        sensor_pitch_um: 20.0,
        mask_features: 31,
        mask_pitch_um: 30.0,
        mask_distance_mm: 2.0,
        baseline_mm,
        axial_offset_mm: 0.0,
        scene_angles: 4,
        projector_half_fov: 0.05f64.atan(),
    };
    let mask = make_mask(MaskParams::Mls { order: 5 }, 30.0).unwrap();
    let depths = DepthGrid::linspace(300.0, 500.0, planes).unwrap();
    build_system_matrices(&g, &mask, &depths).unwrap()
}
