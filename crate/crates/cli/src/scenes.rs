//! Built-in synthetic scenes: a depth map (cm) plus a reflectance texture.

use lensless_core::{DepthGrid, SceneVolume};
use ndarray::{Array2, Array3};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    TwoPlaneCards,
    SlantedPlane,
    StepPyramid,
}

impl SceneKind {
    pub const ALL: [SceneKind; 3] = [
        SceneKind::TwoPlaneCards,
        SceneKind::SlantedPlane,
        SceneKind::StepPyramid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SceneKind::TwoPlaneCards => "two_plane_cards",
            SceneKind::SlantedPlane => "slanted_plane",
            SceneKind::StepPyramid => "step_pyramid",
        }
    }

    pub fn parse(name: &str) -> Option<SceneKind> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

/// A scene on the projector grid. Row/column `(i, j)` is the ray with
/// tangents `(t_i, t_j)`; `depth_cm` is where that ray hits a surface.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub name: String,
    pub depth_cm: Array2<f64>,
    pub texture: Array2<f64>,
}

impl SyntheticScene {
    pub fn generate(kind: SceneKind, n: usize, near_cm: f64, far_cm: f64) -> Self {
        let span = far_cm - near_cm;
        let unit = |i: usize| if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
        let (depth, texture) = match kind {
            SceneKind::TwoPlaneCards => {
                let depth = Array2::from_shape_fn((n, n), |(i, j)| {
                    let (y, x) = (unit(i), unit(j));
                    if (0.15..0.55).contains(&y) && (0.1..0.45).contains(&x) {
                        near_cm + 0.1 * span
                    } else if (0.45..0.85).contains(&y) && (0.55..0.9).contains(&x) {
                        near_cm + 0.5 * span
                    } else {
                        far_cm - 0.05 * span
                    }
                });
                let texture = Array2::from_shape_fn((n, n), |(i, j)| {
                    let (y, x) = (unit(i), unit(j));
                    0.55 + 0.35 * (9.0 * x).sin() * (7.0 * y).cos()
                });
                (depth, texture)
            }
            SceneKind::SlantedPlane => {
                let depth = Array2::from_shape_fn((n, n), |(i, j)| {
                    near_cm + span * (0.7 * unit(i) + 0.3 * unit(j))
                });
                let texture = Array2::from_shape_fn((n, n), |(i, j)| {
                    let checker = ((i / 4 + j / 4) % 2) as f64;
                    0.35 + 0.45 * checker + 0.1 * unit(j)
                });
                (depth, texture)
            }
            SceneKind::StepPyramid => {
                let depth = Array2::from_shape_fn((n, n), |(i, j)| {
                    let r = (unit(i) - 0.5).abs().max((unit(j) - 0.5).abs());
                    let step = (r * 10.0).floor().min(4.0);
                    near_cm + 0.05 * span + step * 0.225 * span
                });
                let texture = Array2::from_shape_fn((n, n), |(i, j)| {
                    let (y, x) = (unit(i), unit(j));
                    0.6 + 0.3 * (11.0 * (x + y)).sin() * (5.0 * (x - y)).sin()
                });
                (depth, texture)
            }
        };
        SyntheticScene { name: kind.name().to_string(), depth_cm: depth, texture }
    }

    /// Scene from a stored two-plane array: plane 0 depth (cm), plane 1 texture.
    pub fn from_planes(name: &str, planes: &Array3<f64>) -> Result<Self, CliError> {
        let (count, rows, cols) = planes.dim();
        if count != 2 || rows != cols {
            return Err(CliError::Config(format!(
                "scene file must hold 2 square planes (depth, texture), found {count}x{rows}x{cols}"
            )));
        }
        if planes.iter().any(|v| !v.is_finite()) || planes.index_axis(ndarray::Axis(0), 1).iter().any(|&v| v < 0.0) {
            return Err(CliError::Config("scene file holds non-finite or negative values".into()));
        }
        Ok(SyntheticScene {
            name: name.to_string(),
            depth_cm: planes.index_axis(ndarray::Axis(0), 0).to_owned(),
            texture: planes.index_axis(ndarray::Axis(0), 1).to_owned(),
        })
    }

    pub fn size(&self) -> usize {
        self.depth_cm.nrows()
    }

    /// Splits each ray's reflectance between the two grid planes around
    /// its depth, linearly in depth. Depths outside the grid clamp to the
    /// end planes.
    pub fn voxelize(&self, grid: &DepthGrid) -> SceneVolume {
        let depths = grid.depths();
        let n = self.size();
        let mut planes = Array3::zeros((depths.len(), n, n));
        for ((i, j), &z_cm) in self.depth_cm.indexed_iter() {
            let z = z_cm * 10.0;
            let value = self.texture[[i, j]];
            let upper = depths.partition_point(|&d| d < z);
            if upper == 0 {
                planes[[0, i, j]] += value;
            } else if upper == depths.len() {
                planes[[depths.len() - 1, i, j]] += value;
            } else {
                let (z0, z1) = (depths[upper - 1], depths[upper]);
                let w = (z - z0) / (z1 - z0);
                planes[[upper - 1, i, j]] += (1.0 - w) * value;
                planes[[upper, i, j]] += w * value;
            }
        }
        SceneVolume::new(planes, grid.clone()).expect("voxelized volume matches its grid")
    }
}
