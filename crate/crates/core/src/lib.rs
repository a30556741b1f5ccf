//! Simulation and reconstruction for mask-based lensless 3D imaging under
//! coded illumination.
//!
//! The camera is modelled as a separable system: for every depth plane `k`
//! a pair of matrices maps an `N x N` scene slice onto the `M x M` sensor,
//! `Y = sum_k L_k I_k R_k^T`. A projector placed at a baseline from the
//! camera illuminates the scene with binary patterns; each pattern selects
//! which voxels contribute to one sensor frame.
//!
//! Modules, bottom-up:
//!
//! * [`optics`] builds the per-depth system matrices from the geometry.
//! * [`patterns`] generates MLS / pinhole masks and illumination sequences.
//! * [`forward`] simulates multi-shot measurements and sensor noise.
//! * [`recon`] solves the TV-regularized least-squares inverse problem.
//! * [`eval`] extracts depth maps and computes RMSE / SSIM.

pub mod error;
pub mod eval;
pub mod forward;
pub mod optics;
pub mod patterns;
pub mod recon;

pub use error::{Error, Result};
pub use eval::{DepthMap, MetricReport};
pub use forward::{
    CodedIllumination, MaskSweep, MeasurementSet, NoiseModel, SceneOperator, SceneVolume,
};
pub use optics::{CameraGeometry, DepthGrid, SystemModel};
pub use patterns::{IlluminationSequence, MaskKind, MaskSpec, Pattern, PatternFamily};
pub use recon::{ReconProblem, SolverReport, StepRule, StopReason};
