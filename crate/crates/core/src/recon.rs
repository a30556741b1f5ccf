//! TV-regularized least squares over all shots:
//!
//! ```text
//! min_{I >= 0}  sum_i || Y_i - A_i(I) ||^2  +  lambda * TV_eps(I)
//! ```
//!
//! `TV_eps` is the smoothed isotropic total variation of the whole volume
//! across rows, columns and depth. The solver is FISTA with a projection
//! onto the nonnegative orthant and a momentum restart whenever the
//! objective would increase.

use ndarray::{Array3, ArrayView3, Zip};

use crate::error::{Error, Result};
use crate::forward::{inner, CodedIllumination, MeasurementSet, SceneOperator};
use crate::optics::SystemModel;
use crate::patterns::IlluminationSequence;

/// Exact transpose of the coded-illumination forward model:
/// `G_k = sum_i P_i ⊙ (L_k^T Y_i R_k)`.
pub fn apply_adjoint(
    frames: &MeasurementSet,
    model: &SystemModel,
    sequence: &IlluminationSequence,
) -> Result<Array3<f64>> {
    CodedIllumination::new(model, sequence)?.adjoint(frames.frames.view())
}

/// Smoothed isotropic TV and its gradient.
///
/// Value: `sum_v sqrt(dx^2 + dy^2 + w dz^2 + eps^2) - eps * voxels`, using
/// forward differences with a replicated boundary (the last difference on
/// each axis is zero). Axis 0 of the volume is depth.
pub fn tv3d_value_and_gradient(
    volume: ArrayView3<f64>,
    eps: f64,
    depth_weight: f64,
) -> (f64, Array3<f64>) {
    let (nd, nr, nc) = volume.dim();
    let mut grad = Array3::<f64>::zeros((nd, nr, nc));
    let mut value = 0.0;
    for k in 0..nd {
        for i in 0..nr {
            for j in 0..nc {
                let x = volume[[k, i, j]];
                let dz = if k + 1 < nd { volume[[k + 1, i, j]] - x } else { 0.0 };
                let dy = if i + 1 < nr { volume[[k, i + 1, j]] - x } else { 0.0 };
                let dx = if j + 1 < nc { volume[[k, i, j + 1]] - x } else { 0.0 };
                let mag = (dx * dx + dy * dy + depth_weight * dz * dz + eps * eps).sqrt();
                value += mag - eps;
                let (gx, gy, gz) = (dx / mag, dy / mag, depth_weight * dz / mag);
                grad[[k, i, j]] -= gx + gy + gz;
                if j + 1 < nc {
                    grad[[k, i, j + 1]] += gx;
                }
                if i + 1 < nr {
                    grad[[k, i + 1, j]] += gy;
                }
                if k + 1 < nd {
                    grad[[k + 1, i, j]] += gz;
                }
            }
        }
    }
    (value, grad)
}

/// TV value alone, same definition as [`tv3d_value_and_gradient`].
pub fn tv3d_value(volume: ArrayView3<f64>, eps: f64, depth_weight: f64) -> f64 {
    tv3d_value_and_gradient(volume, eps, depth_weight).0
}

/// Largest eigenvalue of `A^T A`, from 50 power iterations started at the
/// all-ones volume.
pub fn lipschitz_estimate<O: SceneOperator + ?Sized>(op: &O) -> f64 {
    power_iteration(op, 50)
}

pub fn power_iteration<O: SceneOperator + ?Sized>(op: &O, iterations: usize) -> f64 {
    let mut v = Array3::<f64>::ones(op.volume_dim());
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v /= norm;
    let mut estimate = 0.0;
    for _ in 0..iterations {
        let av = op.apply_unchecked(v.view());
        estimate = av.iter().map(|x| x * x).sum::<f64>();
        let w = op.adjoint_unchecked(av.view());
        let wn = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if wn == 0.0 || !wn.is_finite() {
            return 0.0;
        }
        v = w / wn;
    }
    estimate.max(0.0)
}

/// Rough scene brightness: the uniform intensity whose back-projection
/// peaks at the same value as the data's.
pub fn intensity_scale_estimate<O: SceneOperator + ?Sized>(op: &O, frames: ArrayView3<f64>) -> f64 {
    let data = op.adjoint_unchecked(frames);
    let unit = op.adjoint_unchecked(op.apply_unchecked(Array3::ones(op.volume_dim()).view()).view());
    let peak = |a: &Array3<f64>| a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let denom = peak(&unit);
    if denom > 0.0 {
        peak(&data) / denom
    } else {
        0.0
    }
}

/// How the gradient step length is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// Constant step.
    Fixed(f64),
    /// `1 / (2 L_A + lambda * 4 (2 + w) / eps)`, the global bound on the
    /// curvature of the objective, with `L_A` from [`lipschitz_estimate`].
    Lipschitz,
    /// Start at `1 / (2 L_A)` and halve until the quadratic upper bound
    /// holds at the trial point.
    Backtracking,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIterations,
    /// Relative objective change fell below the problem tolerance.
    Converged,
    /// Zero iterations requested.
    NotRun,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::MaxIterations => "max_iterations",
            StopReason::Converged => "converged",
            StopReason::NotRun => "not_run",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    /// Objective of the accepted iterate; entry 0 is the starting point.
    pub objective_trace: Vec<f64>,
    pub data_residual: f64,
    pub tv_value: f64,
    pub iterations: usize,
    pub stop_reason: StopReason,
    pub lambda: f64,
    pub tv_smoothing: f64,
    /// Step length in use when the solver stopped.
    pub step: f64,
    pub restarts: usize,
}

impl SolverReport {
    pub fn initial_objective(&self) -> f64 {
        self.objective_trace[0]
    }

    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace holds the start")
    }
}

/// Everything the solver needs besides the iteration budget.
#[derive(Debug, Clone, Copy)]
pub struct ReconProblem<'a, O: SceneOperator + ?Sized> {
    pub operator: &'a O,
    pub measurements: &'a MeasurementSet,
    pub lambda: f64,
    pub tv_smoothing: f64,
    pub depth_weight: f64,
    /// Stop once `|f_prev - f| <= tolerance * f_prev`; zero disables it.
    pub tolerance: f64,
}

impl<'a, O: SceneOperator + ?Sized> ReconProblem<'a, O> {
    pub fn new(operator: &'a O, measurements: &'a MeasurementSet, lambda: f64) -> Self {
        ReconProblem {
            operator,
            measurements,
            lambda,
            tv_smoothing: 1e-4,
            depth_weight: 1.0,
            tolerance: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.tv_smoothing > 0.0 && self.tv_smoothing.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "TV smoothing must be positive, got {}",
                self.tv_smoothing
            )));
        }
        if !(self.depth_weight >= 0.0 && self.depth_weight.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "depth weight must be >= 0, got {}",
                self.depth_weight
            )));
        }
        if self.measurements.frames.dim() != self.operator.frames_dim() {
            return Err(Error::ShapeMismatch(format!(
                "measurements have shape {:?}, operator expects {:?}",
                self.measurements.frames.dim(),
                self.operator.frames_dim()
            )));
        }
        Ok(())
    }

    fn tv(&self, x: ArrayView3<f64>) -> (f64, Array3<f64>) {
        tv3d_value_and_gradient(x, self.tv_smoothing, self.depth_weight)
    }

    /// Objective pieces at `x` given its image `ax`.
    fn evaluate(&self, x: ArrayView3<f64>, ax: ArrayView3<f64>) -> (f64, f64) {
        let y = self.measurements.frames.view();
        let data: f64 = ax.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        let tv = if self.lambda > 0.0 {
            tv3d_value(x, self.tv_smoothing, self.depth_weight)
        } else {
            0.0
        };
        (data, tv)
    }

    /// Full objective at `x`.
    pub fn objective(&self, x: ArrayView3<f64>) -> Result<f64> {
        let ax = self.operator.apply(x)?;
        let (data, tv) = self.evaluate(x, ax.view());
        Ok(data + self.lambda * tv)
    }

    /// Gradient of the full objective at `x`.
    pub fn gradient(&self, x: ArrayView3<f64>) -> Result<Array3<f64>> {
        let ax = self.operator.apply(x)?;
        Ok(self.gradient_from_image(x, ax.view()))
    }

    fn gradient_from_image(&self, x: ArrayView3<f64>, ax: ArrayView3<f64>) -> Array3<f64> {
        let residual = &ax - &self.measurements.frames;
        let mut g = self.operator.adjoint_unchecked(residual.view());
        g *= 2.0;
        if self.lambda > 0.0 {
            let (_, tv_grad) = self.tv(x);
            g.scaled_add(self.lambda, &tv_grad);
        }
        g
    }
}

/// Accelerated projected gradient from the zero volume.
///
/// Returns the best iterate (the objective trace is non-increasing), or
/// [`Error::NonFinite`] if the objective blows up, which signals a step
/// length that is too long.
pub fn solve<O: SceneOperator + ?Sized>(
    problem: &ReconProblem<'_, O>,
    max_iters: usize,
    step_rule: StepRule,
) -> Result<(Array3<f64>, SolverReport)> {
    problem.validate()?;
    let op = problem.operator;
    let lambda = problem.lambda;

    let mut x = Array3::<f64>::zeros(op.volume_dim());
    let mut ax = Array3::<f64>::zeros(op.frames_dim());
    let (data0, tv0) = problem.evaluate(x.view(), ax.view());
    let mut fx = data0 + lambda * tv0;
    let mut pieces = (data0, tv0);
    let mut trace = vec![fx];

    let mut step = match step_rule {
        StepRule::Fixed(s) => {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidParameter(format!("step must be positive, got {s}")));
            }
            s
        }
        StepRule::Lipschitz | StepRule::Backtracking if max_iters > 0 => {
            let la = lipschitz_estimate(op);
            let mut curvature = 2.0 * la;
            if step_rule == StepRule::Lipschitz {
                curvature +=
                    lambda * 4.0 * (2.0 + problem.depth_weight) / problem.tv_smoothing;
            }
            if curvature > 0.0 {
                1.0 / curvature
            } else {
                1.0
            }
        }
        _ => 0.0,
    };

    let mut y = x.clone();
    let mut ay = ax.clone();
    let mut fy = fx;
    let mut t = 1.0f64;
    let mut restarts = 0;
    let mut stop = if max_iters == 0 {
        StopReason::NotRun
    } else {
        StopReason::MaxIterations
    };
    let mut iterations = 0;

    while iterations < max_iters {
        iterations += 1;
        let grad = problem.gradient_from_image(y.view(), ay.view());

        let (x_new, ax_new, pieces_new, f_new) = loop {
            let mut trial = y.clone();
            Zip::from(&mut trial)
                .and(&grad)
                .for_each(|v, &g| *v = (*v - step * g).max(0.0));
            let a_trial = op.apply_unchecked(trial.view());
            let (d, tv) = problem.evaluate(trial.view(), a_trial.view());
            let f_trial = d + lambda * tv;
            if !f_trial.is_finite() {
                return Err(Error::NonFinite { iteration: iterations });
            }
            if step_rule == StepRule::Backtracking {
                let diff = &trial - &y;
                let bound = fy
                    + inner(grad.view(), diff.view())
                    + inner(diff.view(), diff.view()) / (2.0 * step);
                if f_trial > bound * (1.0 + 1e-12) + 1e-300 && step > f64::MIN_POSITIVE {
                    step *= 0.5;
                    continue;
                }
            }
            break (trial, a_trial, (d, tv), f_trial);
        };

        if f_new > fx {
            // Reject, restart momentum from the last accepted point.
            restarts += 1;
            t = 1.0;
            y.assign(&x);
            ay.assign(&ax);
            fy = fx;
            trace.push(fx);
            continue;
        }

        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        // The extrapolated point's image follows by linearity.
        y = &x_new + &((&x_new - &x) * beta);
        ay = &ax_new + &((&ax_new - &ax) * beta);
        let f_prev = fx;
        x = x_new;
        ax = ax_new;
        fx = f_new;
        pieces = pieces_new;
        fy = {
            let (d, tv) = problem.evaluate(y.view(), ay.view());
            d + lambda * tv
        };
        t = t_next;
        trace.push(fx);

        if problem.tolerance > 0.0 && (f_prev - fx).abs() <= problem.tolerance * f_prev.abs() {
            stop = StopReason::Converged;
            break;
        }
    }

    let report = SolverReport {
        objective_trace: trace,
        data_residual: pieces.0,
        tv_value: pieces.1,
        iterations,
        stop_reason: stop,
        lambda,
        tv_smoothing: problem.tv_smoothing,
        step,
        restarts,
    };
    Ok((x, report))
}
