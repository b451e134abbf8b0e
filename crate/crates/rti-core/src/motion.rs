//! Constant-velocity motion: along-road shift operators, frame stacking into
//! one enlarged linear system, and velocity estimation by residual search.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, RtiError};
use crate::estimators::{solve_with_policy, SceneEstimate, SolverConfig};
use crate::geometry::GridSpec;
use crate::priors::RegularizerQ;

/// Reference frame index used when none is given: the center frame, taking
/// the earlier of the two middle frames for even counts.
pub fn center_reference(n_frames: usize) -> usize {
    n_frames.saturating_sub(1) / 2
}

/// 1D shift matrix of size nx: power p >= 0 has ones on the p-th
/// subdiagonal, so applying it moves entries toward higher indices and fills
/// the vacated low end with zeros. Negative powers are the transpose.
fn shift_matrix_1d(nx: usize, p: i64) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(nx, nx);
    let mag = p.unsigned_abs() as usize;
    if mag >= nx {
        return j;
    }
    for i in mag..nx {
        if p >= 0 {
            j[(i, i - mag)] = 1.0;
        } else {
            j[(i - mag, i)] = 1.0;
        }
    }
    j
}

/// Full-grid shift operator J^p moving every cross-section line p voxels
/// along the road. Under x-fastest indexing this is I_{ny nz} (x) J0^p.
pub fn shift_operator(grid: &GridSpec, p: i64) -> DMatrix<f64> {
    let eye = DMatrix::<f64>::identity(grid.ny * grid.nz, grid.ny * grid.nz);
    eye.kronecker(&shift_matrix_1d(grid.nx, p))
}

/// Shift a scene vector p voxels along the road, zero-filling the vacated
/// entries. A shift of |p| >= nx empties the grid.
pub fn shift_scene(grid: &GridSpec, x: &DVector<f64>, p: i64) -> Result<DVector<f64>> {
    let n = grid.voxel_count();
    if x.len() != n {
        return Err(RtiError::DimensionMismatch(format!(
            "scene has {} entries, grid has {n} voxels",
            x.len()
        )));
    }
    let nx = grid.nx;
    let mag = p.unsigned_abs() as usize;
    if mag >= nx {
        log::warn!("shift of {p} voxels empties a grid with nx = {nx}");
        return Ok(DVector::zeros(n));
    }
    let mut out = DVector::zeros(n);
    for line in 0..(grid.ny * grid.nz) {
        let base = line * nx;
        for i in 0..nx {
            let src = i as i64 - p;
            if (0..nx as i64).contains(&src) {
                out[base + i] = x[base + src as usize];
            }
        }
    }
    Ok(out)
}

/// A multi-frame measurement stack sharing one scene at the reference frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack {
    pub w_stack: DMatrix<f64>,
    pub y_stack: DVector<f64>,
    /// Velocity in voxels/frame used to build the stack.
    pub v: f64,
    pub ref_index: usize,
    pub n_frames: usize,
}

/// Stack frames of a scene moving at v voxels/frame: block i of the stacked
/// matrix is W * J^{(i - ref) * v}, exponents rounded to integers
/// (half away from zero).
pub fn stack_frames(
    grid: &GridSpec,
    w: &DMatrix<f64>,
    frames: &[DVector<f64>],
    v: f64,
    ref_index: Option<usize>,
) -> Result<FrameStack> {
    if frames.is_empty() {
        return Err(RtiError::InvalidMeasurements("no frames to stack".into()));
    }
    let m = w.nrows();
    let n = grid.voxel_count();
    if w.ncols() != n {
        return Err(RtiError::DimensionMismatch(format!(
            "W has {} columns, grid has {n} voxels",
            w.ncols()
        )));
    }
    for (i, f) in frames.iter().enumerate() {
        if f.len() != m {
            return Err(RtiError::DimensionMismatch(format!(
                "frame {i} has {} entries, W has {m} rows",
                f.len()
            )));
        }
    }
    let f = frames.len();
    let r = ref_index.unwrap_or_else(|| center_reference(f));
    if r >= f {
        return Err(RtiError::InvalidMeasurements(format!(
            "reference frame {r} out of range for {f} frames"
        )));
    }
    let mut w_stack = DMatrix::zeros(f * m, n);
    let mut y_stack = DVector::zeros(f * m);
    for (i, frame) in frames.iter().enumerate() {
        let p = ((i as f64 - r as f64) * v).round() as i64;
        let block = if p == 0 {
            w.clone()
        } else {
            w * shift_operator(grid, p)
        };
        w_stack.view_mut((i * m, 0), (m, n)).copy_from(&block);
        y_stack.rows_mut(i * m, m).copy_from(frame);
    }
    Ok(FrameStack {
        w_stack,
        y_stack,
        v,
        ref_index: r,
        n_frames: f,
    })
}

/// One velocity hypothesis scored against the stacked measurements.
#[derive(Debug, Clone)]
pub struct VelocityCandidate {
    pub v: f64,
    /// Squared stacked residual (optionally plus the regularizer).
    pub cost: f64,
    pub estimate: SceneEstimate,
}

#[derive(Debug, Clone)]
pub struct VelocityEstimate {
    pub v_hat: f64,
    pub best_index: usize,
    pub candidates: Vec<VelocityCandidate>,
}

fn cost_tie(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// Search candidate velocities: for each, stack the frames at that velocity,
/// reconstruct with the configured solver, and score by the squared residual
/// against the original stacked measurements (`use_full_cost` adds the
/// regularization and bias terms). Ties break to the smallest |v|, then the
/// smaller v.
pub fn estimate_velocity(
    grid: &GridSpec,
    w: &DMatrix<f64>,
    frames: &[DVector<f64>],
    candidates: &[f64],
    ref_index: Option<usize>,
    q: &RegularizerQ,
    config: &SolverConfig,
    use_full_cost: bool,
) -> Result<VelocityEstimate> {
    if candidates.is_empty() {
        return Err(RtiError::NoVelocityCandidate);
    }
    let mut scored = Vec::with_capacity(candidates.len());
    for &v in candidates {
        let stack = stack_frames(grid, w, frames, v, ref_index)?;
        let est = match solve_with_policy(&stack.w_stack, &stack.y_stack, q, config) {
            Ok(e) => e,
            Err(e) => {
                log::warn!("velocity candidate {v} failed to solve: {e}");
                continue;
            }
        };
        let mut cost = (&stack.w_stack * &est.x - &stack.y_stack).norm_squared();
        if use_full_cost {
            if config.alpha != 0.0 {
                cost += config.alpha * (est.x.transpose() * &q.q * &est.x)[(0, 0)];
            }
            if config.beta != 0.0 {
                cost -= 2.0 * config.beta * est.x.sum();
            }
        }
        scored.push(VelocityCandidate {
            v,
            cost,
            estimate: est,
        });
    }
    if scored.is_empty() {
        return Err(RtiError::NoVelocityCandidate);
    }
    let mut best = 0;
    for i in 1..scored.len() {
        let (a, b) = (&scored[i], &scored[best]);
        let better = if cost_tie(a.cost, b.cost) {
            (a.v.abs(), a.v) < (b.v.abs(), b.v)
        } else {
            a.cost < b.cost
        };
        if better {
            best = i;
        }
    }
    Ok(VelocityEstimate {
        v_hat: scored[best].v,
        best_index: best,
        candidates: scored,
    })
}
