//! Difference operators, the Tikhonov matrix Q, and the Gaussian spatial
//! covariance prior, plus the mapping from prior parameters to the
//! regularization weight alpha.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RtiError};
use crate::geometry::GridSpec;

/// How Q is assembled from difference operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QConstruction {
    /// Interior first differences only: Q = sum_d D_d^T D_d. Positive
    /// semidefinite with the constant vector in its null space.
    SumOfSquaredDiffs,
    /// Average of forward and backward differences with boundary self-terms,
    /// which in 1D gives the tridiagonal matrix with 1.5 corners. Positive
    /// definite.
    AveragedFwdBck,
}

/// Tikhonov regularizer Q together with the weighted difference operators it
/// was assembled from: Q = sum_k c_k * D_k^T D_k. The operators are kept so
/// the column-removal estimator can rebuild Q on a reduced voxel support.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerQ {
    pub q: DMatrix<f64>,
    pub construction: QConstruction,
    ops: Vec<(f64, DMatrix<f64>)>,
}

impl RegularizerQ {
    pub fn build(grid: &GridSpec, construction: QConstruction) -> Result<RegularizerQ> {
        grid.validate()?;
        let ops = difference_operators(grid, construction);
        Ok(RegularizerQ::from_operators(ops, construction, grid.voxel_count()))
    }

    /// Assemble from explicit (coefficient, operator) pairs.
    pub fn from_operators(
        ops: Vec<(f64, DMatrix<f64>)>,
        construction: QConstruction,
        dim: usize,
    ) -> RegularizerQ {
        let mut q = DMatrix::zeros(dim, dim);
        for (c, d) in &ops {
            q += (d.transpose() * d) * *c;
        }
        RegularizerQ {
            q,
            construction,
            ops,
        }
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn operators(&self) -> &[(f64, DMatrix<f64>)] {
        &self.ops
    }

    /// Restrict to a voxel subset: drop all other columns from every
    /// difference operator and reassemble Q on the kept support. Since
    /// (DS)^T (DS) = S^T (D^T D) S for a column selection S, the result
    /// equals the principal submatrix of Q.
    pub fn restrict(&self, keep: &[usize]) -> RegularizerQ {
        let ops: Vec<(f64, DMatrix<f64>)> = self
            .ops
            .iter()
            .map(|(c, d)| (*c, d.select_columns(keep.iter())))
            .collect();
        RegularizerQ::from_operators(ops, self.construction, keep.len())
    }
}

/// 1D interior difference operator: (n-1) rows of e_{i+1} - e_i.
fn interior_diff(n: usize) -> DMatrix<f64> {
    let rows = n.saturating_sub(1);
    let mut d = DMatrix::zeros(rows, n);
    for i in 0..rows {
        d[(i, i)] = -1.0;
        d[(i, i + 1)] = 1.0;
    }
    d
}

/// 1D forward differences with a boundary self-term on the last voxel.
fn forward_diff(n: usize) -> DMatrix<f64> {
    if n < 2 {
        return DMatrix::zeros(0, n);
    }
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n - 1 {
        d[(i, i)] = -1.0;
        d[(i, i + 1)] = 1.0;
    }
    d[(n - 1, n - 1)] = 1.0;
    d
}

/// 1D backward differences with a boundary self-term on the first voxel.
fn backward_diff(n: usize) -> DMatrix<f64> {
    if n < 2 {
        return DMatrix::zeros(0, n);
    }
    let mut d = DMatrix::zeros(n, n);
    d[(0, 0)] = 1.0;
    for i in 1..n {
        d[(i, i - 1)] = -1.0;
        d[(i, i)] = 1.0;
    }
    d
}

/// Lift a 1D operator acting along one dimension to the full grid under the
/// x-fastest voxel ordering.
fn lift_to_grid(grid: &GridSpec, d1: &DMatrix<f64>, axis: usize) -> DMatrix<f64> {
    let eye = |k: usize| DMatrix::<f64>::identity(k, k);
    match axis {
        0 => eye(grid.ny * grid.nz).kronecker(d1),
        1 => eye(grid.nz).kronecker(&d1.kronecker(&eye(grid.nx))),
        _ => d1.kronecker(&eye(grid.ny * grid.nx)),
    }
}

/// Weighted difference operators per dimension. Dimensions with a single
/// voxel contribute empty (0-row) operators under both constructions.
pub fn difference_operators(
    grid: &GridSpec,
    construction: QConstruction,
) -> Vec<(f64, DMatrix<f64>)> {
    let counts = [grid.nx, grid.ny, grid.nz];
    let mut ops = Vec::new();
    for (axis, &n) in counts.iter().enumerate() {
        match construction {
            QConstruction::SumOfSquaredDiffs => {
                ops.push((1.0, lift_to_grid(grid, &interior_diff(n), axis)));
            }
            QConstruction::AveragedFwdBck => {
                ops.push((0.5, lift_to_grid(grid, &forward_diff(n), axis)));
                ops.push((0.5, lift_to_grid(grid, &backward_diff(n), axis)));
            }
        }
    }
    ops
}

/// Gaussian spatial prior with exponentially decaying correlation.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariancePrior {
    pub sigma_x_sq: f64,
    pub delta_c: f64,
    pub c_x: DMatrix<f64>,
    /// Prior mean attenuation density (dB/m).
    pub mean: f64,
}

/// Build C_x with [C_x]_{n1,n2} = sigma_x_sq * exp(-dist(n1,n2)/delta_c).
pub fn covariance_prior(grid: &GridSpec, sigma_x_sq: f64, delta_c: f64) -> Result<CovariancePrior> {
    if !(sigma_x_sq > 0.0) {
        return Err(RtiError::InvalidModel(format!(
            "prior variance must be > 0, got {sigma_x_sq}"
        )));
    }
    if !(delta_c > 0.0) {
        return Err(RtiError::InvalidModel(format!(
            "correlation space constant must be > 0, got {delta_c}"
        )));
    }
    let n = grid.voxel_count();
    let centers: Vec<_> = (0..n)
        .map(|i| grid.voxel_center(i))
        .collect::<Result<_>>()?;
    let mut c_x = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let dist = (centers[i] - centers[j]).norm();
            let v = sigma_x_sq * (-dist / delta_c).exp();
            c_x[(i, j)] = v;
            c_x[(j, i)] = v;
        }
    }
    Ok(CovariancePrior {
        sigma_x_sq,
        delta_c,
        c_x,
        mean: 0.0,
    })
}

impl CovariancePrior {
    pub fn with_mean(mut self, mean: f64) -> CovariancePrior {
        self.mean = mean;
        self
    }
}

/// Nearest-neighbor correlation for voxel spacing delta: c = exp(-delta/delta_c).
pub fn correlation_from_spacing(delta: f64, delta_c: f64) -> f64 {
    (-delta / delta_c).exp()
}

/// Regularization weight from prior parameters: alpha = (sigma_n^2/sigma_x^2) / (1 - c^2).
pub fn alpha_from_prior(sigma_n_sq: f64, sigma_x_sq: f64, c: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&c) {
        return Err(RtiError::InvalidCorrelation(c));
    }
    Ok((sigma_n_sq / sigma_x_sq) / (1.0 - c * c))
}

/// Coarse small-spacing approximation of the same mapping:
/// alpha ~= (sigma_n^2 * delta_c) / (sigma_x^2 * 2 * delta).
pub fn alpha_from_prior_approx(sigma_n_sq: f64, sigma_x_sq: f64, delta: f64, delta_c: f64) -> f64 {
    (sigma_n_sq * delta_c) / (sigma_x_sq * 2.0 * delta)
}

/// Covariance of the Gaussian prior implied by Tikhonov regularization:
/// sigma_n^2 * (alpha Q)^{-1}.
pub fn effective_prior_covariance(
    q: &DMatrix<f64>,
    alpha: f64,
    sigma_n_sq: f64,
) -> Result<DMatrix<f64>> {
    let dim = q.nrows();
    let aq = q * alpha;
    match aq.clone().cholesky() {
        Some(chol) => Ok(chol.inverse() * sigma_n_sq),
        None => {
            let rank = aq.svd(false, false).rank(1e-10);
            Err(RtiError::SingularSystem {
                context: "effective prior covariance (alpha Q not positive definite)".into(),
                rank,
                dim,
            })
        }
    }
}
