//! Radio tomographic imaging (RTI) for roadside surveillance.
//!
//! Reconstructs voxel attenuation images of vehicles from RSS drops measured
//! on a wireless sensor network flanking a road. The toolkit covers:
//!
//! - voxel grid / sensor link geometry and the link-voxel weight models
//!   (ellipse and line selection; NeSh, line-integral, exponential-decay and
//!   inverse-area magnitudes),
//! - regularized and Bayesian estimators for the linear inverse problem
//!   `y = W x + n`, including non-negativity handling (truncation, an
//!   iterative column-removal scheme, and a projected gradient method),
//! - motion stacking: concatenating frames of a constant-velocity vehicle
//!   through shift matrices into one enlarged system, with maximum-likelihood
//!   velocity search,
//! - a synthetic forward simulator (scenes, calibration, AWGN and
//!   Gaussian-mixture noise) used as the ground-truth oracle,
//! - evaluation: RMSE, occupancy ROC curves, and template-matching target
//!   recognition,
//! - deployment planning math: scan time, detectable velocity, voxel
//!   resolution, and packet capacity accounting.

pub mod error;
pub mod estimators;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod motion;
pub mod planning;
pub mod priors;
pub mod repro;
pub mod simulate;
pub mod weights;

pub use error::{Result, RtiError};
pub use estimators::{NegPolicy, SceneEstimate, SolverConfig};
pub use geometry::{GridSpec, Link, SensorLayout, Topology};
pub use priors::{CovariancePrior, QConstruction, RegularizerQ};
pub use simulate::{MeasurementSet, NoiseModel, Primitive, Scene};
pub use weights::{MagnitudeModel, SelectionModel, WeightMatrix};
