//! Ground-truth scene generation and synthetic RSS-drop measurements:
//! y = Wx + n under configurable noise, with deterministic per-frame seeding.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RtiError};
use crate::geometry::GridSpec;
use crate::motion::{center_reference, shift_scene};

/// Synthetic calibration baseline used when no real scans exist (dBm).
pub const DEFAULT_BASELINE_DBM: f64 = -60.0;

/// Two-component measurement noise fitted to link RSS fluctuation: most
/// samples are tight, a minority is heavy-tailed.
pub const MIXTURE_WEIGHTS: [f64; 2] = [0.548, 0.452];
pub const MIXTURE_SIGMAS: [f64; 2] = [0.971, 3.003];

/// Solid shapes a scene is composed of. Densities are attenuation per meter
/// (dB/m); membership is tested at voxel centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Primitive {
    /// Vertical-axis cylinder: horizontal distance from the axis below the
    /// radius, with an optional height range.
    Cylinder {
        center: [f64; 3],
        radius: f64,
        density: f64,
        #[serde(default)]
        z_min: Option<f64>,
        #[serde(default)]
        z_max: Option<f64>,
    },
    Box {
        min: [f64; 3],
        max: [f64; 3],
        density: f64,
    },
}

impl Primitive {
    pub fn density(&self) -> f64 {
        match self {
            Primitive::Cylinder { density, .. } | Primitive::Box { density, .. } => *density,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.density() >= 0.0 && self.density().is_finite()) {
            return Err(RtiError::InvalidPrimitive(format!(
                "density must be finite and >= 0, got {}",
                self.density()
            )));
        }
        match self {
            Primitive::Cylinder { radius, .. } if !(*radius > 0.0) => Err(
                RtiError::InvalidPrimitive(format!("cylinder radius must be > 0, got {radius}")),
            ),
            Primitive::Box { min, max, .. } if (0..3).any(|i| min[i] >= max[i]) => {
                Err(RtiError::InvalidPrimitive(format!(
                    "box min {min:?} must be strictly below max {max:?} on every axis"
                )))
            }
            _ => Ok(()),
        }
    }

    fn contains(&self, p: &nalgebra::Point3<f64>) -> bool {
        match self {
            Primitive::Cylinder {
                center,
                radius,
                z_min,
                z_max,
                ..
            } => {
                let dx = p.x - center[0];
                let dy = p.y - center[1];
                let in_height = z_min.map_or(true, |z| p.z >= z) && z_max.map_or(true, |z| p.z <= z);
                in_height && (dx * dx + dy * dy).sqrt() < *radius
            }
            Primitive::Box { min, max, .. } => {
                (0..3).all(|i| p[i] >= min[i] && p[i] <= max[i])
            }
        }
    }
}

/// Ground-truth attenuation image with the primitives that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub grid: GridSpec,
    pub x: DVector<f64>,
    pub primitives: Vec<Primitive>,
}

/// Rasterize primitives onto the grid: each voxel takes the maximum density
/// among primitives containing its center.
pub fn make_scene(grid: &GridSpec, primitives: &[Primitive]) -> Result<Scene> {
    grid.validate()?;
    for p in primitives {
        p.validate()?;
    }
    let n = grid.voxel_count();
    let mut x: DVector<f64> = DVector::zeros(n);
    for i in 0..n {
        let c = grid.voxel_center(i)?;
        for p in primitives {
            if p.contains(&c) {
                x[i] = x[i].max(p.density());
            }
        }
    }
    Ok(Scene {
        grid: *grid,
        x,
        primitives: primitives.to_vec(),
    })
}

/// Measurement noise added to the drop vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NoiseModel {
    None,
    Awgn {
        sigma: f64,
    },
    GaussianMixture {
        weights: Vec<f64>,
        sigmas: Vec<f64>,
    },
}

impl NoiseModel {
    /// The fitted two-component mixture.
    pub fn default_mixture() -> NoiseModel {
        NoiseModel::GaussianMixture {
            weights: MIXTURE_WEIGHTS.to_vec(),
            sigmas: MIXTURE_SIGMAS.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseModel::None => Ok(()),
            NoiseModel::Awgn { sigma } => {
                if !(*sigma > 0.0) {
                    return Err(RtiError::InvalidModel(format!(
                        "noise sigma must be > 0, got {sigma}"
                    )));
                }
                Ok(())
            }
            NoiseModel::GaussianMixture { weights, sigmas } => {
                if weights.len() != sigmas.len() || weights.is_empty() {
                    return Err(RtiError::InvalidModel(
                        "mixture weights and sigmas must be equal-length and nonempty".into(),
                    ));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-9 || weights.iter().any(|w| *w < 0.0) {
                    return Err(RtiError::InvalidModel(format!(
                        "mixture weights must be nonnegative and sum to 1, got {total}"
                    )));
                }
                if sigmas.iter().any(|s| !(*s > 0.0)) {
                    return Err(RtiError::InvalidModel("mixture sigmas must be > 0".into()));
                }
                Ok(())
            }
        }
    }

    /// Standard deviation of the marginal noise distribution.
    pub fn std(&self) -> f64 {
        match self {
            NoiseModel::None => 0.0,
            NoiseModel::Awgn { sigma } => *sigma,
            NoiseModel::GaussianMixture { weights, sigmas } => weights
                .iter()
                .zip(sigmas)
                .map(|(w, s)| w * s * s)
                .sum::<f64>()
                .sqrt(),
        }
    }
}

/// RNG for one frame of one simulation: the seed picks the simulation, the
/// stream isolates frames so frame k is identical no matter how many frames
/// are drawn.
pub fn frame_rng(seed: u64, frame: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame);
    rng
}

/// Draw a noise vector of length m.
pub fn noise_vector(m: usize, noise: &NoiseModel, seed: u64, frame: u64) -> Result<DVector<f64>> {
    noise.validate()?;
    let mut rng = frame_rng(seed, frame);
    let mut n = DVector::zeros(m);
    match noise {
        NoiseModel::None => {}
        NoiseModel::Awgn { sigma } => {
            let dist = Normal::new(0.0, *sigma).expect("validated sigma");
            for i in 0..m {
                n[i] = dist.sample(&mut rng);
            }
        }
        NoiseModel::GaussianMixture { weights, sigmas } => {
            let uniform = rand_distr::Uniform::new(0.0, 1.0)
                .expect("unit interval");
            for i in 0..m {
                let u: f64 = uniform.sample(&mut rng);
                let mut acc = 0.0;
                let mut sigma = sigmas[sigmas.len() - 1];
                for (w, s) in weights.iter().zip(sigmas) {
                    acc += w;
                    if u < acc {
                        sigma = *s;
                        break;
                    }
                }
                n[i] = Normal::new(0.0, sigma).expect("validated sigma").sample(&mut rng);
            }
        }
    }
    Ok(n)
}

/// One measurement frame: y = Wx + n.
pub fn simulate_measurement(
    w: &DMatrix<f64>,
    scene: &Scene,
    noise: &NoiseModel,
    seed: u64,
    frame: u64,
) -> Result<DVector<f64>> {
    if w.ncols() != scene.x.len() {
        return Err(RtiError::DimensionMismatch(format!(
            "W has {} columns, scene has {} voxels",
            w.ncols(),
            scene.x.len()
        )));
    }
    let mut y = w * &scene.x;
    y += noise_vector(w.nrows(), noise, seed, frame)?;
    Ok(y)
}

/// Per-link mean of raw calibration scans (dBm).
pub fn calibrate(raw_scans: &[DVector<f64>]) -> Result<DVector<f64>> {
    let first = raw_scans
        .first()
        .ok_or_else(|| RtiError::InvalidMeasurements("no calibration scans".into()))?;
    let m = first.len();
    let mut mean = DVector::zeros(m);
    for (i, scan) in raw_scans.iter().enumerate() {
        if scan.len() != m {
            return Err(RtiError::InvalidMeasurements(format!(
                "calibration scan {i} has {} links, expected {m}",
                scan.len()
            )));
        }
        mean += scan;
    }
    Ok(mean / raw_scans.len() as f64)
}

/// RSS drop: baseline minus current, positive when newly obstructed.
pub fn drops_from_rss(baseline: &DVector<f64>, current: &DVector<f64>) -> Result<DVector<f64>> {
    if baseline.len() != current.len() {
        return Err(RtiError::DimensionMismatch(format!(
            "baseline has {} links, current scan has {}",
            baseline.len(),
            current.len()
        )));
    }
    Ok(baseline - current)
}

/// Calibration baseline plus per-frame RSS-drop vectors. Drops follow
/// y = baseline - current RSS, positive when newly obstructed; sets loaded
/// from drop files carry no baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    /// Per-link baseline RSS (dBm), when known.
    pub baseline: Option<DVector<f64>>,
    /// Per-frame drop vectors y (dB).
    pub frames: Vec<DVector<f64>>,
}

impl MeasurementSet {
    pub fn link_count(&self) -> usize {
        self.frames.first().map_or(0, |f| f.len())
    }
}

/// Simulate a vehicle crossing at v voxels/frame: frame i measures the scene
/// shifted by (i - ref) * v voxels, each frame with its own noise stream.
pub fn simulate_sequence(
    w: &DMatrix<f64>,
    scene: &Scene,
    v: f64,
    n_frames: usize,
    noise: &NoiseModel,
    seed: u64,
) -> Result<MeasurementSet> {
    if n_frames == 0 {
        return Err(RtiError::InvalidMeasurements(
            "sequence needs at least one frame".into(),
        ));
    }
    let r = center_reference(n_frames);
    let mut frames = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let p = ((i as f64 - r as f64) * v).round() as i64;
        let shifted = Scene {
            grid: scene.grid,
            x: shift_scene(&scene.grid, &scene.x, p)?,
            primitives: Vec::new(),
        };
        frames.push(simulate_measurement(w, &shifted, noise, seed, i as u64)?);
    }
    Ok(MeasurementSet {
        baseline: Some(DVector::from_element(w.nrows(), DEFAULT_BASELINE_DBM)),
        frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::solve_regularized_ls;
    use crate::geometry::{enumerate_links, SensorLayout};
    use crate::priors::{QConstruction, RegularizerQ};
    use crate::weights::{build_weight_matrix, MagnitudeModel, SelectionModel};
    use approx::assert_relative_eq;

    fn unit_grid(nx: usize, ny: usize) -> GridSpec {
        GridSpec::new((nx, ny, 1), (1.0, 1.0, 1.0), [0.0; 3]).unwrap()
    }

    #[test]
    fn cylinder_membership() {
        let g = unit_grid(3, 1);
        let scene = make_scene(
            &g,
            &[Primitive::Cylinder {
                center: [1.5, 0.5, 0.0],
                radius: 0.4,
                density: 1.0,
                z_min: None,
                z_max: None,
            }],
        )
        .unwrap();
        assert_eq!(scene.x[0], 0.0);
        assert_eq!(scene.x[1], 1.0);
        assert_eq!(scene.x[2], 0.0);
    }

    #[test]
    fn cylinder_height_range() {
        let g = GridSpec::new((1, 1, 3), (1.0, 1.0, 1.0), [0.0; 3]).unwrap();
        let scene = make_scene(
            &g,
            &[Primitive::Cylinder {
                center: [0.5, 0.5, 0.0],
                radius: 1.0,
                density: 2.0,
                z_min: None,
                z_max: Some(2.0),
            }],
        )
        .unwrap();
        assert_eq!(scene.x[0], 2.0);
        assert_eq!(scene.x[1], 2.0);
        assert_eq!(scene.x[2], 0.0);
    }

    #[test]
    fn overlapping_boxes_take_max() {
        let g = unit_grid(2, 1);
        let scene = make_scene(
            &g,
            &[
                Primitive::Box {
                    min: [0.0, 0.0, 0.0],
                    max: [2.0, 1.0, 1.0],
                    density: 1.0,
                },
                Primitive::Box {
                    min: [0.0, 0.0, 0.0],
                    max: [1.0, 1.0, 1.0],
                    density: 2.0,
                },
            ],
        )
        .unwrap();
        assert_eq!(scene.x[0], 2.0);
        assert_eq!(scene.x[1], 1.0);
    }

    #[test]
    fn invalid_primitives_rejected() {
        let g = unit_grid(1, 1);
        assert!(make_scene(
            &g,
            &[Primitive::Box {
                min: [0.0; 3],
                max: [1.0; 3],
                density: -1.0
            }]
        )
        .is_err());
        assert!(make_scene(
            &g,
            &[Primitive::Cylinder {
                center: [0.0; 3],
                radius: 0.0,
                density: 1.0,
                z_min: None,
                z_max: None
            }]
        )
        .is_err());
        assert!(make_scene(
            &g,
            &[Primitive::Box {
                min: [1.0, 0.0, 0.0],
                max: [0.5, 1.0, 1.0],
                density: 1.0
            }]
        )
        .is_err());
    }

    #[test]
    fn noiseless_measurement_is_exact_forward_map() {
        let g = unit_grid(2, 2);
        let mut w = DMatrix::zeros(3, 4);
        w[(0, 0)] = 1.0;
        w[(1, 1)] = 2.0;
        w[(2, 2)] = 0.5;
        let empty = make_scene(&g, &[]).unwrap();
        let y0 = simulate_measurement(&w, &empty, &NoiseModel::None, 1, 0).unwrap();
        assert_eq!(y0.amax(), 0.0);

        let scene = make_scene(
            &g,
            &[Primitive::Box {
                min: [0.0, 0.0, 0.0],
                max: [2.0, 2.0, 1.0],
                density: 3.0,
            }],
        )
        .unwrap();
        let y = simulate_measurement(&w, &scene, &NoiseModel::None, 1, 0).unwrap();
        assert_eq!(y, &w * &scene.x);
    }

    #[test]
    fn calibration_and_drops() {
        let scans: Vec<DVector<f64>> = (0..20)
            .map(|_| DVector::from_element(4, -60.0))
            .collect();
        assert_eq!(calibrate(&scans).unwrap(), DVector::from_element(4, -60.0));

        let two = vec![
            DVector::from_element(2, -60.0),
            DVector::from_element(2, -62.0),
        ];
        assert_eq!(calibrate(&two).unwrap(), DVector::from_element(2, -61.0));

        let baseline = DVector::from_element(1, -60.0);
        let current = DVector::from_element(1, -65.0);
        assert_eq!(drops_from_rss(&baseline, &current).unwrap()[0], 5.0);

        assert!(calibrate(&[]).is_err());
        let mismatched = vec![DVector::zeros(2), DVector::zeros(3)];
        assert!(calibrate(&mismatched).is_err());
    }

    #[test]
    fn seed_determinism() {
        let g = unit_grid(2, 2);
        let scene = make_scene(&g, &[]).unwrap();
        let w = DMatrix::from_element(5, 4, 1.0);
        let noise = NoiseModel::Awgn { sigma: 4.0 };
        let a = simulate_sequence(&w, &scene, 1.0, 3, &noise, 99).unwrap();
        let b = simulate_sequence(&w, &scene, 1.0, 3, &noise, 99).unwrap();
        assert_eq!(a, b);
        let c = simulate_sequence(&w, &scene, 1.0, 3, &noise, 100).unwrap();
        assert_ne!(a.frames[0], c.frames[0]);
    }

    #[test]
    fn frame_streams_are_stable() {
        // Frame k's noise does not depend on how many frames are simulated.
        let noise = NoiseModel::Awgn { sigma: 2.0 };
        let n1 = noise_vector(6, &noise, 7, 2).unwrap();
        let n2 = noise_vector(6, &noise, 7, 2).unwrap();
        assert_eq!(n1, n2);
        let other_stream = noise_vector(6, &noise, 7, 3).unwrap();
        assert_ne!(n1, other_stream);
    }

    #[test]
    fn awgn_empirical_std() {
        let noise = NoiseModel::Awgn { sigma: 4.0 };
        let n = noise_vector(100_000, &noise, 12, 0).unwrap();
        let mean = n.mean();
        let var = n.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n.len() - 1) as f64;
        let std = var.sqrt();
        assert!((std / 4.0 - 1.0).abs() < 0.02, "std {std}");
    }

    #[test]
    fn mixture_empirical_std() {
        let noise = NoiseModel::default_mixture();
        let expect = noise.std();
        // Frozen from the component parameters: sqrt(sum w_i s_i^2).
        assert_relative_eq!(expect, 2.14309, max_relative = 1e-3);
        let n = noise_vector(1_000_000, &noise, 5, 0).unwrap();
        let mean = n.mean();
        let var = n.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n.len() - 1) as f64;
        let std = var.sqrt();
        assert!((std / expect - 1.0).abs() < 0.01, "std {std} vs {expect}");
    }

    #[test]
    fn negative_drops_happen_on_empty_links() {
        let g = unit_grid(2, 2);
        let scene = make_scene(&g, &[]).unwrap();
        let w = DMatrix::from_element(50, 4, 1.0);
        let y = simulate_measurement(&w, &scene, &NoiseModel::Awgn { sigma: 4.0 }, 3, 0).unwrap();
        assert!(y.iter().any(|v| *v < 0.0));
    }

    #[test]
    fn static_sequence_all_frames_equal() {
        let g = unit_grid(3, 1);
        let scene = make_scene(
            &g,
            &[Primitive::Box {
                min: [1.0, 0.0, 0.0],
                max: [2.0, 1.0, 1.0],
                density: 1.0,
            }],
        )
        .unwrap();
        let w = DMatrix::identity(3, 3);
        let seq = simulate_sequence(&w, &scene, 0.0, 4, &NoiseModel::None, 0).unwrap();
        for f in &seq.frames {
            assert_eq!(f, &seq.frames[0]);
        }
    }

    #[test]
    fn moving_sequence_matches_shifted_forward_map() {
        let g = unit_grid(5, 1);
        let scene = make_scene(
            &g,
            &[Primitive::Box {
                min: [2.0, 0.0, 0.0],
                max: [3.0, 1.0, 1.0],
                density: 2.0,
            }],
        )
        .unwrap();
        let w = DMatrix::identity(5, 5);
        let seq = simulate_sequence(&w, &scene, 1.0, 3, &NoiseModel::None, 0).unwrap();
        for (i, f) in seq.frames.iter().enumerate() {
            let expect = shift_scene(&g, &scene.x, i as i64 - 1).unwrap();
            assert_eq!(f, &expect);
        }
    }

    #[test]
    fn forward_inverse_round_trip() {
        let g = unit_grid(2, 2);
        let layout = SensorLayout::full_mesh(&[
            [-0.5, 0.5, 0.5],
            [2.5, 0.5, 0.5],
            [-0.5, 1.5, 0.5],
            [2.5, 1.5, 0.5],
            [0.5, -0.5, 0.5],
            [0.5, 2.5, 0.5],
            [1.5, -0.5, 0.5],
            [1.5, 2.5, 0.5],
        ]);
        let links = enumerate_links(&layout).unwrap();
        let w = build_weight_matrix(&g, &links, SelectionModel::Line, MagnitudeModel::Line, false)
            .unwrap();
        let scene = make_scene(
            &g,
            &[Primitive::Box {
                min: [0.0, 0.0, 0.0],
                max: [1.0, 2.0, 1.0],
                density: 1.5,
            }],
        )
        .unwrap();
        let y = simulate_measurement(&w.values, &scene, &NoiseModel::None, 0, 0).unwrap();
        let q = RegularizerQ::build(&g, QConstruction::AveragedFwdBck).unwrap();
        let est = solve_regularized_ls(&w.values, &y, 0.0, &q).unwrap();
        let rmse = (&est.x - &scene.x).norm() / (scene.x.len() as f64).sqrt();
        assert!(rmse < 1e-6, "rmse {rmse}");
    }
}
