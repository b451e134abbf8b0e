//! Synthetic experiment batteries: shared scene builders plus deterministic
//! runners for the negative-data policy comparison, the constrained-solver
//! oracle check, the motion suite, the detection-curve comparison, and the
//! vehicle-recognition table. The acceptance suite and the `repro-fig`
//! command both run these, so their outputs serialize byte-stably.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Result, RtiError};
use crate::estimators::{
    apply_negative_policy, nnls_bruteforce_oracle, solve_constrained_iterative, solve_pgm,
    solve_with_policy, NegPolicy, SolverConfig,
};
use crate::eval::{
    atr_classify, occupancy_mask, rmse, roc_curve, AtrTemplate, RocCurve,
    DEFAULT_OCCUPANCY_GAMMA,
};
use crate::geometry::{enumerate_links, GridSpec, Link, SensorLayout};
use crate::motion::{center_reference, estimate_velocity};
use crate::priors::{QConstruction, RegularizerQ};
use crate::simulate::{make_scene, simulate_measurement, simulate_sequence, NoiseModel, Primitive, Scene};
use crate::weights::{build_weight_matrix, MagnitudeModel, SelectionModel};

/// Seed the whole suite runs under unless a caller overrides it.
pub const DEFAULT_SUITE_SEED: u64 = 20140331;

// ---------------------------------------------------------------------------
// Shared geometry builders

/// Square perimeter test area: 6 x 6 x 1 voxels of 1 m.
pub fn perimeter_grid() -> GridSpec {
    GridSpec::new((6, 6, 1), (1.0, 1.0, 1.0), [0.0; 3]).expect("fixed grid is valid")
}

/// 28 sensors spaced evenly around the 6 m square, full mesh (378 links).
pub fn perimeter_layout() -> SensorLayout {
    let side = 6.0;
    let n = 28;
    let step = 4.0 * side / n as f64;
    let mut positions = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 * step;
        let (x, y) = if t < side {
            (t, 0.0)
        } else if t < 2.0 * side {
            (side, t - side)
        } else if t < 3.0 * side {
            (3.0 * side - t, side)
        } else {
            (0.0, 4.0 * side - t)
        };
        positions.push([x, y, 0.5]);
    }
    SensorLayout::full_mesh(&positions)
}

/// Off-center cylindrical obstruction occupying 6 of the 36 voxels.
pub fn perimeter_scene(grid: &GridSpec) -> Result<Scene> {
    make_scene(
        grid,
        &[Primitive::Cylinder {
            center: [2.3, 3.6, 0.0],
            radius: 1.25,
            density: 1.0,
            z_min: None,
            z_max: None,
        }],
    )
}

pub const POLES_PER_SIDE: usize = 9;
pub const ROAD_WIDTH_M: f64 = 4.0;
/// Pole heights repeat in this order along each row.
pub const SAWTOOTH_HEIGHTS_M: [f64; 3] = [0.5, 1.0, 1.5];

/// Roadside grid for a given pole spacing: 1 m voxels along the road
/// spanning the pole rows, 2 voxels across the 4 m road, 3 slabs of 0.5 m.
pub fn road_grid(pole_spacing_m: f64) -> Result<GridSpec> {
    let span = (POLES_PER_SIDE - 1) as f64 * pole_spacing_m;
    let nx = span.round() as usize;
    if nx == 0 || (span - nx as f64).abs() > 1e-9 {
        return Err(RtiError::InvalidGrid(format!(
            "pole spacing {pole_spacing_m} m does not give a whole number of 1 m voxels"
        )));
    }
    GridSpec::new((nx, 2, 3), (1.0, ROAD_WIDTH_M / 2.0, 0.5), [0.0; 3])
}

/// Two rows of 9 poles along the road at sawtooth heights, facing pairs only.
pub fn road_layout(pole_spacing_m: f64) -> SensorLayout {
    let pole = |i: usize, y: f64| {
        [
            i as f64 * pole_spacing_m,
            y,
            SAWTOOTH_HEIGHTS_M[i % SAWTOOTH_HEIGHTS_M.len()],
        ]
    };
    let left: Vec<[f64; 3]> = (0..POLES_PER_SIDE).map(|i| pole(i, 0.0)).collect();
    let right: Vec<[f64; 3]> = (0..POLES_PER_SIDE).map(|i| pole(i, ROAD_WIDTH_M)).collect();
    SensorLayout::cross_road(&left, &right)
}

// ---------------------------------------------------------------------------
// Vehicle outlines

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleClass {
    Electric,
    Mustang,
    Van,
    Bus,
}

impl VehicleClass {
    pub const ALL: [VehicleClass; 4] = [
        VehicleClass::Electric,
        VehicleClass::Mustang,
        VehicleClass::Van,
        VehicleClass::Bus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VehicleClass::Electric => "electric",
            VehicleClass::Mustang => "mustang",
            VehicleClass::Van => "van",
            VehicleClass::Bus => "bus",
        }
    }

    pub fn length_m(self) -> f64 {
        match self {
            VehicleClass::Electric => 2.0,
            VehicleClass::Mustang => 5.0,
            VehicleClass::Van => 6.0,
            VehicleClass::Bus => 10.0,
        }
    }
}

/// Full-road-width box outline of a vehicle, centered along the grid and
/// snapped to voxel boundaries; longer vehicles than the grid are clipped.
/// The mustang gets a low body plus a short cabin on the top slab.
pub fn vehicle_primitives(class: VehicleClass, grid: &GridSpec, density: f64) -> Vec<Primitive> {
    let span = grid.nx as f64 * grid.dx;
    let len = class.length_m();
    let x0 = ((span - len) / 2.0).floor().max(0.0);
    let width = grid.ny as f64 * grid.dy;
    let top = grid.nz as f64 * grid.dz;
    match class {
        VehicleClass::Mustang => {
            let body_top = 2.0 * grid.dz;
            let cabin_x0 = x0 + ((len - 2.0) / 2.0).floor();
            vec![
                Primitive::Box {
                    min: [x0, 0.0, 0.0],
                    max: [x0 + len, width, body_top],
                    density,
                },
                Primitive::Box {
                    min: [cabin_x0, 0.0, body_top],
                    max: [cabin_x0 + 2.0, width, top],
                    density,
                },
            ]
        }
        _ => vec![Primitive::Box {
            min: [x0, 0.0, 0.0],
            max: [x0 + len, width, top],
            density,
        }],
    }
}

/// One binary template per vehicle class, rasterized on the given grid.
pub fn vehicle_templates(grid: &GridSpec) -> Result<Vec<AtrTemplate>> {
    VehicleClass::ALL
        .iter()
        .map(|&class| {
            let scene = make_scene(grid, &vehicle_primitives(class, grid, 1.0))?;
            Ok(AtrTemplate {
                name: class.name().to_string(),
                mask: scene.x.iter().map(|v| *v > 0.0).collect(),
            })
        })
        .collect()
}

fn line_weights(grid: &GridSpec, links: &[Link]) -> Result<DMatrix<f64>> {
    Ok(build_weight_matrix(grid, links, SelectionModel::Line, MagnitudeModel::Line, false)?.values)
}

fn cfg(alpha: f64, beta: f64, neg_policy: NegPolicy) -> SolverConfig {
    SolverConfig {
        alpha,
        beta,
        neg_policy,
        ..SolverConfig::default()
    }
}

// ---------------------------------------------------------------------------
// Paired statistics

/// Mean and standard error of paired per-realization differences.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PairedStat {
    pub mean: f64,
    pub std_err: f64,
    pub n: usize,
}

impl PairedStat {
    pub fn from_differences(d: &[f64]) -> PairedStat {
        let n = d.len();
        assert!(n >= 2, "paired statistic needs at least two samples");
        let mean = d.iter().sum::<f64>() / n as f64;
        let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        PairedStat {
            mean,
            std_err: (var / n as f64).sqrt(),
            n,
        }
    }

    /// One-sided test at 95%: the mean difference is positive.
    pub fn significantly_positive(&self) -> bool {
        self.mean - 1.645 * self.std_err > 0.0
    }

    /// The data do not contradict a nonnegative mean difference at 95%.
    pub fn compatible_with_nonnegative(&self) -> bool {
        self.mean >= -1.645 * self.std_err
    }
}

// ---------------------------------------------------------------------------
// Negative-data policy battery (RMSE over the alpha/beta plane)

#[derive(Debug, Clone, Serialize)]
pub struct NegBatteryConfig {
    pub n_realizations: usize,
    pub sigma_n: f64,
    pub seed: u64,
    /// Ascending regularization weights.
    pub alphas: Vec<f64>,
    /// Bias weights; must include 0.
    pub betas: Vec<f64>,
}

impl Default for NegBatteryConfig {
    fn default() -> Self {
        NegBatteryConfig {
            n_realizations: 120,
            sigma_n: 1.0,
            seed: DEFAULT_SUITE_SEED,
            alphas: vec![0.03, 0.1, 0.3, 1.0, 3.0, 10.0],
            betas: vec![0.0, -0.5, -1.0, -2.0, -5.0, -10.0, -20.0],
        }
    }
}

/// Per-cell RMSE samples over one policy's (alpha, beta) plane.
#[derive(Debug, Clone, Serialize)]
pub struct RmseSurface {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    /// rmse[alpha_idx][beta_idx][realization]
    pub rmse: Vec<Vec<Vec<f64>>>,
    /// mean_rmse[alpha_idx][beta_idx]
    pub mean_rmse: Vec<Vec<f64>>,
    pub best_alpha_index: usize,
    pub best_beta_index: usize,
}

impl RmseSurface {
    fn from_samples(alphas: &[f64], betas: &[f64], rmse: Vec<Vec<Vec<f64>>>) -> RmseSurface {
        let mean_rmse: Vec<Vec<f64>> = rmse
            .iter()
            .map(|row| {
                row.iter()
                    .map(|cell| cell.iter().sum::<f64>() / cell.len() as f64)
                    .collect()
            })
            .collect();
        let (mut ba, mut bb) = (0, 0);
        for (ai, row) in mean_rmse.iter().enumerate() {
            for (bi, &m) in row.iter().enumerate() {
                if m < mean_rmse[ba][bb] {
                    (ba, bb) = (ai, bi);
                }
            }
        }
        RmseSurface {
            alphas: alphas.to_vec(),
            betas: betas.to_vec(),
            rmse,
            mean_rmse,
            best_alpha_index: ba,
            best_beta_index: bb,
        }
    }

    pub fn best_mean(&self) -> f64 {
        self.mean_rmse[self.best_alpha_index][self.best_beta_index]
    }

    pub fn best_samples(&self) -> &[f64] {
        &self.rmse[self.best_alpha_index][self.best_beta_index]
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NegPolicyBattery {
    pub config: NegBatteryConfig,
    pub truncate_y: RmseSurface,
    pub iterative: RmseSurface,
    /// 0.75 * best truncate-y RMSE minus best iterative RMSE, paired.
    pub margin_vs_truncate_y: PairedStat,
    /// Truncate-y at its best beta = 0 cell minus its overall best, paired.
    pub beta_gain_truncate_y: PairedStat,
    /// For adjacent alphas at the iterative best beta: rmse(larger alpha)
    /// minus rmse(smaller alpha); each should not be significantly negative.
    pub alpha_steps_iterative: Vec<PairedStat>,
}

impl NegPolicyBattery {
    /// Best iterative RMSE at least 25% below best truncate-y, at 95%.
    pub fn iterative_beats_truncate_y(&self) -> bool {
        self.margin_vs_truncate_y.significantly_positive()
    }

    /// Optimizing beta improves truncate-y over beta = 0, at 95%.
    pub fn beta_improves_truncate_y(&self) -> bool {
        self.beta_gain_truncate_y.significantly_positive()
    }

    /// RMSE does not increase as alpha shrinks, at 95% per step.
    pub fn iterative_monotone_in_alpha(&self) -> bool {
        self.alpha_steps_iterative
            .iter()
            .all(PairedStat::compatible_with_nonnegative)
    }
}

/// Sweep the cost parameters over a noisy perimeter scene, reconstructing
/// every realization with both negative-data pipelines on common noise.
pub fn run_negative_policy_battery(config: &NegBatteryConfig) -> Result<NegPolicyBattery> {
    if config.n_realizations < 2 {
        return Err(RtiError::InvalidMeasurements(
            "battery needs at least two realizations".into(),
        ));
    }
    if config.alphas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(RtiError::InvalidSolverConfig(
            "alpha grid must be strictly ascending".into(),
        ));
    }
    let beta_zero = config
        .betas
        .iter()
        .position(|b| *b == 0.0)
        .ok_or_else(|| RtiError::InvalidSolverConfig("beta grid must include 0".into()))?;

    let grid = perimeter_grid();
    let layout = perimeter_layout();
    let links = enumerate_links(&layout)?;
    let w = line_weights(&grid, &links)?;
    let q = RegularizerQ::build(&grid, QConstruction::AveragedFwdBck)?;
    let scene = perimeter_scene(&grid)?;
    let noise = NoiseModel::Awgn {
        sigma: config.sigma_n,
    };

    let ys: Vec<DVector<f64>> = (0..config.n_realizations)
        .map(|r| simulate_measurement(&w, &scene, &noise, config.seed, r as u64))
        .collect::<Result<_>>()?;

    let (na, nb, nr) = (config.alphas.len(), config.betas.len(), ys.len());
    let mut rmse_ty = vec![vec![vec![0.0; nr]; nb]; na];
    let mut rmse_iter = vec![vec![vec![0.0; nr]; nb]; na];
    for (ai, &alpha) in config.alphas.iter().enumerate() {
        for (bi, &beta) in config.betas.iter().enumerate() {
            let c_ty = cfg(alpha, beta, NegPolicy::TruncateY);
            let c_it = cfg(alpha, beta, NegPolicy::Iterative { max_rounds: 3 });
            for (r, y) in ys.iter().enumerate() {
                let ty = apply_negative_policy(&w, y, &q, &c_ty)?;
                let it = solve_constrained_iterative(&w, y, &q, &c_it)?;
                rmse_ty[ai][bi][r] = rmse(&ty.x, &scene.x)?;
                rmse_iter[ai][bi][r] = rmse(&it.x, &scene.x)?;
            }
        }
    }

    let truncate_y = RmseSurface::from_samples(&config.alphas, &config.betas, rmse_ty);
    let iterative = RmseSurface::from_samples(&config.alphas, &config.betas, rmse_iter);

    let d_margin: Vec<f64> = truncate_y
        .best_samples()
        .iter()
        .zip(iterative.best_samples())
        .map(|(ty, it)| 0.75 * ty - it)
        .collect();
    let margin_vs_truncate_y = PairedStat::from_differences(&d_margin);

    let best_alpha_at_beta_zero = (0..truncate_y.alphas.len())
        .min_by(|&a, &b| {
            truncate_y.mean_rmse[a][beta_zero]
                .total_cmp(&truncate_y.mean_rmse[b][beta_zero])
        })
        .expect("alpha grid is nonempty");
    let d_beta: Vec<f64> = truncate_y.rmse[best_alpha_at_beta_zero][beta_zero]
        .iter()
        .zip(truncate_y.best_samples())
        .map(|(zero, best)| zero - best)
        .collect();
    let beta_gain_truncate_y = PairedStat::from_differences(&d_beta);

    let bb = iterative.best_beta_index;
    let alpha_steps_iterative: Vec<PairedStat> = (0..na - 1)
        .map(|ai| {
            let d: Vec<f64> = iterative.rmse[ai + 1][bb]
                .iter()
                .zip(&iterative.rmse[ai][bb])
                .map(|(hi, lo)| hi - lo)
                .collect();
            PairedStat::from_differences(&d)
        })
        .collect();

    Ok(NegPolicyBattery {
        config: config.clone(),
        truncate_y,
        iterative,
        margin_vs_truncate_y,
        beta_gain_truncate_y,
        alpha_steps_iterative,
    })
}

// ---------------------------------------------------------------------------
// Constrained-solver oracle battery

#[derive(Debug, Clone, Serialize)]
pub struct OracleBatteryConfig {
    pub n_instances: usize,
    pub seed: u64,
    pub pgm_iters: usize,
    /// Scaled gap below which PGM counts as matching the oracle.
    pub pgm_gap_tol: f64,
}

impl Default for OracleBatteryConfig {
    fn default() -> Self {
        OracleBatteryConfig {
            n_instances: 200,
            seed: DEFAULT_SUITE_SEED,
            pgm_iters: 200,
            pgm_gap_tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct OracleInstance {
    pub n: usize,
    pub m: usize,
    pub alpha: f64,
    pub beta: f64,
    pub oracle_cost: f64,
    pub truncate_x_cost: f64,
    pub iterative_cost: f64,
    pub pgm_cost: f64,
}

impl OracleInstance {
    pub fn pgm_gap(&self) -> f64 {
        (self.pgm_cost - self.oracle_cost) / (1.0 + self.oracle_cost.abs())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleBattery {
    pub config: OracleBatteryConfig,
    pub instances: Vec<OracleInstance>,
}

fn le_with_slack(a: f64, b: f64) -> bool {
    a <= b + 1e-9 * (1.0 + b.abs())
}

impl OracleBattery {
    /// The enumerated optimum never costs more than any feasible policy.
    pub fn oracle_dominates(&self) -> bool {
        self.instances.iter().all(|i| {
            le_with_slack(i.oracle_cost, i.truncate_x_cost)
                && le_with_slack(i.oracle_cost, i.iterative_cost)
                && le_with_slack(i.oracle_cost, i.pgm_cost)
        })
    }

    pub fn pgm_match_fraction(&self) -> f64 {
        let hits = self
            .instances
            .iter()
            .filter(|i| i.pgm_gap() <= self.config.pgm_gap_tol)
            .count();
        hits as f64 / self.instances.len() as f64
    }

    pub fn iterative_never_worse_than_truncate_x(&self) -> bool {
        self.instances
            .iter()
            .all(|i| i.iterative_cost <= i.truncate_x_cost + 1e-12 * (1.0 + i.truncate_x_cost.abs()))
    }
}

/// Random small dense instances where exhaustive support search is exact.
pub fn run_oracle_battery(config: &OracleBatteryConfig) -> Result<OracleBattery> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut instances = Vec::with_capacity(config.n_instances);
    for _ in 0..config.n_instances {
        let n = rng.random_range(2..=6);
        let m = rng.random_range(n..=n + 4);
        let w = DMatrix::from_fn(m, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x_true = DVector::from_fn(n, |_, _| {
            if rng.random_bool(0.5) {
                rng.random_range(0.0..1.0)
            } else {
                0.0
            }
        });
        let noise = DVector::from_fn(m, |_, _| 0.5 * rng.sample::<f64, _>(StandardNormal));
        let y = &w * &x_true + noise;
        let alpha = rng.random_range(0.05..1.0);
        let beta = if rng.random_bool(1.0 / 3.0) {
            0.0
        } else {
            -rng.random_range(0.0..0.5)
        };
        let grid = GridSpec::new((n, 1, 1), (1.0, 1.0, 1.0), [0.0; 3])?;
        let q = RegularizerQ::build(&grid, QConstruction::SumOfSquaredDiffs)?;

        let oracle = nnls_bruteforce_oracle(&w, &y, alpha, &q, beta)?;
        let tx = apply_negative_policy(&w, &y, &q, &cfg(alpha, beta, NegPolicy::TruncateX))?;
        let it = solve_constrained_iterative(
            &w,
            &y,
            &q,
            &cfg(alpha, beta, NegPolicy::Iterative { max_rounds: 3 }),
        )?;
        let pgm = solve_pgm(
            &w,
            &y,
            &q,
            &cfg(
                alpha,
                beta,
                NegPolicy::Pgm {
                    mu: None,
                    iters: config.pgm_iters,
                },
            ),
        )?;
        instances.push(OracleInstance {
            n,
            m,
            alpha,
            beta,
            oracle_cost: oracle.cost,
            truncate_x_cost: tx.cost,
            iterative_cost: it.cost,
            pgm_cost: pgm.cost,
        });
    }
    Ok(OracleBattery {
        config: config.clone(),
        instances,
    })
}

// ---------------------------------------------------------------------------
// Motion battery

#[derive(Debug, Clone, Serialize)]
pub struct MotionBatteryConfig {
    pub n_trials: usize,
    pub sigma_n: f64,
    pub seed: u64,
    pub n_frames: usize,
}

impl Default for MotionBatteryConfig {
    fn default() -> Self {
        MotionBatteryConfig {
            n_trials: 30,
            sigma_n: 4.0,
            seed: DEFAULT_SUITE_SEED,
            n_frames: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MotionTrial {
    pub v_true: i64,
    pub v_hat_noiseless: f64,
    pub v_hat_noisy: f64,
    pub rmse_single: f64,
    pub rmse_stacked: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MotionBattery {
    pub config: MotionBatteryConfig,
    pub trials: Vec<MotionTrial>,
}

fn velocity_matches(v_hat: f64, v_true: i64) -> bool {
    (v_hat - v_true as f64).abs() < 0.5
}

impl MotionBattery {
    pub fn noiseless_recovery_rate(&self) -> f64 {
        let hits = self
            .trials
            .iter()
            .filter(|t| velocity_matches(t.v_hat_noiseless, t.v_true))
            .count();
        hits as f64 / self.trials.len() as f64
    }

    pub fn noisy_recovery_rate(&self) -> f64 {
        let hits = self
            .trials
            .iter()
            .filter(|t| velocity_matches(t.v_hat_noisy, t.v_true))
            .count();
        hits as f64 / self.trials.len() as f64
    }

    pub fn stacking_improvement_rate(&self) -> f64 {
        let hits = self
            .trials
            .iter()
            .filter(|t| t.rmse_stacked < t.rmse_single)
            .count();
        hits as f64 / self.trials.len() as f64
    }
}

/// Random full-width boxes crossing the 16-voxel road grid at integer
/// velocities, reconstructed from the middle frame alone and from the
/// velocity-searched stack.
pub fn run_motion_battery(config: &MotionBatteryConfig) -> Result<MotionBattery> {
    let grid = road_grid(2.0)?;
    let layout = road_layout(2.0);
    let links = enumerate_links(&layout)?;
    let w = line_weights(&grid, &links)?;
    let q = RegularizerQ::build(&grid, QConstruction::AveragedFwdBck)?;
    let candidates: Vec<f64> = (-4..=4).map(|v| v as f64).collect();
    let iterative = NegPolicy::Iterative { max_rounds: 3 };
    let exact_cfg = cfg(1e-6, 0.0, iterative.clone());
    let noisy_cfg = cfg(1.0, 0.0, iterative);
    let ref_index = center_reference(config.n_frames);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trials = Vec::with_capacity(config.n_trials);
    for _ in 0..config.n_trials {
        let v_true = rng.random_range(-3..=3i64);
        let len = rng.random_range(3..=6usize);
        let slabs = rng.random_range(2..=3usize);
        let x0 = rng.random_range(0..=grid.nx - len);
        let trial_seed = rng.random::<u64>();
        let scene = make_scene(
            &grid,
            &[Primitive::Box {
                min: [x0 as f64, 0.0, 0.0],
                max: [(x0 + len) as f64, ROAD_WIDTH_M, slabs as f64 * grid.dz],
                density: 3.0,
            }],
        )?;

        let clean = simulate_sequence(
            &w,
            &scene,
            v_true as f64,
            config.n_frames,
            &NoiseModel::None,
            trial_seed,
        )?;
        let clean_est = estimate_velocity(
            &grid,
            &w,
            &clean.frames,
            &candidates,
            None,
            &q,
            &exact_cfg,
            false,
        )?;

        let noisy = simulate_sequence(
            &w,
            &scene,
            v_true as f64,
            config.n_frames,
            &NoiseModel::Awgn {
                sigma: config.sigma_n,
            },
            trial_seed,
        )?;
        let noisy_est = estimate_velocity(
            &grid,
            &w,
            &noisy.frames,
            &candidates,
            None,
            &q,
            &noisy_cfg,
            false,
        )?;
        let stacked_x = &noisy_est.candidates[noisy_est.best_index].estimate.x;
        let single = solve_with_policy(&w, &noisy.frames[ref_index], &q, &noisy_cfg)?;

        trials.push(MotionTrial {
            v_true,
            v_hat_noiseless: clean_est.v_hat,
            v_hat_noisy: noisy_est.v_hat,
            rmse_single: rmse(&single.x, &scene.x)?,
            rmse_stacked: rmse(stacked_x, &scene.x)?,
        });
    }
    Ok(MotionBattery {
        config: config.clone(),
        trials,
    })
}

// ---------------------------------------------------------------------------
// Detection-curve battery

#[derive(Debug, Clone, Serialize)]
pub struct RocBatteryConfig {
    pub n_realizations: usize,
    pub sigma_n: f64,
    pub seed: u64,
    pub pf_grid: Vec<f64>,
}

impl Default for RocBatteryConfig {
    fn default() -> Self {
        RocBatteryConfig {
            n_realizations: 60,
            sigma_n: 4.0,
            seed: DEFAULT_SUITE_SEED,
            pf_grid: vec![0.02, 0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9],
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RocBattery {
    pub config: RocBatteryConfig,
    pub iterative: RocCurve,
    pub truncate_x: RocCurve,
    pub pd_iterative: Vec<f64>,
    pub pd_truncate_x: Vec<f64>,
}

impl RocBattery {
    /// Smallest detection-rate lead of the iterative curve on the grid.
    pub fn dominance_margin(&self) -> f64 {
        self.pd_iterative
            .iter()
            .zip(&self.pd_truncate_x)
            .map(|(a, b)| a - b)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Pool single-frame reconstructions of a noisy parked mustang and compare
/// the two feasible negative-data policies as occupancy detectors.
pub fn run_roc_battery(config: &RocBatteryConfig) -> Result<RocBattery> {
    let grid = road_grid(2.0)?;
    let layout = road_layout(2.0);
    let links = enumerate_links(&layout)?;
    let w = line_weights(&grid, &links)?;
    let q = RegularizerQ::build(&grid, QConstruction::AveragedFwdBck)?;
    let scene = make_scene(
        &grid,
        &vehicle_primitives(VehicleClass::Mustang, &grid, 3.0),
    )?;
    let truth = occupancy_mask(&scene.x, 0.0);
    let noise = NoiseModel::Awgn {
        sigma: config.sigma_n,
    };
    let c_it = cfg(1.0, 0.0, NegPolicy::Iterative { max_rounds: 3 });
    let c_tx = cfg(1.0, 0.0, NegPolicy::TruncateX);

    let mut est_it = Vec::with_capacity(config.n_realizations);
    let mut est_tx = Vec::with_capacity(config.n_realizations);
    for r in 0..config.n_realizations {
        let y = simulate_measurement(&w, &scene, &noise, config.seed, r as u64)?;
        est_it.push(solve_constrained_iterative(&w, &y, &q, &c_it)?.x);
        est_tx.push(apply_negative_policy(&w, &y, &q, &c_tx)?.x);
    }

    let peak = est_it
        .iter()
        .chain(&est_tx)
        .map(|x| x.amax())
        .fold(0.0f64, f64::max);
    let gammas = crate::eval::default_gamma_grid(peak.max(1e-3));
    let truths = vec![truth; config.n_realizations];
    let iterative = roc_curve(&est_it, &truths, &gammas)?;
    let truncate_x = roc_curve(&est_tx, &truths, &gammas)?;
    let pd_iterative: Vec<f64> = config.pf_grid.iter().map(|&p| iterative.pd_at(p)).collect();
    let pd_truncate_x: Vec<f64> = config.pf_grid.iter().map(|&p| truncate_x.pd_at(p)).collect();

    Ok(RocBattery {
        config: config.clone(),
        iterative,
        truncate_x,
        pd_iterative,
        pd_truncate_x,
    })
}

// ---------------------------------------------------------------------------
// Vehicle-recognition battery

#[derive(Debug, Clone, Serialize)]
pub struct AtrBatteryConfig {
    pub sigma_n: f64,
    pub seed: u64,
    pub gamma: f64,
}

impl Default for AtrBatteryConfig {
    fn default() -> Self {
        AtrBatteryConfig {
            sigma_n: 4.0,
            seed: DEFAULT_SUITE_SEED,
            gamma: DEFAULT_OCCUPANCY_GAMMA,
        }
    }
}

/// The nine test setups: vehicle, frame count, velocity (voxels/frame), and
/// pole spacing (m).
pub const ATR_TESTS: [(VehicleClass, usize, f64, f64); 9] = [
    (VehicleClass::Mustang, 5, 4.0, 2.0),
    (VehicleClass::Van, 5, 4.0, 2.0),
    (VehicleClass::Electric, 4, 4.0, 2.0),
    (VehicleClass::Bus, 4, 4.0, 2.0),
    (VehicleClass::Mustang, 5, 4.0, 1.0),
    (VehicleClass::Mustang, 12, 1.0, 1.0),
    (VehicleClass::Mustang, 12, 1.0, 1.0),
    (VehicleClass::Mustang, 21, 1.0, 2.0),
    (VehicleClass::Mustang, 21, 1.0, 2.0),
];

#[derive(Debug, Clone, Serialize)]
pub struct AtrRun {
    pub test_no: usize,
    pub vehicle: &'static str,
    pub n_frames: usize,
    pub v_true: f64,
    pub pole_spacing: f64,
    pub v_hat: f64,
    pub predicted: String,
    pub correct: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AtrBattery {
    pub config: AtrBatteryConfig,
    pub runs: Vec<AtrRun>,
}

impl AtrBattery {
    pub fn n_correct(&self) -> usize {
        self.runs.iter().filter(|r| r.correct).count()
    }

    /// Every misclassification involves the smallest vehicle class.
    pub fn confusions_only_smallest(&self) -> bool {
        self.runs.iter().all(|r| {
            r.correct
                || r.vehicle == VehicleClass::Electric.name()
                || r.predicted == VehicleClass::Electric.name()
        })
    }
}

/// Simulate each test's drive-through, search the velocity, reconstruct
/// from the stack, and classify the occupancy against the templates.
pub fn run_atr_battery(config: &AtrBatteryConfig) -> Result<AtrBattery> {
    let mut cached: Vec<(f64, GridSpec, DMatrix<f64>, RegularizerQ, Vec<AtrTemplate>)> =
        Vec::new();
    let candidates: Vec<f64> = (-6..=6).map(|v| v as f64).collect();
    let solver = cfg(1.0, 0.0, NegPolicy::Iterative { max_rounds: 3 });
    let noise = NoiseModel::Awgn {
        sigma: config.sigma_n,
    };

    let mut runs = Vec::with_capacity(ATR_TESTS.len());
    for (t, &(vehicle, n_frames, v_true, spacing)) in ATR_TESTS.iter().enumerate() {
        if !cached.iter().any(|(s, ..)| *s == spacing) {
            let grid = road_grid(spacing)?;
            let links = enumerate_links(&road_layout(spacing))?;
            let w = line_weights(&grid, &links)?;
            let q = RegularizerQ::build(&grid, QConstruction::AveragedFwdBck)?;
            let templates = vehicle_templates(&grid)?;
            cached.push((spacing, grid, w, q, templates));
        }
        let (_, grid, w, q, templates) = cached
            .iter()
            .find(|(s, ..)| *s == spacing)
            .expect("just cached");

        let scene = make_scene(grid, &vehicle_primitives(vehicle, grid, 3.0))?;
        let seq = simulate_sequence(w, &scene, v_true, n_frames, &noise, config.seed + t as u64)?;
        let est = estimate_velocity(
            grid,
            w,
            &seq.frames,
            &candidates,
            None,
            q,
            &solver,
            false,
        )?;
        let x_hat = &est.candidates[est.best_index].estimate.x;
        let predicted = atr_classify(x_hat, templates, config.gamma)?;
        runs.push(AtrRun {
            test_no: t + 1,
            vehicle: vehicle.name(),
            n_frames,
            v_true,
            pole_spacing: spacing,
            v_hat: est.v_hat,
            predicted: predicted.clone(),
            correct: predicted == vehicle.name(),
        });
    }
    Ok(AtrBattery {
        config: config.clone(),
        runs,
    })
}

// ---------------------------------------------------------------------------
// Full suite

#[derive(Debug, Clone, Serialize)]
pub struct BatterySuite {
    pub negative_policy: NegPolicyBattery,
    pub oracle: OracleBattery,
    pub motion: MotionBattery,
    pub roc: RocBattery,
    pub atr: AtrBattery,
}

impl BatterySuite {
    /// Canonical serialization; reruns with the same seed must match it
    /// byte for byte.
    pub fn fingerprint(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Run every battery off one seed with the default configurations.
pub fn run_full_suite(seed: u64) -> Result<BatterySuite> {
    let negative_policy = run_negative_policy_battery(&NegBatteryConfig {
        seed,
        ..NegBatteryConfig::default()
    })?;
    let oracle = run_oracle_battery(&OracleBatteryConfig {
        seed,
        ..OracleBatteryConfig::default()
    })?;
    let motion = run_motion_battery(&MotionBatteryConfig {
        seed,
        ..MotionBatteryConfig::default()
    })?;
    let roc = run_roc_battery(&RocBatteryConfig {
        seed,
        ..RocBatteryConfig::default()
    })?;
    let atr = run_atr_battery(&AtrBatteryConfig {
        seed,
        ..AtrBatteryConfig::default()
    })?;
    Ok(BatterySuite {
        negative_policy,
        oracle,
        motion,
        roc,
        atr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perimeter_geometry() {
        let grid = perimeter_grid();
        assert_eq!(grid.voxel_count(), 36);
        let layout = perimeter_layout();
        assert_eq!(layout.sensors.len(), 28);
        assert_eq!(enumerate_links(&layout).unwrap().len(), 378);
        let scene = perimeter_scene(&grid).unwrap();
        assert_eq!(scene.x.iter().filter(|v| **v > 0.0).count(), 6);
    }

    #[test]
    fn road_geometry_by_spacing() {
        for (spacing, nx) in [(2.0, 16), (1.0, 8)] {
            let grid = road_grid(spacing).unwrap();
            assert_eq!((grid.nx, grid.ny, grid.nz), (nx, 2, 3));
            let layout = road_layout(spacing);
            assert_eq!(enumerate_links(&layout).unwrap().len(), 81);
        }
        assert!(road_grid(0.3).is_err());
    }

    #[test]
    fn templates_are_distinct_and_ordered_by_size() {
        for spacing in [2.0, 1.0] {
            let grid = road_grid(spacing).unwrap();
            let templates = vehicle_templates(&grid).unwrap();
            assert_eq!(templates.len(), 4);
            let sizes: Vec<usize> = templates
                .iter()
                .map(|t| t.mask.iter().filter(|b| **b).count())
                .collect();
            for w in sizes.windows(2) {
                assert!(w[0] < w[1], "sizes not increasing: {sizes:?}");
            }
        }
        // 1 m voxels: electric 2x2x3, mustang 5x2x2 + 2x2x1, van 6x2x3.
        let grid = road_grid(2.0).unwrap();
        let templates = vehicle_templates(&grid).unwrap();
        let count = |i: usize| templates[i].mask.iter().filter(|b| **b).count();
        assert_eq!(count(0), 12);
        assert_eq!(count(1), 24);
        assert_eq!(count(2), 36);
        assert_eq!(count(3), 60);
    }

    #[test]
    fn paired_stat_basics() {
        let s = PairedStat::from_differences(&[1.0, 1.2, 0.8, 1.1, 0.9]);
        assert!(s.significantly_positive());
        assert!(s.compatible_with_nonnegative());
        let t = PairedStat::from_differences(&[0.1, -0.1, 0.05, -0.05]);
        assert!(!t.significantly_positive());
        assert!(t.compatible_with_nonnegative());
    }

    #[test]
    fn small_negative_policy_battery_runs() {
        let config = NegBatteryConfig {
            n_realizations: 6,
            alphas: vec![0.1, 1.0],
            betas: vec![0.0, -1.0],
            ..NegBatteryConfig::default()
        };
        let battery = run_negative_policy_battery(&config).unwrap();
        assert_eq!(battery.truncate_y.rmse.len(), 2);
        assert_eq!(battery.truncate_y.rmse[0][0].len(), 6);
        assert_eq!(battery.alpha_steps_iterative.len(), 1);
        // Same seed, same numbers.
        let again = run_negative_policy_battery(&config).unwrap();
        assert_eq!(
            serde_json::to_string(&battery).unwrap(),
            serde_json::to_string(&again).unwrap()
        );
    }

    #[test]
    fn small_oracle_battery_holds() {
        let config = OracleBatteryConfig {
            n_instances: 25,
            ..OracleBatteryConfig::default()
        };
        let battery = run_oracle_battery(&config).unwrap();
        assert!(battery.oracle_dominates());
        assert!(battery.iterative_never_worse_than_truncate_x());
        assert!(battery.pgm_match_fraction() > 0.5);
    }

    #[test]
    fn small_motion_battery_recovers_noiseless() {
        let config = MotionBatteryConfig {
            n_trials: 4,
            ..MotionBatteryConfig::default()
        };
        let battery = run_motion_battery(&config).unwrap();
        assert_eq!(battery.noiseless_recovery_rate(), 1.0);
    }

    #[test]
    fn small_roc_battery_monotone() {
        let config = RocBatteryConfig {
            n_realizations: 8,
            ..RocBatteryConfig::default()
        };
        let battery = run_roc_battery(&config).unwrap();
        assert!(battery.iterative.is_monotone());
        assert!(battery.truncate_x.is_monotone());
        assert_eq!(battery.pd_iterative.len(), config.pf_grid.len());
    }

    #[test]
    fn atr_battery_structure() {
        let battery = run_atr_battery(&AtrBatteryConfig::default()).unwrap();
        assert_eq!(battery.runs.len(), 9);
        let spacings: Vec<f64> = battery.runs.iter().map(|r| r.pole_spacing).collect();
        assert_eq!(spacings, [2.0, 2.0, 2.0, 2.0, 1.0, 1.0, 1.0, 2.0, 2.0]);
        for r in &battery.runs {
            assert!(r.v_hat.abs() <= 6.0);
        }
    }
}
