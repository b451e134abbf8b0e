//! Experiment configuration: one JSON document drives a full pipeline run.
//!
//! Top-level sections are `grid`, `layout`, `weights`, `solver`, `noise`,
//! `motion`, `evaluation`, and `scene`. The `grid`, `layout`, and `scene`
//! sections hold either inline content or `{"file": "path"}` references,
//! resolved relative to the configuration file. Every section rejects
//! unknown keys before any computation starts; omitted sections fall back
//! to documented defaults (see `docs/config-schema.md`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use rti_core::estimators::{NegPolicy, SolverConfig, DEFAULT_ITERATIVE_ROUNDS};
use rti_core::eval::DEFAULT_OCCUPANCY_GAMMA;
use rti_core::geometry::{enumerate_links, GridSpec, Link, SensorLayout};
use rti_core::io;
use rti_core::priors::{alpha_from_prior, correlation_from_spacing, QConstruction, RegularizerQ};
use rti_core::simulate::{NoiseModel, Primitive};
use rti_core::weights::{
    build_weight_matrix, MagnitudeModel, SelectionModel, WeightMatrix, DEFAULT_LAMBDA_FLOOR,
};

use crate::error::CliError;
use crate::manifest::RunContext;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: Value,
    pub layout: Value,
    #[serde(default)]
    pub weights: WeightSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub motion: MotionSection,
    #[serde(default)]
    pub evaluation: EvalSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightSection {
    /// Which link-voxel pairs carry weight: `ellipse` | `line` | `all`.
    pub select: String,
    /// Ellipse tuning parameter (meters), used by `select = "ellipse"`.
    pub lambda: f64,
    /// Weight magnitude: `nesh` | `line` | `nesh-line` | `expdec` | `invarea`.
    pub magnitude: String,
    /// Decay constant (meters) for `magnitude = "expdec"`.
    pub sigma_lambda: f64,
    /// Excess-distance floor for `magnitude = "invarea"`.
    pub lambda_floor: f64,
    /// Rescale to the Frobenius norm of the line/line matrix.
    pub normalize: bool,
}

impl Default for WeightSection {
    fn default() -> Self {
        WeightSection {
            select: "line".into(),
            lambda: 0.02,
            magnitude: "line".into(),
            sigma_lambda: 0.05,
            lambda_floor: DEFAULT_LAMBDA_FLOOR,
            normalize: false,
        }
    }
}

/// Regularization weight: a number, or `"auto"` to derive it from the noise
/// and prior scales (`sigma_n`, `sigma_x`, `delta_c`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSetting {
    Value(f64),
    Named(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub alpha: AlphaSetting,
    pub beta: f64,
    /// `none` | `trunc-x` | `trunc-y` | `iterative` | `pgm`.
    pub neg_policy: String,
    /// Re-solve rounds for `iterative`.
    pub max_rounds: usize,
    /// Projected-gradient step; omit for the automatic bound.
    pub mu: Option<f64>,
    /// Projected-gradient iteration cap.
    pub iters: usize,
    /// Difference penalty: `averaged_fwd_bck` | `sum_of_squared_diffs`.
    pub regularizer: String,
    /// Noise standard deviation (dB), used by `alpha = "auto"`.
    pub sigma_n: f64,
    /// Prior standard deviation (dB/m), used by `alpha = "auto"`.
    pub sigma_x: f64,
    /// Prior correlation space constant (meters), used by `alpha = "auto"`.
    pub delta_c: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            alpha: AlphaSetting::Value(1.0),
            beta: 0.0,
            neg_policy: "iterative".into(),
            max_rounds: DEFAULT_ITERATIVE_ROUNDS,
            mu: None,
            iters: 200,
            regularizer: "averaged_fwd_bck".into(),
            sigma_n: 1.0,
            sigma_x: 1.0,
            delta_c: 3.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    /// `none` | `awgn` | `mixture`.
    pub model: String,
    /// AWGN standard deviation (dB).
    pub sigma: f64,
    /// Mixture component weights; omit both lists for the fitted default.
    pub weights: Option<Vec<f64>>,
    /// Mixture component standard deviations (dB).
    pub sigmas: Option<Vec<f64>>,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection {
            model: "none".into(),
            sigma: 4.0,
            weights: None,
            sigmas: None,
        }
    }
}

/// Reference frame selection: an explicit index or `"auto"` for the center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RefSetting {
    Index(usize),
    Named(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotionSection {
    /// Scene velocity in voxels per frame (simulation).
    pub v: f64,
    /// Frames to simulate or stack.
    pub frames: usize,
    /// Velocity search window (voxels per frame); defaults to the grid span.
    pub vmin: Option<f64>,
    pub vmax: Option<f64>,
    pub reference: RefSetting,
}

impl Default for MotionSection {
    fn default() -> Self {
        MotionSection {
            v: 0.0,
            frames: 1,
            vmin: None,
            vmax: None,
            reference: RefSetting::Named("auto".into()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Occupancy detection threshold (dB/m).
    pub gamma: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            gamma: DEFAULT_OCCUPANCY_GAMMA,
        }
    }
}

/// Fully resolved experiment: parsed geometry, built matrices, and the
/// normalized configuration document recorded in the manifest.
#[derive(Debug)]
pub struct ResolvedExperiment {
    pub grid: GridSpec,
    pub layout: SensorLayout,
    pub links: Vec<Link>,
    pub weights: WeightMatrix,
    pub q: RegularizerQ,
    pub solver: SolverConfig,
    pub noise: NoiseModel,
    pub scene: Option<Vec<Primitive>>,
    pub motion: MotionSection,
    pub gamma: f64,
    pub resolved: Value,
}

pub fn load_config(path: &Path, ctx: &mut RunContext) -> Result<ExperimentConfig, CliError> {
    let text = ctx.read_input(path)?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))
}

/// A section is either inline content or `{"file": "relative/path"}`.
fn section_text(
    section: &Value,
    name: &str,
    base: &Path,
    ctx: &mut RunContext,
) -> Result<(String, String), CliError> {
    if let Some(obj) = section.as_object() {
        if let Some(file) = obj.get("file") {
            if obj.len() != 1 {
                return Err(CliError::Validation(format!(
                    "{name}: a file reference must contain only the \"file\" key"
                )));
            }
            let rel = file.as_str().ok_or_else(|| {
                CliError::Validation(format!("{name}.file must be a string path"))
            })?;
            let mut path = PathBuf::from(rel);
            if path.is_relative() {
                path = base.join(path);
            }
            let text = ctx.read_input(&path)?;
            return Ok((text, path.display().to_string()));
        }
    }
    Ok((serde_json::to_string(section)?, format!("config.{name}")))
}

fn selection_model(w: &WeightSection) -> Result<SelectionModel, CliError> {
    match w.select.as_str() {
        "ellipse" => Ok(SelectionModel::Ellipse { lambda: w.lambda }),
        "line" => Ok(SelectionModel::Line),
        "all" => Ok(SelectionModel::All),
        other => Err(CliError::Validation(format!(
            "weights.select must be one of ellipse|line|all, got \"{other}\""
        ))),
    }
}

fn magnitude_model(w: &WeightSection) -> Result<MagnitudeModel, CliError> {
    match w.magnitude.as_str() {
        "nesh" => Ok(MagnitudeModel::NeSh),
        "line" => Ok(MagnitudeModel::Line),
        "nesh-line" => Ok(MagnitudeModel::NeShLine),
        "expdec" => Ok(MagnitudeModel::ExpDec {
            sigma_lambda: w.sigma_lambda,
        }),
        "invarea" => Ok(MagnitudeModel::InvArea {
            lambda_floor: w.lambda_floor,
        }),
        other => Err(CliError::Validation(format!(
            "weights.magnitude must be one of nesh|line|nesh-line|expdec|invarea, got \"{other}\""
        ))),
    }
}

fn neg_policy(s: &SolverSection) -> Result<NegPolicy, CliError> {
    match s.neg_policy.as_str() {
        "none" => Ok(NegPolicy::None),
        "trunc-x" => Ok(NegPolicy::TruncateX),
        "trunc-y" => Ok(NegPolicy::TruncateY),
        "iterative" => Ok(NegPolicy::Iterative {
            max_rounds: s.max_rounds,
        }),
        "pgm" => Ok(NegPolicy::Pgm {
            mu: s.mu,
            iters: s.iters,
        }),
        other => Err(CliError::Validation(format!(
            "solver.neg_policy must be one of none|trunc-x|trunc-y|iterative|pgm, got \"{other}\""
        ))),
    }
}

fn q_construction(s: &SolverSection) -> Result<QConstruction, CliError> {
    match s.regularizer.as_str() {
        "averaged_fwd_bck" => Ok(QConstruction::AveragedFwdBck),
        "sum_of_squared_diffs" => Ok(QConstruction::SumOfSquaredDiffs),
        other => Err(CliError::Validation(format!(
            "solver.regularizer must be averaged_fwd_bck or sum_of_squared_diffs, got \"{other}\""
        ))),
    }
}

fn resolve_alpha(s: &SolverSection, grid: &GridSpec) -> Result<f64, CliError> {
    match &s.alpha {
        AlphaSetting::Value(a) => Ok(*a),
        AlphaSetting::Named(name) if name == "auto" => {
            let c = correlation_from_spacing(grid.dx, s.delta_c);
            let alpha =
                alpha_from_prior(s.sigma_n * s.sigma_n, s.sigma_x * s.sigma_x, c)?;
            log::info!("alpha \"auto\" resolved to {alpha}");
            Ok(alpha)
        }
        AlphaSetting::Named(other) => Err(CliError::Validation(format!(
            "solver.alpha must be a number or \"auto\", got \"{other}\""
        ))),
    }
}

fn noise_model(n: &NoiseSection) -> Result<NoiseModel, CliError> {
    let model = match n.model.as_str() {
        "none" => NoiseModel::None,
        "awgn" => NoiseModel::Awgn { sigma: n.sigma },
        "mixture" => match (&n.weights, &n.sigmas) {
            (None, None) => NoiseModel::default_mixture(),
            (Some(w), Some(s)) => NoiseModel::GaussianMixture {
                weights: w.clone(),
                sigmas: s.clone(),
            },
            _ => {
                return Err(CliError::Validation(
                    "noise: mixture needs both \"weights\" and \"sigmas\", or neither".into(),
                ))
            }
        },
        other => {
            return Err(CliError::Validation(format!(
                "noise.model must be one of none|awgn|mixture, got \"{other}\""
            )))
        }
    };
    model.validate()?;
    Ok(model)
}

/// Resolve a configuration against the directory its file came from,
/// building the weight matrix and regularizer once for all commands.
pub fn resolve(
    cfg: &ExperimentConfig,
    config_dir: &Path,
    ctx: &mut RunContext,
) -> Result<ResolvedExperiment, CliError> {
    let (grid_text, grid_label) = section_text(&cfg.grid, "grid", config_dir, ctx)?;
    let grid = io::parse_grid_json(&grid_text, &grid_label)?;
    let (layout_text, layout_label) = section_text(&cfg.layout, "layout", config_dir, ctx)?;
    let layout = io::parse_layout_json(&layout_text, &layout_label)?;
    let links = enumerate_links(&layout)?;

    let weights = build_weight_matrix(
        &grid,
        &links,
        selection_model(&cfg.weights)?,
        magnitude_model(&cfg.weights)?,
        cfg.weights.normalize,
    )?;
    let q = RegularizerQ::build(&grid, q_construction(&cfg.solver)?)?;

    let alpha = resolve_alpha(&cfg.solver, &grid)?;
    let solver = SolverConfig {
        alpha,
        beta: cfg.solver.beta,
        neg_policy: neg_policy(&cfg.solver)?,
        ..SolverConfig::default()
    };
    solver.validate()?;
    let noise = noise_model(&cfg.noise)?;

    let scene = match &cfg.scene {
        Some(section) => {
            let (text, label) = section_text(section, "scene", config_dir, ctx)?;
            Some(io::parse_scene_json(&text, &label)?)
        }
        None => None,
    };

    if cfg.motion.frames == 0 {
        return Err(CliError::Validation("motion.frames must be >= 1".into()));
    }
    if let RefSetting::Named(name) = &cfg.motion.reference {
        if name != "auto" {
            return Err(CliError::Validation(format!(
                "motion.reference must be a frame index or \"auto\", got \"{name}\""
            )));
        }
    }

    // Manifest copy: file references inlined, "auto" values made concrete.
    let mut normalized = cfg.clone();
    normalized.grid = serde_json::from_str(&io::format_grid_json(&grid)?)?;
    normalized.layout = serde_json::from_str(&io::format_layout_json(&layout)?)?;
    normalized.scene = match &scene {
        Some(prims) => Some(serde_json::to_value(prims)?),
        None => None,
    };
    normalized.solver.alpha = AlphaSetting::Value(alpha);
    let resolved = serde_json::to_value(&normalized)?;

    Ok(ResolvedExperiment {
        grid,
        layout,
        links,
        weights,
        q,
        solver,
        noise,
        scene,
        motion: cfg.motion.clone(),
        gamma: cfg.evaluation.gamma,
        resolved,
    })
}

/// Flag-level overrides applied to a loaded configuration before resolution.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub alpha: Option<String>,
    pub beta: Option<f64>,
    pub neg_policy: Option<String>,
    pub max_rounds: Option<usize>,
    pub mu: Option<f64>,
    pub iters: Option<usize>,
    pub select: Option<String>,
    pub lambda: Option<f64>,
    pub magnitude: Option<String>,
    pub sigma_lambda: Option<f64>,
    pub normalize: Option<bool>,
    pub sigma_n: Option<f64>,
    pub sigma_x: Option<f64>,
    pub delta_c: Option<f64>,
}

pub fn apply_overrides(cfg: &mut ExperimentConfig, ov: &Overrides) -> Result<(), CliError> {
    if let Some(raw) = &ov.alpha {
        cfg.solver.alpha = if raw == "auto" {
            AlphaSetting::Named("auto".into())
        } else {
            AlphaSetting::Value(raw.parse::<f64>().map_err(|_| {
                CliError::Validation(format!(
                    "--alpha must be a number or \"auto\", got \"{raw}\""
                ))
            })?)
        };
    }
    if let Some(v) = ov.beta {
        cfg.solver.beta = v;
    }
    if let Some(v) = &ov.neg_policy {
        cfg.solver.neg_policy = v.clone();
    }
    if let Some(v) = ov.max_rounds {
        cfg.solver.max_rounds = v;
    }
    if ov.mu.is_some() {
        cfg.solver.mu = ov.mu;
    }
    if let Some(v) = ov.iters {
        cfg.solver.iters = v;
    }
    if let Some(v) = &ov.select {
        cfg.weights.select = v.clone();
    }
    if let Some(v) = ov.lambda {
        cfg.weights.lambda = v;
    }
    if let Some(v) = &ov.magnitude {
        cfg.weights.magnitude = v.clone();
    }
    if let Some(v) = ov.sigma_lambda {
        cfg.weights.sigma_lambda = v;
    }
    if let Some(v) = ov.normalize {
        cfg.weights.normalize = v;
    }
    if let Some(v) = ov.sigma_n {
        cfg.solver.sigma_n = v;
    }
    if let Some(v) = ov.sigma_x {
        cfg.solver.sigma_x = v;
    }
    if let Some(v) = ov.delta_c {
        cfg.solver.delta_c = v;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn ctx(tmp: &tempfile::TempDir) -> RunContext {
        RunContext::new(&tmp.path().join("runs"), "test", vec![], 0)
    }

    fn minimal_config() -> String {
        serde_json::json!({
            "grid": {"n": [3, 2, 1], "d": [1.0, 1.0, 1.0], "origin": [0.0, 0.0, 0.0]},
            "layout": {
                "topology": "full_mesh",
                "sensors": [
                    {"id": 0, "pos": [-0.5, 0.5, 0.5]},
                    {"id": 1, "pos": [3.5, 0.5, 0.5]},
                    {"id": 2, "pos": [1.5, -0.5, 0.5]},
                    {"id": 3, "pos": [1.5, 2.5, 0.5]}
                ]
            }
        })
        .to_string()
    }

    #[test]
    fn unknown_top_level_key_is_rejected() {
        let text = minimal_config().replace("\"grid\"", "\"grdi\"");
        let err = serde_json::from_str::<ExperimentConfig>(&text).unwrap_err();
        assert!(err.to_string().contains("grdi"), "{err}");
    }

    #[test]
    fn unknown_section_key_is_rejected() {
        let mut v: Value = serde_json::from_str(&minimal_config()).unwrap();
        v["solver"] = serde_json::json!({"alhpa": 2.0});
        let err = serde_json::from_value::<ExperimentConfig>(v).unwrap_err();
        assert!(err.to_string().contains("alhpa"), "{err}");
    }

    #[test]
    fn defaults_resolve_to_iterative_line_line() {
        let tmp = tempfile::tempdir().unwrap();
        let mut ctx = ctx(&tmp);
        let cfg: ExperimentConfig = serde_json::from_str(&minimal_config()).unwrap();
        let r = resolve(&cfg, tmp.path(), &mut ctx).unwrap();
        assert_eq!(r.solver.alpha, 1.0);
        assert_eq!(
            r.solver.neg_policy,
            NegPolicy::Iterative {
                max_rounds: DEFAULT_ITERATIVE_ROUNDS
            }
        );
        assert_eq!(r.links.len(), 6);
        assert_eq!(r.weights.values.nrows(), 6);
        assert_eq!(r.q.dim(), 6);
        assert_eq!(r.gamma, DEFAULT_OCCUPANCY_GAMMA);
        assert!(r.scene.is_none());
    }

    #[test]
    fn auto_alpha_uses_prior_scales() {
        let tmp = tempfile::tempdir().unwrap();
        let mut ctx = ctx(&tmp);
        let mut v: Value = serde_json::from_str(&minimal_config()).unwrap();
        v["solver"] =
            serde_json::json!({"alpha": "auto", "sigma_n": 2.0, "sigma_x": 1.5, "delta_c": 3.0});
        let cfg: ExperimentConfig = serde_json::from_value(v).unwrap();
        let r = resolve(&cfg, tmp.path(), &mut ctx).unwrap();
        let c = correlation_from_spacing(1.0, 3.0);
        let expect = alpha_from_prior(4.0, 2.25, c).unwrap();
        assert_eq!(r.solver.alpha, expect);
        // The manifest copy records the resolved number, not "auto".
        assert_eq!(r.resolved["solver"]["alpha"], serde_json::json!(expect));
    }

    #[test]
    fn file_references_resolve_relative_to_config() {
        let tmp = tempfile::tempdir().unwrap();
        fs::write(
            tmp.path().join("grid.json"),
            r#"{"n": [3, 2, 1], "d": [1.0, 1.0, 1.0], "origin": [0.0, 0.0, 0.0]}"#,
        )
        .unwrap();
        let mut v: Value = serde_json::from_str(&minimal_config()).unwrap();
        v["grid"] = serde_json::json!({"file": "grid.json"});
        let cfg: ExperimentConfig = serde_json::from_value(v).unwrap();
        let mut ctx = ctx(&tmp);
        let r = resolve(&cfg, tmp.path(), &mut ctx).unwrap();
        assert_eq!((r.grid.nx, r.grid.ny, r.grid.nz), (3, 2, 1));
        // Inlined back into the manifest copy.
        assert_eq!(r.resolved["grid"]["n"], serde_json::json!([3, 2, 1]));
    }

    #[test]
    fn bad_enum_values_name_the_options() {
        let tmp = tempfile::tempdir().unwrap();
        let mut ctx = ctx(&tmp);
        let mut v: Value = serde_json::from_str(&minimal_config()).unwrap();
        v["weights"] = serde_json::json!({"select": "oval"});
        let cfg: ExperimentConfig = serde_json::from_value(v).unwrap();
        let err = resolve(&cfg, tmp.path(), &mut ctx).unwrap_err();
        assert!(err.to_string().contains("ellipse|line|all"), "{err}");
    }

    #[test]
    fn mixture_noise_needs_both_lists() {
        let tmp = tempfile::tempdir().unwrap();
        let mut ctx = ctx(&tmp);
        let mut v: Value = serde_json::from_str(&minimal_config()).unwrap();
        v["noise"] = serde_json::json!({"model": "mixture", "weights": [0.5, 0.5]});
        let cfg: ExperimentConfig = serde_json::from_value(v).unwrap();
        let err = resolve(&cfg, tmp.path(), &mut ctx).unwrap_err();
        assert!(err.to_string().contains("both"), "{err}");
    }

    #[test]
    fn overrides_change_solver_and_weights() {
        let mut cfg: ExperimentConfig = serde_json::from_str(&minimal_config()).unwrap();
        let ov = Overrides {
            alpha: Some("0.5".into()),
            neg_policy: Some("pgm".into()),
            iters: Some(50),
            magnitude: Some("nesh".into()),
            normalize: Some(true),
            ..Overrides::default()
        };
        apply_overrides(&mut cfg, &ov).unwrap();
        assert_eq!(cfg.solver.alpha, AlphaSetting::Value(0.5));
        assert_eq!(cfg.solver.neg_policy, "pgm");
        assert_eq!(cfg.solver.iters, 50);
        assert_eq!(cfg.weights.magnitude, "nesh");
        assert!(cfg.weights.normalize);

        let err = apply_overrides(
            &mut cfg,
            &Overrides {
                alpha: Some("fast".into()),
                ..Overrides::default()
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("--alpha"), "{err}");
    }
}
