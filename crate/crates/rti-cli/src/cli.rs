//! Flag surface and dispatch for the `rti` binary.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands;
use crate::error::{CliError, EXIT_VALIDATION};
use crate::manifest::RunContext;

#[derive(Debug, Parser)]
#[command(
    name = "rti",
    version,
    about = "Radio tomographic imaging toolkit: reconstruct vehicle images from RSS drops"
)]
pub struct Cli {
    /// Root directory collecting one subdirectory per run.
    #[arg(long, global = true, default_value = "runs")]
    pub runs_dir: PathBuf,
    /// RNG seed. The RTI_SEED environment variable takes precedence.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Deployment planning report: scan time, resolution, capacity, velocity bounds.
    Plan(PlanArgs),
    /// Synthesize RSS-drop measurements for a configured scene.
    Simulate(SimulateArgs),
    /// Average obstruction-free scans into a per-link baseline; optionally turn raw RSS logs into drops.
    Calibrate(CalibrateArgs),
    /// Reconstruct attenuation images from measurement frames.
    Reconstruct(ReconstructArgs),
    /// Search the vehicle velocity and reconstruct from stacked frames.
    Track(TrackArgs),
    /// Score an estimate against ground truth: RMSE, detection rates, template match.
    Evaluate(EvaluateArgs),
    /// Render an estimate as PGM slices plus a side view.
    Render(RenderArgs),
    /// Rebuild the bundled synthetic studies by recipe name.
    #[command(name = "repro-fig")]
    ReproFig(ReproFigArgs),
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Node count.
    #[arg(long, default_value_t = 81)]
    pub k: usize,
    /// Pole spacing along the road (meters).
    #[arg(long, default_value_t = 3.0)]
    pub d_node: f64,
    /// Mounting heights per pole.
    #[arg(long, default_value_t = 3)]
    pub heights: usize,
    /// Baseband rate (bits/second).
    #[arg(long, default_value_t = 38_400.0)]
    pub rate: f64,
    /// Data frame size (bytes).
    #[arg(long, default_value_t = 104)]
    pub frame_bytes: usize,
    /// Guard time per node (seconds).
    #[arg(long, default_value_t = 0.0)]
    pub guard: f64,
    /// Processing time per node (seconds).
    #[arg(long, default_value_t = 0.0)]
    pub proc: f64,
    /// Monitored road length (meters).
    #[arg(long, default_value_t = 24.0)]
    pub road_length: f64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Experiment configuration (must include a scene).
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Obstruction-free calibration scans (CSV: scan,link_id,rss_dbm).
    #[arg(long)]
    pub scans: PathBuf,
    /// Raw RSS scans to convert into drops against the baseline.
    #[arg(long)]
    pub current: Option<PathBuf>,
    /// Sensor layout, required with --current.
    #[arg(long)]
    pub layout: Option<PathBuf>,
}

/// Solver and weight-model flags shared by reconstruct and track; each
/// overrides the corresponding configuration key.
#[derive(Debug, Args, Default)]
pub struct OverrideArgs {
    /// Regularization weight, or "auto" to derive it from the prior scales.
    #[arg(long)]
    pub alpha: Option<String>,
    /// Bias weight of the linear cost term.
    #[arg(long, allow_negative_numbers = true)]
    pub beta: Option<f64>,
    /// Negative-value policy: none|trunc-x|trunc-y|iterative|pgm.
    #[arg(long)]
    pub neg_policy: Option<String>,
    /// Re-solve rounds for the iterative policy.
    #[arg(long)]
    pub max_rounds: Option<usize>,
    /// Projected-gradient step size.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Projected-gradient iteration cap.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Selection model: ellipse|line|all.
    #[arg(long)]
    pub select: Option<String>,
    /// Ellipse tuning parameter (meters).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Magnitude model: nesh|line|nesh-line|expdec|invarea.
    #[arg(long = "weights")]
    pub magnitude: Option<String>,
    /// Decay constant for the expdec magnitude (meters).
    #[arg(long)]
    pub sigma_lambda: Option<f64>,
    /// Rescale the weight matrix to the line/line Frobenius norm.
    #[arg(long)]
    pub normalize: Option<bool>,
    /// Noise standard deviation used by --alpha auto.
    #[arg(long)]
    pub sigma_n: Option<f64>,
    /// Prior standard deviation used by --alpha auto.
    #[arg(long)]
    pub sigma_x: Option<f64>,
    /// Prior correlation space constant used by --alpha auto.
    #[arg(long)]
    pub delta_c: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Measurement frames (CSV: frame,link_id,tx,rx,drop_db).
    #[arg(long)]
    pub measurements: PathBuf,
    /// Ground-truth image for RMSE reporting (CSV: voxel,x_db_per_m).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: OverrideArgs,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Measurement frames (CSV: frame,link_id,tx,rx,drop_db).
    #[arg(long)]
    pub frames: PathBuf,
    /// Reference frame: "auto" (center) or an index.
    #[arg(long = "ref")]
    pub reference: Option<String>,
    /// Lower edge of the velocity search window (voxels/frame).
    #[arg(long, allow_negative_numbers = true)]
    pub vmin: Option<f64>,
    /// Upper edge of the velocity search window (voxels/frame).
    #[arg(long, allow_negative_numbers = true)]
    pub vmax: Option<f64>,
    /// Skip the search and stack at this known velocity.
    #[arg(long, allow_negative_numbers = true)]
    pub v_true: Option<f64>,
    #[command(flatten)]
    pub overrides: OverrideArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Voxel grid (JSON: {"n":..,"d":..,"origin":..}).
    #[arg(long)]
    pub grid: PathBuf,
    /// Estimate to score (CSV: voxel,x_db_per_m).
    #[arg(long)]
    pub estimate: PathBuf,
    /// Ground-truth image (CSV: voxel,x_db_per_m).
    #[arg(long)]
    pub truth: PathBuf,
    /// Occupancy detection threshold (dB/m).
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Template set for target recognition (JSON).
    #[arg(long)]
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long)]
    pub estimate: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReproFigArgs {
    /// Recipe: policy-surfaces | bias-sweep | detection-curves | all.
    pub recipe: String,
    /// Override the realization count (smaller is faster, noisier).
    #[arg(long)]
    pub realizations: Option<usize>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Plan(_) => "plan",
            Command::Simulate(_) => "simulate",
            Command::Calibrate(_) => "calibrate",
            Command::Reconstruct(_) => "reconstruct",
            Command::Track(_) => "track",
            Command::Evaluate(_) => "evaluate",
            Command::Render(_) => "render",
            Command::ReproFig(_) => "repro-fig",
        }
    }

    fn default_seed(&self) -> u64 {
        match self {
            // The bundled studies default to the published battery seed.
            Command::ReproFig(_) => rti_core::repro::DEFAULT_SUITE_SEED,
            _ => 0,
        }
    }
}

fn resolve_seed(flag: Option<u64>, default: u64) -> Result<u64, CliError> {
    match std::env::var("RTI_SEED") {
        Ok(raw) => raw.trim().parse::<u64>().map_err(|_| {
            CliError::Validation(format!(
                "RTI_SEED must be an unsigned integer, got \"{raw}\""
            ))
        }),
        Err(_) => Ok(flag.unwrap_or(default)),
    }
}

/// Parse and execute one command line; returns the process exit code.
pub fn run(argv: &[String]) -> u8 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            return code;
        }
    };

    let seed = match resolve_seed(cli.seed, cli.command.default_seed()) {
        Ok(seed) => seed,
        Err(e) => {
            eprintln!("{e}");
            return e.exit_code();
        }
    };
    let mut ctx = RunContext::new(
        &cli.runs_dir,
        cli.command.name(),
        argv.iter().skip(1).cloned().collect(),
        seed,
    );

    let result = match &cli.command {
        Command::Plan(args) => commands::plan(args, &mut ctx),
        Command::Simulate(args) => commands::simulate(args, &mut ctx),
        Command::Calibrate(args) => commands::calibrate(args, &mut ctx),
        Command::Reconstruct(args) => commands::reconstruct(args, &mut ctx),
        Command::Track(args) => commands::track(args, &mut ctx),
        Command::Evaluate(args) => commands::evaluate(args, &mut ctx),
        Command::Render(args) => commands::render(args, &mut ctx),
        Command::ReproFig(args) => commands::repro_fig(args, &mut ctx),
    };

    match result.and_then(|summary| ctx.finish().map(|dir| (summary, dir))) {
        Ok((summary, dir)) => {
            println!("{summary}");
            println!("run directory: {}", dir.display());
            0
        }
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
