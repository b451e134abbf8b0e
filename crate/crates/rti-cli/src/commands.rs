//! One function per subcommand. Each stages its outputs on the run context
//! and returns a human-readable summary; the dispatcher commits the run
//! directory afterwards.

use std::path::Path;

use nalgebra::DVector;
use serde_json::{json, Value};

use rti_core::estimators::solve_with_policy;
use rti_core::eval::{default_gamma_grid, occupancy_mask, rmse, roc_curve};
use rti_core::geometry::enumerate_links;
use rti_core::io;
use rti_core::motion::stack_frames;
use rti_core::planning::{
    max_velocities, multi_packet_plan, node_capacity, scan_time, voxel_length, PacketBudget,
    ScanParams,
};
use rti_core::repro::{
    run_negative_policy_battery, run_roc_battery, NegBatteryConfig, NegPolicyBattery,
    RmseSurface, RocBatteryConfig,
};
use rti_core::simulate::{calibrate as mean_baseline, drops_from_rss, make_scene,
    simulate_sequence, NoiseModel};
use rti_core::SceneEstimate;

use crate::cli::{
    CalibrateArgs, EvaluateArgs, OverrideArgs, PlanArgs, ReconstructArgs, RenderArgs,
    ReproFigArgs, SimulateArgs, TrackArgs,
};
use crate::config::{self, apply_overrides, resolve, Overrides, RefSetting, ResolvedExperiment};
use crate::error::CliError;
use crate::manifest::RunContext;

fn pretty(value: &Value) -> Result<String, CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

fn config_dir(path: &Path) -> &Path {
    path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."))
}

fn load_resolved(
    path: &Path,
    overrides: Option<&OverrideArgs>,
    ctx: &mut RunContext,
) -> Result<ResolvedExperiment, CliError> {
    let mut cfg = config::load_config(path, ctx)?;
    if let Some(ov) = overrides {
        apply_overrides(&mut cfg, &ov.to_overrides())?;
    }
    let resolved = resolve(&cfg, config_dir(path), ctx)?;
    ctx.set_config(resolved.resolved.clone());
    Ok(resolved)
}

impl OverrideArgs {
    fn to_overrides(&self) -> Overrides {
        Overrides {
            alpha: self.alpha.clone(),
            beta: self.beta,
            neg_policy: self.neg_policy.clone(),
            max_rounds: self.max_rounds,
            mu: self.mu,
            iters: self.iters,
            select: self.select.clone(),
            lambda: self.lambda,
            magnitude: self.magnitude.clone(),
            sigma_lambda: self.sigma_lambda,
            normalize: self.normalize,
            sigma_n: self.sigma_n,
            sigma_x: self.sigma_x,
            delta_c: self.delta_c,
        }
    }
}

// ---------------------------------------------------------------------------
// plan

pub fn plan(args: &PlanArgs, ctx: &mut RunContext) -> Result<String, CliError> {
    let scan = ScanParams {
        l_rti_bits: args.frame_bytes as f64 * 8.0,
        r_z_bps: args.rate,
        t_guard_s: args.guard,
        t_proc_s: args.proc,
        k: args.k,
    };
    let t_scan = scan_time(&scan)?;
    let dx = voxel_length(args.d_node, args.k, args.heights)?;
    let single = node_capacity(&PacketBudget::normal())?;
    let fragmented = node_capacity(&PacketBudget::fragmentation())?;
    let multi = multi_packet_plan(&PacketBudget::normal(), args.k, 1)?;
    let (v_unambiguous, v_detectable) = max_velocities(args.d_node, args.road_length, t_scan)?;

    let report = json!({
        "scan": {
            "k": args.k,
            "frame_bytes": args.frame_bytes,
            "rate_bps": args.rate,
            "guard_s": args.guard,
            "proc_s": args.proc,
            "t_scan_s": t_scan,
        },
        "resolution": {
            "d_node_m": args.d_node,
            "heights": args.heights,
            "voxel_length_m": dx,
        },
        "capacity": {
            "single_packet_nodes": single,
            "fragmented_packet_nodes": fragmented,
            "multi_packet": {
                "rss_bytes_per_packet": multi.rss_bytes_per_packet,
                "nominal_packets": multi.nominal_packets,
                "strict_packets": multi.strict_packets,
            },
        },
        "velocity": {
            "road_length_m": args.road_length,
            "unambiguous_mps": v_unambiguous,
            "detectable_mps": v_detectable,
        },
    });
    let text = pretty(&report)?;
    ctx.add_output("plan.json", text.clone());
    Ok(text.trim_end().to_string())
}

// ---------------------------------------------------------------------------
// simulate

pub fn simulate(args: &SimulateArgs, ctx: &mut RunContext) -> Result<String, CliError> {
    let r = load_resolved(&args.config, None, ctx)?;
    let prims = r.scene.ok_or_else(|| {
        CliError::Validation("simulate needs a \"scene\" section in the config".into())
    })?;
    let scene = make_scene(&r.grid, &prims)?;
    let set = simulate_sequence(
        &r.weights.values,
        &scene,
        r.motion.v,
        r.motion.frames,
        &r.noise,
        ctx.seed,
    )?;
    ctx.add_output(
        "measurements.csv",
        io::format_measurements_csv(&set.frames, &r.links)?,
    );
    ctx.add_output("truth.csv", io::format_estimate_csv(&scene.x));

    let noise_desc = match &r.noise {
        NoiseModel::None => "noise-free".to_string(),
        NoiseModel::Awgn { sigma } => format!("AWGN sigma {sigma} dB"),
        NoiseModel::GaussianMixture { sigmas, .. } => {
            format!("Gaussian mixture ({} components)", sigmas.len())
        }
    };
    Ok(format!(
        "simulated {} frame(s) on {} links ({noise_desc}, seed {})",
        set.frames.len(),
        r.links.len(),
        ctx.seed
    ))
}

// ---------------------------------------------------------------------------
// calibrate

pub fn calibrate(args: &CalibrateArgs, ctx: &mut RunContext) -> Result<String, CliError> {
    let text = ctx.read_input(&args.scans)?;
    let scans = io::parse_calibration_csv(&text, &args.scans.display().to_string())?;
    let baseline = mean_baseline(&scans)?;
    ctx.add_output(
        "baseline.csv",
        io::format_calibration_csv(std::slice::from_ref(&baseline)),
    );
    let mut summary = format!(
        "baseline over {} scan(s) of {} links",
        scans.len(),
        baseline.len()
    );

    if let Some(current_path) = &args.current {
        let layout_path = args.layout.as_ref().ok_or_else(|| {
            CliError::Validation("--current needs --layout to label the drop CSV".into())
        })?;
        let layout_text = ctx.read_input(layout_path)?;
        let layout =
            io::parse_layout_json(&layout_text, &layout_path.display().to_string())?;
        let links = enumerate_links(&layout)?;
        if links.len() != baseline.len() {
            return Err(CliError::Validation(format!(
                "layout defines {} links but the calibration has {}",
                links.len(),
                baseline.len()
            )));
        }
        let current_text = ctx.read_input(current_path)?;
        let current =
            io::parse_calibration_csv(&current_text, &current_path.display().to_string())?;
        let mut frames: Vec<DVector<f64>> = Vec::with_capacity(current.len());
        for scan in &current {
            frames.push(drops_from_rss(&baseline, scan)?);
        }
        ctx.add_output("drops.csv", io::format_measurements_csv(&frames, &links)?);
        summary.push_str(&format!("; converted {} scan(s) to drops", frames.len()));
    }
    Ok(summary)
}

// ---------------------------------------------------------------------------
// reconstruct

fn estimate_sidecar(est: &SceneEstimate) -> io::EstimateSidecar {
    io::EstimateSidecar {
        policy: est.policy.clone(),
        cost: est.cost,
        residual_norm: est.residual_norm,
        active_set: est.active_set.clone(),
        iterations: est.iterations,
        max_value: est.x.amax(),
    }
}

pub fn reconstruct(args: &ReconstructArgs, ctx: &mut RunContext) -> Result<String, CliError> {
    let r = load_resolved(&args.config, Some(&args.overrides), ctx)?;
    let text = ctx.read_input(&args.measurements)?;
    let set = io::parse_measurements_csv(
        &text,
        &r.links,
        &args.measurements.display().to_string(),
    )?;
    let truth = match &args.truth {
        Some(path) => {
            let t = io::parse_estimate_csv(&ctx.read_input(path)?, &path.display().to_string())?;
            if t.len() != r.grid.voxel_count() {
                return Err(CliError::Validation(format!(
                    "truth has {} voxels, grid has {}",
                    t.len(),
                    r.grid.voxel_count()
                )));
            }
            Some(t)
        }
        None => None,
    };

    let mut results = Vec::new();
    let mut rmse_sum = 0.0;
    for (i, y) in set.frames.iter().enumerate() {
        let est = solve_with_policy(&r.weights.values, y, &r.q, &r.solver)?;
        ctx.add_output(&format!("estimate_{i:03}.csv"), io::format_estimate_csv(&est.x));
        ctx.add_output(
            &format!("estimate_{i:03}.json"),
            pretty(&serde_json::to_value(estimate_sidecar(&est))?)?,
        );
        let frame_rmse = match &truth {
            Some(t) => {
                let e = rmse(&est.x, t)?;
                rmse_sum += e;
                Some(e)
            }
            None => None,
        };
        results.push(json!({
            "frame": i,
            "cost": est.cost,
            "residual_norm": est.residual_norm,
            "iterations": est.iterations,
            "rmse": frame_rmse,
        }));
    }
    let mean_rmse = truth
        .as_ref()
        .map(|_| rmse_sum / set.frames.len() as f64);
    let report = json!({
        "frames": set.frames.len(),
        "policy": format!("{:?}", r.solver.neg_policy),
        "alpha": r.solver.alpha,
        "beta": r.solver.beta,
        "results": results,
        "mean_rmse": mean_rmse,
    });
    ctx.add_output("report.json", pretty(&report)?);

    Ok(match mean_rmse {
        Some(e) => format!("reconstructed {} frame(s); mean rmse {e:.6}", set.frames.len()),
        None => format!("reconstructed {} frame(s)", set.frames.len()),
    })
}

// ---------------------------------------------------------------------------
// track

fn parse_reference(
    flag: &Option<String>,
    cfg: &RefSetting,
    n_frames: usize,
) -> Result<Option<usize>, CliError> {
    let chosen = match flag {
        Some(raw) if raw == "auto" => None,
        Some(raw) => Some(raw.parse::<usize>().map_err(|_| {
            CliError::Validation(format!(
                "--ref must be \"auto\" or a frame index, got \"{raw}\""
            ))
        })?),
        None => match cfg {
            RefSetting::Index(i) => Some(*i),
            RefSetting::Named(_) => None,
        },
    };
    if let Some(i) = chosen {
        if i >= n_frames {
            return Err(CliError::Validation(format!(
                "reference frame {i} out of range ({n_frames} frames)"
            )));
        }
    }
    Ok(chosen)
}

pub fn track(args: &TrackArgs, ctx: &mut RunContext) -> Result<String, CliError> {
    let r = load_resolved(&args.config, Some(&args.overrides), ctx)?;
    let text = ctx.read_input(&args.frames)?;
    let set = io::parse_measurements_csv(&text, &r.links, &args.frames.display().to_string())?;
    let reference = parse_reference(&args.reference, &r.motion.reference, set.frames.len())?;
    let resolved_reference =
        reference.unwrap_or_else(|| rti_core::motion::center_reference(set.frames.len()));

    let mut candidates_csv = String::from("v,cost\n");
    let v_hat;
    let winner;
    let n_candidates;
    if let Some(v) = args.v_true {
        let stack = stack_frames(&r.grid, &r.weights.values, &set.frames, v, reference)?;
        let est = solve_with_policy(&stack.w_stack, &stack.y_stack, &r.q, &r.solver)?;
        let cost = est.residual_norm * est.residual_norm;
        candidates_csv.push_str(&format!("{v},{cost}\n"));
        v_hat = v;
        winner = est;
        n_candidates = 1;
    } else {
        let span = (r.grid.nx.max(1) - 1) as f64;
        let vmin = args.vmin.or(r.motion.vmin).unwrap_or(-span);
        let vmax = args.vmax.or(r.motion.vmax).unwrap_or(span);
        if vmin > vmax {
            return Err(CliError::Validation(format!(
                "empty velocity window: vmin {vmin} > vmax {vmax}"
            )));
        }
        let candidates: Vec<f64> = (vmin.ceil() as i64..=vmax.floor() as i64)
            .map(|v| v as f64)
            .collect();
        if candidates.is_empty() {
            return Err(CliError::Validation(format!(
                "no integer velocity lies in [{vmin}, {vmax}]"
            )));
        }
        let search = rti_core::motion::estimate_velocity(
            &r.grid,
            &r.weights.values,
            &set.frames,
            &candidates,
            reference,
            &r.q,
            &r.solver,
            false,
        )?;
        for c in &search.candidates {
            candidates_csv.push_str(&format!("{},{}\n", c.v, c.cost));
        }
        n_candidates = search.candidates.len();
        v_hat = search.v_hat;
        winner = search.candidates.into_iter().nth(search.best_index).unwrap().estimate;
    }

    ctx.add_output("candidates.csv", candidates_csv);
    ctx.add_output("estimate.csv", io::format_estimate_csv(&winner.x));
    ctx.add_output(
        "estimate.json",
        pretty(&serde_json::to_value(estimate_sidecar(&winner))?)?,
    );
    let report = json!({
        "v_hat": v_hat,
        "reference": resolved_reference,
        "frames": set.frames.len(),
        "candidates": n_candidates,
    });
    ctx.add_output("report.json", pretty(&report)?);
    Ok(format!(
        "velocity {v_hat} voxels/frame from {} frame(s) ({n_candidates} candidate(s))",
        set.frames.len()
    ))
}

// ---------------------------------------------------------------------------
// evaluate

pub fn evaluate(args: &EvaluateArgs, ctx: &mut RunContext) -> Result<String, CliError> {
    let grid_text = ctx.read_input(&args.grid)?;
    let grid = io::parse_grid_json(&grid_text, &args.grid.display().to_string())?;
    let estimate = io::parse_estimate_csv(
        &ctx.read_input(&args.estimate)?,
        &args.estimate.display().to_string(),
    )?;
    let truth = io::parse_estimate_csv(
        &ctx.read_input(&args.truth)?,
        &args.truth.display().to_string(),
    )?;
    for (name, v) in [("estimate", &estimate), ("truth", &truth)] {
        if v.len() != grid.voxel_count() {
            return Err(CliError::Validation(format!(
                "{name} has {} voxels, grid has {}",
                v.len(),
                grid.voxel_count()
            )));
        }
    }

    let gamma = args.gamma.unwrap_or(rti_core::eval::DEFAULT_OCCUPANCY_GAMMA);
    let err = rmse(&estimate, &truth)?;
    let truth_mask = occupancy_mask(&truth, 0.0);
    let est_mask = occupancy_mask(&estimate, gamma);
    let occupied = truth_mask.iter().filter(|&&b| b).count();
    let empty = truth_mask.len() - occupied;
    let hits = est_mask
        .iter()
        .zip(&truth_mask)
        .filter(|(e, t)| **e && **t)
        .count();
    let false_alarms = est_mask
        .iter()
        .zip(&truth_mask)
        .filter(|(e, t)| **e && !**t)
        .count();
    let pd = (occupied > 0).then(|| hits as f64 / occupied as f64);
    let pf = (empty > 0).then(|| false_alarms as f64 / empty as f64);

    let curve = roc_curve(
        std::slice::from_ref(&estimate),
        std::slice::from_ref(&truth_mask),
        &default_gamma_grid(estimate.amax()),
    )?;
    ctx.add_output("roc.csv", io::format_roc_csv(&curve));

    let recognition = match &args.templates {
        Some(path) => {
            let templates = io::parse_templates_json(
                &ctx.read_input(path)?,
                &grid,
                &path.display().to_string(),
            )?;
            let agreements = rti_core::eval::atr_agreements(&estimate, &templates, gamma)?;
            let winner = rti_core::eval::atr_classify(&estimate, &templates, gamma)?;
            Some(json!({
                "winner": winner,
                "agreements": agreements
                    .iter()
                    .map(|(name, n)| json!({"template": name, "agreement": n}))
                    .collect::<Vec<_>>(),
            }))
        }
        None => None,
    };

    let report = json!({
        "rmse": err,
        "gamma": gamma,
        "detection": {"pd": pd, "pf": pf},
        "recognition": recognition,
    });
    ctx.add_output("report.json", pretty(&report)?);

    let mut summary = format!("rmse {err:.6}");
    if let (Some(pd), Some(pf)) = (pd, pf) {
        summary.push_str(&format!("; detection pd {pd:.3} pf {pf:.3} at gamma {gamma}"));
    }
    if let Some(rec) = report["recognition"].as_object() {
        summary.push_str(&format!(
            "; best template: {}",
            rec["winner"].as_str().unwrap_or("?")
        ));
    }
    Ok(summary)
}

// ---------------------------------------------------------------------------
// render

pub fn render(args: &RenderArgs, ctx: &mut RunContext) -> Result<String, CliError> {
    let grid = io::parse_grid_json(
        &ctx.read_input(&args.grid)?,
        &args.grid.display().to_string(),
    )?;
    let estimate = io::parse_estimate_csv(
        &ctx.read_input(&args.estimate)?,
        &args.estimate.display().to_string(),
    )?;
    if estimate.len() != grid.voxel_count() {
        return Err(CliError::Validation(format!(
            "estimate has {} voxels, grid has {}",
            estimate.len(),
            grid.voxel_count()
        )));
    }

    let mut images = io::render_z_slices(&grid, &estimate)?;
    images.push(io::render_side_view(&grid, &estimate)?);
    let mut listing = Vec::new();
    for image in &images {
        let file = format!("{}.pgm", image.label);
        ctx.add_output(&file, image.pgm.clone());
        listing.push(json!({
            "file": file,
            "label": image.label,
            "width": image.width,
            "height": image.height,
        }));
    }
    ctx.add_output("estimate.csv", io::format_estimate_csv(&estimate));
    let sidecar = json!({"max_value": estimate.amax(), "images": listing});
    ctx.add_output("render.json", pretty(&sidecar)?);
    Ok(format!(
        "rendered {} slice(s) plus side view (max value {})",
        images.len() - 1,
        estimate.amax()
    ))
}

// ---------------------------------------------------------------------------
// repro-fig

fn surface_csv(s: &RmseSurface) -> String {
    let mut out = String::from("alpha");
    for b in &s.betas {
        out.push_str(&format!(",beta_{b}"));
    }
    out.push('\n');
    for (ai, a) in s.alphas.iter().enumerate() {
        out.push_str(&format!("{a}"));
        for bi in 0..s.betas.len() {
            out.push_str(&format!(",{}", s.mean_rmse[ai][bi]));
        }
        out.push('\n');
    }
    out
}

fn surface_best(s: &RmseSurface) -> Value {
    json!({
        "best_alpha": s.alphas[s.best_alpha_index],
        "best_beta": s.betas[s.best_beta_index],
        "best_mean_rmse": s.best_mean(),
    })
}

fn emit_policy_surfaces(battery: &NegPolicyBattery, ctx: &mut RunContext) -> Result<(), CliError> {
    ctx.add_output("truncate_y_rmse.csv", surface_csv(&battery.truncate_y));
    ctx.add_output("iterative_rmse.csv", surface_csv(&battery.iterative));
    let summary = json!({
        "realizations": battery.config.n_realizations,
        "sigma_n": battery.config.sigma_n,
        "truncate_y": surface_best(&battery.truncate_y),
        "iterative": surface_best(&battery.iterative),
        "margin_vs_truncate_y": serde_json::to_value(battery.margin_vs_truncate_y)?,
    });
    ctx.add_output("policy_summary.json", pretty(&summary)?);
    Ok(())
}

fn emit_bias_sweep(battery: &NegPolicyBattery, ctx: &mut RunContext) -> Result<(), CliError> {
    let ty = &battery.truncate_y;
    let it = &battery.iterative;
    let mut csv = String::from("beta,truncate_y_rmse,iterative_rmse\n");
    for (bi, b) in ty.betas.iter().enumerate() {
        csv.push_str(&format!(
            "{b},{},{}\n",
            ty.mean_rmse[ty.best_alpha_index][bi],
            it.mean_rmse[it.best_alpha_index][bi]
        ));
    }
    ctx.add_output("bias_sweep.csv", csv);
    let summary = json!({
        "truncate_y_alpha": ty.alphas[ty.best_alpha_index],
        "iterative_alpha": it.alphas[it.best_alpha_index],
        "truncate_y_best_beta": ty.betas[ty.best_beta_index],
        "beta_gain_truncate_y": serde_json::to_value(battery.beta_gain_truncate_y)?,
    });
    ctx.add_output("bias_summary.json", pretty(&summary)?);
    Ok(())
}

fn emit_detection_curves(
    config: &RocBatteryConfig,
    ctx: &mut RunContext,
) -> Result<f64, CliError> {
    let battery = run_roc_battery(config)?;
    ctx.add_output("roc_iterative.csv", io::format_roc_csv(&battery.iterative));
    ctx.add_output("roc_truncate_x.csv", io::format_roc_csv(&battery.truncate_x));
    let summary = json!({
        "realizations": battery.config.n_realizations,
        "sigma_n": battery.config.sigma_n,
        "pf_grid": battery.config.pf_grid,
        "pd_iterative": battery.pd_iterative,
        "pd_truncate_x": battery.pd_truncate_x,
        "dominance_margin": battery.dominance_margin(),
    });
    ctx.add_output("roc_summary.json", pretty(&summary)?);
    Ok(battery.dominance_margin())
}

pub fn repro_fig(args: &ReproFigArgs, ctx: &mut RunContext) -> Result<String, CliError> {
    let neg_config = |ctx: &RunContext| {
        let mut c = NegBatteryConfig {
            seed: ctx.seed,
            ..NegBatteryConfig::default()
        };
        if let Some(n) = args.realizations {
            c.n_realizations = n;
        }
        c
    };
    let roc_config = |ctx: &RunContext| {
        let mut c = RocBatteryConfig {
            seed: ctx.seed,
            ..RocBatteryConfig::default()
        };
        if let Some(n) = args.realizations {
            c.n_realizations = n;
        }
        c
    };

    match args.recipe.as_str() {
        "policy-surfaces" | "9-10" => {
            let battery = run_negative_policy_battery(&neg_config(ctx))?;
            emit_policy_surfaces(&battery, ctx)?;
            Ok(format!(
                "policy surfaces: best truncate-y rmse {:.4}, best iterative rmse {:.4}",
                battery.truncate_y.best_mean(),
                battery.iterative.best_mean()
            ))
        }
        "bias-sweep" | "14" => {
            let battery = run_negative_policy_battery(&neg_config(ctx))?;
            emit_bias_sweep(&battery, ctx)?;
            Ok(format!(
                "bias sweep: truncate-y best beta {}",
                battery.truncate_y.betas[battery.truncate_y.best_beta_index]
            ))
        }
        "detection-curves" | "15-18" => {
            let margin = emit_detection_curves(&roc_config(ctx), ctx)?;
            Ok(format!(
                "detection curves: iterative leads truncate-x by at least {margin:+.3}"
            ))
        }
        "all" => {
            let battery = run_negative_policy_battery(&neg_config(ctx))?;
            emit_policy_surfaces(&battery, ctx)?;
            emit_bias_sweep(&battery, ctx)?;
            let margin = emit_detection_curves(&roc_config(ctx), ctx)?;
            Ok(format!(
                "all recipes: best iterative rmse {:.4}, detection lead {margin:+.3}",
                battery.iterative.best_mean()
            ))
        }
        other => Err(CliError::Validation(format!(
            "unknown recipe \"{other}\"; expected policy-surfaces, bias-sweep, \
             detection-curves, or all"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surface_csv_is_rectangular() {
        let s = RmseSurface {
            alphas: vec![0.1, 1.0],
            betas: vec![0.0, -1.0, -2.0],
            rmse: Vec::new(),
            mean_rmse: vec![vec![0.5, 0.4, 0.6], vec![0.7, 0.3, 0.8]],
            best_alpha_index: 0,
            best_beta_index: 1,
        };
        let csv = surface_csv(&s);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "alpha,beta_0,beta_-1,beta_-2");
        assert!(lines[1].starts_with("0.1,"));
        assert_eq!(lines[1].split(',').count(), 4);
    }

    #[test]
    fn reference_parsing_validates_range() {
        let auto = RefSetting::Named("auto".into());
        assert_eq!(parse_reference(&None, &auto, 5).unwrap(), None);
        assert_eq!(
            parse_reference(&Some("3".into()), &auto, 5).unwrap(),
            Some(3)
        );
        assert!(parse_reference(&Some("9".into()), &auto, 5).is_err());
        assert!(parse_reference(&Some("mid".into()), &auto, 5).is_err());
        assert_eq!(
            parse_reference(&None, &RefSetting::Index(2), 5).unwrap(),
            Some(2)
        );
    }
}
