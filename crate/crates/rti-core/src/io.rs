//! File formats: layout/grid/scene JSON, measurement and calibration CSV,
//! estimate CSV with JSON sidecar, ROC CSV, and ASCII PGM image rendering.
//!
//! All text formats round-trip losslessly; floats are written in Rust's
//! shortest round-trip representation.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RtiError};
use crate::eval::{AtrTemplate, RocCurve, RocPoint};
use crate::geometry::{GridSpec, Link, Sensor, SensorLayout, Side, Topology};
use crate::simulate::{make_scene, MeasurementSet, Primitive};

fn parse_err(label: &str, message: impl Into<String>) -> RtiError {
    RtiError::Parse {
        path: label.to_string(),
        message: message.into(),
    }
}

// ---------------------------------------------------------------------------
// Layout JSON

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SensorFile {
    id: u32,
    pos: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    side: Option<Side>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayoutFile {
    sensors: Vec<SensorFile>,
    topology: Topology,
}

pub fn parse_layout_json(text: &str, label: &str) -> Result<SensorLayout> {
    let file: LayoutFile =
        serde_json::from_str(text).map_err(|e| parse_err(label, e.to_string()))?;
    let layout = SensorLayout {
        sensors: file
            .sensors
            .into_iter()
            .map(|s| Sensor {
                id: s.id,
                position: s.pos,
                side: s.side,
            })
            .collect(),
        topology: file.topology,
    };
    layout.validate()?;
    Ok(layout)
}

pub fn format_layout_json(layout: &SensorLayout) -> Result<String> {
    let file = LayoutFile {
        sensors: layout
            .sensors
            .iter()
            .map(|s| SensorFile {
                id: s.id,
                pos: s.position,
                side: s.side,
            })
            .collect(),
        topology: layout.topology,
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn load_layout(path: &Path) -> Result<SensorLayout> {
    parse_layout_json(&std::fs::read_to_string(path)?, &path.display().to_string())
}

pub fn save_layout(path: &Path, layout: &SensorLayout) -> Result<()> {
    std::fs::write(path, format_layout_json(layout)?)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Grid JSON

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    n: [usize; 3],
    d: [f64; 3],
    origin: [f64; 3],
}

pub fn parse_grid_json(text: &str, label: &str) -> Result<GridSpec> {
    let file: GridFile = serde_json::from_str(text).map_err(|e| parse_err(label, e.to_string()))?;
    GridSpec::new(
        (file.n[0], file.n[1], file.n[2]),
        (file.d[0], file.d[1], file.d[2]),
        file.origin,
    )
}

pub fn format_grid_json(grid: &GridSpec) -> Result<String> {
    let file = GridFile {
        n: [grid.nx, grid.ny, grid.nz],
        d: [grid.dx, grid.dy, grid.dz],
        origin: grid.origin,
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn load_grid(path: &Path) -> Result<GridSpec> {
    parse_grid_json(&std::fs::read_to_string(path)?, &path.display().to_string())
}

pub fn save_grid(path: &Path, grid: &GridSpec) -> Result<()> {
    std::fs::write(path, format_grid_json(grid)?)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Scene JSON (a list of primitives)

pub fn parse_scene_json(text: &str, label: &str) -> Result<Vec<Primitive>> {
    let prims: Vec<Primitive> =
        serde_json::from_str(text).map_err(|e| parse_err(label, e.to_string()))?;
    for p in &prims {
        p.validate()?;
    }
    Ok(prims)
}

pub fn load_scene_primitives(path: &Path) -> Result<Vec<Primitive>> {
    parse_scene_json(&std::fs::read_to_string(path)?, &path.display().to_string())
}

pub fn save_scene_primitives(path: &Path, prims: &[Primitive]) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(prims)?)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Measurement CSV: frame,link_id,tx,rx,drop_db

pub fn format_measurements_csv(frames: &[DVector<f64>], links: &[Link]) -> Result<String> {
    let mut out = String::from("frame,link_id,tx,rx,drop_db\n");
    for (f, frame) in frames.iter().enumerate() {
        if frame.len() != links.len() {
            return Err(RtiError::DimensionMismatch(format!(
                "frame {f} has {} entries, layout has {} links",
                frame.len(),
                links.len()
            )));
        }
        for link in links {
            out.push_str(&format!(
                "{f},{},{},{},{}\n",
                link.link_id, link.tx_id, link.rx_id, frame[link.link_id]
            ));
        }
    }
    Ok(out)
}

pub fn parse_measurements_csv(
    text: &str,
    links: &[Link],
    label: &str,
) -> Result<MeasurementSet> {
    let m = links.len();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "frame,link_id,tx,rx,drop_db" => {}
        Some((_, header)) => {
            return Err(parse_err(
                label,
                format!("unexpected header '{}'", header.trim()),
            ))
        }
        None => return Err(parse_err(label, "empty file")),
    }

    let mut frames: Vec<DVector<f64>> = Vec::new();
    let mut current: Option<(u64, DVector<f64>, Vec<bool>)> = None;
    let mut last_frame: Option<u64> = None;

    let close_frame = |cur: Option<(u64, DVector<f64>, Vec<bool>)>,
                       frames: &mut Vec<DVector<f64>>|
     -> Result<()> {
        if let Some((idx, y, seen)) = cur {
            if let Some(missing) = seen.iter().position(|s| !s) {
                return Err(parse_err(
                    label,
                    format!("frame {idx} is missing link {missing}"),
                ));
            }
            frames.push(y);
        }
        Ok(())
    };

    for (lineno, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(parse_err(
                label,
                format!("line {}: expected 5 fields, got {}", lineno + 1, fields.len()),
            ));
        }
        let frame: u64 = fields[0]
            .parse()
            .map_err(|_| parse_err(label, format!("line {}: bad frame index", lineno + 1)))?;
        let link_id: usize = fields[1]
            .parse()
            .map_err(|_| parse_err(label, format!("line {}: bad link id", lineno + 1)))?;
        let tx: u32 = fields[2]
            .parse()
            .map_err(|_| parse_err(label, format!("line {}: bad tx id", lineno + 1)))?;
        let rx: u32 = fields[3]
            .parse()
            .map_err(|_| parse_err(label, format!("line {}: bad rx id", lineno + 1)))?;
        let drop: f64 = fields[4]
            .parse()
            .map_err(|_| parse_err(label, format!("line {}: bad drop value", lineno + 1)))?;
        if drop.is_nan() {
            return Err(parse_err(label, format!("line {}: NaN drop", lineno + 1)));
        }
        if link_id >= m {
            return Err(parse_err(
                label,
                format!("line {}: unknown link id {link_id} (layout has {m})", lineno + 1),
            ));
        }
        let link = &links[link_id];
        if link.tx_id != tx || link.rx_id != rx {
            return Err(parse_err(
                label,
                format!(
                    "line {}: link {link_id} endpoints {tx}->{rx} do not match layout {}->{}",
                    lineno + 1,
                    link.tx_id,
                    link.rx_id
                ),
            ));
        }

        let start_new = match &current {
            None => true,
            Some((idx, _, _)) => *idx != frame,
        };
        if start_new {
            if let Some(last) = last_frame {
                if frame <= last {
                    return Err(parse_err(
                        label,
                        format!("line {}: frame {frame} after frame {last}", lineno + 1),
                    ));
                }
            }
            close_frame(current.take(), &mut frames)?;
            last_frame = Some(frame);
            current = Some((frame, DVector::zeros(m), vec![false; m]));
        }
        let (_, y, seen) = current.as_mut().expect("frame in progress");
        if seen[link_id] {
            return Err(parse_err(
                label,
                format!("line {}: duplicate link {link_id} in frame {frame}", lineno + 1),
            ));
        }
        y[link_id] = drop;
        seen[link_id] = true;
    }
    close_frame(current, &mut frames)?;
    if frames.is_empty() {
        return Err(parse_err(label, "no frames"));
    }
    Ok(MeasurementSet {
        baseline: None,
        frames,
    })
}

pub fn load_measurements(path: &Path, links: &[Link]) -> Result<MeasurementSet> {
    parse_measurements_csv(
        &std::fs::read_to_string(path)?,
        links,
        &path.display().to_string(),
    )
}

pub fn save_measurements(path: &Path, frames: &[DVector<f64>], links: &[Link]) -> Result<()> {
    std::fs::write(path, format_measurements_csv(frames, links)?)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Calibration CSV: scan,link_id,rss_dbm

pub fn format_calibration_csv(scans: &[DVector<f64>]) -> String {
    let mut out = String::from("scan,link_id,rss_dbm\n");
    for (s, scan) in scans.iter().enumerate() {
        for (l, v) in scan.iter().enumerate() {
            out.push_str(&format!("{s},{l},{v}\n"));
        }
    }
    out
}

pub fn parse_calibration_csv(text: &str, label: &str) -> Result<Vec<DVector<f64>>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "scan,link_id,rss_dbm" => {}
        Some((_, header)) => {
            return Err(parse_err(
                label,
                format!("unexpected header '{}'", header.trim()),
            ))
        }
        None => return Err(parse_err(label, "empty file")),
    }
    let mut rows: Vec<(usize, usize, f64)> = Vec::new();
    for (lineno, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(parse_err(
                label,
                format!("line {}: expected 3 fields, got {}", lineno + 1, fields.len()),
            ));
        }
        let scan: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(label, format!("line {}: bad scan index", lineno + 1)))?;
        let link: usize = fields[1]
            .parse()
            .map_err(|_| parse_err(label, format!("line {}: bad link id", lineno + 1)))?;
        let rss: f64 = fields[2]
            .parse()
            .map_err(|_| parse_err(label, format!("line {}: bad RSS value", lineno + 1)))?;
        if rss.is_nan() {
            return Err(parse_err(label, format!("line {}: NaN RSS", lineno + 1)));
        }
        rows.push((scan, link, rss));
    }
    if rows.is_empty() {
        return Err(parse_err(label, "no calibration rows"));
    }
    let n_scans = rows.iter().map(|r| r.0).max().unwrap() + 1;
    let m = rows.iter().map(|r| r.1).max().unwrap() + 1;
    let mut scans = vec![DVector::zeros(m); n_scans];
    let mut seen = vec![vec![false; m]; n_scans];
    for (s, l, v) in rows {
        if seen[s][l] {
            return Err(parse_err(label, format!("duplicate scan {s} link {l}")));
        }
        scans[s][l] = v;
        seen[s][l] = true;
    }
    for (s, flags) in seen.iter().enumerate() {
        if let Some(l) = flags.iter().position(|f| !f) {
            return Err(parse_err(label, format!("scan {s} is missing link {l}")));
        }
    }
    Ok(scans)
}

pub fn load_calibration(path: &Path) -> Result<Vec<DVector<f64>>> {
    parse_calibration_csv(&std::fs::read_to_string(path)?, &path.display().to_string())
}

pub fn save_calibration(path: &Path, scans: &[DVector<f64>]) -> Result<()> {
    std::fs::write(path, format_calibration_csv(scans))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Estimate CSV + JSON sidecar

/// Solve provenance stored next to an estimate CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSidecar {
    pub policy: String,
    pub cost: f64,
    pub residual_norm: f64,
    pub active_set: Vec<usize>,
    pub iterations: usize,
    /// Peak voxel value, the white point of rendered images.
    pub max_value: f64,
}

pub fn format_estimate_csv(x: &DVector<f64>) -> String {
    let mut out = String::from("voxel,x_db_per_m\n");
    for (i, v) in x.iter().enumerate() {
        out.push_str(&format!("{i},{v}\n"));
    }
    out
}

pub fn parse_estimate_csv(text: &str, label: &str) -> Result<DVector<f64>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "voxel,x_db_per_m" => {}
        _ => return Err(parse_err(label, "missing estimate header")),
    }
    let mut values = Vec::new();
    for (lineno, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 {
            return Err(parse_err(label, format!("line {}: expected 2 fields", lineno + 1)));
        }
        let idx: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(label, format!("line {}: bad voxel index", lineno + 1)))?;
        if idx != values.len() {
            return Err(parse_err(
                label,
                format!("line {}: voxel {idx} out of order", lineno + 1),
            ));
        }
        let v: f64 = fields[1]
            .parse()
            .map_err(|_| parse_err(label, format!("line {}: bad value", lineno + 1)))?;
        values.push(v);
    }
    if values.is_empty() {
        return Err(parse_err(label, "no voxels"));
    }
    Ok(DVector::from_vec(values))
}

// ---------------------------------------------------------------------------
// ROC CSV: gamma,pf,pd

pub fn format_roc_csv(curve: &RocCurve) -> String {
    let mut out = String::from("gamma,pf,pd\n");
    for p in &curve.points {
        out.push_str(&format!("{},{},{}\n", p.gamma, p.pf, p.pd));
    }
    out
}

pub fn parse_roc_csv(text: &str, label: &str) -> Result<RocCurve> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "gamma,pf,pd" => {}
        _ => return Err(parse_err(label, "missing ROC header")),
    }
    let mut points = Vec::new();
    for (lineno, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(parse_err(label, format!("line {}: expected 3 fields", lineno + 1)));
        }
        let parse_f = |s: &str, what: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| parse_err(label, format!("line {}: bad {what}", lineno + 1)))
        };
        points.push(RocPoint {
            gamma: parse_f(fields[0], "gamma")?,
            pf: parse_f(fields[1], "pf")?,
            pd: parse_f(fields[2], "pd")?,
        });
    }
    if points.is_empty() {
        return Err(parse_err(label, "no ROC points"));
    }
    Ok(RocCurve { points })
}

// ---------------------------------------------------------------------------
// ATR template JSON: name plus the primitives outlining the vehicle

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateFile {
    name: String,
    primitives: Vec<Primitive>,
}

/// Rasterize named primitive outlines into binary grid templates.
pub fn parse_templates_json(text: &str, grid: &GridSpec, label: &str) -> Result<Vec<AtrTemplate>> {
    let files: Vec<TemplateFile> =
        serde_json::from_str(text).map_err(|e| parse_err(label, e.to_string()))?;
    files
        .into_iter()
        .map(|f| {
            let scene = make_scene(grid, &f.primitives)?;
            let template = AtrTemplate {
                name: f.name,
                mask: scene.x.iter().map(|v| *v > 0.0).collect(),
            };
            template.validate(grid.voxel_count())?;
            Ok(template)
        })
        .collect()
}

pub fn load_templates(path: &Path, grid: &GridSpec) -> Result<Vec<AtrTemplate>> {
    parse_templates_json(
        &std::fs::read_to_string(path)?,
        grid,
        &path.display().to_string(),
    )
}

// ---------------------------------------------------------------------------
// PGM rendering (P2, ASCII)

/// One grayscale image with its placement label.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    pub label: String,
    pub width: usize,
    pub height: usize,
    pub pgm: String,
}

fn to_pgm(width: usize, height: usize, pixels: &[u8]) -> String {
    let mut out = format!("P2\n{width} {height}\n255\n");
    for r in 0..height {
        let row: Vec<String> = (0..width)
            .map(|c| pixels[r * width + c].to_string())
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

fn scale(v: f64, max: f64) -> u8 {
    if max <= 0.0 {
        return 0;
    }
    ((v.max(0.0) / max) * 255.0).round().clamp(0.0, 255.0) as u8
}

/// One top-view image per z layer, rows running from high y down.
pub fn render_z_slices(grid: &GridSpec, x: &DVector<f64>) -> Result<Vec<RenderedImage>> {
    if x.len() != grid.voxel_count() {
        return Err(RtiError::DimensionMismatch(format!(
            "estimate has {} voxels, grid has {}",
            x.len(),
            grid.voxel_count()
        )));
    }
    let max = x.amax();
    let mut images = Vec::with_capacity(grid.nz);
    for iz in 0..grid.nz {
        let mut pixels = vec![0u8; grid.nx * grid.ny];
        for row in 0..grid.ny {
            let iy = grid.ny - 1 - row;
            for ix in 0..grid.nx {
                let v = x[grid.coords_to_index(ix, iy, iz)];
                pixels[row * grid.nx + ix] = scale(v, max);
            }
        }
        images.push(RenderedImage {
            label: format!("z{iz}"),
            width: grid.nx,
            height: grid.ny,
            pgm: to_pgm(grid.nx, grid.ny, &pixels),
        });
    }
    Ok(images)
}

/// Side view: maximum projection over y, rows running from high z down.
pub fn render_side_view(grid: &GridSpec, x: &DVector<f64>) -> Result<RenderedImage> {
    if x.len() != grid.voxel_count() {
        return Err(RtiError::DimensionMismatch(format!(
            "estimate has {} voxels, grid has {}",
            x.len(),
            grid.voxel_count()
        )));
    }
    let max = x.amax();
    let mut pixels = vec![0u8; grid.nx * grid.nz];
    for row in 0..grid.nz {
        let iz = grid.nz - 1 - row;
        for ix in 0..grid.nx {
            let mut best = 0.0f64;
            for iy in 0..grid.ny {
                best = best.max(x[grid.coords_to_index(ix, iy, iz)]);
            }
            pixels[row * grid.nx + ix] = scale(best, max);
        }
    }
    Ok(RenderedImage {
        label: "side".into(),
        width: grid.nx,
        height: grid.nz,
        pgm: to_pgm(grid.nx, grid.nz, &pixels),
    })
}
