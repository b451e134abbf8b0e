//! Deployment arithmetic: scan time, velocity bounds, along-road voxel
//! resolution, and packet-payload node capacity.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RtiError};

/// Token-passing scan schedule parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanParams {
    /// Bits per data frame.
    pub l_rti_bits: f64,
    /// Baseband rate in bits/second.
    pub r_z_bps: f64,
    /// Guard time per node (seconds).
    pub t_guard_s: f64,
    /// Processing time per node (seconds).
    pub t_proc_s: f64,
    /// Node count.
    pub k: usize,
}

impl ScanParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.l_rti_bits > 0.0) || !(self.r_z_bps > 0.0) {
            return Err(RtiError::InvalidPlan(format!(
                "frame bits and baseband rate must be > 0, got {} and {}",
                self.l_rti_bits, self.r_z_bps
            )));
        }
        if self.t_guard_s < 0.0 || self.t_proc_s < 0.0 {
            return Err(RtiError::InvalidPlan(
                "guard and processing times must be >= 0".into(),
            ));
        }
        if self.k < 1 {
            return Err(RtiError::InvalidPlan("node count must be >= 1".into()));
        }
        Ok(())
    }
}

/// Time for every node to broadcast once:
/// T_scan = (L/r + T_guard + T_proc) * K.
pub fn scan_time(p: &ScanParams) -> Result<f64> {
    p.validate()?;
    Ok((p.l_rti_bits / p.r_z_bps + p.t_guard_s + p.t_proc_s) * p.k as f64)
}

/// Velocity bounds for a given scan time: the per-voxel unambiguous bound
/// (one voxel per scan) and the road-length detection bound (the vehicle
/// must be seen in at least one scan).
pub fn max_velocities(
    r_dist_m: f64,
    road_length_m: f64,
    t_scan_s: f64,
) -> Result<(f64, f64)> {
    if !(r_dist_m > 0.0 && road_length_m > 0.0 && t_scan_s > 0.0) {
        return Err(RtiError::InvalidPlan(format!(
            "distances and scan time must be > 0, got ({r_dist_m}, {road_length_m}, {t_scan_s})"
        )));
    }
    Ok((r_dist_m / t_scan_s, road_length_m / t_scan_s))
}

/// Road length covered by evenly spaced poles on one side.
pub fn road_length_from_spacing(nodes_per_side: usize, spacing_m: f64) -> Result<f64> {
    if nodes_per_side < 2 || !(spacing_m > 0.0) {
        return Err(RtiError::InvalidPlan(format!(
            "need >= 2 nodes per side and positive spacing, got {nodes_per_side} at {spacing_m} m"
        )));
    }
    Ok((nodes_per_side - 1) as f64 * spacing_m)
}

/// Along-road voxel resolution for K nodes with pole spacing D.
/// One mounting height: dx = 2 D / K. H distinct heights per pole:
/// dx = D H^2 / (2 K).
pub fn voxel_length(d_node_m: f64, k: usize, heights: usize) -> Result<f64> {
    if !(d_node_m > 0.0) || k < 2 || heights < 1 {
        return Err(RtiError::InvalidPlan(format!(
            "need positive spacing, K >= 2, heights >= 1; got ({d_node_m}, {k}, {heights})"
        )));
    }
    Ok(if heights == 1 {
        2.0 * d_node_m / k as f64
    } else {
        d_node_m * (heights * heights) as f64 / (2.0 * k as f64)
    })
}

/// Per-packet byte accounting for the RSS data frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketBudget {
    pub payload_bytes: usize,
    pub overhead_bytes: usize,
    pub bytes_per_rss: usize,
}

impl PacketBudget {
    /// Standard radio payload.
    pub fn normal() -> PacketBudget {
        PacketBudget {
            payload_bytes: 84,
            overhead_bytes: 3,
            bytes_per_rss: 1,
        }
    }

    /// Packet-fragmentation payload.
    pub fn fragmentation() -> PacketBudget {
        PacketBudget {
            payload_bytes: 255,
            overhead_bytes: 3,
            bytes_per_rss: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.payload_bytes <= self.overhead_bytes || self.bytes_per_rss == 0 {
            return Err(RtiError::InvalidPlan(format!(
                "payload {} must exceed overhead {} with positive RSS width",
                self.payload_bytes, self.overhead_bytes
            )));
        }
        Ok(())
    }
}

/// Nodes addressable in a single packet: one RSS byte per node in the
/// payload that remains after overhead.
pub fn node_capacity(budget: &PacketBudget) -> Result<usize> {
    budget.validate()?;
    Ok((budget.payload_bytes - budget.overhead_bytes) / budget.bytes_per_rss)
}

/// Multi-packet scan plan for networks beyond single-packet capacity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiPacketPlan {
    /// RSS bytes carried per packet after the widened node ID and the
    /// sequence ID are taken out.
    pub rss_bytes_per_packet: usize,
    /// Headline figure: total node count divided by per-packet capacity,
    /// truncated.
    pub nominal_packets: usize,
    /// Per-node accounting: each node reports K-1 neighbors, rounded up.
    pub strict_packets: usize,
}

/// Packets per scan for a K-node network using a sequence ID field.
/// Addressing more than 255 nodes also widens the node ID by one byte, so
/// per-packet RSS capacity is payload - (overhead + 1) - seq_id_bytes.
pub fn multi_packet_plan(
    budget: &PacketBudget,
    k: usize,
    seq_id_bytes: usize,
) -> Result<MultiPacketPlan> {
    budget.validate()?;
    if k < 2 {
        return Err(RtiError::InvalidPlan(format!(
            "multi-packet plan needs K >= 2, got {k}"
        )));
    }
    let fixed = budget.overhead_bytes + 1 + seq_id_bytes;
    if budget.payload_bytes <= fixed {
        return Err(RtiError::InvalidPlan(format!(
            "payload {} too small for {fixed} header bytes",
            budget.payload_bytes
        )));
    }
    let per_packet = (budget.payload_bytes - fixed) / budget.bytes_per_rss;
    let nominal = k / per_packet;
    let strict = (k - 1).div_ceil(per_packet);
    Ok(MultiPacketPlan {
        rss_bytes_per_packet: per_packet,
        nominal_packets: nominal,
        strict_packets: strict,
    })
}
