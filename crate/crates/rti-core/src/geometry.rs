//! Voxel grid, sensor layout, and link-voxel geometry.
//!
//! The grid is a box of cuboid voxels with x along the road, y across the
//! road, and z vertical. Voxel indices run x-fastest: `n = ix + nx*(iy + ny*iz)`.
//! That ordering is load-bearing: the motion module's shift matrix has the
//! Kronecker form `I (x) J0` only because x-lines are contiguous in memory.

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RtiError};

/// Intersections shorter than this (meters) count as grazing contact and are
/// reported as zero, keeping the weight matrix sparse.
pub const GRAZE_EPS: f64 = 1e-12;

/// Voxel grid specification: counts, edge lengths, origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub origin: [f64; 3],
}

impl GridSpec {
    pub fn new(
        n: (usize, usize, usize),
        d: (f64, f64, f64),
        origin: [f64; 3],
    ) -> Result<GridSpec> {
        let grid = GridSpec {
            nx: n.0,
            ny: n.1,
            nz: n.2,
            dx: d.0,
            dy: d.1,
            dz: d.2,
            origin,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 1 || self.ny < 1 || self.nz < 1 {
            return Err(RtiError::InvalidGrid(format!(
                "voxel counts must be >= 1, got ({}, {}, {})",
                self.nx, self.ny, self.nz
            )));
        }
        if !(self.dx > 0.0 && self.dy > 0.0 && self.dz > 0.0) {
            return Err(RtiError::InvalidGrid(format!(
                "voxel edge lengths must be > 0, got ({}, {}, {})",
                self.dx, self.dy, self.dz
            )));
        }
        Ok(())
    }

    /// Total voxel count N.
    pub fn voxel_count(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    /// Decompose a flat voxel index into (ix, iy, iz), x varying fastest.
    pub fn index_to_coords(&self, n: usize) -> Result<(usize, usize, usize)> {
        if n >= self.voxel_count() {
            return Err(RtiError::VoxelIndexOutOfRange {
                index: n,
                count: self.voxel_count(),
            });
        }
        let ix = n % self.nx;
        let iy = (n / self.nx) % self.ny;
        let iz = n / (self.nx * self.ny);
        Ok((ix, iy, iz))
    }

    /// Flatten (ix, iy, iz) into the x-fastest voxel index.
    pub fn coords_to_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.nx * (iy + self.ny * iz)
    }

    /// Center point of voxel `n`.
    pub fn voxel_center(&self, n: usize) -> Result<Point3<f64>> {
        let (ix, iy, iz) = self.index_to_coords(n)?;
        Ok(Point3::new(
            self.origin[0] + (ix as f64 + 0.5) * self.dx,
            self.origin[1] + (iy as f64 + 0.5) * self.dy,
            self.origin[2] + (iz as f64 + 0.5) * self.dz,
        ))
    }

    /// Lower and upper corners of voxel `n`.
    ///
    /// Bounds are computed as `origin + i*d` on both sides so that adjacent
    /// voxels share bit-identical face coordinates.
    pub fn voxel_bounds(&self, n: usize) -> Result<(Point3<f64>, Point3<f64>)> {
        let (ix, iy, iz) = self.index_to_coords(n)?;
        let lo = Point3::new(
            self.origin[0] + ix as f64 * self.dx,
            self.origin[1] + iy as f64 * self.dy,
            self.origin[2] + iz as f64 * self.dz,
        );
        let hi = Point3::new(
            self.origin[0] + (ix + 1) as f64 * self.dx,
            self.origin[1] + (iy + 1) as f64 * self.dy,
            self.origin[2] + (iz + 1) as f64 * self.dz,
        );
        Ok((lo, hi))
    }

    /// Bounding box of the whole grid.
    pub fn bounding_box(&self) -> (Point3<f64>, Point3<f64>) {
        let lo = Point3::new(self.origin[0], self.origin[1], self.origin[2]);
        let hi = Point3::new(
            self.origin[0] + self.nx as f64 * self.dx,
            self.origin[1] + self.ny as f64 * self.dy,
            self.origin[2] + self.nz as f64 * self.dz,
        );
        (lo, hi)
    }

    /// True if a voxel's upper face along `axis` is the grid's outer face.
    fn is_outer_hi(&self, coords: (usize, usize, usize), axis: usize) -> bool {
        match axis {
            0 => coords.0 + 1 == self.nx,
            1 => coords.1 + 1 == self.ny,
            _ => coords.2 + 1 == self.nz,
        }
    }
}

/// Which side of the road a sensor stands on (cross-road topology only).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    #[serde(rename = "L")]
    Left,
    #[serde(rename = "R")]
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sensor {
    pub id: u32,
    pub position: [f64; 3],
    pub side: Option<Side>,
}

impl Sensor {
    pub fn point(&self) -> Point3<f64> {
        Point3::new(self.position[0], self.position[1], self.position[2])
    }
}

/// Link topology of the sensor network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// Every unordered sensor pair is a link: M = K(K-1)/2.
    FullMesh,
    /// Sensors line both sides of a road; only cross-road pairs link up:
    /// M = (K/2)^2 with equal sides.
    CrossRoad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorLayout {
    pub sensors: Vec<Sensor>,
    pub topology: Topology,
}

impl SensorLayout {
    pub fn full_mesh(positions: &[[f64; 3]]) -> SensorLayout {
        SensorLayout {
            sensors: positions
                .iter()
                .enumerate()
                .map(|(i, p)| Sensor {
                    id: i as u32,
                    position: *p,
                    side: None,
                })
                .collect(),
            topology: Topology::FullMesh,
        }
    }

    pub fn cross_road(left: &[[f64; 3]], right: &[[f64; 3]]) -> SensorLayout {
        let mut sensors = Vec::with_capacity(left.len() + right.len());
        for (i, p) in left.iter().enumerate() {
            sensors.push(Sensor {
                id: i as u32,
                position: *p,
                side: Some(Side::Left),
            });
        }
        for (i, p) in right.iter().enumerate() {
            sensors.push(Sensor {
                id: (left.len() + i) as u32,
                position: *p,
                side: Some(Side::Right),
            });
        }
        SensorLayout {
            sensors,
            topology: Topology::CrossRoad,
        }
    }

    pub fn sensor_count(&self) -> usize {
        self.sensors.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sensors.len() < 2 {
            return Err(RtiError::InvalidLayout(format!(
                "need at least 2 sensors, got {}",
                self.sensors.len()
            )));
        }
        let mut ids: Vec<u32> = self.sensors.iter().map(|s| s.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.sensors.len() {
            return Err(RtiError::InvalidLayout("duplicate sensor ids".into()));
        }
        if self.topology == Topology::CrossRoad {
            let k = self.sensors.len();
            if k % 2 != 0 {
                return Err(RtiError::InvalidLayout(format!(
                    "cross-road topology needs an even sensor count, got {k}"
                )));
            }
            let mut left = 0usize;
            let mut right = 0usize;
            for s in &self.sensors {
                match s.side {
                    Some(Side::Left) => left += 1,
                    Some(Side::Right) => right += 1,
                    None => {
                        return Err(RtiError::InvalidLayout(format!(
                            "sensor {} has no side assignment",
                            s.id
                        )))
                    }
                }
            }
            if left != right {
                return Err(RtiError::InvalidLayout(format!(
                    "cross-road sides must be equal, got {left} left / {right} right"
                )));
            }
        }
        Ok(())
    }

    /// Number of links implied by the topology.
    pub fn link_count(&self) -> usize {
        let k = self.sensors.len();
        match self.topology {
            Topology::FullMesh => k * (k - 1) / 2,
            Topology::CrossRoad => (k / 2) * (k / 2),
        }
    }
}

/// One sensor pair whose packet exchanges yield an RSS measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub link_id: usize,
    pub tx_id: u32,
    pub rx_id: u32,
    pub endpoints: [Point3<f64>; 2],
    /// Link length d (meters).
    pub d: f64,
}

/// Enumerate the link set of a layout with dense link ids from 0.
///
/// Full mesh takes all unordered pairs in sensor-list order; cross-road takes
/// all (left, right) pairs, left-major.
pub fn enumerate_links(layout: &SensorLayout) -> Result<Vec<Link>> {
    layout.validate()?;
    let mut links = Vec::with_capacity(layout.link_count());
    let push = |tx: &Sensor, rx: &Sensor, links: &mut Vec<Link>| -> Result<()> {
        let a = tx.point();
        let b = rx.point();
        let d = (b - a).norm();
        if d <= 0.0 {
            return Err(RtiError::InvalidLayout(format!(
                "sensors {} and {} are coincident",
                tx.id, rx.id
            )));
        }
        links.push(Link {
            link_id: links.len(),
            tx_id: tx.id,
            rx_id: rx.id,
            endpoints: [a, b],
            d,
        });
        Ok(())
    };
    match layout.topology {
        Topology::FullMesh => {
            for i in 0..layout.sensors.len() {
                for j in (i + 1)..layout.sensors.len() {
                    push(&layout.sensors[i], &layout.sensors[j], &mut links)?;
                }
            }
        }
        Topology::CrossRoad => {
            let left: Vec<&Sensor> = layout
                .sensors
                .iter()
                .filter(|s| s.side == Some(Side::Left))
                .collect();
            let right: Vec<&Sensor> = layout
                .sensors
                .iter()
                .filter(|s| s.side == Some(Side::Right))
                .collect();
            for l in &left {
                for r in &right {
                    push(l, r, &mut links)?;
                }
            }
        }
    }
    Ok(links)
}

/// Distances from a voxel center to the two endpoints of a link.
pub fn focal_distances(link: &Link, center: &Point3<f64>) -> (f64, f64) {
    (
        (center - link.endpoints[0]).norm(),
        (center - link.endpoints[1]).norm(),
    )
}

/// Length of the link segment inside voxel `n`, by parametric slab clipping.
///
/// Boundary convention: each voxel owns its lower faces; the upper face
/// belongs to the next voxel except on the grid's outer boundary. A segment
/// lying exactly on a shared face is therefore credited to the voxel with the
/// larger index along the face normal. Grazing contact below [`GRAZE_EPS`]
/// returns exactly zero.
pub fn segment_length_in_voxel(grid: &GridSpec, n: usize, link: &Link) -> Result<f64> {
    let (lo, hi) = grid.voxel_bounds(n)?;
    let coords = grid.index_to_coords(n)?;
    let outer_hi = [
        grid.is_outer_hi(coords, 0),
        grid.is_outer_hi(coords, 1),
        grid.is_outer_hi(coords, 2),
    ];
    Ok(clip_segment_to_box(
        &link.endpoints[0],
        &link.endpoints[1],
        &lo,
        &hi,
        outer_hi,
    ))
}

/// Length of the link segment inside the grid's bounding box (both outer
/// faces closed). Independent reference for the chord-conservation property.
pub fn segment_length_in_grid(grid: &GridSpec, link: &Link) -> f64 {
    let (lo, hi) = grid.bounding_box();
    clip_segment_to_box(
        &link.endpoints[0],
        &link.endpoints[1],
        &lo,
        &hi,
        [true, true, true],
    )
}

fn clip_segment_to_box(
    a: &Point3<f64>,
    b: &Point3<f64>,
    lo: &Point3<f64>,
    hi: &Point3<f64>,
    hi_closed: [bool; 3],
) -> f64 {
    let dir = b - a;
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    for axis in 0..3 {
        let da = dir[axis];
        if da == 0.0 {
            // Constant coordinate: membership decides the whole segment.
            // Lower face closed, upper face open unless it is the grid's
            // outer face.
            let c = a[axis];
            let inside = c >= lo[axis] && (c < hi[axis] || (hi_closed[axis] && c <= hi[axis]));
            if !inside {
                return 0.0;
            }
        } else {
            let mut ta = (lo[axis] - a[axis]) / da;
            let mut tb = (hi[axis] - a[axis]) / da;
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 >= t1 {
                return 0.0;
            }
        }
    }
    let len = (t1 - t0) * dir.norm();
    if len < GRAZE_EPS {
        0.0
    } else {
        len
    }
}
