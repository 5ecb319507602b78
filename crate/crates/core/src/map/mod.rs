//! Octree-backed multi-resolution occupancy field.
//!
//! Measurements are fused per ray in log-odds space (clamped-weight additive
//! updates), queried through trilinear interpolation of the accumulated
//! log-odds `L = L̄·w`, with gradients by central differences on the
//! interpolated field.

mod integrate;
mod io;
mod octree;
mod slice;

use std::fmt;

use nalgebra::Vector3;

use crate::geometry::Pose;

pub use io::read_submap;
pub use octree::AuditReport;
pub use slice::SliceGrid;

/// Inverse sensor model configuration plus the measurement noise used by the
/// LiDAR residual.
///
/// The surface thickness and uncertainty grow linearly with range and are
/// clamped: `τ(z) = clamp(tau_scale·z, tau_min, tau_max)`,
/// `σ(z) = clamp(sigma_scale·z, sigma_min, sigma_max)`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SensorModelParams {
    /// Saturation minimum log-odds, reached at `3σ` in front of the surface. Negative.
    pub l_min: f64,
    pub tau_scale: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    pub sigma_scale: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Weight clamp of the Bayesian update.
    pub w_max: u32,
    /// Sensor range noise used in the residual denominator, meters.
    pub sigma_z: f64,
}

impl Default for SensorModelParams {
    fn default() -> Self {
        SensorModelParams {
            l_min: -5.0,
            tau_scale: 0.05,
            tau_min: 0.06,
            tau_max: 1.0,
            sigma_scale: 0.05,
            sigma_min: 0.03,
            sigma_max: 0.5,
            w_max: 20,
            sigma_z: 0.02,
        }
    }
}

impl SensorModelParams {
    pub fn validate(&self) -> Result<(), MapError> {
        if !(self.l_min < 0.0) {
            return Err(MapError::InvalidParams("l_min must be negative"));
        }
        if self.w_max < 1 {
            return Err(MapError::InvalidParams("w_max must be at least 1"));
        }
        let clamps = [
            (self.tau_min, self.tau_max),
            (self.sigma_min, self.sigma_max),
        ];
        for (lo, hi) in clamps {
            if !(lo > 0.0 && hi >= lo) {
                return Err(MapError::InvalidParams(
                    "clamp bounds must be positive with min <= max",
                ));
            }
        }
        if !(self.tau_scale > 0.0 && self.sigma_scale > 0.0) {
            return Err(MapError::InvalidParams("scales must be positive"));
        }
        if self.sigma_z < 0.0 {
            return Err(MapError::InvalidParams("sigma_z must be non-negative"));
        }
        Ok(())
    }

    /// Range-dependent surface uncertainty σ(z), meters.
    pub fn sigma(&self, z: f64) -> f64 {
        (self.sigma_scale * z).clamp(self.sigma_min, self.sigma_max)
    }

    /// Range-dependent surface thickness τ(z), meters.
    pub fn tau(&self, z: f64) -> f64 {
        (self.tau_scale * z).clamp(self.tau_min, self.tau_max)
    }
}

/// Piece-wise linear log-odds along a ray as a function of
/// `d_r = (distance of the query point along the ray) − z_r`.
///
/// Returns `l_min` at and before `−3σ(z_r)`, crosses zero at the measured
/// surface with slope `−l_min/(3σ)`, and plateaus at `d_r = τ(z_r)/2`.
/// Callers stop integrating past the plateau.
pub fn inverse_sensor_model(
    d_r: f64,
    z_r: f64,
    params: &SensorModelParams,
) -> Result<f64, MapError> {
    if !(z_r > 0.0) {
        return Err(MapError::InvalidMeasurement { z_r });
    }
    let sigma = params.sigma(z_r);
    let tau = params.tau(z_r);
    let l = if d_r <= -3.0 * sigma {
        params.l_min
    } else {
        -params.l_min * d_r / (3.0 * sigma)
    };
    Ok(l.min(-params.l_min * tau / (6.0 * sigma)))
}

/// Per-voxel payload: running mean log-odds and clamped observation count.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VoxelData {
    pub mean_log_odds: f64,
    pub weight: u32,
}

impl VoxelData {
    pub(crate) fn with_first(l: f64) -> Self {
        VoxelData {
            mean_log_odds: l,
            weight: 1,
        }
    }

    /// Accumulated log-odds `L = L̄·w`.
    pub fn accumulated(&self) -> f64 {
        self.mean_log_odds * self.weight as f64
    }

    pub fn observed(&self) -> bool {
        self.weight > 0
    }

    /// Clamped-weight additive Bayesian update:
    /// `L̄ ← (L̄·w + l)/(w + 1)`, `w ← min(w + 1, w_max)`.
    pub(crate) fn update(&mut self, l: f64, w_max: u32) {
        let w = self.weight as f64;
        self.mean_log_odds = (self.mean_log_odds * w + l) / (w + 1.0);
        self.weight = (self.weight + 1).min(w_max);
    }
}

/// Counters reported by batch scan integration.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize)]
pub struct IntegrateStats {
    pub rays_integrated: usize,
    pub rays_clipped: usize,
    pub rays_rejected: usize,
    pub voxel_updates: usize,
}

/// Errors from map construction, integration and export.
#[derive(Debug)]
pub enum MapError {
    InvalidParams(&'static str),
    /// `dimension / resolution` is not a power of two.
    InvalidGeometry { resolution: f64, dimension: f64 },
    InvalidMeasurement { z_r: f64 },
    ZeroLengthRay,
    HeightOutOfBounds { height: f64 },
    Io(std::io::Error),
    Format(String),
}

impl fmt::Display for MapError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MapError::InvalidParams(msg) => write!(f, "invalid sensor model params: {msg}"),
            MapError::InvalidGeometry {
                resolution,
                dimension,
            } => write!(
                f,
                "dimension {dimension} / resolution {resolution} must be a power of two"
            ),
            MapError::InvalidMeasurement { z_r } => {
                write!(f, "invalid measurement: range {z_r} must be positive")
            }
            MapError::ZeroLengthRay => write!(f, "zero-length ray rejected"),
            MapError::HeightOutOfBounds { height } => {
                write!(f, "slice height {height} outside map bounds")
            }
            MapError::Io(e) => write!(f, "i/o error: {e}"),
            MapError::Format(msg) => write!(f, "format error: {msg}"),
        }
    }
}

impl std::error::Error for MapError {}

impl From<std::io::Error> for MapError {
    fn from(e: std::io::Error) -> Self {
        MapError::Io(e)
    }
}

/// A fixed-depth octree occupancy submap anchored at one keyframe state.
///
/// The map frame `M` coincides with the anchor keyframe's IMU frame, with the
/// cube centered on the anchor position, i.e. `[-dimension/2, dimension/2]³`
/// in `M` coordinates.
pub struct OccupancySubmap {
    anchor_state_id: usize,
    resolution: f64,
    dimension: f64,
    depth: u32,
    params: SensorModelParams,
    octree: octree::Octree,
}

impl OccupancySubmap {
    pub fn new(
        anchor_state_id: usize,
        resolution: f64,
        dimension: f64,
        params: SensorModelParams,
    ) -> Result<Self, MapError> {
        params.validate()?;
        if !(resolution > 0.0 && dimension > resolution) {
            return Err(MapError::InvalidGeometry {
                resolution,
                dimension,
            });
        }
        let ratio = dimension / resolution;
        let depth = ratio.log2().round() as u32;
        if depth < 1 || depth > 21 || (ratio - (1u64 << depth) as f64).abs() > 1e-6 * ratio {
            return Err(MapError::InvalidGeometry {
                resolution,
                dimension,
            });
        }
        Ok(OccupancySubmap {
            anchor_state_id,
            resolution,
            // recomputed so voxel arithmetic is exact in the stored fields
            dimension: resolution * (1u64 << depth) as f64,
            depth,
            params,
            octree: octree::Octree::new(depth),
        })
    }

    pub fn anchor_state_id(&self) -> usize {
        self.anchor_state_id
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn dimension(&self) -> f64 {
        self.dimension
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn params(&self) -> &SensorModelParams {
        &self.params
    }

    pub fn voxels_per_edge(&self) -> u64 {
        1u64 << self.depth
    }

    /// Cube bounds in map-frame coordinates.
    pub fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let h = 0.5 * self.dimension;
        (Vector3::new(-h, -h, -h), Vector3::new(h, h, h))
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        let h = 0.5 * self.dimension;
        p.x.abs() <= h && p.y.abs() <= h && p.z.abs() <= h
    }

    pub(crate) fn min_corner(&self) -> Vector3<f64> {
        self.bounds().0
    }

    pub fn voxel_center(&self, v: [u32; 3]) -> Vector3<f64> {
        let min = self.min_corner();
        Vector3::new(
            min.x + (v[0] as f64 + 0.5) * self.resolution,
            min.y + (v[1] as f64 + 0.5) * self.resolution,
            min.z + (v[2] as f64 + 0.5) * self.resolution,
        )
    }

    /// Index of the voxel containing `p`, or `None` if out of bounds.
    pub fn voxel_index(&self, p: &Vector3<f64>) -> Option<[u32; 3]> {
        let min = self.min_corner();
        let n = self.voxels_per_edge() as i64;
        let mut idx = [0u32; 3];
        for axis in 0..3 {
            let g = ((p[axis] - min[axis]) / self.resolution).floor() as i64;
            if g < 0 || g >= n {
                return None;
            }
            idx[axis] = g as u32;
        }
        Some(idx)
    }

    /// Direct voxel payload lookup at finest coordinates (resolves pruned
    /// uniform blocks).
    pub fn voxel_data(&self, v: [u32; 3]) -> Option<VoxelData> {
        self.octree.get(v)
    }

    /// Whether the voxel containing `p` has been observed.
    pub fn is_observed_at(&self, p: &Vector3<f64>) -> bool {
        self.voxel_index(p)
            .and_then(|v| self.octree.get(v))
            .is_some_and(|d| d.observed())
    }

    /// Trilinear interpolation of the accumulated log-odds `L = L̄·w` over the
    /// 8 surrounding voxel centers. `None` if any corner is unobserved or out
    /// of bounds.
    pub fn query_accumulated(&self, p: &Vector3<f64>) -> Option<f64> {
        let min = self.min_corner();
        let n = self.voxels_per_edge() as i64;
        let mut base = [0i64; 3];
        let mut frac = [0f64; 3];
        for axis in 0..3 {
            let g = (p[axis] - min[axis]) / self.resolution - 0.5;
            let b = g.floor();
            base[axis] = b as i64;
            frac[axis] = g - b;
            if base[axis] < 0 || base[axis] + 1 >= n {
                return None;
            }
        }
        let mut value = 0.0;
        for corner in 0..8u32 {
            let dx = (corner & 1) as i64;
            let dy = ((corner >> 1) & 1) as i64;
            let dz = ((corner >> 2) & 1) as i64;
            let v = [
                (base[0] + dx) as u32,
                (base[1] + dy) as u32,
                (base[2] + dz) as u32,
            ];
            let data = self.octree.get(v)?;
            if !data.observed() {
                return None;
            }
            let wx = if dx == 1 { frac[0] } else { 1.0 - frac[0] };
            let wy = if dy == 1 { frac[1] } else { 1.0 - frac[1] };
            let wz = if dz == 1 { frac[2] } else { 1.0 - frac[2] };
            value += wx * wy * wz * data.accumulated();
        }
        Some(value)
    }

    /// Central differences of `query_accumulated` with step = one voxel edge.
    pub fn query_gradient(&self, p: &Vector3<f64>) -> Option<Vector3<f64>> {
        let h = self.resolution;
        let mut g = Vector3::zeros();
        for axis in 0..3 {
            let mut hi = *p;
            let mut lo = *p;
            hi[axis] += h;
            lo[axis] -= h;
            g[axis] = (self.query_accumulated(&hi)? - self.query_accumulated(&lo)?) / (2.0 * h);
        }
        Some(g)
    }

    /// Integrates one ray measurement. Returns the number of voxel updates.
    pub fn integrate_ray(
        &mut self,
        origin: &Vector3<f64>,
        endpoint: &Vector3<f64>,
    ) -> Result<usize, MapError> {
        self.integrate_ray_inner(origin, endpoint).map(|(n, _)| n)
    }

    /// Integrates a deskewed scan given the sensor pose in the map frame.
    /// Per-ray failures are counted, never abort the batch.
    pub fn integrate_scan(&mut self, t_ms: &Pose, points: &[Vector3<f64>]) -> IntegrateStats {
        let origin = t_ms.transform_point(&Vector3::zeros());
        let mut stats = IntegrateStats::default();
        for p in points {
            let endpoint = t_ms.transform_point(p);
            match self.integrate_ray_inner(&origin, &endpoint) {
                Ok((updates, clipped)) => {
                    stats.voxel_updates += updates;
                    if clipped {
                        stats.rays_clipped += 1;
                    } else {
                        stats.rays_integrated += 1;
                    }
                }
                Err(_) => stats.rays_rejected += 1,
            }
        }
        stats
    }

    /// Recomputes up-propagated summaries, prunes saturated-identical blocks,
    /// and reports inconsistencies found.
    pub fn audit_and_propagate(&mut self) -> AuditReport {
        self.octree.audit_and_propagate(self.params.w_max)
    }

    /// Overwrites voxels whose centers fall inside `[min, max]` from a
    /// synthetic field; the closure returns `(mean_log_odds, weight)` or
    /// `None` to leave a voxel unobserved. Intended for tests and benchmarks.
    pub fn fill_region_from_fn(
        &mut self,
        min: &Vector3<f64>,
        max: &Vector3<f64>,
        f: impl Fn(&Vector3<f64>) -> Option<(f64, u32)>,
    ) {
        let n = self.voxels_per_edge() as i64;
        let map_min = self.min_corner();
        let mut lo = [0i64; 3];
        let mut hi = [0i64; 3];
        for axis in 0..3 {
            lo[axis] = (((min[axis] - map_min[axis]) / self.resolution).floor() as i64).max(0);
            hi[axis] = (((max[axis] - map_min[axis]) / self.resolution).ceil() as i64).min(n - 1);
        }
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for z in lo[2]..=hi[2] {
                    let v = [x as u32, y as u32, z as u32];
                    let c = self.voxel_center(v);
                    if let Some((mean, weight)) = f(&c) {
                        if weight > 0 {
                            self.octree.set_voxel(
                                v,
                                VoxelData {
                                    mean_log_odds: mean,
                                    weight: weight.min(self.params.w_max),
                                },
                            );
                        }
                    }
                }
            }
        }
    }

    /// Centers of observed finest voxels with accumulated log-odds above
    /// `min_l` (occupied voxels for `min_l = 0`).
    pub fn occupied_voxel_centers(&self, min_l: f64) -> Vec<Vector3<f64>> {
        let mut out = Vec::new();
        let depth = self.depth;
        self.octree.visit_leaves(|level, origin, data| {
            if data.observed() && data.accumulated() > min_l {
                let edge = 1u32 << (depth - level);
                for dx in 0..edge {
                    for dy in 0..edge {
                        for dz in 0..edge {
                            out.push(self.voxel_center([
                                origin[0] + dx,
                                origin[1] + dy,
                                origin[2] + dz,
                            ]));
                        }
                    }
                }
            }
        });
        out
    }

    /// Visits every stored leaf as `(level, min_voxel_coords, data)`.
    pub fn visit_leaves<F: FnMut(u32, [u32; 3], &VoxelData)>(&self, f: F) {
        self.octree.visit_leaves(f)
    }

    pub fn node_count(&self) -> usize {
        self.octree.node_count()
    }

    pub fn observed_voxel_count(&self) -> u64 {
        self.octree.observed_voxel_count()
    }

    /// FNV-1a hash over the leaf payload stream; used to assert that frozen
    /// submaps stay untouched.
    pub fn payload_checksum(&self) -> u64 {
        let mut hash: u64 = 0xcbf29ce484222325;
        let mut mix = |bytes: &[u8]| {
            for &b in bytes {
                hash ^= b as u64;
                hash = hash.wrapping_mul(0x100000001b3);
            }
        };
        self.octree.visit_leaves(|level, origin, data| {
            mix(&level.to_le_bytes());
            mix(&origin[0].to_le_bytes());
            mix(&origin[1].to_le_bytes());
            mix(&origin[2].to_le_bytes());
            mix(&data.mean_log_odds.to_bits().to_le_bytes());
            mix(&data.weight.to_le_bytes());
        });
        hash
    }
}

#[cfg(test)]
mod tests;
