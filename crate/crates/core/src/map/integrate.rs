//! Per-ray integration: exact voxel stepping at the finest resolution within
//! the surface band, block updates (4-voxel edge) for far free space.

use nalgebra::Vector3;

use super::{inverse_sensor_model, MapError, OccupancySubmap};

/// Levels above the finest used for far free-space block updates (2 levels =
/// 4-voxel edge).
const FREE_SPACE_COARSE_LEVELS: u32 = 2;

impl OccupancySubmap {
    /// Returns `(voxel updates, clipped)`.
    pub(super) fn integrate_ray_inner(
        &mut self,
        origin: &Vector3<f64>,
        endpoint: &Vector3<f64>,
    ) -> Result<(usize, bool), MapError> {
        let dir = endpoint - origin;
        let z_r = dir.norm();
        if z_r <= 0.0 {
            return Err(MapError::ZeroLengthRay);
        }
        let dir = dir / z_r;
        let sigma = self.params.sigma(z_r);
        let tau = self.params.tau(z_r);
        let s_total = z_r + 0.5 * tau;
        let band_start = (z_r - 3.0 * sigma).max(0.0);

        let (s0, s1) = match clip_segment(origin, &dir, 0.0, s_total, &self.min_corner(), self.dimension) {
            Some(seg) => seg,
            None => return Ok((0, true)),
        };
        let clipped = s1 < s_total - 1e-12 || s0 > 1e-12;

        let mut updates = 0usize;
        let w_max = self.params.w_max;
        let l_free = self.params.l_min;

        // Far free space: one block update per coarse cell whose every point
        // projects in front of the band.
        let mut fine_start = s0;
        if band_start > s0 {
            let coarse_levels = FREE_SPACE_COARSE_LEVELS.min(self.depth - 1);
            let coarse_res = self.resolution * (1u64 << coarse_levels) as f64;
            let n_coarse = (self.voxels_per_edge() >> coarse_levels) as i64;
            let min = self.min_corner();
            // most forward corner of a cell relative to its min corner
            let forward = coarse_res
                * (dir.x.max(0.0) + dir.y.max(0.0) + dir.z.max(0.0));
            let level = self.depth - coarse_levels;
            let mut stopped_at = s1;
            walk_grid(&min, coarse_res, n_coarse, origin, &dir, s0, s1, |cell, s_entry| {
                let cell_min = Vector3::new(
                    min.x + cell[0] as f64 * coarse_res,
                    min.y + cell[1] as f64 * coarse_res,
                    min.z + cell[2] as f64 * coarse_res,
                );
                let max_proj = (cell_min - origin).dot(&dir) + forward;
                if max_proj >= band_start {
                    stopped_at = s_entry;
                    return false;
                }
                let v = [
                    (cell[0] as u32) << coarse_levels,
                    (cell[1] as u32) << coarse_levels,
                    (cell[2] as u32) << coarse_levels,
                ];
                self.octree.update_region(v, level, l_free, w_max);
                updates += 1;
                true
            });
            fine_start = stopped_at;
        }

        // Surface band: finest-resolution stepping with the full piece-wise
        // linear model evaluated at each voxel center's along-ray offset.
        if fine_start < s1 {
            let min = self.min_corner();
            let n = self.voxels_per_edge() as i64;
            let res = self.resolution;
            let half_tau = 0.5 * tau;
            let params = self.params;
            let octree = &mut self.octree;
            walk_grid(&min, res, n, origin, &dir, fine_start, s1, |v, _s| {
                let center = Vector3::new(
                    min.x + (v[0] as f64 + 0.5) * res,
                    min.y + (v[1] as f64 + 0.5) * res,
                    min.z + (v[2] as f64 + 0.5) * res,
                );
                let d_r = (center - origin).dot(&dir) - z_r;
                if d_r > half_tau {
                    return false;
                }
                let l = inverse_sensor_model(d_r, z_r, &params)
                    .expect("positive range checked above");
                octree.update_voxel([v[0] as u32, v[1] as u32, v[2] as u32], l, w_max);
                updates += 1;
                true
            });
        }

        Ok((updates, clipped))
    }
}

/// Clips the parameter interval `[s_min, s_max]` of the ray `o + s·d` against
/// the map cube. Returns `None` if the intersection is empty.
fn clip_segment(
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    s_min: f64,
    s_max: f64,
    min: &Vector3<f64>,
    dimension: f64,
) -> Option<(f64, f64)> {
    let mut lo = s_min;
    let mut hi = s_max;
    for axis in 0..3 {
        let inv = 1.0 / dir[axis];
        if inv.is_infinite() {
            if origin[axis] < min[axis] || origin[axis] > min[axis] + dimension {
                return None;
            }
            continue;
        }
        let t0 = (min[axis] - origin[axis]) * inv;
        let t1 = (min[axis] + dimension - origin[axis]) * inv;
        let (t0, t1) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
        lo = lo.max(t0);
        hi = hi.min(t1);
        if lo >= hi {
            return None;
        }
    }
    Some((lo, hi))
}

/// Amanatides-Woo style traversal of a uniform grid along the segment
/// `[s0, s1]` of the ray `o + s·d`. The visitor receives each cell index and
/// the ray parameter at which the cell is entered; returning `false` stops
/// the walk.
fn walk_grid(
    grid_min: &Vector3<f64>,
    cell_size: f64,
    cells_per_edge: i64,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    s0: f64,
    s1: f64,
    mut visit: impl FnMut([i64; 3], f64) -> bool,
) {
    // nudge inside so the start cell is well defined on boundaries
    let start = origin + dir * (s0 + 1e-12);
    let mut cell = [0i64; 3];
    let mut step = [0i64; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for axis in 0..3 {
        let g = ((start[axis] - grid_min[axis]) / cell_size).floor() as i64;
        cell[axis] = g.clamp(0, cells_per_edge - 1);
        if dir[axis] > 0.0 {
            step[axis] = 1;
            let boundary = grid_min[axis] + (cell[axis] + 1) as f64 * cell_size;
            t_max[axis] = (boundary - origin[axis]) / dir[axis];
            t_delta[axis] = cell_size / dir[axis];
        } else if dir[axis] < 0.0 {
            step[axis] = -1;
            let boundary = grid_min[axis] + cell[axis] as f64 * cell_size;
            t_max[axis] = (boundary - origin[axis]) / dir[axis];
            t_delta[axis] = cell_size / -dir[axis];
        }
    }
    let mut s = s0;
    // generous step bound guards against pathological float cycling
    let max_steps = (cells_per_edge as usize) * 6 + 16;
    for _ in 0..max_steps {
        if !visit(cell, s) {
            return;
        }
        let axis = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
            0
        } else if t_max[1] <= t_max[2] {
            1
        } else {
            2
        };
        s = t_max[axis];
        if s > s1 {
            return;
        }
        cell[axis] += step[axis];
        if cell[axis] < 0 || cell[axis] >= cells_per_edge {
            return;
        }
        t_max[axis] += t_delta[axis];
    }
}
