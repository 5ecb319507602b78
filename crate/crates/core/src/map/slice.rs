//! Horizontal slice export: a PGM class raster plus a CSV of raw accumulated
//! log-odds values.

use std::io::Write;

use super::{MapError, OccupancySubmap};

/// One horizontal slice through the occupancy field at a fixed height.
///
/// Cells are finest-resolution voxels; rows are stored north-up (row 0 holds
/// the largest y). `values` is `None` where the voxel is unobserved.
pub struct SliceGrid {
    pub x0: f64,
    pub y0: f64,
    pub resolution: f64,
    pub height: f64,
    pub cells_per_edge: usize,
    /// Row-major, north-up.
    pub values: Vec<Option<f64>>,
}

/// Gray levels of the three classes in the PGM raster.
pub const PGM_OCCUPIED: u8 = 0;
pub const PGM_UNKNOWN: u8 = 128;
pub const PGM_FREE: u8 = 255;

impl SliceGrid {
    pub fn class_of(value: Option<f64>) -> u8 {
        match value {
            Some(l) if l > 0.0 => PGM_OCCUPIED,
            Some(_) => PGM_FREE,
            None => PGM_UNKNOWN,
        }
    }

    /// Plain-text PGM (P2), classes mapped occupied/unknown/free to 0/128/255.
    pub fn write_pgm<W: Write>(&self, w: &mut W) -> Result<(), MapError> {
        let n = self.cells_per_edge;
        writeln!(w, "P2")?;
        writeln!(w, "# occupancy slice at height {}", self.height)?;
        writeln!(w, "{n} {n}")?;
        writeln!(w, "255")?;
        for row in 0..n {
            let line: Vec<String> = (0..n)
                .map(|col| Self::class_of(self.values[row * n + col]).to_string())
                .collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    /// Raw accumulated log-odds, row-major north-up. The header line carries
    /// `x0,y0,resolution,height`; unknown cells are written as `nan`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<(), MapError> {
        writeln!(w, "x0,y0,resolution,height")?;
        writeln!(w, "{},{},{},{}", self.x0, self.y0, self.resolution, self.height)?;
        let n = self.cells_per_edge;
        for row in 0..n {
            let line: Vec<String> = (0..n)
                .map(|col| match self.values[row * n + col] {
                    Some(l) => format!("{l}"),
                    None => "nan".to_string(),
                })
                .collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }
}

impl OccupancySubmap {
    /// Extracts the horizontal slice whose voxel layer contains `height`.
    pub fn export_slice(&self, height: f64) -> Result<SliceGrid, MapError> {
        let min = self.min_corner();
        let n = self.voxels_per_edge() as usize;
        let k = ((height - min.z) / self.resolution()).floor();
        if k < 0.0 || k >= n as f64 {
            return Err(MapError::HeightOutOfBounds { height });
        }
        let k = k as u32;
        let mut values = vec![None; n * n];
        for row in 0..n {
            // north-up: row 0 is the highest y index
            let y = (n - 1 - row) as u32;
            for col in 0..n {
                let data = self.voxel_data([col as u32, y, k]);
                values[row * n + col] = data.filter(|d| d.observed()).map(|d| d.accumulated());
            }
        }
        Ok(SliceGrid {
            x0: min.x,
            y0: min.y,
            resolution: self.resolution(),
            height,
            cells_per_edge: n,
            values,
        })
    }
}
