//! Row-segment packing of a matrix into ciphertext slots.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row `r` of the matrix occupies the slot segment `[r'·stride, (r'+1)·stride)`
/// of tile `r / rows_per_tile`, where `r' = r mod rows_per_tile`; column `c`
/// sits at offset `c` inside the segment. Every other slot holds zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileLayout {
    pub rows: usize,
    pub cols: usize,
    pub stride: usize,
    pub slots: usize,
}

impl TileLayout {
    pub fn new(rows: usize, cols: usize, stride: usize, slots: usize) -> Result<Self> {
        let layout = Self {
            rows,
            cols,
            stride,
            slots,
        };
        layout.validate()?;
        Ok(layout)
    }

    /// Smallest power-of-two stride that holds every dimension in `dims`.
    pub fn stride_for(dims: &[usize]) -> usize {
        dims.iter().copied().max().unwrap_or(1).max(1).next_power_of_two()
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Empty(format!("{}x{} matrix", self.rows, self.cols)));
        }
        if !self.stride.is_power_of_two() || !self.slots.is_power_of_two() {
            return Err(Error::Layout(format!(
                "stride {} and slot count {} must be powers of two",
                self.stride, self.slots
            )));
        }
        if self.cols > self.stride {
            return Err(Error::Layout(format!(
                "{} columns do not fit stride {}",
                self.cols, self.stride
            )));
        }
        if self.stride > self.slots {
            return Err(Error::Capacity {
                len: self.stride,
                slots: self.slots,
            });
        }
        Ok(())
    }

    pub fn rows_per_tile(&self) -> usize {
        self.slots / self.stride
    }

    pub fn tiles(&self) -> usize {
        self.rows.div_ceil(self.rows_per_tile())
    }

    /// Global row indices stored in `tile`.
    pub fn tile_rows(&self, tile: usize) -> std::ops::Range<usize> {
        let g = self.rows_per_tile();
        let start = tile * g;
        start..(start + g).min(self.rows)
    }

    /// `(tile, slot)` of entry `(r, c)`.
    pub fn position(&self, r: usize, c: usize) -> (usize, usize) {
        let g = self.rows_per_tile();
        (r / g, (r % g) * self.stride + c)
    }

    /// Same packing with different logical dimensions.
    pub fn with_shape(&self, rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, self.stride, self.slots)
    }

    /// Slot vector for `tile` where entry `(r', c)` of the tile takes
    /// `f(r', c)` for local row `r'` and column `c < cols`, zero elsewhere.
    pub fn tile_vector(&self, tile: usize, f: impl Fn(usize, usize) -> f64) -> Vec<f64> {
        let rows = self.tile_rows(tile).len();
        let mut v = vec![0.0; rows.saturating_sub(1) * self.stride + self.cols];
        for r in 0..rows {
            for c in 0..self.cols {
                v[r * self.stride + c] = f(r, c);
            }
        }
        v
    }
}
