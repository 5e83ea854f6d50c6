//! Run-length encoded binary masks in the COCO convention.
//!
//! Pixels are ordered column-major (pixel `(x, y)` is at `y + h·x`), runs
//! alternate starting with background, and the compact `counts` string uses
//! the 5-bit variable-length, delta-coded encoding of the COCO mask API.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rle {
    pub height: u32,
    pub width: u32,
    pub counts: Vec<u32>,
}

/// JSON form: `{"size": [h, w], "counts": "<compressed>"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleJson {
    pub size: [u32; 2],
    pub counts: String,
}

impl Rle {
    /// Encodes a column-major mask of `height × width` pixels.
    pub fn encode(mask: &[bool], height: u32, width: u32) -> Result<Self> {
        let n = height as usize * width as usize;
        if mask.len() != n {
            return Err(Error::shape(format!("mask has {} pixels, expected {n}", mask.len())));
        }
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for &px in mask {
            if px != current {
                counts.push(run);
                run = 0;
                current = px;
            }
            run += 1;
        }
        counts.push(run);
        Ok(Self { height, width, counts })
    }

    /// Column-major pixel mask.
    pub fn decode(&self) -> Vec<bool> {
        let n = self.pixel_count();
        let mut mask = vec![false; n];
        let mut idx = 0usize;
        for (i, &c) in self.counts.iter().enumerate() {
            let end = (idx + c as usize).min(n);
            if i % 2 == 1 {
                mask[idx..end].fill(true);
            }
            idx = end;
        }
        mask
    }

    pub fn pixel_count(&self) -> usize {
        self.height as usize * self.width as usize
    }

    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| c as u64).sum()
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        let target = x as u64 * self.height as u64 + y as u64;
        let mut start = 0u64;
        for (i, &c) in self.counts.iter().enumerate() {
            let end = start + c as u64;
            if target < end {
                return i % 2 == 1;
            }
            start = end;
        }
        false
    }

    /// Tight `(x_min, y_min, x_max, y_max)` in pixel-edge coordinates, or `None` when empty.
    pub fn bounds(&self) -> Option<(u32, u32, u32, u32)> {
        let h = self.height as u64;
        if h == 0 {
            return None;
        }
        let mut bounds: Option<(u64, u64, u64, u64)> = None;
        let mut start = 0u64;
        for (i, &c) in self.counts.iter().enumerate() {
            let c = c as u64;
            if i % 2 == 1 && c > 0 {
                let last = start + c - 1;
                let (x0, x1) = (start / h, last / h);
                let (y0, y1) = if x0 == x1 { (start % h, last % h) } else { (0, h - 1) };
                bounds = Some(match bounds {
                    None => (x0, y0, x1, y1),
                    Some((a, b, cx, d)) => (a.min(x0), b.min(y0), cx.max(x1), d.max(y1)),
                });
            }
            start += c;
        }
        bounds.map(|(x0, y0, x1, y1)| (x0 as u32, y0 as u32, x1 as u32 + 1, y1 as u32 + 1))
    }

    /// Pixel-count intersection with a mask of the same size.
    pub fn intersection_area(&self, other: &Rle) -> Result<u64> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::shape(format!(
                "mask sizes {}x{} and {}x{} differ",
                self.height, self.width, other.height, other.width
            )));
        }
        let a = self.decode();
        let b = other.decode();
        Ok(a.iter().zip(&b).filter(|(x, y)| **x && **y).count() as u64)
    }

    /// Nearest-neighbour resample onto a row-major `map_w × map_h` grid, sampling
    /// each cell at its centre.
    pub fn to_grid(&self, map_w: usize, map_h: usize) -> Vec<bool> {
        let mask = self.decode();
        let (h, w) = (self.height as usize, self.width as usize);
        let mut grid = vec![false; map_w * map_h];
        if h == 0 || w == 0 {
            return grid;
        }
        for gy in 0..map_h {
            let y = (((gy as f64 + 0.5) * h as f64 / map_h as f64) as usize).min(h - 1);
            for gx in 0..map_w {
                let x = (((gx as f64 + 0.5) * w as f64 / map_w as f64) as usize).min(w - 1);
                grid[gy * map_w + gx] = mask[y + h * x];
            }
        }
        grid
    }

    /// Compact COCO counts string.
    pub fn to_counts_string(&self) -> String {
        let mut s = String::new();
        for (i, &c) in self.counts.iter().enumerate() {
            let mut x = c as i64;
            if i > 2 {
                x -= self.counts[i - 2] as i64;
            }
            loop {
                let mut byte = (x & 0x1f) as u8;
                x >>= 5;
                let more = if byte & 0x10 != 0 { x != -1 } else { x != 0 };
                if more {
                    byte |= 0x20;
                }
                s.push((byte + 48) as char);
                if !more {
                    break;
                }
            }
        }
        s
    }

    pub fn from_counts_string(s: &str, height: u32, width: u32) -> Result<Self> {
        let bytes = s.as_bytes();
        let mut counts: Vec<u32> = Vec::new();
        let mut i = 0;
        while i < bytes.len() {
            let mut x: i64 = 0;
            let mut shift = 0;
            loop {
                let b = *bytes
                    .get(i)
                    .ok_or_else(|| Error::format("RLE counts", "unterminated value"))?;
                if !(48..48 + 64).contains(&b) || shift > 55 {
                    return Err(Error::format("RLE counts", format!("bad byte {b:#x}")));
                }
                let c = (b - 48) as i64;
                i += 1;
                x |= (c & 0x1f) << shift;
                shift += 5;
                if c & 0x20 == 0 {
                    if c & 0x10 != 0 {
                        x |= -1i64 << shift;
                    }
                    break;
                }
            }
            if counts.len() > 2 {
                x += counts[counts.len() - 2] as i64;
            }
            let c = u32::try_from(x)
                .map_err(|_| Error::format("RLE counts", format!("run length {x} out of range")))?;
            counts.push(c);
        }
        let rle = Self { height, width, counts };
        let total: u64 = rle.counts.iter().map(|&c| c as u64).sum();
        if total != rle.pixel_count() as u64 {
            return Err(Error::format(
                "RLE counts",
                format!("runs cover {total} pixels, mask has {}", rle.pixel_count()),
            ));
        }
        Ok(rle)
    }

    pub fn to_json(&self) -> RleJson {
        RleJson { size: [self.height, self.width], counts: self.to_counts_string() }
    }

    pub fn from_json(json: &RleJson) -> Result<Self> {
        Self::from_counts_string(&json.counts, json.size[0], json.size[1])
    }
}
