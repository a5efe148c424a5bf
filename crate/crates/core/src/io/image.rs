//! Binary PGM (P5) tile grids.
//!
//! Planes are `[W, H]` (or any tensor whose first two axes are W and H) with
//! values in `[0, 1]`. Tiles fill `ceil(sqrt(count))` columns row by row,
//! separated and surrounded by 1-pixel black lines. Pixel `(i, j)` of tile
//! `(r, c)` lands at image column `1 + c*(W+1) + i`, row `1 + r*(H+1) + j`.
//! Values quantize as `floor(v*255 + 0.5)` clamped to `0..=255`.

use std::path::Path;

use super::write_file;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn quantize(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Grid geometry: `(columns, rows, image width, image height)`.
pub fn grid_layout(count: usize, w: usize, h: usize) -> (usize, usize, usize, usize) {
    let mut cols = (count as f64).sqrt() as usize;
    while cols * cols < count {
        cols += 1;
    }
    let rows = count.div_ceil(cols);
    (cols, rows, 1 + cols * (w + 1), 1 + rows * (h + 1))
}

pub fn encode_pgm_grid(planes: &[Tensor]) -> Result<Vec<u8>> {
    let first = planes
        .first()
        .ok_or_else(|| Error::InvalidInput("no planes to tile".into()))?;
    if first.rank() < 2 {
        return Err(Error::Shape(format!("plane must have rank >= 2, got {:?}", first.shape())));
    }
    let (w, h) = (first.shape()[0], first.shape()[1]);
    if let Some(bad) = planes.iter().position(|p| p.shape() != first.shape()) {
        return Err(Error::Shape(format!(
            "plane {bad} has shape {:?}, expected {:?}",
            planes[bad].shape(),
            first.shape()
        )));
    }
    let stride = first.len() / (w * h);
    let (cols, _, img_w, img_h) = grid_layout(planes.len(), w, h);
    let mut pixels = vec![0u8; img_w * img_h];
    for (t, plane) in planes.iter().enumerate() {
        let (r, c) = (t / cols, t % cols);
        for i in 0..w {
            for j in 0..h {
                let row = 1 + r * (h + 1) + j;
                let col = 1 + c * (w + 1) + i;
                pixels[row * img_w + col] = quantize(plane.data()[(i * h + j) * stride]);
            }
        }
    }
    let mut out = format!("P5\n{img_w} {img_h}\n255\n").into_bytes();
    out.extend_from_slice(&pixels);
    Ok(out)
}

pub fn write_image_grid(planes: &[Tensor], path: &Path) -> Result<()> {
    write_file(path, &encode_pgm_grid(planes)?)
}
