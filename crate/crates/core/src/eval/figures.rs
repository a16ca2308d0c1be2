use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::networks::{Domain, Pipelines, Side};
use crate::tape::Tape;
use crate::tensor::Tensor;

use super::SweepMatrix;

/// 8-bit RGB raster, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RgbImage {
    fn new(width: usize, height: usize, fill: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![fill; width * height * 3],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let o = (y * self.width + x) * 3;
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let o = (y * self.width + x) * 3;
        self.pixels[o..o + 3].copy_from_slice(&rgb);
    }
}

const HEAT_CELL: usize = 24;

/// One flat cell per sweep entry, colour running from dark blue at the
/// lowest accuracy of the matrix to yellow at the highest.
pub fn heatmap(matrix: &SweepMatrix) -> RgbImage {
    let (rows, cols) = matrix.shape();
    let mut img = RgbImage::new(cols * HEAT_CELL, rows * HEAT_CELL, 0);
    let flat = matrix.accuracy.iter().flatten();
    let lo = flat.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = flat.copied().fold(f64::NEG_INFINITY, f64::max);
    for (r, row) in matrix.accuracy.iter().enumerate() {
        for (c, &a) in row.iter().enumerate() {
            let t = if hi > lo { (a - lo) / (hi - lo) } else { 0.5 };
            let rgb = [
                (30.0 + 225.0 * t) as u8,
                (30.0 + 200.0 * t) as u8,
                (120.0 - 100.0 * t) as u8,
            ];
            for y in r * HEAT_CELL..(r + 1) * HEAT_CELL {
                for x in c * HEAT_CELL..(c + 1) * HEAT_CELL {
                    img.put(x, y, rgb);
                }
            }
        }
    }
    img
}

const GRID_GAP: usize = 2;

fn to_byte(v: f64) -> u8 {
    libm::round((v.clamp(-1.0, 1.0) + 1.0) * 127.5) as u8
}

/// Rows are exemplars; columns are the original, its translation into the
/// target style, its reconstruction and a fixed target exemplar. Images
/// are `[h, w, c]` tensors with one or three channels.
pub fn translation_grid<P: Pipelines + ?Sized>(
    model: &P,
    params: &[Tensor],
    exemplars: &[(Domain, Tensor)],
    target_exemplar: &Tensor,
) -> Result<RgbImage> {
    let first = exemplars
        .first()
        .ok_or_else(|| Error::Empty("translation grid needs at least one exemplar".into()))?;
    let dims = first.1.shape().to_vec();
    if dims.len() != 3 || !matches!(dims[2], 1 | 3) || target_exemplar.shape() != dims.as_slice() {
        return Err(Error::Shape {
            expected: dims,
            actual: target_exemplar.shape().to_vec(),
        });
    }
    let (h, w) = (dims[0], dims[1]);
    let frozen = vec![false; params.len()];
    let cols = 4;
    let mut img = RgbImage::new(cols * (w + GRID_GAP) - GRID_GAP, exemplars.len() * (h + GRID_GAP) - GRID_GAP, 255);
    for (r, (domain, x)) in exemplars.iter().enumerate() {
        if x.shape() != dims.as_slice() {
            return Err(Error::Shape {
                expected: dims.clone(),
                actual: x.shape().to_vec(),
            });
        }
        let mut tape = Tape::new(params, &frozen);
        let mut shape = vec![1];
        shape.extend_from_slice(&dims);
        let xv = tape.input(x.clone().reshape(&shape)?);
        let z = model.encode(&mut tape, *domain, xv)?;
        let translated = model.decode(&mut tape, Side::Target, z)?;
        let recon = model.decode(&mut tape, domain.recon_side(), z)?;
        let panels = [
            x.data(),
            tape.value(translated).data(),
            tape.value(recon).data(),
            target_exemplar.data(),
        ];
        for (c, panel) in panels.iter().enumerate() {
            if panel.len() != h * w * dims[2] {
                return Err(Error::Shape {
                    expected: dims.clone(),
                    actual: vec![panel.len()],
                });
            }
            let (ox, oy) = (c * (w + GRID_GAP), r * (h + GRID_GAP));
            for y in 0..h {
                for xx in 0..w {
                    let o = (y * w + xx) * dims[2];
                    let rgb = if dims[2] == 3 {
                        [to_byte(panel[o]), to_byte(panel[o + 1]), to_byte(panel[o + 2])]
                    } else {
                        [to_byte(panel[o]); 3]
                    };
                    img.put(ox + xx, oy + y, rgb);
                }
            }
        }
    }
    Ok(img)
}
