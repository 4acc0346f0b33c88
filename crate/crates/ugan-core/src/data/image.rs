//! Sample-grid export as binary PGM (P5).
//!
//! Tiles samples row-major with 2-pixel black separators between tiles (no
//! outer border): a grid of r x c tiles of h x w pixels measures
//! (r*h + 2*(r-1)) x (c*w + 2*(c-1)).

use super::idx::atomic_write;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;
use std::path::Path;

const SEPARATOR: usize = 2;

/// Map a tanh-range value to a pixel level: (v + 1) * 127.5, rounded and
/// clamped to [0, 255].
fn to_level<T: Real>(v: T) -> u8 {
    ((v.as_f64() + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Render samples [n, 1, h, w] in (-1, 1) into PGM bytes.
pub fn image_grid_pgm<T: Real>(samples: &Tensor<T>, columns: usize) -> Result<Vec<u8>> {
    let (n, h, w) = match samples.shape() {
        [n, 1, h, w] => (*n, *h, *w),
        other => {
            return Err(Error::Dimension {
                op: "image_grid",
                detail: format!("expected [n, 1, h, w] samples, got {other:?}"),
            })
        }
    };
    if n == 0 || columns == 0 {
        return Err(Error::Contract(
            "image grid needs at least one sample and one column".into(),
        ));
    }
    let cols = columns.min(n);
    let rows = n.div_ceil(cols);
    let out_w = cols * w + SEPARATOR * (cols - 1);
    let out_h = rows * h + SEPARATOR * (rows - 1);
    let mut canvas = vec![0u8; out_w * out_h];
    for i in 0..n {
        let (tile_r, tile_c) = (i / cols, i % cols);
        let base_y = tile_r * (h + SEPARATOR);
        let base_x = tile_c * (w + SEPARATOR);
        let item = &samples.data()[i * h * w..(i + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                canvas[(base_y + y) * out_w + base_x + x] = to_level(item[y * w + x]);
            }
        }
    }
    let mut bytes = format!("P5\n{out_w} {out_h}\n255\n").into_bytes();
    bytes.extend_from_slice(&canvas);
    Ok(bytes)
}

pub fn export_image_grid<T: Real>(samples: &Tensor<T>, columns: usize, path: &Path) -> Result<()> {
    let bytes = image_grid_pgm(samples, columns)?;
    atomic_write(path, &bytes)
}
