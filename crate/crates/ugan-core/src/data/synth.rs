//! Deterministic synthetic digit images.
//!
//! Seven-segment-style glyphs at 28x28 with per-item translation, intensity
//! jitter, pixel noise, and a box blur. Used as the desk-scale stand-in when
//! the real digit files are not on disk: the distribution has ten clean modes,
//! is trivially classifiable, and is rich enough for reconstruction and
//! adversarial training to make visible progress.

use super::{idx, Dataset};
use crate::error::Result;
use crate::rng;
use crate::scalar::Real;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

pub const SIDE: usize = 28;

// Segment layout: A top, G middle, D bottom, F/B upper verticals,
// E/C lower verticals. Each rectangle is (x0, y0, x1, y1), exclusive ends.
const SEG: [(usize, usize, usize, usize); 7] = [
    (9, 5, 19, 7),   // A
    (17, 5, 19, 14), // B
    (17, 14, 19, 23),// C
    (9, 21, 19, 23), // D
    (9, 14, 11, 23), // E
    (9, 5, 11, 14),  // F
    (9, 13, 19, 15), // G
];

const DIGIT_SEGMENTS: [&[usize]; 10] = [
    &[0, 1, 2, 3, 4, 5],    // 0
    &[1, 2],                // 1
    &[0, 1, 6, 4, 3],       // 2
    &[0, 1, 6, 2, 3],       // 3
    &[5, 6, 1, 2],          // 4
    &[0, 5, 6, 2, 3],       // 5
    &[0, 5, 6, 4, 3, 2],    // 6
    &[0, 1, 2],             // 7
    &[0, 1, 2, 3, 4, 5, 6], // 8
    &[0, 1, 2, 3, 5, 6],    // 9
];

fn render_digit(digit: u8, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let dx: i32 = rng.random_range(-3..=3);
    let dy: i32 = rng.random_range(-2..=2);
    let intensity: f64 = 0.72 + 0.28 * f64::unit_uniform(rng);

    let mut canvas = vec![0u8; SIDE * SIDE];
    for &seg in DIGIT_SEGMENTS[digit as usize] {
        let (x0, y0, x1, y1) = SEG[seg];
        for y in y0..y1 {
            for x in x0..x1 {
                let (sx, sy) = (x as i32 + dx, y as i32 + dy);
                if (0..SIDE as i32).contains(&sx) && (0..SIDE as i32).contains(&sy) {
                    canvas[sy as usize * SIDE + sx as usize] = (255.0 * intensity) as u8;
                }
            }
        }
    }

    // one 3x3 box-blur pass softens the strokes
    let mut blurred = vec![0u8; SIDE * SIDE];
    for y in 0..SIDE {
        for x in 0..SIDE {
            let mut acc = 0u32;
            let mut cnt = 0u32;
            for oy in -1i32..=1 {
                for ox in -1i32..=1 {
                    let (sx, sy) = (x as i32 + ox, y as i32 + oy);
                    if (0..SIDE as i32).contains(&sx) && (0..SIDE as i32).contains(&sy) {
                        acc += canvas[sy as usize * SIDE + sx as usize] as u32;
                        cnt += 1;
                    }
                }
            }
            blurred[y * SIDE + x] = (acc / cnt) as u8;
        }
    }

    // light pixel noise on top
    for px in blurred.iter_mut() {
        let noise: i32 = rng.random_range(-10..=10);
        *px = (*px as i32 + noise).clamp(0, 255) as u8;
    }
    blurred
}

/// Generate `n` labeled digit images (labels cycle 0..=9).
pub fn synthetic_digits(n: usize, seed: u64) -> Dataset {
    let mut stream = rng::stream(seed, &["synthetic-digits"]);
    let mut pixels = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let digit = (i % 10) as u8;
        pixels.push(render_digit(digit, &mut stream));
        labels.push(digit);
    }
    Dataset::from_images(1, SIDE, SIDE, pixels, Some(labels)).expect("generator emits aligned items")
}

/// Materialize a synthetic digit dataset as an IDX image/label file pair.
pub fn write_synthetic_digit_idx(dir: &Path, n: usize, seed: u64) -> Result<(PathBuf, PathBuf)> {
    let mut stream = rng::stream(seed, &["synthetic-digits"]);
    let mut pixels = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let digit = (i % 10) as u8;
        pixels.push(render_digit(digit, &mut stream));
        labels.push(digit);
    }
    let images_path = dir.join("train-images-idx3-ubyte");
    let labels_path = dir.join("train-labels-idx1-ubyte");
    idx::write_idx_images(&images_path, &pixels, SIDE, SIDE)?;
    idx::write_idx_labels(&labels_path, &labels)?;
    Ok((images_path, labels_path))
}
