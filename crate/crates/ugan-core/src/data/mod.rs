//! Dataset ingestion and artifact persistence: IDX image files, synthetic
//! Gaussian mixtures, binary checkpoints, PGM sample grids, and CSV series.
//!
//! Images are stored raw (bytes as read); normalization happens per consumer:
//! `[0, 1]` via p/255 for reconstruction targets, `[-1, 1]` via p/127.5 - 1
//! for discriminator/encoder inputs.

mod checkpoint;
mod csv;
mod idx;
mod image;
mod mixture;
mod synth;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use csv::write_series_csv;
pub use idx::{
    load_mnist_idx, read_idx_images, read_idx_labels, write_idx_images, write_idx_labels,
};
pub use image::{export_image_grid, image_grid_pgm};
pub use mixture::{sample_mixture, MixtureSpec};
pub use synth::{synthetic_digits, write_synthetic_digit_idx};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub enum Items {
    /// Raw pixel bytes, one c*h*w buffer per item.
    Images {
        c: usize,
        h: usize,
        w: usize,
        pixels: Vec<Vec<u8>>,
    },
    /// 2-d points, used as-is (no normalization).
    Points(Vec<[f64; 2]>),
}

/// In-memory dataset with optional labels aligned 1:1 with items.
#[derive(Debug, Clone)]
pub struct Dataset {
    items: Items,
    labels: Option<Vec<u8>>,
}

impl Dataset {
    pub fn from_images(
        c: usize,
        h: usize,
        w: usize,
        pixels: Vec<Vec<u8>>,
        labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        if let Some(bad) = pixels.iter().position(|p| p.len() != c * h * w) {
            return Err(Error::Data(format!(
                "image {bad} has {} bytes, expected {}",
                pixels[bad].len(),
                c * h * w
            )));
        }
        if let Some(l) = &labels {
            if l.len() != pixels.len() {
                return Err(Error::Data(format!(
                    "{} labels for {} images",
                    l.len(),
                    pixels.len()
                )));
            }
        }
        Ok(Dataset {
            items: Items::Images { c, h, w, pixels },
            labels,
        })
    }

    pub fn from_points(points: Vec<[f64; 2]>, labels: Option<Vec<u8>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != points.len() {
                return Err(Error::Data(format!(
                    "{} labels for {} points",
                    l.len(),
                    points.len()
                )));
            }
        }
        Ok(Dataset {
            items: Items::Points(points),
            labels,
        })
    }

    pub fn len(&self) -> usize {
        match &self.items {
            Items::Images { pixels, .. } => pixels.len(),
            Items::Points(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn points(&self) -> Option<&[[f64; 2]]> {
        match &self.items {
            Items::Points(p) => Some(p),
            _ => None,
        }
    }

    /// Per-item tensor shape: [c, h, w] for images, [2] for points.
    pub fn item_shape(&self) -> Vec<usize> {
        match &self.items {
            Items::Images { c, h, w, .. } => vec![*c, *h, *w],
            Items::Points(_) => vec![2],
        }
    }

    /// Keep only the first `max` items (desk-scale subset control).
    pub fn truncated(mut self, max: usize) -> Self {
        match &mut self.items {
            Items::Images { pixels, .. } => pixels.truncate(max),
            Items::Points(p) => p.truncate(max),
        }
        if let Some(l) = &mut self.labels {
            l.truncate(max);
        }
        self
    }

    fn gather_pixels(&self, idx: &[usize]) -> Result<(&[Vec<u8>], usize)> {
        match &self.items {
            Items::Images { pixels, c, h, w } => {
                if let Some(&bad) = idx.iter().find(|&&i| i >= pixels.len()) {
                    return Err(Error::Data(format!(
                        "index {bad} out of range for {} items",
                        pixels.len()
                    )));
                }
                Ok((pixels, c * h * w))
            }
            Items::Points(_) => Err(Error::Data(
                "pixel batch requested from a point dataset".into(),
            )),
        }
    }

    /// Batch normalized to [0, 1] (reconstruction targets). Images only.
    pub fn batch_unit<T: Real>(&self, idx: &[usize]) -> Result<Tensor<T>> {
        let (pixels, item_len) = self.gather_pixels(idx)?;
        let mut data = Vec::with_capacity(idx.len() * item_len);
        for &i in idx {
            data.extend(pixels[i].iter().map(|&p| T::from_f64(p as f64 / 255.0)));
        }
        let mut shape = vec![idx.len()];
        shape.extend(self.item_shape());
        Tensor::new(shape, data)
    }

    /// Batch in the network input range: [-1, 1] for images (p/127.5 - 1),
    /// raw coordinates for points.
    pub fn batch_signed<T: Real>(&self, idx: &[usize]) -> Result<Tensor<T>> {
        match &self.items {
            Items::Images { .. } => {
                let (pixels, item_len) = self.gather_pixels(idx)?;
                let mut data = Vec::with_capacity(idx.len() * item_len);
                for &i in idx {
                    data.extend(
                        pixels[i]
                            .iter()
                            .map(|&p| T::from_f64(p as f64 / 127.5 - 1.0)),
                    );
                }
                let mut shape = vec![idx.len()];
                shape.extend(self.item_shape());
                Tensor::new(shape, data)
            }
            Items::Points(points) => {
                if let Some(&bad) = idx.iter().find(|&&i| i >= points.len()) {
                    return Err(Error::Data(format!(
                        "index {bad} out of range for {} items",
                        points.len()
                    )));
                }
                let mut data = Vec::with_capacity(idx.len() * 2);
                for &i in idx {
                    data.push(T::from_f64(points[i][0]));
                    data.push(T::from_f64(points[i][1]));
                }
                Tensor::new(vec![idx.len(), 2], data)
            }
        }
    }

    pub fn batch_labels(&self, idx: &[usize]) -> Option<Vec<u8>> {
        self.labels
            .as_ref()
            .map(|l| idx.iter().map(|&i| l[i]).collect())
    }
}
