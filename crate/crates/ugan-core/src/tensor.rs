use crate::error::{Error, Result};
use crate::scalar::Real;
use rand_chacha::ChaCha8Rng;

/// Dense n-dimensional array in row-major order.
///
/// Invariant: `data.len() == shape.iter().product()`. Gradients live next to
/// values only on tape nodes and parameter-store entries, never inside the
/// tensor itself, so plain tensors stay cheap to clone and compare.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.contains(&0) {
            return Err(Error::Dimension {
                op: "tensor",
                detail: format!("zero-sized dimension in shape {shape:?}"),
            });
        }
        if data.len() != numel {
            return Err(Error::Dimension {
                op: "tensor",
                detail: format!(
                    "shape {shape:?} implies {numel} elements, got {}",
                    data.len()
                ),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); numel],
        }
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; numel],
        }
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    /// Zero-centered normal draws with the given standard deviation.
    pub fn randn(shape: &[usize], std: T, rng: &mut ChaCha8Rng) -> Self {
        let numel = shape.iter().product();
        let data = (0..numel).map(|_| T::std_normal(rng) * std).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of {} elements", self.numel());
        self.data[0]
    }

    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(Error::Dimension {
                op: "reshape",
                detail: format!("cannot view {:?} as {shape:?}", self.shape),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, &v| acc.max(v.abs()))
    }

    /// Bitwise equality, distinguishing -0.0 from 0.0 and comparing NaN bits.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }
}

/// Row count / row length for a 2-D tensor, erroring with the op name.
pub(crate) fn dims2<T: Real>(t: &Tensor<T>, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [n, m] => Ok((*n, *m)),
        other => Err(Error::Dimension {
            op,
            detail: format!("expected a 2-d tensor, got shape {other:?}"),
        }),
    }
}

/// (batch, channels, height, width) for a 4-D tensor.
pub(crate) fn dims4<T: Real>(t: &Tensor<T>, op: &'static str) -> Result<(usize, usize, usize, usize)> {
    match t.shape() {
        [n, c, h, w] => Ok((*n, *c, *h, *w)),
        other => Err(Error::Dimension {
            op,
            detail: format!("expected a 4-d tensor, got shape {other:?}"),
        }),
    }
}
