//! Central finite-difference gradient checking.
//!
//! Always runs at `f64`; single precision makes the difference quotient
//! useless at the step sizes involved.

use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-3;

/// Relative error with a small-magnitude floor, so near-zero gradients are
/// compared absolutely instead of blowing up the quotient.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-2);
    (analytic - numeric).abs() / denom
}

/// Central difference d f / d inputs[which][coord] with step `h`.
///
/// `f` must be a pure function of `inputs` (re-seed any internal randomness
/// per call so both evaluations see the same draws).
pub fn central_diff(
    f: &mut dyn FnMut(&[Tensor<f64>]) -> f64,
    inputs: &[Tensor<f64>],
    which: usize,
    coord: usize,
    h: f64,
) -> f64 {
    let mut plus = inputs.to_vec();
    plus[which].data_mut()[coord] += h;
    let fp = f(&plus);
    let mut minus = inputs.to_vec();
    minus[which].data_mut()[coord] -= h;
    let fm = f(&minus);
    (fp - fm) / (2.0 * h)
}

/// Worst relative error over the given coordinates of one input, comparing an
/// analytic gradient against central differences.
pub fn max_rel_err_at(
    f: &mut dyn FnMut(&[Tensor<f64>]) -> f64,
    inputs: &[Tensor<f64>],
    which: usize,
    analytic: &Tensor<f64>,
    coords: &[usize],
) -> f64 {
    let mut worst = 0.0f64;
    for &coord in coords {
        let numeric = central_diff(f, inputs, which, coord, FD_STEP);
        let err = rel_err(analytic.data()[coord], numeric);
        if err > worst {
            worst = err;
        }
    }
    worst
}

/// Worst relative error over every coordinate of one input.
pub fn max_rel_err_full(
    f: &mut dyn FnMut(&[Tensor<f64>]) -> f64,
    inputs: &[Tensor<f64>],
    which: usize,
    analytic: &Tensor<f64>,
) -> f64 {
    let coords: Vec<usize> = (0..analytic.numel()).collect();
    max_rel_err_at(f, inputs, which, analytic, &coords)
}
