//! Dense linear-algebra kernels behind the tape ops.
//!
//! Everything here reduces in a fixed sequential order per output element, so
//! results are bitwise-reproducible run to run. The only matmul is `gemm_nn`;
//! transposed operand layouts are materialized explicitly, which keeps the
//! k-loop free of reassociation and lets the j-loop autovectorize.
//!
//! Convolutions are specialized to the one geometry the presets use:
//! 3x3 kernels, stride 2, padding 1 (output padding 1 for the transpose).

use crate::scalar::Real;

/// c += a * b for row-major a[m,k], b[k,n], c[m,n].
pub fn gemm_nn<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (kk, &aik) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row.iter()) {
                *cv = aik.mul_add(bv, *cv);
            }
        }
    }
}

/// Row-major transpose of a[rows, cols] into a fresh [cols, rows] buffer.
pub fn transpose<T: Real>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), rows * cols);
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        let src = &a[r * cols..(r + 1) * cols];
        for (c, &v) in src.iter().enumerate() {
            out[c * rows + r] = v;
        }
    }
    out
}

/// Output spatial extent of the stride-2 convolution.
#[inline]
pub fn conv_out_extent(h: usize) -> usize {
    (h - 1) / 2 + 1
}

/// Unfold one image [c, h, w] into col[(c*9), ho*wo] for the fixed geometry.
/// Out-of-bounds taps read as zero.
pub fn im2col<T: Real>(
    img: &[T],
    c: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    col: &mut [T],
) {
    let p_total = ho * wo;
    debug_assert_eq!(img.len(), c * h * w);
    debug_assert_eq!(col.len(), c * 9 * p_total);
    for ci in 0..c {
        let img_c = &img[ci * h * w..(ci + 1) * h * w];
        for dy in 0..3usize {
            for dx in 0..3usize {
                let row = &mut col[(ci * 9 + dy * 3 + dx) * p_total..][..p_total];
                for oy in 0..ho {
                    let iy = (oy * 2 + dy) as isize - 1;
                    let dst = &mut row[oy * wo..oy * wo + wo];
                    if iy < 0 || iy >= h as isize {
                        dst.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src_row = &img_c[iy as usize * w..iy as usize * w + w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * 2 + dx) as isize - 1;
                        *d = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of `im2col`: scatter-add col[(c*9), ho*wo] back into img [c, h, w].
pub fn col2im_add<T: Real>(
    col: &[T],
    c: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    img: &mut [T],
) {
    let p_total = ho * wo;
    debug_assert_eq!(img.len(), c * h * w);
    debug_assert_eq!(col.len(), c * 9 * p_total);
    for ci in 0..c {
        let img_c = &mut img[ci * h * w..(ci + 1) * h * w];
        for dy in 0..3usize {
            for dx in 0..3usize {
                let row = &col[(ci * 9 + dy * 3 + dx) * p_total..][..p_total];
                for oy in 0..ho {
                    let iy = (oy * 2 + dy) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut img_c[iy as usize * w..iy as usize * w + w];
                    let src = &row[oy * wo..oy * wo + wo];
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = (ox * 2 + dx) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Batched conv forward: x[n, cin, h, w] * k[cout, cin, 3, 3] + b -> out[n, cout, ho, wo].
#[allow(clippy::too_many_arguments)]
pub fn conv2d_fwd<T: Real>(
    x: &[T],
    kmat: &[T],
    bias: &[T],
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
) -> Vec<T> {
    let (ho, wo) = (conv_out_extent(h), conv_out_extent(w));
    let p = ho * wo;
    let mut out = vec![T::zero(); n * cout * p];
    let mut col = vec![T::zero(); cin * 9 * p];
    for item in 0..n {
        im2col(&x[item * cin * h * w..][..cin * h * w], cin, h, w, ho, wo, &mut col);
        let out_item = &mut out[item * cout * p..][..cout * p];
        gemm_nn(kmat, &col, out_item, cout, cin * 9, p);
        for co in 0..cout {
            let bv = bias[co];
            out_item[co * p..(co + 1) * p].iter_mut().for_each(|v| *v += bv);
        }
    }
    out
}

/// Gradients of `conv2d_fwd`. Accumulates into the provided buffers.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_bwd<T: Real>(
    x: &[T],
    kmat: &[T],
    dout: &[T],
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    dx: Option<&mut [T]>,
    dk: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let (ho, wo) = (conv_out_extent(h), conv_out_extent(w));
    let p = ho * wo;
    let k9 = cin * 9;
    let kmat_t = if dx.is_some() {
        transpose(kmat, cout, k9)
    } else {
        Vec::new()
    };
    let mut col = vec![T::zero(); k9 * p];
    let mut dcol = vec![T::zero(); k9 * p];
    let (mut dx, mut dk, mut db) = (dx, dk, db);
    for item in 0..n {
        let dout_item = &dout[item * cout * p..][..cout * p];
        if let Some(dx) = dx.as_deref_mut() {
            dcol.iter_mut().for_each(|v| *v = T::zero());
            gemm_nn(&kmat_t, dout_item, &mut dcol, k9, cout, p);
            col2im_add(&dcol, cin, h, w, ho, wo, &mut dx[item * cin * h * w..][..cin * h * w]);
        }
        if let Some(dk) = dk.as_deref_mut() {
            im2col(&x[item * cin * h * w..][..cin * h * w], cin, h, w, ho, wo, &mut col);
            let col_t = transpose(&col, k9, p);
            gemm_nn(dout_item, &col_t, dk, cout, p, k9);
        }
        if let Some(db) = db.as_deref_mut() {
            for co in 0..cout {
                let mut s = T::zero();
                for &v in &dout_item[co * p..(co + 1) * p] {
                    s += v;
                }
                db[co] += s;
            }
        }
    }
}

/// Batched transposed conv forward: the exact adjoint of `conv2d_fwd` with the
/// same kernel tensor, viewed as k[cin, cout, 3, 3].
/// x[n, cin, h, w] -> out[n, cout, 2h, 2w].
#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d_fwd<T: Real>(
    x: &[T],
    kmat: &[T],
    bias: &[T],
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let p = h * w;
    let k9 = cout * 9;
    let kmat_t = transpose(kmat, cin, k9);
    let mut out = vec![T::zero(); n * cout * oh * ow];
    let mut dcol = vec![T::zero(); k9 * p];
    for item in 0..n {
        let x_item = &x[item * cin * p..][..cin * p];
        dcol.iter_mut().for_each(|v| *v = T::zero());
        gemm_nn(&kmat_t, x_item, &mut dcol, k9, cin, p);
        let out_item = &mut out[item * cout * oh * ow..][..cout * oh * ow];
        col2im_add(&dcol, cout, oh, ow, h, w, out_item);
        for co in 0..cout {
            let bv = bias[co];
            out_item[co * oh * ow..(co + 1) * oh * ow]
                .iter_mut()
                .for_each(|v| *v += bv);
        }
    }
    out
}

/// Gradients of `conv_transpose2d_fwd`. Accumulates into the provided buffers.
#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d_bwd<T: Real>(
    x: &[T],
    kmat: &[T],
    dout: &[T],
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    dx: Option<&mut [T]>,
    dk: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let (oh, ow) = (2 * h, 2 * w);
    let p = h * w;
    let k9 = cout * 9;
    let mut col = vec![T::zero(); k9 * p];
    let (mut dx, mut dk, mut db) = (dx, dk, db);
    for item in 0..n {
        let dout_item = &dout[item * cout * oh * ow..][..cout * oh * ow];
        im2col(dout_item, cout, oh, ow, h, w, &mut col);
        if let Some(dx) = dx.as_deref_mut() {
            gemm_nn(
                kmat,
                &col,
                &mut dx[item * cin * p..][..cin * p],
                cin,
                k9,
                p,
            );
        }
        if let Some(dk) = dk.as_deref_mut() {
            let col_t = transpose(&col, k9, p);
            gemm_nn(&x[item * cin * p..][..cin * p], &col_t, dk, cin, p, k9);
        }
        if let Some(db) = db.as_deref_mut() {
            for co in 0..cout {
                let mut s = T::zero();
                for &v in &dout_item[co * oh * ow..(co + 1) * oh * ow] {
                    s += v;
                }
                db[co] += s;
            }
        }
    }
}
