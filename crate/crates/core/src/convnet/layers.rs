//! Per-layer forward and backward kernels on flat slices.

use rayon::prelude::*;

use super::spec::ConvGeom;
use super::Scalar;

/// `y += a * x`.
#[inline]
pub(crate) fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with eight fixed-order partial sums.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        for j in 0..8 {
            acc[j] += xa[j] * xb[j];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Output columns `[lo, hi)` whose input column `ox * sw + kx - pw` is in range.
fn col_range(g: &ConvGeom, kx: usize) -> (usize, usize) {
    let lo = if kx >= g.pw {
        0
    } else {
        (g.pw - kx).div_ceil(g.sw)
    };
    let hi = if g.in_w + g.pw > kx {
        ((g.in_w + g.pw - kx - 1) / g.sw + 1).min(g.out_w)
    } else {
        0
    };
    (lo, hi.max(lo))
}

fn input_row(g: &ConvGeom, oy: usize, ky: usize) -> Option<usize> {
    let iy = (oy * g.sh + ky) as isize - g.ph as isize;
    (0..g.in_h as isize).contains(&iy).then_some(iy as usize)
}

fn weight_index(g: &ConvGeom, oc: usize, ic: usize, ky: usize, kx: usize) -> usize {
    ((oc * g.in_c + ic) * g.kh + ky) * g.kw + kx
}

/// Convolution of one sample. `out` has `out_c * out_h * out_w` values.
pub(crate) fn conv_forward<T: Scalar>(g: &ConvGeom, w: &[T], b: &[T], input: &[T], out: &mut [T]) {
    let in_plane = g.in_h * g.in_w;
    let out_plane = g.out_h * g.out_w;
    let ranges: Vec<(usize, usize)> = (0..g.kw).map(|kx| col_range(g, kx)).collect();
    for oc in 0..g.out_c {
        let out_p = &mut out[oc * out_plane..(oc + 1) * out_plane];
        out_p.iter_mut().for_each(|v| *v = b[oc]);
        for ic in 0..g.in_c {
            let in_p = &input[ic * in_plane..(ic + 1) * in_plane];
            for ky in 0..g.kh {
                for oy in 0..g.out_h {
                    let Some(iy) = input_row(g, oy, ky) else { continue };
                    let in_row = &in_p[iy * g.in_w..(iy + 1) * g.in_w];
                    let out_row = &mut out_p[oy * g.out_w..(oy + 1) * g.out_w];
                    for (kx, &(lo, hi)) in ranges.iter().enumerate() {
                        if lo >= hi {
                            continue;
                        }
                        let wv = w[weight_index(g, oc, ic, ky, kx)];
                        let start = lo * g.sw + kx - g.pw;
                        if g.sw == 1 {
                            axpy(wv, &in_row[start..start + hi - lo], &mut out_row[lo..hi]);
                        } else {
                            for (j, o) in out_row[lo..hi].iter_mut().enumerate() {
                                *o += wv * in_row[start + j * g.sw];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradient of one sample's convolution with respect to its input.
pub(crate) fn conv_backward_input<T: Scalar>(g: &ConvGeom, w: &[T], dout: &[T], din: &mut [T]) {
    let in_plane = g.in_h * g.in_w;
    let out_plane = g.out_h * g.out_w;
    let ranges: Vec<(usize, usize)> = (0..g.kw).map(|kx| col_range(g, kx)).collect();
    din.iter_mut().for_each(|v| *v = T::zero());
    for oc in 0..g.out_c {
        let dout_p = &dout[oc * out_plane..(oc + 1) * out_plane];
        for ic in 0..g.in_c {
            let din_p = &mut din[ic * in_plane..(ic + 1) * in_plane];
            for ky in 0..g.kh {
                for oy in 0..g.out_h {
                    let Some(iy) = input_row(g, oy, ky) else { continue };
                    let dout_row = &dout_p[oy * g.out_w..(oy + 1) * g.out_w];
                    let din_row = &mut din_p[iy * g.in_w..(iy + 1) * g.in_w];
                    for (kx, &(lo, hi)) in ranges.iter().enumerate() {
                        if lo >= hi {
                            continue;
                        }
                        let wv = w[weight_index(g, oc, ic, ky, kx)];
                        let start = lo * g.sw + kx - g.pw;
                        if g.sw == 1 {
                            axpy(wv, &dout_row[lo..hi], &mut din_row[start..start + hi - lo]);
                        } else {
                            for (j, &d) in dout_row[lo..hi].iter().enumerate() {
                                din_row[start + j * g.sw] += wv * d;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Weight and bias gradients summed over the batch, parallel over output
/// channels; each channel sums samples in order.
pub(crate) fn conv_backward_params<T: Scalar>(
    g: &ConvGeom,
    input: &[T],
    dout: &[T],
    batch: usize,
    dw: &mut [T],
    db: &mut [T],
) {
    let in_len = g.in_c * g.in_h * g.in_w;
    let out_len = g.out_c * g.out_h * g.out_w;
    let in_plane = g.in_h * g.in_w;
    let out_plane = g.out_h * g.out_w;
    let per_oc = g.in_c * g.kh * g.kw;
    let ranges: Vec<(usize, usize)> = (0..g.kw).map(|kx| col_range(g, kx)).collect();
    dw.par_chunks_mut(per_oc)
        .zip(db.par_iter_mut())
        .enumerate()
        .for_each(|(oc, (dw_oc, db_oc))| {
            dw_oc.iter_mut().for_each(|v| *v = T::zero());
            *db_oc = T::zero();
            for n in 0..batch {
                let dout_p = &dout[n * out_len + oc * out_plane..n * out_len + (oc + 1) * out_plane];
                *db_oc += dout_p.iter().copied().sum::<T>();
                for ic in 0..g.in_c {
                    let base = n * in_len + ic * in_plane;
                    let in_p = &input[base..base + in_plane];
                    for ky in 0..g.kh {
                        for oy in 0..g.out_h {
                            let Some(iy) = input_row(g, oy, ky) else { continue };
                            let in_row = &in_p[iy * g.in_w..(iy + 1) * g.in_w];
                            let dout_row = &dout_p[oy * g.out_w..(oy + 1) * g.out_w];
                            for (kx, &(lo, hi)) in ranges.iter().enumerate() {
                                if lo >= hi {
                                    continue;
                                }
                                let start = lo * g.sw + kx - g.pw;
                                let acc = if g.sw == 1 {
                                    dot(&dout_row[lo..hi], &in_row[start..start + hi - lo])
                                } else {
                                    dout_row[lo..hi]
                                        .iter()
                                        .enumerate()
                                        .map(|(j, &d)| d * in_row[start + j * g.sw])
                                        .sum()
                                };
                                dw_oc[(ic * g.kh + ky) * g.kw + kx] += acc;
                            }
                        }
                    }
                }
            }
        });
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct PoolGeom {
    pub c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
}

/// Max pooling of one sample; records the flat input index of each maximum
/// (first occurrence on ties).
pub(crate) fn maxpool_forward<T: Scalar>(g: &PoolGeom, input: &[T], out: &mut [T], argmax: &mut [u32]) {
    let in_plane = g.in_h * g.in_w;
    let out_plane = g.out_h * g.out_w;
    for c in 0..g.c {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let mut best = T::neg_infinity();
                let mut arg = 0;
                for ky in 0..g.kh {
                    let row = c * in_plane + (oy * g.sh + ky) * g.in_w;
                    for kx in 0..g.kw {
                        let idx = row + ox * g.sw + kx;
                        if input[idx] > best {
                            best = input[idx];
                            arg = idx;
                        }
                    }
                }
                let o = c * out_plane + oy * g.out_w + ox;
                out[o] = best;
                argmax[o] = arg as u32;
            }
        }
    }
}

pub(crate) fn maxpool_backward<T: Scalar>(dout: &[T], argmax: &[u32], din: &mut [T]) {
    din.iter_mut().for_each(|v| *v = T::zero());
    for (&d, &a) in dout.iter().zip(argmax) {
        din[a as usize] += d;
    }
}

/// `out = W x + b` for one sample; `w` is `(out, in)` row-major.
pub(crate) fn fc_forward<T: Scalar>(w: &[T], b: &[T], input: &[T], out: &mut [T]) {
    let n_in = input.len();
    for (o, y) in out.iter_mut().enumerate() {
        *y = b[o] + dot(&w[o * n_in..(o + 1) * n_in], input);
    }
}

pub(crate) fn fc_backward_input<T: Scalar>(w: &[T], dout: &[T], din: &mut [T]) {
    let n_in = din.len();
    din.iter_mut().for_each(|v| *v = T::zero());
    for (o, &d) in dout.iter().enumerate() {
        if d != T::zero() {
            axpy(d, &w[o * n_in..(o + 1) * n_in], din);
        }
    }
}

/// Parallel over output rows; each row sums samples in order.
pub(crate) fn fc_backward_params<T: Scalar>(
    input: &[T],
    dout: &[T],
    batch: usize,
    dw: &mut [T],
    db: &mut [T],
) {
    let n_in = input.len() / batch;
    let n_out = dout.len() / batch;
    dw.par_chunks_mut(n_in)
        .zip(db.par_iter_mut())
        .enumerate()
        .for_each(|(o, (row, bias))| {
            row.iter_mut().for_each(|v| *v = T::zero());
            *bias = T::zero();
            for n in 0..batch {
                let d = dout[n * n_out + o];
                *bias += d;
                if d != T::zero() {
                    axpy(d, &input[n * n_in..(n + 1) * n_in], row);
                }
            }
        });
}
