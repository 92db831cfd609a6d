//! im2col-lowered 2D convolution kernels.
//!
//! Each sample is lowered to a (c_in*k*k, h_out*w_out) column matrix and
//! multiplied with the (c_out, c_in*k*k) weight matrix via dgemm. Every
//! output element is a sequential dot product, so results are bit-identical
//! regardless of how samples are distributed across threads.

use super::{Shape, Tensor};
use rayon::prelude::*;

pub struct ConvDims {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

pub fn conv_dims(x: Shape, w: Shape, stride: usize, pad: usize) -> ConvDims {
    let [n, c_in, h, wd] = x.0;
    let [c_out, _, k, _] = w.0;
    let h_out = (h + 2 * pad - k) / stride + 1;
    let w_out = (wd + 2 * pad - k) / stride + 1;
    ConvDims {
        n,
        c_in,
        h,
        w: wd,
        c_out,
        k,
        stride,
        pad,
        h_out,
        w_out,
    }
}

/// Gather one sample into the column matrix (c_in*k*k rows, h_out*w_out cols).
fn im2col(x: &[f64], d: &ConvDims, cols: &mut [f64]) {
    let npos = d.h_out * d.w_out;
    for ci in 0..d.c_in {
        let plane = &x[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ky in 0..d.k {
            for kx in 0..d.k {
                let row = (ci * d.k + ky) * d.k + kx;
                let out_row = &mut cols[row * npos..(row + 1) * npos];
                for oy in 0..d.h_out {
                    let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        out_row[oy * d.w_out..(oy + 1) * d.w_out].fill(0.0);
                        continue;
                    }
                    let iy = iy as usize;
                    for ox in 0..d.w_out {
                        let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                        out_row[oy * d.w_out + ox] = if ix < 0 || ix >= d.w as isize {
                            0.0
                        } else {
                            plane[iy * d.w + ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-add the column-matrix gradient back onto the input gradient.
fn col2im_add(cols: &[f64], d: &ConvDims, dx: &mut [f64]) {
    let npos = d.h_out * d.w_out;
    for ci in 0..d.c_in {
        let plane = &mut dx[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ky in 0..d.k {
            for kx in 0..d.k {
                let row = (ci * d.k + ky) * d.k + kx;
                let src = &cols[row * npos..(row + 1) * npos];
                for oy in 0..d.h_out {
                    let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let iy = iy as usize;
                    for ox in 0..d.w_out {
                        let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                        if ix >= 0 && ix < d.w as isize {
                            plane[iy * d.w + ix as usize] += src[oy * d.w_out + ox];
                        }
                    }
                }
            }
        }
    }
}

fn dgemm(
    m: usize,
    kk: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    c: &mut [f64],
) {
    // Row-major strides for optionally transposed operands.
    let (rsa, csa) = if ta { (1, m as isize) } else { (kk as isize, 1) };
    let (rsb, csb) = if tb { (1, kk as isize) } else { (n as isize, 1) };
    unsafe {
        matrixmultiply::dgemm(
            m,
            kk,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn conv2d_forward(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let d = conv_dims(x.shape, w.shape, stride, pad);
    let npos = d.h_out * d.w_out;
    let krows = d.c_in * d.k * d.k;
    let mut out = Tensor::zeros(Shape([d.n, d.c_out, d.h_out, d.w_out]));
    let in_stride = d.c_in * d.h * d.w;
    let out_stride = d.c_out * npos;
    out.data
        .par_chunks_mut(out_stride)
        .enumerate()
        .for_each(|(s, y)| {
            let mut cols = vec![0.0; krows * npos];
            im2col(&x.data[s * in_stride..(s + 1) * in_stride], &d, &mut cols);
            dgemm(d.c_out, krows, npos, &w.data, false, &cols, false, y);
            for co in 0..d.c_out {
                let bias = b.data[co];
                for v in &mut y[co * npos..(co + 1) * npos] {
                    *v += bias;
                }
            }
        });
    out
}

/// Gradients w.r.t. input, weights, and bias. Weight gradients are summed
/// over samples in index order after a parallel per-sample pass.
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
) -> (Tensor, Tensor, Tensor) {
    let d = conv_dims(x.shape, w.shape, stride, pad);
    let npos = d.h_out * d.w_out;
    let krows = d.c_in * d.k * d.k;
    let in_stride = d.c_in * d.h * d.w;
    let out_stride = d.c_out * npos;

    let mut dx = Tensor::zeros(x.shape);
    let per_sample: Vec<(Vec<f64>, Vec<f64>)> = dx
        .data
        .par_chunks_mut(in_stride)
        .enumerate()
        .map(|(s, dxs)| {
            let g = &grad_out.data[s * out_stride..(s + 1) * out_stride];
            let mut cols = vec![0.0; krows * npos];
            im2col(&x.data[s * in_stride..(s + 1) * in_stride], &d, &mut cols);
            // dW_s = g (c_out x npos) * cols^T (npos x krows)
            let mut dw_s = vec![0.0; d.c_out * krows];
            dgemm(d.c_out, npos, krows, g, false, &cols, true, &mut dw_s);
            // dcols = W^T (krows x c_out) * g (c_out x npos)
            let mut dcols = vec![0.0; krows * npos];
            dgemm(krows, d.c_out, npos, &w.data, true, g, false, &mut dcols);
            col2im_add(&dcols, &d, dxs);
            let mut db_s = vec![0.0; d.c_out];
            for co in 0..d.c_out {
                db_s[co] = g[co * npos..(co + 1) * npos].iter().sum();
            }
            (dw_s, db_s)
        })
        .collect();

    let mut dw = Tensor::zeros(w.shape);
    let mut db = Tensor::zeros(Shape([1, d.c_out, 1, 1]));
    for (dw_s, db_s) in per_sample {
        for (a, v) in dw.data.iter_mut().zip(dw_s) {
            *a += v;
        }
        for (a, v) in db.data.iter_mut().zip(db_s) {
            *a += v;
        }
    }
    (dx, dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_ones_3x3_same_conv_center_is_nine() {
        let x = Tensor::full(Shape([1, 1, 3, 3]), 1.0);
        let w = Tensor::full(Shape([1, 1, 3, 3]), 1.0);
        let b = Tensor::zeros(Shape([1, 1, 1, 1]));
        let y = conv2d_forward(&x, &w, &b, 1, 1);
        assert_eq!(y.shape, Shape([1, 1, 3, 3]));
        assert_eq!(y.at(0, 0, 1, 1), 9.0);
        assert_eq!(y.at(0, 0, 0, 0), 4.0);
    }

    #[test]
    fn identity_1x1_kernel_is_identity() {
        let x = Tensor::from_vec(Shape([1, 1, 2, 2]), vec![1.0, -2.0, 3.5, 0.25]).unwrap();
        let w = Tensor::full(Shape([1, 1, 1, 1]), 1.0);
        let b = Tensor::zeros(Shape([1, 1, 1, 1]));
        let y = conv2d_forward(&x, &w, &b, 1, 0);
        assert_eq!(y.data, x.data);
    }

    #[test]
    fn stride_two_halves_spatial_dims() {
        let x = Tensor::full(Shape([2, 3, 8, 8]), 0.5);
        let w = Tensor::full(Shape([4, 3, 3, 3]), 0.1);
        let b = Tensor::zeros(Shape([1, 4, 1, 1]));
        let y = conv2d_forward(&x, &w, &b, 2, 1);
        assert_eq!(y.shape, Shape([2, 4, 4, 4]));
    }
}
