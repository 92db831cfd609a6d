//! 2D discrete Fourier transforms over complex grids.
//!
//! Convention used everywhere in this crate: unnormalized forward transform,
//! inverse scaled by 1/(h*w). Frequencies are indexed on the signed integer
//! lattice with `signed_freq`.

use num_complex::Complex64;
use rustfft::FftPlanner;
use std::sync::Arc;

/// Cached row/column plans for one grid size.
pub struct Fft2 {
    pub h: usize,
    pub w: usize,
    row_fwd: Arc<dyn rustfft::Fft<f64>>,
    row_inv: Arc<dyn rustfft::Fft<f64>>,
    col_fwd: Arc<dyn rustfft::Fft<f64>>,
    col_inv: Arc<dyn rustfft::Fft<f64>>,
}

impl Fft2 {
    pub fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            h,
            w,
            row_fwd: planner.plan_fft_forward(w),
            row_inv: planner.plan_fft_inverse(w),
            col_fwd: planner.plan_fft_forward(h),
            col_inv: planner.plan_fft_inverse(h),
        }
    }

    /// In-place forward transform of a row-major h*w grid. Unnormalized.
    pub fn forward(&self, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.h * self.w);
        for row in data.chunks_mut(self.w) {
            self.row_fwd.process(row);
        }
        let mut col = vec![Complex64::default(); self.h];
        for x in 0..self.w {
            for y in 0..self.h {
                col[y] = data[y * self.w + x];
            }
            self.col_fwd.process(&mut col);
            for y in 0..self.h {
                data[y * self.w + x] = col[y];
            }
        }
    }

    /// In-place inverse transform, scaled by 1/(h*w).
    pub fn inverse(&self, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.h * self.w);
        for row in data.chunks_mut(self.w) {
            self.row_inv.process(row);
        }
        let mut col = vec![Complex64::default(); self.h];
        for x in 0..self.w {
            for y in 0..self.h {
                col[y] = data[y * self.w + x];
            }
            self.col_inv.process(&mut col);
            for y in 0..self.h {
                data[y * self.w + x] = col[y];
            }
        }
        let scale = 1.0 / (self.h * self.w) as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }
}

/// Forward DFT of a real field; convenience for single grids.
pub fn fft2_real(field: &[f64], h: usize, w: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = field.iter().map(|v| Complex64::new(*v, 0.0)).collect();
    Fft2::new(h, w).forward(&mut buf);
    buf
}

/// Signed integer frequency of DFT bin `i` on an axis of length `n`
/// (0, 1, ..., n/2-1, -n/2, ..., -1).
#[inline]
pub fn signed_freq(i: usize, n: usize) -> i64 {
    if i <= (n - 1) / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Integer radial shell index of bin (iy, ix) on an h*w grid.
#[inline]
pub fn shell_index(iy: usize, ix: usize, h: usize, w: usize) -> usize {
    let ky = signed_freq(iy, h) as f64;
    let kx = signed_freq(ix, w) as f64;
    (ky * ky + kx * kx).sqrt().round() as usize
}

/// Largest shell index present on an h*w grid.
pub fn max_shell(h: usize, w: usize) -> usize {
    let ky = (h / 2) as f64;
    let kx = (w / 2) as f64;
    (ky * ky + kx * kx).sqrt().round() as usize
}
