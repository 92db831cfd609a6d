//! Patch-based DC/HFC decomposition with learnable per-channel scaling,
//! plus the frequency-domain scaling alternative.
//!
//! A feature map is split into non-overlapping p*p patches. The direct
//! component (DC) is the mean patch across all patches; the high-frequency
//! component (HFC) of a patch is its difference from the DC. Each output
//! patch is `x + lambda_dc * DC + lambda_hfc * HFC`, with the lambdas
//! shared across patches and samples but free per channel.

use crate::fft::{max_shell, shell_index, Fft2};
use crate::tensor::{Shape, Tensor};
use crate::{Error, Result};
use num_complex::Complex64;

/// Learnable per-channel scaling of the patch decomposition.
#[derive(Debug, Clone)]
pub struct HfsParams {
    pub lambda_dc: Vec<f64>,
    pub lambda_hfc: Vec<f64>,
    pub patch: usize,
}

impl HfsParams {
    pub fn new(channels: usize, patch: usize, init_dc: f64, init_hfc: f64) -> Self {
        HfsParams {
            lambda_dc: vec![init_dc; channels],
            lambda_hfc: vec![init_hfc; channels],
            patch,
        }
    }
}

/// Per-channel scaling of radially split frequency bands.
#[derive(Debug, Clone)]
pub struct FourierScaleParams {
    pub lambda_low: Vec<f64>,
    pub lambda_high: Vec<f64>,
    pub tau: f64,
}

/// Non-overlapping p*p patches of a feature map, in row-major patch order.
#[derive(Debug, Clone)]
pub struct Patches {
    pub n: usize,
    pub c: usize,
    pub patch: usize,
    pub grid_y: usize,
    pub grid_x: usize,
    /// layout (n, N, c, p, p)
    pub data: Vec<f64>,
}

impl Patches {
    pub fn num_patches(&self) -> usize {
        self.grid_y * self.grid_x
    }

    #[inline]
    pub fn idx(&self, s: usize, i: usize, ch: usize, py: usize, px: usize) -> usize {
        let p = self.patch;
        (((s * self.num_patches() + i) * self.c + ch) * p + py) * p + px
    }
}

pub fn patchify(x: &Tensor, p: usize) -> Result<Patches> {
    let (n, c, h, w) = (x.shape.n(), x.shape.c(), x.shape.h(), x.shape.w());
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::InvalidConfig(format!(
            "patch size {p} does not divide spatial dims {h}x{w}"
        )));
    }
    let (gy, gx) = (h / p, w / p);
    let mut out = Patches {
        n,
        c,
        patch: p,
        grid_y: gy,
        grid_x: gx,
        data: vec![0.0; n * gy * gx * c * p * p],
    };
    for s in 0..n {
        for by in 0..gy {
            for bx in 0..gx {
                let i = by * gx + bx;
                for ch in 0..c {
                    for py in 0..p {
                        for px in 0..p {
                            let k = out.idx(s, i, ch, py, px);
                            out.data[k] = x.at(s, ch, by * p + py, bx * p + px);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn unpatchify(patches: &Patches) -> Tensor {
    let p = patches.patch;
    let (h, w) = (patches.grid_y * p, patches.grid_x * p);
    let mut out = Tensor::zeros(Shape([patches.n, patches.c, h, w]));
    for s in 0..patches.n {
        for by in 0..patches.grid_y {
            for bx in 0..patches.grid_x {
                let i = by * patches.grid_x + bx;
                for ch in 0..patches.c {
                    for py in 0..p {
                        for px in 0..p {
                            *out.at_mut(s, ch, by * p + py, bx * p + px) =
                                patches.data[patches.idx(s, i, ch, py, px)];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Mean patch across all patches, per sample and channel. Shape (n, c, p, p).
pub fn compute_dc(patches: &Patches) -> Tensor {
    let p = patches.patch;
    let num = patches.num_patches();
    let mut dc = Tensor::zeros(Shape([patches.n, patches.c, p, p]));
    for s in 0..patches.n {
        for i in 0..num {
            for ch in 0..patches.c {
                for py in 0..p {
                    for px in 0..p {
                        *dc.at_mut(s, ch, py, px) +=
                            patches.data[patches.idx(s, i, ch, py, px)];
                    }
                }
            }
        }
    }
    let scale = 1.0 / num as f64;
    for v in &mut dc.data {
        *v *= scale;
    }
    dc
}

/// Difference of each patch with the DC.
pub fn compute_hfc(patches: &Patches, dc: &Tensor) -> Patches {
    let p = patches.patch;
    let mut out = patches.clone();
    for s in 0..patches.n {
        for i in 0..patches.num_patches() {
            for ch in 0..patches.c {
                for py in 0..p {
                    for px in 0..p {
                        let k = out.idx(s, i, ch, py, px);
                        out.data[k] -= dc.at(s, ch, py, px);
                    }
                }
            }
        }
    }
    out
}

/// Patch-mean field of `x`: each p*p patch replaced by the mean patch,
/// tiled back to full resolution. Self-adjoint projection.
fn tiled_mean_patch(x: &Tensor, p: usize) -> Tensor {
    let (n, c, h, w) = (x.shape.n(), x.shape.c(), x.shape.h(), x.shape.w());
    let (gy, gx) = (h / p, w / p);
    let num = (gy * gx) as f64;
    let mut out = Tensor::zeros(x.shape);
    for s in 0..n {
        for ch in 0..c {
            // mean over patches at each local offset
            for py in 0..p {
                for px in 0..p {
                    let mut acc = 0.0;
                    for by in 0..gy {
                        for bx in 0..gx {
                            acc += x.at(s, ch, by * p + py, bx * p + px);
                        }
                    }
                    let mean = acc / num;
                    for by in 0..gy {
                        for bx in 0..gx {
                            *out.at_mut(s, ch, by * p + py, bx * p + px) = mean;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Full-field HFS forward: out = x + lambda_dc*DC + lambda_hfc*HFC per patch,
/// equivalently (1+lambda_hfc)*x + (lambda_dc - lambda_hfc)*tiled-mean(x).
pub fn hfs_forward(x: &Tensor, lambda_dc: &[f64], lambda_hfc: &[f64], p: usize) -> Tensor {
    let mean = tiled_mean_patch(x, p);
    let (n, c) = (x.shape.n(), x.shape.c());
    let plane = x.shape.h() * x.shape.w();
    let mut out = Tensor::zeros(x.shape);
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * plane;
            let (ldc, lhfc) = (lambda_dc[ch], lambda_hfc[ch]);
            for i in base..base + plane {
                out.data[i] = (1.0 + lhfc) * x.data[i] + (ldc - lhfc) * mean.data[i];
            }
        }
    }
    out
}

/// Gradients of `hfs_forward` w.r.t. the input and both lambda vectors.
/// Lambda gradients aggregate over all patches and batch samples.
pub fn hfs_backward(
    x: &Tensor,
    lambda_dc: &[f64],
    lambda_hfc: &[f64],
    p: usize,
    grad: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (n, c) = (x.shape.n(), x.shape.c());
    let plane = x.shape.h() * x.shape.w();
    let mean_x = tiled_mean_patch(x, p);
    let mean_g = tiled_mean_patch(grad, p);
    let mut dx = Tensor::zeros(x.shape);
    let mut ddc = Tensor::zeros(Shape([1, c, 1, 1]));
    let mut dhfc = Tensor::zeros(Shape([1, c, 1, 1]));
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * plane;
            let (ldc, lhfc) = (lambda_dc[ch], lambda_hfc[ch]);
            let (mut acc_dc, mut acc_hfc) = (0.0, 0.0);
            for i in base..base + plane {
                dx.data[i] = (1.0 + lhfc) * grad.data[i] + (ldc - lhfc) * mean_g.data[i];
                acc_dc += grad.data[i] * mean_x.data[i];
                acc_hfc += grad.data[i] * (x.data[i] - mean_x.data[i]);
            }
            ddc.data[ch] += acc_dc;
            dhfc.data[ch] += acc_hfc;
        }
    }
    (dx, ddc, dhfc)
}

/// Convenience wrapper applying Eqs. of the patch scaling to a plain tensor.
pub fn hfs_apply(x: &Tensor, params: &HfsParams) -> Result<Tensor> {
    if params.lambda_dc.len() != x.shape.c() || params.lambda_hfc.len() != x.shape.c() {
        return Err(Error::ShapeMismatch("hfs lambda length".into()));
    }
    if params.patch == 0
        || x.shape.h() % params.patch != 0
        || x.shape.w() % params.patch != 0
    {
        return Err(Error::InvalidConfig(format!(
            "patch size {} does not divide {}x{}",
            params.patch,
            x.shape.h(),
            x.shape.w()
        )));
    }
    Ok(hfs_forward(x, &params.lambda_dc, &params.lambda_hfc, params.patch))
}

/// Low/high radial frequency masks at threshold `tau` (fraction of the max
/// radial shell). A bin is low iff its shell index <= round(tau * k_max);
/// ties go to low. The two masks partition the grid exactly.
pub fn radial_low_mask(h: usize, w: usize, tau: f64) -> Vec<bool> {
    let cutoff = (tau * max_shell(h, w) as f64).round() as usize;
    let mut mask = vec![false; h * w];
    for iy in 0..h {
        for ix in 0..w {
            mask[iy * w + ix] = shell_index(iy, ix, h, w) <= cutoff;
        }
    }
    mask
}

/// Split every channel of `x` into low/high radial frequency parts.
/// Errors if the inverse transform leaves imaginary residue above 1e-6.
pub fn fourier_split(x: &Tensor, tau: f64) -> Result<(Tensor, Tensor)> {
    let (n, c, h, w) = (x.shape.n(), x.shape.c(), x.shape.h(), x.shape.w());
    let mask = radial_low_mask(h, w, tau);
    let plan = Fft2::new(h, w);
    let plane = h * w;
    let mut low = Tensor::zeros(x.shape);
    let mut high = Tensor::zeros(x.shape);
    let scale = x.data.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut buf_low = vec![Complex64::default(); plane];
    let mut buf_high = vec![Complex64::default(); plane];
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * plane;
            for i in 0..plane {
                buf_low[i] = Complex64::new(x.data[base + i], 0.0);
            }
            plan.forward(&mut buf_low);
            for i in 0..plane {
                if mask[i] {
                    buf_high[i] = Complex64::default();
                } else {
                    buf_high[i] = buf_low[i];
                    buf_low[i] = Complex64::default();
                }
            }
            plan.inverse(&mut buf_low);
            plan.inverse(&mut buf_high);
            for i in 0..plane {
                if buf_low[i].im.abs() > 1e-6 * scale || buf_high[i].im.abs() > 1e-6 * scale {
                    return Err(Error::Numerical(format!(
                        "fourier_split imaginary residue {} exceeds tolerance",
                        buf_low[i].im.abs().max(buf_high[i].im.abs())
                    )));
                }
                low.data[base + i] = buf_low[i].re;
                high.data[base + i] = buf_high[i].re;
            }
        }
    }
    Ok((low, high))
}

/// Frequency-domain scaling applied to a plain tensor.
pub fn fourier_scale_apply(x: &Tensor, params: &FourierScaleParams) -> Result<Tensor> {
    let c = x.shape.c();
    if params.lambda_low.len() != c || params.lambda_high.len() != c {
        return Err(Error::ShapeMismatch("fourier lambda length".into()));
    }
    if !(params.tau > 0.0 && params.tau < 1.0) {
        return Err(Error::InvalidConfig(format!("tau={}", params.tau)));
    }
    let (low, high) = fourier_split(x, params.tau)?;
    let plane = x.shape.h() * x.shape.w();
    let mut out = Tensor::zeros(x.shape);
    for s in 0..x.shape.n() {
        for ch in 0..c {
            let base = (s * c + ch) * plane;
            for i in base..base + plane {
                out.data[i] =
                    params.lambda_low[ch] * low.data[i] + params.lambda_high[ch] * high.data[i];
            }
        }
    }
    Ok(out)
}
