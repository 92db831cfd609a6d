//! Field and spectral evaluation metrics.
//!
//! DFT convention: unnormalized forward transform. The radial energy
//! spectrum is scaled by 1/(h*w) so that the shell sum satisfies Parseval
//! against the plain sum of squared field values. Band errors use the raw
//! forward transform.

use crate::fft::{fft2_real, max_shell, shell_index};
use crate::tensor::Tensor;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Radial frequency bands as fractions of the maximum shell index.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BandSpec {
    pub low_fraction: f64,
    pub mid_fraction: f64,
}

impl Default for BandSpec {
    fn default() -> Self {
        // low = first 2% of shells, mid = first 6.2% excluding low
        BandSpec {
            low_fraction: 0.02,
            mid_fraction: 0.042,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Band {
    Low,
    Mid,
    High,
}

impl BandSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.low_fraction > 0.0
            && self.mid_fraction > 0.0
            && self.low_fraction + self.mid_fraction < 1.0)
        {
            return Err(Error::InvalidConfig(format!(
                "band fractions low={}, mid={}",
                self.low_fraction, self.mid_fraction
            )));
        }
        Ok(())
    }

    /// Band of every frequency bin; the three bands partition the grid.
    pub fn masks(&self, h: usize, w: usize) -> Vec<Band> {
        let kmax = max_shell(h, w) as f64;
        let low_cut = (self.low_fraction * kmax).round() as usize;
        let mid_cut = ((self.low_fraction + self.mid_fraction) * kmax).round() as usize;
        let mut out = vec![Band::High; h * w];
        for iy in 0..h {
            for ix in 0..w {
                let s = shell_index(iy, ix, h, w);
                out[iy * w + ix] = if s <= low_cut {
                    Band::Low
                } else if s <= mid_cut {
                    Band::Mid
                } else {
                    Band::High
                };
            }
        }
        out
    }
}

/// All evaluation quantities, averaged over samples and prediction steps.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rel_error: f64,
    pub rmse: f64,
    pub brmse: f64,
    pub bubble_rmse: Option<f64>,
    pub max_mean: f64,
    pub max_max: f64,
    pub f_low: f64,
    pub f_mid: f64,
    pub f_high: f64,
    pub e_f_total: f64,
    pub e_f_low: f64,
    pub e_f_mid: f64,
    pub e_f_high: f64,
    pub rel_e_f_total: f64,
    pub rel_e_f_high: f64,
}

impl MetricsReport {
    pub fn csv_header() -> &'static str {
        "rel_error,rmse,brmse,bubble_rmse,max_mean,max_max,f_low,f_mid,f_high,\
         e_f_total,e_f_low,e_f_mid,e_f_high,rel_e_f_total,rel_e_f_high"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.rel_error,
            self.rmse,
            self.brmse,
            self.bubble_rmse.map_or(String::new(), |v| v.to_string()),
            self.max_mean,
            self.max_max,
            self.f_low,
            self.f_mid,
            self.f_high,
            self.e_f_total,
            self.e_f_low,
            self.e_f_mid,
            self.e_f_high,
            self.rel_e_f_total,
            self.rel_e_f_high,
        )
    }
}

impl std::fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "rel_error   {:>12.6}", self.rel_error)?;
        writeln!(f, "rmse        {:>12.6}", self.rmse)?;
        writeln!(f, "brmse       {:>12.6}", self.brmse)?;
        if let Some(b) = self.bubble_rmse {
            writeln!(f, "bubble_rmse {b:>12.6}")?;
        }
        writeln!(f, "max_mean    {:>12.6}", self.max_mean)?;
        writeln!(f, "max_max     {:>12.6}", self.max_max)?;
        writeln!(f, "F_low       {:>12.6}", self.f_low)?;
        writeln!(f, "F_mid       {:>12.6}", self.f_mid)?;
        writeln!(f, "F_high      {:>12.6}", self.f_high)?;
        writeln!(f, "E_F_total   {:>12.6}", self.e_f_total)?;
        writeln!(f, "E_F_low     {:>12.6}", self.e_f_low)?;
        writeln!(f, "E_F_mid     {:>12.6}", self.e_f_mid)?;
        writeln!(f, "E_F_high    {:>12.6}", self.e_f_high)?;
        writeln!(f, "RelE_F      {:>12.6}", self.rel_e_f_total)?;
        write!(f, "RelE_F_high {:>12.6}", self.rel_e_f_high)
    }
}

fn check_shapes(pred: &Tensor, truth: &Tensor) -> Result<()> {
    if pred.shape != truth.shape {
        return Err(Error::ShapeMismatch(format!(
            "pred {} vs truth {}",
            pred.shape, truth.shape
        )));
    }
    Ok(())
}

pub fn rmse(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    check_shapes(pred, truth)?;
    let sum: f64 = pred
        .data
        .iter()
        .zip(&truth.data)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok((sum / pred.numel() as f64).sqrt())
}

/// Per-sample L2 relative error, averaged over the batch.
pub fn rel_error(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    check_shapes(pred, truth)?;
    let n = pred.shape.n();
    let per = pred.numel() / n;
    let mut acc = 0.0;
    for s in 0..n {
        let (mut num, mut den) = (0.0, 0.0);
        for i in s * per..(s + 1) * per {
            let d = pred.data[i] - truth.data[i];
            num += d * d;
            den += truth.data[i] * truth.data[i];
        }
        if den == 0.0 {
            return Err(Error::Numerical("rel_error: zero-norm truth".into()));
        }
        acc += (num / den).sqrt();
    }
    Ok(acc / n as f64)
}

/// Mean over samples of the per-sample maximum absolute error.
pub fn max_mean(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    check_shapes(pred, truth)?;
    let n = pred.shape.n();
    let per = pred.numel() / n;
    let mut acc = 0.0;
    for s in 0..n {
        let m = pred.data[s * per..(s + 1) * per]
            .iter()
            .zip(&truth.data[s * per..(s + 1) * per])
            .map(|(p, t)| (p - t).abs())
            .fold(0.0f64, f64::max);
        acc += m;
    }
    Ok(acc / n as f64)
}

pub fn max_max(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    check_shapes(pred, truth)?;
    Ok(pred
        .data
        .iter()
        .zip(&truth.data)
        .map(|(p, t)| (p - t).abs())
        .fold(0.0f64, f64::max))
}

/// RMSE restricted to the 1-pixel boundary frame; corners counted once.
pub fn brmse(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    check_shapes(pred, truth)?;
    let (n, c, h, w) = (
        pred.shape.n(),
        pred.shape.c(),
        pred.shape.h(),
        pred.shape.w(),
    );
    if h < 2 || w < 2 {
        return Err(Error::ShapeMismatch("brmse needs h, w >= 2".into()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for s in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    if y == 0 || y == h - 1 || x == 0 || x == w - 1 {
                        let d = pred.at(s, ch, y, x) - truth.at(s, ch, y, x);
                        sum += d * d;
                        count += 1;
                    }
                }
            }
        }
    }
    debug_assert_eq!(count, n * c * (2 * h + 2 * w - 4));
    Ok((sum / count as f64).sqrt())
}

/// RMSE over masked cells; the (h, w) mask applies to every sample/channel.
pub fn masked_rmse(pred: &Tensor, truth: &Tensor, mask: &[bool]) -> Result<f64> {
    check_shapes(pred, truth)?;
    let (n, c, h, w) = (
        pred.shape.n(),
        pred.shape.c(),
        pred.shape.h(),
        pred.shape.w(),
    );
    if mask.len() != h * w {
        return Err(Error::ShapeMismatch("mask size".into()));
    }
    if !mask.iter().any(|m| *m) {
        return Err(Error::InvalidConfig("empty mask".into()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for s in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    if mask[y * w + x] {
                        let d = pred.at(s, ch, y, x) - truth.at(s, ch, y, x);
                        sum += d * d;
                        count += 1;
                    }
                }
            }
        }
    }
    Ok((sum / count as f64).sqrt())
}

/// Radial energy spectrum p(k) of a real 2D field. Scaled so the shell sum
/// equals the sum of squared field values (Parseval).
pub fn energy_spectrum(field: &[f64], h: usize, w: usize) -> Vec<f64> {
    let coeffs = fft2_real(field, h, w);
    let mut shells = vec![0.0; max_shell(h, w) + 1];
    let norm = 1.0 / (h * w) as f64;
    for iy in 0..h {
        for ix in 0..w {
            let s = shell_index(iy, ix, h, w);
            shells[s] += coeffs[iy * w + ix].norm_sqr() * norm;
        }
    }
    shells
}

/// Spectral error per band: RMS of the complex DFT difference restricted to
/// each band's bins (averaging over the band's bin count).
pub fn f_band_error(
    pred: &[f64],
    truth: &[f64],
    h: usize,
    w: usize,
    bands: &BandSpec,
) -> (f64, f64, f64) {
    let fp = fft2_real(pred, h, w);
    let ft = fft2_real(truth, h, w);
    let masks = bands.masks(h, w);
    let mut sums = [0.0f64; 3];
    let mut counts = [0usize; 3];
    for i in 0..h * w {
        let b = match masks[i] {
            Band::Low => 0,
            Band::Mid => 1,
            Band::High => 2,
        };
        sums[b] += (ft[i] - fp[i]).norm_sqr();
        counts[b] += 1;
    }
    let v = |b: usize| {
        if counts[b] == 0 {
            0.0
        } else {
            (sums[b] / counts[b] as f64).sqrt()
        }
    };
    (v(0), v(1), v(2))
}

/// Energy spectrum misalignment per band plus the full-grid value:
/// RMS over band bins of the difference of squared DFT magnitudes.
pub fn spectrum_band_error(
    pred: &[f64],
    truth: &[f64],
    h: usize,
    w: usize,
    bands: &BandSpec,
) -> (f64, f64, f64, f64) {
    let fp = fft2_real(pred, h, w);
    let ft = fft2_real(truth, h, w);
    let masks = bands.masks(h, w);
    let mut sums = [0.0f64; 3];
    let mut counts = [0usize; 3];
    let mut total = 0.0;
    for i in 0..h * w {
        let d = ft[i].norm_sqr() - fp[i].norm_sqr();
        total += d * d;
        let b = match masks[i] {
            Band::Low => 0,
            Band::Mid => 1,
            Band::High => 2,
        };
        sums[b] += d * d;
        counts[b] += 1;
    }
    let v = |b: usize| {
        if counts[b] == 0 {
            0.0
        } else {
            (sums[b] / counts[b] as f64).sqrt()
        }
    };
    (v(0), v(1), v(2), (total / (h * w) as f64).sqrt())
}

/// Ratio of energy above the cutoff shell to total non-DC energy. A field
/// with no non-DC energy reports 0.
pub fn hf_energy_ratio(field: &[f64], h: usize, w: usize, cutoff_fraction: f64) -> Result<f64> {
    if !(cutoff_fraction > 0.0 && cutoff_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "cutoff_fraction {cutoff_fraction}"
        )));
    }
    let shells = energy_spectrum(field, h, w);
    let cutoff = (cutoff_fraction * (shells.len() - 1) as f64).round() as usize;
    let total: f64 = shells[1..].iter().sum();
    if total == 0.0 {
        return Ok(0.0);
    }
    let high: f64 = shells[cutoff + 1..].iter().sum();
    Ok(high / total)
}

/// Full report for a batch of predictions: spectral quantities are computed
/// per (sample, step) slice and averaged.
pub fn compute_report(
    pred: &Tensor,
    truth: &Tensor,
    bands: &BandSpec,
    bubble_mask: Option<&[bool]>,
) -> Result<MetricsReport> {
    check_shapes(pred, truth)?;
    bands.validate()?;
    let (n, c, h, w) = (
        pred.shape.n(),
        pred.shape.c(),
        pred.shape.h(),
        pred.shape.w(),
    );
    let mut report = MetricsReport {
        rel_error: rel_error(pred, truth)?,
        rmse: rmse(pred, truth)?,
        brmse: brmse(pred, truth)?,
        bubble_rmse: match bubble_mask {
            Some(m) => Some(masked_rmse(pred, truth, m)?),
            None => None,
        },
        max_mean: max_mean(pred, truth)?,
        max_max: max_max(pred, truth)?,
        ..Default::default()
    };
    let plane = h * w;
    let slices = n * c;
    let mut truth_e_rms_total = 0.0;
    let mut truth_e_rms_high = 0.0;
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * plane;
            let p = &pred.data[base..base + plane];
            let t = &truth.data[base..base + plane];
            let (fl, fm, fh) = f_band_error(p, t, h, w, bands);
            report.f_low += fl;
            report.f_mid += fm;
            report.f_high += fh;
            let (el, em, eh, et) = spectrum_band_error(p, t, h, w, bands);
            report.e_f_low += el;
            report.e_f_mid += em;
            report.e_f_high += eh;
            report.e_f_total += et;
            // truth band-energy RMS for the relative variants
            let (rl, rm, rh, rt) = spectrum_band_error(&vec![0.0; plane], t, h, w, bands);
            let _ = (rl, rm);
            truth_e_rms_high += rh;
            truth_e_rms_total += rt;
        }
    }
    let inv = 1.0 / slices as f64;
    for v in [
        &mut report.f_low,
        &mut report.f_mid,
        &mut report.f_high,
        &mut report.e_f_low,
        &mut report.e_f_mid,
        &mut report.e_f_high,
        &mut report.e_f_total,
    ] {
        *v *= inv;
    }
    truth_e_rms_total *= inv;
    truth_e_rms_high *= inv;
    report.rel_e_f_total = if truth_e_rms_total > 0.0 {
        report.e_f_total / truth_e_rms_total
    } else {
        0.0
    };
    report.rel_e_f_high = if truth_e_rms_high > 0.0 {
        report.e_f_high / truth_e_rms_high
    } else {
        0.0
    };
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use rand::{Rng, SeedableRng};

    fn rand_tensor(shape: Shape, seed: u64) -> Tensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tensor::zeros(shape);
        for v in &mut t.data {
            *v = rng.gen_range(-1.0..1.0);
        }
        t
    }

    #[test]
    fn identical_fields_give_zero_errors() {
        let t = rand_tensor(Shape([2, 3, 8, 8]), 1);
        assert_eq!(rmse(&t, &t).unwrap(), 0.0);
        assert_eq!(rel_error(&t, &t).unwrap(), 0.0);
        assert_eq!(max_mean(&t, &t).unwrap(), 0.0);
        assert_eq!(max_max(&t, &t).unwrap(), 0.0);
        assert_eq!(brmse(&t, &t).unwrap(), 0.0);
    }

    #[test]
    fn uniform_offset_values() {
        let t = rand_tensor(Shape([2, 2, 6, 6]), 2);
        let mut p = t.clone();
        for v in &mut p.data {
            *v += 0.1;
        }
        assert!((rmse(&p, &t).unwrap() - 0.1).abs() < 1e-12);
        assert!((max_max(&p, &t).unwrap() - 0.1).abs() < 1e-12);
        assert!((brmse(&p, &t).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn field_metrics_match_loop_oracle() {
        let t = rand_tensor(Shape([3, 2, 5, 7]), 3);
        let p = rand_tensor(Shape([3, 2, 5, 7]), 4);
        // loop-based rmse
        let mut sum = 0.0;
        for i in 0..t.numel() {
            let d = p.data[i] - t.data[i];
            sum += d * d;
        }
        let expect = (sum / t.numel() as f64).sqrt();
        assert!((rmse(&p, &t).unwrap() - expect).abs() < 1e-12);
        // loop-based brmse over explicit edges
        let (h, w) = (5, 7);
        let mut sum = 0.0;
        let mut cnt = 0;
        for s in 0..3 {
            for c in 0..2 {
                for y in 0..h {
                    for x in 0..w {
                        if y == 0 || y == h - 1 || x == 0 || x == w - 1 {
                            let d = p.at(s, c, y, x) - t.at(s, c, y, x);
                            sum += d * d;
                            cnt += 1;
                        }
                    }
                }
            }
        }
        let expect = (sum / cnt as f64).sqrt();
        assert!((brmse(&p, &t).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn brmse_ignores_interior() {
        let t = Tensor::zeros(Shape([1, 1, 4, 4]));
        let mut p = t.clone();
        *p.at_mut(0, 0, 1, 1) = 10.0;
        *p.at_mut(0, 0, 2, 2) = -3.0;
        assert_eq!(brmse(&p, &t).unwrap(), 0.0);
    }

    #[test]
    fn masked_rmse_semantics() {
        let t = Tensor::zeros(Shape([1, 1, 3, 3]));
        let mut p = t.clone();
        *p.at_mut(0, 0, 1, 1) = 2.0;
        // full mask equals rmse
        let full = vec![true; 9];
        assert!((masked_rmse(&p, &t, &full).unwrap() - rmse(&p, &t).unwrap()).abs() < 1e-15);
        // single cell
        let mut single = vec![false; 9];
        single[4] = true;
        assert_eq!(masked_rmse(&p, &t, &single).unwrap(), 2.0);
        // empty mask is an error
        assert!(masked_rmse(&p, &t, &vec![false; 9]).is_err());
    }

    #[test]
    fn spectrum_constant_field_all_in_shell_zero() {
        let field = vec![2.5; 64];
        let shells = energy_spectrum(&field, 8, 8);
        assert!(shells[0] > 0.0);
        assert!(shells[1..].iter().all(|v| *v < 1e-20));
    }

    #[test]
    fn spectrum_sinusoid_concentrates_in_shell() {
        let (h, w) = (16, 16);
        let mut field = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                field[y * w + x] =
                    (2.0 * std::f64::consts::PI * 5.0 * x as f64 / w as f64).sin();
            }
        }
        let shells = energy_spectrum(&field, h, w);
        let non_dc: f64 = shells[1..].iter().sum();
        assert!(shells[5] / non_dc >= 0.999);
    }

    #[test]
    fn spectrum_parseval() {
        let t = rand_tensor(Shape([1, 1, 12, 12]), 5);
        let shells = energy_spectrum(&t.data, 12, 12);
        let lhs: f64 = shells.iter().sum();
        let rhs: f64 = t.data.iter().map(|v| v * v).sum();
        assert!((lhs - rhs).abs() < 1e-10 * rhs.max(1.0));
    }

    #[test]
    fn spectrum_invariant_to_cyclic_shift() {
        let t = rand_tensor(Shape([1, 1, 8, 8]), 6);
        let mut shifted = vec![0.0; 64];
        for y in 0..8 {
            for x in 0..8 {
                shifted[((y + 3) % 8) * 8 + (x + 5) % 8] = t.data[y * 8 + x];
            }
        }
        let a = energy_spectrum(&t.data, 8, 8);
        let b = energy_spectrum(&shifted, 8, 8);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn band_errors_zero_for_identical() {
        let t = rand_tensor(Shape([1, 1, 16, 16]), 7);
        let bands = BandSpec::default();
        let (l, m, h) = f_band_error(&t.data, &t.data, 16, 16, &bands);
        assert_eq!((l, m, h), (0.0, 0.0, 0.0));
        let (el, em, eh, et) = spectrum_band_error(&t.data, &t.data, 16, 16, &bands);
        assert_eq!((el, em, eh, et), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn band_separation_low_only_perturbation() {
        let (h, w) = (32, 32);
        let truth = rand_tensor(Shape([1, 1, h, w]), 8);
        // perturb only shell 0 (constant offset): lands in the low band
        let mut pred = truth.clone();
        for v in &mut pred.data {
            *v += 0.5;
        }
        let bands = BandSpec {
            low_fraction: 0.1,
            mid_fraction: 0.2,
        };
        let (l, m, hi) = f_band_error(&pred.data, &truth.data, h, w, &bands);
        // a constant offset perturbs shell 0 only; FFT rounding leaks O(eps)
        assert!(l > 1e-3);
        assert!(m < 1e-12, "{m}");
        assert!(hi < 1e-12, "{hi}");
    }

    #[test]
    fn band_recombination_matches_full_grid_rms() {
        let (h, w) = (16, 16);
        let truth = rand_tensor(Shape([1, 1, h, w]), 9);
        let pred = rand_tensor(Shape([1, 1, h, w]), 10);
        let bands = BandSpec::default();
        let masks = bands.masks(h, w);
        let counts = [
            masks.iter().filter(|b| **b == Band::Low).count(),
            masks.iter().filter(|b| **b == Band::Mid).count(),
            masks.iter().filter(|b| **b == Band::High).count(),
        ];
        assert_eq!(counts.iter().sum::<usize>(), h * w);
        let (l, m, hi) = f_band_error(&pred.data, &truth.data, h, w, &bands);
        let combined = ((counts[0] as f64 * l * l
            + counts[1] as f64 * m * m
            + counts[2] as f64 * hi * hi)
            / (h * w) as f64)
            .sqrt();
        // full-grid spectral rmse via brute-force DFT difference
        let fp = fft2_real(&pred.data, h, w);
        let ft = fft2_real(&truth.data, h, w);
        let full = (fp
            .iter()
            .zip(&ft)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            / (h * w) as f64)
            .sqrt();
        assert!((combined - full).abs() < 1e-10 * full.max(1.0));
    }

    #[test]
    fn phase_shift_gives_zero_ef_but_nonzero_rmse() {
        let (h, w) = (16, 16);
        let mut truth = Tensor::zeros(Shape([1, 1, h, w]));
        let mut pred = Tensor::zeros(Shape([1, 1, h, w]));
        for y in 0..h {
            for x in 0..w {
                let arg = 2.0 * std::f64::consts::PI * 3.0 * x as f64 / w as f64;
                *truth.at_mut(0, 0, y, x) = arg.sin();
                *pred.at_mut(0, 0, y, x) = (arg + 1.0).sin(); // shifted phase
            }
        }
        let bands = BandSpec::default();
        let (el, em, eh, et) = spectrum_band_error(&pred.data, &truth.data, h, w, &bands);
        assert!(et < 1e-9, "E_F should be phase-blind, got {et}");
        assert!(el < 1e-9 && em < 1e-9 && eh < 1e-9);
        assert!(rmse(&pred, &truth).unwrap() > 0.1);
    }

    #[test]
    fn f_band_matches_brute_force_loop() {
        let (h, w) = (12, 12);
        let truth = rand_tensor(Shape([1, 1, h, w]), 11);
        let pred = rand_tensor(Shape([1, 1, h, w]), 12);
        // fractions wide enough that every band holds bins on a 12x12 grid
        let bands = BandSpec { low_fraction: 0.1, mid_fraction: 0.2 };
        let masks = bands.masks(h, w);
        let fp = fft2_real(&pred.data, h, w);
        let ft = fft2_real(&truth.data, h, w);
        let mut sums = [0.0f64; 3];
        let mut counts = [0usize; 3];
        for i in 0..h * w {
            let b = match masks[i] {
                Band::Low => 0,
                Band::Mid => 1,
                Band::High => 2,
            };
            sums[b] += (ft[i] - fp[i]).norm_sqr();
            counts[b] += 1;
        }
        let (l, m, hi) = f_band_error(&pred.data, &truth.data, h, w, &bands);
        assert!((l - (sums[0] / counts[0] as f64).sqrt()).abs() < 1e-10);
        assert!((m - (sums[1] / counts[1] as f64).sqrt()).abs() < 1e-10);
        assert!((hi - (sums[2] / counts[2] as f64).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn hf_ratio_edges() {
        // constant field: no non-DC energy
        let field = vec![1.0; 64];
        assert_eq!(hf_energy_ratio(&field, 8, 8, 0.5).unwrap(), 0.0);
        // sinusoid above cutoff
        let (h, w) = (16, 16);
        let mut field = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                field[y * w + x] =
                    (2.0 * std::f64::consts::PI * 7.0 * x as f64 / w as f64).sin();
            }
        }
        let r = hf_energy_ratio(&field, h, w, 0.25).unwrap();
        assert!((r - 1.0).abs() < 1e-9);
    }

    #[test]
    fn batch_permutation_invariance() {
        let t = rand_tensor(Shape([3, 1, 8, 8]), 13);
        let p = rand_tensor(Shape([3, 1, 8, 8]), 14);
        let permute = |x: &Tensor| {
            let mut out = Tensor::zeros(x.shape);
            let per = 64;
            let order = [2usize, 0, 1];
            for (dst, src) in order.iter().enumerate() {
                out.data[dst * per..(dst + 1) * per]
                    .copy_from_slice(&x.data[src * per..(src + 1) * per]);
            }
            out
        };
        let r1 = compute_report(&p, &t, &BandSpec::default(), None).unwrap();
        let r2 = compute_report(&permute(&p), &permute(&t), &BandSpec::default(), None).unwrap();
        assert!((r1.rmse - r2.rmse).abs() < 1e-12);
        assert!((r1.rel_error - r2.rel_error).abs() < 1e-12);
        assert!((r1.f_high - r2.f_high).abs() < 1e-12);
    }
}
