//! PSNR, SSIM (global and 11×11 Gaussian-windowed), and CIE76 ΔE.

use serde::{Serialize, Serializer};

use crate::fit::{mse_loss, ssim, ssim_constants};
use crate::image::{srgb_to_lab, ImagePlane};
use crate::{FilmError, Result, Scalar};

pub const WINDOW: usize = 11;
pub const WINDOW_SIGMA: f64 = 1.5;

/// `10 log10(peak² / mse)`; `+∞` when `mse` is zero.
pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

pub fn psnr<T: Scalar>(pred: &ImagePlane<T>, target: &ImagePlane<T>, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(FilmError::InvalidArgument(format!("peak must be positive, got {peak}")));
    }
    Ok(psnr_from_mse(mse_loss(pred, target)?, peak))
}

/// Per-pixel CIE76 distances after converting both images to CIELAB.
pub fn delta_e_map<T: Scalar>(pred: &ImagePlane<T>, target: &ImagePlane<T>) -> Result<Vec<f64>> {
    pred.require_rgb()?;
    pred.check_same_shape(target, "delta_e")?;
    Ok(pred
        .pixels()
        .zip(target.pixels())
        .map(|(a, b)| {
            let la = srgb_to_lab([a[0], a[1], a[2]].map(|v| v.to_f64_lossless()));
            let lb = srgb_to_lab([b[0], b[1], b[2]].map(|v| v.to_f64_lossless()));
            la.delta_e(&lb)
        })
        .collect())
}

/// Mean and nearest-rank 95th percentile of per-pixel ΔE.
pub fn delta_e<T: Scalar>(pred: &ImagePlane<T>, target: &ImagePlane<T>) -> Result<(f64, f64)> {
    let mut d = delta_e_map(pred, target)?;
    if d.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    d.sort_by(f64::total_cmp);
    let rank = ((0.95 * d.len() as f64).ceil() as usize).max(1);
    Ok((mean, d[rank - 1]))
}

fn gaussian_window() -> Vec<f64> {
    let half = (WINDOW / 2) as f64;
    let w: Vec<f64> = (0..WINDOW)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filter of a single-channel `f64` field.
fn filter_valid(field: &[f64], h: usize, w: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let ow = w - n + 1;
    let oh = h - n + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|t| k[t] * field[y * w + x + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|t| k[t] * rows[(y + t) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean SSIM over all fully-covered 11×11 Gaussian (σ = 1.5) windows,
/// averaged across channels.
pub fn ssim_windowed<T: Scalar>(pred: &ImagePlane<T>, target: &ImagePlane<T>, peak: f64) -> Result<f64> {
    pred.check_same_shape(target, "ssim_windowed")?;
    if pred.height() < WINDOW || pred.width() < WINDOW {
        return Err(FilmError::DimensionMismatch(format!(
            "windowed SSIM needs at least {WINDOW}x{WINDOW}, got {}x{}",
            pred.height(),
            pred.width()
        )));
    }
    let (c1, c2) = ssim_constants(peak);
    let k = gaussian_window();
    let (h, w, ch) = (pred.height(), pred.width(), pred.channels());
    let mut total = 0.0;
    for c in 0..ch {
        let x: Vec<f64> = pred.pixels().map(|p| p[c].to_f64_lossless()).collect();
        let y: Vec<f64> = target.pixels().map(|p| p[c].to_f64_lossless()).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let (mx, oh, ow) = filter_valid(&x, h, w, &k);
        let (my, _, _) = filter_valid(&y, h, w, &k);
        let (sxx, _, _) = filter_valid(&xx, h, w, &k);
        let (syy, _, _) = filter_valid(&yy, h, w, &k);
        let (sxy, _, _) = filter_valid(&xy, h, w, &k);
        let mut sum = 0.0;
        for i in 0..oh * ow {
            let vx = sxx[i] - mx[i] * mx[i];
            let vy = syy[i] - my[i] * my[i];
            let cov = sxy[i] - mx[i] * my[i];
            sum += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2))
                / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
        }
        total += sum / (oh * ow) as f64;
    }
    Ok(total / ch as f64)
}

fn serialize_psnr<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricReport {
    /// `+∞` (serialized as `"inf"`) for identical images.
    #[serde(serialize_with = "serialize_psnr")]
    pub psnr: f64,
    pub ssim_global: f64,
    /// `None` for images smaller than the window.
    pub ssim_windowed: Option<f64>,
    pub delta_e_mean: f64,
    pub delta_e_p95: f64,
}

impl MetricReport {
    pub fn csv_header() -> &'static str {
        "psnr,ssim_global,ssim_windowed,delta_e_mean,delta_e_p95"
    }

    pub fn csv_row(&self) -> String {
        let psnr = if self.psnr.is_infinite() { "inf".to_string() } else { self.psnr.to_string() };
        let win = self.ssim_windowed.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{psnr},{},{win},{},{}",
            self.ssim_global, self.delta_e_mean, self.delta_e_p95
        )
    }
}

/// All metrics at once. `peak` is both the PSNR peak and the SSIM dynamic
/// range; images are expected in `[0, peak]`, and ΔE always sees them
/// rescaled to `[0, 1]`.
pub fn evaluate<T: Scalar>(pred: &ImagePlane<T>, target: &ImagePlane<T>, peak: f64) -> Result<MetricReport> {
    let psnr = psnr(pred, target, peak)?;
    let ssim_global = ssim(pred, target, peak)?;
    let ssim_windowed = match ssim_windowed(pred, target, peak) {
        Ok(v) => Some(v),
        Err(FilmError::DimensionMismatch(_)) if pred.same_shape(target) => None,
        Err(e) => return Err(e),
    };
    let inv = T::lit(1.0 / peak);
    let (delta_e_mean, delta_e_p95) = delta_e(&pred.scale(inv), &target.scale(inv))?;
    Ok(MetricReport {
        psnr,
        ssim_global,
        ssim_windowed,
        delta_e_mean,
        delta_e_p95,
    })
}
