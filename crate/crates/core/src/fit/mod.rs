//! Losses, analytic LUT gradients, Adam fitting, and gradient checks.
//!
//! The training objective is `MSE + 0.4 · (1 − SSIM)` with SSIM computed
//! from whole-image statistics. Adding `0.4 · SSIM` instead would reward
//! dissimilarity under minimization; that form remains available as
//! [`LossConvention::Literal`].

mod gradcheck;
mod gradient;
mod optimize;

pub use gradcheck::{grad_check, grad_check_instance, GradCheckInstance, GradCheckReport, GradTarget, GRAD_CHECK_TOLERANCE};
pub use gradient::{
    combine_weights_gradient, loss_gradient_wrt_pred, lut_gradient, objective, smoothness_gradient,
    smoothness_penalty, LutGradient,
};
pub use optimize::{fit_lut, pair_fingerprint, write_trace_csv, FitConfig, FitMode, FitResult, Optimizer, TraceRow};

use serde::Serialize;

use crate::image::ImagePlane;
use crate::{Result, Scalar};

pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const SSIM_LOSS_WEIGHT: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum LossConvention {
    /// `MSE + w · (1 − SSIM)`.
    #[default]
    Corrected,
    /// `MSE + w · SSIM`, as literally printed.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossConfig {
    pub ssim_weight: f64,
    /// SSIM dynamic range `L`; 1.0 for `[0, 1]` images.
    pub dynamic_range: f64,
    pub convention: LossConvention,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            ssim_weight: SSIM_LOSS_WEIGHT,
            dynamic_range: 1.0,
            convention: LossConvention::Corrected,
        }
    }
}

impl LossConfig {
    pub fn combine(&self, mse: f64, ssim: f64) -> f64 {
        match self.convention {
            LossConvention::Corrected => mse + self.ssim_weight * (1.0 - ssim),
            LossConvention::Literal => mse + self.ssim_weight * ssim,
        }
    }

    /// `∂total/∂SSIM`.
    pub fn ssim_slope(&self) -> f64 {
        match self.convention {
            LossConvention::Corrected => -self.ssim_weight,
            LossConvention::Literal => self.ssim_weight,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossReport {
    pub mse: f64,
    pub ssim: f64,
    pub total: f64,
    pub n_pixels: usize,
}

/// Mean squared per-sample difference, accumulated in `f64`.
pub fn mse_loss<T: Scalar>(pred: &ImagePlane<T>, target: &ImagePlane<T>) -> Result<f64> {
    pred.check_same_shape(target, "mse_loss")?;
    let n = pred.data().len().max(1) as f64;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| {
            let d = a.to_f64_lossless() - b.to_f64_lossless();
            d * d
        })
        .sum();
    Ok(sum / n)
}

/// Whole-image statistics of one channel pair.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ChannelStats {
    pub mu_x: f64,
    pub mu_y: f64,
    pub var_x: f64,
    pub var_y: f64,
    pub cov: f64,
}

pub(crate) fn channel_stats<T: Scalar>(pred: &ImagePlane<T>, target: &ImagePlane<T>, c: usize) -> ChannelStats {
    let ch = pred.channels();
    let n = pred.pixel_count().max(1) as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    for i in 0..pred.pixel_count() {
        sx += pred.data()[i * ch + c].to_f64_lossless();
        sy += target.data()[i * ch + c].to_f64_lossless();
    }
    let (mu_x, mu_y) = (sx / n, sy / n);
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for i in 0..pred.pixel_count() {
        let dx = pred.data()[i * ch + c].to_f64_lossless() - mu_x;
        let dy = target.data()[i * ch + c].to_f64_lossless() - mu_y;
        vx += dx * dx;
        vy += dy * dy;
        cxy += dx * dy;
    }
    ChannelStats {
        mu_x,
        mu_y,
        var_x: vx / n,
        var_y: vy / n,
        cov: cxy / n,
    }
}

pub(crate) fn ssim_constants(dynamic_range: f64) -> (f64, f64) {
    ((SSIM_K1 * dynamic_range).powi(2), (SSIM_K2 * dynamic_range).powi(2))
}

pub(crate) fn ssim_from_stats(s: &ChannelStats, c1: f64, c2: f64) -> f64 {
    ((2.0 * s.mu_x * s.mu_y + c1) * (2.0 * s.cov + c2))
        / ((s.mu_x * s.mu_x + s.mu_y * s.mu_y + c1) * (s.var_x + s.var_y + c2))
}

/// SSIM from whole-image means, (population) variances and covariance,
/// computed per channel and averaged.
pub fn ssim<T: Scalar>(pred: &ImagePlane<T>, target: &ImagePlane<T>, dynamic_range: f64) -> Result<f64> {
    pred.check_same_shape(target, "ssim")?;
    if !(dynamic_range > 0.0) {
        return Err(crate::FilmError::InvalidArgument(format!(
            "dynamic range must be positive, got {dynamic_range}"
        )));
    }
    let (c1, c2) = ssim_constants(dynamic_range);
    let ch = pred.channels();
    let sum: f64 = (0..ch)
        .map(|c| ssim_from_stats(&channel_stats(pred, target, c), c1, c2))
        .sum();
    Ok(sum / ch as f64)
}

pub fn total_loss_with<T: Scalar>(pred: &ImagePlane<T>, target: &ImagePlane<T>, cfg: &LossConfig) -> Result<LossReport> {
    let mse = mse_loss(pred, target)?;
    let ssim = ssim(pred, target, cfg.dynamic_range)?;
    Ok(LossReport {
        mse,
        ssim,
        total: cfg.combine(mse, ssim),
        n_pixels: pred.pixel_count(),
    })
}

/// `MSE + 0.4 · (1 − SSIM)` with `L = 1`.
pub fn total_loss<T: Scalar>(pred: &ImagePlane<T>, target: &ImagePlane<T>) -> Result<LossReport> {
    total_loss_with(pred, target, &LossConfig::default())
}
