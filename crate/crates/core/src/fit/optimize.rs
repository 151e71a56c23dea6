use std::io::Write;

use serde::Serialize;

use super::{lut_gradient, LossConfig};
use crate::image::ImagePlane;
use crate::lut::{apply_lut, Lut3D};
use crate::metrics::psnr_from_mse;
use crate::rng::SplitMix64;
use crate::{FilmError, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FitMode {
    /// One update per iteration from the gradient averaged over all training pairs.
    FullBatch,
    /// One update per training pair per iteration, in a seeded shuffled order.
    Shuffled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Optimizer {
    /// Adam with β₁ = 0.9, β₂ = 0.999, ε = 1e−8.
    Adam,
    /// Plain gradient descent.
    GradientDescent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitConfig {
    pub iterations: usize,
    pub step_size: f64,
    pub bins: usize,
    pub smoothness_weight: f64,
    pub seed: u64,
    pub holdout_fraction: f64,
    pub mode: FitMode,
    pub optimizer: Optimizer,
    pub loss: LossConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            step_size: 1e-4,
            bins: crate::lut::DEFAULT_BINS,
            smoothness_weight: 1e-4,
            seed: 0,
            holdout_fraction: 0.0,
            mode: FitMode::FullBatch,
            optimizer: Optimizer::Adam,
            loss: LossConfig::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FilmError::InvalidArgument(m));
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return bad(format!("step size must be positive, got {}", self.step_size));
        }
        if self.bins < 2 {
            return bad(format!("bins must be at least 2, got {}", self.bins));
        }
        if !(self.smoothness_weight >= 0.0) {
            return bad(format!("smoothness weight must be non-negative, got {}", self.smoothness_weight));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad(format!("holdout fraction must be in [0, 1), got {}", self.holdout_fraction));
        }
        Ok(())
    }
}

/// One row of the training trace. Loss columns are the training-pair
/// averages seen during the iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub mse: f64,
    pub ssim: f64,
    pub total: f64,
    pub holdout_psnr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FitResult<T> {
    pub lut: Lut3D<T>,
    pub trace: Vec<TraceRow>,
    /// Worker threads available during the fit; the result does not depend on it.
    pub threads: usize,
    /// Positions (in the caller's order) of the pairs held out from training.
    pub holdout: Vec<usize>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g;
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + Self::EPS);
        }
    }
}

/// FNV-1a over shape and sample bits; fixes a canonical pair order.
pub fn pair_fingerprint<T: Scalar>(input: &ImagePlane<T>, target: &ImagePlane<T>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |v: u64| {
        for b in v.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    for img in [input, target] {
        eat(img.height() as u64);
        eat(img.width() as u64);
        eat(img.channels() as u64);
        for &v in img.data() {
            eat(v.to_f64_lossless().to_bits());
        }
    }
    h
}

fn to_lut<T: Scalar>(bins: usize, params: &[f64]) -> Result<Lut3D<T>> {
    Lut3D::from_flat(bins, &params.iter().map(|&v| T::lit(v)).collect::<Vec<_>>())
}

fn holdout_psnr<T: Scalar>(lut: &Lut3D<T>, pairs: &[(&ImagePlane<T>, &ImagePlane<T>)]) -> Result<Option<f64>> {
    if pairs.is_empty() {
        return Ok(None);
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for (input, target) in pairs {
        let pred = apply_lut(lut, input)?.clamp01();
        for (&a, &b) in pred.data().iter().zip(target.data()) {
            sum += (a.to_f64_lossless() - b.to_f64_lossless()).powi(2);
        }
        n += pred.data().len();
    }
    Ok(Some(psnr_from_mse(sum / n as f64, 1.0)))
}

/// Fits a LUT starting from the identity.
///
/// Pairs are first put in a canonical content-derived order, so the result
/// does not depend on the order they are passed in. The holdout subset is
/// drawn from that order with `cfg.seed`, never used for updates, and
/// evaluated after every iteration.
pub fn fit_lut<T: Scalar>(pairs: &[(ImagePlane<T>, ImagePlane<T>)], cfg: &FitConfig) -> Result<FitResult<T>> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(FilmError::InvalidArgument("fit_lut needs at least one pair".into()));
    }
    for (i, (a, b)) in pairs.iter().enumerate() {
        a.require_rgb()?;
        a.check_same_shape(b, &format!("pair {i}"))?;
    }

    let mut order: Vec<(u64, usize)> = pairs
        .iter()
        .enumerate()
        .map(|(i, (a, b))| (pair_fingerprint(a, b), i))
        .collect();
    order.sort_unstable();
    let mut canonical: Vec<usize> = order.into_iter().map(|(_, i)| i).collect();

    let mut rng = SplitMix64::new(cfg.seed);
    let n_hold = ((pairs.len() as f64 * cfg.holdout_fraction).floor() as usize).min(pairs.len() - 1);
    let mut holdout = Vec::new();
    if n_hold > 0 {
        rng.shuffle(&mut canonical);
        holdout = canonical.drain(..n_hold).collect();
        // training order stays content-derived
        canonical.sort_unstable_by_key(|&i| pair_fingerprint(&pairs[i].0, &pairs[i].1));
    }
    let train: Vec<(&ImagePlane<T>, &ImagePlane<T>)> = canonical.iter().map(|&i| (&pairs[i].0, &pairs[i].1)).collect();
    let held: Vec<(&ImagePlane<T>, &ImagePlane<T>)> = holdout.iter().map(|&i| (&pairs[i].0, &pairs[i].1)).collect();

    let mut params: Vec<f64> = Lut3D::<f64>::identity(cfg.bins)?.flat();
    let mut adam = Adam::new(params.len());
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut flat_grad = vec![0.0; params.len()];

    for it in 0..cfg.iterations {
        let mut row = TraceRow {
            iteration: it,
            mse: 0.0,
            ssim: 0.0,
            total: 0.0,
            holdout_psnr: None,
        };
        let batches: Vec<Vec<(&ImagePlane<T>, &ImagePlane<T>)>> = match cfg.mode {
            FitMode::FullBatch => vec![train.clone()],
            FitMode::Shuffled => {
                let mut idx: Vec<usize> = (0..train.len()).collect();
                rng.shuffle(&mut idx);
                idx.into_iter().map(|i| vec![train[i]]).collect()
            }
        };
        let share = 1.0 / batches.len() as f64;
        for batch in &batches {
            let lut = to_lut::<T>(cfg.bins, &params)?;
            let g = lut_gradient(&lut, batch, &cfg.loss, cfg.smoothness_weight)?;
            if !g.objective.is_finite() || g.grad.iter().flatten().any(|v| !v.is_finite()) {
                return Err(FilmError::NonFiniteLoss { iteration: it, trace });
            }
            row.mse += g.report.mse * share;
            row.ssim += g.report.ssim * share;
            row.total += g.report.total * share;
            for (dst, src) in flat_grad.chunks_exact_mut(3).zip(&g.grad) {
                dst.copy_from_slice(src);
            }
            match cfg.optimizer {
                Optimizer::Adam => adam.step(&mut params, &flat_grad, cfg.step_size),
                Optimizer::GradientDescent => {
                    for (p, g) in params.iter_mut().zip(&flat_grad) {
                        *p -= cfg.step_size * g;
                    }
                }
            }
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(FilmError::NonFiniteLoss { iteration: it, trace });
        }
        row.holdout_psnr = holdout_psnr(&to_lut::<T>(cfg.bins, &params)?, &held)?;
        trace.push(row);
    }

    Ok(FitResult {
        lut: to_lut(cfg.bins, &params)?,
        trace,
        threads: rayon::current_num_threads(),
        holdout,
    })
}

/// CSV with header `iteration,mse,ssim,total,holdout_psnr`; a missing
/// holdout is an empty field and a perfect one is `inf`.
pub fn write_trace_csv<W: Write>(trace: &[TraceRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "iteration,mse,ssim,total,holdout_psnr")?;
    for r in trace {
        let psnr = match r.holdout_psnr {
            None => String::new(),
            Some(p) if p.is_infinite() => "inf".into(),
            Some(p) => format!("{p}"),
        };
        writeln!(out, "{},{},{},{},{}", r.iteration, r.mse, r.ssim, r.total, psnr)?;
    }
    Ok(())
}
