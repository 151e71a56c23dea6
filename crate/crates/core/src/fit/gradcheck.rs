//! Central-difference verification of the analytic gradients, in `f64`.

use std::str::FromStr;

use serde::Serialize;

use super::{combine_weights_gradient, lut_gradient, objective, LossConfig};
use crate::image::ImagePlane;
use crate::lut::{combine_luts, Lut3D};
use crate::rng::SplitMix64;
use crate::{FilmError, Result};

pub const GRAD_CHECK_TOLERANCE: f64 = 1e-3;
pub const FD_STEP: f64 = 1e-4;
/// Denominator floor for the relative error, so entries whose true gradient
/// is (near) zero are judged by absolute error against this scale.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GradTarget {
    LutLattice,
    CombineWeights,
}

impl FromStr for GradTarget {
    type Err = FilmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lut_lattice" => Ok(GradTarget::LutLattice),
            "combine_weights" => Ok(GradTarget::CombineWeights),
            other => Err(FilmError::UnknownTarget(other.to_string())),
        }
    }
}

impl GradTarget {
    pub fn name(&self) -> &'static str {
        match self {
            GradTarget::LutLattice => "lut_lattice",
            GradTarget::CombineWeights => "combine_weights",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub target: GradTarget,
    pub seed: u64,
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub passed: bool,
}

/// A point at which to compare gradients.
#[derive(Debug, Clone)]
pub struct GradCheckInstance {
    pub basis: Vec<Lut3D<f64>>,
    pub weights: Vec<f64>,
    pub input: ImagePlane<f64>,
    pub target: ImagePlane<f64>,
    pub loss: LossConfig,
    pub smoothness_weight: f64,
}

impl GradCheckInstance {
    /// Random LUT(s) near the identity, random 4×4 input and target.
    pub fn random(bins: usize, basis_count: usize, seed: u64) -> Result<Self> {
        let mut rng = SplitMix64::new(seed);
        let id = Lut3D::<f64>::identity(bins)?;
        let basis = (0..basis_count)
            .map(|_| {
                Lut3D::new(
                    bins,
                    id.entries()
                        .iter()
                        .map(|e| e.map(|v| v + rng.uniform(-0.2, 0.2)))
                        .collect(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let weights = (0..basis_count).map(|_| rng.uniform(0.1, 0.9)).collect();
        let input = ImagePlane::from_fn(4, 4, 3, |_, _, _| rng.next_f64());
        let target = ImagePlane::from_fn(4, 4, 3, |_, _, _| rng.next_f64());
        Ok(Self {
            basis,
            weights,
            input,
            target,
            loss: LossConfig::default(),
            smoothness_weight: 1e-3,
        })
    }

    /// All-zero images and lattice: both gradients vanish.
    pub fn degenerate_zero(bins: usize) -> Result<Self> {
        Ok(Self {
            basis: vec![Lut3D::constant(bins, [0.0; 3])?],
            weights: vec![1.0],
            input: ImagePlane::zeros(4, 4, 3),
            target: ImagePlane::zeros(4, 4, 3),
            loss: LossConfig::default(),
            smoothness_weight: 0.0,
        })
    }
}

struct ErrorTally {
    checked: usize,
    rel: f64,
    abs: f64,
}

impl ErrorTally {
    fn new() -> Self {
        Self { checked: 0, rel: 0.0, abs: 0.0 }
    }

    fn add(&mut self, analytic: f64, numeric: f64) {
        let abs = (analytic - numeric).abs();
        let rel = abs / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        self.checked += 1;
        self.abs = self.abs.max(abs);
        self.rel = self.rel.max(if rel.is_nan() { f64::INFINITY } else { rel });
    }
}

pub fn grad_check_instance(target: GradTarget, inst: &GradCheckInstance, seed: u64) -> Result<GradCheckReport> {
    let pairs = [(&inst.input, &inst.target)];
    let mut tally = ErrorTally::new();
    match target {
        GradTarget::LutLattice => {
            let lut = combine_luts(&inst.basis, &inst.weights)?;
            let analytic = lut_gradient(&lut, &pairs, &inst.loss, inst.smoothness_weight)?;
            let mut probe = lut.clone();
            for i in 0..lut.entries().len() {
                for k in 0..3 {
                    let orig = lut.entries()[i][k];
                    probe.entries_mut()[i][k] = orig + FD_STEP;
                    let up = objective(&probe, &pairs, &inst.loss, inst.smoothness_weight)?;
                    probe.entries_mut()[i][k] = orig - FD_STEP;
                    let down = objective(&probe, &pairs, &inst.loss, inst.smoothness_weight)?;
                    probe.entries_mut()[i][k] = orig;
                    tally.add(analytic.grad[i][k], (up - down) / (2.0 * FD_STEP));
                }
            }
        }
        GradTarget::CombineWeights => {
            let (_, analytic) = combine_weights_gradient(&inst.basis, &inst.weights, &pairs, &inst.loss)?;
            let eval = |w: &[f64]| -> Result<f64> {
                objective(&combine_luts(&inst.basis, w)?, &pairs, &inst.loss, 0.0)
            };
            let mut w = inst.weights.clone();
            for k in 0..w.len() {
                let orig = w[k];
                w[k] = orig + FD_STEP;
                let up = eval(&w)?;
                w[k] = orig - FD_STEP;
                let down = eval(&w)?;
                w[k] = orig;
                tally.add(analytic[k], (up - down) / (2.0 * FD_STEP));
            }
        }
    }
    Ok(GradCheckReport {
        target,
        seed,
        checked: tally.checked,
        max_rel_error: tally.rel,
        max_abs_error: tally.abs,
        passed: tally.rel < GRAD_CHECK_TOLERANCE,
    })
}

/// Checks `target` at a seeded random point (5 bins, 3 basis LUTs).
pub fn grad_check(target: GradTarget, seed: u64) -> Result<GradCheckReport> {
    let inst = GradCheckInstance::random(5, 3, seed)?;
    grad_check_instance(target, &inst, seed)
}
