//! Forward-only neural operators on `f32` feature maps.
//!
//! Feature maps reuse [`ImagePlane`] with arbitrary channel depth and
//! unbounded values. None of the operators here backpropagate.

mod graph;
mod mask;
mod msrm;
mod nsr;

pub use graph::{BlockGraph, Op};
pub use mask::{mask_graph, mask_net_forward, MaskArch};
pub use msrm::{msrm_forward, msrm_forward_traced, MsrmArch, MsrmTrace};
pub use nsr::{nsr_forward, nsr_graph, NsrArch};

use rayon::prelude::*;

use crate::image::ImagePlane;
use crate::pyramid::reflect101;
use crate::rng::SplitMix64;
use crate::weights::{Tensor, WeightContainer};
use crate::{FilmError, Result};

pub type FeatureMap = ImagePlane<f32>;

/// Shape of a convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    /// Stride-1 convolution that keeps the spatial size (odd `kernel`).
    pub fn same(in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            kernel,
            stride: 1,
            padding: kernel / 2,
            groups: 1,
        }
    }

    pub fn pointwise(in_ch: usize, out_ch: usize) -> Self {
        Self::same(in_ch, out_ch, 1)
    }

    pub fn depthwise(channels: usize, kernel: usize) -> Self {
        Self {
            groups: channels,
            ..Self::same(channels, channels, kernel)
        }
    }

    pub fn strided(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
            groups: 1,
        }
    }

    pub fn kernel_dims(&self) -> Vec<usize> {
        vec![self.out_ch, self.in_ch / self.groups, self.kernel, self.kernel]
    }

    pub fn fan_in(&self) -> usize {
        self.in_ch / self.groups * self.kernel * self.kernel
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.groups > 0
            && self.kernel > 0
            && self.stride > 0
            && self.in_ch.is_multiple_of(self.groups)
            && self.out_ch.is_multiple_of(self.groups);
        if ok {
            Ok(())
        } else {
            Err(FilmError::InvalidArgument(format!("invalid convolution shape {self:?}")))
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let span = |n: usize| -> Result<usize> {
            let padded = n + 2 * self.padding;
            if padded < self.kernel {
                return Err(FilmError::DimensionMismatch(format!(
                    "input extent {n} too small for kernel {}",
                    self.kernel
                )));
            }
            Ok((padded - self.kernel) / self.stride + 1)
        };
        Ok((span(h)?, span(w)?))
    }
}

/// Convolution weights `out_ch × in_ch/groups × k × k` plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub spec: ConvSpec,
    pub kernel: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvParams {
    pub fn new(spec: ConvSpec, kernel: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        spec.validate()?;
        let n: usize = spec.kernel_dims().iter().product();
        if kernel.len() != n || bias.len() != spec.out_ch {
            return Err(FilmError::InvalidArgument(format!(
                "conv {spec:?} needs {n} kernel and {} bias values, got {} and {}",
                spec.out_ch,
                kernel.len(),
                bias.len()
            )));
        }
        if kernel.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(FilmError::InvalidArgument("non-finite convolution weight".into()));
        }
        Ok(Self { spec, kernel, bias })
    }

    pub fn zeros(spec: ConvSpec) -> Self {
        let n = spec.kernel_dims().iter().product();
        Self {
            spec,
            kernel: vec![0.0; n],
            bias: vec![0.0; spec.out_ch],
        }
    }

    /// Identity `1×1` map on `channels` channels.
    pub fn identity(channels: usize) -> Self {
        let mut p = Self::zeros(ConvSpec::pointwise(channels, channels));
        for c in 0..channels {
            p.kernel[c * channels + c] = 1.0;
        }
        p
    }

    pub fn from_weights(wc: &WeightContainer, name: &str, spec: ConvSpec) -> Result<Self> {
        let k = wc.expect(&format!("{name}.kernel"), &spec.kernel_dims())?;
        let b = wc.expect(&format!("{name}.bias"), &[spec.out_ch])?;
        Self::new(spec, k.data.clone(), b.data.clone())
    }

    pub fn store(&self, wc: &mut WeightContainer, name: &str) {
        wc.insert(
            format!("{name}.kernel"),
            Tensor {
                dims: self.spec.kernel_dims(),
                data: self.kernel.clone(),
            },
        );
        wc.insert(
            format!("{name}.bias"),
            Tensor {
                dims: vec![self.spec.out_ch],
                data: self.bias.clone(),
            },
        );
    }

    /// Uniform `±sqrt(1/fan_in)` for kernel and bias.
    pub fn random(spec: ConvSpec, rng: &mut SplitMix64) -> Self {
        let bound = (1.0 / spec.fan_in() as f64).sqrt();
        let n: usize = spec.kernel_dims().iter().product();
        let kernel = (0..n).map(|_| rng.uniform(-bound, bound) as f32).collect();
        let bias = (0..spec.out_ch).map(|_| rng.uniform(-bound, bound) as f32).collect();
        Self { spec, kernel, bias }
    }

    #[inline]
    fn weight(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> f32 {
        let k = self.spec.kernel;
        let icg = self.spec.in_ch / self.spec.groups;
        self.kernel[((oc * icg + ic) * k + ky) * k + kx]
    }
}

/// Direct cross-correlation with reflect-101 padding.
///
/// Each output sample is accumulated as `bias`, then input channels of the
/// group in order, then kernel rows, then kernel columns.
pub fn conv2d(x: &FeatureMap, p: &ConvParams) -> Result<FeatureMap> {
    let s = p.spec;
    if x.channels() != s.in_ch {
        return Err(FilmError::DimensionMismatch(format!(
            "conv expects {} input channels, got {}",
            s.in_ch,
            x.channels()
        )));
    }
    let (oh, ow) = s.output_size(x.height(), x.width())?;
    let (h, w) = (x.height(), x.width());
    let icg = s.in_ch / s.groups;
    let ocg = s.out_ch / s.groups;
    let mut out = vec![0.0f32; oh * ow * s.out_ch];
    out.par_chunks_mut(ow * s.out_ch).enumerate().for_each(|(oy, row)| {
        let y0 = (oy * s.stride) as isize - s.padding as isize;
        for ox in 0..ow {
            let x0 = (ox * s.stride) as isize - s.padding as isize;
            for oc in 0..s.out_ch {
                let g = oc / ocg;
                let mut acc = p.bias[oc];
                for ic in 0..icg {
                    let c = g * icg + ic;
                    for ky in 0..s.kernel {
                        let yy = reflect101(y0 + ky as isize, h);
                        for kx in 0..s.kernel {
                            let xx = reflect101(x0 + kx as isize, w);
                            acc += p.weight(oc, ic, ky, kx) * x.get(yy, xx, c);
                        }
                    }
                }
                row[ox * s.out_ch + oc] = acc;
            }
        }
    });
    ImagePlane::new(oh, ow, s.out_ch, out)
}

/// Normalizes each spatial position across channels, then applies the
/// per-channel affine `gamma`, `beta`.
pub fn layer_norm(x: &FeatureMap, gamma: &[f32], beta: &[f32], eps: f32) -> Result<FeatureMap> {
    let c = x.channels();
    if gamma.len() != c || beta.len() != c {
        return Err(FilmError::DimensionMismatch(format!(
            "layer_norm over {c} channels got {} gammas and {} betas",
            gamma.len(),
            beta.len()
        )));
    }
    let mut out = Vec::with_capacity(x.data().len());
    for px in x.pixels() {
        let mean = px.iter().map(|&v| v as f64).sum::<f64>() / c as f64;
        let var = px.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / c as f64;
        let inv = 1.0 / (var + eps as f64).sqrt();
        for (k, &v) in px.iter().enumerate() {
            out.push(((v as f64 - mean) * inv) as f32 * gamma[k] + beta[k]);
        }
    }
    ImagePlane::new(x.height(), x.width(), c, out)
}

/// `X ⊙ Y` where `X`, `Y` are the two channel halves of the input.
pub fn simple_gate(x: &FeatureMap) -> Result<FeatureMap> {
    let c2 = x.channels();
    if !c2.is_multiple_of(2) {
        return Err(FilmError::DimensionMismatch(format!(
            "simple_gate needs an even channel count, got {c2}"
        )));
    }
    let c = c2 / 2;
    let data = x
        .pixels()
        .flat_map(|px| (0..c).map(move |k| px[k] * px[k + c]))
        .collect();
    ImagePlane::new(x.height(), x.width(), c, data)
}

/// Per-channel spatial mean, accumulated in `f64`.
pub fn global_avg_pool(x: &FeatureMap) -> Vec<f32> {
    let c = x.channels();
    let mut sums = vec![0.0f64; c];
    for px in x.pixels() {
        for (s, &v) in sums.iter_mut().zip(px) {
            *s += v as f64;
        }
    }
    let n = x.pixel_count().max(1) as f64;
    sums.into_iter().map(|s| (s / n) as f32).collect()
}

/// Applies a `1×1` convolution to a channel vector.
pub fn pointwise_vector(p: &ConvParams, v: &[f32]) -> Result<Vec<f32>> {
    let s = p.spec;
    if s.kernel != 1 || s.groups != 1 || v.len() != s.in_ch {
        return Err(FilmError::DimensionMismatch(format!(
            "pointwise map {}→{} applied to {} values",
            s.in_ch,
            s.out_ch,
            v.len()
        )));
    }
    Ok((0..s.out_ch)
        .map(|oc| {
            let mut acc = p.bias[oc];
            for (ic, &x) in v.iter().enumerate() {
                acc += p.kernel[oc * s.in_ch + ic] * x;
            }
            acc
        })
        .collect())
}

/// Multiplies every channel `c` by `scale[c]`.
pub fn scale_channels(x: &FeatureMap, scale: &[f32]) -> FeatureMap {
    let data = x
        .pixels()
        .flat_map(|px| px.iter().zip(scale).map(|(&v, &s)| v * s))
        .collect();
    ImagePlane::new(x.height(), x.width(), x.channels(), data).expect("same shape")
}

/// Simplified channel attention: `x * W pool(x)`.
pub fn sca(x: &FeatureMap, w: &ConvParams) -> Result<FeatureMap> {
    if w.spec.in_ch != x.channels() || w.spec.out_ch != x.channels() {
        return Err(FilmError::DimensionMismatch(format!(
            "sca over {} channels with a {}→{} map",
            x.channels(),
            w.spec.in_ch,
            w.spec.out_ch
        )));
    }
    let s = pointwise_vector(w, &global_avg_pool(x))?;
    Ok(scale_channels(x, &s))
}

/// Average pooling with window and stride `r`; edge windows average only
/// the pixels they cover.
pub fn avg_pool(x: &FeatureMap, r: usize) -> Result<FeatureMap> {
    if r == 0 {
        return Err(FilmError::InvalidArgument("pool stride must be positive".into()));
    }
    let (h, w, c) = (x.height(), x.width(), x.channels());
    let (oh, ow) = (h.div_ceil(r), w.div_ceil(r));
    let mut out = ImagePlane::zeros(oh, ow, c);
    for oy in 0..oh {
        for ox in 0..ow {
            let ys = oy * r..((oy + 1) * r).min(h);
            let xs = ox * r..((ox + 1) * r).min(w);
            let n = (ys.len() * xs.len()) as f64;
            for k in 0..c {
                let mut acc = 0.0f64;
                for y in ys.clone() {
                    for xx in xs.clone() {
                        acc += x.get(y, xx, k) as f64;
                    }
                }
                out.set(oy, ox, k, (acc / n) as f32);
            }
        }
    }
    Ok(out)
}

/// Pixel-wise product of a band with a mask broadcast across channels.
pub fn apply_mask(hf: &FeatureMap, mask: &FeatureMap) -> Result<FeatureMap> {
    if !hf.same_spatial(mask) {
        return Err(FilmError::DimensionMismatch(format!(
            "mask {}x{} vs band {}x{}",
            mask.height(),
            mask.width(),
            hf.height(),
            hf.width()
        )));
    }
    let mc = mask.channels();
    if mc != 1 && mc != hf.channels() {
        return Err(FilmError::DimensionMismatch(format!(
            "mask with {mc} channels cannot broadcast over {}",
            hf.channels()
        )));
    }
    let c = hf.channels();
    let data = hf
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let p = i / c;
            let m = if mc == 1 { mask.data()[p] } else { mask.data()[i] };
            v * m
        })
        .collect();
    ImagePlane::new(hf.height(), hf.width(), c, data)
}

#[inline]
pub(crate) fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}
