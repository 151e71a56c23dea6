//! Multi-scale refinement: two-branch convolution with shortcut,
//! squeeze-and-excitation reweighting, 3×3 compression, and a spatial
//! pooling pyramid fused back onto the shortcut path.

use super::{avg_pool, conv2d, global_avg_pool, pointwise_vector, scale_channels, sigmoid};
use super::{ConvParams, ConvSpec, FeatureMap};
use crate::image::{resize_bilinear, ImagePlane};
use crate::rng::SplitMix64;
use crate::weights::WeightContainer;
use crate::Result;

pub const SPP_STRIDES: [usize; 3] = [2, 4, 8];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MsrmArch {
    pub channels: usize,
}

impl Default for MsrmArch {
    fn default() -> Self {
        Self { channels: 3 }
    }
}

impl MsrmArch {
    pub fn se_hidden(&self) -> usize {
        (self.channels / 2).max(1)
    }

    fn layers(&self) -> Vec<(&'static str, ConvSpec)> {
        let c = self.channels;
        vec![
            ("msrm.branch_a.dw", ConvSpec::depthwise(c, 3)),
            ("msrm.branch_a.pw", ConvSpec::pointwise(c, c)),
            ("msrm.branch_b.conv", ConvSpec::same(c, c, 3)),
            ("msrm.se.fc1", ConvSpec::pointwise(c, self.se_hidden())),
            ("msrm.se.fc2", ConvSpec::pointwise(self.se_hidden(), c)),
            ("msrm.compress", ConvSpec::same(c, c, 3)),
            ("msrm.spp.fuse", ConvSpec::pointwise(c * (SPP_STRIDES.len() + 1), c)),
        ]
    }

    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.layers()
            .into_iter()
            .flat_map(|(n, s)| [(format!("{n}.kernel"), s.kernel_dims()), (format!("{n}.bias"), vec![s.out_ch])])
            .collect()
    }

    pub fn init_weights(&self, rng: &mut SplitMix64, wc: &mut WeightContainer) {
        for (name, spec) in self.layers() {
            ConvParams::random(spec, &mut rng.fork()).store(wc, name);
        }
    }

    pub fn zero_weights(&self, wc: &mut WeightContainer) {
        for (name, spec) in self.layers() {
            ConvParams::zeros(spec).store(wc, name);
        }
    }

    pub fn store_meta(&self, wc: &mut WeightContainer) {
        wc.set_meta("msrm.channels", self.channels);
    }

    pub fn from_meta(wc: &WeightContainer) -> Result<Self> {
        Ok(Self {
            channels: wc.meta("msrm.channels")?,
        })
    }
}

/// Intermediate activations of one MSRM pass.
#[derive(Debug, Clone)]
pub struct MsrmTrace {
    /// Input plus both branches.
    pub aggregated: FeatureMap,
    /// Per-channel squeeze-and-excitation gate in `[0, 1]`.
    pub gate: Vec<f32>,
    pub reweighted: FeatureMap,
    pub compressed: FeatureMap,
    pub fused: FeatureMap,
    pub output: FeatureMap,
}

pub fn msrm_forward_traced(x: &FeatureMap, weights: &WeightContainer, arch: &MsrmArch) -> Result<MsrmTrace> {
    let layers = arch.layers();
    let load = |i: usize| ConvParams::from_weights(weights, layers[i].0, layers[i].1);

    let branch_a = conv2d(&conv2d(x, &load(0)?)?, &load(1)?)?;
    let branch_b = conv2d(x, &load(2)?)?;
    let aggregated = x.add(&branch_a)?.add(&branch_b)?;

    // squeeze-and-excitation; the sigmoid here is the only saturating
    // nonlinearity in the block stack
    let squeezed = global_avg_pool(&aggregated);
    let hidden = pointwise_vector(&load(3)?, &squeezed)?;
    let gate: Vec<f32> = pointwise_vector(&load(4)?, &hidden)?.into_iter().map(sigmoid).collect();
    let reweighted = scale_channels(&aggregated, &gate);

    let compressed = conv2d(&reweighted, &load(5)?)?;

    let (h, w) = (compressed.height(), compressed.width());
    let mut pyramid = vec![compressed.clone()];
    for r in SPP_STRIDES {
        pyramid.push(resize_bilinear(&avg_pool(&compressed, r)?, h, w)?);
    }
    let refs: Vec<&FeatureMap> = pyramid.iter().collect();
    let fused = conv2d(&ImagePlane::concat_channels(&refs)?, &load(6)?)?;
    let output = aggregated.add(&fused)?;

    Ok(MsrmTrace {
        aggregated,
        gate,
        reweighted,
        compressed,
        fused,
        output,
    })
}

pub fn msrm_forward(x: &FeatureMap, weights: &WeightContainer, arch: &MsrmArch) -> Result<FeatureMap> {
    Ok(msrm_forward_traced(x, weights, arch)?.output)
}
