//! High-frequency mask network: three 3×3 convolutions with SimpleGate
//! between them, from the 9-channel context stack to a 1-channel mask.

use super::{BlockGraph, ConvSpec, FeatureMap, Op};
use crate::image::ImagePlane;
use crate::weights::WeightContainer;
use crate::{FilmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskArch {
    /// Output channels of the first two convolutions (must be even).
    pub width: usize,
}

impl Default for MaskArch {
    fn default() -> Self {
        Self { width: 16 }
    }
}

impl MaskArch {
    pub fn store_meta(&self, wc: &mut WeightContainer) {
        wc.set_meta("mask.width", self.width);
    }

    pub fn from_meta(wc: &WeightContainer) -> Result<Self> {
        Ok(Self {
            width: wc.meta("mask.width")?,
        })
    }
}

pub fn mask_graph(arch: &MaskArch) -> BlockGraph {
    let w = arch.width;
    let mut g = BlockGraph::new(9);
    g.push(Op::Conv {
        name: "mask.conv0".into(),
        spec: ConvSpec::same(9, w, 3),
    })
    .push(Op::SimpleGate)
    .push(Op::Conv {
        name: "mask.conv1".into(),
        spec: ConvSpec::same(w / 2, w, 3),
    })
    .push(Op::SimpleGate)
    .push(Op::Conv {
        name: "mask.conv2".into(),
        spec: ConvSpec::same(w / 2, 1, 3),
    });
    g
}

/// Predicts a single-channel mask from `[band, up(base), up(refined base)]`.
/// All three inputs must already share the band's spatial size.
pub fn mask_net_forward(
    prev_hf: &FeatureMap,
    up_low: &FeatureMap,
    up_refined: &FeatureMap,
    weights: &WeightContainer,
    arch: &MaskArch,
) -> Result<FeatureMap> {
    for (what, p) in [("up_low", up_low), ("up_refined", up_refined)] {
        if !p.same_spatial(prev_hf) {
            return Err(FilmError::DimensionMismatch(format!(
                "mask input {what} is {}x{}, band is {}x{}",
                p.height(),
                p.width(),
                prev_hf.height(),
                prev_hf.width()
            )));
        }
    }
    let stacked = ImagePlane::concat_channels(&[prev_hf, up_low, up_refined])?;
    mask_graph(arch).run(&stacked, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::Tensor;

    fn inputs() -> (FeatureMap, FeatureMap, FeatureMap) {
        (
            ImagePlane::from_fn(6, 6, 3, |y, x, c| (y + x + c) as f32 * 0.1),
            ImagePlane::filled(6, 6, 3, 0.5),
            ImagePlane::filled(6, 6, 3, 0.25),
        )
    }

    #[test]
    fn zero_weights_bias_sets_mask() {
        let arch = MaskArch::default();
        let (a, b, c) = inputs();
        let mut wc = WeightContainer::new();
        mask_graph(&arch).zero_weights(&mut wc);
        let m = mask_net_forward(&a, &b, &c, &wc, &arch).unwrap();
        assert_eq!(m.channels(), 1);
        assert!(m.data().iter().all(|&v| v == 0.0));
        wc.insert("mask.conv2.bias", Tensor::scalar(1.0));
        wc.get_mut("mask.conv2.bias").unwrap().dims = vec![1];
        let m = mask_net_forward(&a, &b, &c, &wc, &arch).unwrap();
        assert!(m.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn size_mismatch() {
        let arch = MaskArch::default();
        let (a, b, _) = inputs();
        let mut wc = WeightContainer::new();
        mask_graph(&arch).zero_weights(&mut wc);
        let small = ImagePlane::zeros(3, 3, 3);
        assert!(mask_net_forward(&a, &b, &small, &wc, &arch).is_err());
    }
}
