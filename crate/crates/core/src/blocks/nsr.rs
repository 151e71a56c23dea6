//! Activation-free encoder/decoder for the low-frequency base.
//!
//! Each block is `LayerNorm → 1×1 (C→2C) → depthwise 3×3 → SimpleGate →
//! channel attention → 1×1` with an additive skip. The depthwise 3×3 stands
//! in for a deformable convolution.

use super::{BlockGraph, ConvSpec, FeatureMap, Op};
use crate::weights::WeightContainer;
use crate::{FilmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NsrArch {
    /// Channels of the first stage; doubled per encoder stage.
    pub width: usize,
    pub enc_stages: usize,
    pub middle_blocks: usize,
}

impl Default for NsrArch {
    fn default() -> Self {
        Self {
            width: 16,
            enc_stages: 2,
            middle_blocks: 1,
        }
    }
}

impl NsrArch {
    /// Spatial sizes must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        1 << self.enc_stages
    }

    pub fn store_meta(&self, wc: &mut WeightContainer) {
        wc.set_meta("nsr.width", self.width);
        wc.set_meta("nsr.enc_stages", self.enc_stages);
        wc.set_meta("nsr.middle_blocks", self.middle_blocks);
    }

    pub fn from_meta(wc: &WeightContainer) -> Result<Self> {
        Ok(Self {
            width: wc.meta("nsr.width")?,
            enc_stages: wc.meta("nsr.enc_stages")?,
            middle_blocks: wc.meta("nsr.middle_blocks")?,
        })
    }
}

fn push_block(g: &mut BlockGraph, name: &str, c: usize) {
    g.push(Op::PushSkip)
        .push(Op::LayerNorm {
            name: format!("{name}.norm"),
            channels: c,
        })
        .push(Op::Conv {
            name: format!("{name}.conv1"),
            spec: ConvSpec::pointwise(c, 2 * c),
        })
        .push(Op::Conv {
            name: format!("{name}.conv2"),
            spec: ConvSpec::depthwise(2 * c, 3),
        })
        .push(Op::SimpleGate)
        .push(Op::Sca {
            name: format!("{name}.sca"),
            channels: c,
        })
        .push(Op::Conv {
            name: format!("{name}.conv3"),
            spec: ConvSpec::pointwise(c, c),
        })
        .push(Op::AddSkip);
}

/// Builds the three-channel-in, three-channel-out network with a global
/// residual, so all-zero weights give the identity.
pub fn nsr_graph(arch: &NsrArch) -> BlockGraph {
    let w = arch.width;
    let mut g = BlockGraph::new(3);
    g.push(Op::PushSkip).push(Op::Conv {
        name: "nsr.intro".into(),
        spec: ConvSpec::same(3, w, 3),
    });
    let mut c = w;
    for s in 0..arch.enc_stages {
        push_block(&mut g, &format!("nsr.enc{s}"), c);
        g.push(Op::PushSkip).push(Op::Conv {
            name: format!("nsr.down{s}"),
            spec: ConvSpec::strided(c, 2 * c, 2, 2, 0),
        });
        c *= 2;
    }
    for m in 0..arch.middle_blocks {
        push_block(&mut g, &format!("nsr.mid{m}"), c);
    }
    for s in (0..arch.enc_stages).rev() {
        g.push(Op::Upsample2x)
            .push(Op::Conv {
                name: format!("nsr.up{s}"),
                spec: ConvSpec::pointwise(c, c / 2),
            })
            .push(Op::AddSkip);
        c /= 2;
        push_block(&mut g, &format!("nsr.dec{s}"), c);
    }
    g.push(Op::Conv {
        name: "nsr.ending".into(),
        spec: ConvSpec::same(w, 3, 3),
    })
    .push(Op::AddSkip);
    g
}

pub fn nsr_forward(low_freq: &FeatureMap, weights: &WeightContainer, arch: &NsrArch) -> Result<FeatureMap> {
    let m = arch.size_multiple();
    if !low_freq.height().is_multiple_of(m) || !low_freq.width().is_multiple_of(m) {
        return Err(FilmError::IndivisibleDimensions {
            height: low_freq.height(),
            width: low_freq.width(),
            depth: arch.enc_stages,
        });
    }
    nsr_graph(arch).run(low_freq, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ImagePlane;
    use crate::rng::SplitMix64;

    #[test]
    fn graph_is_consistent() {
        let g = nsr_graph(&NsrArch::default());
        assert_eq!(g.validate().unwrap(), 3);
        let names: Vec<String> = g.tensor_shapes().into_iter().map(|(n, _)| n).collect();
        assert!(names.contains(&"nsr.enc0.conv1.kernel".to_string()));
        assert!(names.contains(&"nsr.mid0.sca.kernel".to_string()));
    }

    #[test]
    fn zero_weights_are_identity() {
        let arch = NsrArch::default();
        let mut wc = WeightContainer::new();
        nsr_graph(&arch).zero_weights(&mut wc);
        let mut rng = SplitMix64::new(11);
        let x = ImagePlane::from_fn(8, 12, 3, |_, _, _| rng.next_f64() as f32);
        assert_eq!(nsr_forward(&x, &wc, &arch).unwrap(), x);
    }

    #[test]
    fn shape_contract() {
        let arch = NsrArch::default();
        let mut wc = WeightContainer::new();
        nsr_graph(&arch).init_weights(&mut SplitMix64::new(3), &mut wc);
        let x = ImagePlane::filled(16, 8, 3, 0.5f32);
        let y = nsr_forward(&x, &wc, &arch).unwrap();
        assert_eq!((y.height(), y.width(), y.channels()), (16, 8, 3));
        assert!(nsr_forward(&ImagePlane::filled(6, 8, 3, 0.5f32), &wc, &arch).is_err());
    }

    #[test]
    fn missing_named_tensor() {
        let arch = NsrArch::default();
        let mut wc = WeightContainer::new();
        nsr_graph(&arch).zero_weights(&mut wc);
        wc.remove("nsr.enc0.conv1.kernel");
        let err = nsr_forward(&ImagePlane::zeros(8, 8, 3), &wc, &arch).unwrap_err();
        assert!(matches!(err, FilmError::MissingTensor(n) if n == "nsr.enc0.conv1.kernel"));
    }
}
