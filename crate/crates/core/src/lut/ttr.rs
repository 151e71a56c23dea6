//! Basis-LUT blending driven by a small CNN over a low-resolution view.

use super::{apply_lut, combine_luts, Lut3D};
use crate::blocks::{conv2d, global_avg_pool, pointwise_vector, ConvParams, ConvSpec};
use crate::image::{resize_bilinear, ImagePlane};
use crate::rng::SplitMix64;
use crate::weights::{Tensor, WeightContainer};
use crate::{FilmError, Result};

pub const ADJUSTER_INPUT_SIZE: usize = 64;
const LEAKY_SLOPE: f32 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdjusterArch {
    /// Channels of the first strided convolution; doubled per layer, capped at `4 × width`.
    pub width: usize,
    pub basis_count: usize,
}

impl Default for AdjusterArch {
    fn default() -> Self {
        Self {
            width: 8,
            basis_count: super::DEFAULT_BASIS_COUNT,
        }
    }
}

impl AdjusterArch {
    pub const LAYERS: usize = 4;

    fn conv_specs(&self) -> Vec<ConvSpec> {
        let mut specs = Vec::with_capacity(Self::LAYERS);
        let mut c_in = 3;
        for i in 0..Self::LAYERS {
            let c_out = self.width << i.min(2);
            specs.push(ConvSpec::strided(c_in, c_out, 3, 2, 1));
            c_in = c_out;
        }
        specs
    }

    fn head_spec(&self) -> ConvSpec {
        ConvSpec::pointwise(self.width << 2, self.basis_count)
    }

    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, s) in self.conv_specs().iter().enumerate() {
            out.push((format!("ttr.adjuster.conv{i}.kernel"), s.kernel_dims()));
            out.push((format!("ttr.adjuster.conv{i}.bias"), vec![s.out_ch]));
        }
        let h = self.head_spec();
        out.push(("ttr.adjuster.head.kernel".into(), h.kernel_dims()));
        out.push(("ttr.adjuster.head.bias".into(), vec![h.out_ch]));
        out
    }

    pub fn store_meta(&self, wc: &mut WeightContainer) {
        wc.set_meta("ttr.adjuster_width", self.width);
        wc.set_meta("ttr.basis_count", self.basis_count);
    }

    pub fn from_meta(wc: &WeightContainer) -> Result<Self> {
        Ok(Self {
            width: wc.meta("ttr.adjuster_width")?,
            basis_count: wc.meta("ttr.basis_count")?,
        })
    }
}

/// Parameters of the style-aware adjuster.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjusterWeights {
    pub arch: AdjusterArch,
    pub convs: Vec<ConvParams>,
    pub head: ConvParams,
}

impl AdjusterWeights {
    /// Seeded convolutions with a zero head whose bias selects basis 0.
    pub fn init(arch: AdjusterArch, rng: &mut SplitMix64) -> Self {
        let convs = arch
            .conv_specs()
            .into_iter()
            .map(|s| ConvParams::random(s, &mut rng.fork()))
            .collect();
        Self {
            arch,
            convs,
            head: Self::select_first(arch),
        }
    }

    pub fn random(arch: AdjusterArch, rng: &mut SplitMix64) -> Self {
        let mut w = Self::init(arch, rng);
        w.head = ConvParams::random(arch.head_spec(), &mut rng.fork());
        w
    }

    pub fn constant(arch: AdjusterArch, bias: &[f32]) -> Result<Self> {
        let convs = arch.conv_specs().into_iter().map(ConvParams::zeros).collect();
        let mut head = ConvParams::zeros(arch.head_spec());
        if bias.len() != arch.basis_count {
            return Err(FilmError::DimensionMismatch(format!(
                "{} head biases for {} basis LUTs",
                bias.len(),
                arch.basis_count
            )));
        }
        head.bias = bias.to_vec();
        Ok(Self { arch, convs, head })
    }

    fn select_first(arch: AdjusterArch) -> ConvParams {
        let mut head = ConvParams::zeros(arch.head_spec());
        head.bias[0] = 1.0;
        head
    }

    pub fn from_weights(wc: &WeightContainer, arch: AdjusterArch) -> Result<Self> {
        let convs = arch
            .conv_specs()
            .into_iter()
            .enumerate()
            .map(|(i, s)| ConvParams::from_weights(wc, &format!("ttr.adjuster.conv{i}"), s))
            .collect::<Result<_>>()?;
        let head = ConvParams::from_weights(wc, "ttr.adjuster.head", arch.head_spec())?;
        Ok(Self { arch, convs, head })
    }

    pub fn store(&self, wc: &mut WeightContainer) {
        for (i, c) in self.convs.iter().enumerate() {
            c.store(wc, &format!("ttr.adjuster.conv{i}"));
        }
        self.head.store(wc, "ttr.adjuster.head");
    }
}

/// Four strided 3×3 convolutions with leaky ReLU, global average pooling,
/// and an affine head. Outputs are unbounded blend weights.
pub fn adjuster_forward(lr_img: &ImagePlane<f32>, w: &AdjusterWeights) -> Result<Vec<f32>> {
    lr_img.require_rgb()?;
    let mut x = lr_img.clone();
    for conv in &w.convs {
        x = conv2d(&x, conv)?.map(|v| if v < 0.0 { v * LEAKY_SLOPE } else { v });
    }
    pointwise_vector(&w.head, &global_avg_pool(&x))
}

pub fn basis_name(k: usize) -> String {
    format!("ttr.basis{k}")
}

pub fn store_basis(wc: &mut WeightContainer, basis: &[Lut3D<f32>]) {
    for (k, lut) in basis.iter().enumerate() {
        let m = lut.bins();
        wc.insert(basis_name(k), Tensor::new(vec![m, m, m, 3], lut.flat()).unwrap());
    }
}

pub fn load_basis(wc: &WeightContainer, count: usize, bins: usize) -> Result<Vec<Lut3D<f32>>> {
    (0..count)
        .map(|k| {
            let t = wc.expect(&basis_name(k), &[bins, bins, bins, 3])?;
            Lut3D::from_flat(bins, &t.data)
        })
        .collect()
}

/// Predicts blend weights from a 64×64 view, fuses the basis, and applies it
/// at full resolution with a final clamp to `[0, 1]`.
pub fn ttr_apply(hr_img: &ImagePlane<f32>, basis: &[Lut3D<f32>], adj: &AdjusterWeights) -> Result<ImagePlane<f32>> {
    hr_img.require_rgb()?;
    let lr = resize_bilinear(hr_img, ADJUSTER_INPUT_SIZE, ADJUSTER_INPUT_SIZE)?;
    let weights = adjuster_forward(&lr, adj)?;
    let fused = combine_luts(basis, &weights)?;
    Ok(apply_lut(&fused, hr_img)?.clamp01())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(seed: u64) -> ImagePlane<f32> {
        let mut rng = SplitMix64::new(seed);
        ImagePlane::from_fn(32, 48, 3, |_, _, _| rng.next_f64() as f32)
    }

    #[test]
    fn constant_head_ignores_image() {
        let arch = AdjusterArch::default();
        let w = AdjusterWeights::constant(arch, &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(adjuster_forward(&img(1), &w).unwrap(), vec![1.0, 0.0, 0.0]);
        let third = 1.0f32 / 3.0;
        let w = AdjusterWeights::constant(arch, &[third; 3]).unwrap();
        assert_eq!(adjuster_forward(&img(2), &w).unwrap(), vec![third; 3]);
    }

    #[test]
    fn init_selects_first_basis() {
        let w = AdjusterWeights::init(AdjusterArch::default(), &mut SplitMix64::new(8));
        assert_eq!(adjuster_forward(&img(3), &w).unwrap(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn identity_and_black() {
        let arch = AdjusterArch {
            basis_count: 1,
            ..AdjusterArch::default()
        };
        let w = AdjusterWeights::constant(arch, &[1.0]).unwrap();
        let x = img(4);
        let out = ttr_apply(&x, &[Lut3D::identity(9).unwrap()], &w).unwrap();
        assert!(out.max_abs_diff(&x).unwrap() <= 1e-6);
        let zero = Lut3D::constant(9, [0.0; 3]).unwrap();
        let out = ttr_apply(&x, &[zero], &w).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn weights_round_trip_through_container() {
        let arch = AdjusterArch::default();
        let w = AdjusterWeights::random(arch, &mut SplitMix64::new(5));
        let mut wc = WeightContainer::new();
        w.store(&mut wc);
        assert_eq!(AdjusterWeights::from_weights(&wc, arch).unwrap(), w);
        assert!(AdjusterWeights::from_weights(&WeightContainer::new(), arch).is_err());
    }
}
