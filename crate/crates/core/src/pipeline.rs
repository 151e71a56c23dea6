//! End-to-end forward composition: pyramid split, base refinement, masked
//! high-frequency bands, reconstruction, and the blended LUT stage.

use std::path::{Path, PathBuf};

use crate::blocks::{
    apply_mask, mask_graph, mask_net_forward, msrm_forward, nsr_forward, nsr_graph, MaskArch, MsrmArch, NsrArch,
};
use crate::image::{resize_bilinear, ImagePlane};
use crate::lut::{load_basis, store_basis, ttr_apply, AdjusterArch, AdjusterWeights, Lut3D, DEFAULT_BASIS_COUNT, DEFAULT_BINS};
use crate::pyramid::{check_divisible, decompose, pyr_up, reconstruct};
use crate::rng::SplitMix64;
use crate::weights::WeightContainer;
use crate::{FilmError, Result};

pub const DEFAULT_DEPTH: usize = 2;
pub const DEFAULT_NSR_INPUT_SIZE: usize = 128;
/// SE gate bias used by the identity configuration; saturates the sigmoid.
const OPEN_GATE_BIAS: f32 = 1000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FilmPipelineConfig {
    pub depth: usize,
    pub nsr_input_size: usize,
    pub lut_bins: usize,
    pub basis_count: usize,
    pub weights_path: Option<PathBuf>,
    pub nsr: NsrArch,
    pub mask: MaskArch,
    pub msrm: MsrmArch,
    pub adjuster: AdjusterArch,
}

impl Default for FilmPipelineConfig {
    fn default() -> Self {
        Self {
            depth: DEFAULT_DEPTH,
            nsr_input_size: DEFAULT_NSR_INPUT_SIZE,
            lut_bins: DEFAULT_BINS,
            basis_count: DEFAULT_BASIS_COUNT,
            weights_path: None,
            nsr: NsrArch::default(),
            mask: MaskArch::default(),
            msrm: MsrmArch::default(),
            adjuster: AdjusterArch::default(),
        }
    }
}

impl FilmPipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FilmError::InvalidArgument(m));
        if self.depth == 0 {
            return bad("depth must be at least 1".into());
        }
        let m = self.nsr.size_multiple();
        if self.nsr_input_size == 0 || !self.nsr_input_size.is_multiple_of(m) {
            return bad(format!("nsr_input_size {} must be a positive multiple of {m}", self.nsr_input_size));
        }
        if self.lut_bins < 2 {
            return bad(format!("lut_bins must be at least 2, got {}", self.lut_bins));
        }
        if self.basis_count == 0 || self.basis_count != self.adjuster.basis_count {
            return bad(format!(
                "basis_count {} disagrees with adjuster outputs {}",
                self.basis_count, self.adjuster.basis_count
            ));
        }
        if self.msrm.channels != 3 {
            return bad(format!("msrm channels must be 3, got {}", self.msrm.channels));
        }
        if self.mask.width == 0 || !self.mask.width.is_multiple_of(2) || self.nsr.width == 0 {
            return bad("mask and nsr widths must be positive, mask width even".into());
        }
        Ok(())
    }

    /// Architecture header written into every container.
    fn store_meta(&self, wc: &mut WeightContainer) {
        wc.set_meta("lut_bins", self.lut_bins);
        wc.set_meta("basis_count", self.basis_count);
        wc.set_meta("nsr_input_size", self.nsr_input_size);
        self.nsr.store_meta(wc);
        self.mask.store_meta(wc);
        self.msrm.store_meta(wc);
        self.adjuster.store_meta(wc);
    }

    /// Reads the architecture header of `wc`, keeping `depth` and `weights_path`.
    pub fn with_header(&self, wc: &WeightContainer) -> Result<Self> {
        let cfg = Self {
            depth: self.depth,
            weights_path: self.weights_path.clone(),
            lut_bins: wc.meta("lut_bins")?,
            basis_count: wc.meta("basis_count")?,
            nsr_input_size: wc.meta("nsr_input_size")?,
            nsr: NsrArch::from_meta(wc)?,
            mask: MaskArch::from_meta(wc)?,
            msrm: MsrmArch::from_meta(wc)?,
            adjuster: AdjusterArch::from_meta(wc)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn check_header(&self, wc: &WeightContainer) -> Result<()> {
        let found = self.with_header(wc)?;
        if found != *self {
            return Err(FilmError::HeaderMismatch(format!(
                "weights were built for {:?}, configuration expects {:?}",
                arch_summary(&found),
                arch_summary(self)
            )));
        }
        Ok(())
    }
}

fn arch_summary(c: &FilmPipelineConfig) -> (usize, usize, usize, NsrArch, MaskArch, MsrmArch, AdjusterArch) {
    (c.lut_bins, c.basis_count, c.nsr_input_size, c.nsr, c.mask, c.msrm, c.adjuster)
}

/// A header-checked container with the parsed LUT stage.
#[derive(Debug, Clone)]
pub struct PipelineWeights {
    pub container: WeightContainer,
    pub basis: Vec<Lut3D<f32>>,
    pub adjuster: AdjusterWeights,
}

impl PipelineWeights {
    pub fn from_container(container: WeightContainer, cfg: &FilmPipelineConfig) -> Result<Self> {
        cfg.validate()?;
        cfg.check_header(&container)?;
        nsr_graph(&cfg.nsr).check_weights(&container)?;
        mask_graph(&cfg.mask).check_weights(&container)?;
        for (name, dims) in cfg.msrm.tensor_shapes() {
            container.expect(&name, &dims)?;
        }
        let basis = load_basis(&container, cfg.basis_count, cfg.lut_bins)?;
        let adjuster = AdjusterWeights::from_weights(&container, cfg.adjuster)?;
        Ok(Self {
            container,
            basis,
            adjuster,
        })
    }
}

pub fn load_weights(path: impl AsRef<Path>, cfg: &FilmPipelineConfig) -> Result<PipelineWeights> {
    PipelineWeights::from_container(WeightContainer::load(path)?, cfg)
}

pub fn save_weights(wc: &WeightContainer, path: impl AsRef<Path>) -> Result<()> {
    wc.save(path)
}

fn assemble(
    cfg: &FilmPipelineConfig,
    fill_blocks: impl FnOnce(&mut WeightContainer),
    adjuster: &AdjusterWeights,
) -> Result<WeightContainer> {
    cfg.validate()?;
    let mut wc = WeightContainer::new();
    cfg.store_meta(&mut wc);
    fill_blocks(&mut wc);
    let id = Lut3D::<f32>::identity(cfg.lut_bins)?;
    store_basis(&mut wc, &vec![id; cfg.basis_count]);
    adjuster.store(&mut wc);
    Ok(wc)
}

/// Seeded block weights, identity basis LUTs, and an adjuster whose head
/// selects the first basis LUT.
pub fn init_weights(cfg: &FilmPipelineConfig, seed: u64) -> Result<WeightContainer> {
    let mut rng = SplitMix64::new(seed);
    let mut nsr_rng = rng.fork();
    let mut mask_rng = rng.fork();
    let mut msrm_rng = rng.fork();
    let adjuster = AdjusterWeights::init(cfg.adjuster, &mut rng.fork());
    assemble(
        cfg,
        |wc| {
            nsr_graph(&cfg.nsr).init_weights(&mut nsr_rng, wc);
            mask_graph(&cfg.mask).init_weights(&mut mask_rng, wc);
            cfg.msrm.init_weights(&mut msrm_rng, wc);
        },
        &adjuster,
    )
}

/// Weights under which every stage is the identity: zero-residual NSR,
/// masks of one, pass-through MSRM, identity basis with weights (1, 0, ...).
pub fn identity_weights(cfg: &FilmPipelineConfig) -> Result<WeightContainer> {
    identity_weights_with_mask(cfg, 1.0)
}

/// Like [`identity_weights`] but with a constant mask value.
pub fn identity_weights_with_mask(cfg: &FilmPipelineConfig, mask_value: f32) -> Result<WeightContainer> {
    let mut head = vec![0.0f32; cfg.basis_count];
    head[0] = 1.0;
    let adjuster = AdjusterWeights::constant(cfg.adjuster, &head)?;
    assemble(
        cfg,
        |wc| {
            nsr_graph(&cfg.nsr).zero_weights(wc);
            mask_graph(&cfg.mask).zero_weights(wc);
            wc.get_mut("mask.conv2.bias").expect("mask graph stores conv2").data[0] = mask_value;
            cfg.msrm.zero_weights(wc);
            let fc2 = wc.get_mut("msrm.se.fc2.bias").expect("msrm stores fc2");
            fc2.data.iter_mut().for_each(|b| *b = OPEN_GATE_BIAS);
        },
        &adjuster,
    )
}

/// Runs the base-refinement network at `cfg.nsr_input_size`, adding the
/// resampled residual back onto the original base.
fn refine_base(base: &ImagePlane<f32>, cfg: &FilmPipelineConfig, wc: &WeightContainer) -> Result<ImagePlane<f32>> {
    let s = cfg.nsr_input_size;
    if base.height() == s && base.width() == s {
        return nsr_forward(base, wc, &cfg.nsr);
    }
    let small = resize_bilinear(base, s, s)?;
    let residual = nsr_forward(&small, wc, &cfg.nsr)?.sub(&small)?;
    base.add(&resize_bilinear(&residual, base.height(), base.width())?)
}

/// Intermediate results of one [`stylize_with`] pass.
#[derive(Debug, Clone)]
pub struct StylizeTrace {
    pub refined_base: ImagePlane<f32>,
    /// Masks per level, finest first.
    pub masks: Vec<ImagePlane<f32>>,
    pub reconstructed: ImagePlane<f32>,
    pub output: ImagePlane<f32>,
}

pub fn stylize_traced(img: &ImagePlane<f32>, cfg: &FilmPipelineConfig, w: &PipelineWeights) -> Result<StylizeTrace> {
    cfg.validate()?;
    img.require_rgb()?;
    check_divisible(img.height(), img.width(), cfg.depth)?;
    let wc = &w.container;
    let mut pyr = decompose(img, cfg.depth)?;
    let refined = refine_base(&pyr.base, cfg, wc)?;

    let coarsest = cfg.depth - 1;
    let mask = mask_net_forward(&pyr.levels[coarsest], &pyr_up(&pyr.base), &pyr_up(&refined), wc, &cfg.mask)?;
    let mut masks = vec![ImagePlane::zeros(0, 0, 1); cfg.depth];
    masks[coarsest] = mask;
    for i in (0..coarsest).rev() {
        let (h, wd) = (pyr.levels[i].height(), pyr.levels[i].width());
        masks[i] = resize_bilinear(&masks[i + 1], h, wd)?;
    }
    for (i, band) in pyr.levels.iter_mut().enumerate() {
        *band = apply_mask(band, &masks[i])?;
    }
    pyr.levels[coarsest] = msrm_forward(&pyr.levels[coarsest], wc, &cfg.msrm)?;

    pyr.base = refined.clone();
    let reconstructed = reconstruct(&pyr)?;
    let output = ttr_apply(&reconstructed, &w.basis, &w.adjuster)?;
    Ok(StylizeTrace {
        refined_base: refined,
        masks,
        reconstructed,
        output,
    })
}

pub fn stylize_with(img: &ImagePlane<f32>, cfg: &FilmPipelineConfig, w: &PipelineWeights) -> Result<ImagePlane<f32>> {
    Ok(stylize_traced(img, cfg, w)?.output)
}

/// Validates `weights` against `cfg` and runs the full forward pass.
pub fn stylize(img: &ImagePlane<f32>, cfg: &FilmPipelineConfig, weights: &WeightContainer) -> Result<ImagePlane<f32>> {
    let w = PipelineWeights::from_container(weights.clone(), cfg)?;
    stylize_with(img, cfg, &w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random(h: usize, w: usize, seed: u64) -> ImagePlane<f32> {
        let mut rng = SplitMix64::new(seed);
        ImagePlane::from_fn(h, w, 3, |_, _, _| rng.next_f64() as f32)
    }

    fn small_cfg() -> FilmPipelineConfig {
        FilmPipelineConfig {
            nsr_input_size: 32,
            lut_bins: 9,
            ..Default::default()
        }
    }

    #[test]
    fn identity_configuration() {
        let cfg = small_cfg();
        let wc = identity_weights(&cfg).unwrap();
        for (h, w) in [(32, 32), (48, 64)] {
            let img = random(h, w, 1);
            let out = stylize(&img, &cfg, &wc).unwrap();
            assert!(out.max_abs_diff(&img).unwrap() < 1e-5);
        }
    }

    #[test]
    fn zero_mask_strips_detail() {
        let cfg = small_cfg();
        let wc = identity_weights_with_mask(&cfg, 0.0).unwrap();
        let w = PipelineWeights::from_container(wc, &cfg).unwrap();
        let img = random(40, 24, 2);
        let t = stylize_traced(&img, &cfg, &w).unwrap();
        let mut expect = t.refined_base.clone();
        for _ in 0..cfg.depth {
            expect = pyr_up(&expect);
        }
        assert!(t.reconstructed.max_abs_diff(&expect).unwrap() < 1e-6);
    }

    #[test]
    fn init_is_seeded() {
        let cfg = small_cfg();
        let a = init_weights(&cfg, 1).unwrap().to_bytes().unwrap();
        assert_eq!(a, init_weights(&cfg, 1).unwrap().to_bytes().unwrap());
        assert_ne!(a, init_weights(&cfg, 2).unwrap().to_bytes().unwrap());
    }

    #[test]
    fn init_output_in_range() {
        let cfg = small_cfg();
        let wc = init_weights(&cfg, 3).unwrap();
        let img = random(32, 32, 4);
        let out = stylize(&img, &cfg, &wc).unwrap();
        assert!(out.same_shape(&img));
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn header_and_tensor_errors() {
        let cfg = small_cfg();
        let mut wc = identity_weights(&cfg).unwrap();
        let other = FilmPipelineConfig {
            lut_bins: 5,
            ..small_cfg()
        };
        assert!(matches!(PipelineWeights::from_container(wc.clone(), &other), Err(FilmError::HeaderMismatch(_))));
        wc.remove("nsr.enc0.conv1.kernel");
        match PipelineWeights::from_container(wc, &cfg) {
            Err(FilmError::MissingTensor(n)) => assert_eq!(n, "nsr.enc0.conv1.kernel"),
            other => panic!("{other:?}"),
        }
        let img = random(30, 32, 5);
        let wc = identity_weights(&cfg).unwrap();
        assert!(matches!(stylize(&img, &cfg, &wc), Err(FilmError::IndivisibleDimensions { .. })));
    }
}
