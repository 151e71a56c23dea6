//! Linear operator program with a skip stack, enough to express the
//! encoder/decoder networks without bespoke wiring code.

use super::{conv2d, layer_norm, sca, simple_gate, ConvParams, ConvSpec, FeatureMap};
use crate::image::resize_bilinear;
use crate::rng::SplitMix64;
use crate::weights::{Tensor, WeightContainer};
use crate::{FilmError, Result};

pub const LAYER_NORM_EPS: f32 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Conv { name: String, spec: ConvSpec },
    LayerNorm { name: String, channels: usize },
    SimpleGate,
    Sca { name: String, channels: usize },
    /// Pushes the current activation onto the skip stack.
    PushSkip,
    /// Pops the skip stack and adds it to the current activation.
    AddSkip,
    /// Bilinear ×2 enlargement.
    Upsample2x,
}

impl Op {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Conv { .. } => "conv",
            Op::LayerNorm { .. } => "layer_norm",
            Op::SimpleGate => "simple_gate",
            Op::Sca { .. } => "sca",
            Op::PushSkip => "push_skip",
            Op::AddSkip => "add_skip",
            Op::Upsample2x => "upsample2x",
        }
    }

    /// Tensors this op reads, with their shapes.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>)> {
        match self {
            Op::Conv { name, spec } => vec![
                (format!("{name}.kernel"), spec.kernel_dims()),
                (format!("{name}.bias"), vec![spec.out_ch]),
            ],
            Op::LayerNorm { name, channels } => vec![
                (format!("{name}.gamma"), vec![*channels]),
                (format!("{name}.beta"), vec![*channels]),
            ],
            Op::Sca { name, channels } => vec![
                (format!("{name}.kernel"), vec![*channels, *channels, 1, 1]),
                (format!("{name}.bias"), vec![*channels]),
            ],
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockGraph {
    pub input_channels: usize,
    pub ops: Vec<Op>,
}

impl BlockGraph {
    pub fn new(input_channels: usize) -> Self {
        Self {
            input_channels,
            ops: Vec::new(),
        }
    }

    pub fn push(&mut self, op: Op) -> &mut Self {
        self.ops.push(op);
        self
    }

    /// Walks the program checking channel arity; returns the output channel count.
    pub fn validate(&self) -> Result<usize> {
        let mut ch = self.input_channels;
        let mut stack = Vec::new();
        let arity = |i: usize, op: &Op, want: usize, have: usize| -> Result<()> {
            if want == have {
                Ok(())
            } else {
                Err(FilmError::DimensionMismatch(format!(
                    "op {i} ({}) expects {want} channels, receives {have}",
                    op.kind()
                )))
            }
        };
        for (i, op) in self.ops.iter().enumerate() {
            match op {
                Op::Conv { spec, .. } => {
                    spec.validate()?;
                    arity(i, op, spec.in_ch, ch)?;
                    ch = spec.out_ch;
                }
                Op::LayerNorm { channels, .. } | Op::Sca { channels, .. } => arity(i, op, *channels, ch)?,
                Op::SimpleGate => {
                    if !ch.is_multiple_of(2) {
                        return Err(FilmError::DimensionMismatch(format!(
                            "op {i} (simple_gate) receives odd channel count {ch}"
                        )));
                    }
                    ch /= 2;
                }
                Op::PushSkip => stack.push(ch),
                Op::AddSkip => {
                    let skip = stack.pop().ok_or_else(|| {
                        FilmError::InvalidArgument(format!("op {i} (add_skip) with empty skip stack"))
                    })?;
                    arity(i, op, skip, ch)?;
                }
                Op::Upsample2x => {}
            }
        }
        if !stack.is_empty() {
            return Err(FilmError::InvalidArgument(format!(
                "{} unconsumed skip connections",
                stack.len()
            )));
        }
        Ok(ch)
    }

    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.ops.iter().flat_map(Op::tensors).collect()
    }

    /// Confirms every tensor exists with the right shape.
    pub fn check_weights(&self, wc: &WeightContainer) -> Result<()> {
        for (name, dims) in self.tensor_shapes() {
            wc.expect(&name, &dims)?;
        }
        Ok(())
    }

    /// Seeded initialization: uniform `±sqrt(1/fan_in)` for convolutions and
    /// channel attention, unit gamma and zero beta for LayerNorm.
    pub fn init_weights(&self, rng: &mut SplitMix64, wc: &mut WeightContainer) {
        for op in &self.ops {
            match op {
                Op::Conv { name, spec } => ConvParams::random(*spec, &mut rng.fork()).store(wc, name),
                Op::Sca { name, channels } => {
                    ConvParams::random(ConvSpec::pointwise(*channels, *channels), &mut rng.fork()).store(wc, name)
                }
                Op::LayerNorm { name, channels } => store_layer_norm(wc, name, *channels),
                _ => {}
            }
        }
    }

    /// All convolution and attention weights zero; LayerNorm at unit gamma.
    pub fn zero_weights(&self, wc: &mut WeightContainer) {
        for op in &self.ops {
            match op {
                Op::Conv { name, spec } => ConvParams::zeros(*spec).store(wc, name),
                Op::Sca { name, channels } => {
                    ConvParams::zeros(ConvSpec::pointwise(*channels, *channels)).store(wc, name)
                }
                Op::LayerNorm { name, channels } => store_layer_norm(wc, name, *channels),
                _ => {}
            }
        }
    }

    pub fn run(&self, input: &FeatureMap, wc: &WeightContainer) -> Result<FeatureMap> {
        self.validate()?;
        if input.channels() != self.input_channels {
            return Err(FilmError::DimensionMismatch(format!(
                "graph expects {} input channels, got {}",
                self.input_channels,
                input.channels()
            )));
        }
        let mut x = input.clone();
        let mut stack: Vec<FeatureMap> = Vec::new();
        for op in &self.ops {
            x = match op {
                Op::Conv { name, spec } => conv2d(&x, &ConvParams::from_weights(wc, name, *spec)?)?,
                Op::LayerNorm { name, channels } => {
                    let g = wc.expect(&format!("{name}.gamma"), &[*channels])?;
                    let b = wc.expect(&format!("{name}.beta"), &[*channels])?;
                    layer_norm(&x, &g.data, &b.data, LAYER_NORM_EPS)?
                }
                Op::SimpleGate => simple_gate(&x)?,
                Op::Sca { name, channels } => {
                    let w = ConvParams::from_weights(wc, name, ConvSpec::pointwise(*channels, *channels))?;
                    sca(&x, &w)?
                }
                Op::PushSkip => {
                    stack.push(x.clone());
                    x
                }
                Op::AddSkip => {
                    let skip = stack.pop().expect("validated skip stack");
                    x.add(&skip)?
                }
                Op::Upsample2x => resize_bilinear(&x, x.height() * 2, x.width() * 2)?,
            };
        }
        Ok(x)
    }
}

fn store_layer_norm(wc: &mut WeightContainer, name: &str, channels: usize) {
    wc.insert(format!("{name}.gamma"), Tensor::new(vec![channels], vec![1.0; channels]).unwrap());
    wc.insert(format!("{name}.beta"), Tensor::zeros(vec![channels]));
}
