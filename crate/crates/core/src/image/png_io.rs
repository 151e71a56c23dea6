//! PNG input/output for 8- and 16-bit grayscale or RGB rasters.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::ImagePlane;
use crate::{FilmError, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            8 => Ok(BitDepth::Eight),
            16 => Ok(BitDepth::Sixteen),
            b => Err(FilmError::InvalidArgument(format!("bit depth must be 8 or 16, got {b}"))),
        }
    }

    pub fn max_code(self) -> f64 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DecodedPng<T> {
    pub image: ImagePlane<T>,
    pub bit_depth: BitDepth,
    /// Set when an alpha channel was present and dropped.
    pub alpha_dropped: bool,
}

fn png_err(e: impl std::fmt::Display) -> FilmError {
    FilmError::Png(e.to_string())
}

/// Decodes a PNG stream. Samples are divided by `2^bitdepth - 1`.
pub fn decode_png<T: Scalar, R: Read>(reader: R) -> Result<DecodedPng<T>> {
    let mut decoder = png::Decoder::new(reader);
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(png_err)?;
    let info = reader.info();
    if info.interlaced {
        return Err(FilmError::Png("interlaced PNG is not supported".into()));
    }
    let (src_channels, has_alpha) = match info.color_type {
        png::ColorType::Grayscale => (1, false),
        png::ColorType::GrayscaleAlpha => (2, true),
        png::ColorType::Rgb => (3, false),
        png::ColorType::Rgba => (4, true),
        png::ColorType::Indexed => {
            return Err(FilmError::Png("palette PNG is not supported".into()))
        }
    };
    let bit_depth = match info.bit_depth {
        png::BitDepth::Eight => BitDepth::Eight,
        png::BitDepth::Sixteen => BitDepth::Sixteen,
        d => return Err(FilmError::Png(format!("unsupported bit depth {d:?}"))),
    };
    let (width, height) = (info.width as usize, info.height as usize);

    let mut buf = vec![0u8; reader.output_buffer_size()];
    let frame = reader.next_frame(&mut buf).map_err(png_err)?;
    let bytes = &buf[..frame.buffer_size()];

    let out_channels = if has_alpha { src_channels - 1 } else { src_channels };
    let max = bit_depth.max_code();
    let sample = |i: usize| -> f64 {
        match bit_depth {
            BitDepth::Eight => bytes[i] as f64,
            BitDepth::Sixteen => u16::from_be_bytes([bytes[2 * i], bytes[2 * i + 1]]) as f64,
        }
    };
    let row_samples = width * src_channels;
    let mut data = Vec::with_capacity(width * height * out_channels);
    for y in 0..height {
        // rows are tightly packed for 8/16-bit depths
        for x in 0..width {
            let base = y * row_samples + x * src_channels;
            for c in 0..out_channels {
                data.push(T::lit(sample(base + c) / max));
            }
        }
    }
    Ok(DecodedPng {
        image: ImagePlane::new(height, width, out_channels, data)?,
        bit_depth,
        alpha_dropped: has_alpha,
    })
}

/// Loads a PNG file. A dropped alpha channel is reported through `log`.
pub fn load_png<T: Scalar>(path: impl AsRef<Path>) -> Result<ImagePlane<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| FilmError::io(path, e))?;
    let decoded = decode_png(BufReader::new(file))?;
    if decoded.alpha_dropped {
        log::warn!("{}: alpha channel dropped", path.display());
    }
    Ok(decoded.image)
}

fn quantize(v: f64, max: f64) -> f64 {
    let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    // round half up
    (v * max + 0.5).floor()
}

/// Encodes a grayscale or RGB plane, clamping to `[0, 1]` and quantizing
/// by `round(v * (2^bitdepth - 1))`.
pub fn encode_png<T: Scalar, W: Write>(img: &ImagePlane<T>, writer: W, depth: BitDepth) -> Result<()> {
    img.require_color()?;
    let mut encoder = png::Encoder::new(writer, img.width() as u32, img.height() as u32);
    encoder.set_color(if img.channels() == 1 {
        png::ColorType::Grayscale
    } else {
        png::ColorType::Rgb
    });
    let max = depth.max_code();
    let bytes: Vec<u8> = match depth {
        BitDepth::Eight => {
            encoder.set_depth(png::BitDepth::Eight);
            img.data()
                .iter()
                .map(|&v| quantize(v.to_f64_lossless(), max) as u8)
                .collect()
        }
        BitDepth::Sixteen => {
            encoder.set_depth(png::BitDepth::Sixteen);
            img.data()
                .iter()
                .flat_map(|&v| (quantize(v.to_f64_lossless(), max) as u16).to_be_bytes())
                .collect()
        }
    };
    let mut w = encoder.write_header().map_err(png_err)?;
    w.write_image_data(&bytes).map_err(png_err)?;
    w.finish().map_err(png_err)
}

pub fn save_png<T: Scalar>(img: &ImagePlane<T>, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    img.require_color()?;
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| FilmError::io(path, e))?;
    let mut out = BufWriter::new(file);
    encode_png(img, &mut out, depth)?;
    out.flush().map_err(|e| FilmError::io(path, e))
}
