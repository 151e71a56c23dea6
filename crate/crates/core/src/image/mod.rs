//! Raster data model shared by every stage.

mod color;
mod png_io;
mod resize;

pub use color::{lab_to_srgb, srgb_to_lab, LabColor};
pub use png_io::{decode_png, encode_png, load_png, save_png, BitDepth, DecodedPng};
pub use resize::resize_bilinear;

use crate::{FilmError, Result, Scalar};

/// Interleaved `height × width × channels` raster, row-major.
///
/// Color images hold samples nominally in `[0, 1]`; feature maps produced by
/// the neural blocks are unbounded and may have any channel count.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> ImagePlane<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(FilmError::DataLength {
                len: data.len(),
                height,
                width,
                channels,
            });
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, T::zero())
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: T) {
        let i = self.index(y, x, c);
        self.data[i] = v;
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[T] {
        let i = self.index(y, x, 0);
        &self.data[i..i + self.channels]
    }

    pub fn pixels(&self) -> std::slice::ChunksExact<'_, T> {
        self.data.chunks_exact(self.channels)
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn same_spatial(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub(crate) fn check_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(FilmError::DimensionMismatch(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.height, self.width, self.channels, other.height, other.width, other.channels
            )))
        }
    }

    /// Rejects anything other than grayscale or RGB.
    pub fn require_color(&self) -> Result<()> {
        match self.channels {
            1 | 3 => Ok(()),
            c => Err(FilmError::UnsupportedChannels(c)),
        }
    }

    pub fn require_rgb(&self) -> Result<()> {
        if self.channels == 3 {
            Ok(())
        } else {
            Err(FilmError::UnsupportedChannels(self.channels))
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two same-shape planes.
    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same_shape(other, "zip_map")?;
        Ok(Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|v| v * k)
    }

    pub fn clamp01(&self) -> Self {
        self.map(|v| v.max(T::zero()).min(T::one()))
    }

    /// Largest absolute per-sample difference.
    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.check_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max))
    }

    /// Extracts channel `c` as a single-channel plane.
    pub fn channel(&self, c: usize) -> Self {
        Self {
            height: self.height,
            width: self.width,
            channels: 1,
            data: self.pixels().map(|p| p[c]).collect(),
        }
    }

    /// Stacks planes of equal spatial size along the channel axis.
    pub fn concat_channels(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| FilmError::InvalidArgument("concat of zero planes".into()))?;
        for p in parts {
            if !p.same_spatial(first) {
                return Err(FilmError::DimensionMismatch(format!(
                    "concat: {}x{} vs {}x{}",
                    p.height, p.width, first.height, first.width
                )));
            }
        }
        let channels: usize = parts.iter().map(|p| p.channels).sum();
        let mut data = Vec::with_capacity(first.pixel_count() * channels);
        for i in 0..first.pixel_count() {
            for p in parts {
                data.extend_from_slice(&p.data[i * p.channels..(i + 1) * p.channels]);
            }
        }
        Ok(Self {
            height: first.height,
            width: first.width,
            channels,
            data,
        })
    }

    /// Center-crops so both dimensions are multiples of `m`.
    pub fn crop_to_multiple(&self, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(FilmError::InvalidArgument("crop multiple must be positive".into()));
        }
        let h = self.height / m * m;
        let w = self.width / m * m;
        if h == 0 || w == 0 {
            return Err(FilmError::InvalidArgument(format!(
                "{}x{} is smaller than the crop multiple {m}",
                self.height, self.width
            )));
        }
        let y0 = (self.height - h) / 2;
        let x0 = (self.width - w) / 2;
        Ok(Self::from_fn(h, w, self.channels, |y, x, c| {
            self.get(y + y0, x + x0, c)
        }))
    }

    pub fn cast<U: Scalar>(&self) -> ImagePlane<U> {
        ImagePlane {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| U::lit(v.to_f64_lossless())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_length() {
        let err = ImagePlane::<f32>::new(2, 2, 3, vec![0.0; 11]).unwrap_err();
        assert!(matches!(err, FilmError::DataLength { len: 11, .. }));
    }

    #[test]
    fn color_channel_policy() {
        assert!(ImagePlane::<f32>::zeros(1, 1, 1).require_color().is_ok());
        assert!(ImagePlane::<f32>::zeros(1, 1, 3).require_color().is_ok());
        assert!(matches!(
            ImagePlane::<f32>::zeros(1, 1, 4).require_color(),
            Err(FilmError::UnsupportedChannels(4))
        ));
    }

    #[test]
    fn concat_interleaves() {
        let a = ImagePlane::<f32>::filled(1, 2, 1, 1.0);
        let b = ImagePlane::<f32>::filled(1, 2, 2, 2.0);
        let c = ImagePlane::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.channels(), 3);
        assert_eq!(c.data(), &[1.0, 2.0, 2.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn crop_centers() {
        let img = ImagePlane::<f32>::from_fn(5, 7, 1, |y, x, _| (y * 10 + x) as f32);
        let c = img.crop_to_multiple(4).unwrap();
        assert_eq!((c.height(), c.width()), (4, 4));
        assert_eq!(c.get(0, 0, 0), 1.0);
    }
}
