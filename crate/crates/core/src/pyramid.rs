//! Laplacian pyramid with the Burt–Adelson binomial kernel.
//!
//! `L_i = G_i - up(down(G_i))`, `G_{i+1} = down(G_i)`. Reconstruction folds
//! the bands back from the base, which inverts decomposition exactly up to
//! floating point rounding.

use rayon::prelude::*;

use crate::image::ImagePlane;
use crate::{FilmError, Result, Scalar};

/// 5-tap binomial kernel (1, 4, 6, 4, 1) / 16.
pub const KERNEL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Reflect-101 border index (`dcb|abcd|cba`).
#[inline]
pub fn reflect101(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Horizontal pass of the separable kernel scaled by `gain`, evaluated at
/// output columns `0, step, 2*step, ...`.
fn filter_rows<T: Scalar>(img: &ImagePlane<T>, gain: f64, step: usize) -> ImagePlane<T> {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let out_w = w.div_ceil(step);
    let k: Vec<T> = KERNEL.iter().map(|&v| T::lit(v * gain)).collect();
    let mut out = vec![T::zero(); h * out_w * ch];
    out.par_chunks_mut(out_w * ch).enumerate().for_each(|(y, row)| {
        for ox in 0..out_w {
            let x = (ox * step) as isize;
            for c in 0..ch {
                let mut acc = T::zero();
                for (t, &kv) in k.iter().enumerate() {
                    acc += kv * img.get(y, reflect101(x + t as isize - 2, w), c);
                }
                row[ox * ch + c] = acc;
            }
        }
    });
    ImagePlane::new(h, out_w, ch, out).expect("row filter shape")
}

/// Vertical pass, evaluated at output rows `0, step, 2*step, ...`.
fn filter_cols<T: Scalar>(img: &ImagePlane<T>, gain: f64, step: usize) -> ImagePlane<T> {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let out_h = h.div_ceil(step);
    let k: Vec<T> = KERNEL.iter().map(|&v| T::lit(v * gain)).collect();
    let mut out = vec![T::zero(); out_h * w * ch];
    out.par_chunks_mut(w * ch).enumerate().for_each(|(oy, row)| {
        let y = (oy * step) as isize;
        let rows: [usize; 5] = std::array::from_fn(|t| reflect101(y + t as isize - 2, h));
        for x in 0..w {
            for c in 0..ch {
                let mut acc = T::zero();
                for (t, &kv) in k.iter().enumerate() {
                    acc += kv * img.get(rows[t], x, c);
                }
                row[x * ch + c] = acc;
            }
        }
    });
    ImagePlane::new(out_h, w, ch, out).expect("column filter shape")
}

/// Blur with the binomial kernel and decimate by two in each axis.
pub fn pyr_down<T: Scalar>(img: &ImagePlane<T>) -> Result<ImagePlane<T>> {
    if !img.height().is_multiple_of(2) || !img.width().is_multiple_of(2) || img.height() == 0 || img.width() == 0 {
        return Err(FilmError::DimensionMismatch(format!(
            "pyr_down needs even dimensions, got {}x{}",
            img.height(),
            img.width()
        )));
    }
    Ok(filter_cols(&filter_rows(img, 1.0, 2), 1.0, 2))
}

/// Zero-stuff to twice the size, then blur with the kernel scaled by 4
/// (2 per axis) so constants are preserved.
pub fn pyr_up<T: Scalar>(img: &ImagePlane<T>) -> ImagePlane<T> {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let mut stuffed = ImagePlane::zeros(2 * h, 2 * w, ch);
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                stuffed.set(2 * y, 2 * x, c, img.get(y, x, c));
            }
        }
    }
    filter_cols(&filter_rows(&stuffed, 2.0, 1), 2.0, 1)
}

/// High-frequency bands `L_0 .. L_{n-1}` (finest first) and the low-frequency base `G_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidDecomposition<T> {
    pub levels: Vec<ImagePlane<T>>,
    pub base: ImagePlane<T>,
}

impl<T: Scalar> PyramidDecomposition<T> {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Checks the factor-two size chain from the finest band down to the base.
    pub fn validate(&self) -> Result<()> {
        let mut expected = (self.base.height(), self.base.width());
        for (i, level) in self.levels.iter().enumerate().rev() {
            expected = (expected.0 * 2, expected.1 * 2);
            if (level.height(), level.width()) != expected || level.channels() != self.base.channels() {
                return Err(FilmError::DimensionMismatch(format!(
                    "level {i} is {}x{}x{}, expected {}x{}x{}",
                    level.height(),
                    level.width(),
                    level.channels(),
                    expected.0,
                    expected.1,
                    self.base.channels()
                )));
            }
        }
        Ok(())
    }
}

pub fn check_divisible(height: usize, width: usize, depth: usize) -> Result<()> {
    let m = 1usize
        .checked_shl(depth as u32)
        .filter(|&m| m <= height.max(1) && m <= width.max(1))
        .ok_or(FilmError::IndivisibleDimensions { height, width, depth })?;
    if !height.is_multiple_of(m) || !width.is_multiple_of(m) {
        return Err(FilmError::IndivisibleDimensions { height, width, depth });
    }
    Ok(())
}

pub fn decompose<T: Scalar>(img: &ImagePlane<T>, depth: usize) -> Result<PyramidDecomposition<T>> {
    if depth == 0 {
        return Err(FilmError::InvalidArgument("pyramid depth must be at least 1".into()));
    }
    check_divisible(img.height(), img.width(), depth)?;
    let mut levels = Vec::with_capacity(depth);
    let mut current = img.clone();
    for _ in 0..depth {
        let down = pyr_down(&current)?;
        levels.push(current.sub(&pyr_up(&down))?);
        current = down;
    }
    Ok(PyramidDecomposition {
        levels,
        base: current,
    })
}

pub fn reconstruct<T: Scalar>(pyr: &PyramidDecomposition<T>) -> Result<ImagePlane<T>> {
    pyr.validate()?;
    pyr.levels
        .iter()
        .rev()
        .try_fold(pyr.base.clone(), |acc, level| level.add(&pyr_up(&acc)))
}
