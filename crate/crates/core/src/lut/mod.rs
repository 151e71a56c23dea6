//! 3D LUT lattices and trilinear application.
//!
//! A color `v ∈ [0, 1]³` maps to the continuous lattice coordinate
//! `v · (bins − 1)` per channel. This differs from dividing by
//! `s = C_max / M`, which would send full-scale input to index `M`, one past
//! the end of an `M`-entry axis; the `bins − 1` scaling keeps both endpoints
//! on lattice nodes so the identity lattice interpolates exactly.

mod cube;
mod ttr;

pub use cube::{parse_cube, read_cube, write_cube, write_cube_file, CubeFile};
pub use ttr::{
    adjuster_forward, basis_name, load_basis, store_basis, ttr_apply, AdjusterArch, AdjusterWeights,
    ADJUSTER_INPUT_SIZE,
};

use rayon::prelude::*;

use crate::image::ImagePlane;
use crate::{FilmError, Result, Scalar};

pub const DEFAULT_BINS: usize = 33;
pub const DEFAULT_BASIS_COUNT: usize = 3;

/// Pixels per parallel work item in LUT kernels.
pub(crate) const PIXEL_CHUNK: usize = 4096;

/// `bins³` lattice of RGB outputs indexed `(r, g, b)` with `r` slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct Lut3D<T> {
    bins: usize,
    data: Vec<[T; 3]>,
}

/// The eight lattice entries surrounding a color and their trilinear weights,
/// ordered `(dr, dg, db)` lexicographically.
#[derive(Debug, Clone, Copy)]
pub struct TrilinearCell<T> {
    pub indices: [usize; 8],
    pub weights: [T; 8],
}

impl<T: Scalar> Lut3D<T> {
    pub fn new(bins: usize, data: Vec<[T; 3]>) -> Result<Self> {
        if bins < 2 {
            return Err(FilmError::InvalidArgument(format!("LUT needs at least 2 bins, got {bins}")));
        }
        if data.len() != bins * bins * bins {
            return Err(FilmError::InvalidArgument(format!(
                "LUT with {bins} bins needs {} entries, got {}",
                bins * bins * bins,
                data.len()
            )));
        }
        if data.iter().flatten().any(|v| !v.is_finite()) {
            return Err(FilmError::InvalidArgument("LUT entries must be finite".into()));
        }
        Ok(Self { bins, data })
    }

    /// `lattice[i, j, k] = (i, j, k) / (bins − 1)`.
    pub fn identity(bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(FilmError::InvalidArgument(format!("LUT needs at least 2 bins, got {bins}")));
        }
        let step = T::lit((bins - 1) as f64);
        let mut data = Vec::with_capacity(bins * bins * bins);
        for r in 0..bins {
            for g in 0..bins {
                for b in 0..bins {
                    data.push([
                        T::lit(r as f64) / step,
                        T::lit(g as f64) / step,
                        T::lit(b as f64) / step,
                    ]);
                }
            }
        }
        Ok(Self { bins, data })
    }

    pub fn constant(bins: usize, value: [T; 3]) -> Result<Self> {
        Self::new(bins, vec![value; bins * bins * bins])
    }

    #[inline]
    pub fn bins(&self) -> usize {
        self.bins
    }

    #[inline]
    pub fn entries(&self) -> &[[T; 3]] {
        &self.data
    }

    #[inline]
    pub fn entries_mut(&mut self) -> &mut [[T; 3]] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, r: usize, g: usize, b: usize) -> usize {
        (r * self.bins + g) * self.bins + b
    }

    #[inline]
    pub fn get(&self, r: usize, g: usize, b: usize) -> [T; 3] {
        self.data[self.index(r, g, b)]
    }

    pub fn set(&mut self, r: usize, g: usize, b: usize, v: [T; 3]) {
        let i = self.index(r, g, b);
        self.data[i] = v;
    }

    /// Flattened `[r0 g0 b0 r1 ...]` view of all entries.
    pub fn flat(&self) -> Vec<T> {
        self.data.iter().flatten().copied().collect()
    }

    pub fn from_flat(bins: usize, flat: &[T]) -> Result<Self> {
        if !flat.len().is_multiple_of(3) {
            return Err(FilmError::InvalidArgument("flat LUT length not a multiple of 3".into()));
        }
        Self::new(bins, flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn cast<U: Scalar>(&self) -> Lut3D<U> {
        Lut3D {
            bins: self.bins,
            data: self
                .data
                .iter()
                .map(|e| e.map(|v| U::lit(v.to_f64_lossless())))
                .collect(),
        }
    }

    /// Locates `rgb` in the lattice: per channel the coordinate is
    /// `clamp(v, 0, 1) · (bins − 1)`, the lower node is clamped to
    /// `[0, bins − 2]`, and the fractional remainder sets the weights.
    #[inline]
    pub fn cell(&self, rgb: [T; 3]) -> TrilinearCell<T> {
        let top = T::lit((self.bins - 1) as f64);
        let mut lo = [0usize; 3];
        let mut frac = [T::zero(); 3];
        for k in 0..3 {
            let v = rgb[k].max(T::zero()).min(T::one());
            let c = v * top;
            let i = c.floor().to_usize().unwrap_or(0).min(self.bins - 2);
            lo[k] = i;
            frac[k] = c - T::lit(i as f64);
        }
        let mut indices = [0usize; 8];
        let mut weights = [T::zero(); 8];
        let mut n = 0;
        for dr in 0..2 {
            let wr = if dr == 0 { T::one() - frac[0] } else { frac[0] };
            for dg in 0..2 {
                let wg = if dg == 0 { T::one() - frac[1] } else { frac[1] };
                for db in 0..2 {
                    let wb = if db == 0 { T::one() - frac[2] } else { frac[2] };
                    indices[n] = self.index(lo[0] + dr, lo[1] + dg, lo[2] + db);
                    weights[n] = wr * wg * wb;
                    n += 1;
                }
            }
        }
        TrilinearCell { indices, weights }
    }

    /// Trilinear lookup of a single color; no output clamping.
    #[inline]
    pub fn lookup(&self, rgb: [T; 3]) -> [T; 3] {
        let cell = self.cell(rgb);
        let mut out = [T::zero(); 3];
        for n in 0..8 {
            let e = self.data[cell.indices[n]];
            for k in 0..3 {
                out[k] += cell.weights[n] * e[k];
            }
        }
        out
    }
}

pub fn identity_lut<T: Scalar>(bins: usize) -> Result<Lut3D<T>> {
    Lut3D::identity(bins)
}

/// Applies `lut` to every pixel of an RGB image. Inputs are clamped to
/// `[0, 1]` on entry; outputs are not clamped.
pub fn apply_lut<T: Scalar>(lut: &Lut3D<T>, img: &ImagePlane<T>) -> Result<ImagePlane<T>> {
    img.require_rgb()?;
    let mut out = vec![T::zero(); img.data().len()];
    out.par_chunks_mut(3 * PIXEL_CHUNK)
        .zip(img.data().par_chunks(3 * PIXEL_CHUNK))
        .for_each(|(dst, src)| {
            for (d, s) in dst.chunks_exact_mut(3).zip(src.chunks_exact(3)) {
                d.copy_from_slice(&lut.lookup([s[0], s[1], s[2]]));
            }
        });
    ImagePlane::new(img.height(), img.width(), 3, out)
}

/// Entrywise `Σ w_k · basis_k`, summed in basis order.
pub fn combine_luts<T: Scalar>(basis: &[Lut3D<T>], weights: &[T]) -> Result<Lut3D<T>> {
    let first = basis
        .first()
        .ok_or_else(|| FilmError::InvalidArgument("combine_luts with an empty basis".into()))?;
    if basis.len() != weights.len() {
        return Err(FilmError::DimensionMismatch(format!(
            "{} basis LUTs but {} weights",
            basis.len(),
            weights.len()
        )));
    }
    if let Some(bad) = basis.iter().find(|l| l.bins != first.bins) {
        return Err(FilmError::DimensionMismatch(format!(
            "basis bins differ: {} vs {}",
            first.bins, bad.bins
        )));
    }
    let data = (0..first.data.len())
        .map(|i| {
            let mut acc = [T::zero(); 3];
            for (lut, &w) in basis.iter().zip(weights) {
                for k in 0..3 {
                    acc[k] += w * lut.data[i][k];
                }
            }
            acc
        })
        .collect();
    Ok(Lut3D {
        bins: first.bins,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn random_lut(bins: usize, seed: u64) -> Lut3D<f64> {
        let mut rng = SplitMix64::new(seed);
        Lut3D::new(
            bins,
            (0..bins * bins * bins)
                .map(|_| [rng.next_f64(), rng.next_f64(), rng.next_f64()])
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identity_entries() {
        let l = identity_lut::<f64>(2).unwrap();
        for r in 0..2 {
            for g in 0..2 {
                for b in 0..2 {
                    assert_eq!(l.get(r, g, b), [r as f64, g as f64, b as f64]);
                }
            }
        }
        let l = identity_lut::<f32>(33).unwrap();
        assert_eq!(l.get(16, 16, 16), [0.5, 0.5, 0.5]);
        assert!(identity_lut::<f32>(1).is_err());
    }

    #[test]
    fn identity_application() {
        let l = identity_lut::<f32>(33).unwrap();
        let mut rng = SplitMix64::new(1);
        let img = ImagePlane::from_fn(7, 9, 3, |_, _, _| rng.next_f64() as f32);
        let out = apply_lut(&l, &img).unwrap();
        assert!(out.max_abs_diff(&img).unwrap() <= 1e-6);
    }

    #[test]
    fn constant_lattice() {
        let l = Lut3D::<f32>::constant(5, [0.1, 0.2, 0.3]).unwrap();
        let img = ImagePlane::from_fn(3, 3, 3, |y, x, c| ((y + x + c) % 4) as f32 / 3.0);
        for px in apply_lut(&l, &img).unwrap().pixels() {
            for (v, e) in px.iter().zip([0.1f32, 0.2, 0.3]) {
                assert!((v - e).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn corner_blend_by_hand() {
        let mut l = identity_lut::<f64>(2).unwrap();
        l.set(1, 1, 1, [0.0, 0.0, 0.0]);
        // each corner weighs 1/8; per channel four corners carry a 1, and
        // zeroing (1,1,1) removes one of them
        let out = l.lookup([0.5, 0.5, 0.5]);
        for v in out {
            assert!((v - 3.0 / 8.0).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_grayscale() {
        let l = identity_lut::<f32>(2).unwrap();
        assert!(matches!(
            apply_lut(&l, &ImagePlane::zeros(2, 2, 1)),
            Err(FilmError::UnsupportedChannels(1))
        ));
    }

    #[test]
    fn combine_cases() {
        let a = random_lut(3, 1);
        let b = random_lut(3, 2);
        let c = random_lut(3, 3);
        assert_eq!(combine_luts(&[a.clone(), b.clone(), c], &[1.0, 0.0, 0.0]).unwrap(), a);
        let same = combine_luts(&[a.clone(), a.clone()], &[0.5, 0.5]).unwrap();
        for (x, y) in same.entries().iter().zip(a.entries()) {
            for k in 0..3 {
                assert!((x[k] - y[k]).abs() < 1e-15);
            }
        }
        let mix = combine_luts(&[a.clone(), b.clone()], &[0.3, 0.7]).unwrap();
        for i in 0..27 {
            for k in 0..3 {
                let expect = 0.0 + 0.3 * a.entries()[i][k] + 0.7 * b.entries()[i][k];
                assert_eq!(mix.entries()[i][k], expect);
            }
        }
        assert!(combine_luts::<f64>(&[], &[]).is_err());
        assert!(combine_luts(&[a.clone(), random_lut(4, 1)], &[0.5, 0.5]).is_err());
        assert!(combine_luts(&[a], &[0.5, 0.5]).is_err());
    }

    fn max_adjacent_difference(l: &Lut3D<f64>) -> f64 {
        let n = l.bins();
        let mut m = 0.0f64;
        for r in 0..n {
            for g in 0..n {
                for b in 0..n {
                    let e = l.get(r, g, b);
                    for (dr, dg, db) in [(1, 0, 0), (0, 1, 0), (0, 0, 1)] {
                        if r + dr < n && g + dg < n && b + db < n {
                            let f = l.get(r + dr, g + dg, b + db);
                            for k in 0..3 {
                                m = m.max((e[k] - f[k]).abs());
                            }
                        }
                    }
                }
            }
        }
        m
    }

    proptest! {
        #[test]
        fn nodes_return_entries(seed in any::<u64>(), bins in 2usize..10, r in 0usize..10, g in 0usize..10, b in 0usize..10) {
            let (r, g, b) = (r % bins, g % bins, b % bins);
            let l = random_lut(bins, seed);
            let s = (bins - 1) as f64;
            let out = l.lookup([r as f64 / s, g as f64 / s, b as f64 / s]);
            let e = l.get(r, g, b);
            for k in 0..3 {
                prop_assert!((out[k] - e[k]).abs() < 1e-12);
            }
        }

        #[test]
        fn linear_in_lattice(seed in any::<u64>(), w0 in -2.0f64..2.0, w1 in -2.0f64..2.0, rgb in prop::array::uniform3(0.0f64..1.0)) {
            let a = random_lut(5, seed);
            let b = random_lut(5, seed.wrapping_add(1));
            let mixed = combine_luts(&[a.clone(), b.clone()], &[w0, w1]).unwrap().lookup(rgb);
            let (oa, ob) = (a.lookup(rgb), b.lookup(rgb));
            for k in 0..3 {
                prop_assert!((mixed[k] - (w0 * oa[k] + w1 * ob[k])).abs() < 1e-5);
            }
        }

        #[test]
        fn lipschitz_in_input(seed in any::<u64>(), rgb in prop::array::uniform3(0.0f64..1.0), ch in 0usize..3, eps in -0.05f64..0.05) {
            let bins = 5;
            let l = random_lut(bins, seed);
            let mut moved = rgb;
            moved[ch] = (moved[ch] + eps).clamp(0.0, 1.0);
            let max_step = max_adjacent_difference(&l);
            let (a, b) = (l.lookup(rgb), l.lookup(moved));
            for k in 0..3 {
                prop_assert!((a[k] - b[k]).abs() <= eps.abs() * (bins - 1) as f64 * max_step + 1e-12);
            }
        }
    }
}
