use rayon::prelude::*;

use super::ImagePlane;
use crate::{FilmError, Result, Scalar};

/// Source coordinate taps for one output axis: `(i0, i1, frac)`.
fn axis_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            // half-pixel centers (align_corners = false)
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resampling with half-pixel centers and clamped edges.
///
/// Every output sample is a convex combination of input samples, so the
/// output range never exceeds the input range.
pub fn resize_bilinear<T: Scalar>(
    img: &ImagePlane<T>,
    out_h: usize,
    out_w: usize,
) -> Result<ImagePlane<T>> {
    if out_h == 0 || out_w == 0 {
        return Err(FilmError::InvalidArgument(format!(
            "resize target {out_h}x{out_w} has a zero dimension"
        )));
    }
    if img.height() == 0 || img.width() == 0 {
        return Err(FilmError::InvalidArgument("resize of an empty image".into()));
    }
    if img.height() == out_h && img.width() == out_w {
        return Ok(img.clone());
    }
    let ch = img.channels();
    let ys = axis_taps(img.height(), out_h);
    let xs = axis_taps(img.width(), out_w);
    let mut out = vec![T::zero(); out_h * out_w * ch];
    out.par_chunks_mut(out_w * ch)
        .zip(ys.par_iter())
        .for_each(|(row, &(y0, y1, fy))| {
            let fy = T::lit(fy);
            let gy = T::one() - fy;
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let fx = T::lit(fx);
                let gx = T::one() - fx;
                for c in 0..ch {
                    let top = img.get(y0, x0, c) * gx + img.get(y0, x1, c) * fx;
                    let bot = img.get(y1, x0, c) * gx + img.get(y1, x1, c) * fx;
                    row[ox * ch + c] = top * gy + bot * fy;
                }
            }
        });
    ImagePlane::new(out_h, out_w, ch, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_preserved() {
        let img = ImagePlane::<f32>::filled(3, 5, 3, 0.37);
        let out = resize_bilinear(&img, 7, 2).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.37).abs() < 1e-7));
    }

    #[test]
    fn single_pixel_broadcasts() {
        let img = ImagePlane::<f32>::new(1, 1, 1, vec![0.8]).unwrap();
        let out = resize_bilinear(&img, 4, 6).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.8));
    }

    #[test]
    fn half_pixel_upsample() {
        // Hand evaluation: src = (o + 0.5) / 2 - 0.5 -> -0.25, 0.25, 0.75, 1.25, clamped.
        let img = ImagePlane::<f64>::new(2, 1, 1, vec![0.0, 1.0]).unwrap();
        let out = resize_bilinear(&img, 4, 1).unwrap();
        assert_eq!(out.data(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn zero_target_rejected() {
        let img = ImagePlane::<f32>::zeros(2, 2, 1);
        assert!(resize_bilinear(&img, 0, 2).is_err());
        assert!(resize_bilinear(&img, 2, 0).is_err());
    }

    fn arb_image() -> impl Strategy<Value = ImagePlane<f32>> {
        (1usize..9, 1usize..9, prop::sample::select(vec![1usize, 3])).prop_flat_map(|(h, w, c)| {
            prop::collection::vec(-1.0f32..2.0, h * w * c)
                .prop_map(move |d| ImagePlane::new(h, w, c, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn same_size_is_identity(img in arb_image()) {
            let out = resize_bilinear(&img, img.height(), img.width()).unwrap();
            prop_assert!(out.max_abs_diff(&img).unwrap() <= 1e-6);
        }

        #[test]
        fn output_within_input_range(img in arb_image(), oh in 1usize..20, ow in 1usize..20) {
            let lo = img.data().iter().cloned().fold(f32::INFINITY, f32::min);
            let hi = img.data().iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let out = resize_bilinear(&img, oh, ow).unwrap();
            for &v in out.data() {
                prop_assert!(v >= lo - 1e-6 && v <= hi + 1e-6);
            }
        }
    }
}
