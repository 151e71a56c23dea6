use rayon::prelude::*;

use super::{channel_stats, ssim_constants, ssim_from_stats, LossConfig, LossReport};
use crate::image::ImagePlane;
use crate::lut::{apply_lut, combine_luts, Lut3D, PIXEL_CHUNK};
use crate::{FilmError, Result, Scalar};

/// Chunks whose partial lattices are held in memory at once.
const CHUNK_BATCH: usize = 16;

/// Loss and its gradient with respect to the lattice, averaged over pairs.
#[derive(Debug, Clone)]
pub struct LutGradient {
    pub report: LossReport,
    /// Smoothness penalty value (already weighted).
    pub smoothness: f64,
    /// `report.total + smoothness`, the quantity the gradient differentiates.
    pub objective: f64,
    pub grad: Vec<[f64; 3]>,
}

/// Loss report and `∂total/∂pred` for every sample.
///
/// The MSE part is `2 (f − y) / n`. For each channel the SSIM term
/// `S = A·B / (C·D)` with `A = 2μxμy + C1`, `B = 2σxy + C2`,
/// `C = μx² + μy² + C1`, `D = σx² + σy² + C2` has
/// `∂S/∂x_i = S · (∂A/A + ∂B/B − ∂C/C − ∂D/D)` where, over `N` pixels,
/// `∂A = 2μy/N`, `∂B = 2(y_i − μy)/N`, `∂C = 2μx/N`, `∂D = 2(x_i − μx)/N`.
pub fn loss_gradient_wrt_pred<T: Scalar>(
    pred: &ImagePlane<T>,
    target: &ImagePlane<T>,
    cfg: &LossConfig,
) -> Result<(LossReport, Vec<f64>)> {
    pred.check_same_shape(target, "loss gradient")?;
    let ch = pred.channels();
    let npx = pred.pixel_count().max(1);
    let n = pred.data().len().max(1) as f64;
    let (c1, c2) = ssim_constants(cfg.dynamic_range);

    let mut grad: Vec<f64> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&f, &y)| 2.0 * (f.to_f64_lossless() - y.to_f64_lossless()) / n)
        .collect();
    let mse = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&f, &y)| (f.to_f64_lossless() - y.to_f64_lossless()).powi(2))
        .sum::<f64>()
        / n;

    let slope = cfg.ssim_slope() / ch as f64;
    let inv_n = 1.0 / npx as f64;
    let mut ssim_sum = 0.0;
    for c in 0..ch {
        let s = channel_stats(pred, target, c);
        let a = 2.0 * s.mu_x * s.mu_y + c1;
        let b = 2.0 * s.cov + c2;
        let cc = s.mu_x * s.mu_x + s.mu_y * s.mu_y + c1;
        let d = s.var_x + s.var_y + c2;
        let value = ssim_from_stats(&s, c1, c2);
        ssim_sum += value;
        for i in 0..pred.pixel_count() {
            let x = pred.data()[i * ch + c].to_f64_lossless();
            let y = target.data()[i * ch + c].to_f64_lossless();
            let da = 2.0 * s.mu_y * inv_n;
            let db = 2.0 * (y - s.mu_y) * inv_n;
            let dc = 2.0 * s.mu_x * inv_n;
            let dd = 2.0 * (x - s.mu_x) * inv_n;
            let ds = value * (da / a + db / b - dc / cc - dd / d);
            grad[i * ch + c] += slope * ds;
        }
    }
    let ssim = ssim_sum / ch as f64;
    Ok((
        LossReport {
            mse,
            ssim,
            total: cfg.combine(mse, ssim),
            n_pixels: pred.pixel_count(),
        },
        grad,
    ))
}

/// Distributes per-sample output gradients onto the lattice through the
/// trilinear weights. Pixels are split into fixed chunks whose partial
/// lattices are summed in chunk order, so the result is independent of the
/// worker count.
fn scatter<T: Scalar>(lut: &Lut3D<T>, img: &ImagePlane<T>, gpred: &[f64], scale: f64, acc: &mut [[f64; 3]]) {
    let entries = lut.entries().len();
    let chunks: Vec<(&[T], &[f64])> = img
        .data()
        .chunks(3 * PIXEL_CHUNK)
        .zip(gpred.chunks(3 * PIXEL_CHUNK))
        .collect();
    for batch in chunks.chunks(CHUNK_BATCH) {
        let partials: Vec<Vec<[f64; 3]>> = batch
            .par_iter()
            .map(|(px, gp)| {
                let mut part = vec![[0.0f64; 3]; entries];
                for (p, g) in px.chunks_exact(3).zip(gp.chunks_exact(3)) {
                    let cell = lut.cell([p[0], p[1], p[2]]);
                    for n in 0..8 {
                        let w = cell.weights[n].to_f64_lossless() * scale;
                        let e = &mut part[cell.indices[n]];
                        for k in 0..3 {
                            e[k] += w * g[k];
                        }
                    }
                }
                part
            })
            .collect();
        for part in partials {
            for (a, p) in acc.iter_mut().zip(part) {
                for k in 0..3 {
                    a[k] += p[k];
                }
            }
        }
    }
}

fn for_each_neighbor(bins: usize, mut f: impl FnMut(usize, usize)) {
    let idx = |r: usize, g: usize, b: usize| (r * bins + g) * bins + b;
    for r in 0..bins {
        for g in 0..bins {
            for b in 0..bins {
                if r + 1 < bins {
                    f(idx(r, g, b), idx(r + 1, g, b));
                }
                if g + 1 < bins {
                    f(idx(r, g, b), idx(r, g + 1, b));
                }
                if b + 1 < bins {
                    f(idx(r, g, b), idx(r, g, b + 1));
                }
            }
        }
    }
}

fn residual<T: Scalar>(lut: &Lut3D<T>) -> Vec<[f64; 3]> {
    let id = Lut3D::<f64>::identity(lut.bins()).expect("bins >= 2");
    lut.entries()
        .iter()
        .zip(id.entries())
        .map(|(e, i)| [0, 1, 2].map(|k| e[k].to_f64_lossless() - i[k]))
        .collect()
}

/// `λ Σ (d_a − d_b)²` over lattice-adjacent pairs, where `d` is the
/// lattice minus the identity. Zero for the identity and for any constant
/// offset of it.
pub fn smoothness_penalty<T: Scalar>(lut: &Lut3D<T>, weight: f64) -> f64 {
    if weight == 0.0 {
        return 0.0;
    }
    let d = residual(lut);
    let mut sum = 0.0;
    for_each_neighbor(lut.bins(), |a, b| {
        for k in 0..3 {
            sum += (d[a][k] - d[b][k]).powi(2);
        }
    });
    weight * sum
}

pub fn smoothness_gradient<T: Scalar>(lut: &Lut3D<T>, weight: f64, acc: &mut [[f64; 3]]) {
    if weight == 0.0 {
        return;
    }
    let d = residual(lut);
    for_each_neighbor(lut.bins(), |a, b| {
        for k in 0..3 {
            let g = 2.0 * weight * (d[a][k] - d[b][k]);
            acc[a][k] += g;
            acc[b][k] -= g;
        }
    });
}

fn check_pairs<T: Scalar>(pairs: &[(&ImagePlane<T>, &ImagePlane<T>)]) -> Result<()> {
    if pairs.is_empty() {
        return Err(FilmError::InvalidArgument("no image pairs".into()));
    }
    for (i, (input, target)) in pairs.iter().enumerate() {
        input.require_rgb()?;
        input
            .check_same_shape(target, &format!("pair {i}"))
            .map_err(|e| FilmError::DimensionMismatch(e.to_string()))?;
    }
    Ok(())
}

/// Analytic gradient of the loss averaged over `pairs`, with the weighted
/// smoothness penalty added when `smoothness_weight > 0`.
pub fn lut_gradient<T: Scalar>(
    lut: &Lut3D<T>,
    pairs: &[(&ImagePlane<T>, &ImagePlane<T>)],
    cfg: &LossConfig,
    smoothness_weight: f64,
) -> Result<LutGradient> {
    check_pairs(pairs)?;
    let scale = 1.0 / pairs.len() as f64;
    let mut grad = vec![[0.0f64; 3]; lut.entries().len()];
    let (mut mse, mut ssim, mut total, mut n_pixels) = (0.0, 0.0, 0.0, 0);
    for (input, target) in pairs {
        let pred = apply_lut(lut, input)?;
        let (report, gpred) = loss_gradient_wrt_pred(&pred, target, cfg)?;
        mse += report.mse * scale;
        ssim += report.ssim * scale;
        total += report.total * scale;
        n_pixels += report.n_pixels;
        scatter(lut, input, &gpred, scale, &mut grad);
    }
    let smoothness = smoothness_penalty(lut, smoothness_weight);
    smoothness_gradient(lut, smoothness_weight, &mut grad);
    Ok(LutGradient {
        report: LossReport {
            mse,
            ssim,
            total,
            n_pixels,
        },
        smoothness,
        objective: total + smoothness,
        grad,
    })
}

/// Value differentiated by [`lut_gradient`], computed without any gradient code.
pub fn objective<T: Scalar>(
    lut: &Lut3D<T>,
    pairs: &[(&ImagePlane<T>, &ImagePlane<T>)],
    cfg: &LossConfig,
    smoothness_weight: f64,
) -> Result<f64> {
    check_pairs(pairs)?;
    let scale = 1.0 / pairs.len() as f64;
    let mut total = 0.0;
    for (input, target) in pairs {
        let pred = apply_lut(lut, input)?;
        total += super::total_loss_with(&pred, target, cfg)?.total * scale;
    }
    Ok(total + smoothness_penalty(lut, smoothness_weight))
}

/// Loss of the blended LUT `Σ w_k B_k` and its gradient with respect to `w`.
pub fn combine_weights_gradient<T: Scalar>(
    basis: &[Lut3D<T>],
    weights: &[T],
    pairs: &[(&ImagePlane<T>, &ImagePlane<T>)],
    cfg: &LossConfig,
) -> Result<(f64, Vec<f64>)> {
    let fused = combine_luts(basis, weights)?;
    let g = lut_gradient(&fused, pairs, cfg, 0.0)?;
    let dw = basis
        .iter()
        .map(|b| {
            b.entries()
                .iter()
                .zip(&g.grad)
                .map(|(e, gi)| (0..3).map(|k| e[k].to_f64_lossless() * gi[k]).sum::<f64>())
                .sum()
        })
        .collect();
    Ok((g.objective, dw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn perfect_prediction_has_zero_mse_gradient() {
        let lut = Lut3D::<f64>::identity(5).unwrap();
        let mut rng = SplitMix64::new(1);
        let img = ImagePlane::from_fn(4, 4, 3, |_, _, _| (rng.below(5) as f64) / 4.0);
        let cfg = LossConfig {
            ssim_weight: 0.0,
            ..LossConfig::default()
        };
        let g = lut_gradient(&lut, &[(&img, &img)], &cfg, 0.0).unwrap();
        assert!(g.grad.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn single_node_pixel() {
        // pixel exactly on node (1, 2, 3) of a 5-bin identity; all weight
        // lands on that node, value 2 (f − y) / n per channel
        let lut = Lut3D::<f64>::identity(5).unwrap();
        let img = ImagePlane::new(1, 1, 3, vec![0.25, 0.5, 0.75]).unwrap();
        let target = ImagePlane::new(1, 1, 3, vec![0.0, 1.0, 0.5]).unwrap();
        let cfg = LossConfig {
            ssim_weight: 0.0,
            ..LossConfig::default()
        };
        let g = lut_gradient(&lut, &[(&img, &target)], &cfg, 0.0).unwrap();
        let node = lut.index(1, 2, 3);
        let expect = [2.0 * 0.25 / 3.0, 2.0 * -0.5 / 3.0, 2.0 * 0.25 / 3.0];
        for (i, e) in g.grad.iter().enumerate() {
            for k in 0..3 {
                let want = if i == node { expect[k] } else { 0.0 };
                assert!((e[k] - want).abs() < 1e-15, "entry {i}: {e:?}");
            }
        }
    }

    #[test]
    fn smoothness_zero_at_identity_and_offsets() {
        let lut = Lut3D::<f64>::identity(4).unwrap();
        assert_eq!(smoothness_penalty(&lut, 1.0), 0.0);
        let shifted = Lut3D::new(4, lut.entries().iter().map(|e| e.map(|v| v + 0.1)).collect()).unwrap();
        assert!(smoothness_penalty(&shifted, 1.0) < 1e-24);
        let mut bumped = lut.clone();
        bumped.set(1, 1, 1, [0.5, 0.0, 0.0]);
        assert!(smoothness_penalty(&bumped, 1.0) > 0.0);
    }

    #[test]
    fn mismatched_pair_rejected() {
        let lut = Lut3D::<f64>::identity(2).unwrap();
        let a = ImagePlane::zeros(2, 2, 3);
        let b = ImagePlane::zeros(2, 3, 3);
        assert!(lut_gradient(&lut, &[(&a, &b)], &LossConfig::default(), 0.0).is_err());
        assert!(lut_gradient::<f64>(&lut, &[], &LossConfig::default(), 0.0).is_err());
    }
}
