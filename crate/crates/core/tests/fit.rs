use filmgrade::fit::{fit_lut, pair_fingerprint, write_trace_csv, FitConfig, FitMode, Optimizer};
use filmgrade::lut::{apply_lut, Lut3D};
use filmgrade::metrics::psnr;
use filmgrade::rng::SplitMix64;
use filmgrade::threads::build_pool;
use filmgrade::{FilmError, Image, ImagePlane};

fn scene(h: usize, w: usize, seed: u64) -> Image {
    let mut rng = SplitMix64::new(seed);
    let (a, b) = (rng.next_f64(), rng.next_f64());
    ImagePlane::from_fn(h, w, 3, |y, x, c| {
        let ramp = match c {
            0 => x as f64 / (w - 1) as f64,
            1 => y as f64 / (h - 1) as f64,
            _ => (a * x as f64 / w as f64 + b * y as f64 / h as f64) / (a + b),
        };
        (0.7 * ramp + 0.3 * rng.next_f64()) as f32
    })
}

fn swap_rb(img: &Image) -> Image {
    ImagePlane::from_fn(img.height(), img.width(), 3, |y, x, c| img.get(y, x, 2 - c))
}

#[test]
fn learns_channel_swap() {
    let pairs: Vec<(Image, Image)> = (0..4).map(|i| scene(24, 24, i)).map(|a| (a.clone(), swap_rb(&a))).collect();
    let cfg = FitConfig {
        iterations: 400,
        step_size: 1e-2,
        bins: 5,
        smoothness_weight: 0.0,
        ..FitConfig::default()
    };
    let r = fit_lut(&pairs, &cfg).unwrap();
    let first = r.trace.first().unwrap().total;
    let last = r.trace.last().unwrap().total;
    assert!(last < first * 0.01, "{first} -> {last}");
    let probe = scene(24, 24, 99);
    let p = psnr(&apply_lut(&r.lut, &probe).unwrap(), &swap_rb(&probe), 1.0).unwrap();
    assert!(p > 30.0, "{p}");
}

#[test]
fn gradient_descent_trace_is_monotone() {
    let pairs = vec![(scene(16, 16, 5), swap_rb(&scene(16, 16, 5)))];
    let cfg = FitConfig {
        iterations: 60,
        step_size: 0.05,
        bins: 3,
        optimizer: Optimizer::GradientDescent,
        ..FitConfig::default()
    };
    let r = fit_lut(&pairs, &cfg).unwrap();
    assert_eq!(r.trace.len(), 60);
    for w in r.trace.windows(2) {
        assert!(w[1].total <= w[0].total + 1e-12, "{} -> {}", w[0].total, w[1].total);
    }
}

#[test]
fn identity_pairs_stay_at_identity() {
    let pairs: Vec<(Image, Image)> = (0..2).map(|i| (scene(8, 8, i), scene(8, 8, i))).collect();
    let cfg = FitConfig {
        iterations: 20,
        step_size: 0.05,
        bins: 5,
        optimizer: Optimizer::GradientDescent,
        ..FitConfig::default()
    };
    let r = fit_lut(&pairs, &cfg).unwrap();
    let id = Lut3D::<f32>::identity(5).unwrap();
    for (a, b) in r.lut.entries().iter().zip(id.entries()) {
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() < 1e-6);
        }
    }
}

#[test]
fn full_batch_ignores_pair_order() {
    let pairs: Vec<(Image, Image)> = (0..5).map(|i| (scene(12, 12, i), swap_rb(&scene(12, 12, i + 10)))).collect();
    let mut reversed = pairs.clone();
    reversed.reverse();
    let cfg = FitConfig {
        iterations: 30,
        step_size: 1e-2,
        bins: 5,
        ..FitConfig::default()
    };
    let a = fit_lut(&pairs, &cfg).unwrap();
    let b = fit_lut(&reversed, &cfg).unwrap();
    assert_eq!(a.lut, b.lut);
    assert_eq!(a.trace, b.trace);
    assert_ne!(pair_fingerprint(&pairs[0].0, &pairs[0].1), pair_fingerprint(&pairs[1].0, &pairs[1].1));
}

#[test]
fn results_do_not_depend_on_thread_count() {
    // 80×80 spans two pixel chunks, so partial sums really are split.
    let pairs: Vec<(Image, Image)> = (0..3).map(|i| (scene(80, 80, i), swap_rb(&scene(80, 80, i)))).collect();
    for mode in [FitMode::FullBatch, FitMode::Shuffled] {
        let cfg = FitConfig {
            iterations: 10,
            step_size: 1e-2,
            bins: 9,
            seed: 7,
            holdout_fraction: 0.34,
            mode,
            ..FitConfig::default()
        };
        let run = |n| build_pool(Some(n)).unwrap().install(|| fit_lut(&pairs, &cfg).unwrap());
        let (one, four) = (run(1), run(4));
        assert_eq!(one.lut, four.lut);
        assert_eq!(one.trace, four.trace);
        assert_eq!(one.holdout, four.holdout);
        assert_eq!(one.holdout.len(), 1);
        assert!(one.trace.iter().all(|t| t.holdout_psnr.is_some()));
    }
}

#[test]
fn shuffled_mode_is_seeded() {
    let pairs: Vec<(Image, Image)> = (0..4).map(|i| (scene(10, 10, i), swap_rb(&scene(10, 10, i)))).collect();
    let cfg = |seed| FitConfig {
        iterations: 12,
        step_size: 1e-2,
        bins: 3,
        seed,
        mode: FitMode::Shuffled,
        ..FitConfig::default()
    };
    let a = fit_lut(&pairs, &cfg(1)).unwrap();
    assert_eq!(a.lut, fit_lut(&pairs, &cfg(1)).unwrap().lut);
    assert_ne!(a.lut, fit_lut(&pairs, &cfg(2)).unwrap().lut);
}

#[test]
fn non_finite_target_aborts_with_trace() {
    let mut bad = scene(8, 8, 1);
    bad.set(0, 0, 0, f32::NAN);
    let pairs = vec![(scene(8, 8, 1), bad)];
    let cfg = FitConfig {
        iterations: 5,
        bins: 3,
        ..FitConfig::default()
    };
    match fit_lut(&pairs, &cfg) {
        Err(FilmError::NonFiniteLoss { iteration, trace }) => {
            assert_eq!(iteration, 0);
            assert!(trace.is_empty());
        }
        other => panic!("{:?}", other.map(|r| r.trace.len())),
    }
}

#[test]
fn trace_csv_layout() {
    let pairs = vec![(scene(8, 8, 1), swap_rb(&scene(8, 8, 1)))];
    let cfg = FitConfig {
        iterations: 3,
        bins: 3,
        ..FitConfig::default()
    };
    let r = fit_lut(&pairs, &cfg).unwrap();
    let mut buf = Vec::new();
    write_trace_csv(&r.trace, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "iteration,mse,ssim,total,holdout_psnr");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("0,") && lines[1].ends_with(','));
}

#[test]
fn invalid_configs_rejected() {
    let pairs = vec![(scene(8, 8, 1), scene(8, 8, 2))];
    for cfg in [
        FitConfig { bins: 1, ..FitConfig::default() },
        FitConfig { step_size: -1.0, ..FitConfig::default() },
        FitConfig { holdout_fraction: 1.5, ..FitConfig::default() },
    ] {
        assert!(matches!(fit_lut(&pairs, &cfg), Err(FilmError::InvalidArgument(_))));
    }
    assert!(fit_lut::<f32>(&[], &FitConfig::default()).is_err());
    let mismatched = vec![(scene(8, 8, 1), scene(8, 6, 2))];
    assert!(fit_lut(&mismatched, &FitConfig { iterations: 1, ..FitConfig::default() }).is_err());
}
