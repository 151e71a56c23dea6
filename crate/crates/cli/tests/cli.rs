use std::path::Path;
use std::process::{Command, Output};

use filmgrade::image::{load_png, save_png, BitDepth};
use filmgrade::lut::{write_cube_file, CubeFile, Lut3D};
use filmgrade::rng::SplitMix64;
use filmgrade::{Image, ImagePlane};

fn run(args: &[&str]) -> Output {
    run_env(args, &[])
}

fn run_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_filmgrade"));
    cmd.args(args).env_remove("FILMGRADE_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_image(path: &Path, h: usize, w: usize, seed: u64) -> Image {
    let mut rng = SplitMix64::new(seed);
    let img = ImagePlane::from_fn(h, w, 3, |y, x, c| {
        (0.6 * ((x + y + 10 * c) % 32) as f64 / 31.0 + 0.4 * rng.next_f64()) as f32
    });
    save_png(&img, path, BitDepth::Eight).unwrap();
    load_png(path).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["transmogrify"])), 1);
    assert_eq!(code(&run(&["decompose", "--depth", "two", "--out", "x", "in.png"])), 1);
    assert_eq!(code(&run(&["gradcheck", "--target", "hessian", "--seed", "1"])), 1);
    let o = run_env(&["gradcheck", "--target", "lut_lattice"], &[("FILMGRADE_THREADS", "0")]);
    assert_eq!(code(&o), 1);
}

#[test]
fn decompose_reconstruct_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.png");
    let img = write_image(&input, 32, 48, 1);
    let bands = dir.path().join("bands");
    let o = run(&["decompose", "--depth", "3", "--out", p(&bands), p(&input)]);
    assert_eq!(code(&o), 0, "{o:?}");
    for name in ["level0.png", "level1.png", "level2.png", "base.png"] {
        assert!(bands.join(name).exists(), "{name}");
    }
    let out = dir.path().join("rec.png");
    assert_eq!(code(&run(&["reconstruct", "--out", p(&out), p(&bands)])), 0);
    let rec: Image = load_png(&out).unwrap();
    // 16-bit band storage bounds the error by a few codes at 1/65535
    assert!(rec.max_abs_diff(&img).unwrap() < 1e-3);
}

#[test]
fn decompose_rejects_indivisible_unless_cropped() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.png");
    write_image(&input, 30, 20, 2);
    let out = dir.path().join("b");
    assert_eq!(code(&run(&["decompose", "--depth", "2", "--out", p(&out), p(&input)])), 2);
    assert_eq!(code(&run(&["decompose", "--depth", "2", "--crop", "--out", p(&out), p(&input)])), 0);
    let base: Image = load_png(out.join("base.png")).unwrap();
    assert_eq!((base.height(), base.width()), (7, 5));
    assert_eq!(code(&run(&["reconstruct", "--out", p(&dir.path().join("x.png")), p(dir.path())])), 2);
}

#[test]
fn apply_identity_cube_preserves_image() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.png");
    let img = write_image(&input, 16, 16, 3);
    let cube = dir.path().join("id.cube");
    write_cube_file(&CubeFile::new(Lut3D::<f32>::identity(17).unwrap()), &cube).unwrap();
    let out = dir.path().join("out.png");
    assert_eq!(code(&run(&["apply-lut", "--lut", p(&cube), p(&input), p(&out)])), 0);
    let got: Image = load_png(&out).unwrap();
    assert_eq!(got, img);

    std::fs::write(&cube, "LUT_3D_SIZE 2\n0 0 0\n").unwrap();
    assert_eq!(code(&run(&["apply-lut", "--lut", p(&cube), p(&input), p(&out)])), 2);
}

#[test]
fn fit_lut_writes_cube_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dir.path().join("pairs");
    std::fs::create_dir(&pairs).unwrap();
    for i in 0..3 {
        let img = write_image(&pairs.join(format!("p{i}.input.png")), 16, 16, 10 + i);
        let target = img.map(|v| 1.0 - v);
        save_png(&target, pairs.join(format!("p{i}.target.png")), BitDepth::Eight).unwrap();
    }
    let cube = dir.path().join("fit.cube");
    let trace = dir.path().join("trace.csv");
    let args = [
        "fit-lut", "--pairs", p(&pairs), "--bins", "5", "--iters", "40", "--lr", "1e-2", "--seed", "4", "--out",
        p(&cube), "--trace", p(&trace),
    ];
    let o = run(&args);
    assert_eq!(code(&o), 0, "{o:?}");
    let text = std::fs::read_to_string(&trace).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "iteration,mse,ssim,total,holdout_psnr");
    assert_eq!(rows.len(), 41);
    let first: f64 = rows[1].split(',').nth(3).unwrap().parse().unwrap();
    let last: f64 = rows[40].split(',').nth(3).unwrap().parse().unwrap();
    assert!(last < first);
    let cube_text = std::fs::read_to_string(&cube).unwrap();
    assert!(cube_text.contains("LUT_3D_SIZE 5"));

    // same inputs under a different thread cap give the same files
    let cube2 = dir.path().join("fit2.cube");
    let mut args2 = args;
    args2[12] = p(&cube2);
    let trace2 = dir.path().join("trace2.csv");
    args2[14] = p(&trace2);
    assert_eq!(code(&run_env(&args2, &[("FILMGRADE_THREADS", "3")])), 0);
    assert_eq!(std::fs::read(&cube).unwrap(), std::fs::read(&cube2).unwrap());
    assert_eq!(std::fs::read(&trace).unwrap(), std::fs::read(&trace2).unwrap());

    std::fs::remove_file(pairs.join("p1.target.png")).unwrap();
    assert_eq!(code(&run(&args)), 2);
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    assert_eq!(code(&run(&["fit-lut", "--pairs", p(&empty), "--out", p(&cube)])), 2);
}

#[test]
fn stylize_identity_and_thread_independence() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.png");
    let img = write_image(&input, 64, 64, 5);
    let id = dir.path().join("id.fgwc");
    assert_eq!(code(&run(&["init-weights", "--identity", "--out", p(&id)])), 0);
    let out = dir.path().join("out.png");
    assert_eq!(code(&run(&["stylize", "--weights", p(&id), "--depth", "2", p(&input), p(&out)])), 0);
    assert_eq!(load_png::<f32>(&out).unwrap(), img);

    let w = dir.path().join("w.fgwc");
    assert_eq!(code(&run(&["init-weights", "--seed", "7", "--out", p(&w)])), 0);
    let mut outputs = Vec::new();
    for threads in ["1", "4"] {
        let o = dir.path().join(format!("s{threads}.png"));
        let args = ["stylize", "--weights", p(&w), "--depth", "2", p(&input), p(&o)];
        assert_eq!(code(&run_env(&args, &[("FILMGRADE_THREADS", threads)])), 0);
        outputs.push(std::fs::read(&o).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);

    let odd = dir.path().join("odd.png");
    write_image(&odd, 30, 30, 6);
    assert_eq!(code(&run(&["stylize", "--weights", p(&w), p(&odd), p(&out)])), 2);
    std::fs::write(&w, b"FGWC\x01\x00").unwrap();
    assert_eq!(code(&run(&["stylize", "--weights", p(&w), p(&input), p(&out)])), 2);
}

#[test]
fn metrics_json_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.png");
    let b = dir.path().join("b.png");
    write_image(&a, 16, 16, 8);
    write_image(&b, 16, 16, 9);

    let same = run(&["metrics", p(&a), p(&a)]);
    assert_eq!(code(&same), 0);
    let json: serde_json::Value = serde_json::from_str(stdout(&same).trim()).unwrap();
    assert_eq!(json["psnr"], "inf");
    assert_eq!(json["delta_e_mean"], 0.0);
    for key in ["ssim_global", "ssim_windowed", "delta_e_p95"] {
        assert!(json.get(key).is_some(), "{key}");
    }

    let unit: serde_json::Value = serde_json::from_str(stdout(&run(&["metrics", p(&a), p(&b)])).trim()).unwrap();
    let wide: serde_json::Value =
        serde_json::from_str(stdout(&run(&["metrics", "--peak-255", p(&a), p(&b)])).trim()).unwrap();
    let (pu, pw) = (unit["psnr"].as_f64().unwrap(), wide["psnr"].as_f64().unwrap());
    assert!((pu - pw).abs() < 1e-9);
    assert!((unit["delta_e_mean"].as_f64().unwrap() - wide["delta_e_mean"].as_f64().unwrap()).abs() < 1e-9);

    let csv = stdout(&run(&["metrics", "--csv", p(&a), p(&b)]));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "psnr,ssim_global,ssim_windowed,delta_e_mean,delta_e_p95");
    assert_eq!(lines[1].split(',').count(), 5);

    let small = dir.path().join("small.png");
    write_image(&small, 8, 8, 1);
    assert_eq!(code(&run(&["metrics", p(&a), p(&small)])), 2);
    assert_eq!(code(&run(&["metrics", p(&a), p(&dir.path().join("missing.png"))])), 2);
}

#[test]
fn gradcheck_reports_json() {
    let o = run(&["gradcheck", "--target", "lut_lattice", "--seed", "3"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["target"], "lut_lattice");
    assert_eq!(v["passed"], true);
    assert!(v["max_rel_error"].as_f64().unwrap() < 1e-3);
    assert_eq!(code(&run(&["gradcheck", "--target", "combine_weights", "--seed", "3"])), 0);
}
