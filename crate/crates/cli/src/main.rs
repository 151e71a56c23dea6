use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use filmgrade::fit::{fit_lut, grad_check, write_trace_csv, FitConfig, FitMode, GradTarget, Optimizer};
use filmgrade::image::{load_png, save_png, BitDepth};
use filmgrade::lut::{read_cube, write_cube_file, CubeFile};
use filmgrade::metrics::{evaluate, MetricReport};
use filmgrade::pipeline::{identity_weights, init_weights, load_weights, stylize_with, FilmPipelineConfig};
use filmgrade::pyramid::{decompose, reconstruct};
use filmgrade::threads::{build_pool, threads_from_env, THREADS_ENV};
use filmgrade::{FilmError, Image, Image64, PyramidDecomposition};

const AFTER_HELP: &str = "Exit codes: 0 success, 1 usage error, 2 data or format error.\n\
FILMGRADE_THREADS caps worker threads; results do not depend on it.";

#[derive(Parser)]
#[command(name = "filmgrade", version, about = "Film-style color grading engine", after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split an image into Laplacian bands and a low-frequency base.
    ///
    /// Writes level0.png (finest) .. level{N-1}.png and base.png as 16-bit
    /// PNGs. Bands are stored offset-encoded as (v + 1) / 2.
    Decompose {
        #[arg(long, default_value_t = 2)]
        depth: usize,
        #[arg(long)]
        out: PathBuf,
        /// Center-crop to the nearest size divisible by 2^depth instead of failing.
        #[arg(long)]
        crop: bool,
        input: PathBuf,
    },
    /// Rebuild an image from a directory written by `decompose`.
    Reconstruct {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Bits::Sixteen)]
        bits: Bits,
        dir: PathBuf,
    },
    /// Apply a .cube 3D LUT with trilinear interpolation.
    ApplyLut {
        #[arg(long)]
        lut: PathBuf,
        #[arg(long, value_enum, default_value_t = Bits::Eight)]
        bits: Bits,
        input: PathBuf,
        output: PathBuf,
    },
    /// Fit a 3D LUT to NAME.input.png / NAME.target.png pairs.
    FitLut {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, default_value_t = 33)]
        bins: usize,
        #[arg(long, default_value_t = 2000)]
        iters: usize,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        smoothness: f64,
        /// Fraction of pairs held out for PSNR reporting.
        #[arg(long, default_value_t = 0.0)]
        holdout: f64,
        #[arg(long, value_enum, default_value_t = Mode::FullBatch)]
        mode: Mode,
        #[arg(long, value_enum, default_value_t = Opt::Adam)]
        optimizer: Opt,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run the full forward pass with a weight file.
    Stylize {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, default_value_t = 2)]
        depth: usize,
        #[arg(long, value_enum, default_value_t = Bits::Eight)]
        bits: Bits,
        input: PathBuf,
        output: PathBuf,
    },
    /// Write a seeded weight file.
    InitWeights {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write weights under which stylize is the identity.
        #[arg(long)]
        identity: bool,
        #[arg(long, default_value_t = 33)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two images: PSNR, SSIM (global and windowed), CIE76 delta E.
    Metrics {
        #[arg(long)]
        csv: bool,
        /// Evaluate on the 0..255 scale.
        #[arg(long = "peak-255")]
        peak_255: bool,
        a: PathBuf,
        b: PathBuf,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        /// lut_lattice or combine_weights.
        #[arg(long)]
        target: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Bits {
    #[value(name = "8")]
    Eight,
    #[value(name = "16")]
    Sixteen,
}

impl From<Bits> for BitDepth {
    fn from(b: Bits) -> Self {
        match b {
            Bits::Eight => BitDepth::Eight,
            Bits::Sixteen => BitDepth::Sixteen,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    FullBatch,
    Shuffled,
}

#[derive(Clone, Copy, ValueEnum)]
enum Opt {
    Adam,
    Gd,
}

/// Invalid arguments detected after parsing.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    match err.downcast_ref::<FilmError>() {
        Some(FilmError::InvalidArgument(_)) | Some(FilmError::UnknownTarget(_)) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let threads = threads_from_env().map_err(|e| usage(format!("{THREADS_ENV}: {e}")))?;
    let pool = build_pool(threads)?;
    pool.install(|| dispatch(cli.command))
}

fn dispatch(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Decompose { depth, out, crop, input } => cmd_decompose(depth, &out, crop, &input),
        Command::Reconstruct { out, bits, dir } => cmd_reconstruct(&out, bits.into(), &dir),
        Command::ApplyLut { lut, bits, input, output } => {
            let cube = read_cube::<f32>(&lut)?;
            let img: Image = load_png(&input)?;
            save_png(&cube.apply(&img)?, &output, bits.into())?;
            Ok(())
        }
        Command::FitLut {
            pairs,
            bins,
            iters,
            lr,
            seed,
            smoothness,
            holdout,
            mode,
            optimizer,
            out,
            trace,
        } => {
            let cfg = FitConfig {
                iterations: iters,
                step_size: lr,
                bins,
                smoothness_weight: smoothness,
                seed,
                holdout_fraction: holdout,
                mode: match mode {
                    Mode::FullBatch => FitMode::FullBatch,
                    Mode::Shuffled => FitMode::Shuffled,
                },
                optimizer: match optimizer {
                    Opt::Adam => Optimizer::Adam,
                    Opt::Gd => Optimizer::GradientDescent,
                },
                ..FitConfig::default()
            };
            cfg.validate()?;
            cmd_fit(&pairs, &cfg, &out, trace.as_deref())
        }
        Command::Stylize {
            weights,
            depth,
            bits,
            input,
            output,
        } => {
            if depth == 0 {
                bail!(usage("--depth must be at least 1"));
            }
            let wc = filmgrade::WeightContainer::load(&weights)?;
            let cfg = FilmPipelineConfig {
                depth,
                weights_path: Some(weights.clone()),
                ..FilmPipelineConfig::default()
            }
            .with_header(&wc)?;
            let w = load_weights(&weights, &cfg)?;
            let img: Image = load_png(&input)?;
            save_png(&stylize_with(&img, &cfg, &w)?, &output, bits.into())?;
            Ok(())
        }
        Command::InitWeights { seed, identity, bins, out } => {
            let cfg = FilmPipelineConfig {
                lut_bins: bins,
                ..FilmPipelineConfig::default()
            };
            let wc = if identity { identity_weights(&cfg)? } else { init_weights(&cfg, seed)? };
            wc.save(&out)?;
            Ok(())
        }
        Command::Metrics { csv, peak_255, a, b } => {
            let (peak, scale) = if peak_255 { (255.0, 255.0) } else { (1.0, 1.0) };
            let x: Image64 = load_png(&a)?;
            let y: Image64 = load_png(&b)?;
            let report = evaluate(&x.scale(scale), &y.scale(scale), peak)?;
            let mut stdout = io::stdout().lock();
            if csv {
                writeln!(stdout, "{}\n{}", MetricReport::csv_header(), report.csv_row())?;
            } else {
                writeln!(stdout, "{}", serde_json::to_string(&report)?)?;
            }
            Ok(())
        }
        Command::Gradcheck { target, seed } => {
            let target: GradTarget = target.parse()?;
            let report = grad_check(target, seed)?;
            println!("{}", serde_json::to_string(&report)?);
            if !report.passed {
                bail!("gradient check failed: max relative error {:.3e}", report.max_rel_error);
            }
            Ok(())
        }
    }
}

fn encode_band(band: &Image) -> Image {
    band.map(|v| (v + 1.0) * 0.5)
}

fn decode_band(band: &Image) -> Image {
    band.map(|v| v * 2.0 - 1.0)
}

fn cmd_decompose(depth: usize, out: &Path, crop: bool, input: &Path) -> anyhow::Result<()> {
    if depth == 0 {
        bail!(usage("--depth must be at least 1"));
    }
    let mut img: Image = load_png(input)?;
    if crop {
        img = img.crop_to_multiple(1 << depth)?;
    }
    let pyr = decompose(&img, depth)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (i, band) in pyr.levels.iter().enumerate() {
        save_png(&encode_band(band), out.join(format!("level{i}.png")), BitDepth::Sixteen)?;
    }
    save_png(&pyr.base, out.join("base.png"), BitDepth::Sixteen)?;
    Ok(())
}

fn cmd_reconstruct(out: &Path, bits: BitDepth, dir: &Path) -> anyhow::Result<()> {
    let mut levels = Vec::new();
    while dir.join(format!("level{}.png", levels.len())).exists() {
        let band: Image = load_png(dir.join(format!("level{}.png", levels.len())))?;
        levels.push(decode_band(&band));
    }
    if levels.is_empty() {
        return Err(data_error(format!("{} holds no level0.png", dir.display())));
    }
    let base: Image = load_png(dir.join("base.png"))?;
    let pyr = PyramidDecomposition { levels, base };
    save_png(&reconstruct(&pyr)?, out, bits)?;
    Ok(())
}

fn data_error(msg: String) -> anyhow::Error {
    anyhow::Error::from(FilmError::DimensionMismatch(msg))
}

fn collect_pairs(dir: &Path) -> anyhow::Result<Vec<(String, Image, Image)>> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| FilmError::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".input.png")).map(str::to_string))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(data_error(format!("no *.input.png files in {}", dir.display())));
    }
    names
        .into_iter()
        .map(|n| {
            let target = dir.join(format!("{n}.target.png"));
            if !target.exists() {
                return Err(data_error(format!("{n}.input.png has no matching {n}.target.png")));
            }
            let a: Image = load_png(dir.join(format!("{n}.input.png")))?;
            let b: Image = load_png(&target)?;
            Ok((n, a, b))
        })
        .collect()
}

fn cmd_fit(dir: &Path, cfg: &FitConfig, out: &Path, trace: Option<&Path>) -> anyhow::Result<()> {
    let named = collect_pairs(dir)?;
    let pairs: Vec<(Image, Image)> = named.into_iter().map(|(_, a, b)| (a, b)).collect();
    let result = match fit_lut(&pairs, cfg) {
        Ok(r) => r,
        Err(FilmError::NonFiniteLoss { iteration, trace: rows }) => {
            if let Some(path) = trace {
                write_trace(path, &rows)?;
            }
            return Err(FilmError::NonFiniteLoss { iteration, trace: rows }.into());
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(path) = trace {
        write_trace(path, &result.trace)?;
    }
    let mut cube = CubeFile::new(result.lut);
    cube.title = Some(format!("filmgrade fit seed {}", cfg.seed));
    write_cube_file(&cube, out)?;
    if let Some(last) = result.trace.last() {
        log::info!("final total loss {:.6e}", last.total);
    }
    Ok(())
}

fn write_trace(path: &Path, rows: &[filmgrade::fit::TraceRow]) -> anyhow::Result<()> {
    let file = fs::File::create(path).map_err(|e| FilmError::io(path, e))?;
    write_trace_csv(rows, io::BufWriter::new(file)).map_err(|e| FilmError::io(path, e))?;
    Ok(())
}
