//! `hmk`: masking, correlation, evaluation, synthetic data and benchmarks
//! from the command line.
//!
//! Exit codes: 0 on success, 1 on runtime or data errors, 2 on usage errors.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use hmk_core::bench::BenchSize;
use hmk_core::eval::{LayerFusion, Predictor};
use hmk_core::FoldScheme;

fn parse<T>(s: &str) -> Result<T, String>
where
    T: std::str::FromStr<Err = hmk_core::Error>,
{
    s.parse().map_err(|e: hmk_core::Error| e.to_string())
}

/// Thresholds of a `start:end:step` sweep.
#[derive(Clone, Debug)]
struct Sweep(Vec<f64>);

fn parse_sweep(s: &str) -> Result<Sweep, String> {
    hmk_core::eval::parse_sweep(s).map(Sweep).map_err(|e| e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "hmk", version, about = "Hybrid masking kernels for few-shot segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum MaskMode {
    Fm,
    Im,
    Hybrid,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Mask a feature (or image) array with a binary mask.
    Mask {
        #[arg(long, value_enum)]
        mode: MaskMode,
        /// `(c, h, w)` float32 array: backbone features, or the image for `im`.
        #[arg(long)]
        features: PathBuf,
        /// 2-D uint8 mask of zeros and ones.
        #[arg(long)]
        mask: PathBuf,
        /// Features of the input-masked image; required by `hybrid`.
        #[arg(long, required_if_eq("mode", "hybrid"))]
        im_features: Option<PathBuf>,
        /// FM values with magnitude at most this count as masked out.
        #[arg(long, default_value_t = 0.0)]
        zero_tol: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Dense cosine correlation between query and support features.
    Correlate {
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        support: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Evaluate a predictor over every episode of a manifest.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        /// gt, prototype-fm, prototype-im or prototype-hm.
        #[arg(long, default_value = "prototype-hm", value_parser = parse::<Predictor>)]
        predictor: Predictor,
        #[arg(long, default_value_t = 0.7)]
        threshold: f64,
        /// `start:end:step`; reports the best threshold. Overrides --threshold.
        #[arg(long, value_parser = parse_sweep)]
        sweep: Option<Sweep>,
        /// deepest or average.
        #[arg(long, default_value = "deepest", value_parser = parse::<LayerFusion>)]
        fusion: LayerFusion,
        #[arg(long, default_value_t = 0.0)]
        zero_tol: f64,
        /// Worker threads (default: all cores).
        #[arg(long, env = "HMK_THREADS")]
        threads: Option<usize>,
        /// Write each episode's prediction as a PNG here.
        #[arg(long)]
        png_dir: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Write a synthetic episode suite (NPY files plus manifest.json).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        episodes: usize,
        #[arg(long, default_value_t = 1)]
        shots: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        fold: u32,
        #[arg(long, default_value_t = 20)]
        classes: u32,
        #[arg(long, default_value_t = 4)]
        folds: u32,
        /// contiguous or interleaved.
        #[arg(long, default_value = "contiguous", value_parser = parse::<FoldScheme>)]
        scheme: FoldScheme,
        /// One blob per image covering at most 2% of it.
        #[arg(long)]
        small_objects: bool,
        #[arg(long, default_value_t = 64)]
        image_size: usize,
        #[arg(long, default_value_t = 32)]
        channels: usize,
        /// Square feature sizes, shallow to deep.
        #[arg(long, value_delimiter = ',', default_values_t = [32, 16])]
        layers: Vec<usize>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        blur: Option<f64>,
    },
    /// Time the FM, IM and HM kernels and write a CSV.
    Bench {
        /// Sizes as CxHxW.
        #[arg(
            long,
            value_delimiter = ',',
            value_parser = parse::<BenchSize>,
            default_value = "256x16x16,512x32x32,1024x32x32,2048x64x64"
        )]
        sizes: Vec<BenchSize>,
        #[arg(long, default_value_t = 5)]
        batches: usize,
        /// Minimum duration of one timed batch.
        #[arg(long, default_value_t = 50)]
        batch_ms: u64,
        /// CSV destination; stdout when absent.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
