//! Throughput measurement of the three masking kernels.
//!
//! Per size `(c, h, w)` the harness times feature masking of `(c, h, w)`
//! features with a `(4h, 4w)` mask, input masking of a `(3, 4h, 4w)` image
//! and the hybrid kernel on precomputed FM and IM features. Each kernel runs
//! in several timed batches and the fastest batch is reported.

use std::fmt;
use std::hint::black_box;
use std::io::Write;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::{RngExt, SeedableRng};

use crate::episodes::EpisodeRng;
use crate::error::{Error, Result};
use crate::masking::{feature_mask, hybrid_mask, input_mask, MaskedFeatures};
use crate::tensor::{BinaryMask, Tensor};

/// Upsampling factor from feature to image resolution.
const IMAGE_STRIDE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BenchSize {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl BenchSize {
    pub fn elements(&self) -> usize {
        self.channels * self.height * self.width
    }
}

impl fmt::Display for BenchSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

impl FromStr for BenchSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let dims: Vec<usize> = s
            .split('x')
            .map(|d| d.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::InvalidArgument(format!("size '{s}' is not CxHxW")))?;
        match dims[..] {
            [c, h, w] if c > 0 && h > 0 && w > 0 => Ok(Self {
                channels: c,
                height: h,
                width: w,
            }),
            _ => Err(Error::InvalidArgument(format!("size '{s}' is not CxHxW with positive extents"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kernel {
    Fm,
    Im,
    Hm,
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kernel::Fm => "fm",
            Kernel::Im => "im",
            Kernel::Hm => "hm",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub size: BenchSize,
    pub kernel: Kernel,
    pub ns_per_op: f64,
    /// Bytes read plus written per call, divided by the call time.
    pub gb_per_s: f64,
    /// Hybrid over feature-masking time at this size.
    pub hm_fm_ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub sizes: Vec<BenchSize>,
    pub batches: usize,
    /// Minimum wall time of one batch.
    pub batch_time: Duration,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: ["256x16x16", "512x32x32", "1024x32x32", "2048x64x64"]
                .iter()
                .map(|s| s.parse().expect("valid default size"))
                .collect(),
            batches: 5,
            batch_time: Duration::from_millis(50),
            seed: 0,
        }
    }
}

/// Fastest per-call time over `batches` batches of repeated calls.
fn time_kernel(batches: usize, batch_time: Duration, mut f: impl FnMut()) -> f64 {
    f();
    // calibrate the repeat count so a batch lasts about `batch_time`
    let start = Instant::now();
    f();
    let once = start.elapsed().max(Duration::from_nanos(1));
    let reps = (batch_time.as_secs_f64() / once.as_secs_f64()).ceil().max(1.0) as usize;
    (0..batches.max(1))
        .map(|_| {
            let start = Instant::now();
            for _ in 0..reps {
                f();
            }
            start.elapsed().as_secs_f64() * 1e9 / reps as f64
        })
        .fold(f64::INFINITY, f64::min)
}

fn random_tensor(rng: &mut EpisodeRng, shape: &[usize]) -> Result<Tensor<f32>> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0f32..1.0))
}

fn blob_mask(h: usize, w: usize) -> Result<BinaryMask> {
    let (cy, cx, r) = (h as f64 / 2.0, w as f64 / 2.0, h.min(w) as f64 / 3.0);
    BinaryMask::from_fn(h, w, |y, x| {
        (y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2) <= r * r
    })
}

/// Times the three kernels at one size: `[fm, im, hm]` rows.
pub fn bench_size(size: BenchSize, cfg: &BenchConfig) -> Result<[BenchRow; 3]> {
    let mut rng = EpisodeRng::seed_from_u64(cfg.seed);
    let BenchSize {
        channels: c,
        height: h,
        width: w,
    } = size;
    let (ih, iw) = (h * IMAGE_STRIDE, w * IMAGE_STRIDE);
    let feat = random_tensor(&mut rng, &[c, h, w])?;
    let image = random_tensor(&mut rng, &[3, ih, iw])?;
    let mask = blob_mask(ih, iw)?;
    let fm = feature_mask(&feat, &mask, 0)?;
    let im = MaskedFeatures::from_input_masked(random_tensor(&mut rng, &[c, h, w])?, 0)?;

    let t_fm = time_kernel(cfg.batches, cfg.batch_time, || {
        black_box(feature_mask(black_box(&feat), black_box(&mask), 0).expect("valid shapes"));
    });
    let t_im = time_kernel(cfg.batches, cfg.batch_time, || {
        black_box(input_mask(black_box(&image), black_box(&mask)).expect("valid shapes"));
    });
    let t_hm = time_kernel(cfg.batches, cfg.batch_time, || {
        black_box(hybrid_mask(black_box(&fm), black_box(&im)).expect("valid shapes"));
    });

    let f32_bytes = std::mem::size_of::<f32>() as f64;
    let feat_bytes = size.elements() as f64 * f32_bytes;
    let image_bytes = (3 * ih * iw) as f64 * f32_bytes;
    let mask_bytes = (ih * iw) as f64;
    let ratio = t_hm / t_fm;
    let row = |kernel, ns: f64, bytes: f64| BenchRow {
        size,
        kernel,
        ns_per_op: ns,
        gb_per_s: bytes / ns,
        hm_fm_ratio: ratio,
    };
    Ok([
        row(Kernel::Fm, t_fm, 2.0 * feat_bytes + mask_bytes),
        row(Kernel::Im, t_im, 2.0 * image_bytes + mask_bytes),
        row(Kernel::Hm, t_hm, 3.0 * feat_bytes),
    ])
}

pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.sizes.is_empty() {
        return Err(Error::InvalidArgument("no benchmark sizes".into()));
    }
    let mut rows = Vec::with_capacity(3 * cfg.sizes.len());
    for &size in &cfg.sizes {
        rows.extend(bench_size(size, cfg)?);
    }
    Ok(rows)
}

pub const CSV_HEADER: &str = "size,mode,ns_per_op,gb_per_s,hm_fm_ratio";

pub fn write_csv(rows: &[BenchRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{:.1},{:.3},{:.3}",
            r.size, r.kernel, r.ns_per_op, r.gb_per_s, r.hm_fm_ratio
        )?;
    }
    Ok(())
}
