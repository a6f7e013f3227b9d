use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::time::Duration;

use hmk_core::bench::{self, BenchConfig, BenchSize, Kernel};
use hmk_core::eval::{self, EvalConfig, Report};
use hmk_core::masking::{feature_mask, hybrid_mask_with_tol, mask_planes, MaskedFeatures};
use hmk_core::npy::{read_array_file, read_mask_file, write_array_file};
use hmk_core::synth::{SynthSpec, SynthSuite};
use hmk_core::{cosine_correlation, BinaryMask, EpisodeManifest, Error, Result};

use crate::{Command, MaskMode};

fn io_error(path: &Path, e: impl Into<Box<dyn std::error::Error + Send + Sync>>) -> Error {
    Error::File {
        path: path.to_path_buf(),
        source: Box::new(Error::Io(io::Error::other(e))),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Mask {
            mode,
            features,
            mask,
            im_features,
            zero_tol,
            output,
        } => mask_cmd(mode, &features, &mask, im_features.as_deref(), zero_tol, &output),
        Command::Correlate { query, support, output } => correlate(&query, &support, &output),
        Command::Evaluate {
            manifest,
            predictor,
            threshold,
            sweep,
            fusion,
            zero_tol,
            threads,
            png_dir,
            output,
        } => {
            let cfg = EvalConfig {
                predictor,
                fusion,
                zero_tol,
                thresholds: sweep.map_or(vec![threshold], |s| s.0),
            };
            cfg.validate()?;
            let mut pool = rayon::ThreadPoolBuilder::new();
            if let Some(n) = threads {
                pool = pool.num_threads(n);
            }
            let pool = pool
                .build()
                .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
            pool.install(|| evaluate(&manifest, &cfg, png_dir.as_deref(), &output))
        }
        Command::Synth {
            out,
            episodes,
            shots,
            seed,
            fold,
            classes,
            folds,
            scheme,
            small_objects,
            image_size,
            channels,
            layers,
            noise,
            blur,
        } => {
            let base = if small_objects { SynthSpec::small_objects() } else { SynthSpec::default() };
            let spec = SynthSpec {
                image_size: (image_size, image_size),
                channels,
                layer_sizes: layers.iter().map(|&s| (s, s)).collect(),
                noise: noise.unwrap_or(base.noise),
                blur: blur.unwrap_or(base.blur),
                shots,
                ..base
            };
            let suite = SynthSuite {
                n_classes: classes,
                n_folds: folds,
                scheme,
                fold,
                ..SynthSuite::new(spec, episodes, seed)
            };
            synth(&suite, &out)
        }
        Command::Bench {
            sizes,
            batches,
            batch_ms,
            output,
        } => bench_cmd(sizes, batches, batch_ms, output.as_deref()),
    }
}

fn mask_cmd(
    mode: MaskMode,
    features: &Path,
    mask: &Path,
    im_features: Option<&Path>,
    zero_tol: f64,
    output: &Path,
) -> Result<()> {
    if zero_tol.is_nan() || zero_tol < 0.0 {
        return Err(Error::InvalidArgument(format!("zero tolerance {zero_tol} must be >= 0")));
    }
    let feat = read_array_file(features)?;
    let mask = read_mask_file(mask)?;
    let out = match mode {
        MaskMode::Fm => feature_mask(&feat, &mask, 0)?.into_features(),
        MaskMode::Im => mask_planes(&feat, &mask)?,
        MaskMode::Hybrid => {
            let path = im_features.expect("clap requires --im-features for hybrid");
            let im = MaskedFeatures::from_input_masked(read_array_file(path)?, 0)?;
            let fm = feature_mask(&feat, &mask, 0)?;
            hybrid_mask_with_tol(&fm, &im, zero_tol as f32)?.into_features()
        }
    };
    write_array_file(output, &out)?;
    println!("{}: {:?} -> {}", mode_name(mode), out.shape(), output.display());
    Ok(())
}

fn mode_name(mode: MaskMode) -> &'static str {
    match mode {
        MaskMode::Fm => "fm",
        MaskMode::Im => "im",
        MaskMode::Hybrid => "hybrid",
    }
}

fn correlate(query: &Path, support: &Path, output: &Path) -> Result<()> {
    let q = read_array_file(query)?;
    let s = read_array_file(support)?;
    let corr = cosine_correlation(&q, &s)?;
    corr.check_range()?;
    write_array_file(output, corr.tensor())?;
    println!("correlation: {:?} -> {}", corr.tensor().shape(), output.display());
    Ok(())
}

fn evaluate(manifest_path: &Path, cfg: &EvalConfig, png_dir: Option<&Path>, output: &Path) -> Result<()> {
    let manifest = EpisodeManifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("")).to_path_buf();
    let n = manifest.episodes.len();
    let load = |i: usize| manifest.load_episode(&base, i);
    let result = eval::evaluate(n, load, cfg)?;
    let report = Report::new(&result, cfg, manifest.shots, manifest.fold)?;
    if let Some(dir) = png_dir {
        write_pngs(dir, n, &load, cfg, report.threshold)?;
    }
    write_text(output, &report.to_json()?)?;
    println!(
        "{}: miou {:.4} fb_iou {:.4} at threshold {} over {} episodes",
        report.predictor, report.miou, report.fb_iou, report.threshold, report.episodes
    );
    Ok(())
}

fn write_pngs(
    dir: &Path,
    n: usize,
    load: &(impl Fn(usize) -> Result<hmk_core::episodes::EpisodeData> + Sync),
    cfg: &EvalConfig,
    threshold: f64,
) -> Result<()> {
    use rayon::prelude::*;
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let preds = (0..n)
        .into_par_iter()
        .map(|i| eval::predict_episode(&load(i)?, cfg, threshold))
        .collect::<Result<Vec<_>>>()?;
    for (i, pred) in preds.iter().enumerate() {
        save_png(&dir.join(format!("ep{i:05}.png")), pred)?;
    }
    Ok(())
}

fn save_png(path: &Path, mask: &BinaryMask) -> Result<()> {
    let (h, w) = mask.dims();
    let pixels = mask.data().iter().map(|&v| v * 255).collect();
    let img = image::GrayImage::from_raw(w as u32, h as u32, pixels).expect("buffer matches mask size");
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| io_error(path, e))
}

fn synth(suite: &SynthSuite, out: &Path) -> Result<()> {
    let manifest = suite.write(out)?;
    let items = manifest.episodes.len() * (manifest.shots + 1);
    println!(
        "synth: {} episodes, {} items -> {}",
        manifest.episodes.len(),
        items,
        out.join("manifest.json").display()
    );
    Ok(())
}

fn bench_cmd(sizes: Vec<BenchSize>, batches: usize, batch_ms: u64, output: Option<&Path>) -> Result<()> {
    let cfg = BenchConfig {
        sizes,
        batches,
        batch_time: Duration::from_millis(batch_ms),
        ..BenchConfig::default()
    };
    let rows = bench::run_bench(&cfg)?;
    match output {
        Some(path) => {
            let mut buf = Vec::new();
            bench::write_csv(&rows, &mut buf)?;
            fs::write(path, buf).map_err(|e| io_error(path, e))?;
            for r in rows.iter().filter(|r| r.kernel == Kernel::Hm) {
                println!("{}: hm/fm time ratio {:.3}", r.size, r.hm_fm_ratio);
            }
        }
        None => bench::write_csv(&rows, io::stdout().lock())?,
    }
    io::stdout().flush()?;
    Ok(())
}
