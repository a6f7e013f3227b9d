//! Deterministic synthetic episodes standing in for backbone features.
//!
//! An item is a `(channels, H, W)` "signature image": pixels inside the
//! object mask carry the class signature, pixels outside carry a per-image
//! background signature, and every pixel gets Gaussian texture noise. A
//! layer's features are that image area-pooled to the layer resolution and
//! blurred, which mixes object and background in cells that straddle the
//! boundary, like a receptive field does.
//!
//! Input-masked features run the same pipeline on the masked image, where
//! blanked pixels carry a fixed "void" signature: the response of a backbone
//! to zeroed input is not zero.

use rand::{RngExt, SeedableRng};
use rand_distr::{Distribution, Normal, StandardNormal};

use std::fs;
use std::path::{Path, PathBuf};

use crate::episodes::{
    build_folds, episode_rng, Episode, EpisodeData, EpisodeManifest, EpisodeRng, FoldLayout, FoldScheme, FoldSpec, ItemData,
    ItemRef,
};
use crate::error::{Error, Result};
use crate::npy;
use crate::features::{FeatureStack, LayerId};
use crate::scalar::Scalar;
use crate::tensor::{area_resize, BinaryMask, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    /// Image `(height, width)` in pixels.
    pub image_size: (usize, usize),
    pub channels: usize,
    /// Feature resolutions, shallow to deep. Layer ids are the positions.
    pub layer_sizes: Vec<(usize, usize)>,
    /// Inclusive range of ellipses per mask.
    pub blob_count: (usize, usize),
    /// Inclusive range of ellipse semi-axes, in pixels.
    pub blob_radius: (f64, f64),
    /// Upper bound on the mask area as a fraction of the image.
    pub max_area_fraction: Option<f64>,
    /// Per-element RMS of class and background signatures.
    pub signal: f64,
    /// Standard deviation of per-pixel texture noise.
    pub noise: f64,
    /// Gaussian blur sigma in feature pixels; 0 disables blurring.
    pub blur: f64,
    /// Per-element RMS of the void signature relative to `signal`.
    pub void_level: f64,
    pub shots: usize,
    /// Seeds the class and void signatures, shared by all episodes.
    pub world_seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            image_size: (64, 64),
            channels: 32,
            layer_sizes: vec![(32, 32), (16, 16)],
            blob_count: (1, 2),
            blob_radius: (6.0, 16.0),
            max_area_fraction: None,
            signal: 1.0,
            noise: 0.5,
            blur: 0.5,
            void_level: 1.0,
            shots: 1,
            world_seed: 0,
        }
    }
}

impl SynthSpec {
    /// One small ellipse per image, covering at most 2% of it.
    pub fn small_objects() -> Self {
        Self {
            blob_count: (1, 1),
            blob_radius: (2.0, 6.0),
            max_area_fraction: Some(0.02),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image_size;
        let bad = |msg: String| Err(Error::DegenerateSpec(msg));
        if h == 0 || w == 0 || self.channels == 0 || self.shots == 0 {
            return bad("image size, channels and shots must be positive".into());
        }
        if self.layer_sizes.is_empty() {
            return bad("at least one layer size is required".into());
        }
        if let Some(&(lh, lw)) = self.layer_sizes.iter().find(|&&(lh, lw)| lh == 0 || lw == 0 || lh > h || lw > w) {
            return bad(format!("layer size {lh}x{lw} does not fit a {h}x{w} image"));
        }
        let (lo, hi) = self.blob_count;
        if lo == 0 || lo > hi {
            return bad(format!("blob count range {lo}..={hi} is empty or zero"));
        }
        let (rlo, rhi) = self.blob_radius;
        if !(rlo >= 0.5 && rlo <= rhi) {
            return bad(format!("blob radius range {rlo}..={rhi} is invalid"));
        }
        if 2.0 * rhi > h.min(w) as f64 {
            return bad(format!("blob radius {rhi} is larger than the {h}x{w} image"));
        }
        if let Some(f) = self.max_area_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return bad(format!("area fraction {f} outside (0, 1]"));
            }
            // smallest possible blob must fit under the cap
            if std::f64::consts::PI * rlo * rlo * lo as f64 > f * (h * w) as f64 {
                return bad(format!("blobs of radius {rlo} cannot fit in {f} of the image"));
            }
        }
        let non_negative = |v: f64| v.is_finite() && v >= 0.0;
        if !non_negative(self.signal) || self.signal == 0.0 {
            return bad("signal must be positive and finite".into());
        }
        if !non_negative(self.noise) || !non_negative(self.blur) || !non_negative(self.void_level) {
            return bad("noise, blur and void level must be finite and non-negative".into());
        }
        Ok(())
    }

    pub fn layer_ids(&self) -> Vec<LayerId> {
        (0..self.layer_sizes.len() as LayerId).collect()
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of episode `index` within a suite seeded by `seed`.
pub fn episode_seed(seed: u64, index: usize) -> u64 {
    splitmix(seed ^ splitmix(index as u64))
}

fn signature(rng: &mut EpisodeRng, channels: usize, rms: f64) -> Vec<f64> {
    let v: Vec<f64> = (0..channels).map(|_| StandardNormal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let scale = rms * (channels as f64).sqrt() / norm;
    v.into_iter().map(|x| x * scale).collect()
}

fn class_signature(spec: &SynthSpec, class_id: u32) -> Vec<f64> {
    let mut rng = EpisodeRng::seed_from_u64(splitmix(spec.world_seed ^ splitmix(0xC1A5_5000 + class_id as u64)));
    signature(&mut rng, spec.channels, spec.signal)
}

fn void_signature(spec: &SynthSpec) -> Vec<f64> {
    let mut rng = EpisodeRng::seed_from_u64(splitmix(spec.world_seed ^ 0x5EED_0000_0000_F00D));
    signature(&mut rng, spec.channels, spec.signal * spec.void_level)
}

/// Rasterizes a mask of random rotated ellipses.
fn draw_mask(rng: &mut EpisodeRng, spec: &SynthSpec) -> Result<BinaryMask> {
    let (h, w) = spec.image_size;
    let cap = spec.max_area_fraction.map(|f| (f * (h * w) as f64).floor() as usize);
    for _ in 0..1000 {
        let count = rng.random_range(spec.blob_count.0..=spec.blob_count.1);
        let blobs: Vec<_> = (0..count)
            .map(|_| {
                let a = rng.random_range(spec.blob_radius.0..=spec.blob_radius.1);
                let b = rng.random_range(spec.blob_radius.0..=spec.blob_radius.1);
                let r = a.max(b);
                let cy = rng.random_range(r..=(h as f64 - r));
                let cx = rng.random_range(r..=(w as f64 - r));
                let theta = rng.random_range(0.0..std::f64::consts::PI);
                (cy, cx, a, b, theta.sin(), theta.cos())
            })
            .collect();
        let mask = BinaryMask::from_fn(h, w, |y, x| {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            blobs.iter().any(|&(cy, cx, a, b, s, c)| {
                let (dy, dx) = (py - cy, px - cx);
                let u = dx * c + dy * s;
                let v = -dx * s + dy * c;
                (u / a).powi(2) + (v / b).powi(2) <= 1.0
            })
        })?;
        let area = mask.count_ones();
        if area > 0 && cap.is_none_or(|cap| area <= cap) {
            return Ok(mask);
        }
    }
    Err(Error::DegenerateSpec("could not place a blob satisfying the area cap".into()))
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.into_iter().map(|v| v / total).collect()
}

/// Separable Gaussian blur with clamp-to-edge borders.
fn blur_planes(planes: &mut [f64], c: usize, h: usize, w: usize, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for ch in 0..c {
        let plane = &mut planes[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                tmp[y * w + x] = k
                    .iter()
                    .enumerate()
                    .map(|(j, kv)| kv * plane[y * w + clamp(x as isize + j as isize - r, w)])
                    .sum();
            }
        }
        for y in 0..h {
            for x in 0..w {
                plane[y * w + x] = k
                    .iter()
                    .enumerate()
                    .map(|(j, kv)| kv * tmp[clamp(y as isize + j as isize - r, h) * w + x])
                    .sum();
            }
        }
    }
}

/// Signature image of one item: `(raw, input_masked)`, both `(c, H, W)`.
fn render_item(
    rng: &mut EpisodeRng,
    spec: &SynthSpec,
    mask: &BinaryMask,
    class_sig: &[f64],
    void_sig: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = spec.image_size;
    let c = spec.channels;
    let background = signature(rng, c, spec.signal);
    let noise = Normal::new(0.0, spec.noise).expect("noise sigma is finite and non-negative");
    let n = h * w;
    let mut raw = vec![0.0; c * n];
    let mut masked = vec![0.0; c * n];
    for ch in 0..c {
        for p in 0..n {
            let fg = mask.data()[p] == 1;
            let texture = if spec.noise > 0.0 { noise.sample(rng) } else { 0.0 };
            let base = if fg { class_sig[ch] } else { background[ch] };
            raw[ch * n + p] = base + texture;
            masked[ch * n + p] = if fg { base + texture } else { void_sig[ch] };
        }
    }
    (raw, masked)
}

fn to_stack<T: Scalar>(spec: &SynthSpec, image: &[f64]) -> Result<FeatureStack<T>> {
    let c = spec.channels;
    let layers = spec
        .layer_sizes
        .iter()
        .enumerate()
        .map(|(i, &(lh, lw))| {
            let mut f = area_resize(image, c, spec.image_size, (lh, lw));
            blur_planes(&mut f, c, lh, lw, spec.blur);
            Ok((i as LayerId, Tensor::new(&[c, lh, lw], f.into_iter().map(T::of).collect())?))
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureStack::new(layers)
}

fn make_item<T: Scalar>(
    rng: &mut EpisodeRng,
    spec: &SynthSpec,
    class_sig: &[f64],
    void_sig: &[f64],
) -> Result<ItemData<T>> {
    let mask = draw_mask(rng, spec)?;
    let (raw, masked) = render_item(rng, spec, &mask, class_sig, void_sig);
    Ok(ItemData {
        features: to_stack(spec, &raw)?,
        im_features: to_stack(spec, &masked)?,
        mask,
    })
}

/// Generates one episode of `spec.shots` supports and a query of `class_id`.
///
/// Every item carries raw and input-masked feature stacks plus its
/// image-resolution mask. The output is a pure function of the arguments.
pub fn generate_synthetic_episode<T: Scalar>(seed: u64, spec: &SynthSpec, class_id: u32) -> Result<EpisodeData<T>> {
    spec.validate()?;
    let class_sig = class_signature(spec, class_id);
    let void_sig = void_signature(spec);
    let mut rng = episode_rng(seed);
    let supports = (0..spec.shots)
        .map(|_| make_item(&mut rng, spec, &class_sig, &void_sig))
        .collect::<Result<Vec<_>>>()?;
    let query = make_item(&mut rng, spec, &class_sig, &void_sig)?;
    Ok(EpisodeData {
        class_id,
        supports,
        query,
    })
}

/// A reproducible collection of synthetic episodes drawn from one fold.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSuite {
    pub spec: SynthSpec,
    pub episodes: usize,
    pub seed: u64,
    pub dataset: String,
    pub n_classes: u32,
    pub n_folds: u32,
    pub scheme: FoldScheme,
    pub fold: u32,
}

impl SynthSuite {
    pub fn new(spec: SynthSpec, episodes: usize, seed: u64) -> Self {
        Self {
            spec: SynthSpec { world_seed: seed, ..spec },
            episodes,
            seed,
            dataset: "synthetic".into(),
            n_classes: 20,
            n_folds: 4,
            scheme: FoldScheme::Contiguous,
            fold: 0,
        }
    }

    pub fn fold_spec(&self) -> Result<FoldSpec> {
        build_folds(&self.dataset, self.n_classes, self.n_folds, self.scheme)
    }

    /// Class of every episode, drawn uniformly from the fold's classes.
    pub fn classes(&self) -> Result<Vec<u32>> {
        let classes = self.fold_spec()?.classes_in(self.fold);
        if classes.is_empty() {
            return Err(Error::InvalidArgument(format!("fold {} has no classes", self.fold)));
        }
        let mut rng = episode_rng(self.seed);
        Ok((0..self.episodes)
            .map(|_| classes[rng.random_range(0..classes.len())])
            .collect())
    }

    pub fn episode<T: Scalar>(&self, index: usize, class_id: u32) -> Result<EpisodeData<T>> {
        generate_synthetic_episode(episode_seed(self.seed, index), &self.spec, class_id)
    }

    pub fn generate<T: Scalar>(&self) -> Result<Vec<EpisodeData<T>>> {
        self.classes()?
            .into_iter()
            .enumerate()
            .map(|(i, c)| self.episode(i, c))
            .collect()
    }

    /// Writes every episode under `dir` as NPY files and returns the
    /// manifest (also saved as `dir/manifest.json`) with paths relative to
    /// `dir`. Queries get no input-masked features.
    pub fn write(&self, dir: &Path) -> Result<EpisodeManifest> {
        fs::create_dir_all(dir).map_err(|e| Error::Io(e).at_path(dir))?;
        let classes = self.classes()?;
        let episodes = classes
            .iter()
            .enumerate()
            .map(|(i, &class_id)| {
                let ep = self.episode::<f32>(i, class_id)?;
                let rel = PathBuf::from(format!("ep{i:05}"));
                fs::create_dir_all(dir.join(&rel)).map_err(|e| Error::Io(e).at_path(dir.join(&rel)))?;
                let supports = ep
                    .supports
                    .iter()
                    .enumerate()
                    .map(|(k, item)| write_item(dir, &rel, &format!("s{k}"), item, true))
                    .collect::<Result<Vec<_>>>()?;
                let query = write_item(dir, &rel, "q", &ep.query, false)?;
                Ok(Episode {
                    class_id,
                    supports,
                    query,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = EpisodeManifest {
            dataset: self.dataset.clone(),
            fold: self.fold,
            shots: self.spec.shots,
            seed: self.seed,
            layer_ids: Some(self.spec.layer_ids()),
            folds: Some(FoldLayout {
                n_classes: self.n_classes,
                n_folds: self.n_folds,
                scheme: self.scheme,
            }),
            episodes,
        };
        manifest.validate()?;
        manifest.save(dir.join("manifest.json"))?;
        Ok(manifest)
    }
}

fn write_item(base: &Path, rel: &Path, stem: &str, item: &ItemData<f32>, with_im: bool) -> Result<ItemRef> {
    let write_stack = |tag: &str, stack: &FeatureStack<f32>| {
        stack
            .layers()
            .iter()
            .map(|(id, t)| {
                let path = rel.join(format!("{stem}_{tag}{id}.npy"));
                npy::write_array_file(base.join(&path), t)?;
                Ok(path)
            })
            .collect::<Result<Vec<_>>>()
    };
    let mask = rel.join(format!("{stem}_mask.npy"));
    npy::write_mask_file(base.join(&mask), &item.mask)?;
    Ok(ItemRef {
        features: write_stack("l", &item.features)?,
        im_features: if with_im { write_stack("im_l", &item.im_features)? } else { Vec::new() },
        mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blur_preserves_constants() {
        let mut planes = vec![3.0; 2 * 5 * 4];
        blur_planes(&mut planes, 2, 5, 4, 1.3);
        assert!(planes.iter().all(|v| (v - 3.0).abs() < 1e-12));
    }

    #[test]
    fn rejects_degenerate_specs() {
        let too_big = SynthSpec {
            blob_radius: (10.0, 40.0),
            ..SynthSpec::default()
        };
        assert!(matches!(too_big.validate(), Err(Error::DegenerateSpec(_))));
        let no_layers = SynthSpec {
            layer_sizes: vec![],
            ..SynthSpec::default()
        };
        assert!(no_layers.validate().is_err());
        let tight_cap = SynthSpec {
            blob_radius: (8.0, 8.0),
            max_area_fraction: Some(0.01),
            ..SynthSpec::default()
        };
        assert!(tight_cap.validate().is_err());
        assert!(generate_synthetic_episode::<f32>(0, &too_big, 1).is_err());
    }

    #[test]
    fn small_object_masks_respect_cap() {
        let spec = SynthSpec::small_objects();
        for seed in 0..40 {
            let ep = generate_synthetic_episode::<f32>(seed, &spec, 1).unwrap();
            for item in ep.supports.iter().chain([&ep.query]) {
                let area = item.mask.count_ones();
                assert!(area > 0 && area as f64 <= 0.02 * 64.0 * 64.0, "area {area}");
            }
        }
    }
}
