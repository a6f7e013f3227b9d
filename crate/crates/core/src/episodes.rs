//! Episodic data model: class folds, episode manifests and sampling.
//!
//! Randomness comes from [`EpisodeRng`], the PCG XSL-RR 128/64 generator
//! (`Pcg64` from `rand_pcg`), seeded through `SeedableRng::seed_from_u64`.
//! Class indices are drawn with `random_range` and item subsets with
//! `rand::seq::index::sample`, so a manifest is a pure function of the pool,
//! the fold and the seed.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{RngExt, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureStack, LayerId};
use crate::npy;
use crate::scalar::Scalar;
use crate::tensor::BinaryMask;

pub type EpisodeRng = rand_pcg::Pcg64;

pub fn episode_rng(seed: u64) -> EpisodeRng {
    EpisodeRng::seed_from_u64(seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FoldScheme {
    /// Class `c` (1-based) goes to fold `(c - 1) / (n_classes / n_folds)`.
    Contiguous,
    /// Class `c` (1-based) goes to fold `(c - 1) % n_folds`.
    Interleaved,
}

impl FoldScheme {
    /// COCO-style datasets default to interleaved folds, everything else to
    /// contiguous ones.
    pub fn default_for(dataset: &str) -> Self {
        if dataset.to_ascii_lowercase().contains("coco") {
            FoldScheme::Interleaved
        } else {
            FoldScheme::Contiguous
        }
    }
}

impl fmt::Display for FoldScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FoldScheme::Contiguous => "contiguous",
            FoldScheme::Interleaved => "interleaved",
        })
    }
}

impl FromStr for FoldScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "contiguous" => Ok(FoldScheme::Contiguous),
            "interleaved" => Ok(FoldScheme::Interleaved),
            other => Err(Error::InvalidArgument(format!("unknown fold scheme {other:?}"))),
        }
    }
}

/// Partition of classes `1..=n_classes` into `n_folds` test folds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub dataset: String,
    pub n_classes: u32,
    pub n_folds: u32,
    pub scheme: FoldScheme,
    /// `assignment[c - 1]` is the fold of class `c`.
    #[serde(skip)]
    assignment: Vec<u32>,
}

pub fn build_folds(dataset: &str, n_classes: u32, n_folds: u32, scheme: FoldScheme) -> Result<FoldSpec> {
    if n_folds == 0 || n_classes == 0 || !n_classes.is_multiple_of(n_folds) {
        return Err(Error::InvalidArgument(format!(
            "{n_folds} folds do not evenly divide {n_classes} classes"
        )));
    }
    let per_fold = n_classes / n_folds;
    let assignment = (1..=n_classes)
        .map(|c| match scheme {
            FoldScheme::Contiguous => (c - 1) / per_fold,
            FoldScheme::Interleaved => (c - 1) % n_folds,
        })
        .collect();
    Ok(FoldSpec {
        dataset: dataset.to_string(),
        n_classes,
        n_folds,
        scheme,
        assignment,
    })
}

impl FoldSpec {
    /// Rebuilds the assignment table, e.g. after deserialization.
    pub fn rebuild(&self) -> Result<Self> {
        build_folds(&self.dataset, self.n_classes, self.n_folds, self.scheme)
    }

    pub fn fold_of(&self, class_id: u32) -> Option<u32> {
        class_id
            .checked_sub(1)
            .and_then(|i| self.assignment.get(i as usize).copied())
    }

    /// Test classes of `fold`, ascending.
    pub fn classes_in(&self, fold: u32) -> Vec<u32> {
        (1..=self.n_classes).filter(|&c| self.fold_of(c) == Some(fold)).collect()
    }

    /// Training classes when `fold` is held out.
    pub fn train_classes(&self, fold: u32) -> Vec<u32> {
        (1..=self.n_classes).filter(|&c| self.fold_of(c) != Some(fold)).collect()
    }
}

/// File references for one (image, mask) item.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ItemRef {
    /// Raw feature maps, one file per layer.
    pub features: Vec<PathBuf>,
    /// Features of the input-masked image, one file per layer.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub im_features: Vec<PathBuf>,
    pub mask: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub class_id: u32,
    pub supports: Vec<ItemRef>,
    pub query: ItemRef,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldLayout {
    pub n_classes: u32,
    pub n_folds: u32,
    pub scheme: FoldScheme,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeManifest {
    pub dataset: String,
    pub fold: u32,
    pub shots: usize,
    pub seed: u64,
    /// Layer ids of the per-layer feature files; defaults to `0..n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_ids: Option<Vec<LayerId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub folds: Option<FoldLayout>,
    pub episodes: Vec<Episode>,
}

impl EpisodeManifest {
    pub fn validate(&self) -> Result<()> {
        if self.episodes.is_empty() {
            return Err(Error::Manifest("manifest has no episodes".into()));
        }
        if self.shots == 0 {
            return Err(Error::Manifest("shots must be at least 1".into()));
        }
        let fold_spec = match &self.folds {
            Some(l) => Some(build_folds(&self.dataset, l.n_classes, l.n_folds, l.scheme)?),
            None => None,
        };
        let n_layers = self.episodes[0].query.features.len();
        if n_layers == 0 {
            return Err(Error::Manifest("items must list at least one feature file".into()));
        }
        if let Some(ids) = &self.layer_ids {
            if ids.len() != n_layers {
                return Err(Error::Manifest(format!(
                    "{} layer ids for {n_layers} feature files",
                    ids.len()
                )));
            }
        }
        for (i, ep) in self.episodes.iter().enumerate() {
            let fail = |msg: String| Error::Manifest(format!("episode {i}: {msg}"));
            if ep.supports.len() != self.shots {
                return Err(fail(format!("{} supports, expected {}", ep.supports.len(), self.shots)));
            }
            if let Some(spec) = &fold_spec {
                if spec.fold_of(ep.class_id) != Some(self.fold) {
                    return Err(fail(format!("class {} is not in fold {}", ep.class_id, self.fold)));
                }
            }
            if ep.supports.contains(&ep.query) {
                return Err(fail("query appears among its supports".into()));
            }
            for item in ep.supports.iter().chain([&ep.query]) {
                if item.features.len() != n_layers {
                    return Err(fail(format!(
                        "{} feature files, expected {n_layers}",
                        item.features.len()
                    )));
                }
                if !item.im_features.is_empty() && item.im_features.len() != n_layers {
                    return Err(fail(format!(
                        "{} IM feature files, expected {n_layers}",
                        item.im_features.len()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn layer_ids(&self) -> Vec<LayerId> {
        match &self.layer_ids {
            Some(ids) => ids.clone(),
            None => {
                let n = self.episodes.first().map_or(0, |e| e.query.features.len());
                (0..n as LayerId).collect()
            }
        }
    }

    /// Reads and validates a manifest.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Io(e).at_path(path))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::Json(e).at_path(path))?;
        m.validate().map_err(|e| e.at_path(path))?;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::Io(e).at_path(path))
    }
}

/// Samples `n_episodes` episodes from the classes of `fold_id`.
///
/// Each episode picks a class uniformly, then `shots + 1` distinct items of
/// that class uniformly; the first `shots` are supports, the last is the query.
pub fn sample_episodes(
    pool: &BTreeMap<u32, Vec<ItemRef>>,
    fold: &FoldSpec,
    fold_id: u32,
    shots: usize,
    n_episodes: usize,
    seed: u64,
) -> Result<EpisodeManifest> {
    if shots == 0 || n_episodes == 0 {
        return Err(Error::InvalidArgument("shots and episode count must be positive".into()));
    }
    let classes = fold.classes_in(fold_id);
    if classes.is_empty() {
        return Err(Error::InvalidArgument(format!("fold {fold_id} has no classes")));
    }
    for &c in &classes {
        let available = pool.get(&c).map_or(0, Vec::len);
        if available < shots + 1 {
            return Err(Error::InsufficientItems {
                class_id: c,
                available,
                required: shots + 1,
            });
        }
    }
    let mut rng = episode_rng(seed);
    let episodes = (0..n_episodes)
        .map(|_| {
            let class_id = classes[rng.random_range(0..classes.len())];
            let items = &pool[&class_id];
            let picks = rand::seq::index::sample(&mut rng, items.len(), shots + 1).into_vec();
            let (support_idx, query_idx) = picks.split_at(shots);
            Episode {
                class_id,
                supports: support_idx.iter().map(|&i| items[i].clone()).collect(),
                query: items[query_idx[0]].clone(),
            }
        })
        .collect();
    Ok(EpisodeManifest {
        dataset: fold.dataset.clone(),
        fold: fold_id,
        shots,
        seed,
        layer_ids: None,
        folds: Some(FoldLayout {
            n_classes: fold.n_classes,
            n_folds: fold.n_folds,
            scheme: fold.scheme,
        }),
        episodes,
    })
}

/// Loaded tensors for one item.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemData<T = f32> {
    pub features: FeatureStack<T>,
    /// Empty when the item carries no IM features.
    pub im_features: FeatureStack<T>,
    pub mask: BinaryMask,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeData<T = f32> {
    pub class_id: u32,
    pub supports: Vec<ItemData<T>>,
    pub query: ItemData<T>,
}

fn load_stack(base: &Path, files: &[PathBuf], ids: &[LayerId]) -> Result<FeatureStack<f32>> {
    let layers = files
        .iter()
        .zip(ids)
        .map(|(f, &id)| Ok((id, npy::read_array_file(base.join(f))?)))
        .collect::<Result<Vec<_>>>()?;
    FeatureStack::new(layers)
}

fn load_item(base: &Path, item: &ItemRef, ids: &[LayerId], support: bool) -> Result<ItemData<f32>> {
    let mask = npy::read_mask_file(base.join(&item.mask))?;
    if support && mask.count_ones() == 0 {
        return Err(Error::EmptySupport.at_path(base.join(&item.mask)));
    }
    Ok(ItemData {
        features: load_stack(base, &item.features, ids)?,
        im_features: load_stack(base, &item.im_features, ids)?,
        mask,
    })
}

impl EpisodeManifest {
    /// Loads episode `index`, resolving paths against `base_dir`.
    pub fn load_episode(&self, base_dir: &Path, index: usize) -> Result<EpisodeData<f32>> {
        let ep = self
            .episodes
            .get(index)
            .ok_or_else(|| Error::Manifest(format!("no episode {index}")))?;
        let ids = self.layer_ids();
        let load = || -> Result<EpisodeData<f32>> {
            Ok(EpisodeData {
                class_id: ep.class_id,
                supports: ep
                    .supports
                    .iter()
                    .map(|s| load_item(base_dir, s, &ids, true))
                    .collect::<Result<_>>()?,
                query: load_item(base_dir, &ep.query, &ids, false)?,
            })
        };
        load().map_err(|e| Error::Episode {
            index,
            source: Box::new(e),
        })
    }
}

impl<T: Scalar> ItemData<T> {
    pub fn cast<U: Scalar>(&self) -> ItemData<U> {
        let cast_stack = |s: &FeatureStack<T>| {
            FeatureStack::new(s.layers().iter().map(|(id, t)| (*id, t.cast::<U>())).collect())
                .expect("casting preserves stack invariants")
        };
        ItemData {
            features: cast_stack(&self.features),
            im_features: cast_stack(&self.im_features),
            mask: self.mask.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pascal_contiguous_folds() {
        let f = build_folds("pascal", 20, 4, FoldScheme::Contiguous).unwrap();
        assert_eq!(f.classes_in(0), vec![1, 2, 3, 4, 5]);
        assert_eq!(f.classes_in(3), vec![16, 17, 18, 19, 20]);
        assert_eq!(f.train_classes(0).len(), 15);
    }

    #[test]
    fn coco_interleaved_folds() {
        let f = build_folds("coco", 80, 4, FoldScheme::Interleaved).unwrap();
        let fold0 = f.classes_in(0);
        assert_eq!(fold0, (0..20).map(|i| 1 + 4 * i).collect::<Vec<_>>());
        assert_eq!(fold0.last(), Some(&77));
    }

    #[test]
    fn small_contiguous_and_errors() {
        let f = build_folds("toy", 8, 4, FoldScheme::Contiguous).unwrap();
        assert_eq!(f.classes_in(3), vec![7, 8]);
        assert!(build_folds("toy", 10, 4, FoldScheme::Contiguous).is_err());
        assert!(build_folds("toy", 10, 0, FoldScheme::Contiguous).is_err());
        assert_eq!(f.fold_of(0), None);
        assert_eq!(f.fold_of(9), None);
    }

    #[test]
    fn folds_partition_classes() {
        for scheme in [FoldScheme::Contiguous, FoldScheme::Interleaved] {
            let f = build_folds("x", 80, 4, scheme).unwrap();
            let mut all: Vec<u32> = (0..4).flat_map(|k| f.classes_in(k)).collect();
            all.sort();
            assert_eq!(all, (1..=80).collect::<Vec<_>>());
        }
    }

    #[test]
    fn default_schemes() {
        assert_eq!(FoldScheme::default_for("COCO-20i"), FoldScheme::Interleaved);
        assert_eq!(FoldScheme::default_for("pascal"), FoldScheme::Contiguous);
    }

    fn item(class: u32, i: usize) -> ItemRef {
        ItemRef {
            features: vec![format!("c{class}_{i}.npy").into()],
            im_features: vec![],
            mask: format!("c{class}_{i}_mask.npy").into(),
        }
    }

    fn pool(classes: &[u32], per_class: usize) -> BTreeMap<u32, Vec<ItemRef>> {
        classes
            .iter()
            .map(|&c| (c, (0..per_class).map(|i| item(c, i)).collect()))
            .collect()
    }

    #[test]
    fn sampling_is_deterministic_and_separated() {
        let f = build_folds("pascal", 20, 4, FoldScheme::Contiguous).unwrap();
        let p = pool(&(1..=20).collect::<Vec<_>>(), 6);
        let a = sample_episodes(&p, &f, 1, 2, 50, 9).unwrap();
        let b = sample_episodes(&p, &f, 1, 2, 50, 9).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
        for ep in &a.episodes {
            assert!(f.classes_in(1).contains(&ep.class_id));
            assert!(!ep.supports.contains(&ep.query));
        }
        let c = sample_episodes(&p, &f, 1, 2, 50, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn exactly_k_plus_one_items_uses_whole_class() {
        let f = build_folds("toy", 4, 4, FoldScheme::Contiguous).unwrap();
        let p = pool(&[1, 2, 3, 4], 4);
        let m = sample_episodes(&p, &f, 0, 3, 10, 1).unwrap();
        for ep in &m.episodes {
            let mut used: Vec<_> = ep.supports.iter().chain([&ep.query]).cloned().collect();
            used.sort_by(|a, b| a.mask.cmp(&b.mask));
            assert_eq!(used, p[&1]);
        }
    }

    #[test]
    fn insufficient_items_names_class() {
        let f = build_folds("toy", 8, 4, FoldScheme::Contiguous).unwrap();
        let mut p = pool(&[1, 2, 3, 4, 5, 6, 7, 8], 3);
        p.get_mut(&4).unwrap().truncate(1);
        match sample_episodes(&p, &f, 1, 2, 5, 0) {
            Err(Error::InsufficientItems { class_id, available, required }) => {
                assert_eq!((class_id, available, required), (4, 1, 3));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn manifest_validation() {
        let f = build_folds("toy", 8, 4, FoldScheme::Contiguous).unwrap();
        let p = pool(&[1, 2, 3, 4, 5, 6, 7, 8], 3);
        let mut m = sample_episodes(&p, &f, 2, 1, 4, 3).unwrap();
        let json = m.to_json().unwrap();
        let back: EpisodeManifest = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);

        m.episodes[0].class_id = 1;
        assert!(m.validate().is_err());
        m.episodes.clear();
        assert!(m.validate().is_err());
    }
}
