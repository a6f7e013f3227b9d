//! Episodic evaluation of mask predictors.
//!
//! Prototype predictors mask every support with the chosen mode, pool it
//! into a prototype weighted by the mask's per-cell foreground coverage and
//! threshold the query's cosine map. The cosine map is computed once per
//! episode and reused for every threshold of a sweep.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::episodes::{EpisodeData, ItemData};
use crate::error::{Error, Result};
use crate::features::LayerId;
use crate::masking::{feature_mask, hybrid_mask_with_tol, MaskedFeatures, MaskingMode};
use crate::metrics::MetricAccumulator;
use crate::prototype::{average_prototypes, cosine_map, map_prototype, upsample_prediction, DEFAULT_THRESHOLD};
use crate::scalar::Scalar;
use crate::tensor::{mask_coverage, resize_map, BinaryMask, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Predictor {
    /// Returns the query's own mask.
    GroundTruth,
    Prototype(MaskingMode),
}

impl fmt::Display for Predictor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predictor::GroundTruth => f.write_str("gt"),
            Predictor::Prototype(MaskingMode::Fm) => f.write_str("prototype-fm"),
            Predictor::Prototype(MaskingMode::Im) => f.write_str("prototype-im"),
            Predictor::Prototype(MaskingMode::Hm) => f.write_str("prototype-hm"),
        }
    }
}

impl FromStr for Predictor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gt" => Ok(Predictor::GroundTruth),
            "prototype-fm" => Ok(Predictor::Prototype(MaskingMode::Fm)),
            "prototype-im" => Ok(Predictor::Prototype(MaskingMode::Im)),
            "prototype-hm" => Ok(Predictor::Prototype(MaskingMode::Hm)),
            other => Err(Error::InvalidArgument(format!("unknown predictor '{other}'"))),
        }
    }
}

/// How per-layer cosine maps are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerFusion {
    /// Only the deepest layer.
    #[default]
    Deepest,
    /// Mean of all layers' maps, resized to the finest layer.
    Average,
}

impl fmt::Display for LayerFusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LayerFusion::Deepest => "deepest",
            LayerFusion::Average => "average",
        })
    }
}

impl FromStr for LayerFusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deepest" => Ok(LayerFusion::Deepest),
            "average" => Ok(LayerFusion::Average),
            other => Err(Error::InvalidArgument(format!("unknown layer fusion '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub predictor: Predictor,
    pub fusion: LayerFusion,
    /// Hybrid masking treats `|fm| <= zero_tol` as masked out.
    pub zero_tol: f64,
    /// Candidate thresholds; the one with the best mIoU is reported.
    pub thresholds: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            predictor: Predictor::Prototype(MaskingMode::Hm),
            fusion: LayerFusion::default(),
            zero_tol: 0.0,
            thresholds: vec![DEFAULT_THRESHOLD],
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::InvalidArgument("need at least one threshold".into()));
        }
        if let Some(t) = self.thresholds.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
            return Err(Error::InvalidArgument(format!("threshold {t} outside (0, 1]")));
        }
        if self.zero_tol.is_nan() || self.zero_tol < 0.0 {
            return Err(Error::InvalidArgument(format!("zero tolerance {} must be >= 0", self.zero_tol)));
        }
        Ok(())
    }
}

/// Parses `start:end:step` into the inclusive list of thresholds.
pub fn parse_sweep(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidArgument(format!("sweep '{spec}' is not start:end:step"));
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let [start, end, step] = parts[..] else {
        return Err(bad());
    };
    if !start.is_finite() || !end.is_finite() || !step.is_finite() || step <= 0.0 || end < start {
        return Err(bad());
    }
    let n = ((end - start) / step + 1e-9).floor() as usize + 1;
    // rounding keeps 0.5 + 4 * 0.05 printing as 0.7
    Ok((0..n)
        .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
        .collect())
}

fn masked_support<T: Scalar>(item: &ItemData<T>, id: LayerId, mode: MaskingMode, zero_tol: T) -> Result<MaskedFeatures<T>> {
    let missing = |what: &str| Error::LayerMismatch(format!("support has no {what} features for layer {id}"));
    let raw = || item.features.get(id).ok_or_else(|| missing("raw"));
    let im = || -> Result<MaskedFeatures<T>> {
        let t = item.im_features.get(id).ok_or_else(|| missing("input-masked"))?;
        MaskedFeatures::from_input_masked(t.clone(), id)
    };
    match mode {
        MaskingMode::Fm => feature_mask(raw()?, &item.mask, id),
        MaskingMode::Im => im(),
        MaskingMode::Hm => hybrid_mask_with_tol(&feature_mask(raw()?, &item.mask, id)?, &im()?, zero_tol),
    }
}

fn layer_cosine<T: Scalar>(ep: &EpisodeData<T>, id: LayerId, mode: MaskingMode, zero_tol: T) -> Result<Tensor<T>> {
    let protos = ep
        .supports
        .iter()
        .map(|item| {
            let masked = masked_support(item, id, mode, zero_tol)?;
            let (_, h, w) = masked.features().dims3()?;
            map_prototype(&masked, &mask_coverage(&item.mask, h, w)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let query = ep
        .query
        .features
        .get(id)
        .ok_or_else(|| Error::LayerMismatch(format!("query has no features for layer {id}")))?;
    cosine_map(&average_prototypes(&protos)?, query)
}

/// Query score map of a prototype predictor at feature resolution.
pub fn score_map<T: Scalar>(ep: &EpisodeData<T>, mode: MaskingMode, fusion: LayerFusion, zero_tol: f64) -> Result<Tensor<T>> {
    if ep.supports.is_empty() {
        return Err(Error::InvalidArgument("episode has no supports".into()));
    }
    let tol = T::of(zero_tol);
    let ids = ep.query.features.ids();
    match fusion {
        LayerFusion::Deepest => {
            let (id, _) = ep
                .query
                .features
                .deepest()
                .ok_or_else(|| Error::LayerMismatch("query has no feature layers".into()))?;
            layer_cosine(ep, id, mode, tol)
        }
        LayerFusion::Average => {
            let maps = ids
                .iter()
                .map(|&id| layer_cosine(ep, id, mode, tol))
                .collect::<Result<Vec<_>>>()?;
            let (h, w) = maps
                .iter()
                .map(|m| m.dims2().expect("cosine maps are rank 2"))
                .max_by_key(|&(h, w)| h * w)
                .ok_or_else(|| Error::LayerMismatch("query has no feature layers".into()))?;
            let n = T::of(maps.len() as f64);
            let mut acc = vec![T::zero(); h * w];
            for m in &maps {
                let r = if m.shape() == [h, w] { m.clone() } else { resize_map(m, h, w)? };
                acc.iter_mut().zip(r.data()).for_each(|(a, &v)| *a = *a + v);
            }
            Tensor::new(&[h, w], acc.into_iter().map(|v| v / n).collect())
        }
    }
}

/// Image-resolution prediction from a score map: threshold at feature
/// resolution, then bilinear upsampling with a 0.5 cut.
pub fn prediction_from_scores<T: Scalar>(scores: &Tensor<T>, threshold: f64, out: (usize, usize)) -> Result<BinaryMask> {
    let coarse = BinaryMask::threshold(scores, T::of(threshold))?;
    upsample_prediction(&coarse, out.0, out.1)
}

/// Prediction for one episode at one threshold.
pub fn predict_episode<T: Scalar>(ep: &EpisodeData<T>, cfg: &EvalConfig, threshold: f64) -> Result<BinaryMask> {
    match cfg.predictor {
        Predictor::GroundTruth => Ok(ep.query.mask.clone()),
        Predictor::Prototype(mode) => {
            let scores = score_map(ep, mode, cfg.fusion, cfg.zero_tol)?;
            prediction_from_scores(&scores, threshold, ep.query.mask.dims())
        }
    }
}

/// Metrics of one episode for every configured threshold.
pub fn evaluate_episode<T: Scalar>(ep: &EpisodeData<T>, cfg: &EvalConfig) -> Result<Vec<MetricAccumulator>> {
    let scores = match cfg.predictor {
        Predictor::GroundTruth => None,
        Predictor::Prototype(mode) => Some(score_map(ep, mode, cfg.fusion, cfg.zero_tol)?),
    };
    cfg.thresholds
        .iter()
        .map(|&t| {
            let pred = match &scores {
                None => ep.query.mask.clone(),
                Some(s) => prediction_from_scores(s, t, ep.query.mask.dims())?,
            };
            let mut acc = MetricAccumulator::new();
            acc.accumulate(ep.class_id, &pred, &ep.query.mask)?;
            Ok(acc)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub miou: f64,
    pub fb_iou: f64,
}

/// Accumulated metrics per threshold, in configuration order.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub thresholds: Vec<f64>,
    pub accumulators: Vec<MetricAccumulator>,
}

impl Evaluation {
    /// Index of the threshold with the highest mIoU; ties go to the first.
    pub fn best(&self) -> Result<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, acc) in self.accumulators.iter().enumerate() {
            let m = acc.miou()?;
            if best.is_none_or(|(_, b)| m > b) {
                best = Some((i, m));
            }
        }
        best.map(|(i, _)| i)
            .ok_or_else(|| Error::InvalidArgument("evaluation has no thresholds".into()))
    }

    pub fn sweep(&self) -> Result<Vec<SweepPoint>> {
        self.thresholds
            .iter()
            .zip(&self.accumulators)
            .map(|(&threshold, acc)| {
                Ok(SweepPoint {
                    threshold,
                    miou: acc.miou()?,
                    fb_iou: acc.fb_iou()?,
                })
            })
            .collect()
    }
}

/// Evaluates `n` episodes produced by `load`, in parallel on the current
/// rayon pool. Results do not depend on scheduling.
pub fn evaluate<T, F>(n: usize, load: F, cfg: &EvalConfig) -> Result<Evaluation>
where
    T: Scalar,
    F: Fn(usize) -> Result<EpisodeData<T>> + Sync,
{
    cfg.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("no episodes to evaluate".into()));
    }
    let per_episode = (0..n)
        .into_par_iter()
        .map(|i| {
            load(i).and_then(|ep| evaluate_episode(&ep, cfg)).map_err(|e| match e {
                e @ Error::Episode { .. } => e,
                e => Error::Episode {
                    index: i,
                    source: Box::new(e),
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let empty = vec![MetricAccumulator::new(); cfg.thresholds.len()];
    let accumulators = per_episode.iter().fold(empty, |acc, ep| {
        acc.iter().zip(ep).map(|(a, b)| a.merge(b)).collect()
    });
    Ok(Evaluation {
        thresholds: cfg.thresholds.clone(),
        accumulators,
    })
}

/// Evaluates in-memory episodes.
pub fn evaluate_episodes<T: Scalar>(episodes: &[EpisodeData<T>], cfg: &EvalConfig) -> Result<Evaluation> {
    evaluate(episodes.len(), |i| Ok(episodes[i].clone()), cfg)
}

/// Serialized evaluation summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub per_class_iou: std::collections::BTreeMap<u32, f64>,
    pub miou: f64,
    pub fb_iou: f64,
    pub episodes: u64,
    pub shots: usize,
    pub fold: u32,
    pub predictor: String,
    pub threshold: f64,
    pub fusion: LayerFusion,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<SweepPoint>>,
}

impl Report {
    pub fn new(eval: &Evaluation, cfg: &EvalConfig, shots: usize, fold: u32) -> Result<Self> {
        let best = eval.best()?;
        let acc = &eval.accumulators[best];
        Ok(Self {
            per_class_iou: acc.class_ious(),
            miou: acc.miou()?,
            fb_iou: acc.fb_iou()?,
            episodes: acc.episodes(),
            shots,
            fold,
            predictor: cfg.predictor.to_string(),
            threshold: eval.thresholds[best],
            fusion: cfg.fusion,
            sweep: (eval.thresholds.len() > 1).then(|| eval.sweep()).transpose()?,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_parsing() {
        assert_eq!(parse_sweep("0.5:0.9:0.1").unwrap(), vec![0.5, 0.6, 0.7, 0.8, 0.9]);
        assert_eq!(parse_sweep("0.5:0.9:0.05").unwrap().len(), 9);
        assert_eq!(parse_sweep("0.7:0.7:0.1").unwrap(), vec![0.7]);
        for bad in ["0.5:0.9", "a:b:c", "0.9:0.5:0.1", "0.5:0.9:0", "0.5:0.9:-1"] {
            assert!(parse_sweep(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn predictor_names_round_trip() {
        for p in ["gt", "prototype-fm", "prototype-im", "prototype-hm"] {
            assert_eq!(p.parse::<Predictor>().unwrap().to_string(), p);
        }
        assert!("prototype".parse::<Predictor>().is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = EvalConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.thresholds = vec![0.0];
        assert!(cfg.validate().is_err());
        cfg.thresholds.clear();
        assert!(cfg.validate().is_err());
    }
}
