//! IoU-based segmentation metrics with mergeable integer accumulators.
//!
//! mIoU accumulates intersection and union per class over all episodes,
//! takes the per-class ratio and then averages over classes. FB-IoU ignores
//! classes and averages the foreground and background IoU.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::BinaryMask;

/// Intersection and union pixel counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IouCounts {
    pub intersection: u64,
    pub union: u64,
}

impl IouCounts {
    fn add(self, other: Self) -> Self {
        Self {
            intersection: self.intersection + other.intersection,
            union: self.union + other.union,
        }
    }

    pub fn iou(self) -> Option<f64> {
        (self.union > 0).then(|| self.intersection as f64 / self.union as f64)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricAccumulator {
    per_class: BTreeMap<u32, IouCounts>,
    foreground: IouCounts,
    background: IouCounts,
    episodes: u64,
}

impl MetricAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn per_class(&self) -> &BTreeMap<u32, IouCounts> {
        &self.per_class
    }

    pub fn foreground(&self) -> IouCounts {
        self.foreground
    }

    pub fn background(&self) -> IouCounts {
        self.background
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    /// Adds one episode's prediction against its ground truth.
    pub fn accumulate(&mut self, class_id: u32, pred: &BinaryMask, gt: &BinaryMask) -> Result<()> {
        if pred.dims() != gt.dims() {
            let (ph, pw) = pred.dims();
            let (gh, gw) = gt.dims();
            return Err(Error::shape("accumulate", &[ph, pw], &[gh, gw]));
        }
        let (mut fg_i, mut fg_u, mut bg_i, mut bg_u) = (0u64, 0u64, 0u64, 0u64);
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            let (p, g) = (p == 1, g == 1);
            fg_i += (p && g) as u64;
            fg_u += (p || g) as u64;
            bg_i += (!p && !g) as u64;
            bg_u += (!p || !g) as u64;
        }
        let fg = IouCounts {
            intersection: fg_i,
            union: fg_u,
        };
        let entry = self.per_class.entry(class_id).or_default();
        *entry = entry.add(fg);
        self.foreground = self.foreground.add(fg);
        self.background = self.background.add(IouCounts {
            intersection: bg_i,
            union: bg_u,
        });
        self.episodes += 1;
        Ok(())
    }

    /// Per-class IoU for every class with a non-zero union.
    pub fn class_ious(&self) -> BTreeMap<u32, f64> {
        self.per_class
            .iter()
            .filter_map(|(&c, counts)| counts.iou().map(|v| (c, v)))
            .collect()
    }

    /// Mean over classes of the class-accumulated IoU. Classes whose union
    /// is still zero (never predicted, never present) are skipped.
    pub fn miou(&self) -> Result<f64> {
        let ious = self.class_ious();
        if ious.is_empty() {
            return Err(Error::EmptyMetric("mIoU needs a class with non-zero union"));
        }
        Ok(ious.values().sum::<f64>() / ious.len() as f64)
    }

    pub fn fb_iou(&self) -> Result<f64> {
        match (self.foreground.iou(), self.background.iou()) {
            (Some(fg), Some(bg)) => Ok((fg + bg) / 2.0),
            _ => Err(Error::EmptyMetric("FB-IoU needs non-zero foreground and background unions")),
        }
    }

    /// Fieldwise sum.
    pub fn merge(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (&c, &counts) in &other.per_class {
            let e = out.per_class.entry(c).or_default();
            *e = e.add(counts);
        }
        out.foreground = out.foreground.add(other.foreground);
        out.background = out.background.add(other.background);
        out.episodes += other.episodes;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(h: usize, w: usize, ones: &[usize]) -> BinaryMask {
        let mut d = vec![0u8; h * w];
        for &i in ones {
            d[i] = 1;
        }
        BinaryMask::new(h, w, d).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let gt = mask(4, 5, &(0..10).collect::<Vec<_>>());
        let mut acc = MetricAccumulator::new();
        acc.accumulate(3, &gt, &gt).unwrap();
        assert_eq!(acc.per_class()[&3], IouCounts { intersection: 10, union: 10 });
        assert_eq!(acc.miou().unwrap(), 1.0);
        assert_eq!(acc.fb_iou().unwrap(), 1.0);
    }

    #[test]
    fn disjoint_prediction() {
        let pred = mask(4, 5, &[0, 1, 2, 3, 4]);
        let gt = mask(4, 5, &[10, 11, 12, 13, 14]);
        let mut acc = MetricAccumulator::new();
        acc.accumulate(1, &pred, &gt).unwrap();
        assert_eq!(acc.per_class()[&1], IouCounts { intersection: 0, union: 10 });
    }

    #[test]
    fn partial_overlap() {
        // gt = {0,1,2,3}; pred covers gt pixels 0,1 plus background pixels 4,5
        let gt = mask(3, 3, &[0, 1, 2, 3]);
        let pred = mask(3, 3, &[0, 1, 4, 5]);
        let mut acc = MetricAccumulator::new();
        acc.accumulate(1, &pred, &gt).unwrap();
        assert_eq!(acc.per_class()[&1], IouCounts { intersection: 2, union: 6 });
    }

    #[test]
    fn miou_averages_classes() {
        let gt = mask(2, 2, &[0, 1]);
        let mut acc = MetricAccumulator::new();
        acc.accumulate(1, &gt, &gt).unwrap();
        acc.accumulate(2, &mask(2, 2, &[2, 3]), &gt).unwrap();
        assert_eq!(acc.miou().unwrap(), 0.5);
    }

    #[test]
    fn fb_iou_all_foreground_prediction() {
        let gt = mask(2, 2, &[0, 1]);
        let pred = mask(2, 2, &[0, 1, 2, 3]);
        let mut acc = MetricAccumulator::new();
        acc.accumulate(1, &pred, &gt).unwrap();
        assert_eq!(acc.foreground().iou(), Some(0.5));
        assert_eq!(acc.background().iou(), Some(0.0));
        assert_eq!(acc.fb_iou().unwrap(), 0.25);
    }

    #[test]
    fn empty_and_mismatched() {
        let acc = MetricAccumulator::new();
        assert!(acc.miou().is_err());
        assert!(acc.fb_iou().is_err());
        let mut acc = MetricAccumulator::new();
        assert!(acc.accumulate(1, &mask(2, 2, &[]), &mask(2, 3, &[])).is_err());
        // empty prediction and empty ground truth leave the class union at zero
        acc.accumulate(1, &mask(2, 2, &[]), &mask(2, 2, &[])).unwrap();
        assert!(acc.miou().is_err());
        assert!(acc.fb_iou().is_err());
    }

    #[test]
    fn merge_identity_and_commutativity() {
        let mut a = MetricAccumulator::new();
        a.accumulate(1, &mask(2, 2, &[0]), &mask(2, 2, &[0, 1])).unwrap();
        let mut b = MetricAccumulator::new();
        b.accumulate(2, &mask(2, 2, &[3]), &mask(2, 2, &[2])).unwrap();
        assert_eq!(a.merge(&MetricAccumulator::new()), a);
        assert_eq!(a.merge(&b), b.merge(&a));
    }
}
