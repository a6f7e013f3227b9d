//! Masked-average-pooling prototypes and the cosine mask predictor.

use crate::correlation::ZERO_NORM;
use crate::error::{Error, Result};
use crate::features::LayerId;
use crate::masking::{MaskedFeatures, MaskingMode};
use crate::scalar::Scalar;
use crate::tensor::{resize_map, BinaryMask, Tensor};

/// Default foreground threshold on the prototype cosine.
pub const DEFAULT_THRESHOLD: f64 = 0.7;

#[derive(Clone, Debug, PartialEq)]
pub struct Prototype<T = f32> {
    vector: Vec<T>,
    mode: MaskingMode,
    source_layer: LayerId,
}

impl<T: Scalar> Prototype<T> {
    pub fn new(vector: Vec<T>, mode: MaskingMode, source_layer: LayerId) -> Result<Self> {
        if vector.is_empty() {
            return Err(Error::InvalidArgument("prototype must have at least one channel".into()));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("prototype values must be finite".into()));
        }
        Ok(Self {
            vector,
            mode,
            source_layer,
        })
    }

    pub fn vector(&self) -> &[T] {
        &self.vector
    }

    pub fn mode(&self) -> MaskingMode {
        self.mode
    }

    pub fn source_layer(&self) -> LayerId {
        self.source_layer
    }

    pub fn norm(&self) -> T {
        self.vector.iter().map(|&v| v * v).sum::<T>().sqrt()
    }
}

/// Weighted spatial mean of the masked features:
/// `v[i] = Σ_p masked[i][p]·w[p] / Σ_p w[p]`.
pub fn map_prototype<T: Scalar>(masked: &MaskedFeatures<T>, maskf: &Tensor<T>) -> Result<Prototype<T>> {
    let (c, h, w) = masked.features().dims3()?;
    if maskf.shape() != [h, w] {
        return Err(Error::shape("map_prototype", masked.features().shape(), maskf.shape()));
    }
    let weights = maskf.data();
    let total = weights.iter().copied().sum::<T>();
    if total <= T::zero() {
        return Err(Error::EmptySupport);
    }
    let vector = (0..c)
        .map(|i| {
            masked
                .features()
                .channel(i)
                .iter()
                .zip(weights)
                .map(|(&f, &m)| f * m)
                .sum::<T>()
                / total
        })
        .collect();
    Prototype::new(vector, masked.mode(), masked.source_layer())
}

/// Equal-weight mean of K per-shot prototypes.
pub fn average_prototypes<T: Scalar>(shots: &[Prototype<T>]) -> Result<Prototype<T>> {
    let first = shots
        .first()
        .ok_or_else(|| Error::InvalidArgument("need at least one prototype".into()))?;
    let c = first.vector.len();
    if let Some(bad) = shots.iter().find(|p| p.vector.len() != c || p.mode != first.mode) {
        return Err(Error::InvalidArgument(format!(
            "cannot average {}-channel {} prototype with {}-channel {} prototype",
            c,
            first.mode,
            bad.vector.len(),
            bad.mode
        )));
    }
    let k = T::from_usize(shots.len()).expect("shot count fits scalar");
    let vector = (0..c)
        .map(|i| shots.iter().map(|p| p.vector[i]).sum::<T>() / k)
        .collect();
    Prototype::new(vector, first.mode, first.source_layer)
}

/// Cosine between the prototype and every query location, as a `(h, w)` map.
///
/// Zero-norm query locations (or a zero-norm prototype) map to 0.
pub fn cosine_map<T: Scalar>(prototype: &Prototype<T>, query: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = query.dims3()?;
    if c != prototype.vector.len() {
        return Err(Error::shape("cosine_map", &[prototype.vector.len()], query.shape()));
    }
    let eps = T::of(ZERO_NORM);
    let pnorm = prototype.norm();
    let n = h * w;
    let mut dot = vec![T::zero(); n];
    let mut sq = vec![T::zero(); n];
    for (i, &pv) in prototype.vector.iter().enumerate() {
        for (p, &q) in query.channel(i).iter().enumerate() {
            dot[p] = dot[p] + pv * q;
            sq[p] = sq[p] + q * q;
        }
    }
    let data = dot
        .iter()
        .zip(&sq)
        .map(|(&d, &s)| {
            let qnorm = s.sqrt();
            if pnorm < eps || qnorm < eps {
                T::zero()
            } else {
                d / (pnorm * qnorm)
            }
        })
        .collect();
    Tensor::new(&[h, w], data)
}

/// Pixel is foreground iff its cosine to the prototype is at least
/// `threshold`. Zero-norm locations are always background.
pub fn predict_mask<T: Scalar>(prototype: &Prototype<T>, query: &Tensor<T>, threshold: T) -> Result<BinaryMask> {
    let (_, h, w) = query.dims3()?;
    let cos = cosine_map(prototype, query)?;
    let eps = T::of(ZERO_NORM);
    let c = prototype.vector.len();
    let pnorm_ok = prototype.norm() >= eps;
    let data = (0..h * w)
        .map(|p| {
            let qnorm = (0..c).map(|i| query.channel(i)[p].powi(2)).sum::<T>().sqrt();
            (pnorm_ok && qnorm >= eps && cos.data()[p] >= threshold) as u8
        })
        .collect();
    BinaryMask::new(h, w, data)
}

/// Bilinear upsampling of a prediction followed by a 0.5 threshold.
pub fn upsample_prediction(pred: &BinaryMask, out_h: usize, out_w: usize) -> Result<BinaryMask> {
    let resized = resize_map(&pred.to_tensor::<f32>(), out_h, out_w)?;
    BinaryMask::threshold(&resized, 0.5)
}
