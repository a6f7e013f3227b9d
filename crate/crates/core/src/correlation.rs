//! Dense cosine-similarity correlation between query and support features.
//!
//! For query features `Q` and support features `S`, both `(c, h, w)`, every
//! pair of spatial locations gets `max(0, cos(Q[:, pq], S[:, ps]))`. The
//! result is stored as a rank-4 tensor indexed `(q_h, q_w, s_h, s_w)`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{FeatureStack, LayerId};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Locations whose feature vector norm is below this correlate to 0.
pub const ZERO_NORM: f64 = 1e-12;

/// Slack allowed above 1.0 for rounding in the normalized dot product.
pub const RANGE_SLACK: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationTensor<T = f32> {
    data: Tensor<T>,
}

impl<T: Scalar> CorrelationTensor<T> {
    /// Wraps a rank-4 `(q_h, q_w, s_h, s_w)` tensor after checking the value range.
    pub fn from_tensor(data: Tensor<T>) -> Result<Self> {
        if data.rank() != 4 {
            return Err(Error::InvalidShape {
                shape: data.shape().to_vec(),
                reason: "correlation tensors are rank 4".into(),
            });
        }
        let c = Self { data };
        c.check_range()?;
        Ok(c)
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.data
    }

    pub fn query_shape(&self) -> (usize, usize) {
        let s = self.data.shape();
        (s[0], s[1])
    }

    pub fn support_shape(&self) -> (usize, usize) {
        let s = self.data.shape();
        (s[2], s[3])
    }

    pub fn get(&self, qy: usize, qx: usize, sy: usize, sx: usize) -> T {
        self.data.at(&[qy, qx, sy, sx])
    }

    /// Errors if any value falls outside `[0, 1 + RANGE_SLACK]` or is not finite.
    pub fn check_range(&self) -> Result<()> {
        let hi = T::one() + T::of(RANGE_SLACK);
        match self
            .data
            .data()
            .iter()
            .position(|&v| !(v >= T::zero() && v <= hi))
        {
            None => Ok(()),
            Some(i) => Err(Error::InvalidArgument(format!(
                "correlation value {} at linear index {i} outside [0, 1]",
                self.data.data()[i]
            ))),
        }
    }
}

/// Location-major unit vectors, `(h*w) x c`. Zero-norm locations stay zero.
pub(crate) fn unit_columns<T: Scalar>(feat: &Tensor<T>) -> Result<(usize, Vec<T>)> {
    let (c, h, w) = feat.dims3()?;
    let n = h * w;
    let mut out = vec![T::zero(); n * c];
    for ch in 0..c {
        for (p, &v) in feat.channel(ch).iter().enumerate() {
            out[p * c + ch] = v;
        }
    }
    let eps = T::of(ZERO_NORM);
    for row in out.chunks_exact_mut(c) {
        let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
        if norm < eps || !norm.is_finite() {
            row.iter_mut().for_each(|v| *v = T::zero());
        } else {
            row.iter_mut().for_each(|v| *v = *v / norm);
        }
    }
    Ok((c, out))
}

/// ReLU-clamped cosine similarity between every query and support location.
pub fn cosine_correlation<T: Scalar>(query: &Tensor<T>, support: &Tensor<T>) -> Result<CorrelationTensor<T>> {
    let (cq, qh, qw) = query.dims3()?;
    let (cs, sh, sw) = support.dims3()?;
    if cq != cs {
        return Err(Error::shape("cosine_correlation (channels)", query.shape(), support.shape()));
    }
    let (c, q) = unit_columns(query)?;
    let (_, s) = unit_columns(support)?;
    let mut out = Vec::with_capacity(qh * qw * sh * sw);
    for qv in q.chunks_exact(c) {
        for sv in s.chunks_exact(c) {
            let dot = qv.iter().zip(sv).map(|(&a, &b)| a * b).sum::<T>();
            out.push(dot.max(T::zero()));
        }
    }
    Ok(CorrelationTensor {
        data: Tensor::new(&[qh, qw, sh, sw], out)?,
    })
}

/// Correlations of one spatial resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationGroup<T = f32> {
    pub spatial_size: (usize, usize),
    pub layers: Vec<(LayerId, CorrelationTensor<T>)>,
}

/// Per-layer correlations grouped by support resolution, largest first.
#[derive(Clone, Debug, PartialEq)]
pub struct HypercorrelationPyramid<T = f32> {
    groups: Vec<CorrelationGroup<T>>,
}

impl<T: Scalar> HypercorrelationPyramid<T> {
    pub fn groups(&self) -> &[CorrelationGroup<T>] {
        &self.groups
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.layers.len()).collect()
    }

    pub fn len(&self) -> usize {
        self.groups.iter().map(|g| g.layers.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

/// One correlation tensor per layer, grouped by support spatial size.
pub fn build_hypercorrelation<T: Scalar>(
    query_stack: &FeatureStack<T>,
    support_stack: &FeatureStack<T>,
) -> Result<HypercorrelationPyramid<T>> {
    if query_stack.ids() != support_stack.ids() {
        return Err(Error::LayerMismatch(format!(
            "query layers {:?} vs support layers {:?}",
            query_stack.ids(),
            support_stack.ids()
        )));
    }
    let per_layer = query_stack
        .layers()
        .par_iter()
        .zip(support_stack.layers())
        .map(|((id, q), (_, s))| {
            cosine_correlation(q, s)
                .map(|c| (*id, c))
                .map_err(|e| Error::LayerMismatch(format!("layer {id}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut groups: Vec<CorrelationGroup<T>> = Vec::new();
    for (id, corr) in per_layer {
        let size = corr.support_shape();
        match groups.iter_mut().find(|g| g.spatial_size == size) {
            Some(g) => g.layers.push((id, corr)),
            None => groups.push(CorrelationGroup {
                spatial_size: size,
                layers: vec![(id, corr)],
            }),
        }
    }
    groups.sort_by(|a, b| {
        let key = |g: &CorrelationGroup<T>| (g.spatial_size.0 * g.spatial_size.1, g.spatial_size.0);
        key(b).cmp(&key(a))
    });
    Ok(HypercorrelationPyramid { groups })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feat(c: usize, h: usize, w: usize, v: &[f32]) -> Tensor<f32> {
        Tensor::new(&[c, h, w], v.to_vec()).unwrap()
    }

    #[test]
    fn self_similarity_diagonal() {
        // Two locations with unit vectors (1,0) and (0,1).
        let f = feat(2, 1, 2, &[1., 0., 0., 1.]);
        let c = cosine_correlation(&f, &f).unwrap();
        assert_eq!(c.tensor().shape(), &[1, 2, 1, 2]);
        assert!((c.get(0, 0, 0, 0) - 1.0).abs() < 1e-6);
        assert!((c.get(0, 1, 0, 1) - 1.0).abs() < 1e-6);
        assert_eq!(c.get(0, 0, 0, 1), 0.0);
    }

    #[test]
    fn negative_cosine_is_clamped() {
        let q = feat(2, 1, 1, &[1., 0.]);
        let s = feat(2, 1, 1, &[-1., 0.]);
        assert_eq!(cosine_correlation(&q, &s).unwrap().get(0, 0, 0, 0), 0.0);
    }

    #[test]
    fn zero_norm_location_is_zero() {
        let q = feat(2, 1, 2, &[1., 0., 1., 0.]);
        let s = feat(2, 1, 1, &[0., 0.]);
        let c = cosine_correlation(&q, &s).unwrap();
        assert!(c.tensor().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn differing_spatial_shapes() {
        let q = Tensor::<f32>::ones(&[3, 2, 3]).unwrap();
        let s = Tensor::<f32>::ones(&[3, 4, 1]).unwrap();
        let c = cosine_correlation(&q, &s).unwrap();
        assert_eq!(c.query_shape(), (2, 3));
        assert_eq!(c.support_shape(), (4, 1));
    }

    #[test]
    fn channel_mismatch_errors() {
        let q = Tensor::<f32>::ones(&[3, 2, 2]).unwrap();
        let s = Tensor::<f32>::ones(&[4, 2, 2]).unwrap();
        assert!(cosine_correlation(&q, &s).is_err());
    }

    #[test]
    fn range_check_rejects_out_of_range() {
        let t = Tensor::<f32>::full(&[1, 1, 1, 1], 1.5).unwrap();
        assert!(CorrelationTensor::from_tensor(t).is_err());
        let t = Tensor::<f32>::full(&[1, 1, 1, 1], 0.5).unwrap();
        assert!(CorrelationTensor::from_tensor(t).is_ok());
    }

    #[test]
    fn pyramid_groups_by_size() {
        let mk = |h: usize| Tensor::<f32>::from_fn(&[2, h, h], |i| (i % 3) as f32 + 1.0).unwrap();
        let stack = FeatureStack::new(vec![(0, mk(8)), (1, mk(8)), (2, mk(4))]).unwrap();
        let p = build_hypercorrelation(&stack, &stack).unwrap();
        assert_eq!(p.group_sizes(), vec![2, 1]);
        assert_eq!(p.groups()[0].spatial_size, (8, 8));
        assert_eq!(p.groups()[1].spatial_size, (4, 4));

        let single = FeatureStack::new(vec![(3, mk(4))]).unwrap();
        let p = build_hypercorrelation(&single, &single).unwrap();
        assert_eq!(p.group_sizes(), vec![1]);
        assert_eq!(p.groups()[0].layers[0].1, cosine_correlation(&mk(4), &mk(4)).unwrap());

        let other = FeatureStack::new(vec![(4, mk(4))]).unwrap();
        assert!(build_hypercorrelation(&single, &other).is_err());
    }
}
