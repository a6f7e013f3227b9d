use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Backbone layer identifier. Deeper layers have larger ids.
pub type LayerId = u32;

/// Per-layer feature maps from one backbone pass, ordered by layer id.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStack<T = f32> {
    layers: Vec<(LayerId, Tensor<T>)>,
}

impl<T: Scalar> Default for FeatureStack<T> {
    fn default() -> Self {
        Self { layers: Vec::new() }
    }
}

impl<T: Scalar> FeatureStack<T> {
    /// Layer ids must be strictly increasing and every tensor rank 3.
    pub fn new(layers: Vec<(LayerId, Tensor<T>)>) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].0 >= pair[1].0 {
                return Err(Error::LayerMismatch(format!(
                    "layer ids must be strictly increasing, found {} then {}",
                    pair[0].0, pair[1].0
                )));
            }
        }
        for (id, t) in &layers {
            t.dims3().map_err(|_| {
                Error::LayerMismatch(format!("layer {id} has shape {:?}, expected rank 3", t.shape()))
            })?;
        }
        Ok(Self { layers })
    }

    /// Stack with ids `0..n`.
    pub fn from_tensors(tensors: Vec<Tensor<T>>) -> Result<Self> {
        Self::new((0..).zip(tensors).collect())
    }

    pub fn layers(&self) -> &[(LayerId, Tensor<T>)] {
        &self.layers
    }

    pub fn ids(&self) -> Vec<LayerId> {
        self.layers.iter().map(|(id, _)| *id).collect()
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn get(&self, id: LayerId) -> Option<&Tensor<T>> {
        self.layers.iter().find(|(l, _)| *l == id).map(|(_, t)| t)
    }

    /// Deepest (last) layer.
    pub fn deepest(&self) -> Option<(LayerId, &Tensor<T>)> {
        self.layers.last().map(|(id, t)| (*id, t))
    }

    pub fn into_layers(self) -> Vec<(LayerId, Tensor<T>)> {
        self.layers
    }

    /// Errors unless both stacks have the same ids and per-layer shapes.
    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.ids() != other.ids() {
            return Err(Error::LayerMismatch(format!(
                "layer ids {:?} vs {:?}",
                self.ids(),
                other.ids()
            )));
        }
        for ((id, a), (_, b)) in self.layers.iter().zip(&other.layers) {
            if a.shape() != b.shape() {
                return Err(Error::LayerMismatch(format!(
                    "layer {id}: shapes {:?} vs {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_must_increase() {
        let t = Tensor::<f32>::zeros(&[1, 2, 2]).unwrap();
        assert!(FeatureStack::new(vec![(1, t.clone()), (1, t.clone())]).is_err());
        assert!(FeatureStack::new(vec![(2, t.clone()), (1, t.clone())]).is_err());
        assert!(FeatureStack::new(vec![(1, Tensor::<f32>::zeros(&[2, 2]).unwrap())]).is_err());
        let s = FeatureStack::new(vec![(1, t.clone()), (4, t)]).unwrap();
        assert_eq!(s.ids(), vec![1, 4]);
        assert_eq!(s.deepest().unwrap().0, 4);
    }
}
