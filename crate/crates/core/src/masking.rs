//! Input masking, feature masking and hybrid masking.
//!
//! * Feature masking (FM) multiplies support features by the support mask
//!   resized to the feature resolution.
//! * Input masking (IM) multiplies the support image by its mask before the
//!   backbone runs. This module only applies the mask to the image; features
//!   of the masked image come from outside (a backbone or the synthetic
//!   generator).
//! * Hybrid masking (HM) keeps every FM activation and back-fills the
//!   positions FM zeroed out with the co-located IM activation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureStack, LayerId};
use crate::scalar::Scalar;
use crate::tensor::{resize_bilinear, scale_planes, BinaryMask, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskingMode {
    Fm,
    Im,
    Hm,
}

impl fmt::Display for MaskingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskingMode::Fm => "FM",
            MaskingMode::Im => "IM",
            MaskingMode::Hm => "HM",
        })
    }
}

/// A `(c, h, w)` feature map tagged with how it was masked.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedFeatures<T = f32> {
    features: Tensor<T>,
    mode: MaskingMode,
    source_layer: LayerId,
}

impl<T: Scalar> MaskedFeatures<T> {
    pub fn new(features: Tensor<T>, mode: MaskingMode, source_layer: LayerId) -> Result<Self> {
        features.dims3()?;
        Ok(Self {
            features,
            mode,
            source_layer,
        })
    }

    /// Wraps features computed from an input-masked image.
    pub fn from_input_masked(features: Tensor<T>, source_layer: LayerId) -> Result<Self> {
        Self::new(features, MaskingMode::Im, source_layer)
    }

    pub fn features(&self) -> &Tensor<T> {
        &self.features
    }

    pub fn into_features(self) -> Tensor<T> {
        self.features
    }

    pub fn mode(&self) -> MaskingMode {
        self.mode
    }

    pub fn source_layer(&self) -> LayerId {
        self.source_layer
    }
}

/// Feature masking: `feat ⊙ τ(mask)` with τ the bilinear resize to the
/// feature resolution, broadcast over channels.
pub fn feature_mask<T: Scalar>(
    feat: &Tensor<T>,
    mask: &BinaryMask,
    source_layer: LayerId,
) -> Result<MaskedFeatures<T>> {
    let (_, h, w) = feat.dims3()?;
    let maskf = resize_bilinear::<T>(mask, h, w)?;
    MaskedFeatures::new(scale_planes(feat, &maskf)?, MaskingMode::Fm, source_layer)
}

/// Multiplies every channel of a `(c, h, w)` image by the mask, resized to
/// `(h, w)` when the sizes differ.
pub fn mask_planes<T: Scalar>(image: &Tensor<T>, mask: &BinaryMask) -> Result<Tensor<T>> {
    let (_, h, w) = image.dims3()?;
    let maskf = if mask.dims() == (h, w) {
        mask.to_tensor::<T>()
    } else {
        resize_bilinear::<T>(mask, h, w)?
    };
    scale_planes(image, &maskf)
}

/// Input masking of an RGB image: background pixels become 0 in all three
/// channels.
pub fn input_mask<T: Scalar>(image: &Tensor<T>, mask: &BinaryMask) -> Result<Tensor<T>> {
    let (c, _, _) = image.dims3()?;
    if c != 3 {
        return Err(Error::InvalidShape {
            shape: image.shape().to_vec(),
            reason: "input masking expects a 3-channel image".into(),
        });
    }
    mask_planes(image, mask)
}

/// Hybrid masking with an exact-zero test.
pub fn hybrid_mask<T: Scalar>(
    fm: &MaskedFeatures<T>,
    im: &MaskedFeatures<T>,
) -> Result<MaskedFeatures<T>> {
    hybrid_mask_with_tol(fm, im, T::zero())
}

/// Hybrid masking: each element is the FM value when `|fm| > zero_tol`,
/// otherwise the IM value at the same channel and position.
pub fn hybrid_mask_with_tol<T: Scalar>(
    fm: &MaskedFeatures<T>,
    im: &MaskedFeatures<T>,
    zero_tol: T,
) -> Result<MaskedFeatures<T>> {
    if fm.mode != MaskingMode::Fm {
        return Err(Error::ModeMismatch {
            expected: MaskingMode::Fm,
            actual: fm.mode,
        });
    }
    if im.mode != MaskingMode::Im {
        return Err(Error::ModeMismatch {
            expected: MaskingMode::Im,
            actual: im.mode,
        });
    }
    if fm.source_layer != im.source_layer {
        return Err(Error::LayerMismatch(format!(
            "FM features from layer {} but IM features from layer {}",
            fm.source_layer, im.source_layer
        )));
    }
    let (a, b) = (fm.features(), im.features());
    if a.shape() != b.shape() {
        return Err(Error::shape("hybrid_mask", a.shape(), b.shape()));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&f, &i)| if f.abs() > zero_tol { f } else { i })
        .collect();
    MaskedFeatures::new(Tensor::new(a.shape(), data)?, MaskingMode::Hm, fm.source_layer)
}

/// Feature-masks every layer of a stack with the same image-resolution mask.
pub fn feature_mask_stack<T: Scalar>(stack: &FeatureStack<T>, mask: &BinaryMask) -> Result<FeatureStack<T>> {
    let layers = stack
        .layers()
        .iter()
        .map(|(id, t)| Ok((*id, feature_mask(t, mask, *id)?.into_features())))
        .collect::<Result<Vec<_>>>()?;
    FeatureStack::new(layers)
}

/// Layerwise hybrid masking of an FM stack and an IM stack.
pub fn hybrid_mask_stack<T: Scalar>(
    fms: &FeatureStack<T>,
    ims: &FeatureStack<T>,
    zero_tol: T,
) -> Result<FeatureStack<T>> {
    fms.check_compatible(ims)?;
    let layers = fms
        .layers()
        .iter()
        .zip(ims.layers())
        .map(|((id, f), (_, i))| {
            let fm = MaskedFeatures::new(f.clone(), MaskingMode::Fm, *id)?;
            let im = MaskedFeatures::new(i.clone(), MaskingMode::Im, *id)?;
            Ok((*id, hybrid_mask_with_tol(&fm, &im, zero_tol)?.into_features()))
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureStack::new(layers)
}
