//! Hybrid masking kernels for few-shot segmentation.
//!
//! Support features can be masked three ways before they are compared with
//! query features: feature masking (mask resized onto the features), input
//! masking (mask applied to the image before the backbone) and hybrid
//! masking (feature masking with its zeroed positions back-filled from the
//! input-masked features). The crate provides those kernels, dense cosine
//! correlation, masked-average-pooling prototypes, episodic evaluation with
//! mIoU / FB-IoU, and a deterministic synthetic episode generator.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the element type.

pub mod bench;
pub mod correlation;
pub mod episodes;
pub mod error;
pub mod eval;
pub mod features;
pub mod masking;
pub mod metrics;
pub mod npy;
pub mod prototype;
pub mod scalar;
pub mod synth;
pub mod tensor;

pub use correlation::{build_hypercorrelation, cosine_correlation, CorrelationTensor, HypercorrelationPyramid};
pub use episodes::{build_folds, sample_episodes, Episode, EpisodeManifest, FoldScheme, FoldSpec};
pub use error::{Error, Result};
pub use eval::{evaluate, EvalConfig, LayerFusion, Predictor, Report};
pub use features::{FeatureStack, LayerId};
pub use masking::{feature_mask, hybrid_mask, hybrid_mask_stack, input_mask, MaskedFeatures, MaskingMode};
pub use metrics::MetricAccumulator;
pub use npy::{read_array_file, read_mask_file, write_array_file, write_mask_file};
pub use prototype::{map_prototype, predict_mask, upsample_prediction, Prototype};
pub use scalar::Scalar;
pub use synth::{generate_synthetic_episode, SynthSpec, SynthSuite};
pub use tensor::{broadcast_mask, hadamard, mask_coverage, resize_bilinear, BinaryMask, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type FeatureStack32 = FeatureStack<f32>;
pub type FeatureStack64 = FeatureStack<f64>;
pub type MaskedFeatures32 = MaskedFeatures<f32>;
pub type MaskedFeatures64 = MaskedFeatures<f64>;
pub type CorrelationTensor32 = CorrelationTensor<f32>;
pub type CorrelationTensor64 = CorrelationTensor<f64>;
pub type Prototype32 = Prototype<f32>;
pub type Prototype64 = Prototype<f64>;
