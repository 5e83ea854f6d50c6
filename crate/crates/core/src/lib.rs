//! Instance-level image search: convolution kernels and ROI pooling for
//! hybrid instance features, an exact cosine index with category pruning,
//! retrieval and segmentation metrics, and benchmark construction.

pub mod categories;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod fmap;
pub mod index;
pub mod kernels;
pub mod mask;
pub mod tensor;

pub use error::{Error, Result};
pub use features::{extract_instance_feature, l2_normalize, FeatureExtractor, InstanceDetection, InstanceFeature};
pub use index::{build_index, image_level_dedup, RankedHit, SearchIndex, SearchOutcome};
pub use kernels::BBox;
pub use mask::Rle;
pub use tensor::{bilinear_sample, conv2d, ConvParams, Tensor3};
