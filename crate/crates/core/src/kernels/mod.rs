//! Instance feature-extraction kernels: box rescaling, ROI max pooling,
//! grouped and deformable convolution, and the grouped bottleneck block.

mod bbox;
mod deform;
pub mod kwts;
mod resnext;
mod roi;

pub use bbox::{scale_bbox_to_map, BBox};
pub use deform::{deformable_conv2d, deformable_grouped_conv2d, grouped_conv2d, DeformConvParams};
pub use resnext::{resnext_block_forward, ResNeXtBlockParams};
pub use roi::{roi_cells, roi_max_pool, roi_max_pool_masked};
