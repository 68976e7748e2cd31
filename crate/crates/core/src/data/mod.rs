//! Datasets, synthetic generators, split roles and the on-disk formats.

pub mod augment;
pub mod dataset;
pub mod io;
pub mod split;
pub mod synth;

pub use augment::{augment_batch, Augment};
pub use dataset::{Dataset, DatasetMeta};
pub use split::{apply_split, ForgetSelector, Role, SplitPlan, SplitViews};
pub use synth::{make_blobs, make_grid_images, make_grid_images_with, GridSpec};
