//! Phantom slices, preprocessing and the dataset file format.

mod dataset;
mod format;
mod phantom;
mod preprocess;
mod slice;

pub use dataset::{
    lesion_draw, make_dataset, partition_subjects, reference_table, split_sizes, DatasetSplit, SliceRecord, SplitName,
};
pub use format::{decode_dataset, encode_dataset, load_dataset, save_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use phantom::{generate_phantom, rasterize_ellipse, subject_seed, Phantom, PhantomConfig};
pub use preprocess::{
    apply_augment, augment, crop_resize, histogram_match, histogram_match_volume, normalize_range, AugmentConfig,
    AugmentDraws, QuantileTable, HISTOGRAM_BINS,
};
pub use slice::{BrainMask, SliceImage};
