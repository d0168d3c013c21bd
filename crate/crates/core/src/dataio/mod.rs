//! Dataset formats, ingestion, preprocessing, split protocols and the
//! synthetic benchmark generator.

mod dataset;
pub mod format;
mod split;
mod synth;

pub use dataset::{
    preprocess_attributes, preprocess_visual, ClassRole, Dataset, ImageRole, Preprocess, SplitMode,
};
pub use format::{
    decode_rvf1, encode_rvf1, format_labels, format_roles, load_feature_matrix, parse_csv,
    save_rvf1,
};
pub use split::{apply_split, SplitSpec};
pub use synth::{gen_synthetic, nearest_class_mean_accuracy, SynthSpec};
