//! Dataset files, synthetic classrooms, class weights and splits.

mod format;
mod split;
mod synthetic;

pub use format::{
    convert_csv, default_label_names, load_dataset, write_dataset, Dataset, DatasetManifest, FeatureSnapshot,
    StudentRecord,
};
pub use split::{class_weights, split, Split, SplitSpec};
pub use synthetic::{generate_synthetic, label_agreement, SynthConfig};
