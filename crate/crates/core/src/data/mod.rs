//! Video datasets: indexing, window sampling, augmentation, example synthesis.

mod manifest;
pub mod synthetic;
mod windows;

pub use manifest::{frame_path, index_dataset, DatasetManifest, Split, SplitRule, VideoEntry};
pub use windows::{
    augment, derive_seed, load_window, make_training_example, sample_windows, window_refs,
    Augmentation, SampleMode, TrainingExample, WindowRef,
};
