#![allow(dead_code)]

use std::path::Path;

use cebd_core::data::{index_dataset, synthetic, DatasetManifest, Split, SplitRule};

/// One toy scene and its time reversal, `frames` frames of 32×32 each.
pub fn reversed_pair(root: &Path, frames: usize, seed: u64) -> DatasetManifest {
    let cfg = synthetic::ToySceneConfig {
        frames,
        ..Default::default()
    };
    synthetic::write_toy_dataset(root, 1, &cfg, true, seed).unwrap();
    index_dataset(root, SplitRule::All, Split::Train, 1).unwrap()
}

pub fn toy_dataset(root: &Path, scenes: usize, frames: usize, seed: u64) -> DatasetManifest {
    let cfg = synthetic::ToySceneConfig {
        frames,
        ..Default::default()
    };
    synthetic::write_toy_dataset(root, scenes, &cfg, false, seed).unwrap();
    index_dataset(root, SplitRule::All, Split::Train, 1).unwrap()
}
