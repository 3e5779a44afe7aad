//! Image I/O, dataset indexing, synthetic pairs and checkpoints.

pub mod checkpoint;
pub mod dataset;
pub mod image;
pub mod synth;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use dataset::{index_dataset, DatasetIndex, Record, Split};
pub use image::{load_image, load_image_pair, load_mask, save_gray, save_rgb};
pub use synth::{generate_synthetic_pair, write_synthetic_dataset, SynthConfig, SynthSample};
