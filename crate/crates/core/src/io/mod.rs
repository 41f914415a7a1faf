//! Dataset files, run configuration and report emission.

pub mod config;
pub mod kv;
pub mod report;
pub mod ucr;

pub use config::{apply_config_file, apply_config_text, config_hash};
pub use report::RunMetrics;
pub use ucr::{load_ucr_dataset, z_normalize, Sample, SeriesDataset};
