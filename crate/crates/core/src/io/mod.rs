//! Files, configuration and the command implementations behind the CLI.

mod commands;
mod config;
mod dataset;
mod manifest;
mod video_file;

pub use commands::{
    ablate, eval_model, gen_data, load_model, save_model, train_model, verify_file,
    write_json_lines,
};
pub use config::{AblateConfig, Config, EvalConfig, SEED_ENV};
pub use dataset::{render_record, Dataset, DatasetConfig};
pub use manifest::{DatasetManifest, Split, VideoRecord, MANIFEST_FILE, MANIFEST_VERSION};
pub use video_file::{
    load_video, read_video, save_video, write_video, VideoFile, VIDEO_MAGIC, VIDEO_VERSION,
};
