//! Persistence: checkpoints, run configuration, metric CSVs and PPM previews.

mod checkpoint;
mod config;
mod metrics;
mod ppm;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, merge_prefixed, save_checkpoint, take_prefixed,
    CHECKPOINT_VERSION,
};
pub use config::{load_config, parse_config, RunConfig};
pub use metrics::{sig9, write_metrics, Field};
pub use ppm::{decode_ppm, encode_ppm, write_ppm};
