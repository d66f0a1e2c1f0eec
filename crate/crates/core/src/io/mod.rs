//! Run configuration, checkpoints and report writers.
//!
//! Every floating-point number written by this module uses 17 significant
//! digits, which round-trips any `f64`.

pub mod checkpoint;
pub mod config;
pub mod report;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointError, CHECKPOINT_MAGIC};
pub use config::{ConfigError, FamilyConfig, OutputConfig, OutputFormat, Precision, RunConfig};
pub use report::{
    read_seeds, write_trajectory_ndjson, CsvSink, JsonLine, NdjsonSink, TRAJECTORY_SCHEMA_VERSION,
};

/// `x` with 17 significant digits in scientific notation.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "NaN".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}
