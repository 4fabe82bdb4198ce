//! Demonstration files, hindsight relabeling and tuple files.

mod format;
mod manifest;
mod relabel;

pub use format::{
    config_hash, decode_demos, decode_tuples, encode_demos, encode_tuples, file_hash, read_demos,
    read_tuples, sha256, sha256_hex, write_demos, write_tuples, DemoFile, DemoHeader, Digest32,
    TupleFile, TupleHeader, DEMO_MAGIC, SCHEMA_VERSION, TUPLE_MAGIC,
};
pub use manifest::{FileEntry, Manifest, MANIFEST_NAME};
pub use relabel::{
    count_all, count_uniform, decode_pose, demo_seed, encode_pose, featurize_state, goal_index,
    max_goal_offset, relabel, valid_times, DatasetConfig, GoalRule, RelabeledTuple, GOAL_DIM,
    POSE_DIM,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(String),
    #[error("not a dataset file of the expected kind")]
    BadMagic,
    #[error("schema version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("file truncated at byte {offset}: need {needed} more bytes, {available} left")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("task hash {found} does not match {expected}")]
    TaskHashMismatch { found: String, expected: String },
    #[error("dynamics parameter hash {found} does not match {expected}")]
    ParamsHashMismatch { found: String, expected: String },
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error("invalid data: {0}")]
    Invalid(String),
    #[error("manifest error: {0}")]
    Manifest(String),
}

impl From<std::io::Error> for DatasetError {
    fn from(e: std::io::Error) -> Self {
        DatasetError::Io(e.to_string())
    }
}
