//! Ingestion, preprocessing, online detection, and reporting for daily
//! feature streams.

pub mod ingest;
pub mod online;
pub mod output;
pub mod report;
pub mod segment;
pub mod transform;

pub use ingest::{ingest, read_panel};
pub use online::{
    online_detect, window_for, DetectionEntry, DetectionLog, OnlineConfig, FIRST_TEST_T, RUN_IN_DAYS,
};
pub use report::{changepoint_rate, method_similarity, spearman, spearman_bootstrap, SpearmanResult};
pub use segment::{impute, segment, segment_ranges, Imputed, SegmentRule};
pub use transform::{
    dow_residualize, inverse_normal_transform, preprocess, residualize_panel, tune_lambda,
    PreprocessConfig, PreprocessedSegment,
};
