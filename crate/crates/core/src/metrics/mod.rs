//! Demonstration-quality audit.

mod distance;
mod entropy;
mod report;

pub use distance::{is_success, weighted_distance, ORIENTATION_WEIGHT};
pub use entropy::{
    direction_sector, episodes, progress_histogram, regrasp_entropy, rotation_class,
    segment_bounds, segment_progress, shannon_entropy, velocity_entropy, CellStat, Episode,
    MetricsConfig, MetricsError, ProgressHistogram, RegraspEntropy, VelocityEntropy,
};
pub use report::{compare_reports, EntropyReport, ReportComparison};
