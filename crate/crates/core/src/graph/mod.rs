pub mod features;
pub mod merge;
pub mod snapshot;
pub mod stats;
pub mod window;

pub use features::{build_features, FeatureMatrix, RowKind};
pub use merge::{dbscan, merge_entities, EntityMerge};
pub use snapshot::{parse_snapshot, read_snapshots, write_snapshots, Entity, Flow, GraphSnapshot, Location, Mention};
pub use stats::{read_stats, write_stats, DailyStats, StatsTable};
pub use window::{aggregate_window, Edge, EdgeCounts, EdgeKind, GraphOptions, NodeRef, SpatialTemporalGraph};
