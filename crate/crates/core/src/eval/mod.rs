//! Clustering, scoring and comparison-table methodology.

mod kmeans;
mod metrics;
pub mod tables;

pub use kmeans::{kmeans_fit, kmeans_run, ClusterAssignment, KMeansRun, DEFAULT_RESTARTS, MAX_ITERATIONS};
pub use metrics::{pair_counts, pair_counts_brute_force, rand_index, top1_accuracy, PairCounts};
pub use tables::{rank_table, reproduce_tables, BundledTables, RankSummary, ResultsTable, TableCheck};
