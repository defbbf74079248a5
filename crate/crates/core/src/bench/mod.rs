//! Evaluation harness: metrics, synthetic workloads and paired runs.

mod harness;
mod metrics;
mod workload;

pub use harness::{
    run_paired_benchmark, BenchConfig, BenchmarkSummary, ColdStartPoint, FidelityMode, InputRow, Method,
    MethodSummary,
};
pub use metrics::{compute_sampling_reduction, compute_speedup, MeanCi};
pub use workload::{generate_clustered_workload, nearest_centroid, raw_value, Workload};
