//! Cost model, latency probe, real-time factor and the variant comparison.

pub mod compare;
pub mod cost;
pub mod latency;
pub mod rtf;

pub use compare::{compare_variants, write_compare_csv, CompareRow, TrainedModel, COMPARE_HEADER};
pub use cost::{mac_count, single_branch_cost, CostReport};
pub use latency::{verify_latency, LatencyReport};
pub use rtf::{bench_signal, benchmark_rtf, hash_samples, RtfReport};
