//! Evaluation of designs, the equivariance certification harness and the
//! graph-size benchmark.

pub mod bench;
pub mod certify;
pub mod metrics;

pub use bench::{bench_graphs, BenchEntry, BenchReport};
pub use certify::{certify_equivariance, transform_deviation, Certificate, Deviation};
pub use metrics::{evaluate, identity, perplexity, recovery, EvalReport, RecordMetrics};
