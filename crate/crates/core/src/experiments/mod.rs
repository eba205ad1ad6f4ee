//! Experiment runners, result records, and performance profiles.

mod profiles;
mod records;
mod runners;

pub use profiles::{
    compute_profiles, emit_profiles, morales_factors, performance_profile, read_comparison_table, write_comparison_table,
    ComparisonRow, Measure, ProfileCurve, ProfileData,
};
pub use records::{format_float, read_records_csv, relative_error, write_records, ExperimentRecord};
pub use runners::{
    parse_grid, representation_floor, run_accumulation, run_benchmark, run_equivalence, run_lag_study, run_tracking, AccumulationOptions,
    write_benchmark_rows, BenchmarkOptions, BenchmarkOutcome, BenchmarkRow, RunOutcome,
};

use thiserror::Error;

use crate::problems::ProblemError;
use crate::solver::SolverError;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("reference matrix is zero")]
    ZeroReference,
    #[error("no problem was solved by both solvers")]
    EmptyIntersection,
    #[error("measure for '{0}' is not positive")]
    NonPositiveMeasure(String),
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error("malformed table: {0}")]
    Table(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Runs `task(i)` for `i in 0..count` on up to `jobs` threads and returns
/// the results in index order, so output never depends on scheduling.
pub fn run_indexed<T, F>(count: usize, jobs: usize, task: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let jobs = jobs.max(1).min(count.max(1));
    if jobs == 1 {
        return (0..count).map(&task).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<T>> = (0..count).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..jobs)
            .map(|_| {
                scope.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                        if i >= count {
                            break;
                        }
                        done.push((i, task(i)));
                    }
                    done
                })
            })
            .collect();
        for h in handles {
            for (i, v) in h.join().expect("worker panicked") {
                slots[i] = Some(v);
            }
        }
    });
    slots.into_iter().map(|v| v.expect("every index ran")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexed_results_are_ordered() {
        let serial = run_indexed(50, 1, |i| i * i);
        let parallel = run_indexed(50, 4, |i| i * i);
        assert_eq!(serial, parallel);
        assert!(run_indexed(0, 3, |i| i).is_empty());
    }
}
