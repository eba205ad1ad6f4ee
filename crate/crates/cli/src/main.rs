use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aggbfgs::experiments::{
    compute_profiles, emit_profiles, parse_grid, read_comparison_table, run_accumulation, run_benchmark,
    run_equivalence, run_lag_study, run_tracking, write_benchmark_rows, write_comparison_table, write_records,
    AccumulationOptions, BenchmarkOptions, ComparisonRow, ExperimentError, Measure, RunOutcome,
};
use aggbfgs::problems::suite_names;
use aggbfgs::solver::SolverMode;
use clap::{Args, Parser, Subcommand};

/// Seeded experiments for BFGS, L-BFGS and aggregated BFGS. Results are
/// written as CSV (and JSON for record-style outputs) into `--out`.
#[derive(Debug, Parser)]
#[command(name = "aggbfgs", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Base seed for every random stream.
    #[arg(long, global = true, default_value_t = 20240917)]
    seed: u64,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "results")]
    out: PathBuf,
    /// Worker threads; outputs do not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// One aggregation of a planted dependent pair per instance, compared
    /// with full-memory BFGS.
    Equivalence {
        /// `small`, `full`, a size list such as `4,8,16`, or cells `n:m,…`.
        #[arg(long, default_value = "small")]
        grid: String,
        #[arg(long, default_value_t = 100)]
        instances: usize,
    },
    /// Error growth when a memory of size n keeps aggregating.
    Accumulation {
        /// Dimension and memory size.
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 8)]
        extra_steps: usize,
        #[arg(long, default_value_t = 100)]
        instances: usize,
    },
    /// Full BFGS against BFGS that starts j pairs late.
    Lag {
        #[arg(long, default_value = "rosenbrock")]
        problem: String,
        /// Comma-separated lags.
        #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
        lags: Vec<usize>,
        #[arg(long, default_value_t = 200)]
        iterations: usize,
    },
    /// Aggregated and limited-memory matrices along a full BFGS run.
    Tracking {
        #[arg(long, default_value = "rosenbrock")]
        problem: String,
        #[arg(long, default_value_t = 2)]
        memory: usize,
        #[arg(long, default_value_t = 10_000)]
        iterations: usize,
    },
    /// Solver comparison on a problem suite, with profiles.
    Benchmark {
        /// `default` or a comma-separated list of problem names.
        #[arg(long, default_value = "default")]
        suite: String,
        /// Comma-separated subset of `aggbfgs`, `lbfgs`, `bfgs`.
        #[arg(long, value_delimiter = ',', default_value = "aggbfgs,lbfgs")]
        mode: Vec<String>,
        #[arg(long, default_value_t = 5)]
        memory: usize,
        #[arg(long, default_value_t = 1e-8)]
        tol_recent: f64,
        #[arg(long, default_value_t = 1e-1)]
        tol_oldest: f64,
        #[arg(long, default_value_t = 100_000)]
        max_iters: usize,
    },
    /// Performance profiles and outperforming factors of a comparison table.
    Profiles {
        /// CSV with columns problem,agg_iters,agg_funcs,aggs,lbfgs_iters,lbfgs_funcs.
        #[arg(long)]
        input: PathBuf,
        /// `iters`, `funcs` or `both`.
        #[arg(long, default_value = "both")]
        measure: String,
    },
}

fn parse_mode(name: &str, memory: usize) -> Result<SolverMode, ExperimentError> {
    match name.trim().to_ascii_lowercase().as_str() {
        "aggbfgs" | "agg" => Ok(SolverMode::AggBfgs { memory }),
        "lbfgs" => Ok(SolverMode::Lbfgs { memory }),
        "bfgs" => Ok(SolverMode::FullBfgs),
        other => Err(ExperimentError::Config(format!("unknown mode `{other}`"))),
    }
}

fn parse_measures(spec: &str) -> Result<Vec<Measure>, ExperimentError> {
    match spec {
        "both" => Ok(vec![Measure::Iterations, Measure::FunctionEvaluations]),
        one => Ok(vec![one.parse()?]),
    }
}

fn report_written(paths: &[&Path]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn save_records(out: &Path, stem: &str, outcome: &RunOutcome) -> Result<usize, ExperimentError> {
    let (csv, json) = write_records(out, stem, &outcome.records)?;
    report_written(&[&csv, &json]);
    Ok(outcome.failures)
}

fn save_profiles(rows: &[ComparisonRow], out: &Path, stem: &str, measures: &[Measure]) -> Result<(), ExperimentError> {
    for &measure in measures {
        let data = compute_profiles(rows, measure, ["AggBFGS".into(), "LBFGS".into()])?;
        let (curves, factors) = emit_profiles(&data, out, &format!("{stem}_{}", measure.label()))?;
        report_written(&[&curves, &factors]);
    }
    Ok(())
}

/// Runs one subcommand and returns the number of per-instance failures.
fn run(cli: Cli) -> Result<usize, ExperimentError> {
    let Common { seed, out, jobs } = cli.common;
    if jobs == 0 {
        return Err(ExperimentError::Config("--jobs must be at least 1".into()));
    }
    match cli.command {
        Command::Equivalence { grid, instances } => {
            let cells = parse_grid(&grid)?;
            save_records(&out, "equivalence", &run_equivalence(&cells, instances, seed, jobs)?)
        }
        Command::Accumulation {
            n,
            extra_steps,
            instances,
        } => {
            let outcome = run_accumulation(&AccumulationOptions {
                n,
                extra_steps,
                instances,
                seed,
                jobs,
            })?;
            save_records(&out, &format!("accumulation_n{n}"), &outcome)
        }
        Command::Lag {
            problem,
            lags,
            iterations,
        } => save_records(&out, &format!("lag_{problem}"), &run_lag_study(&problem, &lags, iterations)?),
        Command::Tracking {
            problem,
            memory,
            iterations,
        } => save_records(
            &out,
            &format!("tracking_{problem}_m{memory}"),
            &run_tracking(&problem, memory, iterations)?,
        ),
        Command::Benchmark {
            suite,
            mode,
            memory,
            tol_recent,
            tol_oldest,
            max_iters,
        } => {
            let mut opt = BenchmarkOptions::new(suite_names(&suite)?, memory);
            opt.modes = mode.iter().map(|m| parse_mode(m, memory)).collect::<Result<_, _>>()?;
            opt.tol_recent = tol_recent;
            opt.tol_oldest = tol_oldest;
            opt.max_iters = max_iters;
            opt.jobs = jobs;
            let outcome = run_benchmark(&opt)?;
            std::fs::create_dir_all(&out)?;
            let runs = out.join("benchmark_runs.csv");
            write_benchmark_rows(&runs, &outcome.rows)?;
            report_written(&[&runs]);
            if !outcome.comparison.is_empty() {
                let table = out.join("benchmark_comparison.csv");
                write_comparison_table(&table, &outcome.comparison)?;
                report_written(&[&table]);
                match save_profiles(&outcome.comparison, &out, "benchmark", &parse_measures("both")?) {
                    Ok(()) => {}
                    Err(ExperimentError::EmptyIntersection) => {
                        eprintln!("no problem was solved by both solvers; profiles skipped")
                    }
                    Err(e) => return Err(e),
                }
            }
            for r in outcome.rows.iter().filter(|r| !r.converged()) {
                eprintln!("{} / {}: {}", r.problem, r.mode, r.status);
            }
            Ok(outcome.failures)
        }
        Command::Profiles { input, measure } => {
            let rows = read_comparison_table(&input)?;
            std::fs::create_dir_all(&out)?;
            let stem = input.file_stem().map_or("profiles".into(), |s| s.to_string_lossy().into_owned());
            save_profiles(&rows, &out, &stem, &parse_measures(&measure)?)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(failures) => {
            eprintln!("{failures} instance(s) failed; see the records for details");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
