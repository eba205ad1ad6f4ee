use std::path::Path;

use serde::Serialize;

use super::profiles::ComparisonRow;
use super::records::{relative_error, ExperimentRecord};
use super::{run_indexed, ExperimentError};
use crate::aggregation::{aggregate, key_equation_residuals};
use crate::forms::{bfgs_iterative, InitialMatrix, InverseHessianModel};
use crate::linalg::DenseMatrix;
use crate::pairs::CurvaturePair;
use crate::problems::{mock_pair_sequence, problem_by_name, PairStreamSpec};
use crate::solver::{
    dense_inverse_update, minimize, update_memory, AggregationTrigger, Memory, MemoryEdit, SolverConfig, SolverMode,
    SolverStatus,
};

/// Records plus the number of per-instance failures among them.
#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    pub records: Vec<ExperimentRecord>,
    pub failures: usize,
}

/// Parses a grid of `(n, m)` cells. Accepts `small` (n ∈ {4,…,32}),
/// `full` (n ∈ {4,…,128}), a list of sizes (`4,8,16`: every m ≤ n from the
/// same list), or explicit cells (`4:1,8:8`).
pub fn parse_grid(spec: &str) -> Result<Vec<(usize, usize)>, ExperimentError> {
    let sizes = |v: &[usize]| -> Vec<(usize, usize)> {
        v.iter().flat_map(|&n| v.iter().filter(move |&&m| m <= n).map(move |&m| (n, m))).collect()
    };
    let bad = || ExperimentError::Config(format!("cannot parse grid '{spec}'"));
    match spec.trim() {
        "small" => return Ok(sizes(&[4, 8, 16, 32])),
        "full" => return Ok(sizes(&[4, 8, 16, 32, 64, 128])),
        _ => {}
    }
    let items: Vec<&str> = spec.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(bad());
    }
    let cells = if items.iter().all(|s| s.contains(':')) {
        items
            .iter()
            .map(|s| {
                let (n, m) = s.split_once(':').ok_or_else(bad)?;
                Ok((n.parse().map_err(|_| bad())?, m.parse().map_err(|_| bad())?))
            })
            .collect::<Result<Vec<_>, ExperimentError>>()?
    } else {
        let v: Vec<usize> = items.iter().map(|s| s.parse().map_err(|_| bad())).collect::<Result<_, _>>()?;
        sizes(&v)
    };
    for &(n, m) in &cells {
        if m == 0 || m > n {
            return Err(ExperimentError::Config(format!("grid cell ({n}, {m}) needs 1 ≤ m ≤ n")));
        }
    }
    Ok(cells)
}

/// Type-7 (linear interpolation) quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn summary_records(
    experiment: &str,
    seed: u64,
    n: usize,
    m: usize,
    metric: &str,
    values: &[f64],
) -> Vec<ExperimentRecord> {
    let mut sorted: Vec<f64> = values.to_vec();
    if sorted.is_empty() {
        return Vec::new();
    }
    sorted.sort_by(f64::total_cmp);
    [("min", 0.0), ("q1", 0.25), ("median", 0.5), ("q3", 0.75), ("max", 1.0)]
        .iter()
        .map(|&(name, q)| {
            ExperimentRecord::new(experiment, seed, n, m, sorted.len(), &format!("{metric}_{name}"), quantile(&sorted, q))
        })
        .collect()
}

fn failure_record(experiment: &str, seed: u64, n: usize, m: usize, k: usize, err: &ExperimentError) -> ExperimentRecord {
    ExperimentRecord::new(experiment, seed, n, m, k, "failure", f64::NAN).with_meta("error", err.to_string())
}

/// Largest change of the compact-form matrix when every gradient
/// displacement is perturbed by relative rounding-sized amounts; the best
/// accuracy any evaluation of these pairs in double precision can expect.
pub fn representation_floor(w0: &InitialMatrix, pairs: &[CurvaturePair], n: usize) -> Result<f64, ExperimentError> {
    let forms = |e: crate::forms::FormsError| ExperimentError::Config(format!("dense form failed: {e}"));
    let base = InverseHessianModel::new(w0.clone(), pairs.to_vec()).dense(n).map_err(forms)?;
    let mut worst = 0.0_f64;
    for trial in 0..4usize {
        let perturbed = pairs
            .iter()
            .enumerate()
            .map(|(c, p)| {
                // Deterministic pattern of signed offsets in [−1, 1] ulps.
                let y = p.y().map_with_location(|r, _, v| {
                    let h = ((r * 7 + c * 13 + trial * 31) % 17) as f64 / 8.0 - 1.0;
                    v * (1.0 + f64::EPSILON * 0.5 * h)
                });
                p.with_y(y).map_err(|e| ExperimentError::Config(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let w = InverseHessianModel::new(w0.clone(), perturbed).dense(n).map_err(forms)?;
        worst = worst.max(relative_error(&w, &base)?);
    }
    Ok(worst)
}

fn equivalence_instance(seed: u64, n: usize, m: usize, instance: usize) -> Result<Vec<(String, f64)>, ExperimentError> {
    let stream = mock_pair_sequence(&PairStreamSpec::new(seed, instance, n, m, m), true)?;
    let planted = stream.planted.expect("planted pair requested");
    let w0 = InitialMatrix::identity();
    let context = InverseHessianModel::new(w0.clone(), Vec::new());
    let agg = |e: crate::aggregation::AggregationError| ExperimentError::Config(format!("aggregation failed: {e}"));
    let result = aggregate(&context, &stream.pairs, &planted.pair, &planted.tau, None).map_err(agg)?;
    let aggregated = result.apply_to(&stream.pairs).map_err(agg)?;
    let mut full = vec![planted.pair.clone()];
    full.extend(stream.pairs.iter().cloned());
    let forms = |e: crate::forms::FormsError| ExperimentError::Config(format!("dense form failed: {e}"));
    let w_full = bfgs_iterative(&w0, &full, n).map_err(forms)?;
    let w_agg = InverseHessianModel::new(w0.clone(), aggregated.clone()).dense(n).map_err(forms)?;
    let w_agg_iter = bfgs_iterative(&w0, &aggregated, n).map_err(forms)?;
    let res = key_equation_residuals(&context, &stream.pairs, &planted.pair, &planted.tau, &result);
    Ok(vec![
        ("rel_error".into(), relative_error(&w_agg, &w_full)?),
        ("rel_error_iterative".into(), relative_error(&w_agg_iter, &w_full)?),
        ("representation_floor".into(), representation_floor(&w0, &aggregated, n)?),
        ("res_triangular".into(), res.triangular),
        ("res_b".into(), res.b_equation),
        ("res_quadratic".into(), res.quadratic),
        ("curvature_change".into(), res.curvature),
    ])
}

/// Single aggregation of a planted dependent pair per instance, compared
/// against dense BFGS (recursive update) over all pairs. The aggregated
/// matrix is formed with the compact form; `rel_error_iterative` repeats the
/// comparison with the recursive update, which is less accurate on
/// aggregated pairs. `k` is the instance index; per-cell
/// box-plot statistics follow each cell's instances with `k` = sample size.
pub fn run_equivalence(
    grid: &[(usize, usize)],
    instances: usize,
    seed: u64,
    jobs: usize,
) -> Result<RunOutcome, ExperimentError> {
    for &(n, m) in grid {
        if m == 0 || m > n {
            return Err(ExperimentError::Config(format!("grid cell ({n}, {m}) needs 1 ≤ m ≤ n")));
        }
    }
    let tasks: Vec<(usize, usize, usize)> =
        grid.iter().flat_map(|&(n, m)| (0..instances).map(move |i| (n, m, i))).collect();
    let results = run_indexed(tasks.len(), jobs, |t| {
        let (n, m, i) = tasks[t];
        equivalence_instance(seed, n, m, i)
    });
    let mut out = RunOutcome::default();
    for (c, &(n, m)) in grid.iter().enumerate() {
        let mut errors = Vec::with_capacity(instances);
        for i in 0..instances {
            match &results[c * instances + i] {
                Ok(metrics) => {
                    for (name, v) in metrics {
                        out.records.push(ExperimentRecord::new("equivalence", seed, n, m, i, name, *v));
                    }
                    errors.push(metrics[0].1);
                }
                Err(e) => {
                    out.failures += 1;
                    out.records.push(failure_record("equivalence", seed, n, m, i, e));
                }
            }
        }
        out.records.extend(summary_records("equivalence-summary", seed, n, m, "rel_error", &errors));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccumulationOptions {
    /// Problem size; the memory equals it.
    pub n: usize,
    pub extra_steps: usize,
    pub instances: usize,
    pub seed: u64,
    pub jobs: usize,
}

fn accumulation_instance(opt: &AccumulationOptions, instance: usize) -> Result<Vec<(usize, String, f64)>, ExperimentError> {
    let n = opt.n;
    let steps = n + opt.extra_steps;
    let stream = mock_pair_sequence(&PairStreamSpec::new(opt.seed, instance, n, n, steps), false)?;
    let mut config = SolverConfig::new(SolverMode::AggBfgs { memory: n });
    config.trigger = AggregationTrigger::Exact;
    let mut memory = Memory::new(&config, n);
    let mut w_full = DenseMatrix::identity(n, n);
    let (mut aggs, mut fallbacks) = (0usize, 0usize);
    let mut out = Vec::new();
    for (idx, pair) in stream.pairs.iter().enumerate() {
        let k = idx + 1;
        dense_inverse_update(&mut w_full, pair);
        match update_memory(&mut memory, pair.clone(), &config)? {
            MemoryEdit::Aggregated { .. } => aggs += 1,
            MemoryEdit::Fallback { .. } | MemoryEdit::Skipped => fallbacks += 1,
            _ => {}
        }
        if k >= n {
            let w_agg = memory
                .dense(n)
                .map_err(|e| ExperimentError::Config(format!("dense form failed: {e}")))?;
            out.push((k, "rel_error".to_string(), relative_error(&w_agg, &w_full)?));
        }
    }
    out.push((steps, "aggregations".into(), aggs as f64));
    out.push((steps, "fallbacks".into(), fallbacks as f64));
    Ok(out)
}

/// Runs the exact-trigger aggregation policy with memory `n` over a mock
/// stream of `n + extra_steps` pairs, recording the error against full
/// BFGS at every `k ≥ n`. Per-instance rows carry `instance` metadata;
/// summary rows give terminal-error statistics.
pub fn run_accumulation(opt: &AccumulationOptions) -> Result<RunOutcome, ExperimentError> {
    if opt.n == 0 {
        return Err(ExperimentError::Config("n must be positive".into()));
    }
    let results = run_indexed(opt.instances, opt.jobs, |i| accumulation_instance(opt, i));
    let mut out = RunOutcome::default();
    let mut terminal = Vec::new();
    let last = opt.n + opt.extra_steps;
    for (i, r) in results.iter().enumerate() {
        match r {
            Ok(rows) => {
                for (k, metric, v) in rows {
                    if *k == last && metric == "rel_error" {
                        terminal.push(*v);
                    }
                    out.records.push(
                        ExperimentRecord::new("accumulation", opt.seed, opt.n, opt.n, *k, metric, *v)
                            .with_meta("instance", i.to_string()),
                    );
                }
            }
            Err(e) => {
                out.failures += 1;
                out.records
                    .push(failure_record("accumulation", opt.seed, opt.n, opt.n, last, e).with_meta("instance", i.to_string()));
            }
        }
    }
    out.records
        .extend(summary_records("accumulation-summary", opt.seed, opt.n, opt.n, "terminal_rel_error", &terminal));
    Ok(out)
}

fn traced_pairs(problem_name: &str, max_iters: usize) -> Result<(usize, Vec<CurvaturePair>), ExperimentError> {
    let problem = problem_by_name(problem_name)?;
    let mut config = SolverConfig::new(SolverMode::FullBfgs);
    config.record_trace = true;
    config.max_iters = max_iters;
    let report = minimize(problem.as_ref(), &problem.initial_point(), &config)?;
    let pairs = report
        .trace
        .iter()
        .filter_map(|r| CurvaturePair::new(r.s.clone(), r.y.clone()).ok())
        .collect();
    Ok((problem.dim(), pairs))
}

/// Error between full-history BFGS and BFGS that ignores the first `j`
/// pairs of the same full-BFGS run, for each `k > j`.
pub fn run_lag_study(problem: &str, lags: &[usize], iterations: usize) -> Result<RunOutcome, ExperimentError> {
    let (n, pairs) = traced_pairs(problem, iterations)?;
    let mut out = RunOutcome::default();
    for &j in lags {
        let mut w_full = DenseMatrix::identity(n, n);
        let mut w_lag = DenseMatrix::identity(n, n);
        for (idx, p) in pairs.iter().enumerate() {
            let k = idx + 1;
            dense_inverse_update(&mut w_full, p);
            if idx >= j {
                dense_inverse_update(&mut w_lag, p);
                out.records.push(
                    ExperimentRecord::new("lag", 0, n, j, k, "rel_error", relative_error(&w_lag, &w_full)?)
                        .with_meta("problem", problem),
                );
            }
        }
    }
    Ok(out)
}

/// Feeds the pairs of a full-BFGS run into an exact-trigger aggregation
/// memory and an L-BFGS memory, both of size `memory`, and records how far
/// each represented matrix is from the full BFGS matrix at every iteration.
pub fn run_tracking(problem: &str, memory: usize, iterations: usize) -> Result<RunOutcome, ExperimentError> {
    if memory == 0 {
        return Err(ExperimentError::Config("memory must be positive".into()));
    }
    let (n, pairs) = traced_pairs(problem, iterations)?;
    let mut agg_cfg = SolverConfig::new(SolverMode::AggBfgs { memory });
    agg_cfg.trigger = AggregationTrigger::Exact;
    let lbfgs_cfg = SolverConfig::new(SolverMode::Lbfgs { memory });
    let mut agg = Memory::new(&agg_cfg, n);
    let mut lim = Memory::new(&lbfgs_cfg, n);
    let mut w_full = DenseMatrix::identity(n, n);
    let mut out = RunOutcome::default();
    let dense = |m: &Memory| m.dense(n).map_err(|e| ExperimentError::Config(format!("dense form failed: {e}")));
    for (idx, p) in pairs.iter().enumerate() {
        let k = idx + 1;
        dense_inverse_update(&mut w_full, p);
        let edit = update_memory(&mut agg, p.clone(), &agg_cfg)?;
        update_memory(&mut lim, p.clone(), &lbfgs_cfg)?;
        if matches!(edit, MemoryEdit::Fallback { .. } | MemoryEdit::Skipped) {
            out.failures += 1;
        }
        let rec = |metric: &str, v: f64| {
            ExperimentRecord::new("tracking", 0, n, memory, k, metric, v).with_meta("problem", problem)
        };
        out.records.push(rec("agg_rel_error", relative_error(&dense(&agg)?, &w_full)?));
        out.records.push(rec("lbfgs_rel_error", relative_error(&dense(&lim)?, &w_full)?));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkOptions {
    pub problems: Vec<String>,
    pub modes: Vec<SolverMode>,
    pub tol_recent: f64,
    pub tol_oldest: f64,
    pub max_iters: usize,
    pub jobs: usize,
}

impl BenchmarkOptions {
    pub fn new(problems: Vec<String>, memory: usize) -> Self {
        BenchmarkOptions {
            problems,
            modes: vec![SolverMode::AggBfgs { memory }, SolverMode::Lbfgs { memory }],
            tol_recent: 1e-8,
            tol_oldest: 1e-1,
            max_iters: 100_000,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkRow {
    pub problem: String,
    pub n: usize,
    pub mode: String,
    pub iters: usize,
    pub funcs: usize,
    pub aggs: usize,
    pub fallbacks: usize,
    pub restarts: usize,
    pub status: String,
    pub convex: bool,
    pub f: f64,
    pub grad_inf: f64,
}

impl BenchmarkRow {
    pub fn converged(&self) -> bool {
        self.status == "Converged"
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkOutcome {
    pub rows: Vec<BenchmarkRow>,
    /// AggBFGS-vs-LBFGS table (failures empty), when both modes were run.
    pub comparison: Vec<ComparisonRow>,
    pub failures: usize,
}

fn status_label(s: SolverStatus) -> &'static str {
    match s {
        SolverStatus::Converged => "Converged",
        SolverStatus::IterLimit => "IterLimit",
        SolverStatus::LineSearchFailure => "LineSearchFailure",
    }
}

fn benchmark_task(name: &str, mode: SolverMode, opt: &BenchmarkOptions) -> BenchmarkRow {
    let mut row = BenchmarkRow {
        problem: name.to_string(),
        n: 0,
        mode: mode.label(),
        iters: 0,
        funcs: 0,
        aggs: 0,
        fallbacks: 0,
        restarts: 0,
        status: String::new(),
        convex: false,
        f: f64::NAN,
        grad_inf: f64::NAN,
    };
    let problem = match problem_by_name(name) {
        Ok(p) => p,
        Err(e) => {
            row.status = format!("Error: {e}");
            return row;
        }
    };
    row.n = problem.dim();
    row.convex = problem.is_convex();
    let mut config = SolverConfig::new(mode);
    config.tol_recent = opt.tol_recent;
    config.tol_oldest = opt.tol_oldest;
    config.max_iters = opt.max_iters;
    match minimize(problem.as_ref(), &problem.initial_point(), &config) {
        Ok(r) => {
            row.iters = r.iters;
            row.funcs = r.funcs;
            row.aggs = r.aggs;
            row.fallbacks = r.fallbacks;
            row.restarts = r.restarts;
            row.status = status_label(r.status).to_string();
            row.f = r.f;
            row.grad_inf = r.grad_inf;
        }
        Err(e) => row.status = format!("Error: {e}"),
    }
    row
}

/// Solves every problem with every mode; a run that does not converge is a
/// per-problem failure, not an error.
pub fn run_benchmark(opt: &BenchmarkOptions) -> Result<BenchmarkOutcome, ExperimentError> {
    if opt.modes.is_empty() || opt.problems.is_empty() {
        return Err(ExperimentError::Config("benchmark needs at least one problem and one mode".into()));
    }
    for &mode in &opt.modes {
        let mut c = SolverConfig::new(mode);
        c.tol_recent = opt.tol_recent;
        c.tol_oldest = opt.tol_oldest;
        c.validate()?;
    }
    let k = opt.modes.len();
    let rows = run_indexed(opt.problems.len() * k, opt.jobs, |t| {
        benchmark_task(&opt.problems[t / k], opt.modes[t % k], opt)
    });
    let failures = rows.iter().filter(|r| !r.converged()).count();

    let agg_idx = opt.modes.iter().position(|m| matches!(m, SolverMode::AggBfgs { .. }));
    let lbfgs_idx = opt.modes.iter().position(|m| matches!(m, SolverMode::Lbfgs { .. }));
    let comparison = match (agg_idx, lbfgs_idx) {
        (Some(a), Some(l)) => (0..opt.problems.len())
            .map(|p| {
                let ra = &rows[p * k + a];
                let rl = &rows[p * k + l];
                let ok = |r: &BenchmarkRow, v: usize| r.converged().then_some(v as u64);
                ComparisonRow {
                    problem: opt.problems[p].clone(),
                    agg_iters: ok(ra, ra.iters),
                    agg_funcs: ok(ra, ra.funcs),
                    aggs: ok(ra, ra.aggs),
                    lbfgs_iters: ok(rl, rl.iters),
                    lbfgs_funcs: ok(rl, rl.funcs),
                }
            })
            .collect(),
        _ => Vec::new(),
    };
    Ok(BenchmarkOutcome {
        rows,
        comparison,
        failures,
    })
}

/// Writes the long per-run table (`problem,n,mode,…`).
pub fn write_benchmark_rows(path: &Path, rows: &[BenchmarkRow]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "problem", "n", "mode", "iters", "funcs", "aggs", "fallbacks", "restarts", "status", "convex", "f", "grad_inf",
    ])?;
    for r in rows {
        w.write_record([
            r.problem.clone(),
            r.n.to_string(),
            r.mode.clone(),
            r.iters.to_string(),
            r.funcs.to_string(),
            r.aggs.to_string(),
            r.fallbacks.to_string(),
            r.restarts.to_string(),
            r.status.clone(),
            r.convex.to_string(),
            super::format_float(r.f),
            super::format_float(r.grad_inf),
        ])?;
    }
    w.flush()?;
    Ok(())
}
