//! Browser demo: solver paths on the two-dimensional Rosenbrock function,
//! single-aggregation accuracy on random instances, and matrix tracking
//! along a BFGS run. Each operation has a plain Rust entry point (tested
//! natively) and a `wasm_bindgen` wrapper that returns JSON.

use aggbfgs::experiments::{run_equivalence, run_tracking, ExperimentError};
use aggbfgs::problems::{rosenbrock, RosenbrockVariant};
use aggbfgs::solver::{minimize, MemoryEdit, SolverConfig, SolverMode};
use nalgebra::DVector;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Largest dimension accepted by the equivalence operation; keeps a
/// browser call well under a second.
pub const MAX_DEMO_DIM: usize = 64;
pub const MAX_DEMO_INSTANCES: usize = 200;

#[derive(Debug, thiserror::Error)]
pub enum DemoError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
}

#[derive(Debug, Clone, Serialize)]
pub struct SolverPath {
    pub mode: String,
    /// Iterates `[x₁, x₂]`, starting point first.
    pub points: Vec<[f64; 2]>,
    /// Iteration indices at which a pair was aggregated away.
    pub aggregated_at: Vec<usize>,
    pub iters: usize,
    pub funcs: usize,
    pub aggs: usize,
    pub status: String,
    pub f: f64,
}

fn parse_mode(mode: &str, memory: usize) -> Result<SolverMode, DemoError> {
    match mode {
        "bfgs" => Ok(SolverMode::FullBfgs),
        "lbfgs" => Ok(SolverMode::Lbfgs { memory }),
        "aggbfgs" => Ok(SolverMode::AggBfgs { memory }),
        other => Err(DemoError::Input(format!("unknown mode `{other}`"))),
    }
}

/// Runs one solver on 2-D Rosenbrock from `(x0, y0)` and returns its path.
pub fn rosenbrock_path(mode: &str, memory: usize, x0: f64, y0: f64) -> Result<SolverPath, DemoError> {
    if !(x0.is_finite() && y0.is_finite()) {
        return Err(DemoError::Input("start point must be finite".into()));
    }
    let problem = rosenbrock(RosenbrockVariant::Classic2d).map_err(ExperimentError::from)?;
    let mut config = SolverConfig::new(parse_mode(mode, memory)?);
    config.record_trace = true;
    config.max_iters = 5_000;
    let start = DVector::from_vec(vec![x0, y0]);
    let report = minimize(problem.as_ref(), &start, &config).map_err(ExperimentError::from)?;

    let mut points = vec![[x0, y0]];
    let mut x = start;
    let mut aggregated_at = Vec::new();
    for rec in &report.trace {
        x += &rec.s;
        points.push([x[0], x[1]]);
        if matches!(rec.edit, Some(MemoryEdit::Aggregated { .. })) {
            aggregated_at.push(rec.k);
        }
    }
    Ok(SolverPath {
        mode: config.mode.label(),
        points,
        aggregated_at,
        iters: report.iters,
        funcs: report.funcs,
        aggs: report.aggs,
        status: format!("{:?}", report.status),
        f: report.f,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceErrors {
    pub n: usize,
    pub m: usize,
    /// Relative error of the aggregated matrix per instance.
    pub rel_error: Vec<f64>,
    /// Perturbation floor of the aggregated pairs per instance.
    pub floor: Vec<f64>,
    pub failures: usize,
}

/// Aggregates a planted dependent pair on `instances` random streams.
pub fn equivalence_errors(n: usize, m: usize, instances: usize, seed: u64) -> Result<EquivalenceErrors, DemoError> {
    if n > MAX_DEMO_DIM || instances == 0 || instances > MAX_DEMO_INSTANCES {
        return Err(DemoError::Input(format!(
            "need n ≤ {MAX_DEMO_DIM} and 1 ≤ instances ≤ {MAX_DEMO_INSTANCES}"
        )));
    }
    let out = run_equivalence(&[(n, m)], instances, seed, 1)?;
    let pick = |metric: &str| {
        out.records
            .iter()
            .filter(|r| r.experiment == "equivalence" && r.metric == metric)
            .map(|r| r.value)
            .collect::<Vec<_>>()
    };
    Ok(EquivalenceErrors {
        n,
        m,
        rel_error: pick("rel_error"),
        floor: pick("representation_floor"),
        failures: out.failures,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TrackingCurves {
    pub memory: usize,
    pub k: Vec<usize>,
    pub agg: Vec<f64>,
    pub lbfgs: Vec<f64>,
}

/// Distance of aggregated and limited-memory matrices from full BFGS along
/// a BFGS run on 2-D Rosenbrock.
pub fn tracking_curves(memory: usize) -> Result<TrackingCurves, DemoError> {
    let out = run_tracking("rosenbrock", memory, 10_000)?;
    let mut curves = TrackingCurves {
        memory,
        k: Vec::new(),
        agg: Vec::new(),
        lbfgs: Vec::new(),
    };
    for r in &out.records {
        match r.metric.as_str() {
            "agg_rel_error" => {
                curves.k.push(r.k);
                curves.agg.push(r.value);
            }
            "lbfgs_rel_error" => curves.lbfgs.push(r.value),
            _ => {}
        }
    }
    Ok(curves)
}

fn to_js<T: Serialize>(value: Result<T, DemoError>) -> Result<String, JsError> {
    let v = value.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = rosenbrockPath)]
pub fn rosenbrock_path_js(mode: &str, memory: usize, x0: f64, y0: f64) -> Result<String, JsError> {
    to_js(rosenbrock_path(mode, memory, x0, y0))
}

#[wasm_bindgen(js_name = equivalenceErrors)]
pub fn equivalence_errors_js(n: usize, m: usize, instances: usize, seed: u32) -> Result<String, JsError> {
    to_js(equivalence_errors(n, m, instances, u64::from(seed)))
}

#[wasm_bindgen(js_name = trackingCurves)]
pub fn tracking_curves_js(memory: usize) -> Result<String, JsError> {
    to_js(tracking_curves(memory))
}
