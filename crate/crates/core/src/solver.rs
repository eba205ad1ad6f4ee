//! Line-search quasi-Newton drivers: full-memory BFGS, L-BFGS(m), and
//! AggBFGS(m), which aggregates a stored pair instead of discarding it when
//! its iterate displacement lies (nearly) in the span of later ones.

use nalgebra::DVector;
use serde::Serialize;
use thiserror::Error;

use crate::aggregation::{aggregate, AggregationError};
use crate::forms::{two_loop_apply, FormsError, InitialMatrix, InverseHessianModel};
use crate::linalg::DenseMatrix;
use crate::linesearch::{exact_quadratic_step, weak_wolfe_search, LineSearchError, WolfeParams};
use crate::pairs::{projection_accepts, CurvaturePair, DependenceCase, PairError, PairStore, SpanProjector};
use crate::problems::Problem;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("start point has dimension {actual}, problem has {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("non-finite objective or gradient at the start point")]
    NonFiniteStart,
    #[error(transparent)]
    LineSearch(#[from] LineSearchError),
    #[error(transparent)]
    Pair(#[from] PairError),
    #[error(transparent)]
    Forms(#[from] FormsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolverMode {
    FullBfgs,
    Lbfgs { memory: usize },
    AggBfgs { memory: usize },
}

impl SolverMode {
    pub fn label(&self) -> String {
        match self {
            SolverMode::FullBfgs => "BFGS".into(),
            SolverMode::Lbfgs { memory } => format!("LBFGS({memory})"),
            SolverMode::AggBfgs { memory } => format!("AggBFGS({memory})"),
        }
    }
}

/// How AggBFGS decides that a stored pair is dependent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AggregationTrigger {
    /// Scan stored pairs newest to oldest and accept the first whose
    /// orthogonal projection onto the later displacements passes the
    /// relative-residual test; aggregate with the projected displacement.
    #[default]
    Projection,
    /// Detect exact dependence through the Gram-factor downdate and
    /// aggregate the identified pair; parallel newest pairs are replaced.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LineSearchKind {
    #[default]
    Wolfe,
    /// Exact minimizer along the direction; requires a quadratic problem.
    ExactQuadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StoppingRule {
    /// `‖g_k‖_∞ ≤ grad_tol · max(1, ‖g₀‖_∞)`.
    #[default]
    RelativeInf,
    /// `‖g_k‖₂ ≤ grad_tol`.
    AbsoluteTwoNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub mode: SolverMode,
    pub grad_tol: f64,
    pub stopping: StoppingRule,
    pub max_iters: usize,
    /// Projection tolerance for all but the oldest stored pair.
    pub tol_recent: f64,
    /// Projection tolerance for the oldest stored pair.
    pub tol_oldest: f64,
    pub wolfe: WolfeParams,
    pub initial_matrix: InitialMatrix,
    pub trigger: AggregationTrigger,
    pub line_search: LineSearchKind,
    /// Use `γ_k I` with `γ_k = sᵀy / yᵀy` of the newest pair (L-BFGS only).
    pub scaled_initial: bool,
    pub record_trace: bool,
}

impl SolverConfig {
    pub fn new(mode: SolverMode) -> Self {
        SolverConfig {
            mode,
            grad_tol: 1e-6,
            stopping: StoppingRule::RelativeInf,
            max_iters: 100_000,
            tol_recent: 1e-8,
            tol_oldest: 1e-1,
            wolfe: WolfeParams::default(),
            initial_matrix: InitialMatrix::identity(),
            trigger: AggregationTrigger::Projection,
            line_search: LineSearchKind::Wolfe,
            scaled_initial: false,
            record_trace: false,
        }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        match self.mode {
            SolverMode::Lbfgs { memory } | SolverMode::AggBfgs { memory } if memory == 0 => {
                return Err(SolverError::Config("memory must be at least 1".into()))
            }
            SolverMode::AggBfgs { .. } if self.scaled_initial => {
                return Err(SolverError::Config(
                    "scaled initial matrices change W between iterations, which aggregation cannot represent".into(),
                ))
            }
            SolverMode::FullBfgs if self.scaled_initial => {
                return Err(SolverError::Config("scaled initial matrices are only offered for L-BFGS".into()))
            }
            _ => {}
        }
        if !(0.0 < self.tol_recent && self.tol_recent <= self.tol_oldest && self.tol_oldest < 1.0) {
            return Err(SolverError::Config(format!(
                "need 0 < tol_recent ≤ tol_oldest < 1, got {} and {}",
                self.tol_recent, self.tol_oldest
            )));
        }
        if !(self.grad_tol > 0.0) {
            return Err(SolverError::Config("grad_tol must be positive".into()));
        }
        self.wolfe.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolverStatus {
    Converged,
    IterLimit,
    LineSearchFailure,
}

/// What the memory policy did with a new pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MemoryEdit {
    /// Full-memory dense update.
    DenseUpdate,
    Appended,
    /// The oldest pair was dropped to make room.
    EvictedOldest,
    /// The newest stored pair was parallel to the new one and was replaced.
    ReplacedNewest,
    /// Pair `j` was aggregated into the later ones.
    Aggregated { j: usize },
    /// Aggregation of pair `j` failed; the policy fell back to a plain edit.
    Fallback { j: usize },
    /// The pair could not be stored (numerically dependent in exact mode).
    Skipped,
}

/// Curvature-pair memory of a solver run.
#[derive(Debug, Clone)]
pub enum Memory {
    Dense { w: DenseMatrix },
    Limited { pairs: Vec<CurvaturePair>, capacity: usize, initial: InitialMatrix },
    Projection { pairs: Vec<CurvaturePair>, capacity: usize, initial: InitialMatrix },
    Exact { store: PairStore },
}

impl Memory {
    pub fn new(config: &SolverConfig, n: usize) -> Self {
        let initial = config.initial_matrix.clone();
        match (config.mode, config.trigger) {
            (SolverMode::FullBfgs, _) => Memory::Dense { w: initial.dense(n) },
            (SolverMode::Lbfgs { memory }, _) => Memory::Limited { pairs: Vec::new(), capacity: memory, initial },
            (SolverMode::AggBfgs { memory }, AggregationTrigger::Projection) => {
                Memory::Projection { pairs: Vec::new(), capacity: memory, initial }
            }
            (SolverMode::AggBfgs { memory }, AggregationTrigger::Exact) => Memory::Exact {
                store: PairStore::new(memory, initial),
            },
        }
    }

    /// Stored pairs, oldest first (empty for the dense memory).
    pub fn pairs(&self) -> &[CurvaturePair] {
        match self {
            Memory::Dense { .. } => &[],
            Memory::Limited { pairs, .. } | Memory::Projection { pairs, .. } => pairs,
            Memory::Exact { store } => store.pairs(),
        }
    }

    pub fn initial(&self) -> Option<&InitialMatrix> {
        match self {
            Memory::Dense { .. } => None,
            Memory::Limited { initial, .. } | Memory::Projection { initial, .. } => Some(initial),
            Memory::Exact { store } => Some(store.initial()),
        }
    }

    /// Dense inverse Hessian approximation represented by this memory.
    pub fn dense(&self, n: usize) -> Result<DenseMatrix, FormsError> {
        match self {
            Memory::Dense { w } => Ok(w.clone()),
            _ => InverseHessianModel::new(self.initial().cloned().unwrap_or_default(), self.pairs().to_vec()).dense(n),
        }
    }

}

/// Dense BFGS inverse update `W ← (I − ρsyᵀ) W (I − ρysᵀ) + ρssᵀ`.
pub fn dense_inverse_update(w: &mut DenseMatrix, pair: &CurvaturePair) {
    let (s, y, rho) = (pair.s(), pair.y(), pair.rho());
    let wy = &*w * y;
    let ywy = y.dot(&wy);
    w.ger(-rho, &wy, s, 1.0);
    w.ger(-rho, s, &wy, 1.0);
    w.ger(rho * rho * ywy + rho, s, s, 1.0);
}

fn push_capped(pairs: &mut Vec<CurvaturePair>, capacity: usize, pair: CurvaturePair) -> MemoryEdit {
    let edit = if pairs.len() >= capacity {
        pairs.remove(0);
        MemoryEdit::EvictedOldest
    } else {
        MemoryEdit::Appended
    };
    pairs.push(pair);
    edit
}

/// Aggregates stored pair `j` (with displacement replaced by `dependent`)
/// into the later pairs plus the new one; returns the replacement tail.
fn aggregate_tail(
    initial: &InitialMatrix,
    pairs: &[CurvaturePair],
    j: usize,
    dependent: &CurvaturePair,
    new_pair: &CurvaturePair,
    tau: &DVector<f64>,
) -> Result<Vec<CurvaturePair>, AggregationError> {
    let context = InverseHessianModel::new(initial.clone(), pairs[..j].to_vec());
    let mut retained = pairs[j + 1..].to_vec();
    retained.push(new_pair.clone());
    let result = aggregate(&context, &retained, dependent, tau, None)?;
    result.apply_to(&retained)
}

/// Applies the storage policy of the memory to a new pair.
pub fn update_memory(
    memory: &mut Memory,
    pair: CurvaturePair,
    config: &SolverConfig,
) -> Result<MemoryEdit, SolverError> {
    match memory {
        Memory::Dense { w } => {
            dense_inverse_update(w, &pair);
            Ok(MemoryEdit::DenseUpdate)
        }
        Memory::Limited { pairs, capacity, .. } => Ok(push_capped(pairs, *capacity, pair)),
        Memory::Projection { pairs, capacity, initial } => {
            let mut proj = SpanProjector::new();
            proj.push(pair.s());
            for j in (0..pairs.len()).rev() {
                let (s_hat, rem, coeffs) = proj.project(pairs[j].s());
                let tol = if j == 0 { config.tol_oldest } else { config.tol_recent };
                if projection_accepts(rem.norm(), s_hat.norm(), tol) {
                    // A projected pair without positive curvature cannot be
                    // aggregated; keep scanning older pairs.
                    if let Ok(dependent) = CurvaturePair::new(s_hat, pairs[j].y().clone()) {
                        let tau = DVector::from_iterator(coeffs.len(), coeffs.iter().rev().copied());
                        return Ok(match aggregate_tail(initial, pairs, j, &dependent, &pair, &tau) {
                            Ok(tail) => {
                                pairs.truncate(j);
                                pairs.extend(tail);
                                MemoryEdit::Aggregated { j }
                            }
                            Err(_) => {
                                push_capped(pairs, *capacity, pair);
                                MemoryEdit::Fallback { j }
                            }
                        });
                    }
                }
                proj.push(pairs[j].s());
            }
            Ok(push_capped(pairs, *capacity, pair))
        }
        Memory::Exact { store } => {
            let report = store.observe(&pair)?;
            match report.case {
                DependenceCase::Independent => {
                    let edit = if store.is_full() {
                        store.evict_oldest()?;
                        MemoryEdit::EvictedOldest
                    } else {
                        MemoryEdit::Appended
                    };
                    match store.push(pair) {
                        Ok(()) => Ok(edit),
                        Err(PairError::NotIndependent) => Ok(MemoryEdit::Skipped),
                        Err(e) => Err(e.into()),
                    }
                }
                DependenceCase::ParallelNewest => {
                    store.remove(store.len() - 1)?;
                    store_push_or_skip(store, pair, MemoryEdit::ReplacedNewest)
                }
                DependenceCase::InSpan => {
                    let j = report.j.expect("dependent index");
                    let tau = report.tau.expect("dependence coefficients");
                    let dependent = store.pairs()[j].clone();
                    let outcome =
                        aggregate_tail(store.initial(), store.pairs(), j, &dependent, &pair, &tau);
                    store.remove(j)?;
                    match outcome {
                        Ok(tail) => {
                            let (new_pair, rest) = tail.split_last().expect("nonempty tail");
                            for (k, p) in rest.iter().enumerate() {
                                store.set_y(j + k, p.y().clone())?;
                            }
                            store_push_or_skip(store, new_pair.clone(), MemoryEdit::Aggregated { j })
                        }
                        Err(_) => store_push_or_skip(store, pair, MemoryEdit::Fallback { j }),
                    }
                }
            }
        }
    }
}

fn store_push_or_skip(store: &mut PairStore, pair: CurvaturePair, edit: MemoryEdit) -> Result<MemoryEdit, SolverError> {
    match store.push(pair) {
        Ok(()) => Ok(edit),
        Err(PairError::NotIndependent) => Ok(MemoryEdit::Skipped),
        Err(e) => Err(e.into()),
    }
}

/// One iteration of a solver run.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    pub f: f64,
    pub grad_inf: f64,
    pub alpha: f64,
    pub d: DVector<f64>,
    pub s: DVector<f64>,
    pub y: DVector<f64>,
    pub pairs_stored: usize,
    pub edit: Option<MemoryEdit>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    pub iters: usize,
    pub funcs: usize,
    pub aggs: usize,
    pub fallbacks: usize,
    /// Times the quasi-Newton direction was not a descent direction and the
    /// memory was reset.
    pub restarts: usize,
    pub status: SolverStatus,
    pub x: DVector<f64>,
    pub f: f64,
    pub grad_inf: f64,
    pub grad_norm: f64,
    pub trace: Vec<IterationRecord>,
}

fn direction(memory: &Memory, g: &DVector<f64>, scaled: bool) -> DVector<f64> {
    match memory {
        Memory::Dense { w } => -(w * g),
        _ => {
            let pairs = memory.pairs();
            let initial = memory.initial().expect("limited memory has an initial matrix");
            let w0 = match pairs.last() {
                Some(p) if scaled => InitialMatrix::ScaledIdentity(p.curvature() / p.y().norm_squared()),
                _ => initial.clone(),
            };
            -two_loop_apply(&w0, pairs, g)
        }
    }
}

/// Minimizes `problem` from `x0`.
pub fn minimize(problem: &dyn Problem, x0: &DVector<f64>, config: &SolverConfig) -> Result<SolverReport, SolverError> {
    config.validate()?;
    let n = problem.dim();
    if x0.len() != n {
        return Err(SolverError::DimensionMismatch { expected: n, actual: x0.len() });
    }
    let hessian = match config.line_search {
        LineSearchKind::ExactQuadratic => Some(
            problem
                .quadratic_hessian()
                .ok_or_else(|| SolverError::Config("exact line search needs a quadratic problem".into()))?,
        ),
        LineSearchKind::Wolfe => None,
    };
    let mut memory = Memory::new(config, n);
    let mut x = x0.clone();
    let (mut f, mut g) = problem.eval(&x);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::NonFiniteStart);
    }
    let threshold = match config.stopping {
        StoppingRule::RelativeInf => config.grad_tol * g.amax().max(1.0),
        StoppingRule::AbsoluteTwoNorm => config.grad_tol,
    };
    let converged = |g: &DVector<f64>| match config.stopping {
        StoppingRule::RelativeInf => g.amax() <= threshold,
        StoppingRule::AbsoluteTwoNorm => g.norm() <= threshold,
    };

    let mut report = SolverReport {
        iters: 0,
        funcs: 1,
        aggs: 0,
        fallbacks: 0,
        restarts: 0,
        status: SolverStatus::IterLimit,
        x: x.clone(),
        f,
        grad_inf: g.amax(),
        grad_norm: g.norm(),
        trace: Vec::new(),
    };
    if converged(&g) {
        report.status = SolverStatus::Converged;
        return Ok(report);
    }

    for k in 0..config.max_iters {
        let mut d = direction(&memory, &g, config.scaled_initial);
        if !(g.dot(&d) < 0.0) || d.iter().any(|v| !v.is_finite()) {
            memory = Memory::new(config, n);
            report.restarts += 1;
            d = -config.initial_matrix.apply(&g);
        }
        let (alpha, f_new, g_new) = match hessian {
            Some(a) => {
                let alpha = exact_quadratic_step(|v: &DVector<f64>| a * v, &g, &d)?;
                let (f_new, g_new) = problem.eval(&(&x + &d * alpha));
                report.funcs += 1;
                (alpha, f_new, g_new)
            }
            None => {
                let ls = weak_wolfe_search(problem, &x, f, &g, &d, &config.wolfe)?;
                report.funcs += ls.func_evals;
                if !ls.is_satisfied() {
                    report.status = SolverStatus::LineSearchFailure;
                    break;
                }
                (ls.alpha, ls.f_new, ls.g_new)
            }
        };
        let s = &d * alpha;
        let y = &g_new - &g;
        x += &s;
        f = f_new;
        g = g_new;
        report.iters = k + 1;

        let edit = match CurvaturePair::new(s.clone(), y.clone()) {
            Ok(pair) => {
                let edit = update_memory(&mut memory, pair, config)?;
                match edit {
                    MemoryEdit::Aggregated { .. } => report.aggs += 1,
                    MemoryEdit::Fallback { .. } => report.fallbacks += 1,
                    _ => {}
                }
                Some(edit)
            }
            Err(_) => None,
        };
        if config.record_trace {
            report.trace.push(IterationRecord {
                k: k + 1,
                f,
                grad_inf: g.amax(),
                alpha,
                d,
                s,
                y,
                pairs_stored: memory.pairs().len(),
                edit,
            });
        }
        if converged(&g) {
            report.status = SolverStatus::Converged;
            break;
        }
    }
    report.x = x;
    report.f = f;
    report.grad_inf = g.amax();
    report.grad_norm = g.norm();
    Ok(report)
}
