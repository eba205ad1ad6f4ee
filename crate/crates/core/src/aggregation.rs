//! Displacement aggregation: given a pair whose iterate displacement lies in
//! the span of later ones, compute modified gradient displacements for the
//! later pairs so that dropping the dependent pair leaves the BFGS matrix
//! unchanged.
//!
//! Notation follows the construction in the module tests: the dependent pair
//! is `(s₀, y₀)` with `s₀ = Sτ`, the retained pairs are `(S, Y)` with `m`
//! columns, and the aggregated displacements have the form
//! `Ỹ = W⁻¹S [A 0] + y₀ [b; 0]ᵀ + Y`.

use nalgebra::DVector;
use thiserror::Error;

use crate::forms::{FormsError, InverseHessianModel};
use crate::linalg::{
    cholesky_factor, max_abs, pivoted_rank_selection, psd_sqrt_factor, qr_null_basis, CholeskyFactor, DenseMatrix, LinalgError,
};
use crate::pairs::{CurvaturePair, PairError};

/// Relative tolerance of the precondition `s₀ = Sτ`.
pub const DEPENDENCE_TOL: f64 = 1e-8;

/// Relative tolerance of the parallel-skip precondition.
pub const PARALLEL_TOL: f64 = 1e-10;

/// Negative discriminants above `−DISCRIMINANT_CLAMP · scale` are treated as zero.
pub const DISCRIMINANT_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AggregationError {
    #[error("displacement is not parallel to its successor (relative residual {0:e})")]
    NotParallel(f64),
    #[error("dependent displacement is not in the span of the retained ones (relative residual {0:e})")]
    DependenceViolation(f64),
    #[error("no real root for column {column}: discriminant {discriminant:e}")]
    ConstructionFailure { column: usize, discriminant: f64 },
    #[error("no retained pairs")]
    EmptyRetained,
    #[error("pair index {index} out of range for {len} pairs")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error(transparent)]
    Forms(#[from] FormsError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Pair(#[from] PairError),
}

/// Drops pair `j` when `s_j = τ s_{j+1}`; the later update overwrites it.
pub fn skip_parallel(pairs: &[CurvaturePair], j: usize, tau: f64) -> Result<Vec<CurvaturePair>, AggregationError> {
    if j + 1 >= pairs.len() {
        return Err(AggregationError::IndexOutOfRange { index: j, len: pairs.len() });
    }
    let sj = pairs[j].s();
    let resid = (sj - pairs[j + 1].s() * tau).norm();
    let rel = resid / sj.norm();
    if tau == 0.0 || rel > PARALLEL_TOL {
        return Err(AggregationError::NotParallel(rel));
    }
    let mut out = pairs.to_vec();
    out.remove(j);
    Ok(out)
}

/// `b = −ρ₀ (SᵀY − R)ᵀ τ` restricted to its first `m − 1` entries, where
/// `R` is the upper triangle of `SᵀY` (only the strictly lower part of
/// `sty` is read).
pub fn compute_b(sty: &DenseMatrix, tau: &DVector<f64>, rho0: f64) -> DVector<f64> {
    let m = tau.len();
    DVector::from_fn(m.saturating_sub(1), |l, _| {
        let acc: f64 = ((l + 1)..m).map(|i| sty[(i, l)] * tau[i]).sum();
        -rho0 * acc
    })
}

/// Diagnostics of one column step of the reverse recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnStep {
    /// Zero-based column index (the proof's `ℓ − 1`).
    pub column: usize,
    /// Rank `c` of the previously built columns `[ψ …]`.
    pub rank: usize,
    /// Coefficients `β_ℓ` over the selected independent columns (empty if `c = 0`).
    pub beta: DVector<f64>,
    /// Selected independent columns `t₁ … t_c` (zero-based).
    pub selected: Vec<usize>,
    /// Orthonormal basis of the directions `ā` (trailing rows only) with
    /// `ψᵀQ⁻¹[0; ā] = 0`; `ā_{ℓ,2}` is its first column. Empty for the base
    /// column.
    pub null_basis: DenseMatrix,
    /// Null direction `ā_{ℓ,2}`.
    pub a_bar: DVector<f64>,
    /// Particular solution `a*_{ℓ,2}`.
    pub a_star: DVector<f64>,
    pub lambda: f64,
    pub discriminant: f64,
}

/// Every intermediate quantity of the construction.
#[derive(Debug, Clone)]
pub struct AggregationWorkspace {
    pub m: usize,
    pub tau: DVector<f64>,
    pub rho0: f64,
    /// `1 + ρ₀ y₀ᵀWy₀`.
    pub chi0: f64,
    /// `SᵀY`, `m × m`.
    pub sty: DenseMatrix,
    /// `Sᵀy₀`.
    pub sty0: DVector<f64>,
    /// `W⁻¹S`, `n × m`.
    pub winv_s: DenseMatrix,
    /// `Q = SᵀW⁻¹S`.
    pub q: DenseMatrix,
    /// `L` with `LLᵀ = Q`.
    pub q_factor: CholeskyFactor,
    /// `W^{−1/2}Q_S` from the thin QR `W^{−1/2}S = Q_S Lᵀ`, so that
    /// `W⁻¹SQ⁻¹ = W^{−1/2}Q_S L⁻¹` without squaring the conditioning of `S`.
    /// Only available when the context has no pairs.
    pub orth: Option<DenseMatrix>,
    /// Upper part of `SᵀY` without its last column, `m × (m − 1)`.
    pub p: DenseMatrix,
    /// Same truncation of `SᵀỸ`, filled after assembly.
    pub p_tilde: DenseMatrix,
    pub b: DVector<f64>,
    /// `Ω = Sᵀy₀bᵀ + SᵀY_{:,1:m−1} − P`.
    pub omega_mat: DenseMatrix,
    /// `ω = b / √ρ₀`.
    pub omega_vec: DVector<f64>,
    /// `G = ωωᵀ + ΩᵀQ⁻¹Ω`.
    pub gram: DenseMatrix,
    /// `Z` with `ZᵀZ = G`; columns are `z_ℓ`.
    pub z: DenseMatrix,
    /// Columns `u_ℓ = [0; a_{ℓ,2} + S_{ℓ+1:m}ᵀ(b_ℓy₀ + y_ℓ)]` (the proof's `L⁻¹φ_ℓ`).
    pub u: DenseMatrix,
    /// `A`, `m × (m − 1)`.
    pub a: DenseMatrix,
    /// `QA`, the stacked right-hand sides `[−b_ℓ S_{1:ℓ}ᵀy₀; u_ℓ − shift]`.
    pub qa: DenseMatrix,
    pub steps: Vec<ColumnStep>,
}

impl AggregationWorkspace {
    /// Builds every quantity that precedes the reverse recursion.
    ///
    /// Without context pairs the factor of `Q` comes from a Householder QR
    /// of `W^{−1/2}S`; otherwise `q_factor` may supply a maintained Cholesky
    /// factor of `Q`, and one is computed from `SᵀW⁻¹S` when it does not.
    pub fn prepare(
        context: &InverseHessianModel,
        retained: &[CurvaturePair],
        dependent: &CurvaturePair,
        tau: &DVector<f64>,
        q_factor: Option<&CholeskyFactor>,
    ) -> Result<Self, AggregationError> {
        let m = retained.len();
        if m == 0 {
            return Err(AggregationError::EmptyRetained);
        }
        if tau.len() != m {
            return Err(AggregationError::DimensionMismatch { expected: m, actual: tau.len() });
        }
        let n = dependent.dim();
        for p in retained {
            if p.dim() != n {
                return Err(AggregationError::DimensionMismatch { expected: n, actual: p.dim() });
            }
        }
        let s = DenseMatrix::from_fn(n, m, |r, c| retained[c].s()[r]);
        let y = DenseMatrix::from_fn(n, m, |r, c| retained[c].y()[r]);
        let rel = (dependent.s() - &s * tau).norm() / dependent.s().norm();
        if !(rel <= DEPENDENCE_TOL) {
            return Err(AggregationError::DependenceViolation(rel));
        }

        let y0 = dependent.y();
        let rho0 = dependent.rho();
        let chi0 = 1.0 + rho0 * y0.dot(&context.apply(y0));
        let sty = s.transpose() * &y;
        let sty0 = s.transpose() * y0;
        let winv_s = if context.pairs.is_empty() {
            context.initial.apply_inverse_matrix(&s)
        } else {
            context.apply_direct(&s)?
        };
        let mut q = s.transpose() * &winv_s;
        q = (&q + q.transpose()) * 0.5;
        let (q_factor, orth) = if context.pairs.is_empty() {
            let (factor, qs) = qr_lower_factor(context.initial.apply_inverse_sqrt_matrix(&s))?;
            (factor, Some(context.initial.apply_inverse_sqrt_matrix(&qs)))
        } else {
            match q_factor {
                Some(f) if f.order() == m => (f.clone(), None),
                _ => (cholesky_factor(&q)?, None),
            }
        };

        let k = m - 1;
        let p = DenseMatrix::from_fn(m, k, |i, l| if i <= l { sty[(i, l)] } else { 0.0 });
        let b = compute_b(&sty, tau, rho0);
        let omega_mat =
            DenseMatrix::from_fn(m, k, |i, l| sty0[i] * b[l] + if i > l { sty[(i, l)] } else { 0.0 });
        let omega_vec = &b / rho0.sqrt();
        let half = q_factor.half_solve_matrix(&omega_mat);
        let mut gram = &omega_vec * omega_vec.transpose() + half.transpose() * half;
        gram = (&gram + gram.transpose()) * 0.5;
        let z = psd_sqrt_factor(&gram)?.factor;

        Ok(AggregationWorkspace {
            m,
            tau: tau.clone(),
            rho0,
            chi0,
            sty,
            sty0,
            winv_s,
            q,
            q_factor,
            orth,
            p,
            p_tilde: DenseMatrix::zeros(m, k),
            b,
            omega_mat,
            omega_vec,
            gram,
            z,
            u: DenseMatrix::zeros(m, k),
            a: DenseMatrix::zeros(m, k),
            qa: DenseMatrix::zeros(m, k),
            steps: Vec::new(),
        })
    }

    /// `S_{ℓ+1:m}ᵀ(b_ℓ y₀ + y_ℓ)` for zero-based column `c`, padded with
    /// zeros in rows `0..=c`.
    fn shift(&self, c: usize) -> DVector<f64> {
        DVector::from_fn(self.m, |i, _| {
            if i > c {
                self.b[c] * self.sty0[i] + self.sty[(i, c)]
            } else {
                0.0
            }
        })
    }

    /// `xᵀQ⁻¹y`.
    fn qinv_inner(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        self.q_factor.half_solve(x).dot(&self.q_factor.half_solve(y))
    }

    /// Inverse of `L = Θ⁻¹` where `Q = ΘΘᵀ`, i.e. `LᵀL = Q⁻¹`.
    pub fn l_factor(&self) -> DenseMatrix {
        self.q_factor.half_solve_matrix(&DenseMatrix::identity(self.m, self.m))
    }
}

/// Thin QR `V = Q_V R` with `diag(R) > 0`; returns the factor `L = Rᵀ` of
/// `VᵀV` and `Q_V`.
fn qr_lower_factor(v: DenseMatrix) -> Result<(CholeskyFactor, DenseMatrix), AggregationError> {
    let (n, m) = v.shape();
    if m > n {
        return Err(AggregationError::Linalg(crate::linalg::LinalgError::NotPositiveDefinite { index: n, pivot: 0.0 }));
    }
    let qr = v.qr();
    let mut r = qr.r();
    let mut q = qr.q();
    for k in 0..m {
        if r[(k, k)] < 0.0 {
            r.row_mut(k).neg_mut();
            q.column_mut(k).neg_mut();
        }
    }
    Ok((CholeskyFactor::from_lower(r.transpose())?, q))
}

/// Picks the smaller-magnitude real root of `a λ² + 2p λ + c = 0`; ties
/// (`p = 0`) take the nonnegative root.
fn smaller_root(a: f64, p: f64, c: f64, column: usize) -> Result<(f64, f64), AggregationError> {
    let disc = p * p - a * c;
    let scale = p * p + (a * c).abs();
    let disc = if disc < 0.0 {
        if disc < -DISCRIMINANT_CLAMP * scale {
            return Err(AggregationError::ConstructionFailure { column, discriminant: disc });
        }
        0.0
    } else {
        disc
    };
    let root = disc.sqrt();
    if p == 0.0 {
        return Ok((root / a, disc));
    }
    // q = −(p + sign(p)√disc): roots q/a (larger) and c/q (smaller).
    let q = -(p + p.signum() * root);
    let lam = if q != 0.0 { c / q } else { 0.0 };
    Ok((lam, disc))
}

/// Fills `A` column by column in reverse order.
pub fn compute_a(ws: &mut AggregationWorkspace) -> Result<DenseMatrix, AggregationError> {
    let m = ws.m;
    if m < 2 {
        return Ok(DenseMatrix::zeros(m, 0));
    }
    ws.steps.clear();
    // L⁻¹u and Q⁻¹u of the columns built so far.
    let mut half_u = DenseMatrix::zeros(m, m - 1);
    let mut qinv_u = DenseMatrix::zeros(m, m - 1);
    for c in (0..m - 1).rev() {
        // Columns u_{c+1 … m−2} have zeros in rows 0..=c+1.
        let later = m - 2 - c;
        let psi = ws.u.columns(c + 1, later).into_owned();
        let z_c = ws.z.column(c).into_owned();
        let target = z_c.norm_squared();

        let (u_star, rank, beta, selected) = if later == 0 {
            (DVector::zeros(m), 0, DVector::zeros(0), Vec::new())
        } else {
            let (perm, rank) = pivoted_rank_selection(&psi);
            let selected: Vec<usize> = perm[..rank].iter().map(|&t| c + 1 + t).collect();
            if rank == 0 {
                (DVector::zeros(m), 0, DVector::zeros(0), selected)
            } else {
                let ut = DenseMatrix::from_fn(m, rank, |i, k| ws.u[(i, selected[k])]);
                let half = DenseMatrix::from_fn(m, rank, |i, k| half_u[(i, selected[k])]);
                let mut mt = half.transpose() * &half;
                mt = (&mt + mt.transpose()) * 0.5;
                let rhs = DVector::from_fn(rank, |k, _| ws.z.column(selected[k]).dot(&z_c));
                let beta = match cholesky_factor(&mt) {
                    Ok(f) => f.solve(&rhs),
                    Err(_) => mt.clone().lu().solve(&rhs).ok_or(AggregationError::ConstructionFailure {
                        column: c,
                        discriminant: f64::NAN,
                    })?,
                };
                (&ut * &beta, rank, beta, selected)
            }
        };

        // Null direction: w = [0_{c+1}; ā] with ψᵀQ⁻¹w = 0.
        let (null_basis, w) = if later == 0 {
            let mut w = DVector::zeros(m);
            w[m - 1] = 1.0;
            (DenseMatrix::zeros(m - 1 - c, 0), w)
        } else {
            // Only the trailing rows of w are free, so the orthogonality
            // conditions act through the trailing rows of Q⁻¹ψ.
            let tail = qinv_u.view((c + 1, c + 1), (m - 1 - c, later)).into_owned();
            let nb = qr_null_basis(&tail);
            let mut w = DVector::zeros(m);
            w.rows_mut(c + 1, m - 1 - c).copy_from(&nb.column(0));
            (nb, w)
        };

        let qinv_w_w = ws.qinv_inner(&w, &w);
        let p = ws.qinv_inner(&w, &u_star);
        let cst = ws.qinv_inner(&u_star, &u_star) - target;
        let (lambda, discriminant) = smaller_root(qinv_w_w, p, cst, c)?;
        let u_col = &u_star + &w * lambda;
        ws.u.set_column(c, &u_col);
        half_u.set_column(c, &ws.q_factor.half_solve(&u_col));
        qinv_u.set_column(c, &ws.q_factor.solve(&u_col));

        let shift = ws.shift(c);
        let a_star = (&u_star - &shift).rows(c + 1, m - 1 - c).into_owned();
        // [a_{ℓ,1}; a_{ℓ,2}] = [−b_ℓ S_{1:ℓ}ᵀy₀; u_ℓ − shift]
        let mut stacked = &u_col - &shift;
        for i in 0..=c {
            stacked[i] = -ws.b[c] * ws.sty0[i];
        }
        let a_col = ws.q_factor.solve(&stacked);
        ws.qa.set_column(c, &stacked);
        ws.a.set_column(c, &a_col);
        ws.steps.push(ColumnStep {
            column: c,
            rank,
            beta,
            selected,
            null_basis,
            a_bar: w.rows(c + 1, m - 1 - c).into_owned(),
            a_star,
            lambda,
            discriminant,
        });
    }
    Ok(ws.a.clone())
}

/// Output of [`aggregate`].
#[derive(Debug, Clone)]
pub struct AggregationResult {
    /// Aggregated gradient displacements for the retained pairs, in order.
    pub y_tilde: Vec<DVector<f64>>,
    /// Index of the removed pair within the full list it came from (set by the caller's context).
    pub removed_index: usize,
    /// Intermediate quantities (`None` when no construction was needed).
    pub workspace: Option<AggregationWorkspace>,
}

impl AggregationResult {
    /// Retained pairs with their gradient displacements replaced.
    pub fn apply_to(&self, retained: &[CurvaturePair]) -> Result<Vec<CurvaturePair>, AggregationError> {
        retained
            .iter()
            .zip(&self.y_tilde)
            .map(|(p, y)| p.with_y(y.clone()).map_err(AggregationError::from))
            .collect()
    }
}

/// Aggregates the dependent pair into the retained ones.
///
/// `context` holds the initial matrix and the pairs that precede the
/// dependent one; `retained` are the pairs that follow it (oldest first, the
/// newest last). `tau` satisfies `s_dep = [retained s] τ`.
pub fn aggregate(
    context: &InverseHessianModel,
    retained: &[CurvaturePair],
    dependent: &CurvaturePair,
    tau: &DVector<f64>,
    q_factor: Option<&CholeskyFactor>,
) -> Result<AggregationResult, AggregationError> {
    let removed_index = context.pairs.len();
    let m = retained.len();
    if m == 0 {
        return Err(AggregationError::EmptyRetained);
    }
    if m == 1 {
        if tau.len() != 1 {
            return Err(AggregationError::DimensionMismatch { expected: 1, actual: tau.len() });
        }
        let mut both = vec![dependent.clone(), retained[0].clone()];
        both = skip_parallel(&both, 0, tau[0])?;
        return Ok(AggregationResult {
            y_tilde: vec![both[0].y().clone()],
            removed_index,
            workspace: None,
        });
    }
    let mut ws = AggregationWorkspace::prepare(context, retained, dependent, tau, q_factor)?;
    compute_a(&mut ws)?;
    let y0 = dependent.y();
    let correction = match &ws.orth {
        Some(orth) => orth * ws.q_factor.half_solve_matrix(&ws.qa),
        None => &ws.winv_s * &ws.a,
    };
    let mut y_tilde = Vec::with_capacity(m);
    for c in 0..m - 1 {
        let mut delta = correction.column(c).into_owned();
        delta.axpy(ws.b[c], y0, 1.0);
        if let Some(orth) = &ws.orth {
            // The change must be orthogonal to s_0 … s_c; one projection
            // pass removes the rounding left by the large cancelling terms.
            let lead = DenseMatrix::from_fn(c + 1, c + 1, |i, j| ws.q_factor.lower()[(i, j)]);
            let r = DVector::from_fn(c + 1, |i, _| retained[i].s().dot(&delta));
            let z = lead.solve_lower_triangular(&r).expect("factor has a positive diagonal");
            delta -= orth.columns(0, c + 1) * z;
        }
        y_tilde.push(retained[c].y() + delta);
    }
    y_tilde.push(retained[m - 1].y().clone());
    for c in 0..m - 1 {
        for i in 0..=c {
            ws.p_tilde[(i, c)] = retained[i].s().dot(&y_tilde[c]);
        }
    }
    Ok(AggregationResult {
        y_tilde,
        removed_index,
        workspace: Some(ws),
    })
}

/// Relative residuals of the three key equations plus curvature preservation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyResiduals {
    /// `max |s_iᵀỹ_j − s_iᵀy_j|, i ≤ j`, relative to `max |R|`.
    pub triangular: f64,
    /// `b`-equation residual relative to `max(|b|, ρ₀ |(SᵀY − R)ᵀ τ|)`.
    pub b_equation: f64,
    /// Quadratic matrix equation residual relative to its largest term.
    pub quadratic: f64,
    /// `max_i |s_iᵀỹ_i − s_iᵀy_i| / s_iᵀy_i`.
    pub curvature: f64,
}

impl KeyResiduals {
    pub fn max_key(&self) -> f64 {
        self.triangular.max(self.b_equation).max(self.quadratic)
    }
}

/// Evaluates the key equations for an assembled `Ỹ` independently of the
/// construction (only `b` and `A` are taken from the workspace).
pub fn key_equation_residuals(
    context: &InverseHessianModel,
    retained: &[CurvaturePair],
    dependent: &CurvaturePair,
    tau: &DVector<f64>,
    result: &AggregationResult,
) -> KeyResiduals {
    let m = retained.len();
    let n = dependent.dim();
    let s = DenseMatrix::from_fn(n, m, |r, c| retained[c].s()[r]);
    let y = DenseMatrix::from_fn(n, m, |r, c| retained[c].y()[r]);
    let yt = DenseMatrix::from_fn(n, m, |r, c| result.y_tilde[c][r]);
    let sty = s.transpose() * &y;
    let styt = s.transpose() * &yt;

    let mut tri = 0.0_f64;
    let mut curv = 0.0_f64;
    for j in 0..m {
        for i in 0..=j {
            tri = tri.max((styt[(i, j)] - sty[(i, j)]).abs());
        }
        curv = curv.max((styt[(j, j)] - sty[(j, j)]).abs() / sty[(j, j)]);
    }
    let r_scale = sty.upper_triangle().abs().max().max(f64::MIN_POSITIVE);

    let Some(ws) = result.workspace.as_ref() else {
        return KeyResiduals {
            triangular: tri / r_scale,
            b_equation: 0.0,
            quadratic: 0.0,
            curvature: curv,
        };
    };
    let rho0 = dependent.rho();
    // Strictly lower part of SᵀY.
    let lower = DenseMatrix::from_fn(m, m, |i, j| if i > j { sty[(i, j)] } else { 0.0 });
    let full_b = -(lower.transpose() * tau) * rho0;
    let mut b_ext = DVector::zeros(m);
    b_ext.rows_mut(0, m - 1).copy_from(&ws.b);
    let b_res = (&b_ext - &full_b).abs().max();
    let b_scale = full_b.abs().max().max(b_ext.abs().max()).max(f64::MIN_POSITIVE);

    let mut a_ext = DenseMatrix::zeros(m, m);
    a_ext.columns_mut(0, m - 1).copy_from(&ws.a);
    let diff = &yt - &y;
    let w_diff = DenseMatrix::from_columns(
        &(0..m).map(|c| context.apply(&diff.column(c).into_owned())).collect::<Vec<_>>(),
    );
    let lhs = diff.transpose() * w_diff;
    let y0 = dependent.y();
    let chi0 = 1.0 + rho0 * y0.dot(&context.apply(y0));
    let term_b = &b_ext * b_ext.transpose() * (chi0 / rho0);
    let term_a = a_ext.transpose() * &lower;
    let rhs = &term_b - &term_a - term_a.transpose();
    let q_scale = max_abs(&lhs).max(max_abs(&term_b)).max(max_abs(&term_a)).max(f64::MIN_POSITIVE);
    KeyResiduals {
        triangular: tri / r_scale,
        b_equation: b_res / b_scale,
        quadratic: max_abs(&(lhs - rhs)) / q_scale,
        curvature: curv,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::{bfgs_iterative, InitialMatrix};
    use nalgebra::dvector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn randn(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
    }

    /// Pairs from a random SPD Hessian so every curvature is positive.
    fn instance(rng: &mut ChaCha8Rng, n: usize, m: usize) -> (Vec<CurvaturePair>, CurvaturePair, DVector<f64>) {
        let g = DenseMatrix::from_fn(n, n, |_, _| rng.sample(StandardNormal));
        let h = g.transpose() * &g + DenseMatrix::identity(n, n) * (n as f64);
        let pairs: Vec<CurvaturePair> = (0..m)
            .map(|_| {
                let s = randn(rng, n);
                let y = &h * &s;
                CurvaturePair::new(s, y).unwrap()
            })
            .collect();
        loop {
            let tau = randn(rng, m);
            let s0 = DVector::from_fn(n, |r, _| (0..m).map(|c| pairs[c].s()[r] * tau[c]).sum());
            let y0 = &h * &s0;
            if let Ok(p0) = CurvaturePair::new(s0, y0) {
                return (pairs, p0, tau);
            }
        }
    }

    fn rel_max(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
        max_abs(&(a - b)) / max_abs(b)
    }

    #[test]
    fn b_examples() {
        assert_eq!(compute_b(&DenseMatrix::zeros(1, 1), &dvector![1.0], 1.0).len(), 0);
        let mut sty = DenseMatrix::from_row_slice(2, 2, &[1.0, 5.0, 0.0, 1.0]);
        assert_eq!(compute_b(&sty, &dvector![1.0, 1.0], 1.0)[0], 0.0);
        sty[(1, 0)] = 3.0;
        assert_eq!(compute_b(&sty, &dvector![1.0, 1.0], 1.0)[0], -3.0);
    }

    #[test]
    fn parallel_skip_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &tau in &[2.0, 1.0, -0.5] {
            let n = 3;
            let s2 = randn(&mut rng, n);
            let s1 = &s2 * tau;
            let y1 = &s1 * 1.5 + randn(&mut rng, n) * 0.1;
            let p1 = CurvaturePair::new(s1, y1).unwrap();
            let p2 = CurvaturePair::new(s2.clone(), s2 * 2.0).unwrap();
            let pairs = vec![p1, p2];
            let reduced = skip_parallel(&pairs, 0, tau).unwrap();
            let w = InitialMatrix::identity();
            let full = bfgs_iterative(&w, &pairs, n).unwrap();
            let red = bfgs_iterative(&w, &reduced, n).unwrap();
            assert!(rel_max(&red, &full) <= 1e-12);
        }
    }

    #[test]
    fn parallel_skip_rejects_nonparallel() {
        let p1 = CurvaturePair::new(dvector![1.0, 0.0], dvector![1.0, 0.0]).unwrap();
        let p2 = CurvaturePair::new(dvector![0.0, 1.0], dvector![0.0, 1.0]).unwrap();
        assert!(matches!(skip_parallel(&[p1, p2], 0, 1.0), Err(AggregationError::NotParallel(_))));
    }

    #[test]
    fn small_instance_equivalence() {
        // n = 3, m = 2 with small integers.
        let p1 = CurvaturePair::new(dvector![1.0, 0.0, 0.0], dvector![2.0, 1.0, 0.0]).unwrap();
        let p2 = CurvaturePair::new(dvector![0.0, 1.0, 0.0], dvector![1.0, 3.0, 1.0]).unwrap();
        let p0 = CurvaturePair::new(dvector![1.0, 1.0, 0.0], dvector![3.0, 4.0, 1.0]).unwrap();
        let tau = dvector![1.0, 1.0];
        let ctx = InverseHessianModel::new(InitialMatrix::identity(), vec![]);
        let res = aggregate(&ctx, &[p1.clone(), p2.clone()], &p0, &tau, None).unwrap();
        assert_eq!(res.y_tilde[1], *p2.y());
        let ws = res.workspace.as_ref().unwrap();
        assert_eq!(ws.a.shape(), (2, 1));
        let w = InitialMatrix::identity();
        let full = bfgs_iterative(&w, &[p0, p1.clone(), p2.clone()], 3).unwrap();
        let red = bfgs_iterative(&w, &res.apply_to(&[p1, p2]).unwrap(), 3).unwrap();
        assert!(rel_max(&red, &full) <= 1e-10, "{}", rel_max(&red, &full));
    }

    #[test]
    fn random_instances_satisfy_key_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(n, m) in &[(8, 4), (8, 8), (16, 5), (16, 16), (32, 12)] {
            for _ in 0..10 {
                let (pairs, p0, tau) = instance(&mut rng, n, m);
                let w = InitialMatrix::diagonal(DVector::from_fn(n, |_, _| rng.random_range(0.5..2.0))).unwrap();
                let ctx = InverseHessianModel::new(w.clone(), vec![]);
                let res = aggregate(&ctx, &pairs, &p0, &tau, None).unwrap();
                let r = key_equation_residuals(&ctx, &pairs, &p0, &tau, &res);
                assert!(r.max_key() <= 1e-8, "n={n} m={m}: {r:?}");
                assert!(r.curvature <= 1e-12, "n={n} m={m}: {r:?}");
                let mut all = vec![p0.clone()];
                all.extend(pairs.iter().cloned());
                let full = bfgs_iterative(&w, &all, n).unwrap();
                let red = bfgs_iterative(&w, &res.apply_to(&pairs).unwrap(), n).unwrap();
                assert!(rel_max(&red, &full) <= 1e-8, "n={n} m={m}: {}", rel_max(&red, &full));
            }
        }
    }

    #[test]
    fn aggregation_with_prefix_context() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10;
        let (pairs, p0, tau) = instance(&mut rng, n, 5);
        let (prefix, _, _) = instance(&mut rng, n, 3);
        let w = InitialMatrix::identity();
        let ctx = InverseHessianModel::new(w.clone(), prefix.clone());
        let res = aggregate(&ctx, &pairs, &p0, &tau, None).unwrap();
        assert_eq!(res.removed_index, 3);
        let mut all = prefix.clone();
        all.push(p0);
        all.extend(pairs.iter().cloned());
        let mut reduced = prefix;
        reduced.extend(res.apply_to(&pairs).unwrap());
        let full = bfgs_iterative(&w, &all, n).unwrap();
        let red = bfgs_iterative(&w, &reduced, n).unwrap();
        assert!(rel_max(&red, &full) <= 1e-10, "{}", rel_max(&red, &full));
    }

    #[test]
    fn single_retained_pair_keeps_y() {
        let p1 = CurvaturePair::new(dvector![2.0, 0.0], dvector![1.0, 1.0]).unwrap();
        let p0 = CurvaturePair::new(dvector![4.0, 0.0], dvector![1.0, 0.0]).unwrap();
        let ctx = InverseHessianModel::new(InitialMatrix::identity(), vec![]);
        let res = aggregate(&ctx, &[p1.clone()], &p0, &dvector![2.0], None).unwrap();
        assert_eq!(res.y_tilde[0], *p1.y());
        assert!(res.workspace.is_none());
    }

    #[test]
    fn dependence_violation_detected() {
        let p1 = CurvaturePair::new(dvector![1.0, 0.0, 0.0], dvector![1.0, 0.0, 0.0]).unwrap();
        let p2 = CurvaturePair::new(dvector![0.0, 1.0, 0.0], dvector![0.0, 1.0, 0.0]).unwrap();
        let p0 = CurvaturePair::new(dvector![1.0, 1.0, 1.0], dvector![1.0, 1.0, 1.0]).unwrap();
        let ctx = InverseHessianModel::new(InitialMatrix::identity(), vec![]);
        assert!(matches!(
            aggregate(&ctx, &[p1, p2], &p0, &dvector![1.0, 1.0], None),
            Err(AggregationError::DependenceViolation(_))
        ));
    }

    #[test]
    fn roots() {
        let (l, _) = smaller_root(1.0, 0.0, -4.0, 0).unwrap();
        assert_eq!(l, 2.0);
        // λ² − 6λ + 5: roots 1 and 5.
        let (l, _) = smaller_root(1.0, -3.0, 5.0, 0).unwrap();
        assert!((l - 1.0).abs() < 1e-15);
        assert!(matches!(
            smaller_root(1.0, 0.0, 1.0, 0),
            Err(AggregationError::ConstructionFailure { .. })
        ));
    }
}
