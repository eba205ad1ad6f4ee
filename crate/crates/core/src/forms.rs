//! The BFGS inverse Hessian in its three computational forms.
//!
//! * [`bfgs_iterative`] applies one rank-two update per pair,
//!   `W ← (I − ρ s yᵀ) W (I − ρ y sᵀ) + ρ s sᵀ`.
//! * [`bfgs_compact`] assembles the same matrix in one shot from `R`, `D`
//!   and `YᵀWY`.
//! * [`two_loop_apply`] multiplies by the matrix without forming it.
//!
//! [`direct_apply`] multiplies by the *inverse* of that matrix (the direct
//! Hessian approximation) through its own compact representation.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::{tri_solve, DenseMatrix, LinalgError, TriSide};
use crate::pairs::CurvaturePair;

/// Dense BFGS matrices are only materialized up to this dimension.
pub const DENSE_DIM_LIMIT: usize = 256;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FormsError {
    #[error("dense evaluation requested for n = {0}, above the limit {DENSE_DIM_LIMIT}")]
    DimensionTooLarge(usize),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid initial matrix: {0}")]
    InvalidInitial(String),
    #[error("compact middle matrix is singular")]
    SingularMiddle,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// The initial inverse Hessian approximation `W ≻ 0`.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialMatrix {
    /// `γ I` with `γ > 0`.
    ScaledIdentity(f64),
    /// `diag(d)` with every `d_i > 0`.
    Diagonal(DVector<f64>),
}

impl Default for InitialMatrix {
    fn default() -> Self {
        InitialMatrix::ScaledIdentity(1.0)
    }
}

impl InitialMatrix {
    pub fn identity() -> Self {
        InitialMatrix::ScaledIdentity(1.0)
    }

    pub fn scaled(gamma: f64) -> Result<Self, FormsError> {
        if gamma > 0.0 && gamma.is_finite() {
            Ok(InitialMatrix::ScaledIdentity(gamma))
        } else {
            Err(FormsError::InvalidInitial(format!("scale {gamma} must be positive")))
        }
    }

    pub fn diagonal(d: DVector<f64>) -> Result<Self, FormsError> {
        if d.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(InitialMatrix::Diagonal(d))
        } else {
            Err(FormsError::InvalidInitial("diagonal entries must be positive".into()))
        }
    }

    fn check_dim(&self, n: usize) -> Result<(), FormsError> {
        match self {
            InitialMatrix::Diagonal(d) if d.len() != n => Err(FormsError::DimensionMismatch {
                expected: d.len(),
                actual: n,
            }),
            _ => Ok(()),
        }
    }

    /// `W v`.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            InitialMatrix::ScaledIdentity(g) => v * *g,
            InitialMatrix::Diagonal(d) => v.component_mul(d),
        }
    }

    /// `W⁻¹ v`.
    pub fn apply_inverse(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            InitialMatrix::ScaledIdentity(g) => v / *g,
            InitialMatrix::Diagonal(d) => v.component_div(d),
        }
    }

    pub fn apply_inverse_matrix(&self, v: &DenseMatrix) -> DenseMatrix {
        match self {
            InitialMatrix::ScaledIdentity(g) => v / *g,
            InitialMatrix::Diagonal(d) => {
                let mut out = v.clone();
                for (i, mut row) in out.row_iter_mut().enumerate() {
                    row /= d[i];
                }
                out
            }
        }
    }

    /// `W^{−1/2} v` applied to every column.
    pub fn apply_inverse_sqrt_matrix(&self, v: &DenseMatrix) -> DenseMatrix {
        match self {
            InitialMatrix::ScaledIdentity(g) => v / g.sqrt(),
            InitialMatrix::Diagonal(d) => {
                let mut out = v.clone();
                for (i, mut row) in out.row_iter_mut().enumerate() {
                    row /= d[i].sqrt();
                }
                out
            }
        }
    }

    pub fn dense(&self, n: usize) -> DenseMatrix {
        match self {
            InitialMatrix::ScaledIdentity(g) => DenseMatrix::identity(n, n) * *g,
            InitialMatrix::Diagonal(d) => DenseMatrix::from_diagonal(d),
        }
    }
}

/// Compact-form ingredients: `R` (upper triangle of `SᵀY`), `D` and `YᵀWY`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompactFactors {
    pub r: DenseMatrix,
    pub d: DVector<f64>,
    pub ywy: DenseMatrix,
}

fn stack(pairs: &[CurvaturePair], n: usize) -> Result<(DenseMatrix, DenseMatrix), FormsError> {
    let m = pairs.len();
    let mut s = DenseMatrix::zeros(n, m);
    let mut y = DenseMatrix::zeros(n, m);
    for (j, p) in pairs.iter().enumerate() {
        if p.dim() != n {
            return Err(FormsError::DimensionMismatch {
                expected: n,
                actual: p.dim(),
            });
        }
        s.set_column(j, p.s());
        y.set_column(j, p.y());
    }
    Ok((s, y))
}

pub fn compact_factors(w: &InitialMatrix, pairs: &[CurvaturePair], n: usize) -> Result<CompactFactors, FormsError> {
    w.check_dim(n)?;
    let (s, y) = stack(pairs, n)?;
    let sy = s.transpose() * &y;
    let m = pairs.len();
    let r = DenseMatrix::from_fn(m, m, |i, j| if i <= j { sy[(i, j)] } else { 0.0 });
    let d = DVector::from_fn(m, |i, _| sy[(i, i)]);
    let mut wy = y.clone();
    for j in 0..m {
        let col = w.apply(&y.column(j).into_owned());
        wy.set_column(j, &col);
    }
    let ywy = y.transpose() * wy;
    Ok(CompactFactors { r, d, ywy })
}

/// Iterative construction, one rank-two update per pair (oldest first).
pub fn bfgs_iterative(w: &InitialMatrix, pairs: &[CurvaturePair], n: usize) -> Result<DenseMatrix, FormsError> {
    if n > DENSE_DIM_LIMIT {
        return Err(FormsError::DimensionTooLarge(n));
    }
    w.check_dim(n)?;
    let mut wbar = w.dense(n);
    for p in pairs {
        if p.dim() != n {
            return Err(FormsError::DimensionMismatch {
                expected: n,
                actual: p.dim(),
            });
        }
        let (s, y, rho) = (p.s(), p.y(), p.rho());
        let wy = &wbar * y;
        let ywy = y.dot(&wy);
        // UᵀWU + V expanded: W − ρ(Wy sᵀ + s yᵀW) + (ρ² yᵀWy + ρ) s sᵀ
        let coef = rho * rho * ywy + rho;
        for c in 0..n {
            for r in 0..n {
                wbar[(r, c)] += -rho * (wy[r] * s[c] + s[r] * wy[c]) + coef * s[r] * s[c];
            }
        }
    }
    Ok(wbar)
}

/// Compact construction `W + [S WY] M [Sᵀ; YᵀW]`.
pub fn bfgs_compact(w: &InitialMatrix, pairs: &[CurvaturePair], n: usize) -> Result<DenseMatrix, FormsError> {
    if n > DENSE_DIM_LIMIT {
        return Err(FormsError::DimensionTooLarge(n));
    }
    let m = pairs.len();
    let mut wbar = w.dense(n);
    if m == 0 {
        return Ok(wbar);
    }
    let cf = compact_factors(w, pairs, n)?;
    let (s, y) = stack(pairs, n)?;
    // X = R⁻¹ Sᵀ, so S R⁻ᵀ = Xᵀ.
    let mut x = DenseMatrix::zeros(m, n);
    let st = s.transpose();
    for c in 0..n {
        let col = tri_solve(&cf.r, &st.column(c).into_owned(), TriSide::Backward)?;
        x.set_column(c, &col);
    }
    let mut wy = y.clone();
    for j in 0..m {
        let col = w.apply(&y.column(j).into_owned());
        wy.set_column(j, &col);
    }
    let middle = DenseMatrix::from_diagonal(&cf.d) + &cf.ywy;
    let cross = &wy * &x;
    wbar += x.transpose() * middle * &x - &cross - cross.transpose();
    Ok(wbar)
}

/// `W̄ g` by the two-loop recursion, O(mn).
pub fn two_loop_apply(w: &InitialMatrix, pairs: &[CurvaturePair], g: &DVector<f64>) -> DVector<f64> {
    let m = pairs.len();
    let mut alpha = vec![0.0; m];
    let mut q = g.clone();
    for i in (0..m).rev() {
        let p = &pairs[i];
        alpha[i] = p.rho() * p.s().dot(&q);
        q.axpy(-alpha[i], p.y(), 1.0);
    }
    let mut r = w.apply(&q);
    for (i, p) in pairs.iter().enumerate() {
        let beta = p.rho() * p.y().dot(&r);
        r.axpy(alpha[i] - beta, p.s(), 1.0);
    }
    r
}

/// `W̄⁻¹ V` using the compact representation of the direct BFGS matrix,
/// `B = B₀ − [B₀S Y] [[SᵀB₀S, L], [Lᵀ, −D]]⁻¹ [SᵀB₀; Yᵀ]` with `B₀ = W⁻¹`.
pub fn direct_apply(w: &InitialMatrix, pairs: &[CurvaturePair], v: &DenseMatrix) -> Result<DenseMatrix, FormsError> {
    let n = v.nrows();
    w.check_dim(n)?;
    let b0v = w.apply_inverse_matrix(v);
    let m = pairs.len();
    if m == 0 {
        return Ok(b0v);
    }
    let (s, y) = stack(pairs, n)?;
    let b0s = w.apply_inverse_matrix(&s);
    let sb0s = s.transpose() * &b0s;
    let sy = s.transpose() * &y;
    let mut mid = DMatrix::zeros(2 * m, 2 * m);
    mid.view_mut((0, 0), (m, m)).copy_from(&sb0s);
    for i in 0..m {
        for j in 0..i {
            mid[(i, m + j)] = sy[(i, j)];
            mid[(m + j, i)] = sy[(i, j)];
        }
        mid[(m + i, m + i)] = -sy[(i, i)];
    }
    // [SᵀB₀V; YᵀV]
    let mut rhs = DMatrix::zeros(2 * m, v.ncols());
    rhs.view_mut((0, 0), (m, v.ncols())).copy_from(&(b0s.transpose() * v));
    rhs.view_mut((m, 0), (m, v.ncols())).copy_from(&(y.transpose() * v));
    let sol = mid.lu().solve(&rhs).ok_or(FormsError::SingularMiddle)?;
    let top = sol.rows(0, m).into_owned();
    let bottom = sol.rows(m, m).into_owned();
    Ok(b0v - b0s * top - y * bottom)
}

/// An initial matrix together with an ordered pair list (oldest first).
#[derive(Debug, Clone, PartialEq)]
pub struct InverseHessianModel {
    pub initial: InitialMatrix,
    pub pairs: Vec<CurvaturePair>,
}

impl InverseHessianModel {
    pub fn new(initial: InitialMatrix, pairs: Vec<CurvaturePair>) -> Self {
        InverseHessianModel { initial, pairs }
    }

    /// Dense matrix via the compact form. Aggregated pairs can have
    /// `‖ỹ‖ ≫ ‖y‖` with tiny `sᵀỹ/(‖s‖‖ỹ‖)`, where the recursive product
    /// loses digits to cancellation; the compact form does not.
    pub fn dense(&self, n: usize) -> Result<DenseMatrix, FormsError> {
        bfgs_compact(&self.initial, &self.pairs, n)
    }

    pub fn apply(&self, g: &DVector<f64>) -> DVector<f64> {
        two_loop_apply(&self.initial, &self.pairs, g)
    }

    pub fn apply_direct(&self, v: &DenseMatrix) -> Result<DenseMatrix, FormsError> {
        direct_apply(&self.initial, &self.pairs, v)
    }
}
