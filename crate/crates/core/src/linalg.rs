//! Small dense linear-algebra kernel.
//!
//! Everything here works on `nalgebra::DMatrix<f64>` (column-major) and is
//! sized for the m×m matrices that appear in the aggregation bookkeeping:
//! Cholesky factors that can grow at the front or the back and shrink at any
//! position, triangular solves, a rank-revealing Householder QR used for null
//! spaces, and square-root factors of semidefinite matrices.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

/// Column-major dense matrix used throughout the crate.
pub type DenseMatrix = DMatrix<f64>;

/// A squared diagonal that drops below this fraction of its pre-downdate
/// value is treated as an exact zero.
pub const BREAKDOWN_REL_TOL: f64 = 1e-14;

/// Eigenvalues above `-PSD_CLAMP_REL * max|G|` are clamped to zero.
pub const PSD_CLAMP_REL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is not numerically positive definite (pivot {index} = {pivot:e})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("matrix is not positive semidefinite (eigenvalue {eigenvalue:e})")]
    NotPsd { eigenvalue: f64 },
    #[error("triangular matrix has a zero diagonal entry at {0}")]
    SingularTriangular(usize),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = G` and a positive diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    lower: DenseMatrix,
}

/// Result of prepending a vector to a factored Gram matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum DowndateOutcome {
    /// The augmented factor `[μ 0; δ Δ]`.
    Completed(CholeskyFactor),
    /// The downdate hit a zero diagonal at (1-based) position `index`.
    ///
    /// `partial` factors the Gram matrix of the new vector and the first
    /// `index - 1` old vectors; `cross` holds the last row of the augmented
    /// factor restricted to those columns.
    Breakdown {
        index: usize,
        partial: CholeskyFactor,
        cross: DVector<f64>,
    },
}

impl DowndateOutcome {
    pub fn is_completed(&self) -> bool {
        matches!(self, DowndateOutcome::Completed(_))
    }

    /// Coefficients `τ` with `Ξᵀ τ = ξ`, i.e. the dependent vector expressed in
    /// the vectors preceding it (new-first order). `None` when completed.
    pub fn dependence_coefficients(&self) -> Option<Result<DVector<f64>, LinalgError>> {
        match self {
            DowndateOutcome::Completed(_) => None,
            DowndateOutcome::Breakdown { partial, cross, .. } => {
                Some(tri_solve(partial.lower(), cross, TriSide::Transpose))
            }
        }
    }
}

/// Factor `Z` with `Zᵀ Z` equal to a symmetric positive semidefinite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdSquareRoot {
    pub factor: DenseMatrix,
}

/// Which triangular system [`tri_solve`] solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriSide {
    /// `T` lower triangular, solve `T x = b`.
    Forward,
    /// `T` upper triangular, solve `T x = b`.
    Backward,
    /// `T` lower triangular, solve `Tᵀ x = b`.
    Transpose,
}

pub fn max_abs(m: &DenseMatrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

impl CholeskyFactor {
    pub fn empty() -> Self {
        CholeskyFactor {
            lower: DenseMatrix::zeros(0, 0),
        }
    }

    /// Wraps an existing lower-triangular matrix after checking its shape and diagonal.
    pub fn from_lower(lower: DenseMatrix) -> Result<Self, LinalgError> {
        if lower.nrows() != lower.ncols() {
            return Err(LinalgError::InvalidInput("factor must be square".into()));
        }
        for k in 0..lower.nrows() {
            let d = lower[(k, k)];
            if !(d > 0.0) {
                return Err(LinalgError::NotPositiveDefinite { index: k, pivot: d });
            }
        }
        Ok(CholeskyFactor { lower })
    }

    pub fn order(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &DenseMatrix {
        &self.lower
    }

    pub fn into_lower(self) -> DenseMatrix {
        self.lower
    }

    /// `L Lᵀ`.
    pub fn reconstruct(&self) -> DenseMatrix {
        &self.lower * self.lower.transpose()
    }

    /// Leading `k × k` block, which factors the leading block of `G`.
    pub fn leading(&self, k: usize) -> CholeskyFactor {
        CholeskyFactor {
            lower: self.lower.view((0, 0), (k, k)).into_owned(),
        }
    }

    /// `L⁻¹ b`.
    pub fn half_solve(&self, b: &DVector<f64>) -> DVector<f64> {
        forward_unchecked(&self.lower, b)
    }

    /// `G⁻¹ b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let w = forward_unchecked(&self.lower, b);
        transpose_unchecked(&self.lower, &w)
    }

    /// `G⁻¹ B`, column by column.
    pub fn solve_matrix(&self, b: &DenseMatrix) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(b.nrows(), b.ncols());
        for j in 0..b.ncols() {
            let col = self.solve(&b.column(j).into_owned());
            out.set_column(j, &col);
        }
        out
    }

    /// `L⁻¹ B`, column by column.
    pub fn half_solve_matrix(&self, b: &DenseMatrix) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(b.nrows(), b.ncols());
        for j in 0..b.ncols() {
            let col = self.half_solve(&b.column(j).into_owned());
            out.set_column(j, &col);
        }
        out
    }

    /// Prepends a vector `v` to the factored Gram matrix of `[u_1 … u_k]`.
    ///
    /// `new_inner[0] = vᵀv` and `new_inner[1 + i] = vᵀu_{i+1}`. The trailing
    /// block of the augmented factor comes from a rank-one downdate of the old
    /// factor; a squared diagonal at or below [`BREAKDOWN_REL_TOL`] times its
    /// pre-downdate value stops the downdate and reports the breakdown.
    pub fn append_first(&self, new_inner: &[f64]) -> Result<DowndateOutcome, LinalgError> {
        let k = self.order();
        if new_inner.len() != k + 1 {
            return Err(LinalgError::DimensionMismatch {
                expected: k + 1,
                actual: new_inner.len(),
            });
        }
        if new_inner.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::InvalidInput("non-finite inner product".into()));
        }
        if !(new_inner[0] > 0.0) {
            return Err(LinalgError::InvalidInput("new vector has zero norm".into()));
        }
        let mu = new_inner[0].sqrt();
        let mut w: Vec<f64> = new_inner[1..].iter().map(|v| v / mu).collect();
        let delta = w.clone();
        let mut l = self.lower.clone();

        for c in 0..k {
            let lcc = l[(c, c)];
            let pre = lcc * lcc;
            let r2 = pre - w[c] * w[c];
            if r2 <= BREAKDOWN_REL_TOL * pre {
                // Leading block of the augmented factor: rows/cols 0..=c.
                let mut partial = DenseMatrix::zeros(c + 1, c + 1);
                partial[(0, 0)] = mu;
                for r in 0..c {
                    partial[(r + 1, 0)] = delta[r];
                    for q in 0..=r {
                        partial[(r + 1, q + 1)] = l[(r, q)];
                    }
                }
                let mut cross = DVector::zeros(c + 1);
                cross[0] = delta[c];
                for q in 0..c {
                    cross[q + 1] = l[(c, q)];
                }
                return Ok(DowndateOutcome::Breakdown {
                    index: c + 1,
                    partial: CholeskyFactor { lower: partial },
                    cross,
                });
            }
            let r = r2.sqrt();
            let cos = r / lcc;
            let sin = w[c] / lcc;
            l[(c, c)] = r;
            for i in (c + 1)..k {
                let lic = (l[(i, c)] - sin * w[i]) / cos;
                l[(i, c)] = lic;
                w[i] = cos * w[i] - sin * lic;
            }
        }

        let mut aug = DenseMatrix::zeros(k + 1, k + 1);
        aug[(0, 0)] = mu;
        for r in 0..k {
            aug[(r + 1, 0)] = delta[r];
            for q in 0..=r {
                aug[(r + 1, q + 1)] = l[(r, q)];
            }
        }
        Ok(DowndateOutcome::Completed(CholeskyFactor { lower: aug }))
    }

    /// Appends a vector at the end: `cross[i] = vᵀu_i`, `diag = vᵀv`.
    pub fn append_last(&mut self, cross: &DVector<f64>, diag: f64) -> Result<(), LinalgError> {
        let k = self.order();
        if cross.len() != k {
            return Err(LinalgError::DimensionMismatch {
                expected: k,
                actual: cross.len(),
            });
        }
        let row = forward_unchecked(&self.lower, cross);
        let d2 = diag - row.norm_squared();
        if !(d2 > BREAKDOWN_REL_TOL * diag.abs()) || !d2.is_finite() {
            return Err(LinalgError::NotPositiveDefinite { index: k, pivot: d2 });
        }
        let mut l = DenseMatrix::zeros(k + 1, k + 1);
        l.view_mut((0, 0), (k, k)).copy_from(&self.lower);
        for q in 0..k {
            l[(k, q)] = row[q];
        }
        l[(k, k)] = d2.sqrt();
        self.lower = l;
        Ok(())
    }

    /// Deletes row and column `p` of the factored matrix.
    pub fn remove(&mut self, p: usize) {
        let k = self.order();
        assert!(p < k, "remove index {p} out of range for order {k}");
        let tail = k - p - 1;
        let mut x: Vec<f64> = (0..tail).map(|i| self.lower[(p + 1 + i, p)]).collect();
        let mut l = DenseMatrix::zeros(k - 1, k - 1);
        // Rows above p are untouched; columns left of p only lose row p.
        for r in 0..(k - 1) {
            let src_r = if r < p { r } else { r + 1 };
            for c in 0..p.min(r + 1) {
                l[(r, c)] = self.lower[(src_r, c)];
            }
        }
        let mut block = DenseMatrix::zeros(tail, tail);
        for r in 0..tail {
            for c in 0..=r {
                block[(r, c)] = self.lower[(p + 1 + r, p + 1 + c)];
            }
        }
        rank_one_update(&mut block, &mut x);
        l.view_mut((p, p), (tail, tail)).copy_from(&block);
        self.lower = l;
    }

    /// Drops the last row/column; the leading block stays a valid factor.
    pub fn truncate_last(&mut self) {
        let k = self.order();
        assert!(k > 0);
        self.lower = self.leading(k - 1).lower;
    }
}

/// In-place `L L ᵀ + x xᵀ` update of a lower-triangular factor.
fn rank_one_update(l: &mut DenseMatrix, x: &mut [f64]) {
    let n = l.nrows();
    for k in 0..n {
        let lkk = l[(k, k)];
        let r = lkk.hypot(x[k]);
        let c = r / lkk;
        let s = x[k] / lkk;
        l[(k, k)] = r;
        for i in (k + 1)..n {
            let lik = (l[(i, k)] + s * x[i]) / c;
            l[(i, k)] = lik;
            x[i] = c * x[i] - s * lik;
        }
    }
}

/// Cholesky factorization of a symmetric positive definite matrix.
pub fn cholesky_factor(g: &DenseMatrix) -> Result<CholeskyFactor, LinalgError> {
    let n = g.nrows();
    if g.ncols() != n {
        return Err(LinalgError::InvalidInput("matrix must be square".into()));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::InvalidInput("non-finite entry".into()));
    }
    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = g[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > BREAKDOWN_REL_TOL * g[(j, j)].abs()) {
            return Err(LinalgError::NotPositiveDefinite { index: j, pivot: d });
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut v = g[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / djj;
        }
    }
    Ok(CholeskyFactor { lower: l })
}

/// Prepends a vector to a factored Gram matrix; see [`CholeskyFactor::append_first`].
pub fn chol_append(theta: &CholeskyFactor, new_inner: &[f64]) -> Result<DowndateOutcome, LinalgError> {
    theta.append_first(new_inner)
}

fn forward_unchecked(t: &DenseMatrix, b: &DVector<f64>) -> DVector<f64> {
    // Column-oriented so the inner loop walks contiguous storage.
    let n = b.len();
    let mut x = b.clone();
    for k in 0..n {
        let col = t.column(k);
        let xk = x[k] / col[k];
        x[k] = xk;
        for (xi, tik) in x.as_mut_slice()[k + 1..n].iter_mut().zip(&col.as_slice()[k + 1..n]) {
            *xi -= tik * xk;
        }
    }
    x
}

fn transpose_unchecked(t: &DenseMatrix, b: &DVector<f64>) -> DVector<f64> {
    let n = b.len();
    let mut x = b.clone();
    for i in (0..n).rev() {
        let mut v = x[i];
        for k in (i + 1)..n {
            v -= t[(k, i)] * x[k];
        }
        x[i] = v / t[(i, i)];
    }
    x
}

fn backward_unchecked(t: &DenseMatrix, b: &DVector<f64>) -> DVector<f64> {
    let n = b.len();
    let mut x = b.clone();
    for k in (0..n).rev() {
        let col = t.column(k);
        let xk = x[k] / col[k];
        x[k] = xk;
        for (xi, tik) in x.as_mut_slice()[..k].iter_mut().zip(&col.as_slice()[..k]) {
            *xi -= tik * xk;
        }
    }
    x
}

/// Solves a triangular system by substitution.
pub fn tri_solve(t: &DenseMatrix, rhs: &DVector<f64>, side: TriSide) -> Result<DVector<f64>, LinalgError> {
    let n = t.nrows();
    if t.ncols() != n || rhs.len() != n {
        return Err(LinalgError::DimensionMismatch {
            expected: n,
            actual: rhs.len(),
        });
    }
    if let Some(i) = (0..n).find(|&i| t[(i, i)] == 0.0) {
        return Err(LinalgError::SingularTriangular(i));
    }
    Ok(match side {
        TriSide::Forward => forward_unchecked(t, rhs),
        TriSide::Backward => backward_unchecked(t, rhs),
        TriSide::Transpose => transpose_unchecked(t, rhs),
    })
}

/// Householder QR with column pivoting.
#[derive(Debug, Clone)]
pub struct PivotedQr {
    /// Full orthogonal factor, `rows × rows`.
    pub q: DenseMatrix,
    /// Upper-trapezoidal factor, `rows × cols`, of the permuted matrix.
    pub r: DenseMatrix,
    /// `perm[k]` is the original column placed at position `k`.
    pub perm: Vec<usize>,
    /// Number of diagonal entries of `r` above the rank threshold.
    pub rank: usize,
}

/// Column-pivoted Householder QR. The numerical rank counts `|r_kk|` above
/// `max(rows, cols) · ε · (largest column norm)`.
pub fn pivoted_qr(a: &DenseMatrix) -> PivotedQr {
    householder_pivoted(a, true)
}

/// Column order and numerical rank of [`pivoted_qr`] without forming `Q`.
pub fn pivoted_rank_selection(a: &DenseMatrix) -> (Vec<usize>, usize) {
    let qr = householder_pivoted(a, false);
    (qr.perm, qr.rank)
}

fn householder_pivoted(a: &DenseMatrix, form_q: bool) -> PivotedQr {
    let (rows, cols) = a.shape();
    let mut r = a.clone();
    let mut q = if form_q {
        DenseMatrix::identity(rows, rows)
    } else {
        DenseMatrix::zeros(0, 0)
    };
    let mut perm: Vec<usize> = (0..cols).collect();
    let largest = (0..cols).map(|j| a.column(j).norm()).fold(0.0_f64, f64::max);
    let threshold = rows.max(cols) as f64 * f64::EPSILON * largest;
    let steps = rows.min(cols);
    let mut work = DVector::zeros(rows.max(cols));

    for k in 0..steps {
        // Pivot on the largest remaining column norm.
        let (mut best, mut best_norm) = (k, -1.0);
        for j in k..cols {
            let nrm = r.view((k, j), (rows - k, 1)).norm_squared();
            if nrm > best_norm {
                best = j;
                best_norm = nrm;
            }
        }
        if best != k {
            r.swap_columns(k, best);
            perm.swap(k, best);
        }
        let x = r.view((k, k), (rows - k, 1)).into_owned();
        let alpha = x.norm();
        if alpha == 0.0 {
            continue;
        }
        let sign = if x[0] >= 0.0 { 1.0 } else { -1.0 };
        let mut v = x.column(0).into_owned();
        v[0] += sign * alpha;
        let vnorm2 = v.norm_squared();
        if vnorm2 == 0.0 {
            continue;
        }
        let f = 2.0 / vnorm2;
        // R ← H R on the trailing block.
        {
            let mut block = r.view_mut((k, k), (rows - k, cols - k));
            let mut w = work.rows_mut(0, cols - k);
            w.gemv_tr(1.0, &block, &v, 0.0);
            block.ger(-f, &v, &w, 1.0);
        }
        for i in 1..rows - k {
            r[(k + i, k)] = 0.0;
        }
        // Q ← Q H.
        if form_q {
            let mut block = q.view_mut((0, k), (rows, rows - k));
            let mut w = work.rows_mut(0, rows);
            w.gemv(1.0, &block, &v, 0.0);
            block.ger(-f, &w, &v, 1.0);
        }
    }
    let rank = (0..steps).take_while(|&k| r[(k, k)].abs() > threshold).count();
    PivotedQr { q, r, perm, rank }
}

/// Numerical column rank via [`pivoted_qr`].
pub fn numerical_rank(a: &DenseMatrix) -> usize {
    if a.ncols() == 0 || a.nrows() == 0 {
        return 0;
    }
    pivoted_qr(a).rank
}

/// Orthonormal basis of `null(Mtᵀ)`, i.e. of the orthogonal complement of
/// the column space of `mt`.
pub fn qr_null_basis(mt: &DenseMatrix) -> DenseMatrix {
    let rows = mt.nrows();
    if mt.ncols() == 0 {
        return DenseMatrix::identity(rows, rows);
    }
    let qr = pivoted_qr(mt);
    qr.q.columns(qr.rank, rows - qr.rank).into_owned()
}

/// Square-root factor of a symmetric PSD matrix via its eigendecomposition,
/// `Z = Λ^{1/2} Uᵀ`. Slightly negative eigenvalues are clamped to zero.
pub fn psd_sqrt_factor(g: &DenseMatrix) -> Result<PsdSquareRoot, LinalgError> {
    let n = g.nrows();
    if g.ncols() != n {
        return Err(LinalgError::InvalidInput("matrix must be square".into()));
    }
    if n == 0 {
        return Ok(PsdSquareRoot {
            factor: DenseMatrix::zeros(0, 0),
        });
    }
    let scale = max_abs(g);
    if scale == 0.0 {
        return Ok(PsdSquareRoot {
            factor: DenseMatrix::zeros(n, n),
        });
    }
    let sym = (g + g.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut z = eig.eigenvectors.transpose();
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam < -PSD_CLAMP_REL * scale {
            return Err(LinalgError::NotPsd { eigenvalue: lam });
        }
        let root = lam.max(0.0).sqrt();
        for c in 0..n {
            z[(k, c)] *= root;
        }
    }
    Ok(PsdSquareRoot { factor: z })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use nalgebra::dvector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DenseMatrix {
        DenseMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn gram(cols: &[DVector<f64>]) -> DenseMatrix {
        DenseMatrix::from_fn(cols.len(), cols.len(), |i, j| cols[i].dot(&cols[j]))
    }

    #[test]
    fn cholesky_identity_and_closed_form() {
        let l = cholesky_factor(&DenseMatrix::identity(2, 2)).unwrap();
        assert_eq!(l.lower(), &DenseMatrix::identity(2, 2));
        let l = cholesky_factor(&dmatrix![4.0, 2.0; 2.0, 2.0]).unwrap();
        assert_eq!(l.lower(), &dmatrix![2.0, 0.0; 1.0, 1.0]);
    }

    #[test]
    fn cholesky_random_spd_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b = random_matrix(&mut rng, 8, 8);
        let g = &b * b.transpose() + DenseMatrix::identity(8, 8);
        let l = cholesky_factor(&g).unwrap();
        let err = max_abs(&(l.reconstruct() - &g)) / max_abs(&g);
        assert!(err <= 1e-12, "{err}");
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let g = dmatrix![1.0, 2.0; 2.0, 1.0];
        assert!(matches!(cholesky_factor(&g), Err(LinalgError::NotPositiveDefinite { .. })));
    }

    #[test]
    fn append_orthogonal_completes() {
        let theta = cholesky_factor(&dmatrix![1.0]).unwrap();
        // new e2 against old e1
        match chol_append(&theta, &[1.0, 0.0]).unwrap() {
            DowndateOutcome::Completed(f) => {
                assert_eq!(f.lower()[(1, 1)], 1.0);
                assert_eq!(f.lower()[(0, 0)], 1.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn append_parallel_breaks_at_one() {
        // old s1 = [2, 0], new s2 = [1, 0]
        let theta = cholesky_factor(&dmatrix![4.0]).unwrap();
        let out = chol_append(&theta, &[1.0, 2.0]).unwrap();
        match &out {
            DowndateOutcome::Breakdown { index, .. } => assert_eq!(*index, 1),
            other => panic!("{other:?}"),
        }
        let tau = out.dependence_coefficients().unwrap().unwrap();
        assert!((tau[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn append_in_span_breaks_at_two() {
        // old (new-first) [s1 = e2, s0 = e1], new s2 = (1, 1)
        let theta = cholesky_factor(&DenseMatrix::identity(2, 2)).unwrap();
        let out = chol_append(&theta, &[2.0, 1.0, 1.0]).unwrap();
        match &out {
            DowndateOutcome::Breakdown { index, partial, cross } => {
                assert_eq!(*index, 2);
                // Eq. check: leading block of the 3×3 Gram reproduced.
                let full = dmatrix![2.0, 1.0, 1.0; 1.0, 1.0, 0.0; 1.0, 0.0, 1.0];
                let mut ext = DenseMatrix::zeros(3, 3);
                ext.view_mut((0, 0), (2, 2)).copy_from(partial.lower());
                ext[(2, 0)] = cross[0];
                ext[(2, 1)] = cross[1];
                let rec = &ext * ext.transpose();
                assert!(max_abs(&(rec - full)) <= 1e-10 * 2.0);
            }
            other => panic!("{other:?}"),
        }
        let tau = out.dependence_coefficients().unwrap().unwrap();
        assert!((tau[0] - 1.0).abs() < 1e-14 && (tau[1] + 1.0).abs() < 1e-14, "{tau}");
        // s0 = τ1 s2 + τ2 s1
        let s0 = dvector![1.0, 1.0] * tau[0] + dvector![0.0, 1.0] * tau[1];
        assert!((s0 - dvector![1.0, 0.0]).norm() < 1e-14);
    }

    #[test]
    fn append_rejects_zero_vector() {
        let theta = CholeskyFactor::empty();
        assert!(matches!(chol_append(&theta, &[0.0]), Err(LinalgError::InvalidInput(_))));
    }

    #[test]
    fn append_matches_refactorization() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let vecs: Vec<DVector<f64>> = (0..6).map(|_| DVector::from_fn(9, |_, _| rng.random_range(-1.0..1.0))).collect();
        let theta = cholesky_factor(&gram(&vecs[1..])).unwrap();
        let inner: Vec<f64> = vecs.iter().map(|v| v.dot(&vecs[0])).collect();
        let aug = match chol_append(&theta, &inner).unwrap() {
            DowndateOutcome::Completed(f) => f,
            other => panic!("{other:?}"),
        };
        let fresh = cholesky_factor(&gram(&vecs)).unwrap();
        let err = max_abs(&(aug.lower() - fresh.lower())) / max_abs(fresh.lower());
        assert!(err <= 1e-10, "{err}");
    }

    #[test]
    fn remove_and_append_last_match_refactorization() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vecs: Vec<DVector<f64>> = (0..7).map(|_| DVector::from_fn(10, |_, _| rng.random_range(-1.0..1.0))).collect();
        let mut f = cholesky_factor(&gram(&vecs[..6])).unwrap();
        f.remove(2);
        let mut kept: Vec<DVector<f64>> = vecs[..6].to_vec();
        kept.remove(2);
        let cross = DVector::from_iterator(kept.len(), kept.iter().map(|v| v.dot(&vecs[6])));
        f.append_last(&cross, vecs[6].norm_squared()).unwrap();
        kept.push(vecs[6].clone());
        let fresh = cholesky_factor(&gram(&kept)).unwrap();
        let err = max_abs(&(f.lower() - fresh.lower())) / max_abs(fresh.lower());
        assert!(err <= 1e-10, "{err}");
    }

    #[test]
    fn tri_solve_cases() {
        let x = tri_solve(&DenseMatrix::identity(2, 2), &dvector![3.0, 7.0], TriSide::Forward).unwrap();
        assert_eq!(x, dvector![3.0, 7.0]);
        let x = tri_solve(&dmatrix![2.0, 0.0; 1.0, 1.0], &dvector![4.0, 3.0], TriSide::Forward).unwrap();
        assert_eq!(x, dvector![2.0, 1.0]);
        let err = tri_solve(&dmatrix![0.0, 0.0; 1.0, 1.0], &dvector![1.0, 1.0], TriSide::Forward);
        assert_eq!(err, Err(LinalgError::SingularTriangular(0)));
    }

    #[test]
    fn null_basis_axis_and_duplicate_columns() {
        let n = qr_null_basis(&dmatrix![1.0; 0.0]);
        assert_eq!(n.ncols(), 1);
        assert!((n[(0, 0)]).abs() < 1e-15 && (n[(1, 0)].abs() - 1.0).abs() < 1e-15);

        let mt = dmatrix![1.0, 1.0; 2.0, 2.0; 3.0, 3.0];
        let n = qr_null_basis(&mt);
        assert_eq!(n.ncols(), 2);
        assert!(max_abs(&(mt.transpose() * &n)) <= 1e-10 * 3.0);
    }

    #[test]
    fn null_basis_random_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (m, l) = (5, 2);
        let mt = random_matrix(&mut rng, m, m - l - 1);
        let n = qr_null_basis(&mt);
        assert!(n.ncols() >= l + 1);
        assert!(max_abs(&(mt.transpose() * &n)) <= 1e-10 * max_abs(&mt));
        let orth = n.transpose() * &n - DenseMatrix::identity(n.ncols(), n.ncols());
        assert!(max_abs(&orth) <= 1e-12);
    }

    #[test]
    fn psd_sqrt_cases() {
        let z = psd_sqrt_factor(&DenseMatrix::zeros(3, 3)).unwrap();
        assert_eq!(z.factor, DenseMatrix::zeros(3, 3));

        let z = psd_sqrt_factor(&DenseMatrix::identity(3, 3)).unwrap();
        assert!(max_abs(&(z.factor.transpose() * &z.factor - DenseMatrix::identity(3, 3))) <= 1e-12);

        let v = dvector![1.0, 2.0];
        let g = &v * v.transpose();
        let z = psd_sqrt_factor(&g).unwrap();
        assert!(max_abs(&(z.factor.transpose() * &z.factor - &g)) <= 1e-10 * 4.0);
        assert_eq!(numerical_rank(&z.factor), 1);

        assert!(matches!(psd_sqrt_factor(&dmatrix![1.0, 0.0; 0.0, -1.0]), Err(LinalgError::NotPsd { .. })));
    }
}
