//! Curvature pairs and the pair buffer used by the aggregating solver.
//!
//! [`PairStore`] keeps its iterate displacements linearly independent. It
//! maintains a Cholesky factor of their Gram matrix in new-first order
//! `[s_newest … s_oldest]`, so that prepending a candidate displacement is a
//! rank-one downdate whose breakdown index identifies the dependent pair, and
//! a factor of `Q = SᵀW⁻¹S` in oldest-first order.

use nalgebra::DVector;
use thiserror::Error;

use crate::forms::{InitialMatrix, InverseHessianModel};
use crate::linalg::{cholesky_factor, max_abs, CholeskyFactor, DenseMatrix, DowndateOutcome, LinalgError};

/// Number of factor edits between consistency checks against a fresh factorization.
pub const REFRESH_INTERVAL: usize = 50;

/// Relative drift that triggers a refactorization at a consistency check.
pub const REFRESH_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PairError {
    #[error("curvature sᵀy = {0:e} is not positive")]
    CurvatureViolation(f64),
    #[error("iterate displacement is zero")]
    ZeroDisplacement,
    #[error("non-finite entries in curvature pair")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("spanning set is empty")]
    DegenerateSpan,
    #[error("pair index {index} out of range for {len} stored pairs")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("store is full ({0} pairs)")]
    CapacityExceeded(usize),
    #[error("new iterate displacement depends on the stored ones")]
    NotIndependent,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// One `(s, y, ρ)` triple with `sᵀy > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvaturePair {
    s: DVector<f64>,
    y: DVector<f64>,
    rho: f64,
}

impl CurvaturePair {
    pub fn new(s: DVector<f64>, y: DVector<f64>) -> Result<Self, PairError> {
        if s.len() != y.len() {
            return Err(PairError::DimensionMismatch {
                expected: s.len(),
                actual: y.len(),
            });
        }
        if s.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(PairError::NonFinite);
        }
        if s.iter().all(|v| *v == 0.0) {
            return Err(PairError::ZeroDisplacement);
        }
        let sy = s.dot(&y);
        if !(sy > 0.0) {
            return Err(PairError::CurvatureViolation(sy));
        }
        Ok(CurvaturePair { s, y, rho: 1.0 / sy })
    }

    pub fn s(&self) -> &DVector<f64> {
        &self.s
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// `sᵀy`.
    pub fn curvature(&self) -> f64 {
        1.0 / self.rho
    }

    pub fn dim(&self) -> usize {
        self.s.len()
    }

    /// Same iterate displacement with a new gradient displacement.
    pub fn with_y(&self, y: DVector<f64>) -> Result<Self, PairError> {
        CurvaturePair::new(self.s.clone(), y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DependenceCase {
    /// Stored displacements plus the new one are independent.
    Independent,
    /// The newest stored displacement is a multiple of the new one.
    ParallelNewest,
    /// An older stored displacement lies in the span of the later ones.
    InSpan,
}

/// Classification of a candidate pair against the stored ones.
#[derive(Debug, Clone, PartialEq)]
pub struct DependenceReport {
    pub case: DependenceCase,
    /// Index (oldest first) of the pair that should leave the store.
    pub j: Option<usize>,
    /// Coefficients with `s_j = [s_{j+1} … s_newest s_new] τ`.
    pub tau: Option<DVector<f64>>,
}

/// Orthogonal projection of a stored displacement onto a span of later ones.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub accept: bool,
    pub s_hat: DVector<f64>,
    pub residual_norm: f64,
    /// Coefficients of `s_hat` over the spanning vectors, oldest first.
    pub tau: DVector<f64>,
}

/// Incrementally built orthonormal basis (classical Gram–Schmidt, applied
/// twice) of a growing set of vectors, remembering how to express
/// projections in the original vectors.
#[derive(Debug, Clone, Default)]
pub struct SpanProjector {
    basis: Vec<DVector<f64>>,
    // r[k] holds the coefficients of member k over the basis (upper triangular).
    r: Vec<Vec<f64>>,
    // Member index that introduced each basis vector.
    pivots: Vec<usize>,
    members: usize,
}

const SPAN_DROP_TOL: f64 = 1e-14;

impl SpanProjector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn members(&self) -> usize {
        self.members
    }

    fn orthogonalize(&self, v: &DVector<f64>) -> (DVector<f64>, Vec<f64>) {
        let mut rem = v.clone();
        let mut coef = vec![0.0; self.basis.len()];
        for _ in 0..2 {
            for (k, q) in self.basis.iter().enumerate() {
                let h = q.dot(&rem);
                coef[k] += h;
                rem.axpy(-h, q, 1.0);
            }
        }
        (rem, coef)
    }

    /// Adds a vector to the spanning set. Vectors already in the span are
    /// kept as members (with zero weight in later coefficient vectors).
    pub fn push(&mut self, v: &DVector<f64>) {
        let (rem, coef) = self.orthogonalize(v);
        let nrm = rem.norm();
        if nrm > SPAN_DROP_TOL * v.norm() {
            let mut col = coef;
            col.push(nrm);
            self.r.push(col);
            self.basis.push(rem / nrm);
            self.pivots.push(self.members);
        }
        self.members += 1;
    }

    /// Returns `(s_hat, residual, coefficients over members in push order)`.
    pub fn project(&self, v: &DVector<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let (rem, c) = self.orthogonalize(v);
        let s_hat = v - &rem;
        // Back-substitute R x = c over the pivot members.
        let k = self.basis.len();
        let mut x = vec![0.0; k];
        for i in (0..k).rev() {
            let mut val = c[i];
            for j in (i + 1)..k {
                val -= self.r[j][i] * x[j];
            }
            x[i] = val / self.r[i][i];
        }
        let mut coeffs = DVector::zeros(self.members);
        for (i, &p) in self.pivots.iter().enumerate() {
            coeffs[p] = x[i];
        }
        (s_hat, rem, coeffs)
    }
}

/// Acceptance rule `‖s − ŝ‖ ≤ tol · ‖ŝ‖`; a zero projection always rejects.
pub fn projection_accepts(residual_norm: f64, s_hat_norm: f64, tol: f64) -> bool {
    s_hat_norm > 0.0 && residual_norm <= tol * s_hat_norm
}

/// Buffer of independent curvature pairs, oldest first.
#[derive(Debug, Clone)]
pub struct PairStore {
    capacity: usize,
    initial: InitialMatrix,
    pairs: Vec<CurvaturePair>,
    winv_s: Vec<DVector<f64>>,
    gram: CholeskyFactor,
    q: CholeskyFactor,
    edits: usize,
    refreshes: usize,
}

impl PairStore {
    pub fn new(capacity: usize, initial: InitialMatrix) -> Self {
        PairStore {
            capacity,
            initial,
            pairs: Vec::new(),
            winv_s: Vec::new(),
            gram: CholeskyFactor::empty(),
            q: CholeskyFactor::empty(),
            edits: 0,
            refreshes: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Full at the capacity or, once a dimension is known, at `n` pairs.
    pub fn is_full(&self) -> bool {
        let dim_cap = self.pairs.first().map_or(usize::MAX, |p| p.dim());
        self.pairs.len() >= self.capacity.min(dim_cap)
    }

    pub fn pairs(&self) -> &[CurvaturePair] {
        &self.pairs
    }

    pub fn initial(&self) -> &InitialMatrix {
        &self.initial
    }

    /// Factor of the Gram matrix of `[s_newest … s_oldest]`.
    pub fn gram_factor(&self) -> &CholeskyFactor {
        &self.gram
    }

    /// Factor of `Q = SᵀW⁻¹S` with `S` oldest first.
    pub fn q_factor(&self) -> &CholeskyFactor {
        &self.q
    }

    /// Number of consistency checks that replaced a drifted factor.
    pub fn refreshes(&self) -> usize {
        self.refreshes
    }

    pub fn model(&self) -> InverseHessianModel {
        InverseHessianModel::new(self.initial.clone(), self.pairs.clone())
    }

    fn check_dim(&self, v: &DVector<f64>) -> Result<(), PairError> {
        match self.pairs.first() {
            Some(p) if p.dim() != v.len() => Err(PairError::DimensionMismatch {
                expected: p.dim(),
                actual: v.len(),
            }),
            _ => Ok(()),
        }
    }

    fn new_first_inner(&self, s: &DVector<f64>) -> Vec<f64> {
        let mut inner = Vec::with_capacity(self.pairs.len() + 1);
        inner.push(s.norm_squared());
        inner.extend(self.pairs.iter().rev().map(|p| p.s().dot(s)));
        inner
    }

    /// Classifies a candidate pair against the stored displacements.
    pub fn observe(&self, new_pair: &CurvaturePair) -> Result<DependenceReport, PairError> {
        self.check_dim(new_pair.s())?;
        if !(new_pair.curvature() > 0.0) {
            return Err(PairError::CurvatureViolation(new_pair.curvature()));
        }
        let m = self.pairs.len();
        let mut outcome = self.gram.append_first(&self.new_first_inner(new_pair.s()))?;
        if let DowndateOutcome::Completed(aug) = &outcome {
            // More than n vectors in Rⁿ are dependent whatever roundoff says;
            // the last pivot is the one that should have vanished.
            if m > 0 && m + 1 > new_pair.dim() {
                let lower = aug.lower();
                outcome = DowndateOutcome::Breakdown {
                    index: m,
                    partial: aug.leading(m),
                    cross: DVector::from_fn(m, |q, _| lower[(m, q)]),
                };
            }
        }
        match outcome {
            DowndateOutcome::Completed(_) => Ok(DependenceReport {
                case: DependenceCase::Independent,
                j: None,
                tau: None,
            }),
            DowndateOutcome::Breakdown { index, .. } => {
                let tau_nf = outcome.dependence_coefficients().expect("breakdown")?;
                // new-first [s_new, s_{m-1}, …] → oldest-first [s_{j+1}, …, s_new]
                let tau = DVector::from_iterator(tau_nf.len(), tau_nf.iter().rev().copied());
                let case = if index == 1 {
                    DependenceCase::ParallelNewest
                } else {
                    DependenceCase::InSpan
                };
                Ok(DependenceReport {
                    case,
                    j: Some(m - index),
                    tau: Some(tau),
                })
            }
        }
    }

    /// Appends a pair whose displacement is independent of the stored ones.
    pub fn push(&mut self, pair: CurvaturePair) -> Result<(), PairError> {
        self.check_dim(pair.s())?;
        if self.is_full() {
            return Err(PairError::CapacityExceeded(self.pairs.len()));
        }
        let gram = match self.gram.append_first(&self.new_first_inner(pair.s()))? {
            DowndateOutcome::Completed(f) => f,
            DowndateOutcome::Breakdown { .. } => return Err(PairError::NotIndependent),
        };
        let winv_s = self.initial.apply_inverse(pair.s());
        let cross = DVector::from_iterator(self.pairs.len(), self.pairs.iter().map(|p| p.s().dot(&winv_s)));
        let mut q = self.q.clone();
        q.append_last(&cross, pair.s().dot(&winv_s))?;
        self.gram = gram;
        self.q = q;
        self.pairs.push(pair);
        self.winv_s.push(winv_s);
        self.after_edit();
        Ok(())
    }

    /// Removes pair `j` (oldest-first index) and downdates both factors.
    pub fn remove(&mut self, j: usize) -> Result<CurvaturePair, PairError> {
        let m = self.pairs.len();
        if j >= m {
            return Err(PairError::IndexOutOfRange { index: j, len: m });
        }
        if j == 0 {
            self.gram.truncate_last();
        } else {
            self.gram.remove(m - 1 - j);
        }
        self.q.remove(j);
        self.winv_s.remove(j);
        let removed = self.pairs.remove(j);
        self.after_edit();
        Ok(removed)
    }

    pub fn evict_oldest(&mut self) -> Result<CurvaturePair, PairError> {
        self.remove(0)
    }

    /// Replaces the gradient displacement of pair `i`; the factors only
    /// depend on the iterate displacements and stay valid.
    pub fn set_y(&mut self, i: usize, y: DVector<f64>) -> Result<(), PairError> {
        let m = self.pairs.len();
        if i >= m {
            return Err(PairError::IndexOutOfRange { index: i, len: m });
        }
        self.pairs[i] = self.pairs[i].with_y(y)?;
        Ok(())
    }

    fn after_edit(&mut self) {
        self.edits += 1;
        if self.edits % REFRESH_INTERVAL == 0 {
            self.refresh_if_drifted();
        }
    }

    fn fresh_gram(&self) -> DenseMatrix {
        let m = self.pairs.len();
        DenseMatrix::from_fn(m, m, |a, b| self.pairs[m - 1 - a].s().dot(self.pairs[m - 1 - b].s()))
    }

    fn fresh_q(&self) -> DenseMatrix {
        let m = self.pairs.len();
        DenseMatrix::from_fn(m, m, |a, b| self.pairs[a].s().dot(&self.winv_s[b]))
    }

    /// Compares both factors with fresh Gram matrices and refactors any that drifted.
    pub fn refresh_if_drifted(&mut self) {
        if self.pairs.is_empty() {
            return;
        }
        for (which, fresh) in [(0, self.fresh_gram()), (1, self.fresh_q())] {
            let factor = if which == 0 { &self.gram } else { &self.q };
            let drift = max_abs(&(factor.reconstruct() - &fresh)) / max_abs(&fresh);
            if drift > REFRESH_TOL {
                if let Ok(f) = cholesky_factor(&fresh) {
                    if which == 0 {
                        self.gram = f;
                    } else {
                        self.q = f;
                    }
                    self.refreshes += 1;
                }
            }
        }
    }

    /// Projects stored `s_j` onto `span{s_{j+1}, …, s_newest, new_s}` and
    /// applies the acceptance test `‖s_j − ŝ_j‖ ≤ tol · ‖ŝ_j‖`.
    pub fn project_test(&self, j: usize, new_s: &DVector<f64>, tol: f64) -> Result<Projection, PairError> {
        let m = self.pairs.len();
        if j >= m {
            return Err(PairError::IndexOutOfRange { index: j, len: m });
        }
        self.check_dim(new_s)?;
        if new_s.iter().all(|v| *v == 0.0) && j + 1 == m {
            return Err(PairError::DegenerateSpan);
        }
        let mut proj = SpanProjector::new();
        for p in self.pairs[j + 1..].iter() {
            proj.push(p.s());
        }
        proj.push(new_s);
        let target = self.pairs[j].s();
        let (s_hat, rem, tau) = proj.project(target);
        let residual_norm = rem.norm();
        Ok(Projection {
            accept: projection_accepts(residual_norm, s_hat.norm(), tol),
            s_hat,
            residual_norm,
            tau,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pair(s: DVector<f64>) -> CurvaturePair {
        let y = s.clone();
        CurvaturePair::new(s, y).unwrap()
    }

    #[test]
    fn pair_validation() {
        assert!(matches!(
            CurvaturePair::new(dvector![1.0, 0.0], dvector![-1.0, 0.0]),
            Err(PairError::CurvatureViolation(_))
        ));
        assert_eq!(
            CurvaturePair::new(dvector![0.0, 0.0], dvector![1.0, 0.0]),
            Err(PairError::ZeroDisplacement)
        );
        let p = CurvaturePair::new(dvector![1.0], dvector![4.0]).unwrap();
        assert_eq!(p.rho(), 0.25);
    }

    #[test]
    fn observe_orthogonal_is_independent() {
        let mut store = PairStore::new(2, InitialMatrix::identity());
        store.push(pair(dvector![1.0, 0.0])).unwrap();
        let rep = store.observe(&pair(dvector![0.0, 1.0])).unwrap();
        assert_eq!(rep.case, DependenceCase::Independent);
        assert_eq!(rep.j, None);
    }

    #[test]
    fn observe_parallel_newest() {
        let mut store = PairStore::new(2, InitialMatrix::identity());
        store.push(pair(dvector![2.0, 0.0])).unwrap();
        let rep = store.observe(&pair(dvector![1.0, 0.0])).unwrap();
        assert_eq!(rep.case, DependenceCase::ParallelNewest);
        assert_eq!(rep.j, Some(0));
        let tau = rep.tau.unwrap();
        assert_eq!(tau.len(), 1);
        assert!((tau[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn observe_in_span() {
        let mut store = PairStore::new(3, InitialMatrix::identity());
        store.push(pair(dvector![1.0, 0.0])).unwrap();
        store.push(pair(dvector![0.0, 1.0])).unwrap();
        let new = pair(dvector![1.0, 1.0]);
        let rep = store.observe(&new).unwrap();
        assert_eq!(rep.case, DependenceCase::InSpan);
        assert_eq!(rep.j, Some(0));
        // Oldest-first over [e2, s_new]: (-1, 1), i.e. (1, -1) over [s_new, e2].
        let tau = rep.tau.unwrap();
        assert!((tau[0] + 1.0).abs() < 1e-14 && (tau[1] - 1.0).abs() < 1e-14, "{tau}");
        let rebuilt = store.pairs()[1].s() * tau[0] + new.s() * tau[1];
        assert!((rebuilt - store.pairs()[0].s()).norm() <= 1e-12);
    }

    #[test]
    fn push_rejects_dependent_and_full() {
        let mut store = PairStore::new(2, InitialMatrix::identity());
        store.push(pair(dvector![1.0, 0.0, 0.0])).unwrap();
        assert_eq!(store.push(pair(dvector![3.0, 0.0, 0.0])), Err(PairError::NotIndependent));
        store.push(pair(dvector![0.0, 1.0, 0.0])).unwrap();
        assert_eq!(store.push(pair(dvector![0.0, 0.0, 1.0])), Err(PairError::CapacityExceeded(2)));
    }

    #[test]
    fn factors_track_edits() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = InitialMatrix::diagonal(DVector::from_fn(12, |i, _| 1.0 + 0.5 * i as f64)).unwrap();
        let mut store = PairStore::new(6, w.clone());
        for step in 0..140 {
            let s = DVector::from_fn(12, |_, _| rng.random_range(-1.0..1.0));
            let p = pair(s);
            if store.is_full() || step % 7 == 3 {
                let j = rng.random_range(0..store.len().max(1));
                if !store.is_empty() {
                    store.remove(j).unwrap();
                }
            }
            if store.observe(&p).unwrap().case == DependenceCase::Independent {
                store.push(p).unwrap();
            }
            let fresh_gram = store.fresh_gram();
            let fresh_q = store.fresh_q();
            if !store.is_empty() {
                let ge = max_abs(&(store.gram_factor().reconstruct() - &fresh_gram)) / max_abs(&fresh_gram);
                let qe = max_abs(&(store.q_factor().reconstruct() - &fresh_q)) / max_abs(&fresh_q);
                assert!(ge <= 1e-8 && qe <= 1e-8, "step {step}: {ge} {qe}");
                let gl = cholesky_factor(&fresh_gram).unwrap();
                let le = max_abs(&(gl.lower() - store.gram_factor().lower())) / max_abs(gl.lower());
                assert!(le <= 1e-8, "step {step}: {le}");
            }
            assert!(store.len() <= 6);
        }
    }

    #[test]
    fn projection_cases() {
        let mut store = PairStore::new(3, InitialMatrix::identity());
        store.push(pair(dvector![1.0, 1.0, 0.0])).unwrap();
        // s_j in span{e1, e2}: exact
        let p = store.project_test(0, &dvector![0.0, 1.0, 0.0], 1e-12).unwrap();
        let _ = p;

        let mut store = PairStore::new(3, InitialMatrix::identity());
        store.push(pair(dvector![1.0, 1.0, 0.0])).unwrap();
        store.push(pair(dvector![1.0, 0.0, 0.0])).unwrap();
        let p = store.project_test(0, &dvector![0.0, 1.0, 0.0], 1e-12).unwrap();
        assert!(p.accept);
        assert!((&p.s_hat - dvector![1.0, 1.0, 0.0]).norm() < 1e-14);
        assert!((p.tau[0] - 1.0).abs() < 1e-14 && (p.tau[1] - 1.0).abs() < 1e-14);

        // orthogonal to span → ŝ = 0, rejected
        let mut store = PairStore::new(3, InitialMatrix::identity());
        store.push(pair(dvector![0.0, 0.0, 1.0])).unwrap();
        let p = store.project_test(0, &dvector![1.0, 0.0, 0.0], 0.5).unwrap();
        assert!(!p.accept);
        assert_eq!(p.s_hat.norm(), 0.0);

        // (1, ε) against span{e1}
        let mut store = PairStore::new(3, InitialMatrix::identity());
        store.push(pair(dvector![1.0, 1e-9])).unwrap();
        let p = store.project_test(0, &dvector![1.0, 0.0], 1e-8).unwrap();
        assert!(p.accept);
        assert!((&p.s_hat - dvector![1.0, 0.0]).norm() < 1e-15);
        assert!((p.residual_norm - 1e-9).abs() < 1e-20);
    }

    #[test]
    fn projection_errors() {
        let store = PairStore::new(3, InitialMatrix::identity());
        assert!(matches!(
            store.project_test(0, &dvector![1.0, 0.0], 0.1),
            Err(PairError::IndexOutOfRange { .. })
        ));
        let mut store = PairStore::new(3, InitialMatrix::identity());
        store.push(pair(dvector![1.0, 0.0])).unwrap();
        assert_eq!(store.project_test(0, &dvector![0.0, 0.0], 0.1), Err(PairError::DegenerateSpan));
    }
}
