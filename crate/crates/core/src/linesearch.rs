//! Weak Wolfe line search and the exact step for quadratics.

use nalgebra::DVector;
use thiserror::Error;

use crate::problems::Problem;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LineSearchError {
    #[error("direction is not a descent direction (gᵀd = {0:e})")]
    NotDescent(f64),
    #[error("direction has nonpositive curvature (dᵀAd = {0:e})")]
    NonpositiveCurvatureDirection(f64),
    #[error("invalid line-search parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WolfeParams {
    pub c1: f64,
    pub c2: f64,
    pub max_bisections: usize,
    pub initial_step: f64,
}

impl Default for WolfeParams {
    fn default() -> Self {
        WolfeParams {
            c1: 1e-4,
            c2: 0.9,
            max_bisections: 50,
            initial_step: 1.0,
        }
    }
}

impl WolfeParams {
    pub fn validate(&self) -> Result<(), LineSearchError> {
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(LineSearchError::InvalidParams(format!(
                "need 0 < c1 < c2 < 1, got c1 = {}, c2 = {}",
                self.c1, self.c2
            )));
        }
        if !(self.initial_step > 0.0) || self.max_bisections == 0 {
            return Err(LineSearchError::InvalidParams(
                "initial step and iteration cap must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineSearchStatus {
    /// Both weak Wolfe conditions hold.
    Satisfied,
    /// The iteration cap was reached; the result is the best Armijo point
    /// found (or the start point if there was none).
    MaxBisections,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSearchResult {
    pub alpha: f64,
    pub f_new: f64,
    pub g_new: DVector<f64>,
    pub func_evals: usize,
    pub status: LineSearchStatus,
}

impl LineSearchResult {
    pub fn is_satisfied(&self) -> bool {
        self.status == LineSearchStatus::Satisfied
    }
}

/// Bracketing bisection for the weak Wolfe conditions
/// `f(x+αd) ≤ f + c₁α gᵀd` and `∇f(x+αd)ᵀd ≥ c₂ gᵀd`: the step doubles
/// while the curvature condition fails with no upper bracket, and bisects
/// once one exists.
pub fn weak_wolfe_search(
    problem: &dyn Problem,
    x: &DVector<f64>,
    f: f64,
    g: &DVector<f64>,
    d: &DVector<f64>,
    params: &WolfeParams,
) -> Result<LineSearchResult, LineSearchError> {
    params.validate()?;
    let gd = g.dot(d);
    if !(gd < 0.0) {
        return Err(LineSearchError::NotDescent(gd));
    }
    let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
    let mut alpha = params.initial_step;
    let mut best: Option<(f64, f64, DVector<f64>)> = None;
    for evals in 1..=params.max_bisections {
        let trial = x + d * alpha;
        let (ft, gt) = problem.eval(&trial);
        let armijo = ft.is_finite() && ft <= f + params.c1 * alpha * gd;
        if !armijo {
            hi = alpha;
        } else {
            if best.as_ref().is_none_or(|b| ft < b.1) {
                best = Some((alpha, ft, gt.clone()));
            }
            let slope = gt.dot(d);
            if slope >= params.c2 * gd {
                return Ok(LineSearchResult {
                    alpha,
                    f_new: ft,
                    g_new: gt,
                    func_evals: evals,
                    status: LineSearchStatus::Satisfied,
                });
            }
            lo = alpha;
        }
        alpha = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * lo };
    }
    let (alpha, f_new, g_new) = best.unwrap_or((0.0, f, g.clone()));
    Ok(LineSearchResult {
        alpha,
        f_new,
        g_new,
        func_evals: params.max_bisections,
        status: LineSearchStatus::MaxBisections,
    })
}

/// Exact minimizer `α = −gᵀd / dᵀAd` of a quadratic along `d`.
pub fn exact_quadratic_step(
    a_apply: impl Fn(&DVector<f64>) -> DVector<f64>,
    g: &DVector<f64>,
    d: &DVector<f64>,
) -> Result<f64, LineSearchError> {
    let curv = d.dot(&a_apply(d));
    if !(curv > 0.0) {
        return Err(LineSearchError::NonpositiveCurvatureDirection(curv));
    }
    Ok(-g.dot(d) / curv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseMatrix;
    use crate::problems::{random_spd_quadratic, rosenbrock, FnProblem, RosenbrockVariant};
    use nalgebra::dvector;

    #[test]
    fn unit_step_on_1d_quadratic() {
        let p = FnProblem::new("half-square", 1, |x: &DVector<f64>| (0.5 * x.norm_squared(), x.clone()));
        let x = dvector![1.0];
        let (f, g) = p.eval(&x);
        let r = weak_wolfe_search(&p, &x, f, &g, &dvector![-1.0], &WolfeParams::default()).unwrap();
        assert!(r.is_satisfied());
        assert_eq!(r.alpha, 1.0);
        assert_eq!(r.func_evals, 1);
    }

    #[test]
    fn unbounded_descent_hits_cap() {
        let p = FnProblem::new("linear", 1, |x: &DVector<f64>| (-x[0], dvector![-1.0]));
        let x = dvector![0.0];
        let (f, g) = p.eval(&x);
        let r = weak_wolfe_search(&p, &x, f, &g, &dvector![1.0], &WolfeParams::default()).unwrap();
        assert_eq!(r.status, LineSearchStatus::MaxBisections);
        assert!(r.alpha > 1.0 && r.f_new < f);
    }

    #[test]
    fn rosenbrock_conditions_hold() {
        let p = rosenbrock(RosenbrockVariant::Classic2d).unwrap();
        let x = dvector![-1.2, 1.0];
        let (f, g) = p.eval(&x);
        let d = -&g;
        let prm = WolfeParams::default();
        let r = weak_wolfe_search(p.as_ref(), &x, f, &g, &d, &prm).unwrap();
        assert!(r.is_satisfied());
        let (ft, gt) = p.eval(&(&x + &d * r.alpha));
        assert!(ft <= f + prm.c1 * r.alpha * g.dot(&d));
        assert!(gt.dot(&d) >= prm.c2 * g.dot(&d));
        let s = &d * r.alpha;
        assert!(s.dot(&(gt - &g)) > 0.0);
    }

    #[test]
    fn rejects_ascent_and_bad_params() {
        let p = FnProblem::new("half-square", 1, |x: &DVector<f64>| (0.5 * x.norm_squared(), x.clone()));
        let x = dvector![1.0];
        let (f, g) = p.eval(&x);
        assert!(matches!(
            weak_wolfe_search(&p, &x, f, &g, &dvector![1.0], &WolfeParams::default()),
            Err(LineSearchError::NotDescent(_))
        ));
        let bad = WolfeParams { c1: 0.9, c2: 0.1, ..WolfeParams::default() };
        assert!(matches!(
            weak_wolfe_search(&p, &x, f, &g, &dvector![-1.0], &bad),
            Err(LineSearchError::InvalidParams(_))
        ));
    }

    #[test]
    fn exact_step_examples() {
        let id = |v: &DVector<f64>| v.clone();
        let g = dvector![1.0, 0.0];
        let d = -&g;
        assert_eq!(exact_quadratic_step(id, &g, &d).unwrap(), 1.0);
        assert_eq!(exact_quadratic_step(id, &g, &(&d * 2.0)).unwrap(), 0.5);
        assert!(matches!(
            exact_quadratic_step(|v: &DVector<f64>| -v, &g, &d),
            Err(LineSearchError::NonpositiveCurvatureDirection(_))
        ));
    }

    #[test]
    fn exact_step_orthogonality() {
        let q = random_spd_quadratic(5, 100.0, 21).unwrap();
        let a: &DenseMatrix = q.matrix();
        let x = dvector![1.0, -2.0, 0.5, 3.0, -1.0];
        let g = a * &x;
        let d = dvector![-1.0, 0.3, 0.2, -2.0, 0.7];
        let alpha = exact_quadratic_step(|v: &DVector<f64>| a * v, &g, &d).unwrap();
        let g_new = a * (&x + &d * alpha);
        assert!(g_new.dot(&d).abs() <= 1e-10 * g.dot(&d).abs());
    }
}
