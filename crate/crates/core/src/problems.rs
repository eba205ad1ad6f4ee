//! Test problems, the benchmark suite registry, and seeded generators for
//! random quadratics and mock curvature-pair streams.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::linalg::DenseMatrix;
use crate::pairs::{CurvaturePair, PairError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProblemError {
    #[error("invalid problem parameters: {0}")]
    InvalidParams(String),
    #[error("unknown problem '{0}'")]
    UnknownProblem(String),
    #[error("unknown suite '{0}'")]
    UnknownSuite(String),
    #[error("could not draw a descent direction with positive curvature after {0} attempts")]
    CurvatureViolation(usize),
    #[error(transparent)]
    Pair(#[from] PairError),
}

/// A smooth unconstrained objective.
pub trait Problem: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    /// Objective value and gradient.
    fn eval(&self, x: &DVector<f64>) -> (f64, DVector<f64>);
    fn initial_point(&self) -> DVector<f64>;
    fn is_convex(&self) -> bool {
        false
    }
    fn minimizer(&self) -> Option<DVector<f64>> {
        None
    }
    fn optimal_value(&self) -> Option<f64> {
        None
    }
    /// Hessian of a quadratic objective, when the problem is one.
    fn quadratic_hessian(&self) -> Option<&DenseMatrix> {
        None
    }
}

type Evaluator = Box<dyn Fn(&DVector<f64>) -> (f64, DVector<f64>) + Send + Sync>;

/// A problem defined by a closure.
pub struct FnProblem {
    name: String,
    n: usize,
    eval: Evaluator,
    start: DVector<f64>,
    convex: bool,
    minimizer: Option<DVector<f64>>,
    f_opt: Option<f64>,
}

impl FnProblem {
    pub fn new(
        name: impl Into<String>,
        n: usize,
        eval: impl Fn(&DVector<f64>) -> (f64, DVector<f64>) + Send + Sync + 'static,
    ) -> Self {
        FnProblem {
            name: name.into(),
            n,
            eval: Box::new(eval),
            start: DVector::zeros(n),
            convex: false,
            minimizer: None,
            f_opt: None,
        }
    }

    pub fn with_start(mut self, x0: DVector<f64>) -> Self {
        self.start = x0;
        self
    }

    pub fn convex(mut self, convex: bool) -> Self {
        self.convex = convex;
        self
    }

    pub fn with_solution(mut self, x: DVector<f64>, f: f64) -> Self {
        self.minimizer = Some(x);
        self.f_opt = Some(f);
        self
    }
}

impl std::fmt::Debug for FnProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FnProblem").field("name", &self.name).field("n", &self.n).finish()
    }
}

impl Problem for FnProblem {
    fn name(&self) -> &str {
        &self.name
    }
    fn dim(&self) -> usize {
        self.n
    }
    fn eval(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        (self.eval)(x)
    }
    fn initial_point(&self) -> DVector<f64> {
        self.start.clone()
    }
    fn is_convex(&self) -> bool {
        self.convex
    }
    fn minimizer(&self) -> Option<DVector<f64>> {
        self.minimizer.clone()
    }
    fn optimal_value(&self) -> Option<f64> {
        self.f_opt
    }
}

/// `f(x) = ½ xᵀAx` with `A` symmetric positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProblem {
    name: String,
    a: DenseMatrix,
    start: DVector<f64>,
}

impl QuadraticProblem {
    pub fn new(name: impl Into<String>, a: DenseMatrix, start: DVector<f64>) -> Self {
        QuadraticProblem {
            name: name.into(),
            a,
            start,
        }
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.a
    }
}

impl Problem for QuadraticProblem {
    fn name(&self) -> &str {
        &self.name
    }
    fn dim(&self) -> usize {
        self.a.nrows()
    }
    fn eval(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let g = &self.a * x;
        (0.5 * x.dot(&g), g)
    }
    fn initial_point(&self) -> DVector<f64> {
        self.start.clone()
    }
    fn is_convex(&self) -> bool {
        true
    }
    fn minimizer(&self) -> Option<DVector<f64>> {
        Some(DVector::zeros(self.dim()))
    }
    fn optimal_value(&self) -> Option<f64> {
        Some(0.0)
    }
    fn quadratic_hessian(&self) -> Option<&DenseMatrix> {
        Some(&self.a)
    }
}

/// Seeded generator for one experiment instance: the base seed selects the
/// key and `(n, m, instance)` select the stream, so instances never share
/// random numbers and can run in any order.
pub fn instance_rng(seed: u64, n: usize, m: usize, instance: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((n as u64) << 40) | ((m as u64 & 0xF_FFFF) << 20) | (instance as u64 & 0xF_FFFF));
    rng
}

pub fn randn_vector(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// `A = V Λ Vᵀ` with `V` orthogonal (QR of a Gaussian matrix) and a
/// log-uniform spectrum on `[1, cond]` whose endpoints are pinned.
pub fn random_spd_matrix(n: usize, cond: f64, rng: &mut impl Rng) -> Result<DenseMatrix, ProblemError> {
    if n == 0 || !(cond >= 1.0) || !cond.is_finite() {
        return Err(ProblemError::InvalidParams(format!("need n ≥ 1 and cond ≥ 1, got n = {n}, cond = {cond}")));
    }
    let gauss = DenseMatrix::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let v = gauss.qr().q();
    let log_c = cond.ln();
    let spectrum = DVector::from_fn(n, |i, _| {
        let u: f64 = match i {
            0 => 0.0,
            _ if i == n - 1 => 1.0,
            _ => rng.random(),
        };
        (u * log_c).exp()
    });
    let a = &v * DenseMatrix::from_diagonal(&spectrum) * v.transpose();
    Ok((&a + a.transpose()) * 0.5)
}

/// Random SPD quadratic with condition number close to `target_cond`, a
/// Gaussian start point, and its minimizer at the origin.
pub fn random_spd_quadratic(n: usize, target_cond: f64, seed: u64) -> Result<QuadraticProblem, ProblemError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = random_spd_matrix(n, target_cond, &mut rng)?;
    let start = randn_vector(&mut rng, n);
    Ok(QuadraticProblem::new(format!("quad-n{n}-c{target_cond:e}-s{seed}"), a, start))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RosenbrockVariant {
    Classic2d,
    Chained(usize),
}

/// `Σ 100(x_{i+1} − x_i²)² + (1 − x_i)²`, started at `(−1.2, 1, −1.2, 1, …)`.
pub fn rosenbrock(variant: RosenbrockVariant) -> Result<Box<dyn Problem>, ProblemError> {
    let (n, name) = match variant {
        RosenbrockVariant::Classic2d => (2, "rosenbrock".to_string()),
        RosenbrockVariant::Chained(n) if n >= 2 => (n, format!("chnrosen-{n}")),
        RosenbrockVariant::Chained(n) => {
            return Err(ProblemError::InvalidParams(format!("chained Rosenbrock needs n ≥ 2, got {n}")))
        }
    };
    let start = DVector::from_fn(n, |i, _| if i % 2 == 0 { -1.2 } else { 1.0 });
    Ok(Box::new(
        FnProblem::new(name, n, move |x: &DVector<f64>| {
            let mut f = 0.0;
            let mut g = DVector::zeros(n);
            for i in 0..n - 1 {
                let t = x[i + 1] - x[i] * x[i];
                let u = 1.0 - x[i];
                f += 100.0 * t * t + u * u;
                g[i] += -400.0 * t * x[i] - 2.0 * u;
                g[i + 1] += 200.0 * t;
            }
            (f, g)
        })
        .with_start(start)
        .with_solution(DVector::from_element(n, 1.0), 0.0),
    ))
}

/// Parameters of a mock minimization run on a random SPD quadratic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairStreamSpec {
    pub seed: u64,
    /// Instance index within an experiment; selects the random stream.
    pub instance: usize,
    pub n: usize,
    pub m: usize,
    pub steps: usize,
    /// Noise magnitude as a fraction of the gradient norm.
    pub noise_scale: f64,
    pub cond: f64,
}

impl PairStreamSpec {
    pub fn new(seed: u64, instance: usize, n: usize, m: usize, steps: usize) -> Self {
        PairStreamSpec {
            seed,
            instance,
            n,
            m,
            steps,
            noise_scale: 0.1,
            cond: 1e4,
        }
    }
}

/// A pair whose iterate displacement is a known combination of the stream's.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedPair {
    pub pair: CurvaturePair,
    pub tau: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairStream {
    pub hessian: DenseMatrix,
    pub pairs: Vec<CurvaturePair>,
    pub planted: Option<PlantedPair>,
}

/// Maximum number of noise draws per step before giving up.
pub const MAX_DIRECTION_ATTEMPTS: usize = 100;

/// Mock run on `½xᵀAx`: directions are `−g + noise_scale·‖g‖·ξ` with
/// Gaussian `ξ`, steps are exact. With `plant`, also returns a pair with
/// `s₀ = [s₁ … s_m]τ` (Gaussian τ) and `y₀ = A s₀`.
pub fn mock_pair_sequence(spec: &PairStreamSpec, plant: bool) -> Result<PairStream, ProblemError> {
    if spec.m > spec.n || spec.n == 0 {
        return Err(ProblemError::InvalidParams(format!("need 1 ≤ n and m ≤ n, got n = {}, m = {}", spec.n, spec.m)));
    }
    if plant && (spec.m == 0 || spec.steps < spec.m) {
        return Err(ProblemError::InvalidParams("planting needs 1 ≤ m ≤ steps".into()));
    }
    let n = spec.n;
    let mut rng = instance_rng(spec.seed, spec.n, spec.m, spec.instance);
    let a = random_spd_matrix(n, spec.cond, &mut rng)?;
    let mut x = randn_vector(&mut rng, n);
    let mut pairs = Vec::with_capacity(spec.steps);
    for _ in 0..spec.steps {
        let g = &a * &x;
        let gnorm = g.norm();
        let mut accepted = None;
        for _ in 0..MAX_DIRECTION_ATTEMPTS {
            let d = -&g + randn_vector(&mut rng, n) * (spec.noise_scale * gnorm);
            let gd = g.dot(&d);
            let ad = &a * &d;
            let curv = d.dot(&ad);
            if gd < 0.0 && curv > 0.0 {
                let alpha = -gd / curv;
                let s = d * alpha;
                let y = ad * alpha;
                if let Ok(p) = CurvaturePair::new(s, y) {
                    accepted = Some(p);
                    break;
                }
            }
        }
        let pair = accepted.ok_or(ProblemError::CurvatureViolation(MAX_DIRECTION_ATTEMPTS))?;
        x += pair.s();
        pairs.push(pair);
    }
    let planted = if plant {
        let tau = randn_vector(&mut rng, spec.m);
        let mut s0 = DVector::zeros(n);
        for (c, p) in pairs[..spec.m].iter().enumerate() {
            s0.axpy(tau[c], p.s(), 1.0);
        }
        // Backward step from the start point along s₀ on the same quadratic.
        let y0 = &a * &s0;
        Some(PlantedPair {
            pair: CurvaturePair::new(s0, y0)?,
            tau,
        })
    } else {
        None
    };
    Ok(PairStream {
        hessian: a,
        pairs,
        planted,
    })
}

fn separable(
    name: &str,
    n: usize,
    start: DVector<f64>,
    term: impl Fn(usize, f64) -> (f64, f64) + Send + Sync + 'static,
) -> FnProblem {
    FnProblem::new(name, n, move |x: &DVector<f64>| {
        let mut f = 0.0;
        let mut g = DVector::zeros(x.len());
        for i in 0..x.len() {
            let (fi, gi) = term(i, x[i]);
            f += fi;
            g[i] = gi;
        }
        (f, g)
    })
    .with_start(start)
}

fn dixon3dq(n: usize) -> FnProblem {
    FnProblem::new(format!("dixon3dq-{n}"), n, move |x: &DVector<f64>| {
        let mut g = DVector::zeros(n);
        let mut f = (x[0] - 1.0).powi(2) + (x[n - 1] - 1.0).powi(2);
        g[0] += 2.0 * (x[0] - 1.0);
        g[n - 1] += 2.0 * (x[n - 1] - 1.0);
        for j in 1..n - 1 {
            let t = x[j] - x[j + 1];
            f += t * t;
            g[j] += 2.0 * t;
            g[j + 1] -= 2.0 * t;
        }
        (f, g)
    })
    .with_start(DVector::from_element(n, -1.0))
    .convex(true)
    .with_solution(DVector::from_element(n, 1.0), 0.0)
}

fn bdqrtic(n: usize) -> FnProblem {
    FnProblem::new(format!("bdqrtic-{n}"), n, move |x: &DVector<f64>| {
        let mut g = DVector::zeros(n);
        let mut f = 0.0;
        for i in 0..n - 4 {
            let a = -4.0 * x[i] + 3.0;
            let q = x[i] * x[i] + 2.0 * x[i + 1].powi(2) + 3.0 * x[i + 2].powi(2) + 4.0 * x[i + 3].powi(2)
                + 5.0 * x[n - 1].powi(2);
            f += a * a + q * q;
            g[i] += -8.0 * a + 4.0 * q * x[i];
            g[i + 1] += 8.0 * q * x[i + 1];
            g[i + 2] += 12.0 * q * x[i + 2];
            g[i + 3] += 16.0 * q * x[i + 3];
            g[n - 1] += 20.0 * q * x[n - 1];
        }
        (f, g)
    })
    .with_start(DVector::from_element(n, 1.0))
    .convex(true)
}

fn arwhead(n: usize) -> FnProblem {
    FnProblem::new(format!("arwhead-{n}"), n, move |x: &DVector<f64>| {
        let mut g = DVector::zeros(n);
        let mut f = 0.0;
        let xn2 = x[n - 1] * x[n - 1];
        for i in 0..n - 1 {
            let q = x[i] * x[i] + xn2;
            f += q * q - 4.0 * x[i] + 3.0;
            g[i] += 4.0 * q * x[i] - 4.0;
            g[n - 1] += 4.0 * q * x[n - 1];
        }
        (f, g)
    })
    .with_start(DVector::from_element(n, 1.0))
    .convex(true)
}

fn extended_powell(n: usize) -> Result<FnProblem, ProblemError> {
    if n % 4 != 0 {
        return Err(ProblemError::InvalidParams(format!("extended Powell needs n divisible by 4, got {n}")));
    }
    let start = DVector::from_fn(n, |i, _| [3.0, -1.0, 0.0, 1.0][i % 4]);
    Ok(FnProblem::new(format!("powellsg-{n}"), n, move |x: &DVector<f64>| {
        let mut g = DVector::zeros(n);
        let mut f = 0.0;
        for b in (0..n).step_by(4) {
            let (x1, x2, x3, x4) = (x[b], x[b + 1], x[b + 2], x[b + 3]);
            let t1 = x1 + 10.0 * x2;
            let t2 = x3 - x4;
            let t3 = x2 - 2.0 * x3;
            let t4 = x1 - x4;
            f += t1 * t1 + 5.0 * t2 * t2 + t3.powi(4) + 10.0 * t4.powi(4);
            g[b] += 2.0 * t1 + 40.0 * t4.powi(3);
            g[b + 1] += 20.0 * t1 + 4.0 * t3.powi(3);
            g[b + 2] += 10.0 * t2 - 8.0 * t3.powi(3);
            g[b + 3] += -10.0 * t2 - 40.0 * t4.powi(3);
        }
        (f, g)
    })
    .with_start(start)
    .convex(true)
    .with_solution(DVector::zeros(n), 0.0))
}

fn penalty1(n: usize) -> FnProblem {
    let a = 1e-5;
    FnProblem::new(format!("penalty1-{n}"), n, move |x: &DVector<f64>| {
        let sq = x.norm_squared() - 0.25;
        let mut f = sq * sq;
        let mut g = x * (4.0 * sq);
        for i in 0..n {
            let t = x[i] - 1.0;
            f += a * t * t;
            g[i] += 2.0 * a * t;
        }
        (f, g)
    })
    .with_start(DVector::from_fn(n, |i, _| (i + 1) as f64))
}

fn broyden_tridiagonal(n: usize) -> FnProblem {
    FnProblem::new(format!("broydntri-{n}"), n, move |x: &DVector<f64>| {
        let at = |i: isize| if i < 0 || i >= n as isize { 0.0 } else { x[i as usize] };
        let mut g = DVector::zeros(n);
        let mut f = 0.0;
        for i in 0..n {
            let xi = x[i];
            let r = (3.0 - 2.0 * xi) * xi - at(i as isize - 1) - 2.0 * at(i as isize + 1) + 1.0;
            f += r * r;
            g[i] += 2.0 * r * (3.0 - 4.0 * xi);
            if i > 0 {
                g[i - 1] -= 2.0 * r;
            }
            if i + 1 < n {
                g[i + 1] -= 4.0 * r;
            }
        }
        (f, g)
    })
    .with_start(DVector::from_element(n, -1.0))
}

fn logistic_regression(features: usize, samples: usize, seed: u64) -> FnProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = DenseMatrix::from_fn(samples, features, |_, _| rng.sample(StandardNormal));
    let truth = randn_vector(&mut rng, features);
    let labels = DVector::from_fn(samples, |i, _| {
        let margin = data.row(i).transpose().dot(&truth) + 0.5 * rng.sample::<f64, _>(StandardNormal);
        if margin >= 0.0 {
            1.0
        } else {
            -1.0
        }
    });
    let ridge = 1e-3;
    let scale = 1.0 / samples as f64;
    FnProblem::new(format!("logreg-{features}"), features, move |x: &DVector<f64>| {
        let margins = (&data * x).component_mul(&labels);
        let mut f = 0.5 * ridge * x.norm_squared();
        let mut weights = DVector::zeros(samples);
        for i in 0..samples {
            let t = -margins[i];
            // log(1 + eᵗ) and its derivative, written to avoid overflow.
            let (lse, sig) = if t > 0.0 {
                (t + (-t).exp().ln_1p(), 1.0 / (1.0 + (-t).exp()))
            } else {
                (t.exp().ln_1p(), t.exp() / (1.0 + t.exp()))
            };
            f += scale * lse;
            weights[i] = -scale * sig * labels[i];
        }
        let g = data.transpose() * weights + x * ridge;
        (f, g)
    })
    .convex(true)
}

/// Names accepted by [`problem_by_name`] besides the default suite.
pub const EXTRA_PROBLEMS: &[&str] = &["rosenbrock", "sphere-10"];

/// The default benchmark suite (n between 10 and 3000).
pub const DEFAULT_SUITE: &[&str] = &[
    "quad-50",
    "quad-200",
    "dixon3dq-100",
    "expsum-1000",
    "quartic-500",
    "logreg-50",
    "arwhead-500",
    "bdqrtic-100",
    "powellsg-100",
    "chnrosen-10",
    "chnrosen-100",
    "penalty1-100",
    "broydntri-100",
];

/// Looks up a problem by registry name.
pub fn problem_by_name(name: &str) -> Result<Box<dyn Problem>, ProblemError> {
    let p: Box<dyn Problem> = match name {
        "rosenbrock" => rosenbrock(RosenbrockVariant::Classic2d)?,
        "sphere-10" => Box::new(
            FnProblem::new("sphere-10", 10, |x: &DVector<f64>| (0.5 * x.norm_squared(), x.clone()))
                .with_start(DVector::from_fn(10, |i, _| (i + 1) as f64))
                .convex(true)
                .with_solution(DVector::zeros(10), 0.0),
        ),
        "quad-50" => {
            let q = random_spd_quadratic(50, 1e2, 50)?;
            Box::new(QuadraticProblem::new("quad-50", q.a, q.start))
        }
        "quad-200" => {
            let q = random_spd_quadratic(200, 1e4, 200)?;
            Box::new(QuadraticProblem::new("quad-200", q.a, q.start))
        }
        "dixon3dq-100" => Box::new(dixon3dq(100)),
        "expsum-1000" => Box::new(
            separable("expsum-1000", 1000, DVector::from_element(1000, 1.0), |i, x| {
                let c = 1.0 + (i % 10) as f64;
                (c * (x.exp() - 1.0 - x), c * (x.exp() - 1.0))
            })
            .convex(true)
            .with_solution(DVector::zeros(1000), 0.0),
        ),
        "quartic-500" => Box::new(
            separable("quartic-500", 500, DVector::from_element(500, 1.0), |i, x| {
                let c = (i + 1) as f64 / 500.0;
                (0.25 * x.powi(4) + 0.5 * c * x * x, x.powi(3) + c * x)
            })
            .convex(true)
            .with_solution(DVector::zeros(500), 0.0),
        ),
        "logreg-50" => Box::new(logistic_regression(50, 200, 7)),
        "arwhead-500" => Box::new(arwhead(500)),
        "bdqrtic-100" => Box::new(bdqrtic(100)),
        "powellsg-100" => Box::new(extended_powell(100)?),
        "chnrosen-10" => rosenbrock(RosenbrockVariant::Chained(10))?,
        "chnrosen-100" => rosenbrock(RosenbrockVariant::Chained(100))?,
        "penalty1-100" => Box::new(penalty1(100)),
        "broydntri-100" => Box::new(broyden_tridiagonal(100)),
        other => return Err(ProblemError::UnknownProblem(other.to_string())),
    };
    Ok(p)
}

/// Problem names of a named suite: `default`, or a comma-separated list.
pub fn suite_names(suite: &str) -> Result<Vec<String>, ProblemError> {
    match suite {
        "default" => Ok(DEFAULT_SUITE.iter().map(|s| s.to_string()).collect()),
        "" => Err(ProblemError::UnknownSuite(suite.to_string())),
        list => {
            let names: Vec<String> = list.split(',').map(|s| s.trim().to_string()).collect();
            for n in &names {
                problem_by_name(n)?;
            }
            Ok(names)
        }
    }
}

/// Largest relative discrepancy between the gradient and central finite
/// differences with step `1e−6·(1 + |x_i|)`.
pub fn gradient_check(problem: &dyn Problem, x: &DVector<f64>) -> f64 {
    let (_, g) = problem.eval(x);
    let mut worst = 0.0_f64;
    let scale = g.amax().max(1.0);
    for i in 0..x.len() {
        let h = 1e-6 * (1.0 + x[i].abs());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        let fd = (problem.eval(&xp).0 - problem.eval(&xm).0) / (2.0 * h);
        worst = worst.max((fd - g[i]).abs() / scale);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dvector, SymmetricEigen};

    #[test]
    fn rosenbrock_values() {
        let p = rosenbrock(RosenbrockVariant::Classic2d).unwrap();
        let (f, g) = p.eval(&dvector![1.0, 1.0]);
        assert_eq!(f, 0.0);
        assert_eq!(g.norm(), 0.0);
        assert_eq!(p.eval(&dvector![0.0, 0.0]).0, 1.0);
        assert!(gradient_check(p.as_ref(), &dvector![-1.2, 1.0]) <= 1e-6);
        assert!(rosenbrock(RosenbrockVariant::Chained(1)).is_err());
    }

    #[test]
    fn spd_quadratic_conditioning() {
        let q = random_spd_quadratic(8, 1e4, 3).unwrap();
        let eig = SymmetricEigen::new(q.matrix().clone()).eigenvalues;
        let ratio = eig.max() / eig.min();
        assert!((5e3..=2e4).contains(&ratio), "{ratio}");
        let again = random_spd_quadratic(8, 1e4, 3).unwrap();
        assert_eq!(q, again);
        let id = random_spd_quadratic(4, 1.0, 1).unwrap();
        let diff = id.matrix() - DenseMatrix::identity(4, 4);
        assert!(diff.amax() <= 1e-14);
    }

    #[test]
    fn mock_stream_properties() {
        let spec = PairStreamSpec::new(17, 0, 8, 5, 5);
        let st = mock_pair_sequence(&spec, true).unwrap();
        assert_eq!(st.pairs.len(), 5);
        let planted = st.planted.as_ref().unwrap();
        let mut s = DVector::zeros(8);
        for (c, p) in st.pairs.iter().enumerate() {
            s.axpy(planted.tau[c], p.s(), 1.0);
        }
        assert!((&s - planted.pair.s()).norm() <= 1e-15 * s.norm());
        assert!(planted.pair.curvature() > 0.0);
        assert_eq!(st, mock_pair_sequence(&spec, true).unwrap());

        let quiet = PairStreamSpec {
            noise_scale: 0.0,
            ..PairStreamSpec::new(2, 1, 6, 3, 4)
        };
        let st = mock_pair_sequence(&quiet, false).unwrap();
        assert!(st.pairs.iter().all(|p| p.curvature() > 0.0));
        assert!(mock_pair_sequence(&PairStreamSpec::new(1, 0, 3, 4, 4), false).is_err());
    }

    #[test]
    fn streams_differ_by_instance() {
        let a = mock_pair_sequence(&PairStreamSpec::new(5, 0, 4, 2, 2), false).unwrap();
        let b = mock_pair_sequence(&PairStreamSpec::new(5, 1, 4, 2, 2), false).unwrap();
        assert_ne!(a.pairs[0], b.pairs[0]);
    }

    #[test]
    fn registry_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let names: Vec<&str> = DEFAULT_SUITE.iter().chain(EXTRA_PROBLEMS).copied().collect();
        for name in names {
            let p = problem_by_name(name).unwrap();
            let n = p.dim();
            let x = p.initial_point() + randn_vector(&mut rng, n) * 0.1;
            let err = gradient_check(p.as_ref(), &x);
            assert!(err <= 1e-6, "{name}: {err}");
            assert_eq!(p.name(), name);
        }
        assert!(matches!(problem_by_name("nope"), Err(ProblemError::UnknownProblem(_))));
        assert_eq!(suite_names("default").unwrap().len(), DEFAULT_SUITE.len());
    }
}
