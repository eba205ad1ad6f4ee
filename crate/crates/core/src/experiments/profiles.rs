use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::records::format_float;
use super::ExperimentError;

/// Which per-problem cost a profile compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    Iterations,
    FunctionEvaluations,
}

impl Measure {
    pub fn label(&self) -> &'static str {
        match self {
            Measure::Iterations => "iters",
            Measure::FunctionEvaluations => "funcs",
        }
    }
}

impl std::str::FromStr for Measure {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "iters" | "iterations" => Ok(Measure::Iterations),
            "funcs" | "functions" => Ok(Measure::FunctionEvaluations),
            other => Err(ExperimentError::Config(format!("unknown measure '{other}' (use iters or funcs)"))),
        }
    }
}

/// One row of an AggBFGS-vs-LBFGS comparison table; `None` marks a failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub problem: String,
    pub agg_iters: Option<u64>,
    pub agg_funcs: Option<u64>,
    pub aggs: Option<u64>,
    pub lbfgs_iters: Option<u64>,
    pub lbfgs_funcs: Option<u64>,
}

impl ComparisonRow {
    /// `[AggBFGS, LBFGS]` values of a measure.
    pub fn measures(&self, measure: Measure) -> [Option<f64>; 2] {
        let pick = |a: Option<u64>, b: Option<u64>| [a.map(|v| v as f64), b.map(|v| v as f64)];
        match measure {
            Measure::Iterations => pick(self.agg_iters, self.lbfgs_iters),
            Measure::FunctionEvaluations => pick(self.agg_funcs, self.lbfgs_funcs),
        }
    }
}

pub fn read_comparison_table(path: &Path) -> Result<Vec<ComparisonRow>, ExperimentError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let rows: Vec<ComparisonRow> = rdr.deserialize().collect::<Result<_, _>>()?;
    if rows.is_empty() {
        return Err(ExperimentError::Table(format!("{} has no rows", path.display())));
    }
    Ok(rows)
}

pub fn write_comparison_table(path: &Path, rows: &[ComparisonRow]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Step-function points `(α, fraction of problems with log₂ ratio ≤ α)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileCurve {
    pub solver: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileData {
    pub solvers: [String; 2],
    pub measure: Measure,
    pub problems: Vec<String>,
    pub values: Vec<[Option<f64>; 2]>,
    pub curves: [ProfileCurve; 2],
    /// `(problem, −log₂(m_A / m_B))`, sorted by decreasing magnitude.
    pub factors: Vec<(String, f64)>,
}

fn check_positive(problems: &[String], values: &[[Option<f64>; 2]]) -> Result<(), ExperimentError> {
    for (p, v) in problems.iter().zip(values) {
        if v.iter().flatten().any(|x| !(*x > 0.0) || !x.is_finite()) {
            return Err(ExperimentError::NonPositiveMeasure(p.clone()));
        }
    }
    Ok(())
}

/// Dolan–Moré curves over the problems solved by at least one solver;
/// a failure counts as an infinite ratio.
pub fn performance_profile(
    solvers: &[String; 2],
    problems: &[String],
    values: &[[Option<f64>; 2]],
) -> Result<[ProfileCurve; 2], ExperimentError> {
    check_positive(problems, values)?;
    let ratios: Vec<[f64; 2]> = values
        .iter()
        .filter_map(|v| {
            let best = v.iter().flatten().copied().reduce(f64::min)?;
            Some([0, 1].map(|s| v[s].map_or(f64::INFINITY, |x| (x / best).log2())))
        })
        .collect();
    if ratios.is_empty() {
        return Err(ExperimentError::EmptyIntersection);
    }
    let mut grid: Vec<f64> = ratios.iter().flatten().copied().filter(|r| r.is_finite()).collect();
    grid.push(0.0);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let total = ratios.len() as f64;
    let curves = [0, 1].map(|s| ProfileCurve {
        solver: solvers[s].clone(),
        points: grid
            .iter()
            .map(|&alpha| {
                let hit = ratios.iter().filter(|r| r[s] <= alpha).count();
                (alpha, hit as f64 / total)
            })
            .collect(),
    });
    Ok(curves)
}

/// Outperforming factors `−log₂(m_A/m_B)` over problems both solvers solved,
/// sorted by decreasing absolute value (ties by name).
pub fn morales_factors(problems: &[String], values: &[[Option<f64>; 2]]) -> Result<Vec<(String, f64)>, ExperimentError> {
    check_positive(problems, values)?;
    let mut out: Vec<(String, f64)> = problems
        .iter()
        .zip(values)
        .filter_map(|(p, v)| match v {
            [Some(a), Some(b)] => Some((p.clone(), -(a / b).log2())),
            _ => None,
        })
        .collect();
    if out.is_empty() {
        return Err(ExperimentError::EmptyIntersection);
    }
    out.sort_by(|x, y| y.1.abs().total_cmp(&x.1.abs()).then_with(|| x.0.cmp(&y.0)));
    Ok(out)
}

pub fn compute_profiles(rows: &[ComparisonRow], measure: Measure, solvers: [String; 2]) -> Result<ProfileData, ExperimentError> {
    let problems: Vec<String> = rows.iter().map(|r| r.problem.clone()).collect();
    let values: Vec<[Option<f64>; 2]> = rows.iter().map(|r| r.measures(measure)).collect();
    let factors = morales_factors(&problems, &values)?;
    let curves = performance_profile(&solvers, &problems, &values)?;
    Ok(ProfileData {
        solvers,
        measure,
        problems,
        values,
        curves,
        factors,
    })
}

/// Writes `<stem>_curves.csv` (solver, alpha, fraction) and
/// `<stem>_factors.csv` (problem, factor).
pub fn emit_profiles(data: &ProfileData, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf), ExperimentError> {
    std::fs::create_dir_all(dir)?;
    let curves_path = dir.join(format!("{stem}_curves.csv"));
    let mut w = csv::Writer::from_path(&curves_path)?;
    w.write_record(["solver", "measure", "alpha", "fraction"])?;
    for c in &data.curves {
        for &(a, frac) in &c.points {
            w.write_record([c.solver.as_str(), data.measure.label(), &format_float(a), &format_float(frac)])?;
        }
    }
    w.flush()?;

    let factors_path = dir.join(format!("{stem}_factors.csv"));
    let mut w = csv::Writer::from_path(&factors_path)?;
    w.write_record(["problem", "measure", "factor"])?;
    for (p, v) in &data.factors {
        w.write_record([p.as_str(), data.measure.label(), &format_float(*v)])?;
    }
    w.flush()?;
    Ok((curves_path, factors_path))
}
