use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::linalg::DenseMatrix;

/// One measured value of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub experiment: String,
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    /// Instance index or iteration, depending on the experiment.
    pub k: usize,
    pub metric: String,
    pub value: f64,
    /// Extra context (e.g. failure messages); only written to JSON.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl ExperimentRecord {
    pub fn new(experiment: &str, seed: u64, n: usize, m: usize, k: usize, metric: &str, value: f64) -> Self {
        ExperimentRecord {
            experiment: experiment.to_string(),
            seed,
            n,
            m,
            k,
            metric: metric.to_string(),
            value,
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<String>) -> Self {
        self.metadata.insert(key.to_string(), value.into());
        self
    }
}

/// Shortest decimal that parses back to the same `f64`; exponent notation
/// outside `[1e−4, 1e15)` keeps very small errors readable.
pub fn format_float(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || !v.is_finite() || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// `max |Wa − Wref| / max |Wref|` over matrix entries.
pub fn relative_error(wa: &DenseMatrix, wref: &DenseMatrix) -> Result<f64, ExperimentError> {
    if wa.shape() != wref.shape() {
        return Err(ExperimentError::ShapeMismatch(wa.shape(), wref.shape()));
    }
    let scale = wref.amax();
    if scale == 0.0 {
        return Err(ExperimentError::ZeroReference);
    }
    Ok((wa - wref).amax() / scale)
}

/// Writes `<stem>.csv` and `<stem>.json` into `dir`, returning both paths.
pub fn write_records(dir: &Path, stem: &str, records: &[ExperimentRecord]) -> Result<(PathBuf, PathBuf), ExperimentError> {
    std::fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["experiment", "seed", "n", "m", "k", "metric", "value"])?;
    for r in records {
        w.write_record([
            r.experiment.clone(),
            r.seed.to_string(),
            r.n.to_string(),
            r.m.to_string(),
            r.k.to_string(),
            r.metric.clone(),
            format_float(r.value),
        ])?;
    }
    w.flush()?;

    let json_path = dir.join(format!("{stem}.json"));
    let mut f = std::io::BufWriter::new(std::fs::File::create(&json_path)?);
    serde_json::to_writer_pretty(&mut f, records)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok((csv_path, json_path))
}

#[derive(Deserialize)]
struct CsvRow {
    experiment: String,
    seed: u64,
    n: usize,
    m: usize,
    k: usize,
    metric: String,
    value: f64,
}

/// Reads records back from the CSV schema (metadata is not part of it).
pub fn read_records_csv(path: &Path) -> Result<Vec<ExperimentRecord>, ExperimentError> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize::<CsvRow>()
        .map(|row| {
            let r = row?;
            Ok(ExperimentRecord::new(&r.experiment, r.seed, r.n, r.m, r.k, &r.metric, r.value))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn relative_error_examples() {
        let i2 = DenseMatrix::identity(2, 2);
        assert_eq!(relative_error(&i2, &i2).unwrap(), 0.0);
        let mut p = i2.clone();
        p[(0, 1)] = 0.5;
        assert_eq!(relative_error(&p, &i2).unwrap(), 0.5);
        assert!(matches!(
            relative_error(&i2, &DenseMatrix::zeros(2, 2)),
            Err(ExperimentError::ZeroReference)
        ));
        assert!(matches!(
            relative_error(&i2, &DenseMatrix::identity(3, 3)),
            Err(ExperimentError::ShapeMismatch(..))
        ));
    }

    #[test]
    fn relative_error_matches_loop_formula() {
        let a: DenseMatrix = dmatrix![1.0, -2.5, 3.0; 0.25, 4.0, -7.5];
        let b: DenseMatrix = dmatrix![1.5, -2.0, 2.0; 0.0, 4.5, -8.0];
        let mut num = 0.0_f64;
        let mut den = 0.0_f64;
        for i in 0..2 {
            for j in 0..3 {
                num = num.max((a[(i, j)] - b[(i, j)]).abs());
                den = den.max(b[(i, j)].abs());
            }
        }
        assert_eq!(relative_error(&a, &b).unwrap(), num / den);
    }

    #[test]
    fn floats_round_trip() {
        for v in [0.0, 1.0, -0.1, 1e-300, 3.0e-17, 123456.789, 1e20, f64::MIN_POSITIVE, 2.0 / 3.0] {
            let s = format_float(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
        assert_eq!(format_float(1.5e-13), "1.5e-13");
        assert_eq!(format_float(0.25), "0.25");
    }

    #[test]
    fn csv_and_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![
            ExperimentRecord::new("equivalence", 7, 4, 2, 0, "rel_error", 3.1e-16),
            ExperimentRecord::new("equivalence", 7, 4, 2, 1, "failure", f64::NAN).with_meta("error", "boom"),
        ];
        let (csv_path, json_path) = write_records(dir.path(), "eq", &recs).unwrap();
        let back = read_records_csv(&csv_path).unwrap();
        assert_eq!(back[0], recs[0]);
        assert!(back[1].value.is_nan());
        let text = std::fs::read_to_string(&csv_path).unwrap();
        assert!(text.starts_with("experiment,seed,n,m,k,metric,value\n"));
        let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json_path).unwrap()).unwrap();
        assert_eq!(json[1]["metadata"]["error"], "boom");
        assert!(json[0].get("metadata").is_none());
    }
}
