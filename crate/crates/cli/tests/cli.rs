use std::path::Path;
use std::process::{Command, Output};

fn aggbfgs(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aggbfgs"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn equivalence_writes_schema_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let o = aggbfgs(dir.path(), &["equivalence", "--grid", "4:1,4:4", "--instances", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = String::from_utf8(read(dir.path(), "equivalence.csv")).unwrap();
    assert!(csv.starts_with("experiment,seed,n,m,k,metric,value\n"));
    assert!(csv.contains("equivalence,20240917,4,1,0,rel_error,"));
    let json: serde_json::Value = serde_json::from_slice(&read(dir.path(), "equivalence.json")).unwrap();
    assert_eq!(json.as_array().unwrap().len(), csv.lines().count() - 1);
}

#[test]
fn outputs_are_bitwise_reproducible() {
    let runs: Vec<&[&str]> = vec![
        &["equivalence", "--grid", "8", "--instances", "4", "--seed", "5"],
        &["accumulation", "--n", "8", "--instances", "4", "--seed", "5"],
        &["lag", "--lags", "1,2", "--iterations", "30"],
        &["tracking", "--memory", "2"],
        &["benchmark", "--suite", "quad-50,chnrosen-10"],
    ];
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    for args in &runs {
        assert_eq!(aggbfgs(a.path(), args).status.code(), Some(0), "{args:?}");
        assert_eq!(aggbfgs(b.path(), args).status.code(), Some(0), "{args:?}");
        let mut threaded = args.to_vec();
        threaded.extend(["--jobs", "3"]);
        assert_eq!(aggbfgs(c.path(), &threaded).status.code(), Some(0), "{args:?}");
    }
    let mut names: Vec<String> = std::fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert!(names.len() >= 10, "{names:?}");
    for name in &names {
        let bytes = read(a.path(), name);
        assert_eq!(bytes, read(b.path(), name), "{name} differs between identical runs");
        assert_eq!(bytes, read(c.path(), name), "{name} depends on the thread count");
    }
}

#[test]
fn profiles_of_transcribed_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = aggbfgs(dir.path(), &["profiles", "--input", &fixture("published_counts.csv"), "--measure", "iters"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let factors = String::from_utf8(read(dir.path(), "published_counts_iters_factors.csv")).unwrap();
    let bdqrtic = factors.lines().find(|l| l.starts_with("bdqrtic,")).expect("bdqrtic row");
    let v: f64 = bdqrtic.rsplit(',').next().unwrap().parse().unwrap();
    assert!((v - (333.0_f64 / 122.0).log2()).abs() < 1e-12);
    assert!(!dir.path().join("published_counts_funcs_curves.csv").exists());
}

#[test]
fn unconverged_runs_exit_with_partial_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = aggbfgs(dir.path(), &["benchmark", "--suite", "chnrosen-10", "--max-iters", "2"]);
    assert_eq!(o.status.code(), Some(2));
    let runs = String::from_utf8(read(dir.path(), "benchmark_runs.csv")).unwrap();
    assert!(runs.contains("IterLimit"));
}

#[test]
fn configuration_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["equivalence", "--grid", "3:5"][..],
        &["equivalence", "--grid", "nonsense"],
        &["benchmark", "--suite", "no-such-problem"],
        &["benchmark", "--mode", "newton"],
        &["benchmark", "--tol-recent", "2"],
        &["profiles", "--input", "/nonexistent/table.csv"],
        &["profiles", "--input", &fixture("published_counts.csv"), "--measure", "seconds"],
        &["equivalence", "--jobs", "0"],
        &["frobnicate"],
    ] {
        let o = aggbfgs(dir.path(), args);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}
