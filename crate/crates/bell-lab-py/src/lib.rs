//! Python bindings for the core CHSH toolkit: closed-form helpers, the
//! efficiency optimizer, and the scenario runner. Results cross the
//! boundary as plain floats and JSON strings.

use std::path::Path;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use bell_lab::analysis::Estimator;
use bell_lab::core::{self, Angle, CorrelationSet};
use bell_lab::harness;
use bell_lab::lhvopt;

fn value_err(err: bell_lab::Error) -> PyErr {
    PyValueError::new_err(err.to_string())
}

fn json_err(err: serde_json::Error) -> PyErr {
    PyValueError::new_err(err.to_string())
}

/// CHSH combination of four correlations in canonical pair order
/// (a,b), (a,b'), (a',b), (a',b').
#[pyfunction]
fn chsh_s(correlations: [f64; 4]) -> PyResult<f64> {
    core::chsh_s(&CorrelationSet::from_values(correlations)).map_err(value_err)
}

/// cos 2(alpha - beta) for analyser angles in degrees.
#[pyfunction]
fn quantum_correlation(alpha_deg: f64, beta_deg: f64) -> f64 {
    core::quantum_correlation(Angle::from_degrees(alpha_deg), Angle::from_degrees(beta_deg))
}

/// The CHSH-optimal analyser angles (a, a', b, b') in degrees.
#[pyfunction]
fn chsh_optimal_settings() -> [f64; 4] {
    let angles = core::chsh_optimal_settings();
    [
        angles[0].degrees(),
        angles[1].degrees(),
        angles[2].degrees(),
        angles[3].degrees(),
    ]
}

/// Run a scenario from a JSON config string; logs and results land in
/// `out_dir`. Returns the results document as a JSON string.
#[pyfunction]
fn run_scenario(config_json: &str, out_dir: &str) -> PyResult<String> {
    // Validate eagerly for a line/field diagnostic before touching disk.
    let _: harness::ExperimentConfig =
        serde_json::from_str(config_json).map_err(json_err)?;
    std::fs::create_dir_all(out_dir)?;
    let config_path = Path::new(out_dir).join("config.json");
    std::fs::write(&config_path, config_json)?;
    let results =
        harness::cmd_run(&config_path, None, Some(Path::new(out_dir))).map_err(value_err)?;
    serde_json::to_string(&results).map_err(json_err)
}

/// Pair two NDJSON logs and estimate CHSH; returns the results document
/// as a JSON string.
#[pyfunction]
#[pyo3(signature = (log_a, log_b, out_dir, window_ns=None, all_trials=false, k_sigma=3.0))]
fn analyze_logs(
    log_a: &str,
    log_b: &str,
    out_dir: &str,
    window_ns: Option<i64>,
    all_trials: bool,
    k_sigma: f64,
) -> PyResult<String> {
    let estimator = if all_trials { Estimator::AllTrials } else { Estimator::Conditional };
    let results = harness::cmd_analyze(
        Path::new(log_a),
        Path::new(log_b),
        window_ns,
        estimator,
        k_sigma,
        Path::new(out_dir),
    )
    .map_err(value_err)?;
    serde_json::to_string(&results).map_err(json_err)
}

/// Maximum conditional CHSH over local strategies at heralded detection
/// efficiency eta. Returns (s_max, s_lp, s_fallback).
#[pyfunction]
fn max_chsh_at_efficiency(eta: f64) -> PyResult<(f64, f64, f64)> {
    let r = lhvopt::max_chsh_at_efficiency(eta).map_err(value_err)?;
    Ok((r.s_max, r.s_lp, r.s_fallback))
}

/// Detection efficiency at which the local maximum reaches `target_s`.
#[pyfunction]
fn critical_efficiency(target_s: f64) -> PyResult<f64> {
    lhvopt::critical_efficiency(target_s).map_err(value_err)
}

#[pymodule]
fn bell_lab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(chsh_s, m)?)?;
    m.add_function(wrap_pyfunction!(quantum_correlation, m)?)?;
    m.add_function(wrap_pyfunction!(chsh_optimal_settings, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(analyze_logs, m)?)?;
    m.add_function(wrap_pyfunction!(max_chsh_at_efficiency, m)?)?;
    m.add_function(wrap_pyfunction!(critical_efficiency, m)?)?;
    Ok(())
}
