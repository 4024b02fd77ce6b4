//! Python bindings: formula helpers, presets and whole runs.

use std::path::Path;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyModule;

use fauras_core::client::harmonic_mean as hm;
use fauras_core::metrics::unfairness_index as unfairness;
use fauras_core::scenario::presets::PRESET_NAMES;
use fauras_core::{BitrateLadder, Kbps, ScenarioConfig, SimError, Strategy};

fn err(e: SimError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn json_value<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// Highest rate of `ladder` (default ladder when omitted) not above `bandwidth_kbps`.
#[pyfunction]
#[pyo3(signature = (bandwidth_kbps, ladder=None))]
fn fair_bitrate(bandwidth_kbps: f64, ladder: Option<Vec<Kbps>>) -> PyResult<Kbps> {
    let ladder = match ladder {
        Some(rates) => BitrateLadder::new(rates, 1.0, 1).map_err(err)?,
        None => BitrateLadder::default(),
    };
    Ok(fauras_core::fair_bitrate(&ladder, bandwidth_kbps))
}

#[pyfunction]
fn fair_share(capacity_kbps: f64, clients: usize) -> PyResult<f64> {
    fauras_core::fair_share(capacity_kbps, clients).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (buffer_s, bitrate_kbps, slice_kbps, k=2, segment_s=1.0, buffer_max_s=10.0))]
fn estimate_buffer(buffer_s: f64, bitrate_kbps: f64, slice_kbps: f64, k: u32, segment_s: f64, buffer_max_s: f64) -> PyResult<f64> {
    fauras_core::estimate_buffer(buffer_s, k, segment_s, bitrate_kbps, slice_kbps, buffer_max_s).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (bitrate_kbps, fair_kbps, estimated_buffer_s, k=2, segment_s=1.0))]
fn should_overwrite(bitrate_kbps: Kbps, fair_kbps: Kbps, estimated_buffer_s: f64, k: u32, segment_s: f64) -> bool {
    fauras_core::should_overwrite(bitrate_kbps, fair_kbps, estimated_buffer_s, k, segment_s)
}

#[pyfunction]
fn unfairness_index(rates: Vec<f64>) -> PyResult<f64> {
    unfairness(&rates).map_err(err)
}

/// `None` for an empty list or any non-positive sample.
#[pyfunction]
fn harmonic_mean(samples: Vec<f64>) -> Option<f64> {
    hm(&samples)
}

#[pyfunction]
fn presets() -> Vec<&'static str> {
    PRESET_NAMES.to_vec()
}

/// A validated scenario, loaded from a preset name, a file or TOML text.
#[pyclass(frozen)]
struct Scenario {
    cfg: ScenarioConfig,
}

#[pymethods]
impl Scenario {
    #[staticmethod]
    fn load(name_or_path: &str) -> PyResult<Self> {
        Ok(Self { cfg: fauras_core::load_scenario(name_or_path).map_err(err)? })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self { cfg: ScenarioConfig::from_toml_str(text, Path::new("<string>")).map_err(err)? })
    }

    #[getter]
    fn name(&self) -> &str {
        &self.cfg.name
    }

    #[getter]
    fn strategy(&self) -> &'static str {
        self.cfg.strategy.as_str()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.cfg.seed
    }

    fn to_toml(&self) -> PyResult<String> {
        self.cfg.to_toml_string().map_err(err)
    }

    /// Runs once; strategy and seed default to the scenario's own.
    #[pyo3(signature = (strategy=None, seed=None))]
    fn run(&self, py: Python<'_>, strategy: Option<&str>, seed: Option<u64>) -> PyResult<Run> {
        let strategy: Strategy = match strategy {
            Some(s) => s.parse().map_err(err)?,
            None => self.cfg.strategy,
        };
        let seed = seed.unwrap_or(self.cfg.seed);
        let cfg = &self.cfg;
        let out = py.detach(|| fauras_core::run_once(cfg, strategy, seed)).map_err(err)?;
        Ok(Run {
            report_json: serde_json::to_string(&out.report).map_err(|e| err(e.into()))?,
            log_csv: out.log.to_csv_string().map_err(err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!("Scenario({:?}, strategy={:?})", self.cfg.name, self.cfg.strategy.as_str())
    }
}

#[pyclass(frozen)]
struct Run {
    #[pyo3(get)]
    report_json: String,
    #[pyo3(get)]
    log_csv: String,
}

#[pymethods]
impl Run {
    /// The metrics report as a dict.
    fn report<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_value(py, &self.report_json)
    }
}

#[pymodule]
fn fauras(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(fair_bitrate, m)?)?;
    m.add_function(wrap_pyfunction!(fair_share, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_buffer, m)?)?;
    m.add_function(wrap_pyfunction!(should_overwrite, m)?)?;
    m.add_function(wrap_pyfunction!(unfairness_index, m)?)?;
    m.add_function(wrap_pyfunction!(harmonic_mean, m)?)?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_class::<Scenario>()?;
    m.add_class::<Run>()?;
    Ok(())
}
