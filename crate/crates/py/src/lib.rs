//! Python bindings: drive experiments and the greedy filter from Python.
//!
//! The module exposes an `Experiment` class wrapping a JSON config, plus
//! standalone helpers for playing with the double-greedy filter on small
//! explicit set functions (indexed by subset bitmask).

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use filfl_core::config::ExperimentConfig;
use filfl_core::error::{Error, Result as CoreResult};
use filfl_core::filtering::{brute_force_opt, chi_gf, FilterMode, SetValue};
use filfl_core::orchestrator::{run_experiment, RoundRecord};
use filfl_core::report;
use filfl_core::rng::RngStream;
use filfl_core::ClientId;

fn to_py_err(err: Error) -> PyErr {
    match err {
        Error::Config(_) | Error::InvalidParam(_) => PyValueError::new_err(err.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// One experiment described by a JSON config string.
#[pyclass]
struct Experiment {
    cfg: ExperimentConfig,
}

fn record_to_dict<'py>(py: Python<'py>, r: &RoundRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("round", r.round)?;
    d.set_item("n_t", r.available.len())?;
    d.set_item("filtered", r.filtered.iter().map(|c| c.0).collect::<Vec<_>>())?;
    d.set_item("selected", r.selected.iter().map(|c| c.0).collect::<Vec<_>>())?;
    d.set_item("refiltered", r.refiltered)?;
    d.set_item("train_loss", r.train_loss)?;
    d.set_item("public_loss", r.public_loss)?;
    d.set_item("test_loss", r.test_loss)?;
    d.set_item("test_acc", r.test_acc)?;
    d.set_item("reward", r.reward)?;
    d.set_item("delta_gap", r.delta_gap)?;
    d.set_item("opt_ratio", r.opt_ratio)?;
    d.set_item("oracle_calls", r.oracle_calls)?;
    Ok(d)
}

#[pymethods]
impl Experiment {
    #[new]
    fn new(config_json: &str) -> PyResult<Self> {
        let cfg = ExperimentConfig::from_json(config_json).map_err(to_py_err)?;
        Ok(Experiment { cfg })
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.cfg.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.cfg.seed = seed;
    }

    #[getter]
    fn rounds(&self) -> usize {
        self.cfg.rounds
    }

    /// The validated config, serialized back to JSON.
    fn config_json(&self) -> String {
        self.cfg.to_json()
    }

    /// Run the experiment; returns one dict per round.
    fn run<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyList>> {
        let out = run_experiment(&self.cfg).map_err(to_py_err)?;
        let dicts = out
            .records
            .iter()
            .map(|r| record_to_dict(py, r))
            .collect::<PyResult<Vec<_>>>()?;
        PyList::new(py, dicts)
    }

    /// Run the experiment and return the per-round CSV text (same schema as
    /// the CLI's run.csv).
    fn run_csv(&self) -> PyResult<String> {
        let out = run_experiment(&self.cfg).map_err(to_py_err)?;
        Ok(report::round_csv(&out.records))
    }
}

/// Set function given as a dense table over bitmask-indexed subsets of
/// `0..n`: entry `m` is the value of `{i : bit i of m set}`.
struct BitmaskTable {
    values: Vec<f64>,
}

impl BitmaskTable {
    fn from_values(values: Vec<f64>) -> PyResult<Self> {
        let n = values.len();
        if n < 2 || n & (n - 1) != 0 {
            return Err(PyValueError::new_err(
                "values must have length 2^n for a pool of n clients (n >= 1)",
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(PyValueError::new_err("values must be finite"));
        }
        Ok(BitmaskTable { values })
    }

    fn pool(&self) -> Vec<ClientId> {
        let n = self.values.len().trailing_zeros();
        (0..n).map(ClientId).collect()
    }
}

impl SetValue for BitmaskTable {
    fn value(&mut self, subset: &[ClientId]) -> CoreResult<f64> {
        let mask: usize = subset.iter().map(|c| 1usize << c.0).sum();
        Ok(self.values[mask])
    }
}

fn parse_mode(mode: &str) -> PyResult<FilterMode> {
    match mode.to_ascii_lowercase().as_str() {
        "d" | "deterministic" => Ok(FilterMode::Deterministic),
        "r" | "randomized" => Ok(FilterMode::Randomized),
        other => Err(PyValueError::new_err(format!(
            "mode must be 'd' or 'r', got '{other}'"
        ))),
    }
}

/// Run the double-greedy filter over an explicit set function.
///
/// Returns `(accepted_ids, steps)` where each step is a dict with the
/// marginal gains, the acceptance probability, and the decision.
#[pyfunction]
fn double_greedy<'py>(
    py: Python<'py>,
    values: Vec<f64>,
    mode: &str,
    seed: u64,
) -> PyResult<(Vec<u32>, Bound<'py, PyList>)> {
    let mut oracle = BitmaskTable::from_values(values)?;
    let pool = oracle.pool();
    let mut rng = RngStream::root(seed).child("filter").rng();
    let (set, trace) = chi_gf(&mut oracle, &pool, parse_mode(mode)?, &mut rng).map_err(to_py_err)?;
    let steps = trace
        .steps
        .iter()
        .map(|s| {
            let d = PyDict::new(py);
            d.set_item("client", s.client.0)?;
            d.set_item("a", s.gain_add)?;
            d.set_item("b", s.gain_drop)?;
            d.set_item("p", s.p)?;
            d.set_item("accepted", s.accepted)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok((
        set.iter().map(|c| c.0).collect(),
        PyList::new(py, steps)?,
    ))
}

/// Exhaustive argmax over all non-empty subsets of the same bitmask table.
#[pyfunction]
fn brute_force_best(values: Vec<f64>) -> PyResult<(Vec<u32>, f64)> {
    let mut oracle = BitmaskTable::from_values(values)?;
    let pool = oracle.pool();
    let (set, value) = brute_force_opt(&mut oracle, &pool).map_err(to_py_err)?;
    Ok((set.iter().map(|c| c.0).collect(), value))
}

/// A small ready-to-run config to start from.
#[pyfunction]
fn example_config() -> String {
    filfl_core::config::example_config_json()
}

#[pymodule]
fn filfl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Experiment>()?;
    m.add_function(wrap_pyfunction!(double_greedy, m)?)?;
    m.add_function(wrap_pyfunction!(brute_force_best, m)?)?;
    m.add_function(wrap_pyfunction!(example_config, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
