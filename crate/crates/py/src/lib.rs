//! Python bindings: configuration documents, simulation runs, region sweeps
//! and the exact single-interval oracles.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;

use schedsim::config::ConfigDocument;
use schedsim::experiments::{self, build_paper_scenarios, sweep_region};
use schedsim::oracle;
use schedsim::{PolicyKind, PolicySpec, RunReport, SystemConfig};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_error(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn json_loads<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    PyModule::import(py, "json")?.call_method1("loads", (text,))
}

fn parse_policy(name: Option<&str>, fallback: &PolicySpec) -> PyResult<PolicySpec> {
    match name {
        None => Ok(fallback.clone()),
        Some(n) => {
            let kind: PolicyKind = n.parse().map_err(PyValueError::new_err)?;
            Ok(PolicySpec { kind, ..fallback.clone() })
        }
    }
}

/// A validated system configuration.
#[pyclass(name = "Config", module = "schedsim_py", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyConfig {
    doc: ConfigDocument,
    system: SystemConfig,
}

impl PyConfig {
    fn from_doc(doc: ConfigDocument) -> PyResult<Self> {
        let system = doc.system_config().map_err(value_error)?;
        Ok(Self { doc, system })
    }
}

#[pymethods]
impl PyConfig {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Self::from_doc(ConfigDocument::from_json(text).map_err(value_error)?)
    }

    /// Built-in scenario by name, with reliabilities drawn from `seed`.
    #[staticmethod]
    #[pyo3(signature = (name, seed = 1))]
    fn scenario(name: &str, seed: u64) -> PyResult<Self> {
        let sc = experiments::scenario(name, seed)
            .ok_or_else(|| PyValueError::new_err(format!("unknown scenario {name:?}")))?;
        Self::from_doc(ConfigDocument::from_scenario(&sc, &PolicySpec::new(PolicyKind::GreedyForwarder)))
    }

    /// Copy with dotted-path overrides applied, e.g. `{"system.lambda": 100}`.
    fn with_overrides(&self, overrides: Vec<(String, String)>) -> PyResult<Self> {
        let mut value = serde_json::to_value(&self.doc).map_err(runtime_error)?;
        for (k, v) in overrides {
            schedsim::config::apply_override(&mut value, &format!("{k}={v}")).map_err(value_error)?;
        }
        Self::from_doc(ConfigDocument::from_value(value).map_err(value_error)?)
    }

    fn to_json(&self) -> String {
        self.doc.canonical_json()
    }

    fn digest(&self) -> String {
        self.doc.digest()
    }

    #[getter]
    fn slots(&self) -> usize {
        self.system.slots
    }

    #[getter]
    fn mode(&self) -> String {
        self.system.mode.to_string()
    }

    #[getter]
    fn update_period(&self) -> u64 {
        self.system.update_period
    }

    #[getter]
    fn sensors(&self) -> Vec<u32> {
        self.system.topology().sensors().iter().map(|s| s.0).collect()
    }

    #[getter]
    fn flows(&self) -> Vec<u32> {
        self.system.flows().iter().map(|f| f.id.0).collect()
    }

    #[getter]
    fn policy(&self) -> &'static str {
        self.doc.policy.kind.name()
    }

    /// Hop distance of every sensor, keyed by sensor id.
    fn hop_distances(&self) -> Vec<(u32, usize)> {
        let topo = self.system.topology();
        (0..topo.len()).map(|i| (topo.id(i).0, topo.depth(i))).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(sensors={}, flows={}, T={}, mode={})",
            self.system.topology().len(),
            self.system.flows().len(),
            self.system.slots,
            self.system.mode
        )
    }
}

/// Simulates the configuration and returns the run report as a dict.
#[pyfunction]
#[pyo3(signature = (config, policy = None, seed = None, intervals = None, trace = false))]
fn run<'py>(
    py: Python<'py>,
    config: &PyConfig,
    policy: Option<&str>,
    seed: Option<u64>,
    intervals: Option<u64>,
    trace: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let policy = parse_policy(policy, &config.doc.policy)?;
    let mut doc = config.doc.clone();
    doc.policy = policy.clone();
    doc.system.seed = seed.unwrap_or(doc.system.seed);
    doc.system.intervals = intervals.unwrap_or(doc.system.intervals);
    let system = doc.system_config().map_err(value_error)?;
    let text = py.detach(|| {
        schedsim::run_with(&system, &policy, system.intervals, system.seed, trace)
            .map(|m| serde_json::to_string(&RunReport::new(&doc, &system, m)).expect("report serializes"))
    });
    json_loads(py, &text.map_err(runtime_error)?)
}

/// Sweeps the (alpha, beta) grid and returns the region table as CSV text.
#[pyfunction]
#[pyo3(signature = (config, policy = None, alpha_step = 0.05, beta_step = None, jobs = None))]
fn sweep(
    py: Python<'_>,
    config: &PyConfig,
    policy: Option<&str>,
    alpha_step: f64,
    beta_step: Option<f64>,
    jobs: Option<usize>,
) -> PyResult<String> {
    let policy = parse_policy(policy, &config.doc.policy)?;
    let spec = config
        .doc
        .region_spec(&config.system, alpha_step, beta_step.unwrap_or(alpha_step))
        .map_err(value_error)?;
    py.detach(|| sweep_region(&spec, &policy, jobs))
        .map(|r| r.to_csv())
        .map_err(runtime_error)
}

/// Optimal single-interval value of `sum_f max(d_f, 0) E[e_f]`.
#[pyfunction]
fn dp_value(py: Python<'_>, config: &PyConfig, debts: Vec<f64>) -> PyResult<f64> {
    py.detach(|| oracle::dp_value(&config.system, &debts))
        .map(|(v, _)| v)
        .map_err(value_error)
}

/// Exact single-interval value of a deterministic policy.
#[pyfunction]
fn policy_expected_value(py: Python<'_>, config: &PyConfig, policy: &str, debts: Vec<f64>) -> PyResult<f64> {
    let policy = parse_policy(Some(policy), &config.doc.policy)?;
    py.detach(|| oracle::policy_expected_value(&config.system, &policy, &debts))
        .map_err(value_error)
}

/// Probability that a packet generated at slot `tau` crosses the chain of
/// links with the given reliabilities within `slots` slots.
#[pyfunction]
fn chain_delivery_probability(reliabilities: Vec<f64>, tau: usize, slots: usize) -> PyResult<f64> {
    oracle::chain_delivery_probability(&reliabilities, tau, slots).map_err(value_error)
}

#[pyfunction]
#[pyo3(signature = (debts, intervals, threshold = None))]
fn fulfillment_check(debts: Vec<f64>, intervals: u64, threshold: Option<f64>) -> bool {
    experiments::fulfillment_check(&debts, intervals, threshold)
}

#[pyfunction]
#[pyo3(signature = (seed = 1))]
fn scenario_names(seed: u64) -> Vec<&'static str> {
    build_paper_scenarios(seed).iter().map(|s| s.name).collect()
}

#[pyfunction]
fn policy_names() -> Vec<&'static str> {
    PolicyKind::ALL.iter().map(|k| k.name()).collect()
}

#[pymodule]
fn schedsim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(dp_value, m)?)?;
    m.add_function(wrap_pyfunction!(policy_expected_value, m)?)?;
    m.add_function(wrap_pyfunction!(chain_delivery_probability, m)?)?;
    m.add_function(wrap_pyfunction!(fulfillment_check, m)?)?;
    m.add_function(wrap_pyfunction!(scenario_names, m)?)?;
    m.add_function(wrap_pyfunction!(policy_names, m)?)?;
    Ok(())
}
