//! Python bindings for the `cran_swipt` crate.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use cran_swipt::beamform::{self, GroupDivision};
use cran_swipt::division::{Algorithm, DivisionOptions, DivisionRunResult};
use cran_swipt::experiment::{self, ExperimentConfig};
use cran_swipt::longterm;
use cran_swipt::topology::{self, ChannelRealization, NetworkTopology};

create_exception!(cran_swipt_py, CranSwiptError, PyException);

fn py_err(e: cran_swipt::error::Error) -> PyErr {
    CranSwiptError::new_err(e.to_string())
}

#[pyclass(name = "Topology", frozen)]
struct PyTopology(NetworkTopology);

#[pymethods]
impl PyTopology {
    #[staticmethod]
    #[pyo3(signature = (seed, n_rrh=3, n_it=4, n_et=7, inter_rrh_distance=20.0))]
    fn generate(seed: u64, n_rrh: usize, n_it: usize, n_et: usize, inter_rrh_distance: f64) -> PyResult<Self> {
        topology::generate_topology(seed, n_rrh, n_it, n_et, inter_rrh_distance).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        NetworkTopology::from_json(text).map(Self).map_err(py_err)
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    #[getter]
    fn n_rrh(&self) -> usize {
        self.0.n_rrh()
    }

    #[getter]
    fn n_it(&self) -> usize {
        self.0.n_it()
    }

    #[getter]
    fn n_et(&self) -> usize {
        self.0.n_et()
    }

    /// `(rrh, distance)` of the RRH nearest to an ET.
    fn assigned_rrh(&self, et: usize) -> PyResult<(usize, f64)> {
        if et >= self.0.n_et() {
            return Err(CranSwiptError::new_err("ET index out of range"));
        }
        Ok(self.0.assigned_rrh(et))
    }

    fn __repr__(&self) -> String {
        format!("Topology(n_rrh={}, n_it={}, n_et={})", self.0.n_rrh(), self.0.n_it(), self.0.n_et())
    }
}

#[pyclass(name = "Channels", frozen)]
struct PyChannels(ChannelRealization);

#[pymethods]
impl PyChannels {
    #[staticmethod]
    #[pyo3(signature = (topology, seed, slot, alpha_abs=2.5))]
    fn draw(topology: &PyTopology, seed: u64, slot: u64, alpha_abs: f64) -> PyResult<Self> {
        topology::draw_channels(&topology.0, seed, slot, alpha_abs).map(Self).map_err(py_err)
    }

    /// IT channel gains `|h|^2` as rows of RRHs.
    fn it_gains(&self) -> Vec<Vec<f64>> {
        let h = &self.0.h_id;
        (0..h.nrows()).map(|n| (0..h.ncols()).map(|i| h[(n, i)].norm_sqr()).collect()).collect()
    }
}

#[pyclass(name = "SystemParams")]
struct PyParams(beamform::SystemParams);

#[pymethods]
impl PyParams {
    #[new]
    #[pyo3(signature = (n_rrh=3, n_it=4))]
    fn new(n_rrh: usize, n_it: usize) -> Self {
        Self(beamform::SystemParams::reference_defaults(n_rrh, n_it))
    }

    #[getter]
    fn get_sinr_min(&self) -> f64 {
        self.0.sinr_min
    }
    #[setter]
    fn set_sinr_min(&mut self, v: f64) {
        self.0.sinr_min = v;
    }
    #[getter]
    fn get_p_amin(&self) -> f64 {
        self.0.p_amin
    }
    #[setter]
    fn set_p_amin(&mut self, v: f64) {
        self.0.p_amin = v;
    }
    #[getter]
    fn get_p_fmin(&self) -> f64 {
        self.0.p_fmin
    }
    #[setter]
    fn set_p_fmin(&mut self, v: f64) {
        self.0.p_fmin = v;
    }
    #[getter]
    fn get_eta(&self) -> f64 {
        self.0.eta
    }
    #[setter]
    fn set_eta(&mut self, v: f64) {
        self.0.eta = v;
    }
    #[getter]
    fn get_alpha_abs(&self) -> f64 {
        self.0.alpha_abs
    }
    #[setter]
    fn set_alpha_abs(&mut self, v: f64) {
        self.0.alpha_abs = v;
    }
    #[getter]
    fn get_p_en(&self) -> Vec<f64> {
        self.0.p_en.clone()
    }
    #[setter]
    fn set_p_en(&mut self, v: Vec<f64>) {
        self.0.p_en = v;
    }
    #[getter]
    fn get_noise_power(&self) -> Vec<f64> {
        self.0.noise_power.clone()
    }
    #[setter]
    fn set_noise_power(&mut self, v: Vec<f64>) {
        self.0.noise_power = v;
    }

    fn validate(&self) -> PyResult<()> {
        self.0.validate().map_err(py_err)
    }

    fn free_charge_range(&self, p_op: f64) -> f64 {
        beamform::free_charge_range(p_op, &self.0)
    }

    fn __repr__(&self) -> String {
        format!("SystemParams(sinr_min={}, p_amin={}, p_fmin={})", self.0.sinr_min, self.0.p_amin, self.0.p_fmin)
    }
}

#[pyclass(name = "DivisionResult", frozen)]
struct PyDivisionResult(DivisionRunResult);

#[pymethods]
impl PyDivisionResult {
    /// Objective in W, `None` when infeasible.
    #[getter]
    fn objective(&self) -> Option<f64> {
        self.0.objective()
    }

    #[getter]
    fn feasible(&self) -> bool {
        self.0.is_feasible()
    }

    /// Bit `i` set means ET `i` is an FET.
    #[getter]
    fn division(&self) -> u64 {
        self.0.final_division.bitmask()
    }

    #[getter]
    fn fet_set(&self) -> Vec<usize> {
        self.0.final_division.fet_set()
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.0.iterations
    }

    #[getter]
    fn termination(&self) -> &'static str {
        self.0.termination.as_str()
    }

    #[getter]
    fn p_op(&self) -> Option<Vec<f64>> {
        self.0.report.as_ref().map(|r| r.p_op.clone())
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    fn __repr__(&self) -> String {
        format!(
            "DivisionResult(objective={:?}, division={}, termination={})",
            self.0.objective(),
            self.0.final_division.bitstring(),
            self.0.termination.as_str()
        )
    }
}

/// Runs one of `alg1`, `alg2`, `all_fet`, `all_met`, `brute_force`.
#[pyfunction]
fn run_division(
    algorithm: &str,
    topology: &PyTopology,
    channels: &PyChannels,
    params: &PyParams,
) -> PyResult<PyDivisionResult> {
    let alg: Algorithm = algorithm.parse().map_err(py_err)?;
    alg.run(&topology.0, &channels.0, &params.0, &DivisionOptions::default())
        .map(PyDivisionResult)
        .map_err(py_err)
}

/// Returns `(fet_frequency, frozen_bitmask)`.
#[pyfunction]
#[pyo3(signature = (topology, seed, params, q_training=10, threshold=0.5, algorithm="alg2"))]
fn training_stage(
    topology: &PyTopology,
    seed: u64,
    params: &PyParams,
    q_training: usize,
    threshold: f64,
    algorithm: &str,
) -> PyResult<(Vec<f64>, u64)> {
    let alg: Algorithm = algorithm.parse().map_err(py_err)?;
    let t = longterm::training_stage(&topology.0, seed, q_training, threshold, &params.0, alg, &DivisionOptions::default())
        .map_err(py_err)?;
    Ok((t.fet_frequency, t.frozen_division.bitmask()))
}

/// Per-slot objectives (W, `None` if infeasible) under a frozen division.
#[pyfunction]
#[pyo3(signature = (topology, seed, division, params, first_slot=10, q_longterm=50))]
fn longterm_stage(
    topology: &PyTopology,
    seed: u64,
    division: u64,
    params: &PyParams,
    first_slot: u64,
    q_longterm: usize,
) -> PyResult<Vec<Option<f64>>> {
    let n = topology.0.n_et();
    if n < 64 && division >> n != 0 {
        return Err(CranSwiptError::new_err("division has bits beyond the ET count"));
    }
    let d = GroupDivision::from_bitmask(division, n);
    let r = longterm::longterm_stage(&topology.0, seed, &d, first_slot, q_longterm, &params.0, &DivisionOptions::default())
        .map_err(py_err)?;
    Ok(r.slots.iter().map(|s| s.report.as_ref().map(|p| p.objective)).collect())
}

/// Runs a CLI mode from a TOML config and returns `(csv, summary)`.
#[pyfunction]
#[pyo3(signature = (mode, config_toml=""))]
fn run_experiment(mode: &str, config_toml: &str) -> PyResult<(String, String)> {
    let cfg = ExperimentConfig::from_toml_str(config_toml).map_err(py_err)?;
    cfg.validate().map_err(py_err)?;
    let out = match mode {
        "single-slot" => experiment::run_single_slot(&cfg),
        "sweep" => experiment::run_sweep(&cfg),
        "longterm" => experiment::run_longterm(&cfg),
        other => return Err(CranSwiptError::new_err(format!("unknown mode {other}"))),
    }
    .map_err(py_err)?;
    Ok((experiment::rows_to_csv(&out.rows, true).map_err(py_err)?, out.summary))
}

/// Runs the invariant suite and returns `(passed, report)`.
#[pyfunction]
#[pyo3(signature = (config_toml=""))]
fn validate(config_toml: &str) -> PyResult<(bool, String)> {
    let cfg = ExperimentConfig::from_toml_str(config_toml).map_err(py_err)?;
    let r = experiment::run_validate(&cfg).map_err(py_err)?;
    Ok((r.passed(), r.render()))
}

#[pymodule]
fn cran_swipt_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CranSwiptError", m.py().get_type::<CranSwiptError>())?;
    m.add_class::<PyTopology>()?;
    m.add_class::<PyChannels>()?;
    m.add_class::<PyParams>()?;
    m.add_class::<PyDivisionResult>()?;
    m.add_function(wrap_pyfunction!(run_division, m)?)?;
    m.add_function(wrap_pyfunction!(training_stage, m)?)?;
    m.add_function(wrap_pyfunction!(longterm_stage, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    Ok(())
}
