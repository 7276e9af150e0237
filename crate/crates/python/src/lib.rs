//! Python module `mspgd`: scenarios, screens, Zernike modes, fiber coupling
//! and the experiment drivers.

use mspgd_core::config::{ScenarioConfig, PRESETS};
use mspgd_core::experiment;
use mspgd_core::metrics;
use mspgd_core::optics::{optimize_mode_radius, PupilGeometry};
use mspgd_core::turbulence;
use mspgd_core::zernike;
use mspgd_core::Error;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config { .. } | Error::Geometry(_) | Error::Domain(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// A validated scenario. Build one from a preset name or TOML text.
#[pyclass(name = "Scenario", from_py_object)]
#[derive(Clone)]
struct PyScenario {
    cfg: ScenarioConfig,
}

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        ScenarioConfig::preset(name).map(|cfg| PyScenario { cfg }).map_err(to_py)
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        ScenarioConfig::parse(text).map(|cfg| PyScenario { cfg }).map_err(to_py)
    }

    #[getter]
    fn name(&self) -> String {
        self.cfg.run.name.clone()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.cfg.run.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.cfg.run.seed = seed;
    }

    #[getter]
    fn duration(&self) -> f64 {
        self.cfg.run.duration
    }

    #[setter]
    fn set_duration(&mut self, duration: f64) -> PyResult<()> {
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(PyValueError::new_err("duration must be positive"));
        }
        self.cfg.run.duration = duration;
        Ok(())
    }

    #[getter]
    fn r0_810nm(&self) -> f64 {
        self.cfg.turbulence.r0_810nm
    }

    fn __repr__(&self) -> String {
        format!("Scenario({:?}, seed={}, duration={})", self.cfg.run.name, self.cfg.run.seed, self.cfg.run.duration)
    }

    /// Paired open- and closed-loop runs; returns the summary as a dict.
    fn simulate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let cfg = self.cfg.clone();
        let sim = py.detach(move || experiment::simulate(&cfg)).map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("mean_eta_open", sim.summary.mean_eta_open)?;
        d.set_item("mean_eta_closed", sim.summary.mean_eta_closed)?;
        d.set_item("improvement_db", sim.summary.improvement_db)?;
        d.set_item("rsd_open", sim.summary.rsd_open)?;
        d.set_item("rsd_closed", sim.summary.rsd_closed)?;
        d.set_item("median_improvement_db", sim.median_improvement_db)?;
        d.set_item("median_rsd_reduction", sim.median_rsd_reduction)?;
        d.set_item("closed_rsd_below_open_in_every_seed", sim.closed_rsd_below_open_in_every_seed())?;
        d.set_item("gain", sim.gain)?;
        d.set_item("amplitude", sim.amplitude)?;
        let seeds: Vec<(u64, Vec<f64>, Vec<f64>)> =
            sim.runs.iter().map(|r| (r.seed, r.open.eta(), r.closed.eta())).collect();
        d.set_item("runs", seeds)?;
        Ok(d)
    }

    /// SPGD against M-SPGD on static aberrations.
    fn race<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let cfg = self.cfg.clone();
        let r = py.detach(move || experiment::race(&cfg)).map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("wins", r.wins)?;
        d.set_item("losses", r.losses)?;
        d.set_item("ties", r.ties)?;
        d.set_item("p_value", r.p_value)?;
        d.set_item("verdict", r.verdict.describe())?;
        d.set_item("insufficient_sample", r.insufficient_sample)?;
        d.set_item("spgd_median_evaluations", r.spgd_median_evaluations)?;
        d.set_item("mspgd_median_evaluations", r.mspgd_median_evaluations)?;
        Ok(d)
    }

    /// Amplitude and gain grid search; returns the winning cell.
    fn autotune<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let cfg = self.cfg.clone();
        let r = py.detach(move || experiment::autotune_scenario(&cfg)).map_err(to_py)?;
        let best = r.best().map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("amplitude", best.amplitude)?;
        d.set_item("gain", best.gain)?;
        d.set_item("mean_eta", best.mean_eta)?;
        d.set_item("open_loop_mean", r.open_loop_mean)?;
        d.set_item("on_boundary", r.on_boundary())?;
        Ok(d)
    }

    /// Fried parameter recovered from synthesized angle-of-arrival records.
    fn estimate_r0<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let cfg = self.cfg.clone();
        let r = py.detach(move || experiment::estimate_r0_from_scenario(&cfg)).map_err(to_py)?;
        r0_dict(py, &r)
    }
}

fn r0_dict<'py>(py: Python<'py>, r: &experiment::R0Report) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("delta_alpha", r.delta_alpha)?;
    d.set_item("r0_810nm", r.r0_810nm)?;
    d.set_item("d_over_r0_810nm", r.d_over_r0_810nm)?;
    d.set_item("r0_signal", r.r0_signal)?;
    d.set_item("d_over_r0_signal", r.d_over_r0_signal)?;
    d.set_item("records", r.records.len())?;
    Ok(d)
}

/// Names of the bundled presets.
#[pyfunction]
fn presets() -> Vec<&'static str> {
    PRESETS.to_vec()
}

/// Row-major Kolmogorov/von Kármán phase screen in radians at 810 nm.
#[pyfunction]
#[pyo3(signature = (r0, grid_size, pixel_pitch, seed, outer_scale = f64::INFINITY))]
fn phase_screen(r0: f64, grid_size: usize, pixel_pitch: f64, seed: u64, outer_scale: f64) -> PyResult<Vec<f64>> {
    turbulence::generate_screen(r0, outer_scale, grid_size, pixel_pitch, seed)
        .map(|s| s.phase().to_vec())
        .map_err(to_py)
}

/// Fried parameter rescaled between wavelengths.
#[pyfunction]
fn scale_r0(r0: f64, wavelength_ref: f64, wavelength_target: f64) -> f64 {
    turbulence::scale_r0(r0, wavelength_ref, wavelength_target)
}

/// Fried parameter at 810 nm from a CSV-free list of (x, y) tilt angles.
#[pyfunction]
fn estimate_r0<'py>(py: Python<'py>, series: Vec<(f64, f64)>, aperture: f64, signal_wavelength: f64) -> PyResult<Bound<'py, PyDict>> {
    let s: Vec<[f64; 2]> = series.into_iter().map(|(x, y)| [x, y]).collect();
    let r = experiment::estimate_r0_from_series(&s, aperture, signal_wavelength).map_err(to_py)?;
    r0_dict(py, &r)
}

/// Radial and azimuthal orders of Noll index `j`.
#[pyfunction]
fn noll_to_nm(j: usize) -> PyResult<(u32, i32)> {
    zernike::noll_to_nm(j).map_err(to_py)
}

/// Noll-normalized Zernike mode `j` at polar coordinates on the unit disk.
#[pyfunction]
fn zernike_value(j: usize, rho: f64, theta: f64) -> PyResult<f64> {
    zernike::evaluate(j, rho, theta).map_err(to_py)
}

/// Least-squares coefficients of modes 1..=count for a row-major phase map.
#[pyfunction]
fn zernike_fit(phase: Vec<f64>, mode_count: usize, grid_size: usize) -> PyResult<Vec<f64>> {
    let basis = zernike::sample_basis(mode_count, grid_size).map_err(to_py)?;
    basis.fit(&phase).map(|f| f.coefficients).map_err(to_py)
}

/// Row-major phase map from coefficients of modes 1..=len.
#[pyfunction]
fn zernike_synthesize(coefficients: Vec<f64>, grid_size: usize) -> PyResult<Vec<f64>> {
    let basis = zernike::sample_basis(coefficients.len(), grid_size).map_err(to_py)?;
    basis.synthesize(&coefficients).map_err(to_py)
}

/// Fiber mode radius maximizing flat-wavefront coupling, and that efficiency.
#[pyfunction]
#[pyo3(signature = (aperture, focal_length, wavelength, grid_size = 64, padding = 4))]
fn optimal_mode_radius(aperture: f64, focal_length: f64, wavelength: f64, grid_size: usize, padding: usize) -> PyResult<(f64, f64)> {
    let g = PupilGeometry::new(aperture, grid_size);
    optimize_mode_radius(&g, focal_length, wavelength, padding)
        .map(|o| (o.mode_field_radius, o.efficiency))
        .map_err(to_py)
}

/// Power gain of `closed` over `open` in decibels.
#[pyfunction]
fn improvement_db(open: Vec<f64>, closed: Vec<f64>) -> PyResult<f64> {
    metrics::improvement_db(&open, &closed).map_err(to_py)
}

/// Relative standard deviation in percent.
#[pyfunction]
fn rsd(series: Vec<f64>) -> PyResult<f64> {
    metrics::rsd(&series).map_err(to_py)
}

#[pymodule]
fn mspgd(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(phase_screen, m)?)?;
    m.add_function(wrap_pyfunction!(scale_r0, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_r0, m)?)?;
    m.add_function(wrap_pyfunction!(noll_to_nm, m)?)?;
    m.add_function(wrap_pyfunction!(zernike_value, m)?)?;
    m.add_function(wrap_pyfunction!(zernike_fit, m)?)?;
    m.add_function(wrap_pyfunction!(zernike_synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_mode_radius, m)?)?;
    m.add_function(wrap_pyfunction!(improvement_db, m)?)?;
    m.add_function(wrap_pyfunction!(rsd, m)?)?;
    Ok(())
}
