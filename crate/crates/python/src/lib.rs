//! Python bindings. Structured results come back as plain dicts and
//! lists (serialized through JSON), models as an opaque `Model` class.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde::Serialize;

use ::exphormer_xc as core;
use core::fci::{dissociation_dataset, fci_geometry};
use core::graph::{assemble, expander_edges, spectral_gap, EdgeKind, GraphConfig};
use core::grid::{build_grid, GridPreset};
use core::nn::{ModelConfig, Variant};
use core::scf::{scf_solve, ScfConfig, ScfMode, System, XcFunctional};
use core::train::{dissociation_experiment, train, Dataset, TrainConfig};
use core::xc::XcKind;

fn err(e: core::Error) -> PyErr {
    match e {
        core::Error::Config(_) | core::Error::Geometry(_) | core::Error::Parse(_) | core::Error::Domain(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, v: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (s,))
}

fn from_json<T: serde::de::DeserializeOwned>(s: &str) -> PyResult<T> {
    serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn preset(name: &str) -> PyResult<GridPreset> {
    if name.trim_start().starts_with('{') {
        from_json(name)
    } else {
        GridPreset::parse(name).map_err(err)
    }
}

/// Hydrogen-only nuclear configuration in Bohr.
#[pyclass(module = "exphormer_xc", from_py_object)]
#[derive(Clone)]
struct Geometry {
    inner: core::Geometry,
}

#[pymethods]
impl Geometry {
    #[new]
    #[pyo3(signature = (positions, charge = 0, multiplicity = None))]
    fn new(positions: Vec<[f64; 3]>, charge: i32, multiplicity: Option<u32>) -> Self {
        let mut g = core::Geometry::new(positions);
        g.charge = charge;
        if let Some(m) = multiplicity {
            g.multiplicity = m;
        }
        Geometry { inner: g }
    }

    #[staticmethod]
    fn atom() -> Self {
        Geometry { inner: core::Geometry::hydrogen_atom() }
    }

    /// H2 at `s` times the equilibrium bond length.
    #[staticmethod]
    fn h2(s: f64) -> Self {
        Geometry { inner: core::Geometry::h2_scaled(s) }
    }

    #[staticmethod]
    #[pyo3(signature = (theta, r = 2.0))]
    fn h4(theta: f64, r: f64) -> Self {
        Geometry { inner: core::Geometry::h4(theta, r) }
    }

    #[staticmethod]
    fn chain(n: usize, spacing: f64) -> Self {
        Geometry { inner: core::Geometry::chain(n, spacing) }
    }

    #[staticmethod]
    fn from_xyz(text: &str) -> PyResult<Self> {
        Ok(Geometry { inner: core::Geometry::from_xyz(text).map_err(err)? })
    }

    #[getter]
    fn positions(&self) -> Vec<[f64; 3]> {
        self.inner.positions.clone()
    }

    #[getter]
    fn n_atoms(&self) -> usize {
        self.inner.n_atoms()
    }

    fn nuclear_repulsion(&self) -> PyResult<f64> {
        self.inner.nuclear_repulsion().map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Geometry({:?})", self.inner.positions)
    }
}

/// Network parameters plus configuration.
#[pyclass(module = "exphormer_xc")]
struct Model {
    inner: core::nn::Model,
}

#[pymethods]
impl Model {
    /// Fresh model; `config` is a JSON object overriding the variant defaults.
    #[new]
    #[pyo3(signature = (variant = "exphormer-full", seed = 0, config = None))]
    fn new(variant: &str, seed: u64, config: Option<&str>) -> PyResult<Self> {
        let mut c = ModelConfig::new(Variant::parse(variant).map_err(err)?);
        if let Some(s) = config {
            let mut v = serde_json::to_value(&c).expect("config serializes");
            let over: serde_json::Value = from_json(s)?;
            if let (Some(a), Some(b)) = (v.as_object_mut(), over.as_object()) {
                a.extend(b.clone());
            }
            c = serde_json::from_value(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
        }
        Ok(Model { inner: core::nn::Model::init(c, seed).map_err(err)? })
    }

    #[staticmethod]
    fn load(data: &[u8]) -> PyResult<Self> {
        Ok(Model { inner: core::nn::Model::load(data).map_err(err)?.0 })
    }

    fn save<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        Ok(PyBytes::new(py, &self.inner.save(serde_json::Value::Null).map_err(err)?))
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.inner.config.variant.name()
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.inner.beta()
    }

    #[getter]
    fn n_parameters(&self) -> usize {
        self.inner.params.n_scalars()
    }

    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.config)
    }
}

#[pyfunction]
#[pyo3(signature = (geometry, grid = "coarse"))]
fn grid_summary<'py>(py: Python<'py>, geometry: &Geometry, grid: &str) -> PyResult<Bound<'py, PyAny>> {
    let g = build_grid(&geometry.inner, &preset(grid)?).map_err(err)?;
    let points: Vec<[f64; 4]> = (0..g.len()).map(|i| [g.points[i][0], g.points[i][1], g.points[i][2], g.weights[i]]).collect();
    to_py(py, &serde_json::json!({ "n_points": g.len(), "points": points }))
}

#[pyfunction]
#[pyo3(signature = (geometry, grid = "coarse", alpha = 0.5, expander_degree = 6, n_global = 10, seed = 0))]
fn graph_summary<'py>(py: Python<'py>, geometry: &Geometry, grid: &str, alpha: f64, expander_degree: usize, n_global: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let g = build_grid(&geometry.inner, &preset(grid)?).map_err(err)?;
    let graph = assemble(&g, &GraphConfig { alpha, expander_degree, n_global, seed }).map_err(err)?;
    to_py(py, &serde_json::json!({
        "n_grid": graph.n_grid,
        "local": graph.count(EdgeKind::Local),
        "expander": graph.count(EdgeKind::Expander),
        "global": graph.count(EdgeKind::Global),
    }))
}

/// Spectral report of one seeded d-regular expander.
#[pyfunction]
#[pyo3(signature = (n, degree = 6, seed = 0))]
fn expander_spectrum<'py>(py: Python<'py>, n: usize, degree: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let pairs = expander_edges(n, degree, seed).map_err(err)?;
    to_py(py, &spectral_gap(&pairs, n, degree).map_err(err)?)
}

/// One SCF run; `model` is required for the exphormer functionals.
#[pyfunction]
#[pyo3(signature = (geometry, xc = "pw92", mode = "rks", grid = "coarse", basis = "6-31g", model = None, seed = 0, break_symmetry = false, threshold = 1e-7))]
#[allow(clippy::too_many_arguments)]
fn scf<'py>(
    py: Python<'py>,
    geometry: &Geometry,
    xc: &str,
    mode: &str,
    grid: &str,
    basis: &str,
    model: Option<&Model>,
    seed: u64,
    break_symmetry: bool,
    threshold: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let kind = XcKind::parse(xc).map_err(err)?;
    let cfg = ScfConfig { break_symmetry, threshold, ..ScfConfig::new(ScfMode::parse(mode).map_err(err)?) };
    let mut sys = System::new(geometry.inner.clone(), basis, &preset(grid)?).map_err(err)?;
    let st = match (kind.is_learned(), model) {
        (false, None) => scf_solve(&sys, &XcFunctional::plain(kind.base()), &cfg),
        (true, Some(m)) => {
            let m = &m.inner;
            if m.config.variant.uses_graph() {
                let g = GraphConfig { seed, n_global: m.config.n_global, ..GraphConfig::default() };
                sys = sys.with_graph(&m.config.variant.graph_config(&g)).map_err(err)?;
            }
            let f = XcFunctional::learned(kind.base(), m, &sys).map_err(err)?;
            scf_solve(&sys, &f, &cfg)
        }
        (true, None) => return Err(PyValueError::new_err(format!("{xc} needs a model"))),
        (false, Some(_)) => return Err(PyValueError::new_err(format!("{xc} does not take a model"))),
    }
    .map_err(err)?;
    to_py(py, &st.summary())
}

#[pyfunction]
#[pyo3(signature = (geometry, basis = "6-31g", roots = 2))]
fn fci<'py>(py: Python<'py>, geometry: &Geometry, basis: &str, roots: usize) -> PyResult<Bound<'py, PyAny>> {
    let f = fci_geometry(&geometry.inner, basis, roots).map_err(err)?;
    to_py(py, &serde_json::json!({ "energies": f.energies, "s2": f.s2, "dimension": f.space.dim() }))
}

#[pyfunction]
#[pyo3(signature = (s_values, basis = "6-31g"))]
fn fci_dissociation<'py>(py: Python<'py>, s_values: Vec<f64>, basis: &str) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &dissociation_dataset(&s_values, basis, 2).map_err(err)?)
}

/// Trains from a JSON training config; returns `(record, model)`.
#[pyfunction]
#[pyo3(signature = (config = "{}"))]
fn train_model<'py>(py: Python<'py>, config: &str) -> PyResult<(Bound<'py, PyAny>, Model)> {
    let cfg: TrainConfig = from_json(config)?;
    let out = py.detach(|| Dataset::build(&cfg).and_then(|d| train(&cfg, &d))).map_err(err)?;
    Ok((to_py(py, &out.record)?, Model { inner: out.model }))
}

#[pyfunction]
#[pyo3(signature = (s_values, config = "{}", model = None))]
fn dissociation_curve<'py>(py: Python<'py>, s_values: Vec<f64>, config: &str, model: Option<&Model>) -> PyResult<Bound<'py, PyAny>> {
    let cfg: TrainConfig = from_json(config)?;
    let pts = dissociation_experiment(model.map(|m| &m.inner), &cfg, &s_values).map_err(err)?;
    to_py(py, &pts)
}

#[pymodule]
fn exphormer_xc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("KCAL_PER_HARTREE", core::units::KCAL_PER_HARTREE)?;
    m.add_class::<Geometry>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(grid_summary, m)?)?;
    m.add_function(wrap_pyfunction!(graph_summary, m)?)?;
    m.add_function(wrap_pyfunction!(expander_spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(scf, m)?)?;
    m.add_function(wrap_pyfunction!(fci, m)?)?;
    m.add_function(wrap_pyfunction!(fci_dissociation, m)?)?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    m.add_function(wrap_pyfunction!(dissociation_curve, m)?)?;
    Ok(())
}
