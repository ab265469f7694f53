//! Python bindings.
//!
//! Results are returned as plain dicts and lists.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;

use ruralmimo_core::channel;
use ruralmimo_core::econ::{self, TrafficModel, UlTableEntry};
use ruralmimo_core::geodata;
use ruralmimo_core::montecarlo::{self, CoverageSearch, DropEnsemble, Link, McError};
use ruralmimo_core::scenario::{self, Band, BsType};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn mc_err(e: McError) -> PyErr {
    match e {
        McError::Config(_) | McError::InvalidEnsemble(_) => value_err(e),
        other => runtime_err(other),
    }
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let d = PyDict::new(py);
            for (k, item) in map {
                d.set_item(k, to_py(py, item)?)?;
            }
            d.into_any()
        }
    })
}

fn serialize<'py, T: serde::Serialize>(py: Python<'py>, x: &T) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &serde_json::to_value(x).map_err(runtime_err)?)
}

fn band_from_mhz(mhz: f64) -> PyResult<Band> {
    Band::ALL
        .into_iter()
        .find(|b| b.carrier_mhz() == mhz)
        .ok_or_else(|| value_err(format!("no preset band at {mhz} MHz (700, 1800 or 3500)")))
}

/// Validated simulation scenario.
#[pyclass(name = "Scenario", frozen, skip_from_py_object, module = "ruralmimo")]
#[derive(Clone)]
struct PyScenario {
    inner: scenario::Scenario,
}

#[pymethods]
impl PyScenario {
    /// Parses a scenario TOML document.
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        scenario::parse_scenario(text)
            .map(|inner| Self { inner })
            .map_err(value_err)
    }

    /// Reference parameters for a BS type ("htbs"/"legacy"), user count,
    /// carrier (700, 1800 or 3500 MHz) and EIRP cap.
    #[staticmethod]
    #[pyo3(signature = (bs_type, num_users, carrier_mhz = 700.0, eirp_dbm = 23.0))]
    fn preset(bs_type: &str, num_users: usize, carrier_mhz: f64, eirp_dbm: f64) -> PyResult<Self> {
        let t: BsType = bs_type.parse().map_err(value_err)?;
        let band = band_from_mhz(carrier_mhz)?;
        let mut doc = scenario::reference_document(t, num_users, band);
        doc.insert("eirp_max_dbm".into(), eirp_dbm.into());
        scenario::validate(&doc).map(|inner| Self { inner }).map_err(value_err)
    }

    /// Copy with some keys replaced, e.g. `s.replace(m_horizontal=16)`.
    #[pyo3(signature = (**changes))]
    fn replace(&self, changes: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut doc = self.inner.to_document();
        if let Some(changes) = changes {
            for (k, v) in changes.iter() {
                let key: String = k.extract()?;
                let value = if let Ok(b) = v.extract::<bool>() {
                    toml::Value::Boolean(b)
                } else if let Ok(i) = v.extract::<i64>() {
                    toml::Value::Integer(i)
                } else if let Ok(x) = v.extract::<f64>() {
                    toml::Value::Float(x)
                } else {
                    toml::Value::String(v.extract::<String>()?)
                };
                doc.insert(key, value);
            }
        }
        scenario::validate(&doc).map(|inner| Self { inner }).map_err(value_err)
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml_string()
    }

    #[getter]
    fn num_users(&self) -> usize {
        self.inner.num_users
    }

    #[getter]
    fn num_ports(&self) -> usize {
        self.inner.num_ports()
    }

    #[getter]
    fn bs_type(&self) -> String {
        self.inner.bs_type.to_string()
    }

    #[getter]
    fn carrier_frequency_hz(&self) -> f64 {
        self.inner.carrier_frequency_hz
    }

    #[getter]
    fn eirp_max_dbm(&self) -> f64 {
        self.inner.eirp_max_dbm
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    /// Receiver noise power over the bandwidth [W].
    fn noise_power(&self) -> f64 {
        self.inner.noise_power()
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(bs_type={}, num_users={}, fc={} MHz, M={}, eirp={} dBm)",
            self.inner.bs_type,
            self.inner.num_users,
            self.inner.carrier_frequency_hz / 1e6,
            self.inner.num_ports(),
            self.inner.eirp_max_dbm
        )
    }
}

/// Rural-macro path loss [dB] at a 2D distance.
#[pyfunction]
fn path_loss(scenario: &PyScenario, distance_m: f64, los: bool) -> PyResult<f64> {
    channel::path_loss(&scenario.inner, distance_m, los).map_err(value_err)
}

fn ensemble(drops: usize, radius_km: f64, seed: Option<u64>, scenario: &PyScenario) -> PyResult<DropEnsemble> {
    let e = DropEnsemble::new(drops, radius_km * 1e3, seed.unwrap_or(scenario.inner.seed));
    e.check().map_err(mc_err)?;
    Ok(e)
}

/// Percentiles of the pooled per-user rate over `drops` random drops on a
/// disk of `distance_km`. `link` is "ul" or "dl".
#[pyfunction]
#[pyo3(signature = (scenario, distance_km, drops = 200, link = "ul", seed = None))]
fn rate_experiment<'py>(
    py: Python<'py>,
    scenario: &PyScenario,
    distance_km: f64,
    drops: usize,
    link: &str,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyAny>> {
    let link: Link = link.parse().map_err(value_err)?;
    let ens = ensemble(drops, distance_km, seed, scenario)?;
    let s = scenario.inner.clone();
    let summary = py
        .detach(move || match link {
            Link::Ul => montecarlo::ul_rate_experiment(&s, &ens),
            Link::Dl => montecarlo::dl_rate_experiment(&s, &ens),
        })
        .map_err(mc_err)?;
    serialize(py, &summary)
}

/// Coverage distance for a rate target; saturated results are returned
/// with `saturated = True`.
#[pyfunction]
#[pyo3(signature = (scenario, target_mbps = 10.0, percentile = 5.0, link = "dl", drops = 200, seed = None))]
fn coverage<'py>(
    py: Python<'py>,
    scenario: &PyScenario,
    target_mbps: f64,
    percentile: f64,
    link: &str,
    drops: usize,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyAny>> {
    let link: Link = link.parse().map_err(value_err)?;
    let search = CoverageSearch::default();
    let ens = ensemble(drops, search.max_radius_m / 1e3, seed, scenario)?;
    let s = scenario.inner.clone();
    let result = py.detach(move || montecarlo::coverage_search(&s, &ens, target_mbps * 1e6, percentile, link, &search));
    match result {
        Ok(r) => serialize(py, &r),
        Err(McError::NoUpperBracket(r)) => serialize(py, &*r),
        Err(e) => Err(mc_err(e)),
    }
}

/// Runs a sweep grid (TOML text) and returns the CSV table.
#[pyfunction]
fn sweep(py: Python<'_>, grid_toml: &str) -> PyResult<String> {
    let grid = montecarlo::parse_grid(grid_toml).map_err(value_err)?;
    let rows = py.detach(|| montecarlo::run_sweep(&grid));
    let mut buf = Vec::new();
    montecarlo::write_sweep_csv(&rows, &mut buf).map_err(runtime_err)?;
    String::from_utf8(buf).map_err(runtime_err)
}

/// Average busy-hour rate of one subscriber [bps].
#[pyfunction]
#[pyo3(signature = (link, ul_gb_per_month = 1.0, dl_gb_per_month = 5.0, busy_hours_per_day = 10.0, days_per_month = 30))]
fn avg_user_rate(link: &str, ul_gb_per_month: f64, dl_gb_per_month: f64, busy_hours_per_day: f64, days_per_month: u32) -> PyResult<f64> {
    let link: Link = link.parse().map_err(value_err)?;
    let t = TrafficModel {
        ul_gb_per_month,
        dl_gb_per_month,
        busy_hours_per_day,
        days_per_month,
    };
    t.check().map_err(value_err)?;
    Ok(econ::avg_user_rate(&t, link))
}

/// Covered users and minimum EIRP. `ul_table` maps EIRP [dBm] to the
/// 5th-percentile UL rate per user [Mbps].
#[pyfunction]
#[pyo3(signature = (d_cov_km, num_users, ul_table, target_dl_mbps = 10.0))]
fn econ_report<'py>(
    py: Python<'py>,
    d_cov_km: f64,
    num_users: usize,
    ul_table: Vec<(f64, f64)>,
    target_dl_mbps: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let table: Vec<UlTableEntry> = ul_table
        .into_iter()
        .map(|(eirp_dbm, mbps)| UlTableEntry {
            eirp_dbm,
            rate_bps: mbps * 1e6,
        })
        .collect();
    let r = econ::econ_report(d_cov_km, num_users, target_dl_mbps * 1e6, &TrafficModel::default(), &table).map_err(value_err)?;
    serialize(py, &r)
}

/// Ranks candidate sites in a raster file by closeness to `rho`.
#[pyfunction]
#[pyo3(signature = (raster_path, rho, radius_km, top = 3))]
fn find_sites<'py>(py: Python<'py>, raster_path: &str, rho: f64, radius_km: f64, top: usize) -> PyResult<Bound<'py, PyAny>> {
    let r = geodata::load_raster(raster_path).map_err(value_err)?;
    let sites = py.detach(|| geodata::find_sites(&r, rho, radius_km, top)).map_err(value_err)?;
    serialize(py, &sites)
}

#[pymodule]
fn ruralmimo(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_function(wrap_pyfunction!(path_loss, m)?)?;
    m.add_function(wrap_pyfunction!(rate_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(coverage, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(avg_user_rate, m)?)?;
    m.add_function(wrap_pyfunction!(econ_report, m)?)?;
    m.add_function(wrap_pyfunction!(find_sites, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
