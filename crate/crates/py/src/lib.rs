//! Python bindings: a `System` class wrapping a control system plus free
//! functions for the bilinear eigenvalue test and the worked examples.
//! Structured reports cross the boundary as plain dicts/lists.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;

use orbitctl::bilinear::{theorem_b_check, BilinearSystem3};
use orbitctl::config::RunConfig;
use orbitctl::fields::ControlSystem;
use orbitctl::flow::{chrono_map, general_schedule, IntegratorOptions, Schedule};
use orbitctl::lie::larc_check;
use orbitctl::manifold::point;
use orbitctl::reach::{
    ample_check, coverage, find_closed_orbit, reach_sample, ReachOptions,
};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Convert a JSON value into native Python objects.
fn json_to_py(py: Python<'_>, v: &Value) -> PyResult<Py<PyAny>> {
    Ok(match v {
        Value::Null => py.None(),
        Value::Bool(b) => pyo3::types::PyBool::new(py, *b).to_owned().into_any().unbind(),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_pyobject(py)?.into_any().unbind()
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any().unbind()
            }
        }
        Value::String(s) => s.as_str().into_pyobject(py)?.into_any().unbind(),
        Value::Array(items) => {
            let converted: Vec<Py<PyAny>> =
                items.iter().map(|x| json_to_py(py, x)).collect::<PyResult<_>>()?;
            PyList::new(py, converted)?.into_any().unbind()
        }
        Value::Object(map) => {
            let d = PyDict::new(py);
            for (k, x) in map {
                d.set_item(k, json_to_py(py, x)?)?;
            }
            d.into_any().unbind()
        }
    })
}

fn report_to_py<T: serde::Serialize>(py: Python<'_>, report: &T) -> PyResult<Py<PyAny>> {
    json_to_py(py, &serde_json::to_value(report).map_err(err)?)
}

fn int_opts(step: f64) -> IntegratorOptions {
    IntegratorOptions { step, ..Default::default() }
}

/// A control system: a manifold together with a finite set of generator
/// vector fields.
#[pyclass]
struct System {
    inner: ControlSystem,
}

#[pymethods]
impl System {
    /// Build from the JSON config format also accepted by the CLI:
    /// either `{"builtin": name, "params": {...}}` or
    /// `{"manifold": {...}, "generators": [...]}`.
    #[staticmethod]
    fn from_config(text: &str) -> PyResult<Self> {
        let inner = RunConfig::from_str(text).map_err(err)?.build().map_err(err)?;
        Ok(Self { inner })
    }

    /// Build a named builtin system; `params` is an optional JSON string.
    #[staticmethod]
    #[pyo3(signature = (name, params=None))]
    fn builtin(name: &str, params: Option<&str>) -> PyResult<Self> {
        let params: Value = match params {
            Some(text) => serde_json::from_str(text).map_err(err)?,
            None => Value::Null,
        };
        Ok(Self { inner: orbitctl::fields::builtin(name, &params).map_err(err)? })
    }

    #[getter]
    fn generator_count(&self) -> usize {
        self.inner.generators.len()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.manifold.dim()
    }

    fn __repr__(&self) -> String {
        format!(
            "System(label={:?}, generators={}, dim={})",
            self.inner.label,
            self.inner.generators.len(),
            self.inner.manifold.dim()
        )
    }

    /// Iterated-bracket rank report at a point.
    #[pyo3(signature = (at, depth=None, tol=1e-7))]
    fn larc(
        &self,
        py: Python<'_>,
        at: Vec<f64>,
        depth: Option<usize>,
        tol: f64,
    ) -> PyResult<Py<PyAny>> {
        let depth = depth.unwrap_or(self.inner.manifold.ambient_dim() + 2);
        let report = larc_check(&self.inner, &point(&at), depth, tol).map_err(err)?;
        report_to_py(py, &report)
    }

    /// Integrate a piecewise-constant schedule `[(generator, duration), ...]`
    /// from `at`; negative durations flow backward.
    #[pyo3(signature = (schedule, at, step=1e-3))]
    fn flow(&self, schedule: Vec<(usize, f64)>, at: Vec<f64>, step: f64) -> PyResult<Vec<f64>> {
        let end = chrono_map(&self.inner, &Schedule::new(schedule), &point(&at), &int_opts(step))
            .map_err(err)?;
        Ok(end.iter().copied().collect())
    }

    /// Realize a schedule whose endpoint differential has full rank, built
    /// from commutator legs for a bracket basis at `at`.
    #[pyo3(signature = (at, t_scale=0.1, seed=0, forward_only=false, depth=None, step=1e-3))]
    fn general(
        &self,
        py: Python<'_>,
        at: Vec<f64>,
        t_scale: f64,
        seed: u64,
        forward_only: bool,
        depth: Option<usize>,
        step: f64,
    ) -> PyResult<Py<PyAny>> {
        let depth = depth.unwrap_or(self.inner.manifold.ambient_dim() + 2);
        let q = point(&at);
        let larc = larc_check(&self.inner, &q, depth, 1e-7).map_err(err)?;
        let result = general_schedule(
            &self.inner,
            &q,
            &larc.basis_words,
            t_scale,
            seed,
            forward_only,
            &int_opts(step),
        )
        .map_err(err)?;
        report_to_py(py, &result)
    }

    /// Sample reachable points with random schedules; returns the cloud as a
    /// list of points.
    #[pyo3(signature = (at, horizon=5.0, samples=500, legs=8, seed=0, step=1e-2, backward=false))]
    #[allow(clippy::too_many_arguments)]
    fn reach(
        &self,
        at: Vec<f64>,
        horizon: f64,
        samples: usize,
        legs: usize,
        seed: u64,
        step: f64,
        backward: bool,
    ) -> PyResult<Vec<Vec<f64>>> {
        let opts = ReachOptions {
            horizon,
            legs_per_sample: legs,
            samples,
            forward_only: !backward,
        };
        let cloud =
            reach_sample(&self.inner, &point(&at), &opts, &int_opts(step), seed).map_err(err)?;
        Ok(cloud.points.iter().map(|p| p.iter().copied().collect()).collect())
    }

    /// Fraction of a uniform cell grid hit by the given points (compact
    /// manifolds only).
    fn coverage(&self, points: Vec<Vec<f64>>, cells_per_axis: usize) -> PyResult<f64> {
        let cloud: Vec<_> = points.iter().map(|p| point(p)).collect();
        coverage(&self.inner.manifold, &cloud, cells_per_axis).map_err(err)
    }

    /// Search for a closed orbit of one generator through `at`; returns a
    /// dict or None.
    #[pyo3(signature = (generator, at, tmax=20.0, tol=1e-8, step=1e-3))]
    fn orbit(
        &self,
        py: Python<'_>,
        generator: usize,
        at: Vec<f64>,
        tmax: f64,
        tol: f64,
        step: f64,
    ) -> PyResult<Py<PyAny>> {
        let found = find_closed_orbit(&self.inner, generator, &point(&at), tmax, tol, &int_opts(step))
            .map_err(err)?;
        match found {
            Some(orbit) => report_to_py(py, &orbit),
            None => Ok(py.None()),
        }
    }

    /// Positive-spanning check of the generator values at a point.
    #[pyo3(signature = (at, tol=1e-9))]
    fn ample(&self, py: Python<'_>, at: Vec<f64>, tol: f64) -> PyResult<Py<PyAny>> {
        let q = self.inner.manifold.wrap(&point(&at)).map_err(err)?;
        let vectors: Result<Vec<_>, _> =
            self.inner.generators.iter().map(|g| g.eval(&q)).collect();
        let report = ample_check(&q, &vectors.map_err(err)?, tol);
        report_to_py(py, &report)
    }

    /// Survey random base points for the closed-orbit controllability
    /// criterium; returns the full report with a three-valued verdict.
    #[pyo3(signature = (orbit_seeds=vec![1, 2, 3], seed=0, tmax=25.0, orbit_tol=1e-6))]
    fn criterium(
        &self,
        py: Python<'_>,
        orbit_seeds: Vec<u64>,
        seed: u64,
        tmax: f64,
        orbit_tol: f64,
    ) -> PyResult<Py<PyAny>> {
        let report = orbitctl::cli::criterium_survey(&self.inner, &orbit_seeds, seed, tmax, orbit_tol)
            .map_err(err)?;
        report_to_py(py, &report)
    }
}

fn bilinear_from_rows(a: Vec<f64>, b: Vec<Vec<f64>>) -> PyResult<BilinearSystem3> {
    BilinearSystem3::from_rows(&a, &b).map_err(err)
}

/// Two-level eigenvalue sufficiency test for `x' = (A + sum u_i B_i) x` on
/// R^3; `a` and each `b` row-major with 9 entries.
#[pyfunction]
#[pyo3(signature = (a, b, u, v, tol=1e-9))]
fn theorem_b(
    py: Python<'_>,
    a: Vec<f64>,
    b: Vec<Vec<f64>>,
    u: Vec<f64>,
    v: Vec<f64>,
    tol: f64,
) -> PyResult<Py<PyAny>> {
    let sys = bilinear_from_rows(a, b)?;
    let verdict = theorem_b_check(&sys, &u, &v, tol).map_err(err)?;
    report_to_py(py, &verdict)
}

/// Project a bilinear system to the sphere of directions, one generator per
/// frozen control level.
#[pyfunction]
fn project_sphere(a: Vec<f64>, b: Vec<Vec<f64>>, u_levels: Vec<Vec<f64>>) -> PyResult<System> {
    let sys = bilinear_from_rows(a, b)?;
    Ok(System { inner: orbitctl::bilinear::project_sphere(&sys, &u_levels).map_err(err)? })
}

/// Full seeded verification bundle for the staircase example.
#[pyfunction]
fn verify_example1(py: Python<'_>) -> PyResult<Py<PyAny>> {
    report_to_py(py, &orbitctl::cli::example1_verify())
}

/// Full seeded verification bundle for the torus counterexample.
#[pyfunction]
fn verify_example2(py: Python<'_>) -> PyResult<Py<PyAny>> {
    report_to_py(py, &orbitctl::cli::example2_verify())
}

#[pymodule]
fn orbitctl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<System>()?;
    m.add_function(wrap_pyfunction!(theorem_b, m)?)?;
    m.add_function(wrap_pyfunction!(project_sphere, m)?)?;
    m.add_function(wrap_pyfunction!(verify_example1, m)?)?;
    m.add_function(wrap_pyfunction!(verify_example2, m)?)?;
    Ok(())
}
