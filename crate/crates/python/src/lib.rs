//! Python bindings. Results come back as plain dicts decoded from the same
//! JSON the command line prints, so floats round-trip exactly.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use frakra::cli::parse_inline_shape;
use frakra::nonlocal::SolverOpts;
use frakra::report::to_json;
use frakra::verify::VerifyOpts;
use frakra::{eval_constants, fraenkel_asymmetry, make_shape, Error, FracParams, GridDomain, GridSpec};

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::NonConvergence { .. } | Error::CgBreakdown { .. } | Error::Degenerate(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn decode(py: Python<'_>, json: String) -> PyResult<Bound<'_, PyAny>> {
    py.import("json")?.call_method1("loads", (json,))
}

fn domain(shape: &str, resolution: usize, half_width: f64) -> Result<GridDomain, Error> {
    make_shape(parse_inline_shape(shape)?, GridSpec::new(half_width, resolution)?)
}

/// Closed-form constants for (n, s, q).
#[pyfunction]
#[pyo3(signature = (s, q = 2.0, n = 2))]
fn constants(py: Python<'_>, s: f64, q: f64, n: usize) -> PyResult<Bound<'_, PyAny>> {
    let p = FracParams::new(n, s, q).map_err(to_py_err)?;
    decode(py, to_json(&eval_constants(&p).map_err(to_py_err)?))
}

/// Fraenkel asymmetry of an inline shape such as "ellipse:a=0.6,b=0.3".
#[pyfunction]
#[pyo3(signature = (shape, resolution = 64, half_width = 1.0))]
fn asymmetry(shape: &str, resolution: usize, half_width: f64) -> PyResult<f64> {
    let dom = domain(shape, resolution, half_width).map_err(to_py_err)?;
    Ok(fraenkel_asymmetry(&dom).map_err(to_py_err)?.asymmetry)
}

/// λ_{s,q} of a shape and the minimizer as a flat list (row j = k holds y-index k).
#[pyfunction]
#[pyo3(signature = (shape, s, q = 2.0, resolution = 64, half_width = 1.0))]
fn eigen(shape: &str, s: f64, q: f64, resolution: usize, half_width: f64) -> PyResult<(f64, Vec<f64>)> {
    let dom = domain(shape, resolution, half_width).map_err(to_py_err)?;
    let p = FracParams::new(2, s, q).map_err(to_py_err)?;
    let r = frakra::nonlocal::minimize_lambda(&dom, &p, &SolverOpts::default()).map_err(to_py_err)?;
    Ok((r.lambda, r.u.values))
}

/// Torsional rigidity T_s of a shape.
#[pyfunction]
#[pyo3(signature = (shape, s, resolution = 64, half_width = 1.0))]
fn torsion(shape: &str, s: f64, resolution: usize, half_width: f64) -> PyResult<f64> {
    let dom = domain(shape, resolution, half_width).map_err(to_py_err)?;
    Ok(frakra::nonlocal::torsion_solve(&dom, s).map_err(to_py_err)?.torsion)
}

/// Full Faber-Krahn report for one shape.
#[pyfunction]
#[pyo3(signature = (shape, s, q = 2.0, resolution = 64, half_width = 1.0, level_scan = true))]
fn verify_fk<'py>(
    py: Python<'py>,
    shape: &str,
    s: f64,
    q: f64,
    resolution: usize,
    half_width: f64,
    level_scan: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let dom = domain(shape, resolution, half_width).map_err(to_py_err)?;
    let p = FracParams::new(2, s, q).map_err(to_py_err)?;
    let opts = VerifyOpts {
        level_scan,
        ..VerifyOpts::default()
    };
    let report = py
        .detach(|| frakra::verify::verify_fk(&dom, &p, &opts))
        .map_err(to_py_err)?;
    decode(py, to_json(&report))
}

#[pymodule]
#[pyo3(name = "frakra")]
fn frakra_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(constants, m)?)?;
    m.add_function(wrap_pyfunction!(asymmetry, m)?)?;
    m.add_function(wrap_pyfunction!(eigen, m)?)?;
    m.add_function(wrap_pyfunction!(torsion, m)?)?;
    m.add_function(wrap_pyfunction!(verify_fk, m)?)?;
    Ok(())
}
