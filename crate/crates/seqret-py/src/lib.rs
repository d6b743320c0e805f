//! Python bindings: population generation, the staged pipeline, and direct
//! access to the choice-model fitter. Structured results cross the boundary
//! as plain dicts/lists via a JSON bridge.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use seqret::design::DesignMatrix;
use seqret::mnl::{fit_mnl, MnlConfig};
use seqret::pipeline::{run_pipeline, PipelineConfig, SynthSection};
use seqret::records::read_csv;
use seqret::synthgen::generate_population;

fn err(e: seqret::Error) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn json_to_py(py: Python<'_>, v: &serde_json::Value) -> PyResult<PyObject> {
    Ok(match v {
        serde_json::Value::Null => py.None(),
        serde_json::Value::Bool(b) => b.into_py(py),
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_py(py)
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_py(py)
            }
        }
        serde_json::Value::String(s) => s.into_py(py),
        serde_json::Value::Array(items) => {
            let list = PyList::empty_bound(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_py(py)
        }
        serde_json::Value::Object(map) => {
            let dict = PyDict::new_bound(py);
            for (k, val) in map {
                dict.set_item(k, json_to_py(py, val)?)?;
            }
            dict.into_py(py)
        }
    })
}

fn serialize_to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<PyObject> {
    let v = serde_json::to_value(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    json_to_py(py, &v)
}

/// Generate a synthetic population, write it as CSV, and return the planted
/// truth (stage coefficients and career effects) as a dict.
#[pyfunction]
#[pyo3(signature = (preset, n, seed, out_csv, selection_strength=0.0, truth_json=None))]
fn generate(
    py: Python<'_>,
    preset: &str,
    n: usize,
    seed: u64,
    out_csv: PathBuf,
    selection_strength: f64,
    truth_json: Option<PathBuf>,
) -> PyResult<PyObject> {
    let section = SynthSection {
        preset: preset.to_string(),
        n,
        seed,
        selection_strength,
    };
    let cfg = section.build().map_err(err)?;
    let (records, truth) = generate_population(&cfg).map_err(err)?;
    seqret::records::write_csv(&out_csv, &records).map_err(err)?;
    if let Some(path) = truth_json {
        let body =
            serde_json::to_string_pretty(&truth).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        std::fs::write(&path, body).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    }
    serialize_to_py(py, &truth)
}

/// Run the staged pipeline from a JSON config; returns the manifest dict.
/// `stage` limits execution ("stage1", "compose", "returns", ...).
#[pyfunction]
#[pyo3(signature = (config_path, out_dir=None, stage=None, seed=None))]
fn run(
    py: Python<'_>,
    config_path: PathBuf,
    out_dir: Option<PathBuf>,
    stage: Option<String>,
    seed: Option<u64>,
) -> PyResult<PyObject> {
    let mut cfg = PipelineConfig::load(&config_path).map_err(err)?;
    if let Some(out) = out_dir {
        cfg.out_dir = out;
    }
    if let Some(s) = seed {
        match &mut cfg.synth {
            Some(section) => section.seed = s,
            None => return Err(PyValueError::new_err("seed override requires a synth input")),
        }
    }
    let summary = run_pipeline(&cfg, stage.as_deref()).map_err(err)?;
    serialize_to_py(py, &summary.manifest)
}

/// Validate an input CSV; returns the ingestion report as a dict.
#[pyfunction]
fn validate(py: Python<'_>, input_csv: PathBuf) -> PyResult<PyObject> {
    let (_, report) = read_csv(&input_csv).map_err(err)?;
    serialize_to_py(py, &report)
}

/// Estimated returns from a completed pipeline run: reads `returns.csv`
/// written by `run` and returns its rows as a list of dicts.
#[pyfunction]
fn read_returns(py: Python<'_>, out_dir: PathBuf) -> PyResult<PyObject> {
    let path = out_dir.join("returns.csv");
    let mut rdr = csv::Reader::from_path(&path)
        .map_err(|e| PyRuntimeError::new_err(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let list = PyList::empty_bound(py);
    for rec in rdr.records() {
        let rec = rec.map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        let dict = PyDict::new_bound(py);
        for (h, field) in headers.iter().zip(rec.iter()) {
            if let Ok(v) = field.parse::<f64>() {
                dict.set_item(h, v)?;
            } else {
                dict.set_item(h, field)?;
            }
        }
        list.append(dict)?;
    }
    Ok(list.into_py(py))
}

/// Fit a multinomial logit on raw arrays: `design` is row-major n x p,
/// `choices` are alternative indices in 0..n_alternatives.
#[pyfunction]
#[pyo3(signature = (design, names, choices, n_alternatives, baseline=0))]
fn fit_choice_model(
    py: Python<'_>,
    design: Vec<Vec<f64>>,
    names: Vec<String>,
    choices: Vec<usize>,
    n_alternatives: usize,
    baseline: usize,
) -> PyResult<PyObject> {
    let n = design.len();
    if n == 0 || choices.len() != n {
        return Err(PyValueError::new_err("design and choices must align"));
    }
    let p = names.len();
    if design.iter().any(|row| row.len() != p) {
        return Err(PyValueError::new_err("all design rows must have len(names)"));
    }
    let matrix = nalgebra::DMatrix::from_fn(n, p, |i, c| design[i][c]);
    let index = names
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), i))
        .collect();
    let dm = DesignMatrix {
        matrix,
        names,
        index,
    };
    let model = fit_mnl(&dm, &choices, n_alternatives, baseline, &MnlConfig::default())
        .map_err(err)?;
    let names = model.param_names();
    let p = model.column_names.len();
    let flat: Vec<f64> = (0..model.coefficients.nrows())
        .flat_map(|r| (0..p).map(move |c| (r, c)))
        .map(|(r, c)| model.coefficients[(r, c)])
        .collect();
    let se: Vec<f64> = (0..flat.len()).map(|q| model.vcov[(q, q)].sqrt()).collect();
    let dict = PyDict::new_bound(py);
    dict.set_item("param_names", names)?;
    dict.set_item("coefficients", flat)?;
    dict.set_item("se", se)?;
    dict.set_item("log_likelihood", model.log_likelihood)?;
    dict.set_item("pseudo_r2", model.pseudo_r2)?;
    dict.set_item("converged", model.converged)?;
    dict.set_item("n_obs", model.n_obs)?;
    Ok(dict.into_py(py))
}

#[pymodule]
fn seqret_py(_py: Python<'_>, m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(read_returns, m)?)?;
    m.add_function(wrap_pyfunction!(fit_choice_model, m)?)?;
    Ok(())
}
