//! Python bindings for `wat-core`.
//!
//! Configurations and traces cross the boundary as JSON strings in the same
//! shape the CLI writes, so `json.loads` on the Python side gives plain dicts.

use std::fs::File;
use std::io::BufWriter;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use wat_core::data_io::{compute_stats, read_libsvm, split_and_shuffle, synth_noisy_stream, write_libsvm, LibsvmReader};
use wat_core::driver::{self, RunConfig};
use wat_core::metrics::{self, AccuracyCurve};
use wat_core::WatError;

fn to_py(e: WatError) -> PyErr {
    match e {
        WatError::Io(e) => PyIOError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn indexed(values: &[f64]) -> AccuracyCurve {
    AccuracyCurve::new(values.iter().enumerate().map(|(i, &v)| (i as u64, v)).collect())
}

/// Writes a synthetic noisy stream to `path` and returns the number of flipped labels.
#[pyfunction]
#[pyo3(signature = (path, dim, n, flip, seed=0))]
fn synth(path: &str, dim: usize, n: usize, flip: f64, seed: u64) -> PyResult<usize> {
    let cfg = wat_core::SynthConfig::new(dim, n, flip, seed);
    let data = synth_noisy_stream(&cfg).map_err(to_py)?;
    let out = BufWriter::new(File::create(path).map_err(|e| PyIOError::new_err(e.to_string()))?);
    write_libsvm(out, &data.dataset.examples).map_err(to_py)?;
    Ok(data.flipped_count())
}

/// Example count, dimension, nonzeros and sparsity of a LIBSVM file.
#[pyfunction]
#[pyo3(signature = (path, dim=None))]
fn stats<'py>(py: Python<'py>, path: &str, dim: Option<usize>) -> PyResult<Bound<'py, PyDict>> {
    let reader = LibsvmReader::open(path).map_err(to_py)?;
    let s = compute_stats(reader, dim).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("n_examples", s.n_examples)?;
    d.set_item("max_index", s.max_index)?;
    d.set_item("dim", s.dim)?;
    d.set_item("nnz", s.nnz)?;
    d.set_item("sparsity", s.sparsity)?;
    Ok(d)
}

/// Runs one trial on a LIBSVM file and returns the trace as JSON.
///
/// `config` is a JSON run configuration, e.g.
/// `{"learner": {"algo": "pac", "c_err": 1.0}, "ensemble": {"scheme": "wrs", ...}, "seed": 1, "checkpoints": 200}`.
#[pyfunction]
#[pyo3(signature = (config, path, split=0.7, dim=None))]
fn run(py: Python<'_>, config: &str, path: &str, split: f64, dim: Option<usize>) -> PyResult<String> {
    let cfg: RunConfig = serde_json::from_str(config).map_err(json_err)?;
    py.detach(|| {
        let data = read_libsvm(path, dim)?;
        let parts = split_and_shuffle(&data, split, cfg.seed)?;
        driver::run(&cfg, &parts.train, &parts.test, data.dim)?.to_json()
    })
    .map_err(to_py)
}

/// Evaluation timesteps for `n_train` examples and a target checkpoint count.
#[pyfunction]
fn checkpoint_schedule(n_train: u64, target: u64) -> Vec<u64> {
    driver::checkpoint_schedule(n_train, target)
}

/// Running maximum of an accuracy curve.
#[pyfunction]
fn oracle_curve(values: Vec<f64>) -> Vec<f64> {
    metrics::oracle_curve(&indexed(&values)).values().collect()
}

/// Relative oracle performance of `model` against `oracle`.
#[pyfunction]
fn rop(oracle: Vec<f64>, model: Vec<f64>) -> PyResult<f64> {
    metrics::rop(&indexed(&oracle), &indexed(&model)).map_err(to_py)
}

/// Two-sided Wilcoxon signed-rank test on paired samples.
#[pyfunction]
fn wilcoxon<'py>(py: Python<'py>, a: Vec<f64>, b: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    if a.len() != b.len() {
        return Err(PyValueError::new_err("samples must have equal length"));
    }
    let pairs: Vec<(f64, f64)> = a.into_iter().zip(b).collect();
    let r = metrics::wilcoxon_signed_rank(&pairs).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("statistic", r.statistic)?;
    d.set_item("p_value", r.p_value)?;
    d.set_item("n", r.n)?;
    d.set_item("exact", r.exact)?;
    Ok(d)
}

/// Runs the `wat` command line with `args` (without the program name) and returns its exit code.
#[pyfunction]
fn cli(py: Python<'_>, args: Vec<String>) -> i32 {
    py.detach(|| wat_core::cli::main_with_args(std::iter::once("wat".to_string()).chain(args)))
}

#[pymodule]
fn wat(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(stats, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(checkpoint_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_curve, m)?)?;
    m.add_function(wrap_pyfunction!(rop, m)?)?;
    m.add_function(wrap_pyfunction!(wilcoxon, m)?)?;
    m.add_function(wrap_pyfunction!(cli, m)?)?;
    Ok(())
}
