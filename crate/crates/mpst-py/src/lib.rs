//! Python bindings for the `mpst` crate.

use std::collections::BTreeMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use mpst::ast::IndexTerm;
use mpst::project::{global_normal_form, project, project_ground};
use mpst::protocols::example;
use mpst::simulate::{run as run_config, Config, RunOptions, Scheduler};
use mpst::surface::{export_json, parse, parse_global, parse_participant};

fn value_error(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Runs the command-line front end in-process: `(exit code, stdout, stderr)`.
#[pyfunction]
#[pyo3(signature = (args, stdin = None))]
fn run(args: Vec<String>, stdin: Option<String>) -> (i32, String, String) {
    let input = stdin.unwrap_or_default().into_bytes();
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("mpst".to_string()).chain(args);
    let code = mpst::cli::run(argv, &mut input.as_slice(), &mut out, &mut err);
    (code, String::from_utf8_lossy(&out).into_owned(), String::from_utf8_lossy(&err).into_owned())
}

/// Parses a source file and prints it back.
#[pyfunction]
fn pretty(text: &str) -> PyResult<String> {
    parse(text).map(|f| f.to_string()).map_err(value_error)
}

/// Schema-versioned JSON of a source file.
#[pyfunction]
fn to_json(text: &str) -> PyResult<String> {
    parse(text).map(|f| export_json(&f)).map_err(value_error)
}

#[pyfunction]
fn normal_form(global: &str) -> PyResult<String> {
    let g = parse_global(global).map_err(value_error)?;
    global_normal_form(&g).map(|t| t.to_string()).map_err(value_error)
}

/// Local type of `role` in a global type (normalised when ground).
#[pyfunction]
fn project_role(global: &str, role: &str) -> PyResult<String> {
    let g = parse_global(global).map_err(value_error)?;
    let r = parse_participant(role).map_err(value_error)?;
    let t = if g.free_index_vars().is_empty() { project_ground(&g, &r) } else { project(&g, &r) };
    t.map(|t| t.to_string()).map_err(value_error)
}

/// Source text of a built-in example.
#[pyfunction]
#[pyo3(signature = (name, params = None))]
fn example_source(name: &str, params: Option<BTreeMap<String, String>>) -> PyResult<String> {
    example(name, &params.unwrap_or_default()).map(|p| p.source).map_err(value_error)
}

/// Runs a built-in example under the seeded random scheduler and returns the
/// report as JSON.
#[pyfunction]
#[pyo3(signature = (name, params = None, seed = 0, check_sr = false))]
fn simulate_example(name: &str, params: Option<BTreeMap<String, String>>, seed: u64, check_sr: bool) -> PyResult<String> {
    let p = example(name, &params.unwrap_or_default()).map_err(value_error)?;
    let c = Config::new(&p.env(), &p.program()).map_err(value_error)?;
    let opts = RunOptions { check_sr, ..RunOptions::new() };
    let report = run_config(&c, Scheduler::Random(seed), &opts).map_err(value_error)?;
    Ok(export_json(&report))
}

#[pymodule]
fn mpst_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(pretty, m)?)?;
    m.add_function(wrap_pyfunction!(to_json, m)?)?;
    m.add_function(wrap_pyfunction!(normal_form, m)?)?;
    m.add_function(wrap_pyfunction!(project_role, m)?)?;
    m.add_function(wrap_pyfunction!(example_source, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_example, m)?)?;
    Ok(())
}
