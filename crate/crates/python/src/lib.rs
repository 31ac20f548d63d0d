//! Python bindings: pipeline commands, the advection-diffusion model, and trajectory errors.

use std::path::PathBuf;

use nalgebra::DVector;
use phmor::config::RunConfig;
use phmor::diagnostics::relative_l2_error as rel_err;
use phmor::models::{build_ade_fom, AdeParams};
use phmor::pipeline::Pipeline;
use phmor::system::PhSystem;
use phmor::timestep::{integrate_midpoint, IntegratorOptions, TimeGrid, Trajectory};
use phmor::Error;
use pyo3::exceptions::{PyFileNotFoundError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::InvalidParameter(_) | Error::Dimension { .. } => PyValueError::new_err(e.to_string()),
        Error::MissingInputs(_) => PyFileNotFoundError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn trajectory(times: Vec<f64>, states: Vec<Vec<f64>>) -> Trajectory {
    Trajectory {
        times,
        states: states.into_iter().map(DVector::from_vec).collect(),
        ..Default::default()
    }
}

/// Runs a pipeline command (`fom-run`, `offline`, `rom-run`, `diag`, `sweep`) and returns its JSON summary.
#[pyfunction]
#[pyo3(signature = (command, config, out=None, seed=None, threads=None, step_size=None))]
fn run(command: &str, config: PathBuf, out: Option<PathBuf>, seed: Option<u64>, threads: Option<usize>, step_size: Option<f64>) -> PyResult<String> {
    let mut cfg = RunConfig::load(&config).map_err(to_py)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(t) = threads {
        cfg.cli.threads = t;
    }
    if let Some(h) = step_size {
        cfg.timestep.step = Some(h);
    }
    let out = out.unwrap_or_else(|| cfg.resolve(&cfg.cli.out));
    let summary = Pipeline::new(cfg, out).and_then(|p| p.run_command(command)).map_err(to_py)?;
    Ok(summary.to_string())
}

/// Integrates the advection-diffusion model; returns `(times, states)`.
#[pyfunction]
#[pyo3(signature = (n=999, t_end=1.2, step=1e-3, c=1.0, d=1e-3))]
fn advection_diffusion(n: usize, t_end: f64, step: f64, c: f64, d: f64) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let fom = build_ade_fom(&AdeParams { c, d, n, t_end }).map_err(to_py)?;
    let grid = TimeGrid::new(0.0, t_end, step).map_err(to_py)?;
    let m = fom.system.b.ncols();
    let sys = PhSystem::Lti(fom.system);
    let t = integrate_midpoint(&sys, &grid, &fom.x0, &|_| DVector::zeros(m), &IntegratorOptions::default()).map_err(to_py)?;
    Ok((t.times, t.states.iter().map(|x| x.iter().copied().collect()).collect()))
}

/// Time-integrated relative error of `approx` against `reference`, both sampled at `times`.
#[pyfunction]
fn relative_l2_error(times: Vec<f64>, reference: Vec<Vec<f64>>, approx: Vec<Vec<f64>>) -> PyResult<f64> {
    rel_err(&trajectory(times.clone(), reference), &trajectory(times, approx), None).map_err(to_py)
}

#[pymodule]
fn phmor_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(advection_diffusion, m)?)?;
    m.add_function(wrap_pyfunction!(relative_l2_error, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
