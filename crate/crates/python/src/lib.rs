//! Python bindings: a `Chain` class wrapping a reversible chain and its
//! symmetrized generator, with the selection, committor, compression and
//! verification routines as methods. Results come back as lists and dicts.

#![allow(clippy::useless_conversion)]

use std::path::PathBuf;

use faer::Mat;
use markov_compress::chain::{build_chain, symmetrize, webgraph_chain, ReversibleChain, SpectralLaplacian};
use markov_compress::committor::{committor_closed_form, hitting_times};
use markov_compress::compress::{error_curves, nystrom_errors, obliqueness, NormMethod};
use markov_compress::fixtures::{random_reversible, synthetic_webgraph_chain};
use markov_compress::induced::induced_chain;
use markov_compress::io::{load_chain, save_chain, InputFormat};
use markov_compress::marked::{build_marked, identity_suite, marked_spectrum, projections};
use markov_compress::select::greedy_select;
use markov_compress::subset::IndexSet;
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

create_exception!(markov_compress_py, CompressError, PyValueError, "Raised for invalid chains, sets or arguments.");

fn err(e: markov_compress::Error) -> PyErr {
    CompressError::new_err(format!("{}: {e}", e.kind()))
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<PyObject> {
    Ok(pythonize::pythonize(py, value).map_err(|e| PyValueError::new_err(e.to_string()))?.unbind())
}

fn rows(m: &Mat<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn parse_method(name: &str) -> PyResult<NormMethod> {
    match name {
        "dense" => Ok(NormMethod::Dense),
        "lowrank" | "low-rank" => Ok(NormMethod::LowRank),
        "auto" => Ok(NormMethod::Auto),
        other => Err(PyValueError::new_err(format!("unknown norm method '{other}'"))),
    }
}

fn parse_format(name: &str) -> PyResult<InputFormat> {
    match name {
        "matrix-market-adjacency" => Ok(InputFormat::MatrixMarketAdjacency),
        "matrix-market-rates" => Ok(InputFormat::MatrixMarketRates),
        "edge-list-csv" => Ok(InputFormat::EdgeListCsv),
        other => Err(PyValueError::new_err(format!("unknown input format '{other}'"))),
    }
}

/// Reversible continuous-time chain with its symmetrized generator.
#[pyclass(name = "Chain", module = "markov_compress_py", frozen)]
struct PyChain {
    chain: ReversibleChain,
    lap: SpectralLaplacian,
}

impl PyChain {
    fn wrap(chain: markov_compress::Result<ReversibleChain>) -> PyResult<Self> {
        let chain = chain.map_err(err)?;
        let lap = symmetrize(&chain).map_err(err)?;
        Ok(Self { chain, lap })
    }

    fn set(&self, indices: Vec<usize>) -> PyResult<IndexSet> {
        IndexSet::new(self.chain.n(), &indices).map_err(err)
    }
}

#[pymethods]
impl PyChain {
    /// Random walk on a symmetric weighted graph; list each edge `(i, j, w)`
    /// in both orientations.
    #[staticmethod]
    fn from_adjacency(n: usize, edges: Vec<(usize, usize, f64)>) -> PyResult<Self> {
        Self::wrap(webgraph_chain(n, &edges))
    }

    /// Chain from off-diagonal rates `(i, j, r)`; the stationary law is solved for.
    #[staticmethod]
    fn from_rates(n: usize, rates: Vec<(usize, usize, f64)>) -> PyResult<Self> {
        Self::wrap(build_chain(n, &rates, None))
    }

    #[staticmethod]
    fn random(n: usize, seed: u64) -> PyResult<Self> {
        Self::wrap(Ok(random_reversible(n, seed)))
    }

    #[staticmethod]
    fn webgraph(n: usize, seed: u64) -> PyResult<Self> {
        Self::wrap(Ok(synthetic_webgraph_chain(n, seed)))
    }

    #[staticmethod]
    #[pyo3(signature = (path, format = "matrix-market-adjacency"))]
    fn load(path: PathBuf, format: &str) -> PyResult<Self> {
        Self::wrap(load_chain(&path, parse_format(format)?))
    }

    /// Writes the off-diagonal rates as Matrix Market.
    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_chain(&path, &self.chain).map_err(err)
    }

    #[getter]
    fn n(&self) -> usize {
        self.chain.n()
    }

    #[getter]
    fn stationary(&self) -> Vec<f64> {
        self.chain.stationary().to_vec()
    }

    #[getter]
    fn trace_fundamental(&self) -> f64 {
        self.lap.trace_fundamental()
    }

    fn rate_matrix(&self) -> Vec<Vec<f64>> {
        rows(&self.chain.rate_matrix())
    }

    /// `P(t) = exp(Rt)` as nested rows.
    fn transition_matrix(&self, t: f64) -> PyResult<Vec<Vec<f64>>> {
        let p = self.lap.propagator(t).map_err(err)?;
        let h = self.lap.h();
        Ok((0..h.len()).map(|i| (0..h.len()).map(|j| h[i] * p[(i, j)] / h[j]).collect()).collect())
    }

    /// Hitting probabilities on `selected` from every state.
    fn committor(&self, selected: Vec<usize>) -> PyResult<Vec<Vec<f64>>> {
        let bundle = committor_closed_form(&self.lap, &self.set(selected)?).map_err(err)?;
        Ok(rows(&bundle.committor))
    }

    /// Mean first passage times between all pairs.
    fn hitting_times(&self) -> Vec<Vec<f64>> {
        rows(&hitting_times(&self.lap).times)
    }

    #[pyo3(signature = (selected, method = "auto"))]
    fn nystrom_errors(&self, py: Python<'_>, selected: Vec<usize>, method: &str) -> PyResult<PyObject> {
        let e = nystrom_errors(&self.lap, &self.set(selected)?, parse_method(method)?).map_err(err)?;
        to_py(py, &e)
    }

    fn obliqueness(&self, py: Python<'_>, selected: Vec<usize>) -> PyResult<PyObject> {
        to_py(py, &obliqueness(&self.lap, &self.set(selected)?).map_err(err)?)
    }

    /// Greedy selection of `k` states with the error after each step.
    fn greedy_select(&self, py: Python<'_>, k: usize) -> PyResult<PyObject> {
        to_py(py, &greedy_select(&self.lap, k).map_err(err)?)
    }

    /// Rates and stationary law of the chain induced on `selected`.
    fn induced(&self, py: Python<'_>, selected: Vec<usize>) -> PyResult<PyObject> {
        let bundle = committor_closed_form(&self.lap, &self.set(selected)?).map_err(err)?;
        let ic = induced_chain(&self.chain, &bundle).map_err(err)?;
        let out = PyDict::new_bound(py);
        out.set_item("set", ic.set.members().to_vec())?;
        out.set_item("rates", rows(&ic.rates))?;
        out.set_item("stationary", ic.pi_hat.clone())?;
        Ok(out.into_any().unbind())
    }

    /// Errors and bounds of both compressions on a log grid; `t_grid`
    /// defaults to the standard grid with `points` entries.
    #[pyo3(signature = (selected, points = 64, t_grid = None, method = "auto"))]
    fn bound_report(&self, py: Python<'_>, selected: Vec<usize>, points: usize, t_grid: Option<Vec<f64>>, method: &str) -> PyResult<PyObject> {
        let bundle = committor_closed_form(&self.lap, &self.set(selected)?).map_err(err)?;
        let ic = induced_chain(&self.chain, &bundle).map_err(err)?;
        let grid = t_grid.unwrap_or_else(|| self.lap.default_time_grid(points));
        let report = error_curves(&self.lap, &bundle, &ic, &grid, parse_method(method)?).map_err(err)?;
        to_py(py, &report)
    }

    /// Residuals of the marked-chain identities and the spectrum comparison.
    fn marked_identities(&self, py: Python<'_>, selected: Vec<usize>) -> PyResult<PyObject> {
        let bundle = committor_closed_form(&self.lap, &self.set(selected)?).map_err(err)?;
        let ic = induced_chain(&self.chain, &bundle).map_err(err)?;
        let mc = build_marked(&self.chain, &bundle).map_err(err)?;
        let proj = projections(&mc, &bundle, &self.lap, None).map_err(err)?;
        let report = identity_suite(&mc, &proj, &self.lap, &ic).map_err(err)?;
        let out = PyDict::new_bound(py);
        out.set_item("identities", to_py(py, &report)?)?;
        out.set_item("spectrum", to_py(py, &marked_spectrum(&mc, &self.lap).map_err(err)?)?)?;
        out.set_item("states", mc.m())?;
        Ok(out.into_any().unbind())
    }

    fn __repr__(&self) -> String {
        format!("Chain(n={})", self.chain.n())
    }
}

#[pymodule]
fn markov_compress_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyChain>()?;
    m.add("CompressError", m.py().get_type_bound::<CompressError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
