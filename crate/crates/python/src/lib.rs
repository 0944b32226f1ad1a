//! Python bindings: code construction, fidelity evaluation, CMA-ES and sweeps.

use std::collections::HashMap;
use std::path::PathBuf;

use bosonbound_core::channel::{self, channel_for_code, ChannelOptions, NoisePoint, SupportMode};
use bosonbound_core::codes::{
    build_gkp, build_np, build_trivial_fock, CodeFamily, CodePair, GkpParams, NpParams,
};
use bosonbound_core::fock::C64;
use bosonbound_core::optimizer::{
    cma_init, optimize_code, repeatability_report, CmaState, OptimizationRecord, OptimizerSettings, Scale,
    SearchSpace,
};
use bosonbound_core::qec::{self, FidelityResult};
use bosonbound_core::sweep::{
    desk_grid, run_sweep, strict_region, Preset, RunOptions, SweepConfig, SweepProgress,
};
use bosonbound_core::Error;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

create_exception!(bosonbound, BosonboundError, PyException);

fn py_err(e: Error) -> PyErr {
    BosonboundError::new_err(e.to_string())
}

fn scale(paper_scale: bool) -> Scale {
    if paper_scale {
        Scale::Paper
    } else {
        Scale::Desk
    }
}

fn noise(gamma_t: f64, kappa_t: f64) -> PyResult<NoisePoint> {
    NoisePoint::new(gamma_t, kappa_t).map_err(py_err)
}

/// A pair of orthonormal logical codewords in a truncated Fock space.
#[pyclass(name = "Code", frozen, module = "bosonbound")]
struct Code {
    inner: CodePair,
}

#[pymethods]
impl Code {
    #[staticmethod]
    #[pyo3(signature = (alpha, beta_real, delta, paper_scale = false))]
    fn gkp(alpha: f64, beta_real: f64, delta: f64, paper_scale: bool) -> PyResult<Self> {
        let p = GkpParams::new(alpha, beta_real, delta).map_err(py_err)?;
        let inner = build_gkp(&p, &scale(paper_scale).truncation()).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (delta, paper_scale = false))]
    fn hexagonal(delta: f64, paper_scale: bool) -> PyResult<Self> {
        let inner =
            build_gkp(&GkpParams::hexagonal(delta), &scale(paper_scale).truncation()).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (f, s, r, n, paper_scale = false))]
    fn np(f: f64, s: u32, r: f64, n: f64, paper_scale: bool) -> PyResult<Self> {
        let p = NpParams::new(f, s, r, n).map_err(py_err)?;
        let inner = build_np(&p, &scale(paper_scale).truncation()).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (dim = 8))]
    fn trivial(dim: usize) -> PyResult<Self> {
        Ok(Self {
            inner: build_trivial_fock(dim).map_err(py_err)?,
        })
    }

    #[getter]
    fn family(&self) -> &'static str {
        self.inner.family.as_str()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim
    }

    #[getter]
    fn mean_photon(&self) -> f64 {
        self.inner.mean_photon
    }

    #[getter]
    fn photon_variance(&self) -> f64 {
        self.inner.photon_variance
    }

    #[getter]
    fn tail_mass(&self) -> f64 {
        self.inner.tail_mass
    }

    /// Fock amplitudes of logical codeword 0 or 1.
    fn codeword(&self, k: usize) -> PyResult<Vec<C64>> {
        let ket = match k {
            0 => &self.inner.ket0,
            1 => &self.inner.ket1,
            _ => {
                return Err(BosonboundError::new_err(format!(
                    "codeword index {k} is not 0 or 1"
                )))
            }
        };
        Ok(ket.amplitudes().iter().copied().collect())
    }

    /// Photon-number distribution of the maximally mixed logical state.
    fn probabilities(&self) -> Vec<f64> {
        self.inner.mixed_probabilities()
    }

    fn __repr__(&self) -> String {
        format!(
            "Code(family={}, dim={}, mean_photon={:.4})",
            self.inner.family, self.inner.dim, self.inner.mean_photon
        )
    }
}

/// Near-optimal fidelity with its two-sided bound and diagnostics.
#[pyclass(name = "Fidelity", frozen, module = "bosonbound")]
struct Fidelity {
    inner: FidelityResult,
}

#[pymethods]
impl Fidelity {
    #[getter]
    fn f_tilde(&self) -> f64 {
        self.inner.f_tilde
    }

    #[getter]
    fn f_lower(&self) -> f64 {
        self.inner.f_lower
    }

    #[getter]
    fn f_upper(&self) -> f64 {
        self.inner.f_upper
    }

    #[getter]
    fn infidelity(&self) -> f64 {
        self.inner.infidelity()
    }

    #[getter]
    fn eps_trunc(&self) -> f64 {
        self.inner.diagnostics.eps_trunc
    }

    #[getter]
    fn n_kraus(&self) -> usize {
        self.inner.diagnostics.n_k
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.diagnostics.dim
    }

    #[getter]
    fn flagged(&self) -> bool {
        self.inner.diagnostics.flagged
    }

    fn __repr__(&self) -> String {
        format!(
            "Fidelity(f_tilde={}, n_kraus={}, flagged={})",
            self.inner.f_tilde, self.inner.diagnostics.n_k, self.inner.diagnostics.flagged
        )
    }
}

fn channel_options(eps_kraus: f64, strict_support: bool) -> ChannelOptions {
    ChannelOptions {
        eps_kraus,
        support: if strict_support {
            SupportMode::Strict
        } else {
            SupportMode::Quantile
        },
        ..ChannelOptions::default()
    }
}

/// Near-optimal fidelity of `code` under the loss-dephasing channel.
#[pyfunction]
#[pyo3(signature = (code, gamma_t, kappa_t, eps_kraus = channel::DEFAULT_EPS_KRAUS, strict_support = false))]
fn evaluate(
    code: &Code,
    gamma_t: f64,
    kappa_t: f64,
    eps_kraus: f64,
    strict_support: bool,
) -> PyResult<Fidelity> {
    let options = channel_options(eps_kraus, strict_support);
    let inner = qec::evaluate(&code.inner, noise(gamma_t, kappa_t)?, &options).map_err(py_err)?;
    Ok(Fidelity { inner })
}

/// Transpose-channel fidelity computed with dense matrices; small codes only.
#[pyfunction]
#[pyo3(signature = (code, gamma_t, kappa_t, eps_kraus = channel::DEFAULT_EPS_KRAUS))]
fn transpose_channel_oracle(code: &Code, gamma_t: f64, kappa_t: f64, eps_kraus: f64) -> PyResult<f64> {
    let options = channel_options(eps_kraus, false);
    let ch = channel_for_code(&code.inner, noise(gamma_t, kappa_t)?, &options).map_err(py_err)?;
    qec::transpose_channel_oracle(&code.inner, &ch).map_err(py_err)
}

/// Fidelity of the uncorrected Fock qubit {|0>, |1>}.
#[pyfunction]
#[pyo3(signature = (gamma_t, kappa_t, dim = 8))]
fn baseline(gamma_t: f64, kappa_t: f64, dim: usize) -> PyResult<Fidelity> {
    let inner = qec::baseline_fidelity(noise(gamma_t, kappa_t)?, dim).map_err(py_err)?;
    Ok(Fidelity { inner })
}

#[pyfunction]
#[pyo3(signature = (gamma_t, n_max, eps, floor = 0))]
fn loss_count(gamma_t: f64, n_max: usize, eps: f64, floor: usize) -> usize {
    channel::loss_count(gamma_t, n_max, eps, floor)
}

#[pyfunction]
#[pyo3(signature = (kappa_t, n_max, eps, floor = 0))]
fn deph_count(kappa_t: f64, n_max: usize, eps: f64, floor: usize) -> usize {
    channel::deph_count(kappa_t, n_max, eps, floor)
}

/// `"gkp-strict"`, `"np-strict"` or `"undecided"`.
#[pyfunction(name = "strict_region")]
fn strict_region_py(gkp_f: f64, np_f: f64) -> &'static str {
    strict_region(gkp_f, np_f).as_str()
}

/// Best code found by CMA-ES for one family at one noise point.
#[pyclass(name = "Optimization", frozen, module = "bosonbound")]
struct Optimization {
    inner: OptimizationRecord,
}

#[pymethods]
impl Optimization {
    #[getter]
    fn family(&self) -> &'static str {
        self.inner.family.as_str()
    }

    #[getter]
    fn params(&self) -> HashMap<String, f64> {
        self.inner
            .param_names
            .iter()
            .cloned()
            .zip(self.inner.best_params.iter().copied())
            .collect()
    }

    #[getter]
    fn fidelity(&self) -> Fidelity {
        Fidelity {
            inner: self.inner.best_fidelity,
        }
    }

    #[getter]
    fn evaluations(&self) -> usize {
        self.inner.evaluations
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| BosonboundError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!(
            "Optimization(family={}, f_tilde={}, params={:?})",
            self.inner.family, self.inner.best_fidelity.f_tilde, self.inner.best_params
        )
    }
}

#[pyfunction]
#[pyo3(signature = (family, gamma_t, kappa_t, budget = None, seed = 1, restarts = 1, popsize = 50, paper_scale = false))]
#[allow(clippy::too_many_arguments)]
fn optimize(
    py: Python<'_>,
    family: &str,
    gamma_t: f64,
    kappa_t: f64,
    budget: Option<usize>,
    seed: u64,
    restarts: usize,
    popsize: usize,
    paper_scale: bool,
) -> PyResult<Optimization> {
    let family: CodeFamily = family.parse().map_err(py_err)?;
    let noise = noise(gamma_t, kappa_t)?;
    let s = scale(paper_scale);
    let space = SearchSpace::for_family(family, s).map_err(py_err)?;
    let settings = OptimizerSettings {
        popsize,
        truncation: s.truncation(),
        ..OptimizerSettings::default()
    };
    let budget = budget.unwrap_or_else(|| settings.default_budget());
    let inner = py
        .detach(|| optimize_code(family, noise, &space, budget, seed, restarts, &settings))
        .map_err(py_err)?;
    Ok(Optimization { inner })
}

/// Largest pairwise fidelity spread relative to the smallest infidelity.
#[pyfunction]
fn repeatability(runs: Vec<PyRef<'_, Optimization>>) -> PyResult<f64> {
    let records: Vec<OptimizationRecord> = runs.iter().map(|r| r.inner.clone()).collect();
    repeatability_report(&records).map_err(py_err)
}

/// Ask/tell CMA-ES on the unit box, maximizing.
#[pyclass(name = "Cma", module = "bosonbound")]
struct Cma {
    inner: CmaState,
}

#[pymethods]
impl Cma {
    #[new]
    #[pyo3(signature = (dim, sigma0 = 0.3, popsize = 50, seed = 1))]
    fn new(dim: usize, sigma0: f64, popsize: usize, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: cma_init(dim, sigma0, popsize, seed).map_err(py_err)?,
        })
    }

    fn ask(&mut self) -> Vec<Vec<f64>> {
        self.inner.ask()
    }

    fn tell(&mut self, fitness: Vec<f64>) -> PyResult<()> {
        self.inner.tell(&fitness).map_err(py_err)
    }

    #[getter]
    fn mean(&self) -> Vec<f64> {
        self.inner.mean().to_vec()
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.sigma()
    }

    #[getter]
    fn generation(&self) -> usize {
        self.inner.generation()
    }
}

/// Runs a desk-scale sweep and returns its JSON serialization.
#[pyfunction]
#[pyo3(signature = (preset = "smoke", seed = 1, budget = None, popsize = None, restarts = 1, checkpoint = None))]
fn sweep(
    py: Python<'_>,
    preset: &str,
    seed: u64,
    budget: Option<usize>,
    popsize: Option<usize>,
    restarts: usize,
    checkpoint: Option<PathBuf>,
) -> PyResult<String> {
    let preset: Preset = preset.parse().map_err(py_err)?;
    let grid = desk_grid(preset);
    let mut config = SweepConfig::for_scale(Scale::Desk, seed);
    config.restarts = restarts;
    if let Some(p) = popsize {
        config.settings.popsize = p;
    }
    let budget = budget.unwrap_or_else(|| config.settings.default_budget());
    config.gkp_budget = budget;
    config.np_budget = budget;
    let progress = py
        .detach(|| {
            let options = RunOptions {
                checkpoint: checkpoint.as_deref(),
                stop_after: None,
            };
            run_sweep(&grid, &config, &options)
        })
        .map_err(py_err)?;
    match progress {
        SweepProgress::Complete(result) => result.to_json().map_err(py_err),
        SweepProgress::Partial { completed, total } => Err(BosonboundError::new_err(format!(
            "sweep stopped after {completed} of {total} cells"
        ))),
    }
}

#[pymodule]
fn bosonbound(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("BosonboundError", m.py().get_type::<BosonboundError>())?;
    m.add_class::<Code>()?;
    m.add_class::<Fidelity>()?;
    m.add_class::<Optimization>()?;
    m.add_class::<Cma>()?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(transpose_channel_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(baseline, m)?)?;
    m.add_function(wrap_pyfunction!(loss_count, m)?)?;
    m.add_function(wrap_pyfunction!(deph_count, m)?)?;
    m.add_function(wrap_pyfunction!(strict_region_py, m)?)?;
    m.add_function(wrap_pyfunction!(optimize, m)?)?;
    m.add_function(wrap_pyfunction!(repeatability, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    Ok(())
}
