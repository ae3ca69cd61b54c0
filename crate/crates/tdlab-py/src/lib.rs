//! Python bindings: solved-instance handles, the experiment runner, and the
//! rate fitter, mirroring the CLI's vocabulary.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use tdlab_core::{
    build_baird, build_minimax, off_policy_population, parse_config, preset, preset_names,
    run_experiment, Error, MinimaxSpec, OffPolicyFixedPoint, OffPolicyPopulation, SummaryRow,
};

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Io(_) | Error::Csv(_) => PyIOError::new_err(err.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// A solved policy-evaluation instance: stationary distribution, feature
/// covariance, fixed point, and spectral constants under behavior sampling.
#[pyclass(frozen)]
struct Instance {
    pop: OffPolicyPopulation,
}

#[pymethods]
impl Instance {
    /// The hard-family chain; on-policy, so behavior and target coincide.
    #[staticmethod]
    #[pyo3(signature = (n_states=10, feature_dim=3, gamma=0.2, epsilon=0.01))]
    fn minimax(n_states: usize, feature_dim: usize, gamma: f64, epsilon: f64) -> PyResult<Self> {
        let spec = MinimaxSpec::new(n_states, feature_dim, gamma, epsilon);
        let inst = build_minimax(&spec).map_err(to_py)?;
        let pop = off_policy_population(&inst.mdp, &inst.policy, &inst.policy, &inst.features)
            .map_err(to_py)?;
        Ok(Instance { pop })
    }

    /// The off-policy divergence counterexample.
    #[staticmethod]
    fn baird() -> PyResult<Self> {
        let inst = build_baird();
        let pop = off_policy_population(&inst.mdp, &inst.target, &inst.behavior, &inst.features)
            .map_err(to_py)?;
        Ok(Instance { pop })
    }

    /// Stationary distribution of the sampled (behavior) chain.
    #[getter]
    fn mu(&self) -> Vec<f64> {
        self.pop.mu_b.iter().copied().collect()
    }

    /// Feature covariance under that distribution, row-major.
    #[getter]
    fn sigma(&self) -> Vec<Vec<f64>> {
        self.pop
            .sigma_tilde
            .row_iter()
            .map(|row| row.iter().copied().collect())
            .collect()
    }

    /// Coefficient fixed point, when the system identifies one.
    #[getter]
    fn theta_star(&self) -> Option<Vec<f64>> {
        self.pop.theta_star().map(|t| t.iter().copied().collect())
    }

    /// Optimal value vector, exposed when coefficients are not identified.
    #[getter]
    fn value_optimum(&self) -> Option<Vec<f64>> {
        match &self.pop.fixed_point {
            OffPolicyFixedPoint::NonUnique { value_optimum } => {
                Some(value_optimum.iter().copied().collect())
            }
            OffPolicyFixedPoint::Unique(_) => None,
        }
    }

    #[getter]
    fn rho_max(&self) -> f64 {
        self.pop.rho_max
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.pop.gamma
    }

    /// `(lambda1, lambda2, lambda_sigma, kappa_tilde)`, or `None` when the
    /// covariance is singular.
    #[getter]
    fn constants(&self) -> Option<(f64, f64, f64, f64)> {
        self.pop
            .constants
            .as_ref()
            .map(|c| (c.lambda1, c.lambda2, c.lambda_sigma, c.kappa_tilde))
    }

    fn __repr__(&self) -> String {
        format!(
            "Instance({} features, gamma = {}, rho_max = {})",
            self.pop.feature_dim(),
            self.pop.gamma,
            self.pop.rho_max
        )
    }
}

/// One experiment's cross-trial summary, plus the resolved-run manifest.
#[pyclass(frozen)]
struct RunResult {
    #[pyo3(get)]
    steps: Vec<u64>,
    #[pyo3(get)]
    mean: Vec<f64>,
    #[pyo3(get)]
    lo95: Vec<f64>,
    #[pyo3(get)]
    hi95: Vec<f64>,
    #[pyo3(get)]
    diverged: Vec<u64>,
    #[pyo3(get)]
    manifest: String,
}

#[pymethods]
impl RunResult {
    fn __repr__(&self) -> String {
        format!("RunResult({} checkpoints)", self.steps.len())
    }
}

/// Runs the experiment described by flat key-value config text. `workers = 0`
/// uses every available core. When `out_dir` is given it overrides the
/// config's output directory and the trace/summary/manifest files are
/// written there; otherwise nothing touches the filesystem.
#[pyfunction]
#[pyo3(signature = (config_text, workers=0, out_dir=None))]
fn run(config_text: &str, workers: usize, out_dir: Option<PathBuf>) -> PyResult<RunResult> {
    let mut config = parse_config(config_text).map_err(to_py)?;
    let output = run_experiment(&config, workers).map_err(to_py)?;
    if let Some(dir) = out_dir {
        config.out_dir = dir;
        tdlab_core::emit(&output, &config.out_dir).map_err(to_py)?;
    }
    Ok(RunResult {
        steps: output.summary.iter().map(|r| r.step).collect(),
        mean: output.summary.iter().map(|r| r.mean).collect(),
        lo95: output.summary.iter().map(|r| r.lo95).collect(),
        hi95: output.summary.iter().map(|r| r.hi95).collect(),
        diverged: output.summary.iter().map(|r| r.diverged).collect(),
        manifest: output.manifest,
    })
}

/// Least-squares line through `(log step, log mean)` over checkpoints inside
/// `[window_lo, window_hi]`; returns `(slope, intercept, r2, points)`.
#[pyfunction]
fn rate(
    steps: Vec<u64>,
    means: Vec<f64>,
    window_lo: u64,
    window_hi: u64,
) -> PyResult<(f64, f64, f64, usize)> {
    if steps.len() != means.len() {
        return Err(PyValueError::new_err(format!(
            "steps and means must have equal length, got {} and {}",
            steps.len(),
            means.len()
        )));
    }
    let rows: Vec<SummaryRow> = steps
        .into_iter()
        .zip(means)
        .map(|(step, mean)| SummaryRow {
            step,
            mean,
            lo95: mean,
            hi95: mean,
            diverged: 0,
        })
        .collect();
    let fit = tdlab_core::fit_rate(&rows, window_lo, window_hi).map_err(to_py)?;
    Ok((fit.slope, fit.intercept, fit.r2, fit.points))
}

/// Returns the named preset's config text.
#[pyfunction]
fn preset_text(name: &str) -> PyResult<String> {
    preset(name).map(str::to_owned).ok_or_else(|| {
        PyValueError::new_err(format!(
            "unknown preset `{name}`; available: {}",
            preset_names().join(", ")
        ))
    })
}

#[pymodule]
fn tdlab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Instance>()?;
    m.add_class::<RunResult>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(rate, m)?)?;
    m.add_function(wrap_pyfunction!(preset_text, m)?)?;
    Ok(())
}
