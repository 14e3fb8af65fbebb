//! Python bindings for the `droc` crate.

use droc::bocp::{self, BocpConfig};
use droc::dist::DirichletPosterior;
use droc::model::{base_stock_truth, build_inventory, discretize_exponential, InventoryParams};
use droc::risk::{worst_case_on_bounds, RiskSpec};
use droc::value::{uniform_grid, value_iteration_oracle, CutPool, GreedyPolicy, Policy, ValueFunction};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: droc::Error) -> PyErr {
    match e {
        droc::Error::Convergence { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn desk(bins: usize) -> InventoryParams {
    InventoryParams {
        bins,
        ..Default::default()
    }
}

/// Worst-case expectation of `h` over {lower <= p <= upper, sum p = 1}.
/// Returns the value and the maximizing pmf.
#[pyfunction]
fn worst_case(lower: Vec<f64>, upper: Vec<f64>, h: Vec<f64>) -> PyResult<(f64, Vec<f64>)> {
    worst_case_on_bounds(&lower, &upper, &h).map_err(err)
}

/// The same worst case through the mean-CVaR form.
#[pyfunction]
fn mean_cvar(lower: Vec<f64>, upper: Vec<f64>, center: Vec<f64>, h: Vec<f64>) -> PyResult<f64> {
    RiskSpec::from_bounds(&lower, &upper, &center)
        .and_then(|s| s.rho(&h))
        .map_err(err)
}

/// Critical ratio and base-stock level of the continuous inventory model.
#[pyfunction]
fn base_stock() -> (f64, f64) {
    base_stock_truth(&InventoryParams::default())
}

#[pyfunction]
#[pyo3(signature = (bins=20, mean=10.0, truncation=50.0))]
fn demand_pmf(bins: usize, mean: f64, truncation: f64) -> PyResult<Vec<f64>> {
    discretize_exponential(mean, truncation, bins)
        .map(|p| p.into_vec())
        .map_err(err)
}

/// Posterior credible box after observing bin indices: (center, lower, upper).
#[pyfunction]
#[pyo3(signature = (observations, bins=20, alpha=0.2, prior=2.0))]
fn credible_box(
    observations: Vec<usize>,
    bins: usize,
    alpha: f64,
    prior: f64,
) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let bx = posterior(&observations, bins, prior)?
        .credible_box(alpha)
        .map_err(err)?;
    Ok((bx.center().probs().to_vec(), bx.lower().to_vec(), bx.upper().to_vec()))
}

fn posterior(observations: &[usize], bins: usize, prior: f64) -> PyResult<DirichletPosterior> {
    let mut counts = vec![0usize; bins];
    for &j in observations {
        if j >= bins {
            return Err(PyValueError::new_err(format!("observation {j} outside 0..{bins}")));
        }
        counts[j] += 1;
    }
    DirichletPosterior::symmetric(bins, prior)
        .and_then(|p| p.update_counts(&counts))
        .map_err(err)
}

/// Cutting-plane solution of the robust inventory problem.
#[pyclass(get_all, frozen)]
struct Solution {
    iterations: usize,
    converged: bool,
    residual: f64,
    cuts: usize,
    grid: Vec<f64>,
    values: Vec<f64>,
    actions: Vec<f64>,
}

#[pymethods]
impl Solution {
    fn __repr__(&self) -> String {
        format!(
            "Solution(iterations={}, converged={}, residual={:.4e}, cuts={})",
            self.iterations, self.converged, self.residual, self.cuts
        )
    }
}

/// Solves the robust inventory problem for the credible box built from
/// `observations` and reports the envelope and greedy actions on a grid.
#[pyfunction]
#[pyo3(signature = (observations, bins=20, alpha=0.2, epsilon=0.5, grid_points=201, seed=0))]
fn solve(
    py: Python<'_>,
    observations: Vec<usize>,
    bins: usize,
    alpha: f64,
    epsilon: f64,
    grid_points: usize,
    seed: u64,
) -> PyResult<Solution> {
    let params = desk(bins);
    let model = build_inventory(&params).map_err(err)?;
    let bx = posterior(&observations, bins, 2.0)?.credible_box(alpha).map_err(err)?;
    let spec = RiskSpec::from_box(&bx).map_err(err)?;
    let cfg = BocpConfig {
        epsilon,
        grid_points,
        seed,
        ..Default::default()
    };
    let (pool, st) = py
        .detach(|| bocp::run(&model, &spec, &cfg, CutPool::floor_only(&model)))
        .map_err(err)?;
    let grid = uniform_grid(params.state_lo, params.state_hi, grid_points);
    let env = pool.compile_1d();
    let policy = GreedyPolicy::new(&model, &spec, &env);
    Ok(Solution {
        iterations: st.k,
        converged: st.converged,
        residual: st.last_residual,
        cuts: pool.len(),
        values: grid.iter().map(|&s| env.eval_1d(s)).collect(),
        actions: grid.iter().map(|&s| policy.act_1d(s)).collect(),
        grid,
    })
}

/// Grid value iteration for a fixed demand pmf: (grid, values, actions).
#[pyfunction]
#[pyo3(signature = (pmf, grid_points=201, tol=1e-3))]
fn oracle(py: Python<'_>, pmf: Vec<f64>, grid_points: usize, tol: f64) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let params = desk(pmf.len());
    let model = build_inventory(&params).map_err(err)?;
    let spec = RiskSpec::from_bounds(&pmf, &pmf, &pmf).map_err(err)?;
    let grid = uniform_grid(params.state_lo, params.state_hi, grid_points);
    let res = py
        .detach(|| value_iteration_oracle(&model, &spec, &grid, tol, 1_000_000, None))
        .map_err(err)?;
    Ok((grid, res.value.values().to_vec(), res.actions))
}

#[pymodule]
fn bayes_droc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Solution>()?;
    m.add_function(wrap_pyfunction!(worst_case, m)?)?;
    m.add_function(wrap_pyfunction!(mean_cvar, m)?)?;
    m.add_function(wrap_pyfunction!(base_stock, m)?)?;
    m.add_function(wrap_pyfunction!(demand_pmf, m)?)?;
    m.add_function(wrap_pyfunction!(credible_box, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(oracle, m)?)?;
    Ok(())
}
