//! Bellman-operator cutting planes.
//!
//! Each iteration solves the master LP at a trial state s̄, which evaluates
//! L̂(V̲)(s̄) exactly for the current cut envelope V̲, and turns the optimal
//! dual into a supporting cut of L̂(V̲). Cuts are only ever added, so the
//! envelope rises monotonically towards the fixed point.
//!
//! Master LP at s̄, variables (a, ζ, c_j, w_j, y_j):
//!
//! ```text
//! min  Σ_j l_j (c_j + γ w_j) + (1−λ) ζ + Σ_j (u_j − l_j) y_j
//! s.t. c_j ≥ piece_i(s̄, a)                 every piece i of scenario j
//!      w_j ≥ ℓ_η(A^j s̄ + B^j a + b^j)        cuts η, added lazily
//!      w_j ≥ floor                            as a variable bound
//!      y_j ≥ c_j + γ w_j − ζ,  y_j ≥ 0
//!      admissible-action rows
//! ```
//!
//! When the ambiguity set is a single distribution the ζ and y columns are
//! dropped and the objective is the plain expectation.

use log::{debug, warn};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lp::{self, LinearProgram, LpStatus, RowKind};
use crate::model::ScenarioModel;
use crate::par;
use crate::risk::RiskSpec;
use crate::rng;
use crate::value::{bellman_sweep, uniform_grid, Cut, CutPool, Policy};

/// Relative tolerance for a lazily omitted cut row to count as violated.
const LAZY_TOL: f64 = 1e-10;
const THETA_TOL: f64 = 1e-6;
/// Warm-start acceptance threshold on Δ.
pub const WARM_TOL: f64 = -1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BocpConfig {
    /// Target accuracy; the run stops once the residual is ≤ (1−γ)ε.
    pub epsilon: f64,
    pub k_max: usize,
    /// Points per state dimension of the residual grid.
    pub grid_points: usize,
    /// Every R-th trial state is drawn uniformly from the residual grid.
    pub restart_period: usize,
    pub restart: Restart,
    pub seed: u64,
    /// Drop cuts dominated on the whole grid (1-D only).
    pub prune: bool,
    pub threads: usize,
}

impl Default for BocpConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.5,
            k_max: 2000,
            grid_points: 201,
            restart_period: 10,
            restart: Restart::MaxResidual,
            seed: 0,
            prune: false,
            threads: 1,
        }
    }
}

impl BocpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return invalid("epsilon must be positive");
        }
        if self.k_max == 0 || self.restart_period == 0 {
            return invalid("k_max and restart_period must be at least 1");
        }
        if self.grid_points < 2 {
            return invalid("the residual grid needs at least two points per dimension");
        }
        Ok(())
    }

    /// Tensor grid with `grid_points` per dimension over the state box.
    pub fn residual_grid(&self, model: &ScenarioModel) -> Vec<Vec<f64>> {
        tensor_grid(model, self.grid_points)
    }
}

pub fn tensor_grid(model: &ScenarioModel, points: usize) -> Vec<Vec<f64>> {
    let (lo, hi) = model.state_box();
    let axes: Vec<Vec<f64>> = lo.iter().zip(hi).map(|(l, h)| uniform_grid(*l, *h, points)).collect();
    let mut out: Vec<Vec<f64>> = vec![Vec::new()];
    for axis in &axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&x| {
                    let mut p = prefix.clone();
                    p.push(x);
                    p
                })
            })
            .collect();
    }
    out
}

/// How the periodic restart picks its trial state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Restart {
    /// Uniform draw from the residual grid.
    Uniform,
    /// Grid point with the largest current residual.
    #[default]
    MaxResidual,
}

/// One row of the per-iteration history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub residual: f64,
    pub cuts: usize,
    pub master_obj: f64,
    pub trial_state: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BocpState {
    /// Iterations performed.
    pub k: usize,
    pub trial_state: Vec<f64>,
    pub last_residual: f64,
    pub converged: bool,
    pub history: Vec<IterationRecord>,
}

/// Optimal master solution at one trial state.
#[derive(Debug, Clone, PartialEq)]
pub struct MasterSolution {
    pub action: Vec<f64>,
    /// CVaR threshold; NaN when the ambiguity set is a single distribution.
    pub zeta: f64,
    pub y: Vec<f64>,
    pub objective: f64,
    /// Duals 𝔞* of the rows y_j ≥ h_j − ζ.
    pub duals_a: Vec<f64>,
    /// θ_j = 𝔞*_j/(u_j − l_j), zero where the band is empty.
    pub theta: Vec<f64>,
    /// ∂(optimal value)/∂s̄ assembled from the row sensitivities.
    pub slope: Vec<f64>,
    /// Cut rows present in the final LP, as (scenario, cut index).
    pub cut_rows: Vec<(usize, usize)>,
    pub lp_iterations: usize,
}

struct Layout {
    n: usize,
    zeta: Option<usize>,
    j: usize,
}

impl Layout {
    fn c(&self, j: usize) -> usize {
        self.n + usize::from(self.zeta.is_some()) + j
    }
    fn w(&self, j: usize) -> usize {
        self.c(j) + self.j
    }
    fn y(&self, j: usize) -> usize {
        self.w(j) + self.j
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// ℓ(A s + B a + b) as (coefficients on a, constant part at s).
fn cut_at_successor(cut: &Cut, model: &ScenarioModel, j: usize, s: &[f64]) -> (Vec<f64>, f64, Vec<f64>) {
    let sc = model.scenario(j);
    let m = model.state_dim();
    let n = model.action_dim();
    let mut a_coef = vec![0.0; n];
    let mut s_coef = vec![0.0; m];
    let mut constant = cut.intercept;
    for i in 0..m {
        let q = cut.slope[i];
        constant += q * (dot(&sc.a[i], s) + sc.offset[i] - cut.anchor[i]);
        for (k, v) in sc.b[i].iter().enumerate() {
            a_coef[k] += q * v;
        }
        for (k, v) in sc.a[i].iter().enumerate() {
            s_coef[k] += q * v;
        }
    }
    (a_coef, constant, s_coef)
}

/// Solves the master LP at `s_bar`.
pub fn master_solve(model: &ScenarioModel, spec: &RiskSpec, pool: &CutPool, s_bar: &[f64]) -> Result<MasterSolution> {
    master_with_lp(model, spec, pool, s_bar).map(|(sol, _)| sol)
}

/// The master solution together with the final LP, lazy rows included.
pub fn master_with_lp(
    model: &ScenarioModel,
    spec: &RiskSpec,
    pool: &CutPool,
    s_bar: &[f64],
) -> Result<(MasterSolution, LinearProgram)> {
    let m = model.state_dim();
    let n = model.action_dim();
    let jn = model.num_scenarios();
    if s_bar.len() != m || spec.len() != jn {
        return invalid("trial state or risk spec does not match the model");
    }
    let gamma = model.gamma();
    let low = spec.low_weights();
    let band = spec.band_weights();
    let tail = spec.point_mass().is_none();
    let lay = Layout {
        n,
        zeta: tail.then_some(n),
        j: jn,
    };
    let nvars = lay.w(jn - 1) + 1 + if tail { jn } else { 0 };

    let mut lp = LinearProgram::new(nvars);
    let (alo, ahi) = model.action_box();
    for k in 0..n {
        lp.set_bounds(k, alo[k], ahi[k]);
    }
    if let Some(z) = lay.zeta {
        lp.set_bounds(z, f64::NEG_INFINITY, f64::INFINITY);
        lp.set_cost(z, 1.0 - spec.lambda);
    }
    for j in 0..jn {
        lp.set_bounds(lay.c(j), -model.cost_bound(), f64::INFINITY);
        lp.set_bounds(lay.w(j), pool.floor, f64::INFINITY);
        lp.set_cost(lay.c(j), low[j]);
        lp.set_cost(lay.w(j), gamma * low[j]);
        if tail {
            lp.set_cost(lay.y(j), band[j]);
        }
    }

    // ∂rhs/∂s̄ of every row, in row order
    let mut drhs: Vec<Vec<f64>> = Vec::new();
    for row in model.admissible_rows(s_bar) {
        lp.add_row(row.coef.iter().copied().enumerate().collect(), RowKind::Le, row.rhs);
        drhs.push(row.drhs_ds);
    }
    for j in 0..jn {
        for p in &model.scenario(j).pieces {
            let mut coefs = vec![(lay.c(j), 1.0)];
            coefs.extend(p.action.iter().enumerate().map(|(k, v)| (k, -v)));
            lp.add_row(coefs, RowKind::Ge, p.constant + dot(&p.state, s_bar));
            drhs.push(p.state.clone());
        }
    }
    let mut tail_rows = Vec::new();
    if let Some(z) = lay.zeta {
        for j in 0..jn {
            let r = lp.add_row(
                vec![(lay.y(j), 1.0), (lay.c(j), -1.0), (lay.w(j), -gamma), (z, 1.0)],
                RowKind::Ge,
                0.0,
            );
            tail_rows.push(r);
            drhs.push(vec![0.0; m]);
        }
    }

    let mut cut_rows: Vec<(usize, usize)> = Vec::new();
    let add_cut =
        |lp: &mut LinearProgram, drhs: &mut Vec<Vec<f64>>, rows: &mut Vec<(usize, usize)>, j: usize, eta: usize| {
            let (a_coef, constant, s_coef) = cut_at_successor(&pool.cuts[eta], model, j, s_bar);
            let mut coefs = vec![(lay.w(j), 1.0)];
            coefs.extend(
                a_coef
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(k, v)| (k, -v)),
            );
            lp.add_row(coefs, RowKind::Ge, constant);
            drhs.push(s_coef);
            rows.push((j, eta));
        };

    // seed with the cuts active at the successors of a few probe actions
    if !pool.is_empty() {
        let probes: Vec<Vec<f64>> = probe_actions(model, s_bar);
        let mut seeded = std::collections::BTreeSet::new();
        for a in &probes {
            for j in 0..jn {
                let next = model.next_state(j, s_bar, a);
                if let (_, Some(eta)) = pool.envelope_eval(&next) {
                    if seeded.insert((j, eta)) {
                        add_cut(&mut lp, &mut drhs, &mut cut_rows, j, eta);
                    }
                }
            }
        }
    }

    let mut total_iters = 0;
    let sol = loop {
        let sol = lp::solve(&lp)?;
        total_iters += sol.iterations;
        match sol.status {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => {
                return Err(Error::InvalidInput(format!(
                    "no admissible action at trial state {s_bar:?}"
                )))
            }
            LpStatus::Unbounded => return Err(Error::Internal("master LP reported unbounded".into())),
        }
        let a = &sol.x[..n];
        let mut added = false;
        for j in 0..jn {
            let next = model.next_state(j, s_bar, a);
            let (env, eta) = pool.envelope_eval(&next);
            let w = sol.x[lay.w(j)];
            if let Some(eta) = eta {
                if env > w + LAZY_TOL * (1.0 + env.abs()) && !cut_rows.contains(&(j, eta)) {
                    add_cut(&mut lp, &mut drhs, &mut cut_rows, j, eta);
                    added = true;
                }
            }
        }
        if !added {
            break sol;
        }
    };

    let mut slope = vec![0.0; m];
    for (y, d) in sol.rhs_sensitivity.iter().zip(&drhs) {
        for (q, v) in slope.iter_mut().zip(d) {
            *q += y * v;
        }
    }
    let duals_a: Vec<f64> = tail_rows.iter().map(|&r| sol.duals[r]).collect();
    let mut theta = vec![0.0; jn];
    for (j, a) in duals_a.iter().enumerate() {
        if band[j] <= 0.0 {
            continue;
        }
        let t = a / band[j];
        if !(-THETA_TOL..=1.0 + THETA_TOL).contains(&t) {
            return Err(Error::DualRecovery(format!("theta_{j} = {t} outside [0, 1]")));
        }
        theta[j] = t.clamp(0.0, 1.0);
    }
    let master = MasterSolution {
        action: sol.x[..n].to_vec(),
        zeta: lay.zeta.map_or(f64::NAN, |z| sol.x[z]),
        y: if tail {
            (0..jn).map(|j| sol.x[lay.y(j)]).collect()
        } else {
            Vec::new()
        },
        objective: sol.objective,
        duals_a,
        theta,
        slope,
        cut_rows,
        lp_iterations: total_iters,
    };
    Ok((master, lp))
}

fn probe_actions(model: &ScenarioModel, s: &[f64]) -> Vec<Vec<f64>> {
    let (alo, ahi) = model.action_box();
    if model.state_dim() == 1 && model.action_dim() == 1 {
        if let Some((lo, hi)) = model.admissible_interval(s[0]) {
            return [0.0, 0.25, 0.5, 0.75, 1.0]
                .iter()
                .map(|t| vec![lo + t * (hi - lo)])
                .collect();
        }
    }
    vec![alo.iter().zip(ahi).map(|(l, h)| 0.5 * (l + h)).collect()]
}

/// L̂(V̲)(s) through the master LP.
pub fn bellman_apply_lp(model: &ScenarioModel, spec: &RiskSpec, pool: &CutPool, s: &[f64]) -> Result<(f64, Vec<f64>)> {
    master_solve(model, spec, pool, s).map(|ms| (ms.objective, ms.action))
}

/// Greedy policy of a cut pool, acting through the master LP.
pub struct MasterPolicy<'a> {
    pub model: &'a ScenarioModel,
    pub spec: &'a RiskSpec,
    pub pool: &'a CutPool,
}

impl Policy for MasterPolicy<'_> {
    fn act(&self, s: &[f64]) -> Vec<f64> {
        match master_solve(self.model, self.spec, self.pool, s) {
            Ok(ms) => ms.action,
            Err(e) => {
                warn!("master LP failed at {s:?}: {e}");
                self.model.action_box().0.to_vec()
            }
        }
    }
}

/// The supporting cut of L̂(V̲) anchored at s̄.
pub fn generate_cut(s_bar: &[f64], master: &MasterSolution) -> Result<Cut> {
    Cut::new(s_bar.to_vec(), master.objective, master.slope.clone())
}

/// Slope built scenario by scenario from the active stage-cost piece, the
/// active cut at the successor and the mixing weights l_j + (u_j − l_j)θ_j.
/// Agrees with the sensitivity slope whenever no admissible-action row
/// carries a multiplier.
pub fn mixed_slope(
    model: &ScenarioModel,
    spec: &RiskSpec,
    pool: &CutPool,
    s_bar: &[f64],
    master: &MasterSolution,
) -> Vec<f64> {
    let m = model.state_dim();
    let gamma = model.gamma();
    let low = spec.low_weights();
    let band = spec.band_weights();
    let mut q = vec![0.0; m];
    for j in 0..model.num_scenarios() {
        let weight = low[j] + band[j] * master.theta[j];
        if weight == 0.0 {
            continue;
        }
        let sc = model.scenario(j);
        let piece = sc
            .pieces
            .iter()
            .max_by(|x, y| x.eval(s_bar, &master.action).total_cmp(&y.eval(s_bar, &master.action)))
            .expect("nonempty pieces");
        let next = model.next_state(j, s_bar, &master.action);
        let cut_slope = match pool.envelope_eval(&next).1 {
            Some(eta) => pool.cuts[eta].slope.clone(),
            None => vec![0.0; m],
        };
        for (k, qk) in q.iter_mut().enumerate() {
            let through: f64 = (0..m).map(|i| sc.a[i][k] * cut_slope[i]).sum();
            *qk += weight * (piece.state[k] + gamma * through);
        }
    }
    q
}

/// max over the grid of L̂(V̲)(s) − V̲(s). One-dimensional models use the
/// golden-section Bellman sweep on the compiled envelope, an evaluation
/// path independent of the master LP.
pub fn residual(
    model: &ScenarioModel,
    spec: &RiskSpec,
    pool: &CutPool,
    grid: &[Vec<f64>],
    threads: usize,
) -> Result<f64> {
    Ok(residual_profile(model, spec, pool, grid, threads)?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max))
}

/// L̂(V̲)(s) − V̲(s) at every grid point.
pub fn residual_profile(
    model: &ScenarioModel,
    spec: &RiskSpec,
    pool: &CutPool,
    grid: &[Vec<f64>],
    threads: usize,
) -> Result<Vec<f64>> {
    if model.state_dim() == 1 && model.action_dim() == 1 {
        let env = pool.compile_1d();
        let states: Vec<f64> = grid.iter().map(|s| s[0]).collect();
        let image = bellman_sweep(model, spec, &env, &states)?;
        return Ok(image
            .iter()
            .zip(&states)
            .map(|((v, _), &s)| v - env.eval_with_source(s).0)
            .collect());
    }
    par::map_indexed(grid.len(), threads, |i| {
        master_solve(model, spec, pool, &grid[i]).map(|ms| ms.objective - pool.envelope_eval(&grid[i]).0)
    })
    .into_iter()
    .collect()
}

/// Slope bound L_C/(1 − γL_g) from the cost and transition coefficients,
/// or None when γL_g ≥ 1.
pub fn slope_bound(model: &ScenarioModel) -> Option<f64> {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut lc = 0.0_f64;
    let mut lg = 0.0_f64;
    for sc in model.scenarios() {
        for p in &sc.pieces {
            lc = lc.max(norm(&p.state) + norm(&p.action));
        }
        for row in &sc.a {
            lg = lg.max(row.iter().map(|v| v.abs()).sum());
        }
    }
    let denom = 1.0 - model.gamma() * lg;
    (denom > 0.0).then(|| lc / denom)
}

/// Runs the cutting-plane loop from `initial`, which must already be a
/// valid lower bound for this spec.
pub fn run(
    model: &ScenarioModel,
    spec: &RiskSpec,
    config: &BocpConfig,
    initial: CutPool,
) -> Result<(CutPool, BocpState)> {
    run_observed(model, spec, config, initial, |_, _| {})
}

/// [`run`] with a callback invoked after every pool update.
pub fn run_observed(
    model: &ScenarioModel,
    spec: &RiskSpec,
    config: &BocpConfig,
    initial: CutPool,
    mut observe: impl FnMut(usize, &CutPool),
) -> Result<(CutPool, BocpState)> {
    config.validate()?;
    let grid = config.residual_grid(model);
    let mut rng = rng::stream(config.seed, 0);
    let center = crate::dist::Pmf::normalized(spec.center.clone())?;
    let target = (1.0 - model.gamma()) * config.epsilon;
    let bound = slope_bound(model);
    let mut pool = initial;
    let mut s_bar = grid[rng.random_range(0..grid.len())].clone();
    let mut profile = vec![0.0; grid.len()];
    let mut state = BocpState {
        k: 0,
        trial_state: s_bar.clone(),
        last_residual: f64::INFINITY,
        converged: false,
        history: Vec::new(),
    };
    for k in 0..config.k_max {
        if k > 0 && k % config.restart_period == 0 {
            let i = match config.restart {
                Restart::Uniform => rng.random_range(0..grid.len()),
                Restart::MaxResidual => (0..grid.len()).fold(0, |b, i| if profile[i] > profile[b] { i } else { b }),
            };
            s_bar = grid[i].clone();
        }
        let ms = master_solve(model, spec, &pool, &s_bar)?;
        let cut = generate_cut(&s_bar, &ms)?;
        if let Some(b) = bound {
            let qn = cut.slope.iter().map(|x| x * x).sum::<f64>().sqrt();
            if qn > 1.01 * b {
                warn!("cut slope norm {qn:.3} exceeds the bound {b:.3} at {s_bar:?}");
            }
        }
        pool.push(cut);
        if config.prune && model.state_dim() == 1 {
            pool.prune_dominated_1d(&grid.iter().map(|s| s[0]).collect::<Vec<_>>(), 1e-9);
        }
        profile = residual_profile(model, spec, &pool, &grid, config.threads)?;
        let res = profile.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        state.k = k + 1;
        state.trial_state = s_bar.clone();
        state.last_residual = res;
        state.history.push(IterationRecord {
            k: k + 1,
            residual: res,
            cuts: pool.len(),
            master_obj: ms.objective,
            trial_state: s_bar.clone(),
        });
        observe(k + 1, &pool);
        if res <= target {
            state.converged = true;
            debug!("converged after {} iterations, residual {res:.3e}", k + 1);
            break;
        }
        let j = center.sample_index(&mut rng);
        s_bar = model.next_state(j, &s_bar, &ms.action);
        model.clip_state(&mut s_bar);
    }
    Ok((pool, state))
}

/// Δ(ℓ) = min over s ∈ 𝒮 and admissible a of ρ[cost + γℓ(next)] − ℓ(s):
/// the cut is a sub-solution of the operator iff Δ ≥ 0. None when the
/// LP fails.
pub fn warm_start_delta(model: &ScenarioModel, spec: &RiskSpec, cut: &Cut) -> Option<f64> {
    let (lp, constant) = warm_start_lp(model, spec, cut);
    match lp::solve(&lp) {
        Ok(sol) if sol.status == LpStatus::Optimal => Some(sol.objective + constant),
        Ok(sol) => {
            warn!("warm-start LP ended with status {:?}", sol.status);
            None
        }
        Err(e) => {
            warn!("warm-start LP failed: {e}");
            None
        }
    }
}

/// The validity LP of [`warm_start_delta`] and the constant to add to its
/// optimal value. Variables are ordered (s, a, ζ, c_j, y_j).
pub fn warm_start_lp(model: &ScenarioModel, spec: &RiskSpec, cut: &Cut) -> (LinearProgram, f64) {
    let m = model.state_dim();
    let n = model.action_dim();
    let jn = model.num_scenarios();
    let gamma = model.gamma();
    let low = spec.low_weights();
    let band = spec.band_weights();
    let tail = spec.point_mass().is_none();
    // variables: s (m), a (n), ζ, c_j, y_j
    let zeta = m + n;
    let c0 = zeta + usize::from(tail);
    let y0 = c0 + jn;
    let nvars = y0 + if tail { jn } else { 0 };
    let mut lp = LinearProgram::new(nvars);
    let (slo, shi) = model.state_box();
    let (alo, ahi) = model.action_box();
    for i in 0..m {
        lp.set_bounds(i, slo[i], shi[i]);
    }
    for k in 0..n {
        lp.set_bounds(m + k, alo[k], ahi[k]);
    }
    let mut obj = vec![0.0; nvars];
    if tail {
        lp.set_bounds(zeta, f64::NEG_INFINITY, f64::INFINITY);
        obj[zeta] = 1.0 - spec.lambda;
    }
    let k0 = cut.intercept - dot(&cut.slope, &cut.anchor);
    let mut constant = -k0;
    for i in 0..m {
        obj[i] -= cut.slope[i];
    }
    for j in 0..jn {
        lp.set_bounds(c0 + j, -model.cost_bound(), f64::INFINITY);
        obj[c0 + j] += low[j];
        if tail {
            obj[y0 + j] += band[j];
        }
        let sc = model.scenario(j);
        // γℓ(next_j) = γ(qA s + qB a + q b + k0)
        let mut s_coef = vec![0.0; m];
        let mut a_coef = vec![0.0; n];
        let mut off = k0;
        for i in 0..m {
            let q = cut.slope[i];
            off += q * sc.offset[i];
            for (k, v) in sc.a[i].iter().enumerate() {
                s_coef[k] += gamma * q * v;
            }
            for (k, v) in sc.b[i].iter().enumerate() {
                a_coef[k] += gamma * q * v;
            }
        }
        let off = gamma * off;
        for i in 0..m {
            obj[i] += low[j] * s_coef[i];
        }
        for k in 0..n {
            obj[m + k] += low[j] * a_coef[k];
        }
        constant += low[j] * off;
        for p in &sc.pieces {
            let mut coefs = vec![(c0 + j, 1.0)];
            coefs.extend(p.state.iter().enumerate().map(|(i, v)| (i, -v)));
            coefs.extend(p.action.iter().enumerate().map(|(k, v)| (m + k, -v)));
            lp.add_row(coefs, RowKind::Ge, p.constant);
        }
        if tail {
            let mut coefs = vec![(y0 + j, 1.0), (c0 + j, -1.0), (zeta, 1.0)];
            coefs.extend(s_coef.iter().enumerate().map(|(i, v)| (i, -v)));
            coefs.extend(a_coef.iter().enumerate().map(|(k, v)| (m + k, -v)));
            lp.add_row(coefs, RowKind::Ge, off);
        }
    }
    let zero = vec![0.0; m];
    for row in model.admissible_rows(&zero) {
        let mut coefs: Vec<(usize, f64)> = row.coef.iter().enumerate().map(|(k, v)| (m + k, *v)).collect();
        coefs.extend(row.drhs_ds.iter().enumerate().map(|(i, v)| (i, -v)));
        lp.add_row(coefs, RowKind::Le, row.rhs);
    }
    for (j, c) in obj.into_iter().enumerate() {
        lp.set_cost(j, c);
    }
    (lp, constant)
}

/// Keeps the cuts of `pool` that remain sub-solutions under `spec`; the
/// floor always survives.
pub fn warm_start_filter(model: &ScenarioModel, spec: &RiskSpec, pool: &CutPool, threads: usize) -> CutPool {
    let deltas = par::map_indexed(pool.len(), threads, |i| warm_start_delta(model, spec, &pool.cuts[i]));
    let mut out = CutPool::new(pool.floor);
    for (cut, d) in pool.cuts.iter().zip(deltas) {
        if d.is_some_and(|d| d >= WARM_TOL) {
            out.push(cut.clone());
        }
    }
    debug!("warm start kept {} of {} cuts", out.len(), pool.len());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_inventory, InventoryParams};
    use crate::risk::RiskSpec;
    use approx::assert_abs_diff_eq;

    fn small() -> (ScenarioModel, RiskSpec) {
        let params = InventoryParams {
            bins: 5,
            ..InventoryParams::default()
        };
        let model = build_inventory(&params).unwrap();
        let p = vec![0.2; 5];
        let spec = RiskSpec::from_bounds(&[0.1; 5], &[0.4; 5], &p).unwrap();
        (model, spec)
    }

    #[test]
    fn tensor_grid_shape() {
        let (model, _) = small();
        let g = tensor_grid(&model, 11);
        assert_eq!(g.len(), 11);
        assert_eq!(g[0], vec![-50.0]);
        assert_eq!(g[10], vec![60.0]);
    }

    #[test]
    fn floor_only_master_matches_sweep() {
        let (model, spec) = small();
        let pool = CutPool::floor_only(&model);
        for s in [-20.0, 0.0, 15.0, 40.0] {
            let ms = master_solve(&model, &spec, &pool, &[s]).unwrap();
            let sweep = bellman_sweep(&model, &spec, &pool, &[s]).unwrap();
            assert_abs_diff_eq!(ms.objective, sweep[0].0, epsilon = 1e-6);
        }
    }

    #[test]
    fn theta_recovers_tail_mass() {
        let (model, spec) = small();
        let ms = master_solve(&model, &spec, &CutPool::floor_only(&model), &[5.0]).unwrap();
        let mass: f64 = spec.p_band.iter().zip(&ms.theta).map(|(p, t)| p * t).sum();
        assert_abs_diff_eq!(mass, 1.0 - spec.upsilon, epsilon = 1e-8);
    }

    #[test]
    fn short_run_keeps_cuts_below_image() {
        let (model, spec) = small();
        let cfg = BocpConfig {
            k_max: 30,
            grid_points: 23,
            ..BocpConfig::default()
        };
        let (pool, state) = run(&model, &spec, &cfg, CutPool::floor_only(&model)).unwrap();
        assert_eq!(pool.len(), state.k);
        assert!(state.history.iter().all(|h| h.residual > -1e-7));
    }
}
