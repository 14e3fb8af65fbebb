//! Value-function representations, Bellman operators, the grid
//! value-iteration oracle, policies and Monte Carlo policy evaluation.

use serde::{Deserialize, Serialize};

use crate::dist::Pmf;
use crate::error::{invalid, Error, Result};
use crate::model::ScenarioModel;
use crate::par;
use crate::risk::{self, RiskSpec};
use crate::rng;

const SCAN_POINTS: usize = 64;
const GOLDEN_TOL: f64 = 1e-8;

pub trait ValueFunction: Sync {
    fn eval(&self, s: &[f64]) -> f64;

    fn eval_1d(&self, s: f64) -> f64 {
        self.eval(&[s])
    }
}

/// V ≡ constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantValue(pub f64);

impl ValueFunction for ConstantValue {
    fn eval(&self, _s: &[f64]) -> f64 {
        self.0
    }
}

/// Affine minorant ℓ(s) = v + q·(s − s̄).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cut {
    pub anchor: Vec<f64>,
    pub intercept: f64,
    pub slope: Vec<f64>,
}

impl Cut {
    pub fn new(anchor: Vec<f64>, intercept: f64, slope: Vec<f64>) -> Result<Self> {
        if anchor.len() != slope.len() || anchor.is_empty() {
            return invalid("cut anchor and slope must be nonempty and of equal length");
        }
        if !intercept.is_finite() || anchor.iter().chain(&slope).any(|v| !v.is_finite()) {
            return invalid("cut entries must be finite");
        }
        Ok(Self {
            anchor,
            intercept,
            slope,
        })
    }

    pub fn eval(&self, s: &[f64]) -> f64 {
        self.intercept
            + self
                .slope
                .iter()
                .zip(s.iter().zip(&self.anchor))
                .map(|(q, (x, a))| q * (x - a))
                .sum::<f64>()
    }
}

/// Lower envelope max(floor, max_η ℓ_η).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutPool {
    pub floor: f64,
    pub cuts: Vec<Cut>,
}

impl CutPool {
    pub fn new(floor: f64) -> Self {
        Self {
            floor,
            cuts: Vec::new(),
        }
    }

    /// Pool holding only the constant cut −C̄/(1−γ).
    pub fn floor_only(model: &ScenarioModel) -> Self {
        Self::new(model.value_floor())
    }

    pub fn push(&mut self, cut: Cut) {
        self.cuts.push(cut);
    }

    pub fn len(&self) -> usize {
        self.cuts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cuts.is_empty()
    }

    /// Envelope value and the active cut (None for the floor); ties go to
    /// the floor, then to the lowest cut index.
    pub fn envelope_eval(&self, s: &[f64]) -> (f64, Option<usize>) {
        let mut best = self.floor;
        let mut arg = None;
        for (i, c) in self.cuts.iter().enumerate() {
            let v = c.eval(s);
            if v > best {
                best = v;
                arg = Some(i);
            }
        }
        (best, arg)
    }

    pub fn compile_1d(&self) -> Envelope1d {
        Envelope1d::build(self)
    }

    /// Drops cuts lying below the envelope of the others by more than `tol`
    /// at every grid point. Returns how many were removed.
    pub fn prune_dominated_1d(&mut self, grid: &[f64], tol: f64) -> usize {
        let before = self.cuts.len();
        let mut i = 0;
        while i < self.cuts.len() {
            let dominated = grid.iter().all(|&s| {
                let own = self.cuts[i].eval(&[s]);
                let others = self
                    .cuts
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| *k != i)
                    .map(|(_, c)| c.eval(&[s]))
                    .fold(self.floor, f64::max);
                own < others - tol
            });
            if dominated {
                self.cuts.remove(i);
            } else {
                i += 1;
            }
        }
        before - self.cuts.len()
    }
}

impl ValueFunction for CutPool {
    fn eval(&self, s: &[f64]) -> f64 {
        self.envelope_eval(s).0
    }
}

/// Upper hull of the lines of a one-dimensional pool, evaluated by binary
/// search over the breakpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope1d {
    slopes: Vec<f64>,
    offsets: Vec<f64>,
    breaks: Vec<f64>,
    source: Vec<Option<usize>>,
}

impl Envelope1d {
    pub fn build(pool: &CutPool) -> Self {
        let mut lines: Vec<(f64, f64, Option<usize>)> = Vec::with_capacity(pool.len() + 1);
        lines.push((0.0, pool.floor, None));
        for (i, c) in pool.cuts.iter().enumerate() {
            lines.push((c.slope[0], c.intercept - c.slope[0] * c.anchor[0], Some(i)));
        }
        lines.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let mut hull: Vec<(f64, f64, Option<usize>)> = Vec::with_capacity(lines.len());
        for line in lines {
            if let Some(last) = hull.last() {
                if last.0 == line.0 {
                    hull.pop();
                }
            }
            while hull.len() >= 2 {
                let l1 = hull[hull.len() - 2];
                let l2 = hull[hull.len() - 1];
                if cross(&l1, &line) <= cross(&l1, &l2) {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(line);
        }
        let breaks = hull.windows(2).map(|w| cross(&w[0], &w[1])).collect();
        Self {
            slopes: hull.iter().map(|l| l.0).collect(),
            offsets: hull.iter().map(|l| l.1).collect(),
            breaks,
            source: hull.iter().map(|l| l.2).collect(),
        }
    }

    fn piece(&self, s: f64) -> usize {
        self.breaks.partition_point(|&b| b < s)
    }

    pub fn eval_with_source(&self, s: f64) -> (f64, Option<usize>) {
        let i = self.piece(s);
        (self.slopes[i] * s + self.offsets[i], self.source[i])
    }

    /// Slope of the active piece at s.
    pub fn slope_at(&self, s: f64) -> f64 {
        self.slopes[self.piece(s)]
    }

    pub fn num_pieces(&self) -> usize {
        self.slopes.len()
    }
}

fn cross(a: &(f64, f64, Option<usize>), b: &(f64, f64, Option<usize>)) -> f64 {
    (a.1 - b.1) / (b.0 - a.0)
}

impl ValueFunction for Envelope1d {
    fn eval(&self, s: &[f64]) -> f64 {
        self.eval_1d(s[0])
    }

    fn eval_1d(&self, s: f64) -> f64 {
        let i = self.piece(s);
        self.slopes[i] * s + self.offsets[i]
    }
}

/// Piecewise-linear interpolant on a strictly increasing 1-D grid, constant
/// beyond the end points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridValue {
    grid: Vec<f64>,
    values: Vec<f64>,
}

impl GridValue {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 || grid.len() != values.len() {
            return invalid("grid value needs at least two points and matching values");
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("grid must be strictly increasing");
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Left node index and weight of the right node for s (clamped).
    pub fn locate(&self, s: f64) -> (usize, f64) {
        locate(&self.grid, s)
    }
}

/// `m` equally spaced points covering [lo, hi].
pub fn uniform_grid(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    let step = (hi - lo) / (m - 1) as f64;
    (0..m)
        .map(|i| if i + 1 == m { hi } else { lo + step * i as f64 })
        .collect()
}

fn locate(grid: &[f64], s: f64) -> (usize, f64) {
    let last = grid.len() - 1;
    if s <= grid[0] {
        return (0, 0.0);
    }
    if s >= grid[last] {
        return (last - 1, 1.0);
    }
    let i = grid.partition_point(|&g| g <= s) - 1;
    let w = (s - grid[i]) / (grid[i + 1] - grid[i]);
    (i, w)
}

impl ValueFunction for GridValue {
    fn eval(&self, s: &[f64]) -> f64 {
        self.eval_1d(s[0])
    }

    fn eval_1d(&self, s: f64) -> f64 {
        let (i, w) = locate(&self.grid, s);
        (1.0 - w) * self.values[i] + w * self.values[i + 1]
    }
}

/// Minimizes a convex function on [lo, hi]: 64-point scan, then golden
/// section on the bracket around the best scan point.
pub fn minimize_convex_1d(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    if hi - lo <= GOLDEN_TOL {
        let x = 0.5 * (lo + hi);
        return (x, f(x));
    }
    let pts = uniform_grid(lo, hi, SCAN_POINTS);
    let vals: Vec<f64> = pts.iter().map(|&x| f(x)).collect();
    let k = (0..SCAN_POINTS).fold(0, |b, i| if vals[i] < vals[b] { i } else { b });
    let mut a = pts[k.saturating_sub(1)];
    let mut b = pts[(k + 1).min(SCAN_POINTS - 1)];
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > GOLDEN_TOL {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    let (xg, fg) = if fc <= fd { (c, fc) } else { (d, fd) };
    if vals[k] <= fg {
        (pts[k], vals[k])
    } else {
        (xg, fg)
    }
}

/// ρ[cost(s, a, ξ) + γ V(g(s, a, ξ))] at a fixed action.
pub fn bellman_objective<V: ValueFunction + ?Sized>(
    model: &ScenarioModel,
    spec: &RiskSpec,
    v: &V,
    s: &[f64],
    a: &[f64],
) -> f64 {
    let g = model.gamma();
    let h: Vec<f64> = (0..model.num_scenarios())
        .map(|j| model.cost(j, s, a) + g * v.eval(&model.next_state(j, s, a)))
        .collect();
    spec.rho_unchecked(&h)
}

/// Admissible action interval for one-dimensional actions.
fn action_interval(model: &ScenarioModel, s: &[f64]) -> Option<(f64, f64)> {
    if model.state_dim() == 1 {
        return model.admissible_interval(s[0]);
    }
    let (alo, ahi) = model.action_box();
    let (mut lo, mut hi) = (alo[0], ahi[0]);
    for row in model.admissible_rows(s) {
        let c = row.coef[0];
        if c > 0.0 {
            hi = hi.min(row.rhs / c);
        } else if c < 0.0 {
            lo = lo.max(row.rhs / c);
        }
    }
    (lo <= hi + 1e-12).then_some((lo, hi.max(lo)))
}

/// inf_a ρ[cost + γV(next)] at state s and a minimizing action, for
/// one-dimensional actions. Cut pools with multi-dimensional actions go
/// through the LP master in [`crate::bocp::master_solve`].
pub fn bellman_apply<V: ValueFunction + ?Sized>(
    model: &ScenarioModel,
    spec: &RiskSpec,
    v: &V,
    s: &[f64],
) -> Result<(f64, Vec<f64>)> {
    if s.len() != model.state_dim() || spec.len() != model.num_scenarios() {
        return invalid("state or risk spec does not match the model");
    }
    if model.action_dim() != 1 {
        return invalid("grid Bellman evaluation needs one-dimensional actions; use the LP master");
    }
    let (lo, hi) =
        action_interval(model, s).ok_or_else(|| Error::InvalidInput(format!("no admissible action at state {s:?}")))?;
    let g = model.gamma();
    let mut h = vec![0.0; model.num_scenarios()];
    let (a, val) = if model.state_dim() == 1 {
        let s0 = s[0];
        minimize_convex_1d(
            |a| {
                for (j, hj) in h.iter_mut().enumerate() {
                    *hj = model.cost_1d(j, s0, a) + g * v.eval_1d(model.next_state_1d(j, s0, a));
                }
                spec.rho_unchecked(&h)
            },
            lo,
            hi,
        )
    } else {
        minimize_convex_1d(|a| bellman_objective(model, spec, v, s, &[a]), lo, hi)
    };
    Ok((val, vec![a]))
}

/// Post-decision form of a 1-D model whose cost reads −c·s + G(s + a):
/// the minimizing post-decision level y* is shared by all states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PostDecision {
    pub shift: f64,
    pub y_lo: f64,
    pub y_hi: f64,
}

impl PostDecision {
    pub fn new(model: &ScenarioModel) -> Option<Self> {
        let shift = model.post_decision_shift()?;
        let (slo, shi) = model.state_box();
        let (alo, ahi) = model.action_box();
        let mut y_lo = slo[0] + alo[0];
        let mut y_hi = shi[0] + ahi[0];
        for sc in model.scenarios() {
            y_lo = y_lo.max(slo[0] - sc.offset[0]);
            y_hi = y_hi.min(shi[0] - sc.offset[0]);
        }
        (y_lo <= y_hi).then_some(Self { shift, y_lo, y_hi })
    }

    /// G(y) = ρ_j[cost_j(0, y) + γ V(y + b^j)].
    pub fn g<V: ValueFunction + ?Sized>(
        &self,
        model: &ScenarioModel,
        spec: &RiskSpec,
        v: &V,
        y: f64,
        h: &mut [f64],
    ) -> f64 {
        let gamma = model.gamma();
        for (j, hj) in h.iter_mut().enumerate() {
            *hj = model.cost_1d(j, 0.0, y) + gamma * v.eval_1d(y + model.scenario(j).offset[0]);
        }
        spec.rho_unchecked(h)
    }

    pub fn minimizer<V: ValueFunction + ?Sized>(&self, model: &ScenarioModel, spec: &RiskSpec, v: &V) -> f64 {
        let mut h = vec![0.0; model.num_scenarios()];
        minimize_convex_1d(|y| self.g(model, spec, v, y, &mut h), self.y_lo, self.y_hi).0
    }

    /// Reachable post-decision levels from s.
    pub fn y_interval(&self, model: &ScenarioModel, s: f64) -> Option<(f64, f64)> {
        model.admissible_interval(s).map(|(lo, hi)| (s + lo, s + hi))
    }
}

/// Bellman image (value, action) at each state of a 1-D model.
pub fn bellman_sweep<V: ValueFunction + ?Sized>(
    model: &ScenarioModel,
    spec: &RiskSpec,
    v: &V,
    states: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if model.state_dim() != 1 || model.action_dim() != 1 {
        return invalid("sweeps need a one-dimensional model");
    }
    if let Some(pd) = PostDecision::new(model) {
        let y_star = pd.minimizer(model, spec, v);
        let mut h = vec![0.0; model.num_scenarios()];
        return states
            .iter()
            .map(|&s| {
                let (lo, hi) = pd
                    .y_interval(model, s)
                    .ok_or_else(|| Error::InvalidInput(format!("no admissible action at state {s}")))?;
                let y = y_star.clamp(lo, hi);
                Ok((-pd.shift * s + pd.g(model, spec, v, y, &mut h), y - s))
            })
            .collect();
    }
    states
        .iter()
        .map(|&s| bellman_apply(model, spec, v, &[s]).map(|(val, a)| (val, a[0])))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub value: GridValue,
    pub actions: Vec<f64>,
    pub iterations: usize,
    /// Sup-norm change of every iteration.
    pub changes: Vec<f64>,
}

/// Grid value iteration V ← L̂V with linear interpolation, stopped when the
/// sup-change falls below tol·(1−γ)/(2γ) so the result is within tol/2 of
/// the grid fixed point.
pub fn value_iteration_oracle(
    model: &ScenarioModel,
    spec: &RiskSpec,
    grid: &[f64],
    tol: f64,
    max_iters: usize,
    init: Option<&[f64]>,
) -> Result<OracleResult> {
    if tol <= 0.0 {
        return invalid("oracle tolerance must be positive");
    }
    let gamma = model.gamma();
    let mut v = GridValue::new(
        grid.to_vec(),
        init.map_or_else(|| vec![0.0; grid.len()], |x| x.to_vec()),
    )?;
    let threshold = tol * (1.0 - gamma) / (2.0 * gamma);
    let mut changes = Vec::new();
    for it in 1..=max_iters {
        let next = bellman_sweep(model, spec, &v, grid)?;
        let change = next
            .iter()
            .zip(&v.values)
            .map(|((n, _), o)| (n - o).abs())
            .fold(0.0, f64::max);
        changes.push(change);
        v.values = next.iter().map(|p| p.0).collect();
        if change <= threshold {
            return Ok(OracleResult {
                actions: next.iter().map(|p| p.1).collect(),
                value: v,
                iterations: it,
                changes,
            });
        }
    }
    Err(Error::Convergence {
        iterations: max_iters,
        residual: changes.last().copied().unwrap_or(f64::INFINITY),
    })
}

pub trait Policy: Sync {
    fn act(&self, s: &[f64]) -> Vec<f64>;

    fn act_1d(&self, s: f64) -> f64 {
        self.act(&[s])[0]
    }
}

/// Greedy policy of a value function under a risk spec.
pub struct GreedyPolicy<'a, V: ValueFunction + ?Sized> {
    model: &'a ScenarioModel,
    spec: &'a RiskSpec,
    value: &'a V,
    post: Option<(PostDecision, f64)>,
}

impl<'a, V: ValueFunction + ?Sized> GreedyPolicy<'a, V> {
    pub fn new(model: &'a ScenarioModel, spec: &'a RiskSpec, value: &'a V) -> Self {
        let post = if model.state_dim() == 1 {
            PostDecision::new(model).map(|pd| (pd, pd.minimizer(model, spec, value)))
        } else {
            None
        };
        Self {
            model,
            spec,
            value,
            post,
        }
    }

    /// Shared post-decision target y*, when the model has that structure.
    pub fn target_level(&self) -> Option<f64> {
        self.post.map(|p| p.1)
    }
}

impl<V: ValueFunction + ?Sized> Policy for GreedyPolicy<'_, V> {
    fn act(&self, s: &[f64]) -> Vec<f64> {
        if let Some((pd, y_star)) = &self.post {
            if let Some((lo, hi)) = pd.y_interval(self.model, s[0]) {
                return vec![y_star.clamp(lo, hi) - s[0]];
            }
        }
        match bellman_apply(self.model, self.spec, self.value, s) {
            Ok((_, a)) => a,
            Err(_) => self.model.action_box().0.to_vec(),
        }
    }
}

/// Order-up-to policy a = clamp(level − s, 0, a_max).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaseStockPolicy {
    pub level: f64,
    pub action_max: f64,
}

impl Policy for BaseStockPolicy {
    fn act(&self, s: &[f64]) -> Vec<f64> {
        vec![(self.level - s[0]).clamp(0.0, self.action_max)]
    }
}

/// Actions tabulated on a grid, linearly interpolated.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPolicy {
    pub table: GridValue,
}

impl Policy for GridPolicy {
    fn act(&self, s: &[f64]) -> Vec<f64> {
        vec![self.table.eval_1d(s[0])]
    }
}

/// Any closure from a scalar state to a scalar action.
pub struct FnPolicy<F>(pub F);

impl<F: Fn(f64) -> f64 + Sync> Policy for FnPolicy<F> {
    fn act(&self, s: &[f64]) -> Vec<f64> {
        vec![(self.0)(s[0])]
    }
}

/// L^π V on the grid under a fixed pmf, successors interpolated.
pub fn policy_operator(model: &ScenarioModel, pmf: &Pmf, actions: &[f64], v: &GridValue) -> Result<Vec<f64>> {
    if actions.len() != v.len() || pmf.len() != model.num_scenarios() {
        return invalid("actions, grid and pmf must match the model");
    }
    let g = model.gamma();
    Ok(v.grid
        .iter()
        .zip(actions)
        .map(|(&s, &a)| {
            pmf.probs()
                .iter()
                .enumerate()
                .map(|(j, p)| p * (model.cost_1d(j, s, a) + g * v.eval_1d(model.next_state_1d(j, s, a))))
                .sum()
        })
        .collect())
}

/// Fixed point of L^π on the grid, by a direct solve of (I − γP_π)V = c_π.
pub fn policy_eval_fixed_point<P: Policy + ?Sized>(
    model: &ScenarioModel,
    pmf: &Pmf,
    policy: &P,
    grid: &[f64],
) -> Result<GridValue> {
    if model.state_dim() != 1 || pmf.len() != model.num_scenarios() {
        return invalid("policy evaluation needs a 1-D model and a pmf on its support");
    }
    let actions: Vec<f64> = grid.iter().map(|&s| policy.act_1d(s)).collect();
    policy_eval_actions(model, pmf, &actions, grid)
}

pub fn policy_eval_actions(model: &ScenarioModel, pmf: &Pmf, actions: &[f64], grid: &[f64]) -> Result<GridValue> {
    let m = grid.len();
    if actions.len() != m || m < 2 {
        return invalid("one action per grid point is required");
    }
    let g = model.gamma();
    let mut mat = vec![0.0; m * m];
    let mut rhs = vec![0.0; m];
    for i in 0..m {
        mat[i * m + i] = 1.0;
        let (s, a) = (grid[i], actions[i]);
        for (j, p) in pmf.probs().iter().enumerate() {
            if *p == 0.0 {
                continue;
            }
            rhs[i] += p * model.cost_1d(j, s, a);
            let (k, w) = locate(grid, model.next_state_1d(j, s, a));
            mat[i * m + k] -= g * p * (1.0 - w);
            mat[i * m + k + 1] -= g * p * w;
        }
    }
    let values = solve_dense(mat, rhs, m)?;
    GridValue::new(grid.to_vec(), values)
}

fn solve_dense(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Result<Vec<f64>> {
    for col in 0..n {
        let p = (col..n)
            .max_by(|&x, &y| a[x * n + col].abs().total_cmp(&a[y * n + col].abs()))
            .expect("nonempty");
        if a[p * n + col].abs() < 1e-14 {
            return Err(Error::Solver("singular policy-evaluation system".into()));
        }
        if p != col {
            for k in 0..n {
                a.swap(p * n + k, col * n + k);
            }
            b.swap(p, col);
        }
        let d = a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / d;
            if f != 0.0 {
                for k in col..n {
                    a[r * n + k] -= f * a[col * n + k];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r * n + k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r * n + r];
    }
    Ok(x)
}

/// Smallest T with γ^T·C̄ ≤ ε(1−γ): T = ⌈ln(ε(1−γ)/C̄)/ln γ⌉.
pub fn truncation_horizon(epsilon: f64, gamma: f64, cost_bound: f64) -> usize {
    let t = (epsilon * (1.0 - gamma) / cost_bound).ln() / gamma.ln();
    t.ceil().max(1.0) as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutConfig {
    pub horizon: usize,
    pub paths: usize,
    pub seed: u64,
    /// Number of leading paths whose step-by-step traces are kept.
    pub trace_paths: usize,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub path: usize,
    pub t: usize,
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub xi: f64,
    pub stage_cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub costs: Vec<f64>,
    pub traces: Vec<TraceRow>,
}

/// Discounted cost Σ_{t<T} γ^t·cost_t along independent paths with
/// disturbances drawn from `pmf`; path i uses generator stream i.
pub fn rollout<P: Policy + ?Sized>(
    model: &ScenarioModel,
    pmf: &Pmf,
    policy: &P,
    s0: &[f64],
    cfg: &RolloutConfig,
) -> Result<RolloutResult> {
    if cfg.horizon == 0 {
        return invalid("rollout horizon must be at least 1");
    }
    if pmf.len() != model.num_scenarios() || s0.len() != model.state_dim() {
        return invalid("pmf or initial state does not match the model");
    }
    let gamma = model.gamma();
    let per_path = par::map_indexed(cfg.paths, cfg.threads, |path| {
        let mut g = rng::stream(cfg.seed, path as u64);
        let mut s = s0.to_vec();
        let mut total = 0.0;
        let mut disc = 1.0;
        let mut rows = Vec::new();
        for t in 0..cfg.horizon {
            let a = policy.act(&s);
            let j = pmf.sample_index(&mut g);
            let c = model.cost(j, &s, &a);
            total += disc * c;
            disc *= gamma;
            if path < cfg.trace_paths {
                rows.push(TraceRow {
                    path,
                    t,
                    s: s.clone(),
                    a: a.clone(),
                    xi: model.support().point(j)[0],
                    stage_cost: c,
                });
            }
            s = model.next_state(j, &s, &a);
            model.clip_state(&mut s);
        }
        (total, rows)
    });
    let mut costs = Vec::with_capacity(cfg.paths);
    let mut traces = Vec::new();
    for (c, rows) in per_path {
        costs.push(c);
        traces.extend(rows);
    }
    Ok(RolloutResult { costs, traces })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SemidevDirection {
    /// E[(X − EX)^+]: excess cost above the mean.
    #[default]
    Upside,
    /// E[(EX − X)^+].
    Downside,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mean: f64,
    pub cvar95: f64,
    pub semidev: f64,
}

/// Mean, empirical CVaR at 0.95 (fractional weight on the boundary order
/// statistic) and semi-deviation of cost samples.
pub fn metrics(samples: &[f64], direction: SemidevDirection) -> Result<Metrics> {
    if samples.len() < 2 {
        return invalid("metrics need at least two samples");
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let w = vec![1.0 / n; samples.len()];
    let cvar95 = risk::cvar(&w, samples, 0.95)?;
    let semidev = samples
        .iter()
        .map(|x| match direction {
            SemidevDirection::Upside => (x - mean).max(0.0),
            SemidevDirection::Downside => (mean - x).max(0.0),
        })
        .sum::<f64>()
        / n;
    Ok(Metrics { mean, cvar95, semidev })
}

/// Occupation frequencies of one long trajectory, binned to the nearest
/// grid node after discarding a burn-in.
#[allow(clippy::too_many_arguments)]
pub fn stationary_weights<P: Policy + ?Sized>(
    model: &ScenarioModel,
    pmf: &Pmf,
    policy: &P,
    grid: &[f64],
    s0: f64,
    burn_in: usize,
    n_steps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_steps < grid.len() || grid.len() < 2 {
        return invalid("need at least as many steps as grid points");
    }
    let mut g = rng::stream(seed, 0);
    let mut s = vec![s0];
    let mut counts = vec![0.0; grid.len()];
    for t in 0..burn_in + n_steps {
        let a = policy.act(&s);
        let j = pmf.sample_index(&mut g);
        s = model.next_state(j, &s, &a);
        model.clip_state(&mut s);
        if t >= burn_in {
            let (i, w) = locate(grid, s[0]);
            counts[if w < 0.5 { i } else { i + 1 }] += 1.0;
        }
    }
    Ok(counts.into_iter().map(|c| c / n_steps as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::Support;
    use crate::model::{build_inventory, AffinePiece, InventoryParams, Scenario};
    use approx::assert_abs_diff_eq;

    fn two_cuts() -> CutPool {
        let mut p = CutPool::new(-100.0);
        p.push(Cut::new(vec![0.0], 0.0, vec![1.0]).unwrap());
        p.push(Cut::new(vec![0.0], 2.0, vec![-1.0]).unwrap());
        p
    }

    #[test]
    fn envelope_examples() {
        assert_eq!(CutPool::new(-3.0).envelope_eval(&[1.0]), (-3.0, None));
        let p = two_cuts();
        assert_eq!(p.envelope_eval(&[0.0]), (2.0, Some(1)));
        assert_eq!(p.envelope_eval(&[2.0]), (2.0, Some(0)));
        assert_eq!(p.envelope_eval(&[1.0]), (1.0, Some(0)));
    }

    #[test]
    fn compiled_envelope_matches_scan() {
        let mut g = rng::stream(11, 0);
        use rand::Rng;
        let mut pool = CutPool::new(-50.0);
        for _ in 0..40 {
            let cut = Cut::new(
                vec![g.random_range(-10.0..10.0)],
                g.random_range(-20.0..20.0),
                vec![g.random_range(-5.0..5.0)],
            )
            .unwrap();
            pool.push(cut);
        }
        let env = pool.compile_1d();
        for i in 0..500 {
            let s = -30.0 + 0.12 * i as f64;
            assert_abs_diff_eq!(env.eval_1d(s), pool.eval(&[s]), epsilon = 1e-9);
        }
    }

    #[test]
    fn interpolation() {
        let v = GridValue::new(vec![0.0, 1.0, 3.0], vec![0.0, 2.0, 0.0]).unwrap();
        assert_abs_diff_eq!(v.eval_1d(0.5), 1.0);
        assert_abs_diff_eq!(v.eval_1d(2.0), 1.0);
        assert_abs_diff_eq!(v.eval_1d(-1.0), 0.0);
        assert_abs_diff_eq!(v.eval_1d(9.0), 0.0);
        assert!(GridValue::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn golden_finds_kinked_minimum() {
        let (x, f) = minimize_convex_1d(|x| (x - 1.234567).abs() + 2.0, -10.0, 10.0);
        assert_abs_diff_eq!(x, 1.234567, epsilon = 1e-7);
        assert_abs_diff_eq!(f, 2.0, epsilon = 1e-7);
        let (x, _) = minimize_convex_1d(|x| x, 3.0, 4.0);
        assert_eq!(x, 3.0);
    }

    #[test]
    fn truncation_horizon_example() {
        assert_eq!(truncation_horizon(1.0, 0.95, 100.0), 149);
    }

    #[test]
    fn metrics_examples() {
        let m = metrics(&[3.0; 10], SemidevDirection::Upside).unwrap();
        assert_abs_diff_eq!(m.cvar95, 3.0, epsilon = 1e-12);
        assert_eq!(m.semidev, 0.0);
        let xs: Vec<f64> = (0..100).map(f64::from).collect();
        assert_abs_diff_eq!(
            metrics(&xs, SemidevDirection::Upside).unwrap().cvar95,
            97.0,
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(metrics(&[0.0, 10.0], SemidevDirection::Upside).unwrap().semidev, 2.5);
        assert_abs_diff_eq!(metrics(&[0.0, 10.0], SemidevDirection::Downside).unwrap().semidev, 2.5);
        assert!(metrics(&[1.0], SemidevDirection::Upside).is_err());
    }

    fn constant_cost_model() -> ScenarioModel {
        let support = Support::scalar(&[0.0, 1.0]).unwrap();
        let sc = |o: f64| Scenario {
            a: vec![vec![0.5]],
            b: vec![vec![0.0]],
            offset: vec![o],
            pieces: vec![AffinePiece {
                constant: 1.0,
                state: vec![0.0],
                action: vec![0.0],
            }],
        };
        ScenarioModel::new(
            support,
            vec![sc(0.0), sc(1.0)],
            (vec![-4.0], vec![4.0]),
            (vec![0.0], vec![1.0]),
            0.9,
        )
        .unwrap()
    }

    #[test]
    fn constant_cost_policy_value() {
        let m = constant_cost_model();
        let pmf = Pmf::new(vec![0.3, 0.7]).unwrap();
        let grid = uniform_grid(-4.0, 4.0, 9);
        let v = policy_eval_fixed_point(&m, &pmf, &FnPolicy(|_| 0.0), &grid).unwrap();
        for x in v.values() {
            assert_abs_diff_eq!(*x, 10.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn myopic_bellman_with_zero_continuation() {
        let p = InventoryParams::default();
        let m = build_inventory(&p).unwrap();
        let j = 10;
        let mut center = vec![0.0; 50];
        center[j] = 1.0;
        let spec = RiskSpec::from_bounds(&center, &center, &center).unwrap();
        // continuation constant K shifts the value by γK
        let (v0, a0) = bellman_apply(&m, &spec, &ConstantValue(0.0), &[0.0]).unwrap();
        let (v1, _) = bellman_apply(&m, &spec, &ConstantValue(7.0), &[0.0]).unwrap();
        assert_abs_diff_eq!(v1 - v0, 0.95 * 7.0, epsilon = 1e-9);
        // deterministic demand 10.5, zero stock: order exactly the demand
        assert_abs_diff_eq!(a0[0], 10.5, epsilon = 1e-6);
        assert_abs_diff_eq!(v0, 10.5, epsilon = 1e-6);
    }

    #[test]
    fn sweep_fast_path_matches_pointwise_search() {
        let p = InventoryParams {
            bins: 10,
            ..Default::default()
        };
        let m = build_inventory(&p).unwrap();
        let pmf = crate::model::discretize_exponential(10.0, 50.0, 10).unwrap();
        let b = crate::dist::BoxAmbiguity::new(pmf, vec![0.03; 10], None).unwrap();
        let spec = RiskSpec::from_box(&b).unwrap();
        let v = GridValue::new(
            uniform_grid(-50.0, 60.0, 23),
            uniform_grid(-50.0, 60.0, 23).iter().map(|s| 0.01 * s * s).collect(),
        )
        .unwrap();
        let states = uniform_grid(-50.0, 60.0, 12);
        let fast = bellman_sweep(&m, &spec, &v, &states).unwrap();
        for (s, (val, _)) in states.iter().zip(&fast) {
            let (slow, _) = bellman_apply(&m, &spec, &v, &[*s]).unwrap();
            assert_abs_diff_eq!(*val, slow, epsilon = 1e-6);
        }
    }

    #[test]
    fn rollout_is_deterministic_in_threads() {
        let p = InventoryParams {
            bins: 10,
            ..Default::default()
        };
        let m = build_inventory(&p).unwrap();
        let pmf = crate::model::discretize_exponential(10.0, 50.0, 10).unwrap();
        let pol = BaseStockPolicy {
            level: 17.0,
            action_max: 60.0,
        };
        let mk = |threads| RolloutConfig {
            horizon: 30,
            paths: 16,
            seed: 9,
            trace_paths: 2,
            threads,
        };
        let a = rollout(&m, &pmf, &pol, &[0.0], &mk(1)).unwrap();
        let b = rollout(&m, &pmf, &pol, &[0.0], &mk(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.traces.len(), 60);
    }

    #[test]
    fn stationary_weights_sum_to_one() {
        let p = InventoryParams {
            bins: 10,
            ..Default::default()
        };
        let m = build_inventory(&p).unwrap();
        let pmf = crate::model::discretize_exponential(10.0, 50.0, 10).unwrap();
        let pol = BaseStockPolicy {
            level: 17.0,
            action_max: 60.0,
        };
        let grid = uniform_grid(-50.0, 60.0, 111);
        let w = stationary_weights(&m, &pmf, &pol, &grid, 0.0, 10, 5000, 1).unwrap();
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        for (s, wi) in grid.iter().zip(&w) {
            if *wi > 0.0 {
                assert!(*s >= 17.0 - 50.0 - 0.5 && *s <= 17.0 + 0.5, "mass at {s}");
            }
        }
    }
}
