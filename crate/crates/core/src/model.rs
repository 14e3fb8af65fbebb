//! Scenario-based control model with affine transitions and
//! max-of-affine stage costs, plus the single-product inventory instance.

use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::dist::{Pmf, Support};
use crate::error::{invalid, violated, Result};

/// One affine piece `constant + state·s + action·a` of a stage cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinePiece {
    pub constant: f64,
    pub state: Vec<f64>,
    pub action: Vec<f64>,
}

impl AffinePiece {
    pub fn eval(&self, s: &[f64], a: &[f64]) -> f64 {
        self.constant + dot(&self.state, s) + dot(&self.action, a)
    }
}

/// Transition s' = A s + B a + b and cost max_i piece_i(s, a) under one
/// disturbance realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
    pub pieces: Vec<AffinePiece>,
}

impl Scenario {
    pub fn next_state(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        self.a
            .iter()
            .zip(&self.b)
            .zip(&self.offset)
            .map(|((ar, br), o)| dot(ar, s) + dot(br, a) + o)
            .collect()
    }

    pub fn cost(&self, s: &[f64], a: &[f64]) -> f64 {
        self.pieces
            .iter()
            .map(|p| p.eval(s, a))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioModel {
    support: Support,
    scenarios: Vec<Scenario>,
    state_lo: Vec<f64>,
    state_hi: Vec<f64>,
    action_lo: Vec<f64>,
    action_hi: Vec<f64>,
    gamma: f64,
    cost_bound: f64,
    post_decision: Option<f64>,
}

impl ScenarioModel {
    pub fn new(
        support: Support,
        scenarios: Vec<Scenario>,
        state_box: (Vec<f64>, Vec<f64>),
        action_box: (Vec<f64>, Vec<f64>),
        gamma: f64,
    ) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return invalid(format!("discount {gamma} outside (0, 1)"));
        }
        if scenarios.len() != support.len() {
            return invalid("one scenario per support point is required");
        }
        let (state_lo, state_hi) = state_box;
        let (action_lo, action_hi) = action_box;
        let m = state_lo.len();
        let n = action_lo.len();
        if m == 0 || n == 0 || state_hi.len() != m || action_hi.len() != n {
            return invalid("state and action boxes need matching nonzero dimensions");
        }
        for (lo, hi) in state_lo.iter().zip(&state_hi).chain(action_lo.iter().zip(&action_hi)) {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return invalid(format!("box side [{lo}, {hi}] is not a bounded interval"));
            }
        }
        for (j, sc) in scenarios.iter().enumerate() {
            let shape_ok = sc.a.len() == m
                && sc.a.iter().all(|r| r.len() == m)
                && sc.b.len() == m
                && sc.b.iter().all(|r| r.len() == n)
                && sc.offset.len() == m
                && !sc.pieces.is_empty()
                && sc.pieces.iter().all(|p| p.state.len() == m && p.action.len() == n);
            if !shape_ok {
                return invalid(format!("scenario {j} has inconsistent dimensions"));
            }
        }
        let mut model = Self {
            support,
            scenarios,
            state_lo,
            state_hi,
            action_lo,
            action_hi,
            gamma,
            cost_bound: 0.0,
            post_decision: None,
        };
        model.cost_bound = model.compute_cost_bound();
        model.post_decision = model.detect_post_decision();
        Ok(model)
    }

    /// max(largest cost at a box vertex, −(lower bound on the cost)).
    /// Convexity puts the maximum at a vertex; max_i min_v piece_i(v)
    /// bounds the minimum from below.
    fn compute_cost_bound(&self) -> f64 {
        let lo: Vec<f64> = self.state_lo.iter().chain(&self.action_lo).copied().collect();
        let hi: Vec<f64> = self.state_hi.iter().chain(&self.action_hi).copied().collect();
        let m = self.state_dim();
        let dims = lo.len();
        let mut upper = f64::NEG_INFINITY;
        let mut floor = f64::NEG_INFINITY;
        for sc in &self.scenarios {
            for mask in 0u64..(1u64 << dims) {
                let v: Vec<f64> = (0..dims)
                    .map(|k| if mask >> k & 1 == 1 { hi[k] } else { lo[k] })
                    .collect();
                upper = upper.max(sc.cost(&v[..m], &v[m..]));
            }
            let best_lower = sc
                .pieces
                .iter()
                .map(|p| {
                    let coef: Vec<f64> = p.state.iter().chain(&p.action).copied().collect();
                    p.constant + (0..dims).map(|k| (coef[k] * lo[k]).min(coef[k] * hi[k])).sum::<f64>()
                })
                .fold(f64::NEG_INFINITY, f64::max);
            floor = floor.max(-best_lower);
        }
        upper.max(floor).max(0.0)
    }

    /// Some(c) when m = n = 1, A = B = 1 in every scenario and every piece
    /// has action coefficient = state coefficient + c. The cost then reads
    /// −c·s + G(s + a).
    fn detect_post_decision(&self) -> Option<f64> {
        if self.state_dim() != 1 || self.action_dim() != 1 {
            return None;
        }
        let mut shift: Option<f64> = None;
        for sc in &self.scenarios {
            if sc.a[0][0] != 1.0 || sc.b[0][0] != 1.0 {
                return None;
            }
            for p in &sc.pieces {
                let c = p.action[0] - p.state[0];
                match shift {
                    None => shift = Some(c),
                    Some(prev) if (prev - c).abs() <= 1e-12 * prev.abs().max(1.0) => {}
                    Some(_) => return None,
                }
            }
        }
        shift
    }

    pub fn support(&self) -> &Support {
        &self.support
    }

    pub fn scenarios(&self) -> &[Scenario] {
        &self.scenarios
    }

    pub fn scenario(&self, j: usize) -> &Scenario {
        &self.scenarios[j]
    }

    pub fn num_scenarios(&self) -> usize {
        self.scenarios.len()
    }

    pub fn state_dim(&self) -> usize {
        self.state_lo.len()
    }

    pub fn action_dim(&self) -> usize {
        self.action_lo.len()
    }

    pub fn state_box(&self) -> (&[f64], &[f64]) {
        (&self.state_lo, &self.state_hi)
    }

    pub fn action_box(&self) -> (&[f64], &[f64]) {
        (&self.action_lo, &self.action_hi)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// C̄ with |cost| ≤ C̄ on the state and action boxes.
    pub fn cost_bound(&self) -> f64 {
        self.cost_bound
    }

    /// Global lower bound −C̄/(1−γ) on every value function.
    pub fn value_floor(&self) -> f64 {
        -self.cost_bound / (1.0 - self.gamma)
    }

    pub fn post_decision_shift(&self) -> Option<f64> {
        self.post_decision
    }

    pub fn cost(&self, j: usize, s: &[f64], a: &[f64]) -> f64 {
        self.scenarios[j].cost(s, a)
    }

    pub fn next_state(&self, j: usize, s: &[f64], a: &[f64]) -> Vec<f64> {
        self.scenarios[j].next_state(s, a)
    }

    /// One-dimensional shortcut for m = n = 1.
    pub fn cost_1d(&self, j: usize, s: f64, a: f64) -> f64 {
        self.scenarios[j]
            .pieces
            .iter()
            .map(|p| p.constant + p.state[0] * s + p.action[0] * a)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn next_state_1d(&self, j: usize, s: f64, a: f64) -> f64 {
        let sc = &self.scenarios[j];
        sc.a[0][0] * s + sc.b[0][0] * a + sc.offset[0]
    }

    /// Projection onto the state box.
    pub fn clip_state(&self, s: &mut [f64]) {
        for ((v, lo), hi) in s.iter_mut().zip(&self.state_lo).zip(&self.state_hi) {
            *v = v.clamp(*lo, *hi);
        }
    }

    /// Linear rows `coef·a ≤ rhs` describing the actions that keep every
    /// scenario's successor inside the state box, duplicates removed.
    /// Each row also carries ∂rhs/∂s.
    pub fn admissible_rows(&self, s: &[f64]) -> Vec<AdmissibleRow> {
        let m = self.state_dim();
        let mut rows: Vec<AdmissibleRow> = Vec::new();
        for sc in &self.scenarios {
            for i in 0..m {
                let base = dot(&sc.a[i], s) + sc.offset[i];
                for (sign, bound) in [(1.0, self.state_hi[i]), (-1.0, -self.state_lo[i])] {
                    let coef: Vec<f64> = sc.b[i].iter().map(|v| sign * v).collect();
                    if coef.iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    let rhs = bound - sign * base;
                    let drhs: Vec<f64> = sc.a[i].iter().map(|v| -sign * v).collect();
                    match rows.iter_mut().find(|r| r.coef == coef && r.drhs_ds == drhs) {
                        Some(r) => r.rhs = r.rhs.min(rhs),
                        None => rows.push(AdmissibleRow {
                            coef,
                            rhs,
                            drhs_ds: drhs,
                        }),
                    }
                }
            }
        }
        rows
    }

    /// Admissible action interval for m = n = 1, or None when empty.
    pub fn admissible_interval(&self, s: f64) -> Option<(f64, f64)> {
        let mut lo = self.action_lo[0];
        let mut hi = self.action_hi[0];
        for sc in &self.scenarios {
            let bcoef = sc.b[0][0];
            let base = sc.a[0][0] * s + sc.offset[0];
            if bcoef > 0.0 {
                lo = lo.max((self.state_lo[0] - base) / bcoef);
                hi = hi.min((self.state_hi[0] - base) / bcoef);
            } else if bcoef < 0.0 {
                lo = lo.max((self.state_hi[0] - base) / bcoef);
                hi = hi.min((self.state_lo[0] - base) / bcoef);
            } else if base < self.state_lo[0] || base > self.state_hi[0] {
                return None;
            }
        }
        (lo <= hi + 1e-12).then_some((lo, hi.max(lo)))
    }

    /// Convenience for scalar support values.
    pub fn support_values(&self) -> Vec<f64> {
        self.support.values_1d()
    }
}

/// Row `coef·a ≤ rhs` of the admissible-action polytope.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibleRow {
    pub coef: Vec<f64>,
    pub rhs: f64,
    pub drhs_ds: Vec<f64>,
}

/// Cost and dynamics parameters of the single-product inventory instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InventoryParams {
    pub c: f64,
    pub b: f64,
    pub h: f64,
    pub gamma: f64,
    pub demand_mean: f64,
    pub truncation: f64,
    pub bins: usize,
    pub state_lo: f64,
    pub state_hi: f64,
    pub action_max: f64,
}

impl Default for InventoryParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            b: 10.0,
            h: 2.0,
            gamma: 0.95,
            demand_mean: 10.0,
            truncation: 50.0,
            bins: 50,
            state_lo: -50.0,
            state_hi: 60.0,
            action_max: 120.0,
        }
    }
}

impl InventoryParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.b > self.c && self.c > 0.0) {
            return violated("inventory costs need b > c > 0");
        }
        if self.h <= 0.0 {
            return violated("holding cost must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return violated("discount must lie in (0, 1)");
        }
        if self.demand_mean <= 0.0 || self.truncation <= 0.0 {
            return invalid("demand mean and truncation level must be positive");
        }
        if self.bins < 2 {
            return invalid("at least two demand bins are required");
        }
        if !(self.state_lo < self.state_hi) || self.action_max <= 0.0 {
            return invalid("state box must be nonempty and the action bound positive");
        }
        Ok(())
    }

    /// Bin midpoints ξ^j = (j − ½)·U/J.
    pub fn grid(&self) -> Vec<f64> {
        let w = self.truncation / self.bins as f64;
        (0..self.bins).map(|j| (j as f64 + 0.5) * w).collect()
    }

    pub fn support(&self) -> Result<Support> {
        Support::scalar(&self.grid())
    }
}

/// Demand law used to generate data and to evaluate policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DemandDist {
    Exponential {
        mean: f64,
    },
    /// Finite mixture of exponentials: (weight, mean) pairs.
    Mixture {
        components: Vec<(f64, f64)>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Contamination {
    /// (1−ε)·base + ε·Exp(tail_mean).
    Huber { tail_mean: f64 },
    /// Exp(base_mean·(1+ε)).
    ScaleShift,
}

impl DemandDist {
    pub fn exponential(mean: f64) -> Self {
        Self::Exponential { mean }
    }

    pub fn contaminate(base_mean: f64, kind: Contamination, eps: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&eps) {
            return invalid(format!("contamination level {eps} outside [0, 1)"));
        }
        Ok(match kind {
            Contamination::Huber { tail_mean } => Self::Mixture {
                components: vec![(1.0 - eps, base_mean), (eps, tail_mean)],
            },
            Contamination::ScaleShift => Self::Exponential {
                mean: base_mean * (1.0 + eps),
            },
        })
    }

    /// Binned probabilities on [0, U] with J equal-width bins, renormalized
    /// by the mass of [0, U]. Mixtures bin componentwise.
    pub fn discretize(&self, truncation: f64, bins: usize) -> Result<Pmf> {
        match self {
            Self::Exponential { mean } => discretize_exponential(*mean, truncation, bins),
            Self::Mixture { components } => {
                let mut acc = vec![0.0; bins];
                for &(w, mean) in components {
                    if w == 0.0 {
                        continue;
                    }
                    let p = discretize_exponential(mean, truncation, bins)?;
                    for (a, v) in acc.iter_mut().zip(p.probs()) {
                        *a += w * v;
                    }
                }
                Pmf::normalized(acc)
            }
        }
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Exponential { mean } => Exp::new(1.0 / mean).expect("positive rate").sample(rng),
            Self::Mixture { components } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut mean = components.last().expect("nonempty mixture").1;
                for &(w, m) in components {
                    acc += w;
                    if u < acc {
                        mean = m;
                        break;
                    }
                }
                Exp::new(1.0 / mean).expect("positive rate").sample(rng)
            }
        }
    }
}

pub fn discretize_exponential(mean: f64, truncation: f64, bins: usize) -> Result<Pmf> {
    if mean <= 0.0 || truncation <= 0.0 || bins < 2 {
        return invalid("discretization needs mean > 0, U > 0 and J >= 2");
    }
    let w = truncation / bins as f64;
    let weights: Vec<f64> = (0..bins)
        .map(|j| (-(j as f64) * w / mean).exp() - (-((j + 1) as f64) * w / mean).exp())
        .collect();
    Pmf::normalized(weights)
}

/// The inventory model: s' = s + a − ξ and cost c·a + b[ξ−s−a]^+ + h[s+a−ξ]^+
/// written as the maximum of two affine pieces.
pub fn build_inventory(params: &InventoryParams) -> Result<ScenarioModel> {
    params.validate()?;
    let support = params.support()?;
    let (c, b, h) = (params.c, params.b, params.h);
    let scenarios = support
        .values_1d()
        .into_iter()
        .map(|xi| Scenario {
            a: vec![vec![1.0]],
            b: vec![vec![1.0]],
            offset: vec![-xi],
            pieces: vec![
                AffinePiece {
                    constant: b * xi,
                    state: vec![-b],
                    action: vec![c - b],
                },
                AffinePiece {
                    constant: -h * xi,
                    state: vec![h],
                    action: vec![c + h],
                },
            ],
        })
        .collect();
    ScenarioModel::new(
        support,
        scenarios,
        (vec![params.state_lo], vec![params.state_hi]),
        (vec![0.0], vec![params.action_max]),
        params.gamma,
    )
}

/// Critical ratio κ = (b − (1−γ)c)/(b + h) and the base-stock level
/// s* = −mean·ln(1−κ) of the untruncated exponential.
pub fn base_stock_truth(params: &InventoryParams) -> (f64, f64) {
    let kappa = critical_ratio(params);
    (kappa, -params.demand_mean * (1.0 - kappa).ln())
}

pub fn critical_ratio(params: &InventoryParams) -> f64 {
    (params.b - (1.0 - params.gamma) * params.c) / (params.b + params.h)
}

/// Base-stock level under a discrete pmf: the smallest support point whose
/// cumulative mass reaches κ.
pub fn base_stock_discrete(params: &InventoryParams, grid: &[f64], pmf: &Pmf) -> f64 {
    let kappa = critical_ratio(params);
    let cdf = pmf.cdf();
    grid.iter()
        .zip(&cdf)
        .find(|(_, f)| **f >= kappa - 1e-12)
        .map(|(x, _)| *x)
        .unwrap_or(grid[grid.len() - 1])
}

fn shortage_holding(params: &InventoryParams, y: f64, d: f64) -> f64 {
    params.b * (d - y).max(0.0) + params.h * (y - d).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub stderr: f64,
}

/// V*(s) = −cs + (1−γ)⁻¹·E[γcξ + (1−γ)c s* + ψ(s*, ξ)] for s ≤ s*, with the
/// expectation estimated from `samples` exponential draws.
pub fn true_value_closed_form<R: rand::Rng + ?Sized>(
    params: &InventoryParams,
    s: f64,
    samples: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    let (_, s_star) = base_stock_truth(params);
    if s > s_star {
        return invalid(format!("closed form holds for s <= s* = {s_star}, got {s}"));
    }
    if samples < 2 {
        return invalid("need at least two Monte Carlo samples");
    }
    let law = Exp::new(1.0 / params.demand_mean).expect("positive rate");
    let g = params.gamma;
    let (mut sum, mut sumsq) = (0.0, 0.0);
    for _ in 0..samples {
        let xi: f64 = law.sample(rng);
        let v = g * params.c * xi + (1.0 - g) * params.c * s_star + shortage_holding(params, s_star, xi);
        sum += v;
        sumsq += v * v;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sumsq / n - mean * mean).max(0.0) * n / (n - 1.0);
    Ok(McEstimate {
        value: -params.c * s + mean / (1.0 - g),
        stderr: (var / n).sqrt() / (1.0 - g),
    })
}

/// The same closed form with the expectation taken exactly under a pmf on
/// `grid` and the base-stock level of that pmf.
pub fn true_value_discrete(params: &InventoryParams, grid: &[f64], pmf: &Pmf, s: f64) -> Result<f64> {
    if grid.len() != pmf.len() {
        return invalid("grid and pmf lengths differ");
    }
    let s_star = base_stock_discrete(params, grid, pmf);
    if s > s_star {
        return invalid(format!("closed form holds for s <= s* = {s_star}, got {s}"));
    }
    let g = params.gamma;
    let e: f64 = grid
        .iter()
        .zip(pmf.probs())
        .map(|(xi, p)| p * (g * params.c * xi + (1.0 - g) * params.c * s_star + shortage_holding(params, s_star, *xi)))
        .sum();
    Ok(-params.c * s + e / (1.0 - g))
}
