//! The episodic learn-then-solve loop, its baselines, and the experiment
//! drivers built on it.
//!
//! Episode N works with the posterior after N − 1 observations: it builds
//! the method's box, filters the previous cut pool, runs the cutting-plane
//! solver, applies the greedy action at the physical state, observes one
//! disturbance from the true law and updates the posterior.

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::bocp::{self, BocpConfig, MasterPolicy};
use crate::dist::{kantorovich_1d, kantorovich_grid, linf_distance, BoxAmbiguity, DirichletPosterior, Pmf};
use crate::error::{invalid, Result};
use crate::model::ScenarioModel;
use crate::par;
use crate::risk::RiskSpec;
use crate::rng;
use crate::value::{
    metrics, policy_eval_actions, rollout, stationary_weights, value_iteration_oracle, CutPool, GreedyPolicy,
    GridValue, Metrics, Policy, RolloutConfig, SemidevDirection, ValueFunction,
};

/// Stream ids under a replication seed.
const DATA_STREAM: u64 = 1;
const ROLLOUT_BASE: u64 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MethodKind {
    BayesDroc { alpha: f64 },
    BayesSoc,
    Drsc { c0: f64 },
}

impl MethodKind {
    pub fn label(&self) -> &'static str {
        match self {
            Self::BayesDroc { .. } => "bayes_droc",
            Self::BayesSoc => "bayes_soc",
            Self::Drsc { .. } => "drsc",
        }
    }

    /// Ambiguity box from the posterior and the raw observation counts.
    pub fn ambiguity(&self, posterior: &DirichletPosterior, counts: &[usize]) -> Result<BoxAmbiguity> {
        match *self {
            Self::BayesDroc { alpha } => posterior.credible_box(alpha),
            Self::BayesSoc => BoxAmbiguity::new(posterior.mean(), vec![0.0; posterior.len()], Some(1.0)),
            Self::Drsc { c0 } => {
                let t: usize = counts.iter().sum();
                if t == 0 {
                    // no data yet: the whole simplex
                    return BoxAmbiguity::new(Pmf::uniform(counts.len()), vec![1.0; counts.len()], None);
                }
                let empirical = Pmf::new(counts.iter().map(|c| *c as f64 / t as f64).collect())?;
                let r = drsc_radius(c0, t);
                BoxAmbiguity::new(empirical, vec![r; counts.len()], None)
            }
        }
    }
}

/// c0/√t.
pub fn drsc_radius(c0: f64, t: usize) -> f64 {
    c0 / (t as f64).sqrt()
}

/// Named disturbance law used for out-of-sample evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestEnv {
    pub name: String,
    pub pmf: Pmf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodicConfig {
    pub method: MethodKind,
    pub n_episodes: usize,
    pub initial_state: Vec<f64>,
    pub bocp: BocpConfig,
    pub warm_start: bool,
    /// Also solve every episode from the floor, to compare iteration counts.
    pub compare_cold: bool,
    pub eval_envs: Vec<TestEnv>,
    /// Evaluate at episodes 1, n and every multiple of this; 0 disables.
    pub eval_every: usize,
    pub rollout_horizon: usize,
    pub rollout_paths: usize,
    pub semidev: SemidevDirection,
    pub keep_pools: bool,
    pub seed: u64,
    pub threads: usize,
}

impl EpisodicConfig {
    pub fn new(method: MethodKind, n_episodes: usize) -> Self {
        Self {
            method,
            n_episodes,
            initial_state: vec![0.0],
            bocp: BocpConfig::default(),
            warm_start: true,
            compare_cold: false,
            eval_envs: Vec::new(),
            eval_every: 0,
            rollout_horizon: 120,
            rollout_paths: 500,
            semidev: SemidevDirection::Upside,
            keep_pools: false,
            seed: 0,
            threads: 1,
        }
    }

    fn evaluates(&self, episode: usize) -> bool {
        self.eval_every > 0 && (episode == 1 || episode == self.n_episodes || episode.is_multiple_of(self.eval_every))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvMetrics {
    pub env: String,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    /// Posterior parameters the episode was solved with.
    pub tau: Vec<f64>,
    pub center: Vec<f64>,
    pub radius: Vec<f64>,
    pub lambda: f64,
    pub upsilon: f64,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    /// Cuts that survived the warm-start filter.
    pub warm_pool_size: usize,
    pub cuts: usize,
    pub cold_iterations: Option<usize>,
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub xi_index: usize,
    pub xi: Vec<f64>,
    pub target_level: Option<f64>,
    pub metrics: Vec<EnvMetrics>,
}

/// Pools and spec of one episode, kept on request.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSnapshot {
    pub spec: RiskSpec,
    pub warm_pool: CutPool,
    pub pool: CutPool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodicRun {
    pub records: Vec<EpisodeRecord>,
    pub snapshots: Vec<EpisodeSnapshot>,
    pub final_posterior: DirichletPosterior,
}

/// Runs `cfg.n_episodes` episodes of the chosen method on data drawn from
/// `true_pmf`. Streams depend only on `cfg.seed` and the episode index, so
/// methods run with the same seed see the same data and rollout noise.
pub fn run_episodic(
    model: &ScenarioModel,
    true_pmf: &Pmf,
    prior: &DirichletPosterior,
    cfg: &EpisodicConfig,
) -> Result<EpisodicRun> {
    if cfg.n_episodes == 0 {
        return invalid("at least one episode is required");
    }
    let jn = model.num_scenarios();
    if true_pmf.len() != jn || prior.len() != jn {
        return invalid("true pmf and prior must match the model support");
    }
    if cfg.initial_state.len() != model.state_dim() {
        return invalid("initial state dimension does not match the model");
    }
    cfg.bocp.validate()?;
    let mut data_rng = rng::stream(cfg.seed, DATA_STREAM);
    let mut posterior = prior.clone();
    let mut counts = vec![0usize; jn];
    let mut state = cfg.initial_state.clone();
    let mut prev_pool: Option<CutPool> = None;
    let mut records = Vec::with_capacity(cfg.n_episodes);
    let mut snapshots = Vec::new();

    for episode in 1..=cfg.n_episodes {
        let bx = cfg.method.ambiguity(&posterior, &counts)?;
        let spec = RiskSpec::from_box(&bx)?;
        let warm_pool = match (&prev_pool, cfg.warm_start) {
            (Some(p), true) => bocp::warm_start_filter(model, &spec, p, cfg.threads),
            _ => CutPool::floor_only(model),
        };
        let mut bcfg = cfg.bocp.clone();
        bcfg.seed = rng::child_seed(cfg.seed, episode as u64);
        let (pool, st) = bocp::run(model, &spec, &bcfg, warm_pool.clone())?;
        if !st.converged {
            warn!(
                "episode {episode}: solver stopped after {} iterations with residual {:.3e}",
                st.k, st.last_residual
            );
        }
        let cold_iterations = if cfg.compare_cold {
            Some(bocp::run(model, &spec, &bcfg, CutPool::floor_only(model))?.1.k)
        } else {
            None
        };

        let action = bocp::master_solve(model, &spec, &pool, &state)?.action;
        let env1d = (model.state_dim() == 1).then(|| pool.compile_1d());
        let target_level = env1d
            .as_ref()
            .and_then(|e| GreedyPolicy::new(model, &spec, e).target_level());

        let mut env_metrics = Vec::new();
        if cfg.evaluates(episode) && !cfg.eval_envs.is_empty() {
            let rc = RolloutConfig {
                horizon: cfg.rollout_horizon,
                paths: cfg.rollout_paths,
                seed: rng::child_seed(cfg.seed, ROLLOUT_BASE + episode as u64),
                trace_paths: 0,
                threads: cfg.threads,
            };
            for env in &cfg.eval_envs {
                let costs = match &env1d {
                    Some(e) if model.action_dim() == 1 => {
                        rollout(
                            model,
                            &env.pmf,
                            &GreedyPolicy::new(model, &spec, e),
                            &cfg.initial_state,
                            &rc,
                        )?
                        .costs
                    }
                    _ => {
                        let policy = MasterPolicy {
                            model,
                            spec: &spec,
                            pool: &pool,
                        };
                        rollout(model, &env.pmf, &policy, &cfg.initial_state, &rc)?.costs
                    }
                };
                env_metrics.push(EnvMetrics {
                    env: env.name.clone(),
                    metrics: metrics(&costs, cfg.semidev)?,
                });
            }
        }

        let xi_index = true_pmf.sample_index(&mut data_rng);
        records.push(EpisodeRecord {
            episode,
            tau: posterior.tau().to_vec(),
            center: bx.center().probs().to_vec(),
            radius: bx.radius().to_vec(),
            lambda: spec.lambda,
            upsilon: spec.upsilon,
            iterations: st.k,
            residual: st.last_residual,
            converged: st.converged,
            warm_pool_size: warm_pool.len(),
            cuts: pool.len(),
            cold_iterations,
            state: state.clone(),
            action: action.clone(),
            xi_index,
            xi: model.support().point(xi_index).to_vec(),
            target_level,
            metrics: env_metrics,
        });
        info!(
            "{} episode {episode}: {} iterations, {} warm cuts, action {:?}",
            cfg.method.label(),
            st.k,
            warm_pool.len(),
            action
        );
        state = model.next_state(xi_index, &state, &action);
        model.clip_state(&mut state);
        posterior.observe(xi_index)?;
        counts[xi_index] += 1;
        if cfg.keep_pools {
            snapshots.push(EpisodeSnapshot {
                spec,
                warm_pool,
                pool: pool.clone(),
            });
        }
        prev_pool = Some(pool);
    }
    Ok(EpisodicRun {
        records,
        snapshots,
        final_posterior: posterior,
    })
}

/// Σ w(s)|V̂(s) − V*(s)| / Σ w(s) over the grid of `v_star`.
pub fn integrated_gap<V: ValueFunction + ?Sized>(v_hat: &V, v_star: &GridValue, weights: &[f64]) -> Result<f64> {
    if weights.len() != v_star.len() {
        return invalid("weights must match the reference grid");
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || weights.iter().any(|w| *w < 0.0) {
        return invalid("weights must be nonnegative with positive mass");
    }
    Ok(v_star
        .grid()
        .iter()
        .zip(v_star.values())
        .zip(weights)
        .map(|((s, v), w)| w * (v_hat.eval_1d(*s) - v).abs())
        .sum::<f64>()
        / total)
}

/// The spec whose ambiguity set is the single law `p`.
pub fn point_spec(p: &Pmf) -> Result<RiskSpec> {
    RiskSpec::from_bounds(p.probs(), p.probs(), p.probs())
}

/// Fixed point under the true law and the stationary law of its greedy
/// policy, the reference for integrated gaps.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub value: GridValue,
    pub weights: Vec<f64>,
}

pub fn reference_solution(
    model: &ScenarioModel,
    true_pmf: &Pmf,
    grid: &[f64],
    tol: f64,
    s0: f64,
    seed: u64,
) -> Result<Reference> {
    let spec = point_spec(true_pmf)?;
    let oracle = value_iteration_oracle(model, &spec, grid, tol, 100_000, None)?;
    let policy = GreedyPolicy::new(model, &spec, &oracle.value);
    let weights = stationary_weights(model, true_pmf, &policy, grid, s0, 1000, 200 * grid.len(), seed)?;
    Ok(Reference {
        value: oracle.value,
        weights,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    /// Fraction of draws lying in the credible box.
    pub box_coverage: f64,
    /// Fraction of draws with V̂ + slack ≥ V^π̂ at every grid point.
    pub value_coverage: f64,
    pub draws: usize,
}

/// Draws P ~ Dirichlet(τ) and checks box membership and whether the robust
/// value dominates the value of the greedy policy under P.
#[allow(clippy::too_many_arguments)]
pub fn credibility_check(
    model: &ScenarioModel,
    posterior: &DirichletPosterior,
    alpha: f64,
    pool: &CutPool,
    grid: &[f64],
    n_draws: usize,
    slack: f64,
    seed: u64,
    threads: usize,
) -> Result<Coverage> {
    if n_draws == 0 {
        return invalid("at least one draw is required");
    }
    if model.state_dim() != 1 || model.action_dim() != 1 {
        return invalid("credibility check needs a one-dimensional model");
    }
    let bx = posterior.credible_box(alpha)?;
    let spec = RiskSpec::from_box(&bx)?;
    let env = pool.compile_1d();
    let policy = GreedyPolicy::new(model, &spec, &env);
    let actions: Vec<f64> = grid.iter().map(|&s| policy.act_1d(s)).collect();
    let v_hat: Vec<f64> = grid.iter().map(|&s| env.eval_1d(s)).collect();
    let hits = par::map_indexed(n_draws, threads, |i| -> Result<(bool, bool)> {
        let mut g = rng::stream(seed, i as u64);
        let p = posterior.sample_pmf(&mut g);
        let inside = bx.contains(&p, 1e-12);
        let v_pi = policy_eval_actions(model, &p, &actions, grid)?;
        let dominated = v_hat.iter().zip(v_pi.values()).all(|(vh, vp)| vh + slack >= *vp);
        Ok((inside, dominated))
    });
    let (mut inside, mut dominated) = (0usize, 0usize);
    for h in hits {
        let (a, b) = h?;
        inside += usize::from(a);
        dominated += usize::from(b);
    }
    Ok(Coverage {
        box_coverage: inside as f64 / n_draws as f64,
        value_coverage: dominated as f64 / n_draws as f64,
        draws: n_draws,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stability {
    /// ‖V̂ − Ṽ‖∞ on the grid.
    pub lhs: f64,
    /// J·C̄/(1−γ)²·(‖P̂ − P̃‖∞ + ‖r̂ − r̃‖∞).
    pub rhs: f64,
    pub center_shift: f64,
    pub radius_shift: f64,
}

/// Solves the robust fixed point for two datasets of equal size and
/// compares the value gap with the perturbation bound.
#[allow(clippy::too_many_arguments)]
pub fn stability_experiment(
    model: &ScenarioModel,
    prior: &DirichletPosterior,
    clean: &[usize],
    perturbed: &[usize],
    alpha: f64,
    grid: &[f64],
    tol: f64,
    clean_value: Option<&GridValue>,
) -> Result<Stability> {
    if clean.len() != perturbed.len() {
        return invalid("datasets must have the same length");
    }
    let post = |data: &[usize]| -> Result<DirichletPosterior> {
        let mut counts = vec![0usize; prior.len()];
        for &j in data {
            if j >= counts.len() {
                return invalid(format!("observation index {j} outside the support"));
            }
            counts[j] += 1;
        }
        prior.update_counts(&counts)
    };
    let (bx_a, bx_b) = (post(clean)?.credible_box(alpha)?, post(perturbed)?.credible_box(alpha)?);
    let center_shift = linf_distance(bx_a.center(), bx_b.center())?;
    let radius_shift = bx_a
        .radius()
        .iter()
        .zip(bx_b.radius())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let gamma = model.gamma();
    let rhs = model.num_scenarios() as f64 * model.cost_bound() / (1.0 - gamma).powi(2) * (center_shift + radius_shift);
    let solve = |bx: &BoxAmbiguity, init: Option<&[f64]>| -> Result<GridValue> {
        let spec = RiskSpec::from_box(bx)?;
        Ok(value_iteration_oracle(model, &spec, grid, tol, 100_000, init)?.value)
    };
    let va = match clean_value {
        Some(v) => v.clone(),
        None => solve(&bx_a, None)?,
    };
    let vb = solve(&bx_b, Some(va.values()))?;
    let lhs = va
        .values()
        .iter()
        .zip(vb.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(Stability {
        lhs,
        rhs,
        center_shift,
        radius_shift,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QsrRow {
    pub eps: f64,
    /// Kantorovich distance between the clean and shifted input laws.
    pub dk_input: f64,
    /// Kantorovich distance between the two estimator laws.
    pub dk_laws: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QsrSetup {
    pub sample_size: usize,
    pub replications: usize,
    pub s0: f64,
    pub alpha: f64,
    pub oracle_points: usize,
    pub oracle_tol: f64,
    pub seed: u64,
    pub threads: usize,
}

/// For each shift level, R datasets of size N from the clean and from the
/// shifted law, the robust optimal value at s0 for each, and the
/// Kantorovich distance between the two samples of values. Dataset r of
/// every law is driven by the same uniform stream.
pub fn qsr_experiment(
    model: &ScenarioModel,
    prior: &DirichletPosterior,
    clean: &Pmf,
    shifted: impl Fn(f64) -> Result<Pmf>,
    eps_grid: &[f64],
    setup: &QsrSetup,
) -> Result<Vec<QsrRow>> {
    if setup.replications < 2 {
        return invalid("at least two replications are required");
    }
    let (slo, shi) = model.state_box();
    let grid = crate::value::uniform_grid(slo[0], shi[0], setup.oracle_points);
    let support = model.support_values();
    let base = value_iteration_oracle(
        model,
        &RiskSpec::from_box(&prior.credible_box(setup.alpha)?)?,
        &grid,
        setup.oracle_tol,
        100_000,
        None,
    )?;
    let estimate = |pmf: &Pmf, stream_root: u64| -> Result<Vec<f64>> {
        par::map_indexed(setup.replications, setup.threads, |r| -> Result<f64> {
            let mut g = rng::stream(stream_root, r as u64);
            let mut counts = vec![0usize; pmf.len()];
            for _ in 0..setup.sample_size {
                counts[pmf.sample_index(&mut g)] += 1;
            }
            let spec = RiskSpec::from_box(&prior.update_counts(&counts)?.credible_box(setup.alpha)?)?;
            let v = value_iteration_oracle(
                model,
                &spec,
                &grid,
                setup.oracle_tol,
                100_000,
                Some(base.value.values()),
            )?;
            Ok(v.value.eval_1d(setup.s0))
        })
        .into_iter()
        .collect()
    };
    // every law reuses the same uniforms through its inverse CDF, so the
    // estimator laws differ only through the shift
    let clean_values = estimate(clean, setup.seed)?;
    let mut rows = Vec::with_capacity(eps_grid.len());
    for &eps in eps_grid {
        let law = shifted(eps)?;
        let shifted_values = estimate(&law, setup.seed)?;
        rows.push(QsrRow {
            eps,
            dk_input: kantorovich_grid(clean, &law, &support)?,
            dk_laws: kantorovich_1d(&clean_values, &shifted_values)?,
        });
    }
    Ok(rows)
}

/// R² of the least-squares line through (x, y).
pub fn linear_fit_r2(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if syy == 0.0 {
        return 1.0;
    }
    if sxx == 0.0 {
        return 0.0;
    }
    sxy * sxy / (sxx * syy)
}

/// Replication mean and standard error of one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    pub fn of(x: &[f64]) -> Self {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let se = if x.len() > 1 {
            (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            0.0
        };
        Self { mean, se }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub env: String,
    pub episode: usize,
    pub mean: MeanSe,
    pub cvar95: MeanSe,
    pub semidev: MeanSe,
}

/// How episode-wise value functions are computed in the experiment drivers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Solver {
    /// The full episodic chain with warm-started cutting planes.
    Bocp,
    /// Grid value iteration at the evaluated episodes only.
    Oracle { points: usize, tol: f64 },
}

/// Value functions and out-of-sample metrics at the evaluated episodes of
/// one replication, computed with the grid oracle. The data stream matches
/// [`run_episodic`] under the same seed.
fn oracle_episodes(
    model: &ScenarioModel,
    true_pmf: &Pmf,
    prior: &DirichletPosterior,
    cfg: &EpisodicConfig,
    points: usize,
    tol: f64,
    every_episode: bool,
) -> Result<Vec<(usize, GridValue, Vec<EnvMetrics>)>> {
    if model.state_dim() != 1 || model.action_dim() != 1 {
        return invalid("the oracle solver needs a one-dimensional model");
    }
    let (slo, shi) = model.state_box();
    let grid = crate::value::uniform_grid(slo[0], shi[0], points);
    let mut data_rng = rng::stream(cfg.seed, DATA_STREAM);
    let mut posterior = prior.clone();
    let mut counts = vec![0usize; model.num_scenarios()];
    let mut prev: Option<GridValue> = None;
    let mut out = Vec::new();
    for episode in 1..=cfg.n_episodes {
        if every_episode || cfg.evaluates(episode) {
            let spec = RiskSpec::from_box(&cfg.method.ambiguity(&posterior, &counts)?)?;
            let init = prev.as_ref().map(|v| v.values());
            let value = value_iteration_oracle(model, &spec, &grid, tol, 100_000, init)?.value;
            let policy = GreedyPolicy::new(model, &spec, &value);
            let mut env_metrics = Vec::new();
            if cfg.evaluates(episode) {
                let rc = RolloutConfig {
                    horizon: cfg.rollout_horizon,
                    paths: cfg.rollout_paths,
                    seed: rng::child_seed(cfg.seed, ROLLOUT_BASE + episode as u64),
                    trace_paths: 0,
                    threads: 1,
                };
                for env in &cfg.eval_envs {
                    let costs = rollout(model, &env.pmf, &policy, &cfg.initial_state, &rc)?.costs;
                    env_metrics.push(EnvMetrics {
                        env: env.name.clone(),
                        metrics: metrics(&costs, cfg.semidev)?,
                    });
                }
            }
            out.push((episode, value.clone(), env_metrics));
            prev = Some(value);
        }
        let j = true_pmf.sample_index(&mut data_rng);
        posterior.observe(j)?;
        counts[j] += 1;
    }
    Ok(out)
}

/// Trains every method on the same clean data streams and aggregates the
/// out-of-sample metrics over replications.
pub fn comparison_experiment(
    model: &ScenarioModel,
    true_pmf: &Pmf,
    prior: &DirichletPosterior,
    methods: &[MethodKind],
    base: &EpisodicConfig,
    replications: usize,
    solver: Solver,
) -> Result<Vec<ComparisonRow>> {
    if methods.is_empty() || replications == 0 {
        return invalid("need at least one method and one replication");
    }
    if base.eval_every == 0 || base.eval_envs.is_empty() {
        return invalid("comparison needs evaluation episodes and test environments");
    }
    let mut rows = Vec::new();
    for method in methods {
        let runs = par::map_indexed(
            replications,
            base.threads,
            |r| -> Result<Vec<(usize, Vec<EnvMetrics>)>> {
                let mut cfg = base.clone();
                cfg.method = *method;
                cfg.seed = rng::child_seed(base.seed, r as u64);
                cfg.threads = 1;
                Ok(match solver {
                    Solver::Bocp => run_episodic(model, true_pmf, prior, &cfg)?
                        .records
                        .into_iter()
                        .filter(|rec| !rec.metrics.is_empty())
                        .map(|rec| (rec.episode, rec.metrics))
                        .collect(),
                    Solver::Oracle { points, tol } => {
                        oracle_episodes(model, true_pmf, prior, &cfg, points, tol, false)?
                            .into_iter()
                            .map(|(e, _, m)| (e, m))
                            .collect()
                    }
                })
            },
        );
        let runs: Vec<Vec<(usize, Vec<EnvMetrics>)>> = runs.into_iter().collect::<Result<_>>()?;
        for (ei, (episode, envs)) in runs[0].iter().enumerate() {
            for (k, env) in envs.iter().enumerate() {
                let pick =
                    |f: fn(&Metrics) -> f64| -> Vec<f64> { runs.iter().map(|run| f(&run[ei].1[k].metrics)).collect() };
                rows.push(ComparisonRow {
                    method: method.label().to_string(),
                    env: env.env.clone(),
                    episode: *episode,
                    mean: MeanSe::of(&pick(|m| m.mean)),
                    cvar95: MeanSe::of(&pick(|m| m.cvar95)),
                    semidev: MeanSe::of(&pick(|m| m.semidev)),
                });
            }
        }
    }
    Ok(rows)
}

/// Integrated gap between each episode's value function and the
/// reference, per replication: result[r][episode − 1].
pub fn gap_experiment(
    model: &ScenarioModel,
    true_pmf: &Pmf,
    prior: &DirichletPosterior,
    base: &EpisodicConfig,
    reference: &Reference,
    replications: usize,
    solver: Solver,
) -> Result<Vec<Vec<f64>>> {
    par::map_indexed(replications, base.threads, |r| -> Result<Vec<f64>> {
        let mut cfg = base.clone();
        cfg.seed = rng::child_seed(base.seed, r as u64);
        cfg.threads = 1;
        cfg.eval_every = 0;
        match solver {
            Solver::Bocp => {
                cfg.keep_pools = true;
                let run = run_episodic(model, true_pmf, prior, &cfg)?;
                run.snapshots
                    .iter()
                    .map(|snap| integrated_gap(&snap.pool.compile_1d(), &reference.value, &reference.weights))
                    .collect()
            }
            Solver::Oracle { points, tol } => oracle_episodes(model, true_pmf, prior, &cfg, points, tol, true)?
                .iter()
                .map(|(_, v, _)| integrated_gap(v, &reference.value, &reference.weights))
                .collect(),
        }
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn drsc_radius_example() {
        assert_abs_diff_eq!(drsc_radius(0.1, 100), 0.01, epsilon = 1e-15);
    }

    #[test]
    fn soc_box_is_posterior_mean_singleton() {
        let post = DirichletPosterior::new(vec![2.0, 3.0, 5.0]).unwrap();
        let a = MethodKind::BayesSoc.ambiguity(&post, &[0, 1, 3]).unwrap();
        let b = MethodKind::BayesDroc { alpha: 1.0 }
            .ambiguity(&post, &[0, 1, 3])
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.lower(), a.upper());
    }

    #[test]
    fn gap_of_shifted_value() {
        let v = GridValue::new(vec![0.0, 1.0, 2.0], vec![1.0, 2.0, 4.0]).unwrap();
        let shifted = GridValue::new(vec![0.0, 1.0, 2.0], vec![1.5, 2.5, 4.5]).unwrap();
        assert_abs_diff_eq!(integrated_gap(&v, &v, &[1.0, 2.0, 1.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            integrated_gap(&shifted, &v, &[1.0, 2.0, 1.0]).unwrap(),
            0.5,
            epsilon = 1e-12
        );
    }

    #[test]
    fn r2_of_exact_line() {
        assert_abs_diff_eq!(linear_fit_r2(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]), 1.0, epsilon = 1e-12);
    }
}
