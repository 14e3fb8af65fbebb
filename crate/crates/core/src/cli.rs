//! Command-line front end. `main` only maps the result of [`run`] to an
//! exit code: 0 success, 1 config error, 2 non-convergence, 3 anything else.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::info;

use crate::bocp::{self, BocpState};
use crate::config::{DataSource, ExperimentKind, MethodName, RunConfig};
use crate::dist::{DirichletPosterior, Pmf};
use crate::episodic::{self, EpisodicConfig, QsrSetup, TestEnv};
use crate::error::{Error, Result};
use crate::model::{build_inventory, Contamination, DemandDist, ScenarioModel};
use crate::output::{self, num, vec_cell, Artifacts};
use crate::par;
use crate::risk::RiskSpec;
use crate::rng;
use crate::value::{
    rollout, uniform_grid, value_iteration_oracle, CutPool, GreedyPolicy, Policy, RolloutConfig, TraceRow,
    ValueFunction,
};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_NONCONVERGENCE: u8 = 2;
pub const EXIT_INTERNAL: u8 = 3;

/// Stream ids under the root seed.
const DATA_STREAM: u64 = 1;
const ROLLOUT_STREAM: u64 = 2;

const TRACE_HEADER: [&str; 6] = ["path", "t", "s", "a", "xi", "stage_cost"];

#[derive(Debug, Parser)]
#[command(
    name = "droc",
    version,
    about = "Episodic Bayesian distributionally robust optimal control"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<Command>,
    /// Config file; missing keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Cut pool (pool.json) to warm-start `solve` from.
    #[arg(long, global = true)]
    pub warm: Option<PathBuf>,
    /// Print the effective config and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
    /// Also write the final master LP of `solve` as a plain-text tableau.
    #[arg(long, global = true)]
    pub dump_lp: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write the discretized demand law (support.csv).
    Discretize,
    /// One cutting-plane solve (pool.json, bocp_history.csv, value.csv).
    Solve,
    /// The episodic learn-then-solve loop (episodes.csv).
    Episodic,
    /// The experiment selected by experiment.kind.
    Experiment,
    /// Grid value iteration (value.csv).
    Oracle,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Self::Discretize => "discretize",
            Self::Solve => "solve",
            Self::Episodic => "episodic",
            Self::Experiment => "experiment",
            Self::Oracle => "oracle",
        }
    }
}

pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } => EXIT_CONFIG,
        Error::Convergence { .. } => EXIT_NONCONVERGENCE,
        _ => EXIT_INTERNAL,
    }
}

/// Effective config: file, then command-line overrides.
pub fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output.dir = o.display().to_string();
    }
    Ok(cfg)
}

/// Runs one invocation; `print` receives what goes to standard output.
pub fn run(cli: &Cli, print: &mut dyn FnMut(&str)) -> Result<()> {
    let cfg = effective_config(cli)?;
    if cli.print_config {
        print(&cfg.to_text());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(Error::Config {
            line: 0,
            message: "no subcommand given (discretize, solve, episodic, experiment, oracle)".into(),
        });
    };
    let threads = par::resolve_threads(cli.threads);
    let out = PathBuf::from(&cfg.output.dir);
    let mut ctx = Ctx::new(cfg, threads, &out)?;
    if let Some(p) = &cli.config {
        ctx.art.add_input(p)?;
    }
    let outcome = match command {
        Command::Discretize => ctx.discretize(),
        Command::Solve => ctx.solve(cli.warm.as_deref(), cli.dump_lp),
        Command::Episodic => ctx.episodic(),
        Command::Experiment => ctx.experiment(),
        Command::Oracle => ctx.oracle(),
    };
    // the manifest is written even when the solver stopped early
    let stop = match outcome {
        Ok(()) => None,
        Err(e @ Error::Convergence { .. }) => Some(e),
        Err(e) => return Err(e),
    };
    let Ctx { cfg, art, .. } = ctx;
    let seed = cfg.seed;
    let manifest = art.finish(command.name(), seed, threads, serde_json::to_value(&cfg)?)?;
    for f in &manifest.outputs {
        print(&format!("{}  {}\n", f.sha256, f.path));
    }
    match stop {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

struct Ctx {
    cfg: RunConfig,
    threads: usize,
    model: ScenarioModel,
    true_pmf: Pmf,
    prior: DirichletPosterior,
    art: Artifacts,
}

impl Ctx {
    fn new(cfg: RunConfig, threads: usize, out: &Path) -> Result<Self> {
        let params = cfg.model.params();
        let model = build_inventory(&params)?;
        let true_pmf = DemandDist::exponential(params.demand_mean).discretize(params.truncation, params.bins)?;
        let prior = cfg.method.prior(params.bins)?;
        let art = Artifacts::create(out)?;
        Ok(Self {
            cfg,
            threads,
            model,
            true_pmf,
            prior,
            art,
        })
    }

    fn bins(&self) -> usize {
        self.cfg.model.bins
    }

    fn oracle_grid(&self) -> Vec<f64> {
        uniform_grid(
            self.cfg.model.state_lo,
            self.cfg.model.state_hi,
            self.cfg.solver.oracle_points,
        )
    }

    /// Law of the contaminated test environment at level `eps`.
    fn shifted(&self, kind: Contamination, eps: f64) -> Result<Pmf> {
        let m = &self.cfg.model;
        DemandDist::contaminate(m.demand_mean, kind, eps)?.discretize(m.truncation, m.bins)
    }

    fn huber(&self) -> Contamination {
        Contamination::Huber {
            tail_mean: self.cfg.experiment.huber_tail_mean,
        }
    }

    fn test_envs(&self) -> Result<Vec<TestEnv>> {
        let eps = self.cfg.experiment.contamination;
        Ok(vec![
            TestEnv {
                name: "clean".into(),
                pmf: self.true_pmf.clone(),
            },
            TestEnv {
                name: format!("huber_{eps}"),
                pmf: self.shifted(self.huber(), eps)?,
            },
            TestEnv {
                name: format!("scale_{eps}"),
                pmf: self.shifted(Contamination::ScaleShift, eps)?,
            },
        ])
    }

    fn simulate(&self, n: usize, stream: u64) -> Vec<usize> {
        let mut g = rng::stream(self.cfg.seed, stream);
        (0..n).map(|_| self.true_pmf.sample_index(&mut g)).collect()
    }

    fn counts(&self, data: &[usize]) -> Vec<usize> {
        let mut c = vec![0usize; self.bins()];
        for &j in data {
            c[j] += 1;
        }
        c
    }

    /// The ambiguity set behind `solve` and `oracle`.
    fn data_spec(&mut self) -> Result<RiskSpec> {
        let data = match self.cfg.data.source {
            DataSource::Truth => return episodic::point_spec(&self.true_pmf),
            DataSource::Simulate => self.simulate(self.cfg.data.observations, DATA_STREAM),
            DataSource::File => {
                let path = PathBuf::from(&self.cfg.data.file);
                self.art.add_input(&path)?;
                output::read_observations(&path, self.bins())?
            }
        };
        let counts = self.counts(&data);
        let posterior = self.prior.update_counts(&counts)?;
        let bx = self.cfg.method.method().ambiguity(&posterior, &counts)?;
        info!(
            "{} observations, method {}",
            data.len(),
            self.cfg.method.method().label()
        );
        RiskSpec::from_box(&bx)
    }

    fn episodic_config(&self, kind: MethodName) -> Result<EpisodicConfig> {
        let e = &self.cfg.experiment;
        let mut c = EpisodicConfig::new(self.cfg.method.method_named(kind), e.episodes);
        c.initial_state = vec![e.initial_state];
        c.bocp = self.cfg.solver.bocp(self.cfg.seed, self.threads);
        c.warm_start = e.warm_start;
        c.compare_cold = e.compare_cold;
        c.eval_envs = self.test_envs()?;
        c.eval_every = e.eval_every;
        c.rollout_horizon = e.rollout_horizon;
        c.rollout_paths = e.rollout_paths;
        c.semidev = e.semidev;
        c.seed = self.cfg.seed;
        c.threads = self.threads;
        Ok(c)
    }

    fn trace_rows<P: Policy + ?Sized>(&self, policy: &P) -> Result<Vec<Vec<String>>> {
        let e = &self.cfg.experiment;
        let rc = RolloutConfig {
            horizon: e.rollout_horizon,
            paths: e.trace_paths.max(1),
            seed: rng::child_seed(self.cfg.seed, ROLLOUT_STREAM),
            trace_paths: e.trace_paths,
            threads: self.threads,
        };
        let res = rollout(&self.model, &self.true_pmf, policy, &[e.initial_state], &rc)?;
        Ok(res.traces.iter().map(trace_row).collect())
    }

    fn write_value<V: ValueFunction + ?Sized>(&mut self, grid: &[f64], v: &V) -> Result<()> {
        let rows: Vec<Vec<String>> = grid.iter().map(|&s| vec![num(s), num(v.eval_1d(s))]).collect();
        self.art.csv("value.csv", &["s", "V"], &rows)?;
        Ok(())
    }

    fn discretize(&mut self) -> Result<()> {
        let xi = self.cfg.model.params().grid();
        let rows: Vec<Vec<String>> = self
            .true_pmf
            .probs()
            .iter()
            .enumerate()
            .map(|(j, p)| vec![j.to_string(), num(xi[j]), num(*p)])
            .collect();
        self.art.csv("support.csv", &["j", "xi", "p"], &rows)?;
        Ok(())
    }

    fn solve(&mut self, warm: Option<&Path>, dump_lp: bool) -> Result<()> {
        let spec = self.data_spec()?;
        let initial = match warm {
            Some(p) => {
                self.art.add_input(p)?;
                let loaded = output::load_pool(p, &self.model)?;
                let kept = bocp::warm_start_filter(&self.model, &spec, &loaded, self.threads);
                info!("warm start: kept {} of {} cuts", kept.len(), loaded.len());
                kept
            }
            None => CutPool::floor_only(&self.model),
        };
        let warm_size = initial.len();
        let bcfg = self.cfg.solver.bocp(self.cfg.seed, self.threads);
        let (pool, st) = bocp::run(&self.model, &spec, &bcfg, initial)?;
        self.art.json("pool.json", &pool)?;
        self.art.csv(
            "bocp_history.csv",
            &["k", "residual", "cuts", "master_obj", "trial_state"],
            &history_rows(&st),
        )?;
        let grid = uniform_grid(
            self.cfg.model.state_lo,
            self.cfg.model.state_hi,
            self.cfg.solver.grid_points,
        );
        let env = pool.compile_1d();
        self.write_value(&grid, &env)?;
        self.art.json(
            "solve.json",
            &serde_json::json!({
                "iterations": st.k,
                "converged": st.converged,
                "residual": st.last_residual,
                "warm_pool_size": warm_size,
                "cuts": pool.len(),
                "lambda": spec.lambda,
                "upsilon": spec.upsilon,
            }),
        )?;
        if dump_lp {
            let (_, lp) = bocp::master_with_lp(&self.model, &spec, &pool, &st.trial_state)?;
            self.art.write_bytes("master_lp.txt", lp.tableau_dump().as_bytes())?;
        }
        if !st.converged {
            return Err(Error::Convergence {
                iterations: st.k,
                residual: st.last_residual,
            });
        }
        Ok(())
    }

    fn oracle(&mut self) -> Result<()> {
        let spec = self.data_spec()?;
        let grid = self.oracle_grid();
        let res = value_iteration_oracle(&self.model, &spec, &grid, self.cfg.solver.oracle_tol, 1_000_000, None)?;
        self.write_value(&grid, &res.value)?;
        let rows = self.trace_rows(&GreedyPolicy::new(&self.model, &spec, &res.value))?;
        self.art.csv("trace.csv", &TRACE_HEADER, &rows)?;
        Ok(())
    }

    fn episodic(&mut self) -> Result<()> {
        let mut ec = self.episodic_config(self.cfg.method.kind)?;
        ec.keep_pools = true;
        let run = episodic::run_episodic(&self.model, &self.true_pmf, &self.prior, &ec)?;
        let header = [
            "episode",
            "iterations",
            "residual",
            "converged",
            "warm_pool_size",
            "cuts",
            "cold_iterations",
            "lambda",
            "upsilon",
            "state",
            "action",
            "xi_index",
            "xi",
            "target_level",
            "center",
            "radius",
        ];
        let rows: Vec<Vec<String>> = run
            .records
            .iter()
            .map(|r| {
                vec![
                    r.episode.to_string(),
                    r.iterations.to_string(),
                    num(r.residual),
                    r.converged.to_string(),
                    r.warm_pool_size.to_string(),
                    r.cuts.to_string(),
                    r.cold_iterations.map_or(String::new(), |c| c.to_string()),
                    num(r.lambda),
                    num(r.upsilon),
                    vec_cell(&r.state),
                    vec_cell(&r.action),
                    r.xi_index.to_string(),
                    vec_cell(&r.xi),
                    r.target_level.map_or(String::new(), num),
                    vec_cell(&r.center),
                    vec_cell(&r.radius),
                ]
            })
            .collect();
        self.art.csv("episodes.csv", &header, &rows)?;
        let metric_rows: Vec<Vec<String>> = run
            .records
            .iter()
            .flat_map(|r| {
                r.metrics.iter().map(move |m| {
                    vec![
                        r.episode.to_string(),
                        m.env.clone(),
                        num(m.metrics.mean),
                        num(m.metrics.cvar95),
                        num(m.metrics.semidev),
                    ]
                })
            })
            .collect();
        self.art.csv(
            "episode_metrics.csv",
            &["episode", "env", "mean", "cvar95", "semidev"],
            &metric_rows,
        )?;
        let last = run.snapshots.last().expect("at least one episode");
        self.art.json("pool.json", &last.pool)?;
        let env = last.pool.compile_1d();
        let rows = self.trace_rows(&GreedyPolicy::new(&self.model, &last.spec, &env))?;
        self.art.csv("trace.csv", &TRACE_HEADER, &rows)?;
        if run.records.iter().any(|r| !r.converged) {
            log::warn!("some episodes stopped before reaching the residual target");
        }
        Ok(())
    }

    fn experiment(&mut self) -> Result<()> {
        match self.cfg.experiment.kind {
            ExperimentKind::Comparison => self.exp_comparison(),
            ExperimentKind::Gap => self.exp_gap(),
            ExperimentKind::Qsr => self.exp_qsr(),
            ExperimentKind::Stability => self.exp_stability(),
            ExperimentKind::Credibility => self.exp_credibility(),
            ExperimentKind::WarmStart => self.exp_warm_start(),
        }
    }

    fn exp_comparison(&mut self) -> Result<()> {
        let base = self.episodic_config(self.cfg.method.kind)?;
        let methods: Vec<_> = [MethodName::BayesDroc, MethodName::BayesSoc, MethodName::Drsc]
            .into_iter()
            .map(|k| self.cfg.method.method_named(k))
            .collect();
        let rows = episodic::comparison_experiment(
            &self.model,
            &self.true_pmf,
            &self.prior,
            &methods,
            &base,
            self.cfg.experiment.replications,
            self.cfg.solver_choice(),
        )?;
        let out: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                vec![
                    r.method.clone(),
                    r.env.clone(),
                    r.episode.to_string(),
                    num(r.mean.mean),
                    num(r.mean.se),
                    num(r.cvar95.mean),
                    num(r.cvar95.se),
                    num(r.semidev.mean),
                    num(r.semidev.se),
                ]
            })
            .collect();
        self.art.csv(
            "comparison.csv",
            &[
                "method",
                "env",
                "episode",
                "mean",
                "mean_se",
                "cvar95",
                "cvar95_se",
                "semidev",
                "semidev_se",
            ],
            &out,
        )?;
        Ok(())
    }

    fn exp_gap(&mut self) -> Result<()> {
        let base = self.episodic_config(self.cfg.method.kind)?;
        let reference = episodic::reference_solution(
            &self.model,
            &self.true_pmf,
            &self.oracle_grid(),
            self.cfg.solver.oracle_tol,
            self.cfg.experiment.initial_state,
            rng::child_seed(self.cfg.seed, ROLLOUT_STREAM),
        )?;
        let gaps = episodic::gap_experiment(
            &self.model,
            &self.true_pmf,
            &self.prior,
            &base,
            &reference,
            self.cfg.experiment.replications,
            self.cfg.solver_choice(),
        )?;
        let rows: Vec<Vec<String>> = (0..base.n_episodes)
            .map(|e| {
                let col: Vec<f64> = gaps.iter().map(|g| g[e]).collect();
                let ms = episodic::MeanSe::of(&col);
                vec![(e + 1).to_string(), num(ms.mean), num(ms.se)]
            })
            .collect();
        self.art.csv("gap.csv", &["episode", "gap", "gap_se"], &rows)?;
        Ok(())
    }

    fn exp_qsr(&mut self) -> Result<()> {
        let e = &self.cfg.experiment;
        let setup = QsrSetup {
            sample_size: e.sample_size,
            replications: e.replications,
            s0: e.initial_state,
            alpha: self.cfg.method.alpha,
            oracle_points: self.cfg.solver.oracle_points,
            oracle_tol: self.cfg.solver.oracle_tol,
            seed: self.cfg.seed,
            threads: self.threads,
        };
        let eps_grid = e.eps_grid.clone();
        for (name, kind) in [("qsr.csv", self.huber()), ("qsr_scale.csv", Contamination::ScaleShift)] {
            let rows = episodic::qsr_experiment(
                &self.model,
                &self.prior,
                &self.true_pmf,
                |eps| self.shifted(kind, eps),
                &eps_grid,
                &setup,
            )?;
            let out: Vec<Vec<String>> = rows
                .iter()
                .map(|r| vec![num(r.eps), num(r.dk_input), num(r.dk_laws)])
                .collect();
            self.art.csv(name, &["eps", "dk_input", "dk_laws"], &out)?;
        }
        Ok(())
    }

    fn exp_stability(&mut self) -> Result<()> {
        let e = &self.cfg.experiment;
        let (n, trials) = (e.sample_size, e.trials);
        let clean = self.simulate(n, DATA_STREAM);
        let grid = self.oracle_grid();
        let alpha = self.cfg.method.alpha;
        let tol = self.cfg.solver.oracle_tol;
        let spec = RiskSpec::from_box(&self.prior.update_counts(&self.counts(&clean))?.credible_box(alpha)?)?;
        let base = value_iteration_oracle(&self.model, &spec, &grid, tol, 1_000_000, None)?.value;
        let bins = self.bins();
        let results = par::map_indexed(trials, self.threads, |t| {
            let mut data = clean.clone();
            let (i, j) = single_flip(&data, bins, self.cfg.seed, t as u64);
            data[i] = j;
            episodic::stability_experiment(&self.model, &self.prior, &clean, &data, alpha, &grid, tol, Some(&base))
        });
        let mut rows = Vec::with_capacity(trials);
        for (t, r) in results.into_iter().enumerate() {
            let r = r?;
            rows.push(vec![
                t.to_string(),
                num(r.lhs),
                num(r.rhs),
                num(r.center_shift),
                num(r.radius_shift),
            ]);
        }
        self.art.csv(
            "stability.csv",
            &["trial", "lhs", "rhs", "center_shift", "radius_shift"],
            &rows,
        )?;
        Ok(())
    }

    fn exp_credibility(&mut self) -> Result<()> {
        let e = &self.cfg.experiment;
        let data = self.simulate(e.sample_size, DATA_STREAM);
        let posterior = self.prior.update_counts(&self.counts(&data))?;
        let alpha = self.cfg.method.alpha;
        let spec = RiskSpec::from_box(&posterior.credible_box(alpha)?)?;
        let bcfg = self.cfg.solver.bocp(self.cfg.seed, self.threads);
        let (pool, st) = bocp::run(&self.model, &spec, &bcfg, CutPool::floor_only(&self.model))?;
        if !st.converged {
            return Err(Error::Convergence {
                iterations: st.k,
                residual: st.last_residual,
            });
        }
        let cov = episodic::credibility_check(
            &self.model,
            &posterior,
            alpha,
            &pool,
            &self.oracle_grid(),
            e.draws,
            e.coverage_slack,
            rng::child_seed(self.cfg.seed, ROLLOUT_STREAM),
            self.threads,
        )?;
        let row = vec![
            e.sample_size.to_string(),
            num(alpha),
            cov.draws.to_string(),
            num(cov.box_coverage),
            num(cov.value_coverage),
        ];
        self.art.csv(
            "credibility.csv",
            &["n", "alpha", "draws", "box_coverage", "value_coverage"],
            &[row],
        )?;
        Ok(())
    }

    fn exp_warm_start(&mut self) -> Result<()> {
        let mut ec = self.episodic_config(self.cfg.method.kind)?;
        ec.compare_cold = true;
        ec.eval_every = 0;
        let run = episodic::run_episodic(&self.model, &self.true_pmf, &self.prior, &ec)?;
        let rows: Vec<Vec<String>> = run
            .records
            .iter()
            .map(|r| {
                vec![
                    r.episode.to_string(),
                    r.iterations.to_string(),
                    r.cold_iterations.map_or(String::new(), |c| c.to_string()),
                    r.warm_pool_size.to_string(),
                ]
            })
            .collect();
        self.art.csv(
            "warm_start.csv",
            &["episode", "warm_iterations", "cold_iterations", "warm_pool_size"],
            &rows,
        )?;
        Ok(())
    }
}

/// Position and replacement value of the `t`-th random single flip.
pub fn single_flip(data: &[usize], bins: usize, seed: u64, t: u64) -> (usize, usize) {
    use rand::Rng as _;
    let mut g = rng::stream(rng::child_seed(seed, t), 0);
    let i = g.random_range(0..data.len());
    let mut j = g.random_range(0..bins - 1);
    if j >= data[i] {
        j += 1;
    }
    (i, j)
}

fn history_rows(st: &BocpState) -> Vec<Vec<String>> {
    st.history
        .iter()
        .map(|h| {
            vec![
                h.k.to_string(),
                num(h.residual),
                h.cuts.to_string(),
                num(h.master_obj),
                vec_cell(&h.trial_state),
            ]
        })
        .collect()
}

fn trace_row(r: &TraceRow) -> Vec<String> {
    vec![
        r.path.to_string(),
        r.t.to_string(),
        vec_cell(&r.s),
        vec_cell(&r.a),
        num(r.xi),
        num(r.stage_cost),
    ]
}
