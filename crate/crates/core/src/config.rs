//! Run configuration: a flat sectioned key-value file.
//!
//! ```text
//! seed = 7
//!
//! [model]
//! bins = 20
//!
//! [method]
//! kind = "bayes_droc"
//! alpha = 0.2
//! ```
//!
//! Every key is optional and falls back to the default printed by
//! `--print-config`. Unknown keys and out-of-range values are rejected
//! with the line they appear on.

use serde::{Deserialize, Serialize};

use crate::bocp::{BocpConfig, Restart};
use crate::dist::DirichletPosterior;
use crate::episodic::{MethodKind, Solver};
use crate::error::{Error, Result};
use crate::model::InventoryParams;
use crate::value::SemidevDirection;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelSection,
    pub method: MethodSection,
    pub solver: SolverSection,
    pub data: DataSection,
    pub experiment: ExperimentSection,
    pub output: OutputSection,
}

/// Inventory parameters; the demand law is the data-generating one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
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

impl Default for ModelSection {
    fn default() -> Self {
        let p = InventoryParams::default();
        Self {
            c: p.c,
            b: p.b,
            h: p.h,
            gamma: p.gamma,
            demand_mean: p.demand_mean,
            truncation: p.truncation,
            bins: 20,
            state_lo: p.state_lo,
            state_hi: p.state_hi,
            action_max: p.action_max,
        }
    }
}

impl ModelSection {
    pub fn params(&self) -> InventoryParams {
        InventoryParams {
            c: self.c,
            b: self.b,
            h: self.h,
            gamma: self.gamma,
            demand_mean: self.demand_mean,
            truncation: self.truncation,
            bins: self.bins,
            state_lo: self.state_lo,
            state_hi: self.state_hi,
            action_max: self.action_max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    BayesDroc,
    BayesSoc,
    Drsc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodSection {
    pub kind: MethodName,
    pub alpha: f64,
    /// Symmetric Dirichlet prior parameter τ_{j,0}.
    pub prior: f64,
    pub c0: f64,
}

impl Default for MethodSection {
    fn default() -> Self {
        Self {
            kind: MethodName::BayesDroc,
            alpha: 0.2,
            prior: 2.0,
            c0: 0.1,
        }
    }
}

impl MethodSection {
    pub fn method(&self) -> MethodKind {
        self.method_named(self.kind)
    }

    pub fn method_named(&self, kind: MethodName) -> MethodKind {
        match kind {
            MethodName::BayesDroc => MethodKind::BayesDroc { alpha: self.alpha },
            MethodName::BayesSoc => MethodKind::BayesSoc,
            MethodName::Drsc => MethodKind::Drsc { c0: self.c0 },
        }
    }

    pub fn prior(&self, len: usize) -> Result<DirichletPosterior> {
        DirichletPosterior::symmetric(len, self.prior)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub epsilon: f64,
    pub k_max: usize,
    pub grid_points: usize,
    pub restart_period: usize,
    pub restart: Restart,
    pub prune: bool,
    /// Grid of the value-iteration oracle.
    pub oracle_points: usize,
    pub oracle_tol: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let b = BocpConfig::default();
        Self {
            epsilon: b.epsilon,
            k_max: b.k_max,
            grid_points: b.grid_points,
            restart_period: b.restart_period,
            restart: b.restart,
            prune: b.prune,
            oracle_points: 201,
            oracle_tol: 1e-3,
        }
    }
}

impl SolverSection {
    pub fn bocp(&self, seed: u64, threads: usize) -> BocpConfig {
        BocpConfig {
            epsilon: self.epsilon,
            k_max: self.k_max,
            grid_points: self.grid_points,
            restart_period: self.restart_period,
            restart: self.restart,
            seed,
            prune: self.prune,
            threads,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// `observations` draws from the demand law.
    Simulate,
    /// Bin indices read from `file`.
    File,
    /// No data: the ambiguity set is the demand law itself.
    Truth,
}

/// Observations behind `solve` and `oracle`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub source: DataSource,
    pub observations: usize,
    /// One bin index per line; blank lines and `#` comments are skipped.
    pub file: String,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            source: DataSource::Simulate,
            observations: 100,
            file: String::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Comparison,
    Gap,
    Qsr,
    Stability,
    Credibility,
    WarmStart,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverName {
    Bocp,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    pub episodes: usize,
    pub replications: usize,
    pub eval_every: usize,
    pub rollout_horizon: usize,
    pub rollout_paths: usize,
    /// Paths whose step-by-step traces go to trace.csv.
    pub trace_paths: usize,
    pub initial_state: f64,
    pub warm_start: bool,
    pub compare_cold: bool,
    pub semidev: SemidevDirection,
    /// Value functions in comparison and gap runs.
    pub solver: SolverName,
    /// Contamination level of the shifted test environments.
    pub contamination: f64,
    /// Tail mean of the Huber mixture component.
    pub huber_tail_mean: f64,
    pub eps_grid: Vec<f64>,
    /// Dataset size in qsr, stability and credibility runs.
    pub sample_size: usize,
    pub draws: usize,
    pub trials: usize,
    pub coverage_slack: f64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::Comparison,
            episodes: 60,
            replications: 20,
            eval_every: 10,
            rollout_horizon: 120,
            rollout_paths: 500,
            trace_paths: 5,
            initial_state: 0.0,
            warm_start: true,
            compare_cold: false,
            semidev: SemidevDirection::Upside,
            solver: SolverName::Oracle,
            contamination: 0.3,
            huber_tail_mean: 30.0,
            eps_grid: vec![0.0, 0.1, 0.2, 0.3],
            sample_size: 200,
            draws: 2000,
            trials: 50,
            coverage_slack: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

impl RunConfig {
    /// Parses and validates a config text.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| line_of(text, s.start));
            Error::Config {
                line,
                message: e.message().trim().to_string(),
            }
        })?;
        cfg.validate(text)?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            line: 0,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::parse(&text)
    }

    /// Text with every key at its current value.
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn solver_choice(&self) -> Solver {
        match self.experiment.solver {
            SolverName::Bocp => Solver::Bocp,
            SolverName::Oracle => Solver::Oracle {
                points: self.solver.oracle_points,
                tol: self.solver.oracle_tol,
            },
        }
    }

    fn validate(&self, text: &str) -> Result<()> {
        let fail = |section: &str, key: &str, message: String| -> Result<()> {
            Err(Error::Config {
                line: key_line(text, section, key),
                message: format!("{section}.{key}: {message}"),
            })
        };
        let m = &self.model;
        let positive = [
            ("c", m.c),
            ("h", m.h),
            ("demand_mean", m.demand_mean),
            ("truncation", m.truncation),
            ("action_max", m.action_max),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return fail("model", key, format!("must be positive, got {v}"));
            }
        }
        if !(m.b > m.c) {
            return fail("model", "b", "backlog cost must exceed the ordering cost".into());
        }
        if !(m.gamma > 0.0 && m.gamma < 1.0) {
            return fail("model", "gamma", format!("must lie in (0, 1), got {}", m.gamma));
        }
        if m.bins < 2 {
            return fail("model", "bins", "at least two bins are required".into());
        }
        if !(m.state_lo < m.state_hi) {
            return fail("model", "state_hi", "must exceed state_lo".into());
        }

        let me = &self.method;
        if !(me.alpha > 0.0 && me.alpha <= 1.0) {
            return fail("method", "alpha", format!("must lie in (0, 1], got {}", me.alpha));
        }
        if !(me.prior > 1.0 && me.prior.is_finite()) {
            return fail("method", "prior", format!("must exceed 1, got {}", me.prior));
        }
        if !(me.c0 > 0.0 && me.c0.is_finite()) {
            return fail("method", "c0", format!("must be positive, got {}", me.c0));
        }

        let s = &self.solver;
        if !(s.epsilon > 0.0 && s.epsilon.is_finite()) {
            return fail("solver", "epsilon", format!("must be positive, got {}", s.epsilon));
        }
        for (key, v, min) in [
            ("k_max", s.k_max, 1),
            ("grid_points", s.grid_points, 2),
            ("restart_period", s.restart_period, 1),
            ("oracle_points", s.oracle_points, 2),
        ] {
            if v < min {
                return fail("solver", key, format!("must be at least {min}"));
            }
        }
        if !(s.oracle_tol > 0.0) {
            return fail("solver", "oracle_tol", "must be positive".into());
        }

        if self.data.source == DataSource::File && self.data.file.is_empty() {
            return fail("data", "file", "source = \"file\" needs a path".into());
        }

        let e = &self.experiment;
        for (key, v) in [
            ("episodes", e.episodes),
            ("replications", e.replications),
            ("rollout_horizon", e.rollout_horizon),
            ("rollout_paths", e.rollout_paths),
            ("sample_size", e.sample_size),
            ("draws", e.draws),
            ("trials", e.trials),
        ] {
            if v == 0 {
                return fail("experiment", key, "must be at least 1".into());
            }
        }
        if e.rollout_paths < 2 {
            return fail("experiment", "rollout_paths", "metrics need at least two paths".into());
        }
        if !(e.initial_state >= m.state_lo && e.initial_state <= m.state_hi) {
            return fail("experiment", "initial_state", "must lie in the state box".into());
        }
        if !(0.0..1.0).contains(&e.contamination) {
            return fail("experiment", "contamination", "must lie in [0, 1)".into());
        }
        if !(e.huber_tail_mean > 0.0) {
            return fail("experiment", "huber_tail_mean", "must be positive".into());
        }
        if e.eps_grid.is_empty() || e.eps_grid.iter().any(|x| !(0.0..1.0).contains(x)) {
            return fail("experiment", "eps_grid", "needs values in [0, 1)".into());
        }
        if e.coverage_slack < 0.0 {
            return fail("experiment", "coverage_slack", "must be nonnegative".into());
        }
        if self.output.dir.is_empty() {
            return fail("output", "dir", "must not be empty".into());
        }
        Ok(())
    }
}

/// 1-based line holding byte `offset`.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|b| *b == b'\n').count() + 1
}

/// 1-based line of `key` inside `[section]`, 0 when the key is absent.
fn key_line(text: &str, section: &str, key: &str) -> usize {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
        } else if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return i + 1;
                }
            }
        }
    }
    0
}
