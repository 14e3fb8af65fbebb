//! Bounded-variable two-phase simplex on a dense tableau.
//!
//! Every row `g·x {≤,≥,=} rhs` gets a slack `s` with `g·x + s = rhs` and
//! sign bounds matching the row kind, so the dual of row r is read off the
//! reduced cost of its slack. Variables carry `[lo, hi]` bounds with ±∞
//! allowed; nonbasic variables sit at a finite bound (or at zero if free).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

const FEAS_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-11;
const REFACTOR_EVERY: usize = 100;
const DEGENERATE_SWITCH: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowKind {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub coefs: Vec<(usize, f64)>,
    pub kind: RowKind,
    pub rhs: f64,
}

/// min cᵀx s.t. rows, lo ≤ x ≤ hi.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: Vec<Constraint>,
}

impl LinearProgram {
    /// `n` variables with zero cost and bounds [0, ∞).
    pub fn new(n: usize) -> Self {
        Self {
            objective: vec![0.0; n],
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
            rows: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn set_bounds(&mut self, j: usize, lo: f64, hi: f64) {
        self.lower[j] = lo;
        self.upper[j] = hi;
    }

    pub fn set_cost(&mut self, j: usize, c: f64) {
        self.objective[j] = c;
    }

    pub fn add_row(&mut self, coefs: Vec<(usize, f64)>, kind: RowKind, rhs: f64) -> usize {
        self.rows.push(Constraint { coefs, kind, rhs });
        self.rows.len() - 1
    }

    pub fn row_activity(&self, r: usize, x: &[f64]) -> f64 {
        self.rows[r].coefs.iter().map(|&(j, v)| v * x[j]).sum()
    }

    fn validate(&self) -> Result<()> {
        let n = self.objective.len();
        if n == 0 {
            return invalid("linear program has no variables");
        }
        if self.lower.len() != n || self.upper.len() != n {
            return invalid("bound vectors do not match the variable count");
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return invalid("objective has non-finite entries");
        }
        for j in 0..n {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            if lo.is_nan() || hi.is_nan() || lo > hi || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
                return invalid(format!("variable {j} has bounds [{lo}, {hi}]"));
            }
        }
        for (r, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return invalid(format!("row {r} has non-finite right-hand side"));
            }
            if row.coefs.iter().any(|&(j, v)| j >= n || !v.is_finite()) {
                return invalid(format!("row {r} has a bad coefficient"));
            }
        }
        Ok(())
    }

    /// Plain-text fixed-width dump of the problem, one row per line.
    pub fn tableau_dump(&self) -> String {
        let n = self.num_vars();
        let w = 12;
        let mut out = String::new();
        let _ = write!(out, "{:<8}", "");
        for j in 0..n {
            let _ = write!(out, "{:>w$}", format!("x{j}"));
        }
        let _ = writeln!(out, "{:>6}{:>w$}", "", "rhs");
        let _ = write!(out, "{:<8}", "min");
        for c in &self.objective {
            let _ = write!(out, "{c:>w$.5e}");
        }
        let _ = writeln!(out);
        for (r, row) in self.rows.iter().enumerate() {
            let mut dense = vec![0.0; n];
            for &(j, v) in &row.coefs {
                dense[j] += v;
            }
            let _ = write!(out, "{:<8}", format!("r{r}"));
            for v in dense {
                if v == 0.0 {
                    let _ = write!(out, "{:>w$}", ".");
                } else {
                    let _ = write!(out, "{v:>w$.5e}");
                }
            }
            let sym = match row.kind {
                RowKind::Le => "<=",
                RowKind::Ge => ">=",
                RowKind::Eq => "=",
            };
            let _ = writeln!(out, "{sym:>6}{:>w$.5e}", row.rhs);
        }
        for (name, b) in [("lo", &self.lower), ("hi", &self.upper)] {
            let _ = write!(out, "{name:<8}");
            for v in b.iter() {
                let _ = write!(out, "{v:>w$.5e}");
            }
            let _ = writeln!(out);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Row multipliers, nonnegative for ≤ and ≥ rows at an optimum.
    pub duals: Vec<f64>,
    /// ∂ objective / ∂ rhs_r.
    pub rhs_sensitivity: Vec<f64>,
    pub reduced_costs: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Basic,
    AtLo,
    AtHi,
    FreeZero,
}

struct Tableau {
    m: usize,
    ncols: usize,
    t: Vec<f64>,
    d: Vec<f64>,
    cost: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    x: Vec<f64>,
    basis: Vec<usize>,
    state: Vec<State>,
    rows: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
    iterations: usize,
    since_refactor: usize,
}

enum PhaseEnd {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let n = lp.num_vars();
        let m = lp.num_rows();
        let ncols = n + 2 * m;
        let mut lo = Vec::with_capacity(ncols);
        let mut hi = Vec::with_capacity(ncols);
        lo.extend_from_slice(&lp.lower);
        hi.extend_from_slice(&lp.upper);
        for row in &lp.rows {
            let (a, b) = match row.kind {
                RowKind::Le => (0.0, f64::INFINITY),
                RowKind::Ge => (f64::NEG_INFINITY, 0.0),
                RowKind::Eq => (0.0, 0.0),
            };
            lo.push(a);
            hi.push(b);
        }
        lo.extend(std::iter::repeat_n(0.0, m));
        hi.extend(std::iter::repeat_n(0.0, m));

        let mut x = vec![0.0; ncols];
        let mut state = vec![State::AtLo; ncols];
        for j in 0..n {
            let (l, h) = (lo[j], hi[j]);
            if l.is_finite() {
                x[j] = l;
                state[j] = State::AtLo;
            } else if h.is_finite() {
                x[j] = h;
                state[j] = State::AtHi;
            } else {
                state[j] = State::FreeZero;
            }
        }

        let mut rows = Vec::with_capacity(m);
        let mut basis = vec![0; m];
        let mut t = vec![0.0; m * ncols];
        let mut cost = vec![0.0; ncols];
        for (r, row) in lp.rows.iter().enumerate() {
            let activity: f64 = row.coefs.iter().map(|&(j, v)| v * x[j]).sum();
            let sval = row.rhs - activity;
            let (sj, aj) = (n + r, n + m + r);
            let mut entries = row.coefs.clone();
            entries.push((sj, 1.0));
            let sigma;
            if sval >= lo[sj] - FEAS_TOL && sval <= hi[sj] + FEAS_TOL {
                sigma = 1.0;
                basis[r] = sj;
                state[sj] = State::Basic;
                x[sj] = sval;
                state[aj] = State::AtLo;
            } else {
                let bound = if sval < lo[sj] { lo[sj] } else { hi[sj] };
                x[sj] = bound;
                state[sj] = if bound == lo[sj] { State::AtLo } else { State::AtHi };
                sigma = if sval > bound { 1.0 } else { -1.0 };
                basis[r] = aj;
                state[aj] = State::Basic;
                x[aj] = (sval - bound).abs();
                hi[aj] = f64::INFINITY;
                cost[aj] = 1.0;
            }
            entries.push((aj, sigma));
            let inv = if basis[r] == aj { sigma } else { 1.0 };
            for &(j, v) in &entries {
                t[r * ncols + j] += v * inv;
            }
            rows.push(entries);
        }
        let mut tab = Self {
            m,
            ncols,
            t,
            d: vec![0.0; ncols],
            cost,
            lo,
            hi,
            x,
            basis,
            state,
            rows,
            rhs: lp.rows.iter().map(|r| r.rhs).collect(),
            iterations: 0,
            since_refactor: 0,
        };
        tab.price_all();
        tab
    }

    fn price_all(&mut self) {
        let nc = self.ncols;
        self.d.copy_from_slice(&self.cost);
        for i in 0..self.m {
            let cb = self.cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * nc..(i + 1) * nc];
                for (dj, tij) in self.d.iter_mut().zip(row) {
                    *dj -= cb * tij;
                }
            }
        }
        for &b in &self.basis {
            self.d[b] = 0.0;
        }
    }

    /// Rebuilds B⁻¹A, basic values and reduced costs from the original rows.
    fn refactor(&mut self) -> Result<()> {
        let m = self.m;
        let nc = self.ncols;
        if m == 0 {
            self.price_all();
            return Ok(());
        }
        let mut pos = vec![usize::MAX; nc];
        for (i, &bj) in self.basis.iter().enumerate() {
            pos[bj] = i;
        }
        let mut b = vec![0.0; m * m];
        for (r, entries) in self.rows.iter().enumerate() {
            for &(j, v) in entries {
                if pos[j] != usize::MAX {
                    b[r * m + pos[j]] += v;
                }
            }
        }
        let binv = invert(&b, m)?;
        self.t.iter_mut().for_each(|v| *v = 0.0);
        for (k, entries) in self.rows.iter().enumerate() {
            for i in 0..m {
                let f = binv[i * m + k];
                if f != 0.0 {
                    let row = &mut self.t[i * nc..(i + 1) * nc];
                    for &(j, v) in entries {
                        row[j] += f * v;
                    }
                }
            }
        }
        let mut resid = self.rhs.clone();
        for (k, entries) in self.rows.iter().enumerate() {
            for &(j, v) in entries {
                if self.state[j] != State::Basic {
                    resid[k] -= v * self.x[j];
                }
            }
        }
        for i in 0..m {
            let v: f64 = (0..m).map(|k| binv[i * m + k] * resid[k]).sum();
            self.x[self.basis[i]] = v;
        }
        // clean exact unit columns of basic variables
        for (i, &bj) in self.basis.iter().enumerate() {
            for r in 0..m {
                self.t[r * nc + bj] = if r == i { 1.0 } else { 0.0 };
            }
        }
        self.price_all();
        self.since_refactor = 0;
        Ok(())
    }

    fn entering(&self, bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        let mut best_score = 0.0;
        for j in 0..self.ncols {
            let dj = self.d[j];
            let dir = match self.state[j] {
                State::Basic => continue,
                State::AtLo if dj < -OPT_TOL && self.hi[j] > self.lo[j] => 1.0,
                State::AtHi if dj > OPT_TOL && self.hi[j] > self.lo[j] => -1.0,
                State::FreeZero if dj.abs() > OPT_TOL => -dj.signum(),
                _ => continue,
            };
            if bland {
                return Some((j, dir));
            }
            if dj.abs() > best_score {
                best_score = dj.abs();
                best = Some((j, dir));
            }
        }
        best
    }

    fn run_phase(&mut self, max_iter: usize) -> Result<PhaseEnd> {
        let nc = self.ncols;
        let mut bland = false;
        let mut degenerate = 0usize;
        loop {
            if self.since_refactor >= REFACTOR_EVERY {
                self.refactor()?;
            }
            let Some((j, dir)) = self.entering(bland) else {
                return Ok(PhaseEnd::Optimal);
            };
            if self.iterations >= max_iter {
                return Err(Error::Solver(format!(
                    "simplex iteration limit {max_iter} reached ({} rows, {} columns)",
                    self.m, self.ncols
                )));
            }
            self.iterations += 1;

            // ratio test
            let mut step = self.hi[j] - self.lo[j];
            let mut leave: Option<usize> = None;
            let mut leave_alpha = 0.0_f64;
            for i in 0..self.m {
                let alpha = self.t[i * nc + j] * dir;
                if alpha.abs() <= PIVOT_TOL {
                    continue;
                }
                let bi = self.basis[i];
                let limit = if alpha > 0.0 {
                    if self.lo[bi] == f64::NEG_INFINITY {
                        continue;
                    }
                    ((self.x[bi] - self.lo[bi]) / alpha).max(0.0)
                } else {
                    if self.hi[bi] == f64::INFINITY {
                        continue;
                    }
                    ((self.hi[bi] - self.x[bi]) / -alpha).max(0.0)
                };
                let better = match leave {
                    None => limit < step,
                    Some(l) => {
                        if limit < step - 1e-12 {
                            true
                        } else if limit <= step + 1e-12 {
                            if bland {
                                bi < self.basis[l]
                            } else {
                                alpha.abs() > leave_alpha
                            }
                        } else {
                            false
                        }
                    }
                };
                if better {
                    step = step.min(limit);
                    leave = Some(i);
                    leave_alpha = alpha.abs();
                }
            }
            if step == f64::INFINITY {
                return Ok(PhaseEnd::Unbounded);
            }
            if step <= 1e-12 {
                degenerate += 1;
                if degenerate >= DEGENERATE_SWITCH {
                    bland = true;
                }
            } else {
                degenerate = 0;
            }

            // move
            self.x[j] += dir * step;
            for i in 0..self.m {
                let a = self.t[i * nc + j];
                if a != 0.0 {
                    self.x[self.basis[i]] -= dir * step * a;
                }
            }

            match leave {
                None => {
                    // bound flip
                    self.state[j] = if dir > 0.0 { State::AtHi } else { State::AtLo };
                    self.x[j] = if dir > 0.0 { self.hi[j] } else { self.lo[j] };
                }
                Some(r) => {
                    let bi = self.basis[r];
                    let alpha = self.t[r * nc + j] * dir;
                    if alpha > 0.0 {
                        self.state[bi] = State::AtLo;
                        self.x[bi] = self.lo[bi];
                    } else {
                        self.state[bi] = State::AtHi;
                        self.x[bi] = self.hi[bi];
                    }
                    self.pivot(r, j);
                }
            }
        }
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let nc = self.ncols;
        let piv = self.t[r * nc + j];
        {
            let row = &mut self.t[r * nc..(r + 1) * nc];
            for v in row.iter_mut() {
                *v /= piv;
            }
            row[j] = 1.0;
        }
        let (before, rest) = self.t.split_at_mut(r * nc);
        let (prow, after) = rest.split_at_mut(nc);
        for other in before.chunks_exact_mut(nc).chain(after.chunks_exact_mut(nc)) {
            let f = other[j];
            if f != 0.0 {
                for (o, p) in other.iter_mut().zip(prow.iter()) {
                    *o -= f * p;
                }
                other[j] = 0.0;
            }
        }
        let f = self.d[j];
        if f != 0.0 {
            for (o, p) in self.d.iter_mut().zip(prow.iter()) {
                *o -= f * p;
            }
            self.d[j] = 0.0;
        }
        self.basis[r] = j;
        self.state[j] = State::Basic;
        self.since_refactor += 1;
    }
}

/// Gauss–Jordan inverse with partial pivoting.
fn invert(a: &[f64], m: usize) -> Result<Vec<f64>> {
    let mut w = a.to_vec();
    let mut inv = vec![0.0; m * m];
    for i in 0..m {
        inv[i * m + i] = 1.0;
    }
    for col in 0..m {
        let (p, pv) = (col..m)
            .map(|r| (r, w[r * m + col].abs()))
            .fold((col, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if pv < 1e-13 {
            return Err(Error::Solver(format!("singular basis at column {col} (pivot {pv:e})")));
        }
        if p != col {
            for k in 0..m {
                w.swap(p * m + k, col * m + k);
                inv.swap(p * m + k, col * m + k);
            }
        }
        let d = w[col * m + col];
        for k in 0..m {
            w[col * m + k] /= d;
            inv[col * m + k] /= d;
        }
        for r in 0..m {
            if r != col {
                let f = w[r * m + col];
                if f != 0.0 {
                    for k in 0..m {
                        w[r * m + k] -= f * w[col * m + k];
                        inv[r * m + k] -= f * inv[col * m + k];
                    }
                }
            }
        }
    }
    Ok(inv)
}

/// Solves the program. Infeasible and unbounded problems are reported in
/// the status; numerical breakdown is an error.
pub fn solve(lp: &LinearProgram) -> Result<LpSolution> {
    lp.validate()?;
    let n = lp.num_vars();
    let m = lp.num_rows();
    let mut tab = Tableau::build(lp);
    let max_iter = 50 * (n + m) + 1000;

    let needs_phase1 = tab.basis.iter().any(|&b| b >= n + m);
    if needs_phase1 {
        tab.run_phase(max_iter)?;
        tab.refactor()?;
        let infeas: f64 = (n + m..n + 2 * m).map(|j| tab.x[j].abs()).sum();
        let scale = 1.0 + lp.rows.iter().map(|r| r.rhs.abs()).fold(0.0, f64::max);
        if infeas > 1e-8 * scale {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                x: tab.x[..n].to_vec(),
                objective: f64::NAN,
                duals: vec![0.0; m],
                rhs_sensitivity: vec![0.0; m],
                reduced_costs: vec![0.0; n],
                iterations: tab.iterations,
            });
        }
        // drive artificials out of the basis where possible
        for r in 0..m {
            let b = tab.basis[r];
            if b < n + m {
                continue;
            }
            let nc = tab.ncols;
            let candidate = (0..n + m)
                .filter(|&j| tab.state[j] != State::Basic)
                .max_by(|&a, &b| tab.t[r * nc + a].abs().total_cmp(&tab.t[r * nc + b].abs()));
            if let Some(j) = candidate {
                if tab.t[r * nc + j].abs() > 1e-9 {
                    tab.state[b] = State::AtLo;
                    tab.x[b] = 0.0;
                    tab.pivot(r, j);
                }
            }
        }
        for j in n + m..n + 2 * m {
            tab.hi[j] = 0.0;
            tab.lo[j] = 0.0;
            if tab.state[j] != State::Basic {
                tab.state[j] = State::AtLo;
                tab.x[j] = 0.0;
            }
        }
    }
    tab.cost.iter_mut().for_each(|c| *c = 0.0);
    tab.cost[..n].copy_from_slice(&lp.objective);
    tab.refactor()?;
    let end = tab.run_phase(max_iter)?;
    tab.refactor()?;
    if let PhaseEnd::Unbounded = end {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            x: tab.x[..n].to_vec(),
            objective: f64::NEG_INFINITY,
            duals: vec![0.0; m],
            rhs_sensitivity: vec![0.0; m],
            reduced_costs: tab.d[..n].to_vec(),
            iterations: tab.iterations,
        });
    }
    // After the final refactor a few reduced costs may have drifted across
    // the optimality tolerance; polish with further pivots if so.
    if tab.entering(false).is_some() {
        tab.run_phase(max_iter)?;
        tab.refactor()?;
    }
    let x = tab.x[..n].to_vec();
    let objective = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    let sens: Vec<f64> = (0..m).map(|r| -tab.d[n + r]).collect();
    let duals = lp
        .rows
        .iter()
        .zip(&sens)
        .map(|(row, y)| match row.kind {
            RowKind::Le => -y,
            RowKind::Ge | RowKind::Eq => *y,
        })
        .collect();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        x,
        objective,
        duals,
        rhs_sensitivity: sens,
        reduced_costs: tab.d[..n].to_vec(),
        iterations: tab.iterations,
    })
}

/// Scaled KKT residuals of a claimed optimal solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
    pub gap: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.complementarity).max(self.gap)
    }
}

/// Recomputes primal feasibility, dual feasibility, complementary slackness
/// and the duality gap from `sol.x` and `sol.duals` alone.
pub fn verify_kkt(lp: &LinearProgram, sol: &LpSolution) -> KktReport {
    let n = lp.num_vars();
    let x = &sol.x;
    let obj: f64 = lp.objective.iter().zip(x).map(|(c, v)| c * v).sum();
    let obj_scale = obj.abs().max(1.0);

    // sensitivities y_r = ∂obj/∂rhs_r from the sign-normalized duals
    let y: Vec<f64> = lp
        .rows
        .iter()
        .zip(&sol.duals)
        .map(|(row, d)| if row.kind == RowKind::Le { -d } else { *d })
        .collect();

    let mut primal = 0.0_f64;
    let mut dual = 0.0_f64;
    let mut comp = 0.0_f64;
    for (r, row) in lp.rows.iter().enumerate() {
        let act = lp.row_activity(r, x);
        let scale = row.rhs.abs().max(1.0);
        let viol = match row.kind {
            RowKind::Le => (act - row.rhs).max(0.0),
            RowKind::Ge => (row.rhs - act).max(0.0),
            RowKind::Eq => (act - row.rhs).abs(),
        };
        primal = primal.max(viol / scale);
        if row.kind != RowKind::Eq {
            dual = dual.max((-sol.duals[r]).max(0.0));
            comp = comp.max(sol.duals[r].abs() * (act - row.rhs).abs() / obj_scale);
        }
    }
    for j in 0..n {
        let (lo, hi) = (lp.lower[j], lp.upper[j]);
        let scale = lo.abs().max(hi.abs()).min(1e300).max(1.0);
        primal = primal
            .max((lo - x[j]).max(0.0) / scale)
            .max((x[j] - hi).max(0.0) / scale);
    }
    let mut d = lp.objective.clone();
    for (row, yr) in lp.rows.iter().zip(&y) {
        for &(j, v) in &row.coefs {
            d[j] -= yr * v;
        }
    }
    let mut dual_obj: f64 = lp.rows.iter().zip(&y).map(|(row, yr)| yr * row.rhs).sum();
    for j in 0..n {
        let (lo, hi) = (lp.lower[j], lp.upper[j]);
        let cs = lp.objective[j].abs().max(1.0);
        let dj = d[j];
        let bad = match (lo.is_finite(), hi.is_finite()) {
            (true, true) => 0.0,
            (true, false) => (-dj).max(0.0),
            (false, true) => dj.max(0.0),
            (false, false) => dj.abs(),
        };
        dual = dual.max(bad / cs);
        if dj > 0.0 {
            if lo.is_finite() {
                comp = comp.max(dj * (x[j] - lo).abs() / obj_scale);
                dual_obj += dj * lo;
            }
        } else if dj < 0.0 && hi.is_finite() {
            comp = comp.max(-dj * (hi - x[j]).abs() / obj_scale);
            dual_obj += dj * hi;
        }
    }
    let gap = (obj - dual_obj).abs() / (1.0 + obj.abs());
    KktReport {
        primal,
        dual,
        complementarity: comp,
        gap,
    }
}
