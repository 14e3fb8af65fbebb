//! Finite-support distributions, Dirichlet posterior learning and the
//! posterior-credible box ambiguity sets built from it.

use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, violated, Error, Result};
use crate::risk;

const SUM_TOL: f64 = 1e-12;

/// Known support {ξ¹,…,ξᴶ} of the disturbance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Support {
    points: Vec<Vec<f64>>,
    diameter: f64,
    min_separation: f64,
}

impl Support {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        if points.len() < 2 {
            return invalid("support needs at least two points");
        }
        let dim = points[0].len();
        if dim == 0 || points.iter().any(|p| p.len() != dim) {
            return invalid("support points must share a positive dimension");
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return invalid("support points must be finite");
        }
        let mut diameter = 0.0_f64;
        let mut min_separation = f64::INFINITY;
        for i in 0..points.len() {
            for j in (i + 1)..points.len() {
                let d = points[i]
                    .iter()
                    .zip(&points[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                diameter = diameter.max(d);
                min_separation = min_separation.min(d);
            }
        }
        if min_separation <= 0.0 {
            return invalid("support points must be pairwise distinct");
        }
        Ok(Self {
            points,
            diameter,
            min_separation,
        })
    }

    /// One-dimensional support.
    pub fn scalar(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| vec![v]).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn point(&self, j: usize) -> &[f64] {
        &self.points[j]
    }

    /// First coordinate of every point; the natural view for k = 1.
    pub fn values_1d(&self) -> Vec<f64> {
        self.points.iter().map(|p| p[0]).collect()
    }

    /// Largest pairwise distance D_Ξ.
    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    /// Smallest pairwise distance δ_Ξ.
    pub fn min_separation(&self) -> f64 {
        self.min_separation
    }
}

/// Probability vector over a fixed finite support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pmf(Vec<f64>);

impl Pmf {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return invalid("empty probability vector");
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
            return invalid("probabilities must lie in [0, 1]");
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return invalid(format!("probabilities sum to {total}, not 1"));
        }
        Ok(Self(probs))
    }

    /// Rescales nonnegative weights to unit mass.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return invalid("weights must be finite and nonnegative");
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return invalid("weights have zero mass");
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(len: usize) -> Self {
        Self(vec![1.0 / len as f64; len])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn expect(&self, h: &[f64]) -> f64 {
        self.0.iter().zip(h).map(|(p, v)| p * v).sum()
    }

    pub fn cdf(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.0
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect()
    }

    /// Draws a support index by inversion of the cumulative sums.
    pub fn sample_index<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        self.index_for_uniform(u)
    }

    /// Inverse-CDF index for a given uniform draw.
    pub fn index_for_uniform(&self, u: f64) -> usize {
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (j, p) in self.0.iter().enumerate() {
            if *p > 0.0 {
                last_positive = j;
            }
            acc += p;
            if u < acc && *p > 0.0 {
                return j;
            }
        }
        last_positive
    }
}

/// Dirichlet belief over the support probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletPosterior {
    tau: Vec<f64>,
    count: usize,
    prior_mass: f64,
}

impl DirichletPosterior {
    /// Prior with parameters `tau0`; every entry must exceed 1 so the mode exists.
    pub fn new(tau0: Vec<f64>) -> Result<Self> {
        if tau0.len() < 2 {
            return invalid("Dirichlet prior needs at least two parameters");
        }
        if tau0.iter().any(|t| !t.is_finite() || *t <= 1.0) {
            return violated("Dirichlet prior parameters must all exceed 1");
        }
        let prior_mass = tau0.iter().sum();
        Ok(Self {
            tau: tau0,
            count: 0,
            prior_mass,
        })
    }

    /// The default prior τ₀ = (2, …, 2).
    pub fn symmetric(len: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; len])
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.tau.iter().sum()
    }

    /// Absorbs one observation of support index `j` (0-based).
    pub fn update(&self, j: usize) -> Result<Self> {
        let mut next = self.clone();
        next.observe(j)?;
        Ok(next)
    }

    pub fn observe(&mut self, j: usize) -> Result<()> {
        if j >= self.tau.len() {
            return invalid(format!(
                "observation index {j} outside support of size {}",
                self.tau.len()
            ));
        }
        self.tau[j] += 1.0;
        self.count += 1;
        Ok(())
    }

    /// Absorbs a batch of empirical counts: τ ← τ + c.
    pub fn update_counts(&self, counts: &[usize]) -> Result<Self> {
        if counts.len() != self.tau.len() {
            return invalid("count vector length does not match the support");
        }
        let mut next = self.clone();
        for (t, c) in next.tau.iter_mut().zip(counts) {
            *t += *c as f64;
        }
        next.count += counts.iter().sum::<usize>();
        Ok(next)
    }

    /// Posterior mode (τ_j − 1)/(Στ − J).
    pub fn mode(&self) -> Result<Pmf> {
        if self.tau.iter().any(|t| *t <= 1.0) {
            return violated("posterior mode needs every parameter above 1");
        }
        let denom = self.total() - self.tau.len() as f64;
        Ok(Pmf(self.tau.iter().map(|t| (t - 1.0) / denom).collect()))
    }

    /// Posterior mean τ_j/Στ.
    pub fn mean(&self) -> Pmf {
        let total = self.total();
        Pmf(self.tau.iter().map(|t| t / total).collect())
    }

    /// Writes the mode as ω·(prior mode) + (1−ω)·(empirical distribution).
    pub fn mode_decomposition(&self, prior: &DirichletPosterior) -> Result<ModeDecomposition> {
        if prior.len() != self.len() {
            return invalid("prior and posterior have different support sizes");
        }
        let prior_mode = prior.mode()?;
        let n = self
            .count
            .checked_sub(prior.count)
            .ok_or_else(|| Error::InvalidInput("posterior has fewer observations than the prior".into()))?;
        let counts: Vec<f64> = self.tau.iter().zip(&prior.tau).map(|(a, b)| a - b).collect();
        if counts.iter().any(|c| *c < -1e-9) || (counts.iter().sum::<f64>() - n as f64).abs() > 1e-9 {
            return invalid("posterior is not reachable from the given prior");
        }
        if n == 0 {
            return Ok(ModeDecomposition {
                omega: 1.0,
                empirical: prior_mode.clone(),
                prior_mode,
                degenerate: true,
            });
        }
        let j = self.len() as f64;
        let omega = (prior.total() - j) / (self.total() - j);
        let empirical = Pmf(counts.iter().map(|c| c / n as f64).collect());
        Ok(ModeDecomposition {
            omega,
            prior_mode,
            empirical,
            degenerate: false,
        })
    }

    /// Bonferroni-corrected posterior-credible box around the mode.
    ///
    /// `alpha = 1` returns the singleton at the posterior mean (radius 0).
    pub fn credible_box(&self, alpha: f64) -> Result<BoxAmbiguity> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return invalid(format!("credibility parameter {alpha} outside (0, 1]"));
        }
        if alpha == 1.0 {
            let mean = self.mean();
            let n = mean.len();
            return Ok(BoxAmbiguity {
                lower: mean.0.clone(),
                upper: mean.0.clone(),
                radius: vec![0.0; n],
                center: mean,
                alpha: Some(1.0),
            });
        }
        let center = self.mode()?;
        let j = self.len() as f64;
        let z = normal_quantile(1.0 - alpha / (2.0 * j))?;
        let n_eff = self.total() - j;
        let radius = center.0.iter().map(|p| z * (p * (1.0 - p) / n_eff).sqrt()).collect();
        BoxAmbiguity::new(center, radius, Some(alpha))
    }

    /// One draw P ~ Dirichlet(τ) through normalized Gamma(τ_j, 1) variates.
    pub fn sample_pmf<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Pmf {
        loop {
            let draws: Vec<f64> = self
                .tau
                .iter()
                .map(|t| Gamma::new(*t, 1.0).expect("shape > 1").sample(rng))
                .collect();
            let total: f64 = draws.iter().sum();
            if total > 0.0 && total.is_finite() {
                return Pmf(draws.into_iter().map(|d| d / total).collect());
            }
        }
    }
}

/// Output of [`DirichletPosterior::mode_decomposition`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModeDecomposition {
    pub omega: f64,
    pub prior_mode: Pmf,
    pub empirical: Pmf,
    /// No data yet: the empirical part is undefined and set to the prior mode.
    pub degenerate: bool,
}

/// Box ambiguity set {P ∈ simplex : lower ≤ P ≤ upper}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxAmbiguity {
    center: Pmf,
    radius: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    alpha: Option<f64>,
}

impl BoxAmbiguity {
    /// Box of half-widths `radius` around `center`, clipped to [0, 1].
    pub fn new(center: Pmf, radius: Vec<f64>, alpha: Option<f64>) -> Result<Self> {
        if radius.len() != center.len() {
            return invalid("radius length does not match the center");
        }
        if radius.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return invalid("radius entries must be finite and nonnegative");
        }
        let lower = center.0.iter().zip(&radius).map(|(p, r)| (p - r).max(0.0)).collect();
        let upper = center.0.iter().zip(&radius).map(|(p, r)| (p + r).min(1.0)).collect();
        Ok(Self {
            center,
            radius,
            lower,
            upper,
            alpha,
        })
    }

    /// Box given directly by its bounds. The stored center is the point
    /// lower + t·(upper − lower) with unit mass, and the radius is the
    /// largest distance from it to either bound.
    pub fn from_bounds(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return invalid("bound vectors must be nonempty and of equal length");
        }
        if lower
            .iter()
            .zip(&upper)
            .any(|(l, u)| !l.is_finite() || !u.is_finite() || *l < 0.0 || *u > 1.0 || l > u)
        {
            return violated("bounds must satisfy 0 <= lower <= upper <= 1");
        }
        let lo: f64 = lower.iter().sum();
        let hi: f64 = upper.iter().sum();
        if lo > 1.0 + SUM_TOL || hi < 1.0 - SUM_TOL {
            return violated("box does not intersect the simplex");
        }
        let t = if hi - lo > 0.0 {
            ((1.0 - lo) / (hi - lo)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let center_raw: Vec<f64> = lower.iter().zip(&upper).map(|(l, u)| l + t * (u - l)).collect();
        let center = Pmf::normalized(center_raw)?;
        let radius = center
            .0
            .iter()
            .zip(lower.iter().zip(&upper))
            .map(|(c, (l, u))| (c - l).max(u - c).max(0.0))
            .collect();
        Ok(Self {
            center,
            radius,
            lower,
            upper,
            alpha: None,
        })
    }

    pub fn center(&self) -> &Pmf {
        &self.center
    }

    pub fn radius(&self) -> &[f64] {
        &self.radius
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn alpha(&self) -> Option<f64> {
        self.alpha
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn contains(&self, p: &Pmf, tol: f64) -> bool {
        p.len() == self.len()
            && p.0
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *v >= l - tol && *v <= u + tol)
    }

    /// Support function y ↦ max_{P in box ∩ simplex} yᵀP.
    pub fn support_function(&self, y: &[f64]) -> Result<f64> {
        risk::worst_case_on_bounds(&self.lower, &self.upper, y).map(|(v, _)| v)
    }
}

/// Standard normal CDF: power series near the origin, Laplace continued
/// fraction in the tails.
pub fn normal_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x > 3.0 {
        1.0 - normal_upper_tail(x)
    } else if x < -3.0 {
        normal_upper_tail(-x)
    } else {
        let x2 = x * x;
        let mut term = x;
        let mut sum = x;
        let mut k = 1.0;
        while term.abs() > 1e-17 * sum.abs().max(1e-300) {
            term *= x2 / (2.0 * k + 1.0);
            sum += term;
            k += 1.0;
        }
        0.5 + normal_pdf(x) * sum
    }
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

// Q(x) = φ(x) / (x + 1/(x + 2/(x + 3/(x + …)))) for x ≥ 3.
fn normal_upper_tail(x: f64) -> f64 {
    if x.is_infinite() {
        return 0.0;
    }
    let mut t = x;
    for k in (1..=200).rev() {
        t = x + k as f64 / t;
    }
    normal_pdf(x) / t
}

/// Quantile of the standard normal distribution.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return invalid(format!("normal quantile needs p in (0, 1), got {p}"));
    }
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383577518672690e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-3,
        3.224671290700398e-1,
        2.445134137142996,
        3.754408661907416,
    ];
    const P_LOW: f64 = 0.02425;

    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let mut x = if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p > 1.0 - P_LOW {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    // Halley refinement against the series/continued-fraction CDF.
    for _ in 0..2 {
        let e = if x > 0.0 {
            (1.0 - p) - normal_upper_tail_any(x)
        } else {
            normal_cdf(x) - p
        };
        let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
        x -= u / (1.0 + 0.5 * x * u);
    }
    Ok(x)
}

// 1 − Φ(x) without cancellation for x > 0.
fn normal_upper_tail_any(x: f64) -> f64 {
    if x > 3.0 {
        normal_upper_tail(x)
    } else {
        1.0 - normal_cdf(x)
    }
}

fn check_len(p: &Pmf, q: &Pmf) -> Result<()> {
    if p.len() != q.len() {
        return invalid(format!("length mismatch: {} vs {}", p.len(), q.len()));
    }
    Ok(())
}

pub fn l1_distance(p: &Pmf, q: &Pmf) -> Result<f64> {
    check_len(p, q)?;
    Ok(p.0.iter().zip(&q.0).map(|(a, b)| (a - b).abs()).sum())
}

pub fn linf_distance(p: &Pmf, q: &Pmf) -> Result<f64> {
    check_len(p, q)?;
    Ok(p.0.iter().zip(&q.0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

pub fn tv_distance(p: &Pmf, q: &Pmf) -> Result<f64> {
    Ok(0.5 * l1_distance(p, q)?)
}

/// 1-Wasserstein distance between two equal-size samples on ℝ:
/// the mean absolute gap between matching order statistics.
pub fn kantorovich_1d(samples_a: &[f64], samples_b: &[f64]) -> Result<f64> {
    if samples_a.len() != samples_b.len() || samples_a.is_empty() {
        return invalid("Kantorovich distance needs two nonempty samples of equal size");
    }
    let mut a = samples_a.to_vec();
    let mut b = samples_b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// 1-Wasserstein distance between two pmfs on a common increasing 1-D grid:
/// ∫|F_p − F_q|, exact for step CDFs.
pub fn kantorovich_grid(p: &Pmf, q: &Pmf, grid: &[f64]) -> Result<f64> {
    check_len(p, q)?;
    if grid.len() != p.len() {
        return invalid("grid length does not match the pmfs");
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return invalid("grid must be strictly increasing");
    }
    let (fp, fq) = (p.cdf(), q.cdf());
    Ok((0..grid.len() - 1)
        .map(|j| (fp[j] - fq[j]).abs() * (grid[j + 1] - grid[j]))
        .sum())
}

/// Probe-based lower bound on the ‖·‖∞ Hausdorff distance between two boxes
/// through the support-function representation: every ±e_j plus `probes`
/// random directions on the ℓ₁ sphere.
pub fn hausdorff_lower_bound<R: rand::Rng + ?Sized>(
    a: &BoxAmbiguity,
    b: &BoxAmbiguity,
    probes: usize,
    rng: &mut R,
) -> Result<f64> {
    if a.len() != b.len() {
        return invalid("boxes live on different supports");
    }
    let n = a.len();
    let mut best = 0.0_f64;
    let mut eval = |y: &[f64]| -> Result<()> {
        let gap = (a.support_function(y)? - b.support_function(y)?).abs();
        best = best.max(gap);
        Ok(())
    };
    let mut y = vec![0.0; n];
    for j in 0..n {
        for sign in [1.0, -1.0] {
            y.iter_mut().for_each(|v| *v = 0.0);
            y[j] = sign;
            eval(&y)?;
        }
    }
    for _ in 0..probes {
        for v in y.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let norm: f64 = y.iter().map(|v| v.abs()).sum();
        if norm == 0.0 {
            continue;
        }
        y.iter_mut().for_each(|v| *v /= norm);
        eval(&y)?;
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_abs_diff_eq;

    #[test]
    fn update_increments_only_the_observed_entry() {
        let post = DirichletPosterior::new(vec![2.0, 2.0, 2.0]).unwrap();
        let post = post.update(0).unwrap().update(0).unwrap().update(2).unwrap();
        assert_eq!(post.tau(), &[4.0, 2.0, 3.0]);
        assert_eq!(post.count(), 3);

        let post = DirichletPosterior::new(vec![3.0, 2.0]).unwrap().update(1).unwrap();
        assert_eq!(post.tau(), &[3.0, 3.0]);
    }

    #[test]
    fn update_rejects_out_of_range_index() {
        let post = DirichletPosterior::symmetric(3, 2.0).unwrap();
        assert!(matches!(post.update(3), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn prior_must_exceed_one() {
        assert!(DirichletPosterior::new(vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn batch_update_matches_sequential_updates() {
        let prior = DirichletPosterior::symmetric(4, 2.0).unwrap();
        let obs = [0, 3, 3, 1, 0, 0, 2];
        let mut seq = prior.clone();
        for &j in &obs {
            seq.observe(j).unwrap();
        }
        let batch = prior.update_counts(&[3, 1, 1, 2]).unwrap();
        assert_eq!(seq, batch);
        assert_abs_diff_eq!(seq.total(), prior.total() + obs.len() as f64);
    }

    #[test]
    fn mode_and_mean_by_hand() {
        let post = DirichletPosterior::new(vec![3.0, 2.0, 2.0]).unwrap();
        let mode = post.mode().unwrap();
        assert_eq!(mode.probs(), &[0.5, 0.25, 0.25]);
        let mean = post.mean();
        for (m, e) in mean.probs().iter().zip([3.0 / 7.0, 2.0 / 7.0, 2.0 / 7.0]) {
            assert_abs_diff_eq!(*m, e, epsilon = 1e-15);
        }
        let sym = DirichletPosterior::new(vec![3.0, 3.0]).unwrap();
        assert_eq!(sym.mode().unwrap().probs(), &[0.5, 0.5]);
        let big = DirichletPosterior::symmetric(2, 2.0)
            .unwrap()
            .update_counts(&[1000, 0])
            .unwrap();
        assert_abs_diff_eq!(big.mean().probs()[0], 1002.0 / 1004.0, epsilon = 1e-15);
        assert!(big.mode().unwrap().probs()[0] > 0.998);
    }

    #[test]
    fn decomposition_by_hand() {
        let prior = DirichletPosterior::symmetric(2, 2.0).unwrap();
        let post = prior.update_counts(&[2, 0]).unwrap();
        let d = post.mode_decomposition(&prior).unwrap();
        assert_abs_diff_eq!(d.omega, 0.5);
        assert_eq!(d.prior_mode.probs(), &[0.5, 0.5]);
        assert_eq!(d.empirical.probs(), &[1.0, 0.0]);
        assert_eq!(post.mode().unwrap().probs(), &[0.75, 0.25]);

        let prior3 = DirichletPosterior::symmetric(3, 2.0).unwrap();
        let post3 = prior3.update_counts(&[3, 2, 1]).unwrap();
        assert_abs_diff_eq!(
            post3.mode_decomposition(&prior3).unwrap().omega,
            1.0 / 3.0,
            epsilon = 1e-15
        );

        let none = prior.mode_decomposition(&prior).unwrap();
        assert!(none.degenerate);
        assert_eq!(none.omega, 1.0);
        assert_eq!(none.empirical, prior.mode().unwrap());
    }

    #[test]
    fn credible_box_worked_example() {
        let post = DirichletPosterior::new(vec![3.0, 3.0]).unwrap();
        let b = post.credible_box(0.2).unwrap();
        assert_eq!(b.center().probs(), &[0.5, 0.5]);
        let expected = 1.6448536269514722 * (0.25_f64 / 4.0).sqrt();
        for r in b.radius() {
            assert_abs_diff_eq!(*r, expected, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(b.radius()[0], 0.41121, epsilon = 1e-5);
        assert!(b.lower().iter().all(|v| *v >= 0.0));
        assert!(b.upper().iter().all(|v| *v <= 1.0));
    }

    #[test]
    fn credible_box_alpha_one_is_the_mean_singleton() {
        let post = DirichletPosterior::new(vec![3.0, 2.0, 5.0]).unwrap();
        let b = post.credible_box(1.0).unwrap();
        assert!(b.radius().iter().all(|r| *r == 0.0));
        assert_eq!(b.center(), &post.mean());
        assert_eq!(b.lower(), b.upper());
    }

    #[test]
    fn credible_box_rejects_bad_alpha() {
        let post = DirichletPosterior::symmetric(3, 2.0).unwrap();
        assert!(post.credible_box(0.0).is_err());
        assert!(post.credible_box(1.5).is_err());
    }

    #[test]
    fn radius_halves_when_data_quadruples() {
        let prior = DirichletPosterior::symmetric(2, 2.0).unwrap();
        // mode (0.3, 0.7) with Στ − J = 100 and 400
        let a = prior.update_counts(&[29, 69]).unwrap();
        let b = prior.update_counts(&[119, 279]).unwrap();
        let ra = a.credible_box(0.2).unwrap();
        let rb = b.credible_box(0.2).unwrap();
        for (x, y) in ra.radius().iter().zip(rb.radius()) {
            assert_abs_diff_eq!(x / y, 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn radius_is_nonincreasing_in_alpha() {
        let post = DirichletPosterior::new(vec![5.0, 9.0, 3.0, 7.0]).unwrap();
        let mut prev = f64::INFINITY;
        for alpha in [0.01, 0.05, 0.1, 0.2, 0.5, 0.9, 0.99] {
            let r = post.credible_box(alpha).unwrap().radius()[0];
            assert!(r <= prev);
            prev = r;
        }
    }

    #[test]
    fn normal_quantile_reference_values() {
        assert_eq!(normal_quantile(0.5).unwrap(), 0.0);
        assert_abs_diff_eq!(normal_quantile(0.975).unwrap(), 1.959964, epsilon = 1e-6);
        assert_abs_diff_eq!(normal_quantile(0.95).unwrap(), 1.644854, epsilon = 1e-6);
        assert!(normal_quantile(0.0).is_err());
        assert!(normal_quantile(1.0).is_err());
    }

    #[test]
    fn normal_cdf_matches_across_branch_boundary() {
        // series at 3 vs continued fraction just past it
        let left = normal_cdf(3.0);
        let right = normal_cdf(3.0 + 1e-12);
        assert_abs_diff_eq!(left, right, epsilon = 1e-14);
        assert_abs_diff_eq!(normal_cdf(0.0), 0.5);
        assert_abs_diff_eq!(normal_cdf(-1.0) + normal_cdf(1.0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn distances() {
        let p = Pmf::new(vec![1.0, 0.0]).unwrap();
        let q = Pmf::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(l1_distance(&p, &p).unwrap(), 0.0);
        assert_eq!(l1_distance(&p, &q).unwrap(), 2.0);
        assert_eq!(tv_distance(&p, &q).unwrap(), 1.0);
        let a = Pmf::new(vec![0.5, 0.5]).unwrap();
        let b = Pmf::new(vec![0.75, 0.25]).unwrap();
        assert_abs_diff_eq!(l1_distance(&a, &b).unwrap(), 0.5);
        assert_abs_diff_eq!(linf_distance(&a, &b).unwrap(), 0.25);
        assert!(l1_distance(&a, &Pmf::uniform(3)).is_err());
    }

    #[test]
    fn kantorovich_examples() {
        assert_eq!(kantorovich_1d(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(kantorovich_1d(&[0.0, 0.0], &[1.0, 3.0]).unwrap(), 2.0);
        let a = [0.3, -1.2, 4.0, 2.2];
        let b: Vec<f64> = a.iter().map(|v| v + 1.5).collect();
        assert_abs_diff_eq!(kantorovich_1d(&a, &b).unwrap(), 1.5, epsilon = 1e-12);
        assert!(kantorovich_1d(&[1.0], &[1.0, 2.0]).is_err());
        // grid form agrees with the sample form for equal-weight atoms
        let grid = [0.0, 1.0, 2.0, 3.0];
        let p = Pmf::new(vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        let q = Pmf::new(vec![0.0, 0.0, 0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(kantorovich_grid(&p, &q, &grid).unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn hausdorff_bound_examples() {
        let mut g = rng::stream(1, 0);
        let center = Pmf::new(vec![0.3, 0.3, 0.4]).unwrap();
        let a = BoxAmbiguity::new(center.clone(), vec![0.05; 3], None).unwrap();
        assert_eq!(hausdorff_lower_bound(&a, &a, 50, &mut g).unwrap(), 0.0);
        let shifted = Pmf::new(vec![0.35, 0.25, 0.4]).unwrap();
        let b = BoxAmbiguity::new(shifted.clone(), vec![0.05; 3], None).unwrap();
        let h = hausdorff_lower_bound(&a, &b, 200, &mut g).unwrap();
        let bound = linf_distance(&center, &shifted).unwrap();
        assert!(h <= bound + 1e-10, "{h} > {bound}");
        assert!(h > 0.0);
    }

    #[test]
    fn sampler_concentrates_and_normalizes() {
        let post = DirichletPosterior::new(vec![1_000_000.0, 2.0]).unwrap();
        let mut g = rng::stream(3, 0);
        let mut acc = 0.0;
        for _ in 0..1000 {
            let p = post.sample_pmf(&mut g);
            assert!((p.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            acc += p.probs()[0];
        }
        assert!(acc / 1000.0 > 0.99);
    }

    #[test]
    fn pmf_index_sampling_skips_zero_mass() {
        let p = Pmf::new(vec![0.0, 0.5, 0.0, 0.5]).unwrap();
        assert_eq!(p.index_for_uniform(0.0), 1);
        assert_eq!(p.index_for_uniform(0.49), 1);
        assert_eq!(p.index_for_uniform(0.5), 3);
        assert_eq!(p.index_for_uniform(1.0), 3);
    }

    #[test]
    fn support_constants() {
        let s = Support::scalar(&[0.5, 1.5, 4.0]).unwrap();
        assert_eq!(s.diameter(), 3.5);
        assert_eq!(s.min_separation(), 1.0);
        assert!(Support::scalar(&[1.0, 1.0]).is_err());
        assert!(Support::scalar(&[1.0]).is_err());
    }
}
