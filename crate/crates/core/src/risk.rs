//! Worst-case expectation over box ambiguity sets and its mean–CVaR form
//! ρ(h) = λ·E_{P^l}[h] + (1−λ)·CVaR^υ_{P^{u−l}}[h].

use serde::{Deserialize, Serialize};

use crate::dist::BoxAmbiguity;
use crate::error::{invalid, violated, Error, Result};

const MASS_TOL: f64 = 1e-12;
const DEGENERATE_TOL: f64 = 1e-14;

/// Which closed form applies to a given box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    /// 0 < 𝐋 < 1 < 𝐔.
    Regular,
    /// 𝐔 − 𝐋 below 1e−14: a singleton, ρ is the expectation under the center.
    Degenerate,
    /// 𝐋 = 0: pure CVaR at level (𝐔−1)/𝐔 under the band measure.
    LambdaZero,
    /// 𝐔 = 1 with 𝐋 < 1: the set is the single point `upper`, υ = 0.
    UpperTight,
    /// 𝐋 = 1 with 𝐔 > 1: the set is the single point `lower`, λ = 1.
    LowerTight,
}

/// Parameters (λ, υ, P^l, P^{u−l}) of the mean–CVaR reformulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskSpec {
    pub lambda: f64,
    pub upsilon: f64,
    /// Lower bounds renormalized by 𝐋 (all zero on the λ = 0 branch).
    pub p_low: Vec<f64>,
    /// Band widths renormalized by 𝐔 − 𝐋 (all zero when degenerate).
    pub p_band: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub center: Vec<f64>,
    pub branch: Branch,
}

impl RiskSpec {
    pub fn from_box(b: &BoxAmbiguity) -> Result<Self> {
        Self::from_bounds(b.lower(), b.upper(), b.center().probs())
    }

    pub fn from_bounds(lower: &[f64], upper: &[f64], center: &[f64]) -> Result<Self> {
        let n = lower.len();
        if n == 0 || upper.len() != n || center.len() != n {
            return invalid("risk spec needs nonempty bounds of equal length");
        }
        if lower
            .iter()
            .zip(upper)
            .any(|(l, u)| l > u || *l < 0.0 || *u > 1.0 + MASS_TOL)
        {
            return violated("box bounds must satisfy 0 <= lower <= upper <= 1");
        }
        let l_sum: f64 = lower.iter().sum();
        let u_sum: f64 = upper.iter().sum();
        if l_sum > 1.0 + MASS_TOL || u_sum < 1.0 - MASS_TOL {
            return violated(format!(
                "box misses the simplex: sum(lower)={l_sum}, sum(upper)={u_sum}"
            ));
        }
        let width = u_sum - l_sum;
        let (branch, lambda, upsilon) = if width < DEGENERATE_TOL {
            (Branch::Degenerate, 1.0, 0.0)
        } else if l_sum >= 1.0 - MASS_TOL {
            (Branch::LowerTight, 1.0, 0.0)
        } else if u_sum <= 1.0 + MASS_TOL {
            (Branch::UpperTight, l_sum, 0.0)
        } else if l_sum <= 0.0 {
            (Branch::LambdaZero, 0.0, (u_sum - 1.0) / u_sum)
        } else {
            (Branch::Regular, l_sum, (u_sum - 1.0) / width)
        };
        let p_low = if l_sum > 0.0 {
            lower.iter().map(|l| l / l_sum).collect()
        } else {
            vec![0.0; n]
        };
        let p_band = if width >= DEGENERATE_TOL {
            lower.iter().zip(upper).map(|(l, u)| (u - l) / width).collect()
        } else {
            vec![0.0; n]
        };
        let center = match branch {
            Branch::Degenerate | Branch::LowerTight => p_low.clone(),
            Branch::UpperTight => upper.iter().map(|u| u / u_sum).collect(),
            _ => center.to_vec(),
        };
        Ok(Self {
            lambda,
            upsilon,
            p_low,
            p_band,
            lower: lower.to_vec(),
            upper: upper.to_vec(),
            center,
            branch,
        })
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn is_degenerate(&self) -> bool {
        self.branch == Branch::Degenerate
    }

    /// The set collapses to one distribution; returns it.
    pub fn point_mass(&self) -> Option<&[f64]> {
        match self.branch {
            Branch::Degenerate | Branch::LowerTight | Branch::UpperTight => Some(&self.center),
            _ => None,
        }
    }

    /// Weight λ·p^l_j = l_j on the expectation part, per scenario.
    pub fn low_weights(&self) -> Vec<f64> {
        match self.point_mass() {
            Some(p) => p.to_vec(),
            None => self.lower.clone(),
        }
    }

    /// Weight ((1−λ)/(1−υ))·p^{u−l}_j = u_j − l_j on the CVaR tail, per scenario.
    pub fn band_weights(&self) -> Vec<f64> {
        match self.point_mass() {
            Some(_) => vec![0.0; self.len()],
            None => self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).collect(),
        }
    }

    /// ρ(h).
    pub fn rho(&self, h: &[f64]) -> Result<f64> {
        self.rho_with_threshold(h).map(|(v, _)| v)
    }

    /// ρ(h) together with the CVaR threshold ζ* (NaN when no CVaR part).
    pub fn rho_with_threshold(&self, h: &[f64]) -> Result<(f64, f64)> {
        if h.len() != self.len() {
            return invalid("cost vector length does not match the support");
        }
        if let Some(p) = self.point_mass() {
            return Ok((dot(p, h), f64::NAN));
        }
        let (cv, zeta) = cvar_with_threshold(&self.p_band, h, self.upsilon)?;
        let mean = if self.lambda > 0.0 { dot(&self.p_low, h) } else { 0.0 };
        Ok((self.lambda * mean + (1.0 - self.lambda) * cv, zeta))
    }

    /// ρ(h) without length checks; `h` must have one entry per scenario.
    pub fn rho_unchecked(&self, h: &[f64]) -> f64 {
        debug_assert_eq!(h.len(), self.len());
        if let Some(p) = self.point_mass() {
            return dot(p, h);
        }
        let (cv, _) = cvar_core(&self.p_band, h, self.upsilon);
        let mean = if self.lambda > 0.0 { dot(&self.p_low, h) } else { 0.0 };
        self.lambda * mean + (1.0 - self.lambda) * cv
    }

    /// θ ∈ [0,1]^J with θ_j = 1 above ζ*, 0 below and ties filled in
    /// ascending index so that Σ p^{u−l}_j θ_j = 1 − υ.
    pub fn theta(&self, h: &[f64], zeta: f64) -> Result<Vec<f64>> {
        if self.point_mass().is_some() {
            return Ok(vec![0.0; self.len()]);
        }
        cvar_theta(&self.p_band, h, self.upsilon, zeta)
    }

    /// A worst-case distribution at h, which is also a subgradient of ρ.
    pub fn subgradient(&self, h: &[f64]) -> Result<Vec<f64>> {
        if let Some(p) = self.point_mass() {
            return Ok(p.to_vec());
        }
        let (_, zeta) = self.rho_with_threshold(h)?;
        let theta = self.theta(h, zeta)?;
        Ok(self
            .lower
            .iter()
            .zip(&self.upper)
            .zip(&theta)
            .map(|((l, u), t)| l + (u - l) * t)
            .collect())
    }

    /// Affine minorant of ρ touching at `anchor`:
    /// h ↦ λE_{p^l}[h] + (1−λ)(ζ* + Σ p^{u−l}_j θ_j (h_j − ζ*)/(1−υ)).
    pub fn minorant(&self, anchor: &[f64], h: &[f64]) -> Result<f64> {
        if let Some(p) = self.point_mass() {
            return Ok(dot(p, h));
        }
        let (_, zeta) = self.rho_with_threshold(anchor)?;
        let theta = self.theta(anchor, zeta)?;
        let tail: f64 = self
            .p_band
            .iter()
            .zip(&theta)
            .zip(h)
            .map(|((p, t), v)| p * t * (v - zeta))
            .sum();
        let mean = if self.lambda > 0.0 { dot(&self.p_low, h) } else { 0.0 };
        Ok(self.lambda * mean + (1.0 - self.lambda) * (zeta + tail / (1.0 - self.upsilon)))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// max_P Σ P_j h_j over {P ∈ simplex : lower ≤ P ≤ upper}: start at the
/// lower bounds and pour the remaining mass into the largest h_j first.
pub fn worst_case_on_bounds(lower: &[f64], upper: &[f64], h: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = lower.len();
    if upper.len() != n || h.len() != n {
        return invalid("bounds and cost vector must share a length");
    }
    let l_sum: f64 = lower.iter().sum();
    let u_sum: f64 = upper.iter().sum();
    if l_sum > 1.0 + MASS_TOL || u_sum < 1.0 - MASS_TOL {
        return violated(format!(
            "box misses the simplex: sum(lower)={l_sum}, sum(upper)={u_sum}"
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| h[b].total_cmp(&h[a]).then(a.cmp(&b)));
    let mut p = lower.to_vec();
    let mut rest = (1.0 - l_sum).max(0.0);
    for j in order {
        if rest <= 0.0 {
            break;
        }
        let add = (upper[j] - lower[j]).min(rest);
        p[j] += add;
        rest -= add;
    }
    Ok((dot(&p, h), p))
}

/// Greedy worst case over a box ambiguity set.
pub fn worst_case_expectation(b: &BoxAmbiguity, h: &[f64]) -> Result<(f64, Vec<f64>)> {
    worst_case_on_bounds(b.lower(), b.upper(), h)
}

/// CVaR^level_p(h) = min_d d + E_p[(h−d)^+]/(1−level).
pub fn cvar(p: &[f64], h: &[f64], level: f64) -> Result<f64> {
    cvar_with_threshold(p, h, level).map(|(v, _)| v)
}

/// CVaR and the smallest minimizing threshold (the lower level-quantile).
pub fn cvar_with_threshold(p: &[f64], h: &[f64], level: f64) -> Result<(f64, f64)> {
    if !(0.0..1.0).contains(&level) {
        return invalid(format!("CVaR level {level} outside [0, 1)"));
    }
    if p.len() != h.len() || p.is_empty() {
        return invalid("probability and cost vectors must be nonempty and equal length");
    }
    if !p.iter().any(|v| *v > 0.0) {
        return invalid("CVaR measure has no mass");
    }
    Ok(cvar_core(p, h, level))
}

fn cvar_core(p: &[f64], h: &[f64], level: f64) -> (f64, f64) {
    let mut order: Vec<usize> = (0..p.len()).filter(|&j| p[j] > 0.0).collect();
    order.sort_by(|&a, &b| h[a].total_cmp(&h[b]).then(a.cmp(&b)));
    let mut acc = 0.0;
    let mut zeta = h[*order.last().expect("nonempty")];
    for &j in &order {
        acc += p[j];
        if acc >= level - MASS_TOL {
            zeta = h[j];
            break;
        }
    }
    let excess: f64 = order.iter().map(|&j| p[j] * (h[j] - zeta).max(0.0)).sum();
    (zeta + excess / (1.0 - level), zeta)
}

/// Subgradient weights of the positive part at an optimal threshold.
pub fn cvar_theta(p: &[f64], h: &[f64], level: f64, zeta: f64) -> Result<Vec<f64>> {
    if p.len() != h.len() {
        return invalid("probability and cost vectors must share a length");
    }
    let target = 1.0 - level;
    let mut theta: Vec<f64> = h.iter().map(|v| if *v > zeta { 1.0 } else { 0.0 }).collect();
    let mut rest = target - p.iter().zip(&theta).map(|(a, t)| a * t).sum::<f64>();
    if rest < -1e-9 {
        return Err(Error::Internal(format!(
            "threshold {zeta} is not optimal: tail mass exceeds {target}"
        )));
    }
    for j in 0..h.len() {
        if rest <= MASS_TOL {
            break;
        }
        if h[j] == zeta && p[j] > 0.0 {
            let t = (rest / p[j]).min(1.0);
            theta[j] = t;
            rest -= t * p[j];
        }
    }
    if rest > 1e-9 {
        return Err(Error::Internal(format!(
            "threshold {zeta} is not optimal: tail mass short by {rest}"
        )));
    }
    Ok(theta)
}
