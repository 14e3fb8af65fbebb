//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use droc::dist::{BoxAmbiguity, Pmf};
use droc::model::ScenarioModel;
use droc::risk::RiskSpec;

pub fn point_spec(p: &Pmf) -> RiskSpec {
    RiskSpec::from_bounds(p.probs(), p.probs(), p.probs()).unwrap()
}

pub fn box_spec(p: &Pmf, r: f64) -> RiskSpec {
    RiskSpec::from_box(&BoxAmbiguity::new(p.clone(), vec![r; p.len()], None).unwrap()).unwrap()
}

/// Worst-case expectation over {l ≤ P ≤ u, ΣP = 1}: start at l and pour the
/// remaining mass into the costliest outcomes first.
pub fn worst_case(l: &[f64], u: &[f64], h: &[f64]) -> f64 {
    let mut order: Vec<usize> = (0..h.len()).collect();
    order.sort_by(|&a, &b| h[b].total_cmp(&h[a]));
    let mut p = l.to_vec();
    let mut left = 1.0 - l.iter().sum::<f64>();
    for j in order {
        let add = (u[j] - l[j]).min(left);
        p[j] += add;
        left -= add;
    }
    p.iter().zip(h).map(|(a, b)| a * b).sum()
}

/// inf_a of the robust Bellman objective by a dense scan over n+1 actions.
pub fn scan_bellman(m: &ScenarioModel, l: &[f64], u: &[f64], v: &dyn Fn(f64) -> f64, s: f64, n: usize) -> f64 {
    let (lo, hi) = m.admissible_interval(s).unwrap();
    (0..=n)
        .map(|i| {
            let a = lo + (hi - lo) * i as f64 / n as f64;
            let h: Vec<f64> = (0..m.num_scenarios())
                .map(|j| m.cost_1d(j, s, a) + m.gamma() * v(m.next_state_1d(j, s, a)))
                .collect();
            worst_case(l, u, &h)
        })
        .fold(f64::INFINITY, f64::min)
}

/// max Σ P_j h_j over the vertices of {l ≤ P ≤ u, ΣP = 1}: every vertex has
/// at most one coordinate strictly inside its bounds.
pub fn vertex_max(l: &[f64], u: &[f64], h: &[f64]) -> f64 {
    let n = l.len();
    let mut best = f64::NEG_INFINITY;
    for free in 0..n {
        for mask in 0u32..(1 << (n - 1)) {
            let mut p = vec![0.0; n];
            let mut bit = 0;
            for j in 0..n {
                if j == free {
                    continue;
                }
                p[j] = if mask >> bit & 1 == 1 { u[j] } else { l[j] };
                bit += 1;
            }
            let rest = 1.0 - p.iter().sum::<f64>();
            if rest >= l[free] - 1e-12 && rest <= u[free] + 1e-12 {
                p[free] = rest;
                best = best.max(p.iter().zip(h).map(|(a, b)| a * b).sum());
            }
        }
    }
    best
}
