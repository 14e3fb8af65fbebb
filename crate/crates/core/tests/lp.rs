use approx::assert_abs_diff_eq;
use droc::lp::{solve, verify_kkt, LinearProgram, LpStatus, RowKind};
use droc::risk::{cvar_theta, RiskSpec};
use proptest::prelude::*;
use rand::Rng;

/// Solves a dense n×n system by Gaussian elimination with partial pivoting.
fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-10 {
            return None;
        }
        a.swap(p, c);
        b.swap(p, c);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Minimum of cᵀx over all vertices of {Gx ≤ h} (bounds included as rows).
fn vertex_min(c: &[f64], g: &[Vec<f64>], h: &[f64]) -> Option<f64> {
    let n = c.len();
    let m = g.len();
    let mut best: Option<f64> = None;
    let mut idx: Vec<usize> = (0..n).collect();
    loop {
        let a: Vec<Vec<f64>> = idx.iter().map(|&i| g[i].clone()).collect();
        let b: Vec<f64> = idx.iter().map(|&i| h[i]).collect();
        if let Some(x) = solve_square(a, b) {
            let feasible = g
                .iter()
                .zip(h)
                .all(|(row, rhs)| row.iter().zip(&x).map(|(p, q)| p * q).sum::<f64>() <= rhs + 1e-9);
            if feasible {
                let v: f64 = c.iter().zip(&x).map(|(p, q)| p * q).sum();
                best = Some(best.map_or(v, |b: f64| b.min(v)));
            }
        }
        // next n-combination of 0..m
        let mut i = n;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if idx[i] < m - n + i {
                break;
            }
        }
        idx[i] += 1;
        for k in i + 1..n {
            idx[k] = idx[k - 1] + 1;
        }
    }
}

/// Random bounded LP that is feasible by construction.
fn random_lp(seed: u64, n: usize, m: usize) -> (LinearProgram, Vec<f64>, Vec<Vec<f64>>, Vec<f64>) {
    let mut g = droc::rng::stream(seed, 0);
    let mut lp = LinearProgram::new(n);
    let x0: Vec<f64> = (0..n).map(|_| g.random_range(-2.0..2.0)).collect();
    let c: Vec<f64> = (0..n).map(|_| g.random_range(-3.0..3.0)).collect();
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for (j, cj) in c.iter().enumerate() {
        lp.set_bounds(j, -5.0, 5.0);
        lp.set_cost(j, *cj);
        let mut up = vec![0.0; n];
        up[j] = 1.0;
        rows.push(up.clone());
        rhs.push(5.0);
        rows.push(up.iter().map(|v| -v).collect());
        rhs.push(5.0);
    }
    for _ in 0..m {
        let a: Vec<f64> = (0..n).map(|_| g.random_range(-2.0..2.0)).collect();
        let act: f64 = a.iter().zip(&x0).map(|(p, q)| p * q).sum();
        let slack = g.random_range(0.0..1.5);
        if g.random_bool(0.5) {
            lp.add_row(a.iter().copied().enumerate().collect(), RowKind::Le, act + slack);
            rows.push(a);
            rhs.push(act + slack);
        } else {
            lp.add_row(a.iter().copied().enumerate().collect(), RowKind::Ge, act - slack);
            rows.push(a.iter().map(|v| -v).collect());
            rhs.push(-(act - slack));
        }
    }
    (lp, c, rows, rhs)
}

#[test]
fn one_variable_lp() {
    let mut lp = LinearProgram::new(1);
    lp.set_bounds(0, f64::NEG_INFINITY, f64::INFINITY);
    lp.set_cost(0, 1.0);
    lp.add_row(vec![(0, 1.0)], RowKind::Ge, 3.0);
    let sol = solve(&lp).unwrap();
    assert_eq!(sol.status, LpStatus::Optimal);
    assert_abs_diff_eq!(sol.x[0], 3.0, epsilon = 1e-12);
    assert_abs_diff_eq!(sol.duals[0], 1.0, epsilon = 1e-12);
}

#[test]
fn coupling_constraint_dual() {
    let mut lp = LinearProgram::new(2);
    for j in 0..2 {
        lp.set_bounds(j, 0.0, 1.0);
        lp.set_cost(j, -1.0);
    }
    lp.add_row(vec![(0, 1.0), (1, 1.0)], RowKind::Le, 1.0);
    let sol = solve(&lp).unwrap();
    assert_abs_diff_eq!(sol.objective, -1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(sol.duals[0], 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(sol.rhs_sensitivity[0], -1.0, epsilon = 1e-12);
    assert!(verify_kkt(&lp, &sol).max() <= 1e-8);
}

#[test]
fn epigraph_encoding_of_rho() {
    let (l, u, h) = ([0.1, 0.2, 0.3], [0.5, 0.6, 0.7], [1.0, 2.0, 3.0]);
    let spec = RiskSpec::from_bounds(&l, &u, &[0.2, 0.3, 0.5]).unwrap();
    // variables (ζ, y_1..y_3): min Σ l_j h_j + (1−λ)ζ + Σ (u_j−l_j) y_j, y_j ≥ h_j − ζ, y ≥ 0
    let mut lp = LinearProgram::new(4);
    lp.set_bounds(0, f64::NEG_INFINITY, f64::INFINITY);
    lp.set_cost(0, 1.0 - spec.lambda);
    let mut rows = Vec::new();
    for j in 0..3 {
        lp.set_bounds(j + 1, 0.0, f64::INFINITY);
        lp.set_cost(j + 1, u[j] - l[j]);
        rows.push(lp.add_row(vec![(j + 1, 1.0), (0, 1.0)], RowKind::Ge, h[j]));
    }
    let sol = solve(&lp).unwrap();
    let constant: f64 = l.iter().zip(&h).map(|(a, b)| a * b).sum();
    assert_abs_diff_eq!(sol.objective + constant, 2.6, epsilon = 1e-12);
    let zeta = sol.x[0];
    let theta = cvar_theta(&spec.p_band, &h, spec.upsilon, zeta).unwrap();
    for j in 0..3 {
        assert_abs_diff_eq!(sol.duals[rows[j]] / (u[j] - l[j]), theta[j], epsilon = 1e-9);
    }
}

#[test]
fn statuses_are_reported() {
    let mut lp = LinearProgram::new(1);
    lp.set_bounds(0, 0.0, 1.0);
    lp.add_row(vec![(0, 1.0)], RowKind::Ge, 2.0);
    assert_eq!(solve(&lp).unwrap().status, LpStatus::Infeasible);

    let mut lp = LinearProgram::new(2);
    lp.set_bounds(0, f64::NEG_INFINITY, f64::INFINITY);
    lp.set_bounds(1, 0.0, 1.0);
    lp.set_cost(0, -1.0);
    lp.add_row(vec![(0, 1.0), (1, -1.0)], RowKind::Ge, 0.0);
    assert_eq!(solve(&lp).unwrap().status, LpStatus::Unbounded);
}

#[test]
fn kkt_report_flags_perturbations() {
    let mut lp = LinearProgram::new(2);
    for j in 0..2 {
        lp.set_bounds(j, 0.0, 1.0);
        lp.set_cost(j, -1.0);
    }
    lp.add_row(vec![(0, 1.0), (1, 1.0)], RowKind::Le, 1.0);
    let sol = solve(&lp).unwrap();
    let mut off = sol.clone();
    off.x[0] += 1e-3;
    let r = verify_kkt(&lp, &off);
    assert!((r.primal - 1e-3).abs() < 1e-6, "{r:?}");
    let mut zero = sol.clone();
    zero.duals[0] = 0.0;
    assert!(verify_kkt(&lp, &zero).max() > 0.1);
}

#[test]
fn equality_rows() {
    let mut lp = LinearProgram::new(3);
    for j in 0..3 {
        lp.set_bounds(j, 0.0, f64::INFINITY);
        lp.set_cost(j, [1.0, 2.0, 3.0][j]);
    }
    lp.add_row(vec![(0, 1.0), (1, 1.0), (2, 1.0)], RowKind::Eq, 1.0);
    lp.add_row(vec![(0, 1.0)], RowKind::Le, 0.25);
    let sol = solve(&lp).unwrap();
    assert_abs_diff_eq!(sol.objective, 0.25 + 2.0 * 0.75, epsilon = 1e-12);
    assert!(verify_kkt(&lp, &sol).max() <= 1e-8);
}

#[test]
fn strong_duality_fuzz() {
    for seed in 0..500 {
        let (lp, ..) = random_lp(seed, 6, 8);
        let sol = solve(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        let k = verify_kkt(&lp, &sol);
        assert!(k.max() <= 1e-8, "seed {seed}: {k:?}");
    }
}

#[test]
fn solutions_are_deterministic() {
    let (lp, ..) = random_lp(42, 5, 7);
    assert_eq!(solve(&lp).unwrap(), solve(&lp).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matches_vertex_enumeration(seed in any::<u64>(), n in 1usize..5, m in 1usize..7) {
        let (lp, c, rows, rhs) = random_lp(seed, n, m);
        let sol = solve(&lp).unwrap();
        prop_assert_eq!(sol.status, LpStatus::Optimal);
        let brute = vertex_min(&c, &rows, &rhs).unwrap();
        prop_assert!((sol.objective - brute).abs() <= 1e-8 * (1.0 + brute.abs()));
    }

    #[test]
    fn sensitivity_matches_finite_difference(seed in any::<u64>(), r in 0usize..4) {
        let (lp, ..) = random_lp(seed, 3, 4);
        let sol = solve(&lp).unwrap();
        let h = 1e-6;
        let mut up = lp.clone();
        up.rows[r].rhs += h;
        let mut down = lp.clone();
        down.rows[r].rhs -= h;
        let (a, b) = (solve(&up).unwrap(), solve(&down).unwrap());
        let fd = (a.objective - b.objective) / (2.0 * h);
        // at a kink the one-sided slopes differ; the reported value must lie between them
        let right = (a.objective - sol.objective) / h;
        let left = (sol.objective - b.objective) / h;
        let (lo, hi) = if left < right { (left, right) } else { (right, left) };
        let y = sol.rhs_sensitivity[r];
        prop_assert!(y >= lo - 1e-5 && y <= hi + 1e-5, "y {} fd {} [{}, {}]", y, fd, lo, hi);
    }
}
