use approx::assert_abs_diff_eq;
use droc::dist::{BoxAmbiguity, Pmf};
use droc::model::{build_inventory, discretize_exponential, true_value_discrete, InventoryParams, ScenarioModel};
use droc::risk::RiskSpec;
use droc::value::{
    bellman_apply, metrics, policy_eval_fixed_point, rollout, stationary_weights, truncation_horizon, uniform_grid,
    value_iteration_oracle, BaseStockPolicy, ConstantValue, Cut, CutPool, GreedyPolicy, GridPolicy, GridValue,
    RolloutConfig, SemidevDirection, ValueFunction,
};
use proptest::prelude::*;

mod common;
use common::{box_spec, point_spec, scan_bellman, worst_case};

fn desk() -> InventoryParams {
    InventoryParams {
        bins: 20,
        ..Default::default()
    }
}

/// Iterates V ← c_π + γ P_π V with linear interpolation until the change is tiny.
fn iterate_policy(m: &ScenarioModel, p: &Pmf, actions: &[f64], grid: &[f64]) -> Vec<f64> {
    let mut v = vec![0.0; grid.len()];
    loop {
        let cur = GridValue::new(grid.to_vec(), v.clone()).unwrap();
        let next: Vec<f64> = grid
            .iter()
            .zip(actions)
            .map(|(&s, &a)| {
                (0..m.num_scenarios())
                    .map(|j| {
                        let mut t = [m.next_state_1d(j, s, a)];
                        m.clip_state(&mut t);
                        p.probs()[j] * (m.cost_1d(j, s, a) + m.gamma() * cur.eval_1d(t[0]))
                    })
                    .sum()
            })
            .collect();
        let change = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if change < 1e-10 {
            return v;
        }
    }
}

#[test]
fn envelope_of_two_crossing_cuts() {
    let mut pool = CutPool::new(-100.0);
    assert_eq!(pool.envelope_eval(&[3.0]), (-100.0, None));
    pool.push(Cut::new(vec![0.0], 0.0, vec![1.0]).unwrap());
    pool.push(Cut::new(vec![0.0], 2.0, vec![-1.0]).unwrap());
    assert_eq!(pool.envelope_eval(&[0.0]), (2.0, Some(1)));
    assert_eq!(pool.envelope_eval(&[2.0]), (2.0, Some(0)));
    assert_eq!(pool.envelope_eval(&[1.0]).0, 1.0);
    let env = pool.compile_1d();
    for s in [-3.0, 0.0, 0.5, 1.0, 2.0, 7.0] {
        assert_eq!(env.eval_1d(s), pool.eval(&[s]));
    }
}

#[test]
fn myopic_bellman_matches_direct_minimization() {
    // γ close to zero leaves only the stage cost
    let p = InventoryParams {
        gamma: 1e-12,
        bins: 5,
        ..Default::default()
    };
    let m = build_inventory(&p).unwrap();
    let pmf = discretize_exponential(10.0, 50.0, 5).unwrap();
    let spec = point_spec(&pmf);
    for s in [-20.0, 0.0, 8.0, 30.0] {
        let (v, _) = bellman_apply(&m, &spec, &ConstantValue(0.0), &[s]).unwrap();
        let direct = scan_bellman(&m, pmf.probs(), pmf.probs(), &|_| 0.0, s, 20_000);
        assert!(v <= direct + 1e-9 && v >= direct - 0.05, "s {s}: {v} vs {direct}");
    }
    let grid = uniform_grid(-50.0, 60.0, 23);
    let out = value_iteration_oracle(&m, &spec, &grid, 1e-6, 10, None).unwrap();
    assert!(out.iterations <= 2);
}

#[test]
fn bellman_apply_matches_scan_under_a_box() {
    let p = InventoryParams {
        bins: 8,
        ..Default::default()
    };
    let m = build_inventory(&p).unwrap();
    let pmf = discretize_exponential(10.0, 50.0, 8).unwrap();
    let bx = BoxAmbiguity::new(pmf.clone(), vec![0.04; 8], None).unwrap();
    let spec = RiskSpec::from_box(&bx).unwrap();
    let grid = uniform_grid(-50.0, 60.0, 45);
    let v = GridValue::new(
        grid.clone(),
        grid.iter().map(|s| 0.02 * (s - 10.0) * (s - 10.0)).collect(),
    )
    .unwrap();
    for s in [-40.0, -5.0, 0.0, 12.5, 44.0] {
        let (val, a) = bellman_apply(&m, &spec, &v, &[s]).unwrap();
        let scan = scan_bellman(&m, bx.lower(), bx.upper(), &|x| v.eval_1d(x), s, 20_000);
        assert!(val <= scan + 1e-7 && val >= scan - 0.1, "s {s}: {val} vs {scan}");
        let h: Vec<f64> = (0..8)
            .map(|j| m.cost_1d(j, s, a[0]) + m.gamma() * v.eval_1d(m.next_state_1d(j, s, a[0])))
            .collect();
        assert_abs_diff_eq!(worst_case(bx.lower(), bx.upper(), &h), val, epsilon = 1e-9);
    }
}

#[test]
fn constant_continuation_shifts_by_gamma() {
    let m = build_inventory(&desk()).unwrap();
    let pmf = discretize_exponential(10.0, 50.0, 20).unwrap();
    let spec = box_spec(&pmf, 0.02);
    for s in [-10.0, 0.0, 25.0] {
        let (a, _) = bellman_apply(&m, &spec, &ConstantValue(0.0), &[s]).unwrap();
        let (b, _) = bellman_apply(&m, &spec, &ConstantValue(-40.0), &[s]).unwrap();
        assert_abs_diff_eq!(b - a, -40.0 * 0.95, epsilon = 1e-7);
    }
}

#[test]
fn oracle_contracts_and_stays_bounded() {
    let p = desk();
    let m = build_inventory(&p).unwrap();
    let pmf = discretize_exponential(10.0, 50.0, 20).unwrap();
    let spec = box_spec(&pmf, 0.03);
    let grid = uniform_grid(-50.0, 60.0, 201);
    let out = value_iteration_oracle(&m, &spec, &grid, 1e-3, 5000, None).unwrap();
    let ratios: Vec<f64> = out.changes.windows(2).skip(5).map(|w| w[1] / w[0]).collect();
    assert!(ratios.iter().all(|r| *r <= 0.95 + 1e-6), "{ratios:?}");
    let bound = m.cost_bound() / (1.0 - m.gamma());
    assert!(out.value.values().iter().all(|v| v.abs() <= bound));
    // discrete slopes stay under max(b, h)/(1 − γ)
    let v = out.value.values();
    for i in 1..grid.len() {
        assert!(((v[i] - v[i - 1]) / (grid[i] - grid[i - 1])).abs() <= 200.0 * 1.01);
    }
    // order-up-to shape: actions nonincreasing and zero high up
    assert!(out.actions.windows(2).all(|w| w[1] <= w[0] + 1e-6));
    assert!(*out.actions.last().unwrap() <= 1e-6);
}

#[test]
fn oracle_matches_discrete_closed_form() {
    let p = desk();
    let m = build_inventory(&p).unwrap();
    let pmf = discretize_exponential(10.0, 50.0, 20).unwrap();
    let spec = point_spec(&pmf);
    let tol = 1e-3;
    let coarse = value_iteration_oracle(&m, &spec, &uniform_grid(-50.0, 60.0, 221), tol, 5000, None).unwrap();
    let fine = value_iteration_oracle(&m, &spec, &uniform_grid(-50.0, 60.0, 441), tol, 5000, None).unwrap();
    for s in [-5.0, 0.0, 5.0, 10.0] {
        let exact = true_value_discrete(&p, &p.grid(), &pmf, s).unwrap();
        let (a, b) = (coarse.value.eval_1d(s), fine.value.eval_1d(s));
        let allowance = (a - b).abs().max(1e-2);
        assert!((a - exact).abs() <= allowance + tol, "s {s}: {a} vs {exact}");
    }
    let slope = (coarse.value.eval_1d(10.0) - coarse.value.eval_1d(-5.0)) / 15.0;
    assert_abs_diff_eq!(slope, -1.0, epsilon = 1e-3);
}

#[test]
fn policy_evaluation_matches_iteration_and_is_suboptimal() {
    let p = desk();
    let m = build_inventory(&p).unwrap();
    let pmf = discretize_exponential(10.0, 50.0, 20).unwrap();
    let grid = uniform_grid(-50.0, 60.0, 111);
    let robust = value_iteration_oracle(&m, &box_spec(&pmf, 0.03), &grid, 1e-3, 5000, None).unwrap();
    let truth = value_iteration_oracle(&m, &point_spec(&pmf), &grid, 1e-3, 5000, None).unwrap();
    let spec = box_spec(&pmf, 0.03);
    let policy = GreedyPolicy::new(&m, &spec, &robust.value);
    let vp = policy_eval_fixed_point(&m, &pmf, &policy, &grid).unwrap();
    let actions: Vec<f64> = grid.iter().map(|&s| droc::value::Policy::act_1d(&policy, s)).collect();
    let it = iterate_policy(&m, &pmf, &actions, &grid);
    for i in 0..grid.len() {
        assert_abs_diff_eq!(vp.values()[i], it[i], epsilon = 1e-6);
        assert!(vp.values()[i] >= truth.value.values()[i] - 1e-3);
    }
}

#[test]
fn truncation_horizon_example() {
    assert_eq!(truncation_horizon(1.0, 0.95, 100.0), 149);
    let t = truncation_horizon(0.5, 0.9, 40.0);
    assert!(0.9f64.powi(t as i32) * 40.0 <= 0.5 * 0.1);
    assert!(0.9f64.powi(t as i32 - 1) * 40.0 > 0.5 * 0.1);
}

#[test]
fn deterministic_rollouts_have_no_spread() {
    let p = InventoryParams {
        truncation: 40.0,
        bins: 4,
        ..Default::default()
    };
    let m = build_inventory(&p).unwrap();
    let pmf = Pmf::new(vec![0.0, 1.0, 0.0, 0.0]).unwrap();
    let pol = BaseStockPolicy {
        level: 15.0,
        action_max: p.action_max,
    };
    let cfg = RolloutConfig {
        horizon: 60,
        paths: 8,
        seed: 4,
        trace_paths: 1,
        threads: 2,
    };
    let out = rollout(&m, &pmf, &pol, &[0.0], &cfg).unwrap();
    assert!(out.costs.iter().all(|c| *c == out.costs[0]));
    // ordering 15 every period costs 15 per period
    let expected: f64 = (0..60).map(|t| 15.0 * 0.95f64.powi(t)).sum();
    assert_abs_diff_eq!(out.costs[0], expected, epsilon = 1e-9);
    assert_eq!(out.traces.len(), 60);
    assert!(out.traces.iter().all(|r| r.xi == 15.0));
}

#[test]
fn rollout_mean_agrees_with_policy_evaluation() {
    let p = desk();
    let m = build_inventory(&p).unwrap();
    let pmf = discretize_exponential(10.0, 50.0, 20).unwrap();
    // levels on the support keep every visited state on the grid
    let pol = BaseStockPolicy {
        level: 17.5,
        action_max: p.action_max,
    };
    let grid = uniform_grid(-50.0, 60.0, 111);
    let exact = policy_eval_fixed_point(&m, &pmf, &pol, &grid).unwrap().eval_1d(0.0);
    let cfg = RolloutConfig {
        horizon: 300,
        paths: 4000,
        seed: 8,
        trace_paths: 0,
        threads: 4,
    };
    let costs = rollout(&m, &pmf, &pol, &[0.0], &cfg).unwrap().costs;
    let n = costs.len() as f64;
    let mean = costs.iter().sum::<f64>() / n;
    let sd = (costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((mean - exact).abs() <= 4.0 * sd / n.sqrt() + 1e-3, "{mean} vs {exact}");
}

#[test]
fn metrics_by_hand() {
    let flat = metrics(&[3.0; 10], SemidevDirection::Upside).unwrap();
    assert_eq!((flat.mean, flat.cvar95, flat.semidev), (3.0, 3.0, 0.0));
    let ramp: Vec<f64> = (0..100).map(f64::from).collect();
    assert_abs_diff_eq!(
        metrics(&ramp, SemidevDirection::Upside).unwrap().cvar95,
        97.0,
        epsilon = 1e-9
    );
    assert_abs_diff_eq!(metrics(&[0.0, 10.0], SemidevDirection::Upside).unwrap().semidev, 2.5);
    assert!(metrics(&[], SemidevDirection::Upside).is_err());
}

#[test]
fn stationary_mass_on_absorbing_state() {
    let p = InventoryParams {
        truncation: 40.0,
        bins: 4,
        ..Default::default()
    };
    let m = build_inventory(&p).unwrap();
    let pmf = Pmf::new(vec![0.0, 0.0, 1.0, 0.0]).unwrap();
    let pol = BaseStockPolicy {
        level: 30.0,
        action_max: p.action_max,
    };
    let grid = uniform_grid(-50.0, 60.0, 23);
    let w = stationary_weights(&m, &pmf, &pol, &grid, 0.0, 5, 100, 1).unwrap();
    // every step lands on 30 − 25 = 5
    let cell = grid.iter().position(|g| *g == 5.0).unwrap();
    assert_eq!(w[cell], 1.0);
    assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
}

#[test]
fn grid_policy_interpolates() {
    let pol = GridPolicy {
        table: GridValue::new(vec![0.0, 10.0], vec![4.0, 0.0]).unwrap(),
    };
    assert_eq!(droc::value::Policy::act_1d(&pol, 2.5), 3.0);
}

fn random_pool() -> impl Strategy<Value = CutPool> {
    proptest::collection::vec((-5.0f64..5.0, -10.0f64..10.0, -3.0f64..3.0), 1..8).prop_map(|cuts| {
        let mut pool = CutPool::new(-50.0);
        for (anchor, v, q) in cuts {
            pool.push(Cut::new(vec![anchor], v, vec![q]).unwrap());
        }
        pool
    })
}

proptest! {
    #[test]
    fn envelope_is_convex_with_valid_subgradients(pool in random_pool(), x in -10.0f64..10.0, y in -10.0f64..10.0) {
        let mid = pool.eval(&[(x + y) / 2.0]);
        prop_assert!(mid <= (pool.eval(&[x]) + pool.eval(&[y])) / 2.0 + 1e-9);
        let (vx, active) = pool.envelope_eval(&[x]);
        let q = active.map_or(0.0, |i| pool.cuts[i].slope[0]);
        prop_assert!(pool.eval(&[y]) >= vx + q * (y - x) - 1e-9);
    }

    #[test]
    fn bellman_apply_is_monotone_in_v(
        coef in 0.0f64..0.05,
        bump in proptest::collection::vec(0.0f64..20.0, 12),
        s in -40.0f64..50.0,
    ) {
        let p = InventoryParams { bins: 6, ..Default::default() };
        let m = build_inventory(&p).unwrap();
        let pmf = discretize_exponential(10.0, 50.0, 6).unwrap();
        let spec = box_spec(&pmf, 0.05);
        let grid = uniform_grid(-50.0, 60.0, 12);
        let base: Vec<f64> = grid.iter().map(|g| coef * g * g).collect();
        let v = GridValue::new(grid.clone(), base.clone()).unwrap();
        let w = GridValue::new(grid, base.iter().zip(&bump).map(|(a, b)| a + b).collect()).unwrap();
        let (lo, _) = bellman_apply(&m, &spec, &v, &[s]).unwrap();
        let (hi, _) = bellman_apply(&m, &spec, &w, &[s]).unwrap();
        prop_assert!(lo <= hi + 1e-7);
    }

    #[test]
    fn empirical_cvar_brackets(samples in proptest::collection::vec(-50.0f64..50.0, 20..200)) {
        let mt = metrics(&samples, SemidevDirection::Upside).unwrap();
        let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(mt.cvar95 >= mt.mean - 1e-9 && mt.cvar95 <= max + 1e-9);
        if samples.len() % 20 == 0 {
            let mut s = samples.clone();
            s.sort_by(|a, b| b.total_cmp(a));
            let k = samples.len() / 20;
            let top = s[..k].iter().sum::<f64>() / k as f64;
            prop_assert!((mt.cvar95 - top).abs() <= 1e-9);
        }
    }
}
