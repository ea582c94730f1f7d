use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use serial_consensus::cli::scenario::{ControllerKind, Disturbance};
use serial_consensus::dynamics::{initial_stage_state, CascadeSpec};
use serial_consensus::graph::{laplacian_pseudoinverse, path_graph, spanning_tree_check, WeightedDigraph};
use serial_consensus::metrics::{
    check_iss_bound, disagreement_seminorm, fit_exponential_envelope, laplacian_seminorm,
};
use serial_consensus::operators::{check_relative_invariance, ConsensusOperator};
use serial_consensus::sim::integrator::{IntegratorConfig, Trajectory};
use serial_consensus::sim::{simulate_cascade, simulate_plant};

type Seminorm<'a> = dyn Fn(&DVector<f64>) -> f64 + 'a;

fn weighted_digraph(max_n: usize) -> impl Strategy<Value = WeightedDigraph> {
    (1..=max_n).prop_flat_map(|n| {
        proptest::collection::vec(prop_oneof![Just(0.0), 0.1f64..3.0], n * n).prop_map(move |w| {
            let m = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { w[i * n + j] });
            WeightedDigraph::new(m).unwrap()
        })
    })
}

fn vector(n: usize, bound: f64) -> impl Strategy<Value = DVector<f64>> {
    proptest::collection::vec(-bound..bound, n).prop_map(DVector::from_vec)
}

fn rooted_graph(n: usize) -> impl Strategy<Value = WeightedDigraph> {
    // a random spanning tree rooted at 0 plus random extra edges
    (
        proptest::collection::vec(0usize..1000, n),
        proptest::collection::vec(prop_oneof![Just(0.0), Just(0.0), 0.2f64..2.0], n * n),
    )
        .prop_map(move |(parents, extra)| {
            let mut m = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { extra[i * n + j] });
            for i in 1..n {
                let p = parents[i] % i;
                m[(i, p)] = m[(i, p)].max(0.5);
            }
            WeightedDigraph::new(m).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn spanning_tree_matches_rank(g in weighted_digraph(6)) {
        let n = g.n();
        let rank = g.laplacian().singular_values().iter().filter(|s| **s > 1e-9).count();
        prop_assert_eq!(spanning_tree_check(&g).has_spanning_tree, rank + 1 == n);
    }

    #[test]
    fn pseudoinverse_identities(g in (2usize..6).prop_flat_map(rooted_graph)) {
        let lap = g.laplacian();
        let pinv = laplacian_pseudoinverse(&lap).unwrap();
        prop_assert!((&lap * &pinv * &lap - &lap).amax() < 1e-9);
        prop_assert!((&pinv * &lap * &pinv - &pinv).amax() < 1e-9);
        let lp = &lap * &pinv;
        let pl = &pinv * &lap;
        prop_assert!((&lp - lp.transpose()).amax() < 1e-9);
        prop_assert!((&pl - pl.transpose()).amax() < 1e-9);
    }

    #[test]
    fn seminorms_are_seminorms(
        (x, y) in (1usize..8).prop_flat_map(|n| (vector(n, 10.0), vector(n, 10.0))),
        c in -5.0f64..5.0,
        s in -5.0f64..5.0,
    ) {
        let n = x.len();
        let lap = path_graph(n).unwrap().laplacian();
        let fs: [&Seminorm<'_>; 2] = [
            &disagreement_seminorm,
            &|z: &DVector<f64>| laplacian_seminorm(&lap, z),
        ];
        for f in fs {
            prop_assert!(f(&x) >= 0.0);
            prop_assert!(f(&(&x + &y)) <= f(&x) + f(&y) + 1e-12);
            prop_assert!((f(&(&x * c)) - c.abs() * f(&x)).abs() < 1e-12 * (1.0 + f(&x)));
            prop_assert_eq!(f(&DVector::from_element(n, s)), 0.0);
        }
        let spread = x.max() - x.min();
        prop_assert_eq!(disagreement_seminorm(&x) == 0.0, spread < 1e-12);
    }

    #[test]
    fn inner_operators_are_relative(g in (2usize..7).prop_flat_map(rooted_graph), seed in 0u64..1000) {
        let lap = g.laplacian();
        let n = g.n();
        let omega: Vec<f64> = (0..n).map(|i| 0.5 + 0.1 * i as f64).collect();
        let phi: Vec<f64> = (0..n).map(|i| 0.7 * i as f64 % 6.0).collect();
        for op in [
            ConsensusOperator::linear(lap.clone()).unwrap(),
            ConsensusOperator::saturated(lap.clone()).unwrap(),
            ConsensusOperator::time_varying(lap.clone(), omega.clone(), phi.clone()).unwrap(),
        ] {
            prop_assert!(check_relative_invariance(&op, 50, seed) < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Shifting every agent by the same amount shifts the closed loop.
    #[test]
    fn closed_loop_translation(
        g in (2usize..6).prop_flat_map(rooted_graph),
        shift in -20.0f64..20.0,
        saturated in any::<bool>(),
    ) {
        let n = g.n();
        let lap = g.laplacian();
        let op = if saturated {
            ConsensusOperator::saturated(lap).unwrap()
        } else {
            ConsensusOperator::linear(lap).unwrap()
        };
        let spec = CascadeSpec::new(vec![op.clone(), op]).unwrap();
        let x0 = DVector::from_fn(n, |i, _| (i as f64 * 1.3).sin() * 3.0);
        let v0 = DVector::from_fn(n, |i, _| (i as f64 * 0.7).cos());
        let cfg = IntegratorConfig::new(1e-2, 10.0, 5);
        let none = Disturbance::None(n);
        let a = simulate_cascade(&spec, &initial_stage_state(&spec, &x0, Some(&v0), 0.0).unwrap(), &none, &cfg).unwrap();
        let moved = x0.add_scalar(shift);
        let b = simulate_cascade(&spec, &initial_stage_state(&spec, &moved, Some(&v0), 0.0).unwrap(), &none, &cfg).unwrap();
        for (sa, sb) in a.states.iter().zip(&b.states) {
            let dx = (sb.rows(0, n) - sa.rows(0, n)).add_scalar(-shift).amax();
            prop_assert!(dx < 1e-9, "{}", dx);
        }
    }
}

fn max_gap(a: &Trajectory, b: &Trajectory, n: usize) -> f64 {
    a.states
        .iter()
        .zip(&b.states)
        .map(|(x, y)| (x.rows(0, n) - y.rows(0, n)).amax())
        .fold(0.0, f64::max)
}

/// Stage form and explicit controller describe the same closed loop, also
/// for time-varying and saturated stages. The controller route sees a
/// discontinuous acceleration when a gate or saturation switches, so it only
/// converges at first order in dt; check the gap shrinks accordingly.
#[test]
fn cascade_and_controller_agree_beyond_lti() {
    let n = 5;
    let lap = path_graph(n).unwrap().laplacian();
    let omega = vec![0.6, 0.9, 1.2, 0.8, 1.4];
    let phi = vec![0.0, 1.0, 2.0, 3.0, 4.0];
    let x0 = DVector::from_vec(vec![0.5, -0.4, 0.9, -1.0, 0.2]);
    let v0 = DVector::from_vec(vec![0.1, 0.3, -0.2, 0.0, 0.4]);
    let none = Disturbance::None(n);
    let ops = [
        ConsensusOperator::time_varying(lap.clone(), omega, phi).unwrap(),
        ConsensusOperator::saturated(lap.clone() * 4.0).unwrap(),
    ];
    for op in ops {
        let spec = CascadeSpec::new(vec![op.clone(), op.clone()]).unwrap();
        let xi0 = initial_stage_state(&spec, &x0, Some(&v0), 0.0).unwrap();
        let gap = |dt: f64| {
            let cfg = IntegratorConfig::new(dt, 5.0, 1);
            let a = simulate_cascade(&spec, &xi0, &none, &cfg).unwrap();
            let b = simulate_plant(ControllerKind::Compositional, &op, &op, &x0, &v0, &none, &cfg).unwrap();
            max_gap(&a, &b, n)
        };
        let (coarse, fine) = (gap(1e-3), gap(1e-4));
        assert!(fine < 1e-4, "{}: {fine}", op.kind_name());
        assert!(fine < coarse / 3.0 || fine < 1e-9, "{}: {coarse} -> {fine}", op.kind_name());
    }
}

/// Fitted exponential envelope on path(5), verified on a forced run.
#[test]
fn iss_bound_path_five_constant_input() {
    let n = 5;
    let lap = path_graph(n).unwrap().laplacian();
    let alpha = 0.5;
    let m = fit_exponential_envelope(&lap, alpha, 40.0, 1e-2);
    assert!(m.is_finite() && m >= 1.0);
    let spec = CascadeSpec::new(vec![ConsensusOperator::linear(lap.clone()).unwrap()]).unwrap();
    let w = DVector::from_vec(vec![0.1, -0.1, 0.05, 0.1, -0.07]);
    let z0 = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0, -1.0]);
    let cfg = IntegratorConfig::new(1e-3, 30.0, 10);
    let mut traj = simulate_cascade(&spec, &z0, &Disturbance::Constant(w.clone(), None), &cfg).unwrap();
    traj.plant_x = traj.states.clone();
    for t0 in [0.0, 1.0, 5.0, 20.0] {
        let chk = check_iss_bound(&traj, &lap, m, alpha, w.amax(), t0).unwrap();
        assert!(chk.pass && chk.margin >= 0.0, "t0 = {t0}: {chk:?}");
    }
}
