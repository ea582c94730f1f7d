//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{dvector, DMatrix, DVector};
use rand::Rng;

use serial_consensus::cli::presets::{preset, DEFAULT_SEED};
use serial_consensus::cli::scenario::{parse_scenario, ControllerKind, Disturbance};
use serial_consensus::dynamics::{initial_stage_state, CascadeSpec};
use serial_consensus::graph::{path_graph, spanning_tree_check, WeightedDigraph};
use serial_consensus::metrics::{
    check_iss_bound, disagreement_seminorm, fit_exponential_envelope, laplacian_seminorm,
    nth_order_residuals, regime_entry_time,
};
use serial_consensus::operators::{check_relative_invariance, ConsensusOperator, EdgeDelays};
use serial_consensus::sim::delay::{stream_rng, DelayProcess};
use serial_consensus::sim::integrator::{IntegratorConfig, Trajectory};
use serial_consensus::sim::{counterexample_drift, simulate_cascade, simulate_plant, simulate_scenario, SimError};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn timed(budget: Duration, f: impl FnOnce() -> Outcome) -> (Outcome, Duration, bool) {
    let start = Instant::now();
    let out = f();
    let elapsed = start.elapsed();
    (out, elapsed, elapsed < budget)
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.2e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn sim_ok(r: Result<Trajectory, SimError>) -> Trajectory {
    match r {
        Ok(t) => t,
        Err(e) => panic!("simulation failed: {e}"),
    }
}

fn criterion_1() -> Outcome {
    let sc = preset("counterexample_appD", DEFAULT_SEED).unwrap();
    let traj = sim_ok(simulate_scenario(&sc));
    let mut err: f64 = 0.0;
    let mut at_one = f64::NAN;
    for (t, z) in traj.times.iter().zip(&traj.plant_x) {
        let drift = z[0] - z[1];
        err = err.max((drift - counterexample_drift(1.0, *t)).abs());
        if (t - 1.0).abs() < 1e-9 {
            at_one = drift;
        }
    }
    let e1 = (-1.0f64).exp();
    let pass = err < 1e-4 && (at_one - e1).abs() < 1e-4 && traj.final_time() >= 5.0 - 1e-9;
    outcome(pass, format!("max error {err:.3e}, drift(1) = {at_one:.6} (e^-1 = {e1:.6})"))
}

fn lti_order(order: usize) -> Vec<f64> {
    let mut text = format!(
        "name = \"lti\"\nseed = 7\n[graph]\nn = 10\nkind = \"path\"\n[cascade]\norder = {order}\ncontroller = \"compositional\"\n"
    );
    for k in 1..=order {
        text.push_str(&format!("[stage.{k}]\nkind = \"linear\"\n"));
    }
    text.push_str("[init]\nx_range = 1.0\nxdot_range = 1.0\n[integrator]\ndt = 0.001\nt_end = 60.0\nrecord_every = 10\n");
    let sc = parse_scenario(&text).unwrap();
    let traj = sim_ok(simulate_scenario(&sc));
    // residuals at the final time
    nth_order_residuals(&traj, 1.0 / traj.len() as f64).unwrap()
}

fn criterion_2() -> Outcome {
    let r2 = lti_order(2);
    let r3 = lti_order(3);
    let pass = r2.len() == 2
        && r2.iter().all(|r| *r < 1e-6)
        && r3.len() == 3
        && r3.iter().all(|r| *r < 1e-5);
    outcome(pass, format!("n=2 residuals {}; n=3 residuals {}", sci(&r2), sci(&r3)))
}

fn criterion_3() -> Outcome {
    let lap = path_graph(5).unwrap().laplacian();
    let op = ConsensusOperator::linear(lap).unwrap();
    let spec = CascadeSpec::new(vec![op.clone(), op.clone()]).unwrap();
    let mut rng = stream_rng(11, 0);
    let x0 = DVector::from_fn(5, |_, _| rng.random_range(-1.0..=1.0));
    let v0 = DVector::from_fn(5, |_, _| rng.random_range(-1.0..=1.0));
    let cfg = IntegratorConfig::new(1e-3, 20.0, 1);
    let none = Disturbance::None(5);
    let xi0 = initial_stage_state(&spec, &x0, Some(&v0), 0.0).unwrap();
    let cascade = sim_ok(simulate_cascade(&spec, &xi0, &none, &cfg));
    let plant = sim_ok(simulate_plant(ControllerKind::Compositional, &op, &op, &x0, &v0, &none, &cfg));
    let err = cascade
        .states
        .iter()
        .zip(&plant.states)
        .map(|(a, b)| (a.rows(0, 5) - b.rows(0, 5)).amax())
        .fold(0.0, f64::max);
    let pass = err < 1e-5 && cascade.len() == plant.len() && cascade.final_time() >= 20.0 - 1e-9;
    outcome(pass, format!("sup |x_cascade - x_controller| = {err:.3e}"))
}

fn first_order(lap: &DMatrix<f64>, z0: DVector<f64>, w: DVector<f64>, t_end: f64) -> Trajectory {
    let spec = CascadeSpec::new(vec![ConsensusOperator::linear(lap.clone()).unwrap()]).unwrap();
    let cfg = IntegratorConfig::new(1e-3, t_end, 10);
    let mut traj = sim_ok(simulate_cascade(&spec, &z0, &Disturbance::Constant(w, None), &cfg));
    traj.plant_x = traj.states.clone();
    traj.order = 1;
    traj
}

fn criterion_4() -> Outcome {
    let lap = path_graph(2).unwrap().laplacian();
    let z0 = dvector![0.3, -0.9];
    let free = first_order(&lap, z0.clone(), DVector::zeros(2), 10.0);
    let lz0 = laplacian_seminorm(&lap, &z0);
    let analytic = free
        .times
        .iter()
        .zip(&free.states)
        .map(|(t, z)| (laplacian_seminorm(&lap, z) - (-t).exp() * lz0).abs())
        .fold(0.0, f64::max);

    let alpha = 1.0;
    let m = fit_exponential_envelope(&lap, alpha, 10.0, 1e-3);
    let w = dvector![0.1, -0.1];
    let forced = first_order(&lap, z0, w.clone(), 10.0);
    let chk = check_iss_bound(&forced, &lap, m, alpha, w.amax(), 0.0).unwrap();
    let pass = analytic < 1e-6 && chk.pass && chk.margin >= 0.0;
    outcome(
        pass,
        format!(
            "analytic error {analytic:.3e}; fitted M = {m:.4}, alpha = {alpha}, ISS margin = {:.3e}",
            chk.margin
        ),
    )
}

fn criterion_5() -> Outcome {
    let text = r#"
name = "saturated_leader_follower"
seed = 5
[graph]
n = 5
kind = "path"
[cascade]
order = 2
controller = "compositional"
[stage.1]
kind = "saturated"
[stage.2]
kind = "saturated"
[init]
x_range = 10.0
xdot_range = 2.0
[disturbance]
kind = "bounded_random"
sup = 0.05
hold = 0.5
until = 50.0
[integrator]
dt = 0.005
t_end = 100.0
record_every = 4
"#;
    let sc = parse_scenario(text).unwrap();
    let lap = sc.build().unwrap().laplacian;
    let traj = sim_ok(simulate_scenario(&sc));
    let initial = laplacian_seminorm(&lap, &traj.plant_x[0]);
    let entry = regime_entry_time(&traj, &lap, 1.0).unwrap();
    let res = nth_order_residuals(&traj, 1.0 / traj.len() as f64).unwrap();
    let pass = entry.is_some() && res[0] < 1e-4 && res[1] < 1e-4;
    outcome(
        pass,
        format!(
            "initial |Lx| = {initial:.2}, regime entry at t = {}, residuals at t = 100 {}",
            entry.map(|t| format!("{t:.2}")).unwrap_or("none".into()),
            sci(&res)
        ),
    )
}

fn peak(traj: &Trajectory) -> f64 {
    let off = traj.offsets.clone().unwrap_or_else(|| DVector::zeros(traj.plant_x[0].len()));
    traj.plant_x
        .iter()
        .map(|x| disagreement_seminorm(&(x - &off)))
        .fold(0.0, f64::max)
}

struct Run {
    peak: f64,
    residual: f64,
}

fn run(name: &str, controller: ControllerKind) -> Run {
    let sc = preset(name, DEFAULT_SEED).unwrap().with_controller(controller);
    let traj = match simulate_scenario(&sc) {
        Ok(t) => t,
        Err(SimError::Divergence { partial, .. }) => *partial,
        Err(e) => panic!("{name}/{controller}: {e}"),
    };
    let res = nth_order_residuals(&traj, sc.metrics.tail_fraction).unwrap();
    Run {
        peak: peak(&traj),
        residual: res.into_iter().fold(0.0, f64::max),
    }
}

fn criterion_6() -> Outcome {
    use ControllerKind::*;
    let tv_comp = run("timevarying_fig1", Compositional);
    let tv_conv = run("timevarying_fig1", Conventional);
    let a = tv_comp.residual < 1e-3 && tv_conv.peak >= 10.0 * tv_comp.peak;

    let sat_comp = run("saturated_fig2", Compositional);
    let sat_naive = run("saturated_fig2", NaiveSerial);
    let sat_conv = run("saturated_fig2", Conventional);
    let b = sat_comp.residual < 1e-3
        && sat_naive.residual < 1e-3
        && sat_conv.peak > sat_comp.peak
        && sat_conv.peak > sat_naive.peak;

    let gps_comp = run("gps_fig3", Compositional);
    let gps_conv = run("gps_fig3", Conventional);
    let c = gps_comp.residual < 1e-3 && gps_conv.peak >= 5.0 * gps_comp.peak;

    outcome(
        a && b && c,
        format!(
            "(a) comp residual {:.2e}, peak ratio {:.2e} [{}]; (b) residuals comp {:.2e} naive {:.2e}, peaks conv {:.1} comp {:.1} naive {:.1} [{}]; (c) comp residual {:.2e}, peak ratio {:.2e} [{}]",
            tv_comp.residual,
            tv_conv.peak / tv_comp.peak,
            if a { "ok" } else { "fail" },
            sat_comp.residual,
            sat_naive.residual,
            sat_conv.peak,
            sat_comp.peak,
            sat_naive.peak,
            if b { "ok" } else { "fail" },
            gps_comp.residual,
            gps_conv.peak / gps_comp.peak,
            if c { "ok" } else { "fail" },
        ),
    )
}

/// Rank-based oracle: a directed spanning tree exists iff the Laplacian has a
/// simple zero eigenvalue, i.e. rank `n - 1`.
fn rank_oracle(g: &WeightedDigraph) -> bool {
    let n = g.n();
    let sv = g.laplacian().singular_values();
    sv.iter().filter(|s| **s > 1e-9).count() == n - 1
}

fn graph_from_mask(n: usize, mask: u64) -> WeightedDigraph {
    let mut edges = Vec::new();
    let mut bit = 0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                if mask >> bit & 1 == 1 {
                    edges.push((i, j, 1.0));
                }
                bit += 1;
            }
        }
    }
    WeightedDigraph::from_edges(n, &edges).unwrap()
}

fn rk4_error(dt: f64) -> f64 {
    let lap = path_graph(4).unwrap().laplacian();
    let op = ConsensusOperator::linear(lap.clone()).unwrap();
    let spec = CascadeSpec::new(vec![op.clone(), op]).unwrap();
    let xi0 = dvector![1.0, -0.5, 0.25, 2.0, 0.3, -1.0, 0.7, 0.0];
    let t_end = 2.0;
    let traj = sim_ok(simulate_cascade(
        &spec,
        &xi0,
        &Disturbance::None(4),
        &IntegratorConfig::new(dt, t_end, 1),
    ));
    let mut a = DMatrix::zeros(8, 8);
    a.view_mut((0, 0), (4, 4)).copy_from(&(-&lap));
    a.view_mut((0, 4), (4, 4)).fill_with_identity();
    a.view_mut((4, 4), (4, 4)).copy_from(&(-&lap));
    let exact = (a * t_end).exp() * xi0;
    (traj.states.last().unwrap() - exact).amax()
}

fn criterion_7() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;

    // relative invariance
    let lap = path_graph(6).unwrap().laplacian();
    let mut rng = stream_rng(3, 0);
    let omega: Vec<f64> = (0..6).map(|_| rng.random_range(0.5..=1.5)).collect();
    let phi: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    let inner = [
        ConsensusOperator::linear(lap.clone()).unwrap(),
        ConsensusOperator::time_varying(lap.clone(), omega, phi).unwrap(),
        ConsensusOperator::saturated(lap.clone()).unwrap(),
    ];
    let worst_inner = inner
        .iter()
        .map(|op| check_relative_invariance(op, 2000, 9))
        .fold(0.0, f64::max);
    let delayed = ConsensusOperator::delayed_relative(
        path_graph(6).unwrap().weights().clone(),
        EdgeDelays::PerAgent(vec![DelayProcess::Constant(0.5); 6]),
    )
    .unwrap();
    let delayed_dev = check_relative_invariance(&delayed, 200, 9);
    pass &= worst_inner < 1e-12 && delayed_dev > 0.0;
    notes.push(format!("invariance inner {worst_inner:.1e} delayed {delayed_dev:.2}"));

    // spanning-tree oracle
    let mut checked = 0;
    let mut mismatches = 0;
    for n in 1..=3usize {
        for mask in 0..1u64 << (n * (n - 1)) {
            let g = graph_from_mask(n, mask);
            checked += 1;
            mismatches += (spanning_tree_check(&g).has_spanning_tree != rank_oracle(&g)) as usize;
        }
    }
    let mut rng = stream_rng(4, 0);
    for _ in 0..1000 {
        let g = graph_from_mask(4, rng.random_range(0..1u64 << 12));
        checked += 1;
        mismatches += (spanning_tree_check(&g).has_spanning_tree != rank_oracle(&g)) as usize;
    }
    pass &= mismatches == 0;
    notes.push(format!("spanning tree {mismatches}/{checked} mismatches"));

    // RK4 order
    let ratio = rk4_error(0.1) / rk4_error(0.05);
    pass &= (12.0..=20.0).contains(&ratio);
    notes.push(format!("RK4 ratio {ratio:.2}"));

    // seminorm axioms
    let mut rng = stream_rng(5, 0);
    let lap5 = path_graph(5).unwrap().laplacian();
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let x = DVector::from_fn(5, |_, _| rng.random_range(-10.0..=10.0));
        let y = DVector::from_fn(5, |_, _| rng.random_range(-10.0..=10.0));
        let c: f64 = rng.random_range(-5.0..=5.0);
        let s: f64 = rng.random_range(-5.0..=5.0);
        for f in [
            &(|z: &DVector<f64>| disagreement_seminorm(z)) as &dyn Fn(&DVector<f64>) -> f64,
            &|z: &DVector<f64>| laplacian_seminorm(&lap5, z),
        ] {
            worst = worst.max(f(&(&x + &y)) - f(&x) - f(&y));
            worst = worst.max((f(&(&x * c)) - c.abs() * f(&x)).abs() / (1.0 + f(&x)));
            worst = worst.max(f(&DVector::from_element(5, s)));
        }
    }
    pass &= worst < 1e-12;
    notes.push(format!("seminorm violation {worst:.1e}"));

    // closed-loop translation invariance
    let mut worst_shift: f64 = 0.0;
    for name in ["serial_lti", "timevarying_fig1", "saturated_fig2"] {
        let mut sc = preset(name, DEFAULT_SEED).unwrap();
        sc.integrator.t_end = 20.0;
        let base = sim_ok(simulate_scenario(&sc));
        let setup = sc.build().unwrap();
        let shift = 3.7;
        sc.init.x = Some((setup.x0.add_scalar(shift) + &setup.offsets).iter().copied().collect());
        sc.init.x_range = None;
        let moved = sim_ok(simulate_scenario(&sc));
        for (a, b) in base.plant_x.iter().zip(&moved.plant_x) {
            worst_shift = worst_shift.max((b - a).add_scalar(-shift).amax());
        }
    }
    pass &= worst_shift < 1e-9;
    notes.push(format!("translation {worst_shift:.1e}"));

    outcome(pass, notes.join("; "))
}

type Criterion = (&'static str, Duration, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("1 delayed counterexample drift", Duration::from_secs(1), criterion_1),
        ("2 LTI serial convergence", Duration::from_secs(5), criterion_2),
        ("3 cascade/controller equivalence", Duration::from_secs(2), criterion_3),
        ("4 LTI ISS bound", Duration::from_secs(1), criterion_4),
        ("5 saturation regime entry", Duration::from_secs(5), criterion_5),
        ("6 platoon comparisons", Duration::from_secs(30), criterion_6),
        ("7 property suites", Duration::from_secs(60), criterion_7),
    ];
    let mut all = true;
    for (name, budget, f) in criteria {
        let (out, elapsed, in_time) = timed(budget, f);
        let ok = out.pass && in_time;
        all &= ok;
        println!(
            "{} criterion {name}: {} ({:.3} s, budget {} s)",
            if ok { "PASS" } else { "FAIL" },
            out.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    if all {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: FAILED");
        ExitCode::FAILURE
    }
}
