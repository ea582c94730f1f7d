//! Scenario simulation: the stage-form (cascade) route, the plant-plus-controller
//! route for second-order baselines, and the two-agent delayed counterexample.

pub mod delay;
pub mod integrator;

use nalgebra::DVector;
use thiserror::Error;

use crate::cli::scenario::{ConfigError, ControllerKind, Disturbance, Scenario, Setup};
use crate::dynamics::{
    cascade_field, compositional_controller_2, conventional_controller_2, initial_stage_state,
    naive_serial_controller_2, reconstruct_plant, CascadeSpec, DynamicsError,
};
use crate::graph::path_graph;
use crate::operators::{ConsensusOperator, EdgeDelays, HistoryView, OperatorError};

use delay::DelayProcess;
use integrator::{integrate, History, IntegratorConfig, Trajectory, TrajectoryMeta};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("integration diverged at t = {time}")]
    Divergence {
        time: f64,
        partial: Box<Trajectory>,
    },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

impl From<OperatorError> for SimError {
    fn from(e: OperatorError) -> Self {
        SimError::Dynamics(DynamicsError::Operator(e))
    }
}

impl From<ConfigError> for SimError {
    fn from(e: ConfigError) -> Self {
        SimError::Config(e.to_string())
    }
}

/// 64-bit FNV-1a, used to tag trajectories with the scenario they came from.
pub fn fnv1a(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Runs the stage-form cascade from the stage state `xi0`.
pub fn simulate_cascade(
    spec: &CascadeSpec,
    xi0: &DVector<f64>,
    disturbance: &Disturbance,
    cfg: &IntegratorConfig,
) -> Result<Trajectory, SimError> {
    let n = spec.agents();
    let outer = (spec.order() - 1) * n;
    let field = |t: f64, xi: &DVector<f64>, hist: &History| {
        let view = hist.view(outer, t, xi);
        cascade_field(spec, &disturbance.at(t), xi, t, &view).map_err(SimError::from)
    };
    integrate(field, xi0, cfg, spec.tau_max())
}

/// Fills in plant position/velocity for a cascade trajectory.
fn attach_cascade_plant(spec: &CascadeSpec, traj: &mut Trajectory, offsets: &DVector<f64>) -> Result<(), SimError> {
    traj.plant_x.clear();
    traj.plant_xdot.clear();
    for (t, xi) in traj.times.iter().zip(&traj.states) {
        let (x, xdot) = reconstruct_plant(spec, xi, *t)?;
        traj.plant_x.push(x + offsets);
        if let Some(v) = xdot {
            traj.plant_xdot.push(v);
        }
    }
    traj.order = spec.order();
    traj.offsets = Some(offsets.clone());
    Ok(())
}

fn attach_plant_states(traj: &mut Trajectory, n: usize, offsets: &DVector<f64>) {
    traj.plant_x = traj
        .states
        .iter()
        .map(|s| s.rows(0, n).into_owned() + offsets)
        .collect();
    traj.plant_xdot = traj.states.iter().map(|s| s.rows(n, n).into_owned()).collect();
    traj.order = 2;
    traj.offsets = Some(offsets.clone());
}

/// Past of `ξ_2 = ẋ + L_1(x, t)` rebuilt from a stored plant history.
struct StageTwoView<'a> {
    hist: &'a History,
    l1: &'a ConsensusOperator,
    n: usize,
    now: f64,
    current: &'a DVector<f64>,
}

impl HistoryView for StageTwoView<'_> {
    fn value(&self, agent: usize, time: f64) -> Result<f64, OperatorError> {
        let pos = self.hist.view(0, self.now, self.current);
        let vel = self.hist.view(self.n, self.now, self.current);
        let x = (0..self.n)
            .map(|i| pos.value(i, time))
            .collect::<Result<Vec<_>, _>>()?;
        let l1 = self
            .l1
            .evaluate(&DVector::from_vec(x), time, &crate::operators::NoHistory)?;
        Ok(vel.value(agent, time)? + l1[agent])
    }
}

/// Plant route `ẍ = u(x, ẋ, t) + d(t)` for the second-order controllers.
///
/// `l1`/`l2` are the stage operators; for the conventional controller they are
/// passed as (velocity, position).
pub fn simulate_plant(
    controller: ControllerKind,
    l1: &ConsensusOperator,
    l2: &ConsensusOperator,
    x0: &DVector<f64>,
    xdot0: &DVector<f64>,
    disturbance: &Disturbance,
    cfg: &IntegratorConfig,
) -> Result<Trajectory, SimError> {
    let n = x0.len();
    if xdot0.len() != n || l1.n() != n || l2.n() != n {
        return Err(SimError::Config("plant dimensions do not match".into()));
    }
    let mut s0 = DVector::zeros(2 * n);
    s0.rows_mut(0, n).copy_from(x0);
    s0.rows_mut(n, n).copy_from(xdot0);
    let tau_max = l1.tau_max().max(l2.tau_max());
    let field = |t: f64, s: &DVector<f64>, hist: &History| -> Result<DVector<f64>, SimError> {
        let x = s.rows(0, n).into_owned();
        let v = s.rows(n, n).into_owned();
        let u = match controller {
            ControllerKind::Compositional => {
                let view = StageTwoView {
                    hist,
                    l1,
                    n,
                    now: t,
                    current: s,
                };
                compositional_controller_2(l1, l2, &x, &v, t, &view)?
            }
            ControllerKind::Conventional => {
                let view = hist.view(n, t, s);
                conventional_controller_2(l1, l2, &x, &v, t, &view)?
            }
            ControllerKind::NaiveSerial => naive_serial_controller_2(l1, l2, &x, &v, t)?,
        };
        let mut out = DVector::zeros(2 * n);
        out.rows_mut(0, n).copy_from(&v);
        out.rows_mut(n, n).copy_from(&(u + disturbance.at(t)));
        Ok(out)
    };
    integrate(field, &s0, cfg, tau_max)
}

fn run_setup(setup: &Setup) -> Result<Trajectory, SimError> {
    let n = setup.graph.n();
    let cfg = &setup.integrator;
    cfg.validate(setup.tau_min_positive())?;
    match setup.controller {
        ControllerKind::Compositional => {
            let spec = CascadeSpec::new(setup.stages.clone())?;
            let xi0 = initial_stage_state(&spec, &setup.x0, Some(&setup.xdot0), 0.0)?;
            let offsets = setup.offsets.clone();
            match simulate_cascade(&spec, &xi0, &setup.disturbance, cfg) {
                Ok(mut traj) => {
                    attach_cascade_plant(&spec, &mut traj, &offsets)?;
                    Ok(traj)
                }
                Err(SimError::Divergence { time, mut partial }) => {
                    attach_cascade_plant(&spec, &mut partial, &offsets)?;
                    Err(SimError::Divergence { time, partial })
                }
                Err(e) => Err(e),
            }
        }
        kind => {
            let (a, b) = match kind {
                ControllerKind::Conventional => (
                    &setup.stages[setup.velocity_stage - 1],
                    &setup.stages[setup.position_stage - 1],
                ),
                _ => (&setup.stages[0], &setup.stages[1]),
            };
            match simulate_plant(kind, a, b, &setup.x0, &setup.xdot0, &setup.disturbance, cfg) {
                Ok(mut traj) => {
                    attach_plant_states(&mut traj, n, &setup.offsets);
                    Ok(traj)
                }
                Err(SimError::Divergence { time, mut partial }) => {
                    attach_plant_states(&mut partial, n, &setup.offsets);
                    Err(SimError::Divergence { time, partial })
                }
                Err(e) => Err(e),
            }
        }
    }
}

/// Validates, realizes and simulates a scenario.
///
/// Compositional controllers run in stage form; the conventional and naive
/// serial baselines run on the double-integrator plant. Plant positions are
/// reported in physical coordinates (formation offsets added back).
pub fn simulate_scenario(sc: &Scenario) -> Result<Trajectory, SimError> {
    let setup = sc.build()?;
    let echo = sc.emit();
    let meta = TrajectoryMeta {
        scenario_hash: fnv1a(&echo),
        seed: sc.seed,
        config_echo: echo,
    };
    match run_setup(&setup) {
        Ok(mut traj) => {
            traj.meta = meta;
            Ok(traj)
        }
        Err(SimError::Divergence { time, mut partial }) => {
            partial.meta = meta;
            Err(SimError::Divergence { time, partial })
        }
        Err(e) => Err(e),
    }
}

/// `a (t - 1 + e^{-t})`, the drift between the two agents of the delayed counterexample.
pub fn counterexample_drift(a: f64, t: f64) -> f64 {
    a * (t - 1.0 + (-t).exp())
}

/// Two agents at consensus, both driven by the same constant input `a`, with
/// the follower reading the leader through a delay `τ(t) = min(t, tau_cap)`:
///
/// ```text
/// ż_0 = a
/// ż_1 = -z_1(t) + z_0(t - τ(t)) + a
/// ```
///
/// Returns the trajectory (states `[z_0, z_1]`) and the largest deviation of
/// `z_0 - z_1` from the closed form over samples with `t ≤ tau_cap`.
pub fn counterexample_two_agent(
    a: f64,
    tau_cap: f64,
    cfg: &IntegratorConfig,
) -> Result<(Trajectory, f64), SimError> {
    if !a.is_finite() {
        return Err(SimError::Config("input must be finite".into()));
    }
    if !(tau_cap.is_finite() && tau_cap > 0.0) {
        return Err(SimError::Config("delay cap must be positive".into()));
    }
    let weights = path_graph(2).expect("two nodes").weights().clone();
    let op = ConsensusOperator::delayed_relative(
        weights,
        EdgeDelays::PerAgent(vec![DelayProcess::Ramp { cap: tau_cap }; 2]),
    )?;
    let spec = CascadeSpec::new(vec![op])?;
    let input = Disturbance::Constant(DVector::from_element(2, a), None);
    let mut traj = simulate_cascade(&spec, &DVector::zeros(2), &input, cfg)?;
    traj.plant_x = traj.states.clone();
    traj.order = 1;
    let err = traj
        .times
        .iter()
        .zip(&traj.states)
        .filter(|(t, _)| **t <= tau_cap + 1e-12)
        .map(|(t, z)| ((z[0] - z[1]) - counterexample_drift(a, *t)).abs())
        .fold(0.0, f64::max);
    Ok((traj, err))
}
