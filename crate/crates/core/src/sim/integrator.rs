//! Fixed-step classical Runge–Kutta with a committed-history buffer for
//! delayed reads (method of steps with linear interpolation).

use std::collections::VecDeque;

use nalgebra::DVector;

use crate::operators::{HistoryView, OperatorError};
use crate::sim::SimError;

/// Any state component beyond this magnitude aborts the run.
pub const DIVERGENCE_BOUND: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub t_end: f64,
    pub record_every: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_end: 10.0,
            record_every: 1,
        }
    }
}

impl IntegratorConfig {
    pub fn new(dt: f64, t_end: f64, record_every: usize) -> Self {
        Self {
            dt,
            t_end,
            record_every,
        }
    }

    /// `tau_min` is the smallest strictly positive constant delay, if any.
    pub fn validate(&self, tau_min: Option<f64>) -> Result<(), SimError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(SimError::Config(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.t_end.is_finite() && self.t_end >= self.dt) {
            return Err(SimError::Config(format!(
                "t_end = {} must be at least dt = {}",
                self.t_end, self.dt
            )));
        }
        if self.record_every == 0 {
            return Err(SimError::Config("record_every must be at least 1".into()));
        }
        if let Some(tau) = tau_min {
            if self.dt > tau / 4.0 {
                return Err(SimError::Config(format!(
                    "dt = {} too coarse for delay {tau} (need dt <= tau/4)",
                    self.dt
                )));
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

/// Committed states at step boundaries. Times before the first retained
/// sample read the initial condition (constant pre-history).
#[derive(Debug, Clone)]
pub struct History {
    initial: DVector<f64>,
    samples: VecDeque<(f64, DVector<f64>)>,
    window: f64,
}

impl History {
    pub fn new(x0: DVector<f64>, window: f64) -> Self {
        let mut samples = VecDeque::new();
        samples.push_back((0.0, x0.clone()));
        Self {
            initial: x0,
            samples,
            window,
        }
    }

    pub fn push(&mut self, t: f64, x: DVector<f64>) {
        self.samples.push_back((t, x));
        let keep_from = t - self.window;
        while self.samples.len() > 2 && self.samples[1].0 <= keep_from {
            self.samples.pop_front();
        }
    }

    pub fn latest(&self) -> (f64, &DVector<f64>) {
        let (t, x) = self.samples.back().expect("history is never empty");
        (*t, x)
    }

    /// Linear interpolation of component `idx` over committed samples.
    pub fn value(&self, idx: usize, time: f64) -> f64 {
        let (t0, x0) = self.samples.front().expect("history is never empty");
        if time <= *t0 {
            return if time <= 0.0 { self.initial[idx] } else { x0[idx] };
        }
        let (tl, xl) = self.latest();
        if time >= tl {
            return xl[idx];
        }
        let k = self.samples.partition_point(|(t, _)| *t <= time);
        let (ta, xa) = &self.samples[k - 1];
        let (tb, xb) = &self.samples[k];
        let s = (time - ta) / (tb - ta);
        xa[idx] + s * (xb[idx] - xa[idx])
    }

    /// View of the block `offset..offset + len` while the current (uncommitted)
    /// stage value is `current` at time `now`.
    pub fn view<'a>(&'a self, offset: usize, now: f64, current: &'a DVector<f64>) -> StateView<'a> {
        StateView {
            hist: self,
            offset,
            now,
            current,
        }
    }
}

/// History of one block of the stacked state, extended to the current stage
/// point so reads between the last committed step and `now` interpolate.
pub struct StateView<'a> {
    hist: &'a History,
    offset: usize,
    now: f64,
    current: &'a DVector<f64>,
}

impl HistoryView for StateView<'_> {
    fn value(&self, agent: usize, time: f64) -> Result<f64, OperatorError> {
        let idx = self.offset + agent;
        if idx >= self.current.len() {
            return Err(OperatorError::InsufficientHistory { agent, time });
        }
        let (tl, xl) = self.hist.latest();
        if time >= self.now {
            return Ok(self.current[idx]);
        }
        if time > tl && self.now > tl {
            let s = (time - tl) / (self.now - tl);
            return Ok(xl[idx] + s * (self.current[idx] - xl[idx]));
        }
        Ok(self.hist.value(idx, time))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryMeta {
    pub scenario_hash: u64,
    pub seed: u64,
    pub config_echo: String,
}

/// Recorded run. `states` holds the integrated (stage or plant) vectors;
/// `plant_x`/`plant_xdot` are filled in by the scenario runner.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub plant_x: Vec<DVector<f64>>,
    pub plant_xdot: Vec<DVector<f64>>,
    /// Formation offsets added to the transformed coordinates.
    pub offsets: Option<DVector<f64>>,
    /// Number of plant derivative orders governed by the protocol.
    pub order: usize,
    pub record_dt: f64,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }
}

fn check_finite(x: &DVector<f64>) -> bool {
    x.iter().all(|v| v.is_finite() && v.abs() <= DIVERGENCE_BOUND)
}

/// Integrates `ẋ = field(t, x, history)` on `[0, t_end]` with classical RK4.
///
/// `field` receives the committed history; it is responsible for building
/// views with [`History::view`] at the stage point it is given.
pub fn integrate<F>(
    mut field: F,
    x0: &DVector<f64>,
    cfg: &IntegratorConfig,
    tau_max: f64,
) -> Result<Trajectory, SimError>
where
    F: FnMut(f64, &DVector<f64>, &History) -> Result<DVector<f64>, SimError>,
{
    cfg.validate(None)?;
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(SimError::Config("initial state is not finite".into()));
    }
    let dt = cfg.dt;
    let steps = cfg.steps();
    let mut traj = Trajectory {
        record_dt: dt * cfg.record_every as f64,
        ..Default::default()
    };
    traj.times.push(0.0);
    traj.states.push(x0.clone());

    let mut hist = History::new(x0.clone(), tau_max + 2.0 * dt);
    let mut x = x0.clone();
    for step in 0..steps {
        let t = step as f64 * dt;
        let half = 0.5 * dt;
        let k1 = field(t, &x, &hist)?;
        let y2 = &x + &k1 * half;
        let k2 = field(t + half, &y2, &hist)?;
        let y3 = &x + &k2 * half;
        let k3 = field(t + half, &y3, &hist)?;
        let y4 = &x + &k3 * dt;
        let k4 = field(t + dt, &y4, &hist)?;
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);

        let t_next = (step + 1) as f64 * dt;
        if !check_finite(&x) {
            return Err(SimError::Divergence {
                time: t_next,
                partial: Box::new(traj),
            });
        }
        hist.push(t_next, x.clone());
        if (step + 1) % cfg.record_every == 0 {
            traj.times.push(t_next);
            traj.states.push(x.clone());
        }
    }
    Ok(traj)
}
