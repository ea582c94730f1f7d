//! Consensus residuals, seminorms and bound checks over trajectories.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::graph::{delta_graph, laplacian_pseudoinverse, spanning_tree_check, WeightedDigraph};
use crate::sim::integrator::Trajectory;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("trajectory is empty")]
    EmptyInput,
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

/// `‖(I - 𝟙𝟙ᵀ/N) z‖∞`.
pub fn disagreement_seminorm(z: &DVector<f64>) -> f64 {
    if z.is_empty() {
        return 0.0;
    }
    // centring on z_0 first keeps constant vectors exactly at zero
    let c = z[0];
    let mean = c + z.add_scalar(-c).mean();
    z.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max)
}

/// `‖L z‖∞`.
pub fn laplacian_seminorm(lap: &DMatrix<f64>, z: &DVector<f64>) -> f64 {
    (lap * z).amax()
}

/// Induced ∞-norm (largest absolute row sum).
pub fn induced_inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.abs().sum()).fold(0.0, f64::max)
}

fn spread(z: &DVector<f64>) -> f64 {
    z.max() - z.min()
}

fn positions(traj: &Trajectory) -> Vec<DVector<f64>> {
    match &traj.offsets {
        Some(off) => traj.plant_x.iter().map(|x| x - off).collect(),
        None => traj.plant_x.clone(),
    }
}

/// Central differences of a uniformly sampled signal; drops both endpoints.
fn central_difference(samples: &[DVector<f64>], h: f64) -> Vec<DVector<f64>> {
    samples
        .windows(3)
        .map(|w| (&w[2] - &w[0]) / (2.0 * h))
        .collect()
}

/// Largest pairwise gap `|x_i^(k) - x_j^(k)|` over the trajectory tail, for
/// each derivative order `k` the trajectory governs.
///
/// Order 0 uses positions with formation offsets removed, order 1 the
/// recorded velocities, and orders `k ≥ 2` repeated central differences of
/// the velocities at the recorded spacing.
pub fn nth_order_residuals(traj: &Trajectory, tail_fraction: f64) -> Result<Vec<f64>, MetricsError> {
    if traj.is_empty() || traj.plant_x.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(MetricsError::Parameter(format!(
            "tail fraction {tail_fraction} outside (0, 1]"
        )));
    }
    let len = traj.plant_x.len();
    let tail_start = |m: usize| -> usize {
        let keep = ((m as f64) * tail_fraction).ceil().max(1.0) as usize;
        m - keep.min(m)
    };
    let tail_max = |series: &[DVector<f64>]| -> f64 {
        if series.is_empty() {
            return f64::NAN;
        }
        series[tail_start(series.len())..]
            .iter()
            .map(spread)
            .fold(0.0, f64::max)
    };
    let mut out = vec![tail_max(&positions(traj)[..len])];
    let orders = traj.order.max(1);
    if orders >= 2 && !traj.plant_xdot.is_empty() {
        out.push(tail_max(&traj.plant_xdot));
        let mut deriv = traj.plant_xdot.clone();
        for _ in 2..orders {
            deriv = central_difference(&deriv, traj.record_dt);
            out.push(tail_max(&deriv));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusReport {
    pub order_residuals: Vec<f64>,
    pub peak_disagreement: f64,
    pub final_disagreement: f64,
    pub converged: bool,
    pub tolerance: f64,
    pub regime_entry_time: Option<f64>,
    pub iss_check: Option<IssCheck>,
    pub diverged_at: Option<f64>,
}

/// Summarizes a (possibly partial) run.
pub fn consensus_report(
    traj: &Trajectory,
    tolerance: f64,
    tail_fraction: f64,
    regime: Option<(&DMatrix<f64>, f64)>,
    diverged_at: Option<f64>,
) -> Result<ConsensusReport, MetricsError> {
    let order_residuals = nth_order_residuals(traj, tail_fraction)?;
    let pos = positions(traj);
    let peak = pos.iter().map(disagreement_seminorm).fold(0.0, f64::max);
    let last = pos.last().map(disagreement_seminorm).unwrap_or(0.0);
    let converged = diverged_at.is_none() && order_residuals.iter().all(|r| *r < tolerance);
    let regime_entry_time = match regime {
        Some((lap, r)) => regime_entry_time(traj, lap, r)?,
        None => None,
    };
    Ok(ConsensusReport {
        order_residuals,
        peak_disagreement: peak,
        final_disagreement: last,
        converged,
        tolerance,
        regime_entry_time,
        iss_check: None,
        diverged_at,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IssCheck {
    pub pass: bool,
    /// Smallest `bound - ‖L z(t)‖∞` over the checked samples.
    pub margin: f64,
}

/// Slack allowed below zero margin for round-off in tight bounds.
pub const ISS_SLACK: f64 = 1e-9;

/// Checks `‖L z(t)‖ ≤ M e^{-α(t-T0)} ‖L⁺‖ ‖L z(T0)‖ + (M/α) w_sup` for every
/// recorded `t ≥ T0`, with `z` the recorded positions.
pub fn check_iss_bound(
    traj: &Trajectory,
    lap: &DMatrix<f64>,
    m: f64,
    alpha: f64,
    w_sup: f64,
    t0: f64,
) -> Result<IssCheck, MetricsError> {
    if !(m > 0.0 && alpha > 0.0 && w_sup >= 0.0 && m.is_finite() && alpha.is_finite()) {
        return Err(MetricsError::Parameter(format!(
            "need M > 0, alpha > 0, w_sup ≥ 0 (got {m}, {alpha}, {w_sup})"
        )));
    }
    if traj.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let pinv = laplacian_pseudoinverse(lap).map_err(|e| MetricsError::Parameter(e.to_string()))?;
    let pinv_norm = induced_inf_norm(&pinv);
    let z = positions(traj);
    let start = traj
        .times
        .iter()
        .position(|t| *t >= t0 - 1e-12)
        .ok_or_else(|| MetricsError::Parameter(format!("T0 = {t0} beyond the trajectory")))?;
    let tstart = traj.times[start];
    let initial = laplacian_seminorm(lap, &z[start]);
    let mut margin = f64::INFINITY;
    for (t, zt) in traj.times[start..].iter().zip(&z[start..]) {
        let bound = m * (-alpha * (t - tstart)).exp() * pinv_norm * initial + m / alpha * w_sup;
        margin = margin.min(bound - laplacian_seminorm(lap, zt));
    }
    Ok(IssCheck {
        pass: margin >= -ISS_SLACK,
        margin,
    })
}

/// Smallest `M` with `‖L e^{-L t}‖∞ ≤ M e^{-α t}` on the grid `0, h, …, horizon`.
pub fn fit_exponential_envelope(lap: &DMatrix<f64>, alpha: f64, horizon: f64, h: f64) -> f64 {
    let steps = (horizon / h).ceil() as usize;
    let step = (-lap * h).exp();
    let mut prop = DMatrix::identity(lap.nrows(), lap.ncols());
    let mut best: f64 = 0.0;
    for k in 0..=steps {
        let t = k as f64 * h;
        best = best.max(induced_inf_norm(&(lap * &prop)) * (alpha * t).exp());
        prop = &step * prop;
    }
    best
}

/// First recorded time after which `‖L x(t)‖∞ < r` holds at every later sample.
pub fn regime_entry_time(traj: &Trajectory, lap: &DMatrix<f64>, r: f64) -> Result<Option<f64>, MetricsError> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(MetricsError::Parameter(format!("radius {r} outside (0, 1]")));
    }
    let z = positions(traj);
    let mut entry = None;
    for (t, x) in traj.times.iter().zip(&z).rev() {
        if laplacian_seminorm(lap, x) < r {
            entry = Some(*t);
        } else {
            break;
        }
    }
    Ok(entry)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityReport {
    /// Whether each window's δ-graph has a directed spanning tree.
    pub per_window: Vec<bool>,
    /// Nodes that are a root in every window.
    pub common_roots: Vec<usize>,
}

impl ConnectivityReport {
    pub fn all_connected(&self) -> bool {
        !self.common_roots.is_empty()
    }
}

/// Integrates the gated adjacency `W(τ)_ij = gate_i(τ) W_ij` over each window
/// `[t, t + T]` (trapezoid rule, step `dt`) and checks the δ-graph of the
/// result with `δ = 1e-3 · T`.
pub fn integrated_connectivity(
    gate: impl Fn(usize, f64) -> f64,
    base_laplacian: &DMatrix<f64>,
    window: f64,
    starts: &[f64],
    dt: f64,
) -> Result<ConnectivityReport, MetricsError> {
    if !(window > 0.0 && dt > 0.0) {
        return Err(MetricsError::Parameter("window and dt must be positive".into()));
    }
    let base = WeightedDigraph::from_laplacian(base_laplacian)
        .map_err(|e| MetricsError::Parameter(e.to_string()))?;
    let n = base.n();
    let steps = (window / dt).ceil() as usize;
    let h = window / steps as f64;
    let delta = 1e-3 * window;
    let mut per_window = Vec::with_capacity(starts.len());
    let mut common: Vec<usize> = (0..n).collect();
    for &t in starts {
        let weight: Vec<f64> = (0..n)
            .map(|i| {
                let mut acc = 0.0;
                for k in 0..=steps {
                    let c = if k == 0 || k == steps { 0.5 } else { 1.0 };
                    acc += c * gate(i, t + k as f64 * h);
                }
                acc * h
            })
            .collect();
        let integrated = DMatrix::from_fn(n, n, |i, j| weight[i] * base.weights()[(i, j)]);
        let g = WeightedDigraph::new(integrated).map_err(|e| MetricsError::Parameter(e.to_string()))?;
        let rep = spanning_tree_check(&delta_graph(&g, delta).expect("delta > 0"));
        common.retain(|r| rep.roots.contains(r));
        per_window.push(rep.has_spanning_tree);
    }
    Ok(ConnectivityReport {
        per_window,
        common_roots: common,
    })
}
