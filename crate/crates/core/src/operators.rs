//! First-order consensus operators used as stages of a composition.
//!
//! Each operator maps a network state `z` at time `t` (plus, for the delayed
//! kinds, the stored past of `z`) to the feedback term `L(z, t)`, so that the
//! first-order protocol reads `ż = -L(z, t) + w`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

use crate::sim::delay::{stream_rng, DelayProcess};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error("state has length {got}, operator expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("no history available for agent {agent} at t = {time}")]
    InsufficientHistory { agent: usize, time: f64 },
    #[error("non-finite value in operator input")]
    Numeric,
    #[error("{0} has no almost-everywhere derivative form (outer stage only)")]
    Unsupported(&'static str),
    #[error("invalid operator parameters: {0}")]
    InvalidParameters(String),
}

/// Read access to the past of the signal an operator acts on.
pub trait HistoryView {
    /// Component `agent` of the signal at absolute time `time`.
    fn value(&self, agent: usize, time: f64) -> Result<f64, OperatorError>;
}

/// For operators that never look back.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoHistory;

impl HistoryView for NoHistory {
    fn value(&self, agent: usize, time: f64) -> Result<f64, OperatorError> {
        Err(OperatorError::InsufficientHistory { agent, time })
    }
}

/// History given by a closure `(agent, time) -> value`.
pub struct FnHistory<F>(pub F);

impl<F: Fn(usize, f64) -> f64> HistoryView for FnHistory<F> {
    fn value(&self, agent: usize, time: f64) -> Result<f64, OperatorError> {
        Ok((self.0)(agent, time))
    }
}

/// External reference signal fed to absolute-feedback operators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReferenceSignal {
    Constant(f64),
    /// `offset + slope * t`.
    Affine { offset: f64, slope: f64 },
}

impl ReferenceSignal {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            ReferenceSignal::Constant(c) => c,
            ReferenceSignal::Affine { offset, slope } => offset + slope * t,
        }
    }
}

/// Delays of a delayed relative operator, either one per receiving agent or one per edge.
#[derive(Debug, Clone, PartialEq)]
pub enum EdgeDelays {
    PerAgent(Vec<DelayProcess>),
    /// Row-major `n × n`.
    PerEdge(Vec<DelayProcess>),
}

impl EdgeDelays {
    fn tau(&self, n: usize, i: usize, j: usize, t: f64) -> f64 {
        match self {
            EdgeDelays::PerAgent(d) => d[i].tau(t),
            EdgeDelays::PerEdge(d) => d[i * n + j].tau(t),
        }
    }

    fn processes(&self) -> &[DelayProcess] {
        match self {
            EdgeDelays::PerAgent(d) | EdgeDelays::PerEdge(d) => d,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConsensusOperator {
    /// `L z`.
    LinearStatic { laplacian: DMatrix<f64> },
    /// `D(t) L z` with `D(t)_ii = max(sin(ω_i t + φ_i), 0)`.
    LinearTimeVarying {
        laplacian: DMatrix<f64>,
        omega: Vec<f64>,
        phi: Vec<f64>,
    },
    /// `sat(L z)`, unit saturation.
    Saturated { laplacian: DMatrix<f64> },
    /// `Σ_j w_ij (z_i(t) - z_j(t - τ_ij(t)))`.
    DelayedRelative {
        weights: DMatrix<f64>,
        delays: EdgeDelays,
    },
    /// `d_i (z_i(t) - r(t - τ_i(t)))`.
    DelayedAbsoluteVelocity {
        gains: Vec<f64>,
        reference: ReferenceSignal,
        delays: Vec<DelayProcess>,
    },
}

fn check_laplacian(lap: &DMatrix<f64>) -> Result<(), OperatorError> {
    if lap.nrows() != lap.ncols() || lap.nrows() == 0 {
        return Err(OperatorError::InvalidParameters(
            "laplacian must be square and nonempty".into(),
        ));
    }
    if lap.iter().any(|v| !v.is_finite()) {
        return Err(OperatorError::InvalidParameters(
            "laplacian has non-finite entries".into(),
        ));
    }
    Ok(())
}

fn check_delays(delays: &[DelayProcess]) -> Result<(), OperatorError> {
    for d in delays {
        let m = d.tau_max();
        if !(m.is_finite() && m >= 0.0) {
            return Err(OperatorError::InvalidParameters(format!(
                "delay bound {m} must be finite and nonnegative"
            )));
        }
    }
    Ok(())
}

impl ConsensusOperator {
    pub fn linear(laplacian: DMatrix<f64>) -> Result<Self, OperatorError> {
        check_laplacian(&laplacian)?;
        Ok(Self::LinearStatic { laplacian })
    }

    pub fn time_varying(
        laplacian: DMatrix<f64>,
        omega: Vec<f64>,
        phi: Vec<f64>,
    ) -> Result<Self, OperatorError> {
        check_laplacian(&laplacian)?;
        let n = laplacian.nrows();
        if omega.len() != n || phi.len() != n {
            return Err(OperatorError::InvalidParameters(format!(
                "need {n} frequencies and phases, got {} and {}",
                omega.len(),
                phi.len()
            )));
        }
        if omega.iter().any(|w| *w == 0.0 || !w.is_finite()) {
            return Err(OperatorError::InvalidParameters(
                "gate frequencies must be finite and nonzero".into(),
            ));
        }
        let two_pi = std::f64::consts::TAU;
        if phi.iter().any(|p| !(0.0..two_pi).contains(p)) {
            return Err(OperatorError::InvalidParameters(
                "gate phases must lie in [0, 2π)".into(),
            ));
        }
        Ok(Self::LinearTimeVarying {
            laplacian,
            omega,
            phi,
        })
    }

    pub fn saturated(laplacian: DMatrix<f64>) -> Result<Self, OperatorError> {
        check_laplacian(&laplacian)?;
        Ok(Self::Saturated { laplacian })
    }

    pub fn delayed_relative(
        weights: DMatrix<f64>,
        delays: EdgeDelays,
    ) -> Result<Self, OperatorError> {
        let n = weights.nrows();
        if n == 0 || weights.ncols() != n {
            return Err(OperatorError::InvalidParameters(
                "weights must be square and nonempty".into(),
            ));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(OperatorError::InvalidParameters(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let expected = match &delays {
            EdgeDelays::PerAgent(_) => n,
            EdgeDelays::PerEdge(_) => n * n,
        };
        if delays.processes().len() != expected {
            return Err(OperatorError::InvalidParameters(format!(
                "expected {expected} delay processes, got {}",
                delays.processes().len()
            )));
        }
        check_delays(delays.processes())?;
        Ok(Self::DelayedRelative { weights, delays })
    }

    pub fn delayed_absolute_velocity(
        gains: Vec<f64>,
        reference: ReferenceSignal,
        delays: Vec<DelayProcess>,
    ) -> Result<Self, OperatorError> {
        if gains.is_empty() || gains.len() != delays.len() {
            return Err(OperatorError::InvalidParameters(format!(
                "{} gains but {} delay processes",
                gains.len(),
                delays.len()
            )));
        }
        if gains.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(OperatorError::InvalidParameters(
                "gains must be positive".into(),
            ));
        }
        check_delays(&delays)?;
        Ok(Self::DelayedAbsoluteVelocity {
            gains,
            reference,
            delays,
        })
    }

    pub fn n(&self) -> usize {
        match self {
            Self::LinearStatic { laplacian }
            | Self::LinearTimeVarying { laplacian, .. }
            | Self::Saturated { laplacian } => laplacian.nrows(),
            Self::DelayedRelative { weights, .. } => weights.nrows(),
            Self::DelayedAbsoluteVelocity { gains, .. } => gains.len(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::LinearStatic { .. } => "linear",
            Self::LinearTimeVarying { .. } => "time_varying",
            Self::Saturated { .. } => "saturated",
            Self::DelayedRelative { .. } => "delayed_relative",
            Self::DelayedAbsoluteVelocity { .. } => "delayed_absolute_velocity",
        }
    }

    /// Whether the operator is invariant under uniform translation of its argument.
    pub fn relative_feedback(&self) -> bool {
        !self.is_delayed()
    }

    pub fn is_delayed(&self) -> bool {
        matches!(
            self,
            Self::DelayedRelative { .. } | Self::DelayedAbsoluteVelocity { .. }
        )
    }

    /// Admissible anywhere in a composition (not only as the outermost stage).
    pub fn is_inner_admissible(&self) -> bool {
        self.relative_feedback()
    }

    pub fn tau_max(&self) -> f64 {
        match self {
            Self::DelayedRelative { delays, .. } => delays
                .processes()
                .iter()
                .map(DelayProcess::tau_max)
                .fold(0.0, f64::max),
            Self::DelayedAbsoluteVelocity { delays, .. } => {
                delays.iter().map(DelayProcess::tau_max).fold(0.0, f64::max)
            }
            _ => 0.0,
        }
    }

    /// Smallest positive constant delay, used to bound the step size.
    pub fn tau_min_positive(&self) -> Option<f64> {
        let procs: &[DelayProcess] = match self {
            Self::DelayedRelative { delays, .. } => delays.processes(),
            Self::DelayedAbsoluteVelocity { delays, .. } => delays,
            _ => &[],
        };
        procs
            .iter()
            .filter_map(DelayProcess::tau_min_positive)
            .reduce(f64::min)
    }

    /// The static Laplacian of linear-type operators, or `D - W` for delayed relative ones.
    pub fn base_laplacian(&self) -> Option<DMatrix<f64>> {
        match self {
            Self::LinearStatic { laplacian }
            | Self::LinearTimeVarying { laplacian, .. }
            | Self::Saturated { laplacian } => Some(laplacian.clone()),
            Self::DelayedRelative { weights, .. } => {
                let mut lap = -weights.clone();
                for i in 0..weights.nrows() {
                    lap[(i, i)] = weights.row(i).sum() - weights[(i, i)];
                }
                Some(lap)
            }
            Self::DelayedAbsoluteVelocity { .. } => None,
        }
    }

    fn check_input(&self, z: &DVector<f64>) -> Result<(), OperatorError> {
        if z.len() != self.n() {
            return Err(OperatorError::Dimension {
                expected: self.n(),
                got: z.len(),
            });
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(OperatorError::Numeric);
        }
        Ok(())
    }

    pub fn evaluate(
        &self,
        z: &DVector<f64>,
        t: f64,
        hist: &dyn HistoryView,
    ) -> Result<DVector<f64>, OperatorError> {
        self.check_input(z)?;
        if !t.is_finite() {
            return Err(OperatorError::Numeric);
        }
        let out = match self {
            Self::LinearStatic { laplacian } => laplacian * z,
            Self::LinearTimeVarying {
                laplacian,
                omega,
                phi,
            } => {
                let mut lz = laplacian * z;
                for (i, v) in lz.iter_mut().enumerate() {
                    *v *= gate(omega[i], phi[i], t);
                }
                lz
            }
            Self::Saturated { laplacian } => (laplacian * z).map(saturate),
            Self::DelayedRelative { weights, delays } => {
                let n = weights.nrows();
                let mut out = DVector::zeros(n);
                for i in 0..n {
                    let mut acc = 0.0;
                    for j in 0..n {
                        let w = weights[(i, j)];
                        if i == j || w == 0.0 {
                            continue;
                        }
                        let tau = delays.tau(n, i, j, t);
                        let zj = if tau == 0.0 {
                            z[j]
                        } else {
                            hist.value(j, t - tau)?
                        };
                        acc += w * (z[i] - zj);
                    }
                    out[i] = acc;
                }
                out
            }
            Self::DelayedAbsoluteVelocity {
                gains,
                reference,
                delays,
            } => DVector::from_fn(gains.len(), |i, _| {
                gains[i] * (z[i] - reference.at(t - delays[i].tau(t)))
            }),
        };
        if out.iter().any(|v| !v.is_finite()) {
            return Err(OperatorError::Numeric);
        }
        Ok(out)
    }

    /// Absolute-feedback evaluation when the agent's own state also arrives
    /// through the delayed channel: `d_i (z_i(t - τ_i) - r(t - τ_i))`.
    ///
    /// This is how a plant-level controller without the stage record uses a
    /// delayed measurement; `hist` must cover the past of `z`.
    pub fn evaluate_delayed_measurement(
        &self,
        z: &DVector<f64>,
        t: f64,
        hist: &dyn HistoryView,
    ) -> Result<DVector<f64>, OperatorError> {
        match self {
            Self::DelayedAbsoluteVelocity {
                gains,
                reference,
                delays,
            } => {
                self.check_input(z)?;
                let mut out = DVector::zeros(gains.len());
                for i in 0..gains.len() {
                    let tau = delays[i].tau(t);
                    let zi = if tau == 0.0 {
                        z[i]
                    } else {
                        hist.value(i, t - tau)?
                    };
                    out[i] = gains[i] * (zi - reference.at(t - tau));
                }
                Ok(out)
            }
            _ => self.evaluate(z, t, hist),
        }
    }

    /// Almost-everywhere time derivative of `t ↦ L(z(t), t)` given `ż`.
    pub fn evaluate_ae_derivative(
        &self,
        z: &DVector<f64>,
        zdot: &DVector<f64>,
        t: f64,
    ) -> Result<DVector<f64>, OperatorError> {
        self.check_input(z)?;
        self.check_input(zdot)?;
        match self {
            Self::LinearStatic { laplacian } => Ok(laplacian * zdot),
            Self::LinearTimeVarying {
                laplacian,
                omega,
                phi,
            } => {
                let lz = laplacian * z;
                let lzdot = laplacian * zdot;
                Ok(DVector::from_fn(lz.len(), |i, _| {
                    gate_derivative(omega[i], phi[i], t) * lz[i]
                        + gate(omega[i], phi[i], t) * lzdot[i]
                }))
            }
            Self::Saturated { laplacian } => {
                let lz = laplacian * z;
                let lzdot = laplacian * zdot;
                Ok(DVector::from_fn(lz.len(), |i, _| {
                    if lz[i].abs() < 1.0 {
                        lzdot[i]
                    } else {
                        0.0
                    }
                }))
            }
            Self::DelayedRelative { .. } | Self::DelayedAbsoluteVelocity { .. } => {
                Err(OperatorError::Unsupported(self.kind_name()))
            }
        }
    }

    /// 0/1 matrix with entry `(i, j)` set when output `i` depends on input `j`.
    pub fn communication_adjacency(&self) -> DMatrix<u8> {
        let n = self.n();
        let support = match self {
            Self::DelayedAbsoluteVelocity { .. } => return DMatrix::zeros(n, n),
            Self::DelayedRelative { weights, .. } => weights.clone(),
            _ => self.base_laplacian().unwrap_or_else(|| DMatrix::zeros(n, n)),
        };
        DMatrix::from_fn(n, n, |i, j| {
            (i != j && support[(i, j)].abs() >= crate::graph::EDGE_EPS) as u8
        })
    }
}

/// `max(sin(ω t + φ), 0)`.
pub fn gate(omega: f64, phi: f64, t: f64) -> f64 {
    (omega * t + phi).sin().max(0.0)
}

pub fn gate_derivative(omega: f64, phi: f64, t: f64) -> f64 {
    let arg = omega * t + phi;
    if arg.sin() > 0.0 {
        omega * arg.cos()
    } else {
        0.0
    }
}

pub fn saturate(v: f64) -> f64 {
    v.clamp(-1.0, 1.0)
}

fn uniform_vector<R: Rng>(rng: &mut R, n: usize, bound: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-bound..=bound))
}

/// Largest deviation `‖L(z + 𝟙a, t) - L(z, t)‖∞` over random samples.
///
/// For delayed kinds the translation is a ramp `a·s` applied to the whole
/// signal history, since a constant shift cancels in relative differences.
pub fn check_relative_invariance(op: &ConsensusOperator, samples: usize, seed: u64) -> f64 {
    let n = op.n();
    let mut rng = stream_rng(seed, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..samples.max(1) {
        let z = uniform_vector(&mut rng, n, 10.0);
        let a: f64 = rng.random_range(-10.0..=10.0);
        let t: f64 = rng.random_range(0.0..=10.0);
        let deviation = if op.is_delayed() {
            let base = FnHistory(|j: usize, _s: f64| z[j]);
            let shifted = FnHistory(|j: usize, s: f64| z[j] + a * s);
            let z_shift = z.add_scalar(a * t);
            let lhs = op.evaluate(&z_shift, t, &shifted);
            let rhs = op.evaluate(&z, t, &base);
            match (lhs, rhs) {
                (Ok(l), Ok(r)) => (l - r).amax(),
                _ => f64::INFINITY,
            }
        } else {
            let lhs = op.evaluate(&z.add_scalar(a), t, &NoHistory);
            let rhs = op.evaluate(&z, t, &NoHistory);
            match (lhs, rhs) {
                (Ok(l), Ok(r)) => (l - r).amax(),
                _ => f64::INFINITY,
            }
        };
        worst = worst.max(deviation);
    }
    worst
}

/// Sampled lower bound on the global Lipschitz constant in the ∞-norm.
///
/// Half of the perturbations are scaled sign vectors, which is where the
/// induced norm of a linear map is attained. Delayed kinds are evaluated on a
/// history that is constant in time.
pub fn estimate_lipschitz(op: &ConsensusOperator, samples: usize, seed: u64) -> f64 {
    let n = op.n();
    let mut rng = stream_rng(seed, 1);
    let mut best: f64 = 0.0;
    for k in 0..samples.max(2) {
        let z = uniform_vector(&mut rng, n, 5.0);
        let delta = if k % 2 == 0 {
            uniform_vector(&mut rng, n, 1.0)
        } else {
            let scale: f64 = rng.random_range(1e-3..=2.0);
            DVector::from_fn(n, |_, _| if rng.random::<bool>() { scale } else { -scale })
        };
        let dn = delta.amax();
        if dn == 0.0 {
            continue;
        }
        let t: f64 = rng.random_range(0.0..=10.0);
        let zp = &z + &delta;
        let hz = FnHistory(|j: usize, _s: f64| z[j]);
        let hzp = FnHistory(|j: usize, _s: f64| zp[j]);
        if let (Ok(a), Ok(b)) = (op.evaluate(&z, t, &hz), op.evaluate(&zp, t, &hzp)) {
            best = best.max((a - b).amax() / dn);
        }
    }
    best
}
