//! Compositional cascades and the explicit second-order controllers.
//!
//! A cascade of `n` stages `L_1 … L_n` is simulated in its stage form
//!
//! ```text
//! ξ̇_k = -L_k(ξ_k, t) + ξ_{k+1},   k < n
//! ξ̇_n = -L_n(ξ_n, t) + u_ref(t)
//! ```
//!
//! with `x = ξ_1`. For `n = 2` the same closed loop can be written as a
//! controller on the double integrator, `ẍ = u(x, ẋ, t)`.

use nalgebra::DVector;
use thiserror::Error;

use crate::operators::{ConsensusOperator, HistoryView, NoHistory, OperatorError};

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("stage {stage} ({kind}) is only admissible as the outermost stage")]
    InadmissibleInnerStage { stage: usize, kind: &'static str },
    #[error("cascade order {0} outside 1..={MAX_ORDER}")]
    InvalidOrder(usize),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeSpec {
    stages: Vec<ConsensusOperator>,
}

impl CascadeSpec {
    /// `stages[0]` is the innermost stage.
    pub fn new(stages: Vec<ConsensusOperator>) -> Result<Self, DynamicsError> {
        let order = stages.len();
        if !(1..=MAX_ORDER).contains(&order) {
            return Err(DynamicsError::InvalidOrder(order));
        }
        let n = stages[0].n();
        for (k, op) in stages.iter().enumerate() {
            if op.n() != n {
                return Err(DynamicsError::Shape(format!(
                    "stage {} acts on {} agents, stage 1 on {n}",
                    k + 1,
                    op.n()
                )));
            }
            if k + 1 < order && !op.is_inner_admissible() {
                return Err(DynamicsError::InadmissibleInnerStage {
                    stage: k + 1,
                    kind: op.kind_name(),
                });
            }
        }
        Ok(Self { stages })
    }

    pub fn order(&self) -> usize {
        self.stages.len()
    }

    pub fn agents(&self) -> usize {
        self.stages[0].n()
    }

    pub fn stages(&self) -> &[ConsensusOperator] {
        &self.stages
    }

    pub fn outer(&self) -> &ConsensusOperator {
        self.stages.last().expect("nonempty by construction")
    }

    pub fn tau_max(&self) -> f64 {
        self.outer().tau_max()
    }

    fn block<'a>(&self, xi: &'a DVector<f64>, k: usize) -> nalgebra::DVectorView<'a, f64> {
        let n = self.agents();
        xi.rows(k * n, n)
    }
}

/// Stage-form vector field. `hist` is the past of the outermost block `ξ_n`.
pub fn cascade_field(
    spec: &CascadeSpec,
    u_ref: &DVector<f64>,
    xi: &DVector<f64>,
    t: f64,
    hist: &dyn HistoryView,
) -> Result<DVector<f64>, DynamicsError> {
    let n = spec.agents();
    let order = spec.order();
    if xi.len() != n * order || u_ref.len() != n {
        return Err(DynamicsError::Shape(format!(
            "expected {} stacked states and {n} inputs, got {} and {}",
            n * order,
            xi.len(),
            u_ref.len()
        )));
    }
    let mut out = DVector::zeros(n * order);
    for (k, op) in spec.stages().iter().enumerate() {
        let block = spec.block(xi, k).into_owned();
        let feedback = if k + 1 == order {
            op.evaluate(&block, t, hist)?
        } else {
            op.evaluate(&block, t, &NoHistory)?
        };
        let drive = if k + 1 == order {
            u_ref.clone()
        } else {
            spec.block(xi, k + 1).into_owned()
        };
        out.rows_mut(k * n, n).copy_from(&(drive - feedback));
    }
    Ok(out)
}

/// Stage states matching a plant state `(x, ẋ)` at time `t`.
///
/// `ξ_1 = x`, `ξ_2 = ẋ + L_1(x, t)`; higher blocks start at zero.
pub fn initial_stage_state(
    spec: &CascadeSpec,
    x: &DVector<f64>,
    xdot: Option<&DVector<f64>>,
    t: f64,
) -> Result<DVector<f64>, DynamicsError> {
    let n = spec.agents();
    if x.len() != n {
        return Err(DynamicsError::Shape(format!(
            "x has length {}, expected {n}",
            x.len()
        )));
    }
    let mut xi = DVector::zeros(n * spec.order());
    xi.rows_mut(0, n).copy_from(x);
    if spec.order() >= 2 {
        let xdot = xdot.ok_or_else(|| DynamicsError::Shape("ẋ(0) is required for order ≥ 2".into()))?;
        if xdot.len() != n {
            return Err(DynamicsError::Shape(format!(
                "ẋ has length {}, expected {n}",
                xdot.len()
            )));
        }
        let l1 = spec.stages()[0].evaluate(x, t, &NoHistory)?;
        xi.rows_mut(n, n).copy_from(&(xdot + l1));
    }
    Ok(xi)
}

/// Plant position and (for order ≥ 2) velocity from the stage state.
pub fn reconstruct_plant(
    spec: &CascadeSpec,
    xi: &DVector<f64>,
    t: f64,
) -> Result<(DVector<f64>, Option<DVector<f64>>), DynamicsError> {
    let n = spec.agents();
    if xi.len() != n * spec.order() {
        return Err(DynamicsError::Shape(format!(
            "expected {} stacked states, got {}",
            n * spec.order(),
            xi.len()
        )));
    }
    let x = spec.block(xi, 0).into_owned();
    if spec.order() < 2 {
        return Ok((x, None));
    }
    let l1 = spec.stages()[0].evaluate(&x, t, &NoHistory)?;
    let xdot = spec.block(xi, 1).into_owned() - l1;
    Ok((x, Some(xdot)))
}

fn require_inner(op: &ConsensusOperator, stage: usize) -> Result<(), DynamicsError> {
    if op.is_inner_admissible() {
        Ok(())
    } else {
        Err(DynamicsError::InadmissibleInnerStage {
            stage,
            kind: op.kind_name(),
        })
    }
}

/// `u = -L_2(ẋ + L_1(x, t), t) - d/dt L_1(x, t)`.
///
/// `hist` is the past of the signal `ẋ + L_1(x, t)` seen by a delayed `L_2`.
pub fn compositional_controller_2(
    l1: &ConsensusOperator,
    l2: &ConsensusOperator,
    x: &DVector<f64>,
    xdot: &DVector<f64>,
    t: f64,
    hist: &dyn HistoryView,
) -> Result<DVector<f64>, DynamicsError> {
    require_inner(l1, 1)?;
    let inner = l1.evaluate(x, t, &NoHistory)?;
    let outer = l2.evaluate(&(xdot + inner), t, hist)?;
    let rate = l1.evaluate_ae_derivative(x, xdot, t)?;
    Ok(-(outer + rate))
}

/// `u = -L_vel(ẋ, t) - L_pos(x, t)`.
///
/// A delayed absolute-velocity operator in the velocity slot is evaluated on
/// the delayed velocity measurement, with `hist` the past of `ẋ`.
pub fn conventional_controller_2(
    lvel: &ConsensusOperator,
    lpos: &ConsensusOperator,
    x: &DVector<f64>,
    xdot: &DVector<f64>,
    t: f64,
    hist: &dyn HistoryView,
) -> Result<DVector<f64>, DynamicsError> {
    if !matches!(lvel, ConsensusOperator::DelayedAbsoluteVelocity { .. }) {
        require_inner(lvel, 1)?;
    }
    require_inner(lpos, 2)?;
    let vel = lvel.evaluate_delayed_measurement(xdot, t, hist)?;
    let pos = lpos.evaluate(x, t, &NoHistory)?;
    Ok(-(vel + pos))
}

/// `u = -(L_2(ẋ, t) + L_1(ẋ, t)) - L_2(L_1(x, t), t)`.
pub fn naive_serial_controller_2(
    l1: &ConsensusOperator,
    l2: &ConsensusOperator,
    x: &DVector<f64>,
    xdot: &DVector<f64>,
    t: f64,
) -> Result<DVector<f64>, DynamicsError> {
    require_inner(l1, 1)?;
    require_inner(l2, 2)?;
    let damping = l2.evaluate(xdot, t, &NoHistory)? + l1.evaluate(xdot, t, &NoHistory)?;
    let coupling = l2.evaluate(&l1.evaluate(x, t, &NoHistory)?, t, &NoHistory)?;
    Ok(-(damping + coupling))
}
