//! Scenario files: a flat, sectioned TOML description of one experiment.
//!
//! ```toml
//! name = "serial_lti"
//! seed = 1
//!
//! [graph]
//! n = 10
//! kind = "path"            # or: edges = [[i, j, w], ...]  (1-indexed, j -> i)
//!
//! [cascade]
//! order = 2
//! controller = "compositional"   # conventional | naive-serial
//!
//! [stage.1]
//! kind = "linear"
//!
//! [stage.2]
//! kind = "linear"
//!
//! [init]
//! x_range = 1.0
//!
//! [integrator]
//! dt = 0.001
//! t_end = 60.0
//! ```

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{path_graph, spanning_tree_check, WeightedDigraph};
use crate::operators::{ConsensusOperator, EdgeDelays, ReferenceSignal};
use crate::sim::delay::{stream_rng, DelaySpec};
use crate::sim::integrator::IntegratorConfig;

/// RNG stream used for seeded initial positions; velocities use the next one.
pub const INIT_STREAM: u64 = 1 << 32;
/// First RNG stream used for random disturbances (one per agent).
pub const DISTURBANCE_STREAM: u64 = 2 << 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("inadmissible stage placement: {0}")]
    Inadmissible(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
}

fn invalid(key: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    Compositional,
    Conventional,
    NaiveSerial,
}

impl ControllerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ControllerKind::Compositional => "compositional",
            ControllerKind::Conventional => "conventional",
            ControllerKind::NaiveSerial => "naive-serial",
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "compositional" => Ok(Self::Compositional),
            "conventional" => Ok(Self::Conventional),
            "naive-serial" => Ok(Self::NaiveSerial),
            other => Err(invalid("controller", format!("unknown controller `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<(usize, usize, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CascadeSection {
    pub order: usize,
    pub controller: ControllerKind,
    /// Stage whose operator acts on velocities in the conventional controller.
    #[serde(default = "one")]
    pub velocity_stage: usize,
    /// Stage whose operator acts on positions in the conventional controller.
    #[serde(default = "two")]
    pub position_stage: usize,
}

fn one() -> usize {
    1
}

fn two() -> usize {
    2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Linear,
    TimeVarying,
    Saturated,
    DelayedRelative,
    DelayedAbsoluteVelocity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSection {
    pub kind: StageKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<Vec<f64>>,
    /// Constant reference signal for absolute feedback.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<f64>,
    /// Declared delay bound; realized delays exceeding it are rejected.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_process: Option<DelaySpec>,
}

impl StageSection {
    pub fn of_kind(kind: StageKind) -> Self {
        Self {
            kind,
            omega: None,
            phi: None,
            gains: None,
            reference: None,
            tau_max: None,
            delay_process: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSection {
    /// Named velocity preset, currently `standstill_leader_v10`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// Explicit physical positions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xdot: Option<Vec<f64>>,
    /// Seeded formation error uniform in `[-x_range, x_range]` when `x` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_range: Option<f64>,
    /// Seeded velocities uniform in `[-xdot_range, xdot_range]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xdot_range: Option<f64>,
    /// Formation offsets `d_ref`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offsets: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceKind {
    #[default]
    None,
    Constant,
    BoundedRandom,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSection {
    #[serde(default)]
    pub kind: DisturbanceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sup: Option<f64>,
    /// Hold time of each random draw (s).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hold: Option<f64>,
    /// Disturbance is switched off from this time on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub until: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "one")]
    pub record_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_tail")]
    pub tail_fraction: f64,
    #[serde(default = "default_radius")]
    pub regime_radius: f64,
}

fn default_tolerance() -> f64 {
    1e-6
}

fn default_tail() -> f64 {
    0.1
}

fn default_radius() -> f64 {
    0.5
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            tolerance: default_tolerance(),
            tail_fraction: default_tail(),
            regime_radius: default_radius(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub graph: GraphSection,
    pub cascade: CascadeSection,
    pub stage: BTreeMap<String, StageSection>,
    #[serde(default)]
    pub init: InitSection,
    #[serde(default)]
    pub disturbance: DisturbanceSection,
    pub integrator: IntegratorSection,
    #[serde(default)]
    pub metrics: MetricsSection,
}

/// Runtime disturbance `d(t)` added to the outermost input.
#[derive(Debug, Clone, PartialEq)]
pub enum Disturbance {
    None(usize),
    Constant(DVector<f64>, Option<f64>),
    /// Piecewise constant draws, one row per hold interval.
    Random {
        hold: f64,
        table: Vec<DVector<f64>>,
        until: Option<f64>,
    },
}

impl Disturbance {
    pub fn at(&self, t: f64) -> DVector<f64> {
        match self {
            Disturbance::None(n) => DVector::zeros(*n),
            Disturbance::Constant(v, until) => match until {
                Some(u) if t >= *u => DVector::zeros(v.len()),
                _ => v.clone(),
            },
            Disturbance::Random { hold, table, until } => {
                let n = table[0].len();
                if matches!(until, Some(u) if t >= *u) {
                    return DVector::zeros(n);
                }
                let k = ((t / hold).floor().max(0.0) as usize).min(table.len() - 1);
                table[k].clone()
            }
        }
    }

    pub fn sup(&self) -> f64 {
        match self {
            Disturbance::None(_) => 0.0,
            Disturbance::Constant(v, _) => v.amax(),
            Disturbance::Random { table, .. } => table.iter().map(|r| r.amax()).fold(0.0, f64::max),
        }
    }
}

/// A scenario with every random quantity realized.
#[derive(Debug, Clone, PartialEq)]
pub struct Setup {
    pub graph: WeightedDigraph,
    pub laplacian: DMatrix<f64>,
    pub stages: Vec<ConsensusOperator>,
    pub controller: ControllerKind,
    pub velocity_stage: usize,
    pub position_stage: usize,
    /// Positions in formation coordinates `x - d_ref`.
    pub x0: DVector<f64>,
    pub xdot0: DVector<f64>,
    pub offsets: DVector<f64>,
    pub disturbance: Disturbance,
    pub integrator: IntegratorConfig,
}

impl Setup {
    pub fn tau_max(&self) -> f64 {
        self.stages
            .iter()
            .map(ConsensusOperator::tau_max)
            .fold(0.0, f64::max)
    }

    pub fn tau_min_positive(&self) -> Option<f64> {
        self.stages
            .iter()
            .filter_map(ConsensusOperator::tau_min_positive)
            .reduce(f64::min)
    }
}

type InitialState = (DVector<f64>, DVector<f64>, DVector<f64>);

fn check_len(key: &str, v: &[f64], n: usize) -> Result<(), ConfigError> {
    if v.len() != n {
        return Err(invalid(key, format!("expected {n} values, got {}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(invalid(key, "values must be finite"));
    }
    Ok(())
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ConfigError> {
    let sc: Scenario = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    sc.validate()?;
    Ok(sc)
}

impl Scenario {
    /// Canonical text form; `parse_scenario(&sc.emit())` returns `sc`.
    pub fn emit(&self) -> String {
        toml::to_string(self).expect("scenario is always serializable")
    }

    pub fn n(&self) -> usize {
        self.graph.n
    }

    pub fn stages_in_order(&self) -> Vec<&StageSection> {
        (1..=self.cascade.order)
            .filter_map(|k| self.stage.get(&k.to_string()))
            .collect()
    }

    pub fn with_controller(&self, controller: ControllerKind) -> Self {
        let mut sc = self.clone();
        sc.cascade.controller = controller;
        sc
    }

    /// Checks everything that can be checked without realizing random quantities.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.build().map(|_| ())
    }

    pub fn build_graph(&self) -> Result<WeightedDigraph, ConfigError> {
        let g = &self.graph;
        match (g.kind.as_deref(), &g.edges) {
            (Some("path"), None) => {
                path_graph(g.n).map_err(|e| invalid("graph.n", e.to_string()))
            }
            (None, Some(edges)) => {
                let mut triples = Vec::with_capacity(edges.len());
                for &(i, j, w) in edges {
                    if i == 0 || j == 0 {
                        return Err(invalid("graph.edges", "node indices are 1-based"));
                    }
                    triples.push((i - 1, j - 1, w));
                }
                WeightedDigraph::from_edges(g.n, &triples)
                    .map_err(|e| invalid("graph.edges", e.to_string()))
            }
            (Some(other), None) => Err(invalid("graph.kind", format!("unknown kind `{other}`"))),
            (Some(_), Some(_)) => Err(invalid("graph", "give either `kind` or `edges`, not both")),
            (None, None) => Err(invalid("graph", "missing `kind` or `edges`")),
        }
    }

    fn build_stage(
        &self,
        k: usize,
        spec: &StageSection,
        graph: &WeightedDigraph,
        lap: &DMatrix<f64>,
    ) -> Result<ConsensusOperator, ConfigError> {
        let n = graph.n();
        let key = |field: &str| format!("stage.{k}.{field}");
        let t_end = self.integrator.t_end;
        let unexpected = |field: &str, present: bool| {
            if present {
                Err(invalid(key(field), format!("not used by {:?} stages", spec.kind)))
            } else {
                Ok(())
            }
        };
        let no_delay = |spec: &StageSection| -> Result<(), ConfigError> {
            unexpected("delay_process", spec.delay_process.is_some())?;
            unexpected("tau_max", spec.tau_max.is_some())?;
            unexpected("gains", spec.gains.is_some())?;
            unexpected("reference", spec.reference.is_some())
        };
        let delays = |spec: &StageSection| -> Result<Vec<_>, ConfigError> {
            let d = spec
                .delay_process
                .as_ref()
                .ok_or_else(|| invalid(key("delay_process"), "required for delayed stages"))?;
            d.validate().map_err(|m| invalid(key("delay_process"), m))?;
            let realized: Vec<_> = (0..n).map(|i| d.realize(i, t_end)).collect();
            if let Some(bound) = spec.tau_max {
                let worst = realized.iter().map(|p| p.tau_max()).fold(0.0, f64::max);
                if !(bound.is_finite() && bound >= 0.0) {
                    return Err(invalid(key("tau_max"), "must be finite and nonnegative"));
                }
                if worst > bound {
                    return Err(invalid(
                        key("tau_max"),
                        format!("realized delay reaches {worst}, above the declared bound {bound}"),
                    ));
                }
            }
            Ok(realized)
        };
        let op = match spec.kind {
            StageKind::Linear | StageKind::Saturated => {
                no_delay(spec)?;
                unexpected("omega", spec.omega.is_some())?;
                unexpected("phi", spec.phi.is_some())?;
                if spec.kind == StageKind::Linear {
                    ConsensusOperator::linear(lap.clone())
                } else {
                    ConsensusOperator::saturated(lap.clone())
                }
            }
            StageKind::TimeVarying => {
                no_delay(spec)?;
                let omega = spec
                    .omega
                    .clone()
                    .ok_or_else(|| invalid(key("omega"), "required for time_varying stages"))?;
                let phi = spec
                    .phi
                    .clone()
                    .ok_or_else(|| invalid(key("phi"), "required for time_varying stages"))?;
                check_len(&key("omega"), &omega, n)?;
                check_len(&key("phi"), &phi, n)?;
                ConsensusOperator::time_varying(lap.clone(), omega, phi)
            }
            StageKind::DelayedRelative => {
                unexpected("omega", spec.omega.is_some())?;
                unexpected("phi", spec.phi.is_some())?;
                unexpected("gains", spec.gains.is_some())?;
                unexpected("reference", spec.reference.is_some())?;
                let d = delays(spec)?;
                ConsensusOperator::delayed_relative(graph.weights().clone(), EdgeDelays::PerAgent(d))
            }
            StageKind::DelayedAbsoluteVelocity => {
                unexpected("omega", spec.omega.is_some())?;
                unexpected("phi", spec.phi.is_some())?;
                let gains = spec.gains.clone().unwrap_or_else(|| vec![1.0; n]);
                check_len(&key("gains"), &gains, n)?;
                let reference = ReferenceSignal::Constant(spec.reference.unwrap_or(0.0));
                let d = delays(spec)?;
                ConsensusOperator::delayed_absolute_velocity(gains, reference, d)
            }
        };
        op.map_err(|e| invalid(format!("stage.{k}"), e.to_string()))
    }

    /// Returns `(x0 in formation coordinates, xdot0, offsets)`.
    fn build_init(&self, graph: &WeightedDigraph) -> Result<InitialState, ConfigError> {
        let n = graph.n();
        let init = &self.init;
        let offsets = match &init.offsets {
            Some(o) => {
                check_len("init.offsets", o, n)?;
                DVector::from_column_slice(o)
            }
            None => DVector::zeros(n),
        };
        let mut rng = stream_rng(self.seed, INIT_STREAM);
        let x0 = match (&init.x, init.x_range) {
            (Some(_), Some(_)) => return Err(invalid("init", "give either `x` or `x_range`")),
            (Some(x), None) => {
                check_len("init.x", x, n)?;
                DVector::from_column_slice(x) - &offsets
            }
            (None, r) => {
                let r = r.unwrap_or(0.0);
                if !(r.is_finite() && r >= 0.0) {
                    return Err(invalid("init.x_range", "must be finite and nonnegative"));
                }
                DVector::from_fn(n, |_, _| if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 })
            }
        };
        let given = [init.xdot.is_some(), init.xdot_range.is_some(), init.preset.is_some()];
        if given.iter().filter(|g| **g).count() > 1 {
            return Err(invalid("init", "give at most one of `xdot`, `xdot_range`, `preset`"));
        }
        let xdot0 = if let Some(v) = &init.xdot {
            check_len("init.xdot", v, n)?;
            DVector::from_column_slice(v)
        } else if let Some(r) = init.xdot_range {
            if !(r.is_finite() && r >= 0.0) {
                return Err(invalid("init.xdot_range", "must be finite and nonnegative"));
            }
            let mut rng = stream_rng(self.seed, INIT_STREAM + 1);
            DVector::from_fn(n, |_, _| if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 })
        } else if let Some(p) = &init.preset {
            match p.as_str() {
                "standstill_leader_v10" => {
                    let lap = graph.laplacian();
                    let leaders: Vec<usize> = (0..n)
                        .filter(|&i| lap.row(i).iter().all(|v| *v == 0.0))
                        .collect();
                    if leaders.is_empty() {
                        return Err(invalid("init.preset", "graph has no leader (zero Laplacian row)"));
                    }
                    DVector::from_fn(n, |i, _| if leaders.contains(&i) { 10.0 } else { 0.0 })
                }
                other => return Err(invalid("init.preset", format!("unknown preset `{other}`"))),
            }
        } else {
            DVector::zeros(n)
        };
        Ok((x0, xdot0, offsets))
    }

    fn build_disturbance(&self, n: usize) -> Result<Disturbance, ConfigError> {
        let d = &self.disturbance;
        if let Some(u) = d.until {
            if !(u.is_finite() && u >= 0.0) {
                return Err(invalid("disturbance.until", "must be finite and nonnegative"));
            }
        }
        match d.kind {
            DisturbanceKind::None => {
                if d.values.is_some() || d.sup.is_some() || d.hold.is_some() || d.until.is_some() {
                    return Err(invalid("disturbance", "parameters given but kind is none"));
                }
                Ok(Disturbance::None(n))
            }
            DisturbanceKind::Constant => {
                let v = d
                    .values
                    .as_ref()
                    .ok_or_else(|| invalid("disturbance.values", "required for constant disturbances"))?;
                check_len("disturbance.values", v, n)?;
                if d.sup.is_some() || d.hold.is_some() {
                    return Err(invalid("disturbance", "`sup`/`hold` apply to bounded_random only"));
                }
                Ok(Disturbance::Constant(DVector::from_column_slice(v), d.until))
            }
            DisturbanceKind::BoundedRandom => {
                let sup = d
                    .sup
                    .ok_or_else(|| invalid("disturbance.sup", "required for bounded_random"))?;
                if !(sup.is_finite() && sup >= 0.0) {
                    return Err(invalid("disturbance.sup", "must be finite and nonnegative"));
                }
                if d.values.is_some() {
                    return Err(invalid("disturbance.values", "not used by bounded_random"));
                }
                let hold = d.hold.unwrap_or(1.0);
                if !(hold.is_finite() && hold > 0.0) {
                    return Err(invalid("disturbance.hold", "must be positive"));
                }
                let rows = (self.integrator.t_end / hold).ceil() as usize + 1;
                let mut rngs: Vec<_> = (0..n)
                    .map(|i| stream_rng(self.seed, DISTURBANCE_STREAM + i as u64))
                    .collect();
                let table = (0..rows)
                    .map(|_| {
                        DVector::from_fn(n, |i, _| {
                            if sup > 0.0 {
                                rngs[i].random_range(-sup..=sup)
                            } else {
                                0.0
                            }
                        })
                    })
                    .collect();
                Ok(Disturbance::Random {
                    hold,
                    table,
                    until: d.until,
                })
            }
        }
    }

    /// Validates the scenario and realizes its random quantities.
    pub fn build(&self) -> Result<Setup, ConfigError> {
        if self.name.trim().is_empty() {
            return Err(invalid("name", "must not be empty"));
        }
        let graph = self.build_graph()?;
        let n = graph.n();
        let lap = graph.laplacian();

        let order = self.cascade.order;
        if !(1..=crate::dynamics::MAX_ORDER).contains(&order) {
            return Err(invalid("cascade.order", format!("{order} is outside 1..=4")));
        }
        let expected: Vec<String> = (1..=order).map(|k| k.to_string()).collect();
        for key in self.stage.keys() {
            if !expected.contains(key) {
                return Err(invalid(format!("stage.{key}"), format!("cascade has {order} stages")));
            }
        }
        let mut stages = Vec::with_capacity(order);
        for k in 1..=order {
            let spec = self
                .stage
                .get(&k.to_string())
                .ok_or_else(|| invalid(format!("stage.{k}"), "missing stage declaration"))?;
            stages.push(self.build_stage(k, spec, &graph, &lap)?);
        }
        for (k, op) in stages.iter().enumerate() {
            if k + 1 < order && !op.is_inner_admissible() {
                return Err(ConfigError::Inadmissible(format!(
                    "stage {} is {}, which is not invariant to uniform translation and may only be the outermost stage {order}",
                    k + 1,
                    op.kind_name()
                )));
            }
        }

        let controller = self.cascade.controller;
        let (vs, ps) = (self.cascade.velocity_stage, self.cascade.position_stage);
        if controller != ControllerKind::Compositional {
            if order != 2 {
                return Err(invalid(
                    "cascade.controller",
                    format!("{controller} controllers are defined for order 2 only"),
                ));
            }
            if !(1..=2).contains(&vs) || !(1..=2).contains(&ps) || vs == ps {
                return Err(invalid(
                    "cascade.velocity_stage",
                    "velocity and position stages must be 1 and 2 in some order",
                ));
            }
            match controller {
                ControllerKind::NaiveSerial => {
                    if let Some(op) = stages.iter().find(|op| !op.is_inner_admissible()) {
                        return Err(ConfigError::Inadmissible(format!(
                            "naive-serial needs translation-invariant operators, got {}",
                            op.kind_name()
                        )));
                    }
                }
                ControllerKind::Conventional => {
                    let pos = &stages[ps - 1];
                    let vel = &stages[vs - 1];
                    if !pos.is_inner_admissible() {
                        return Err(ConfigError::Inadmissible(format!(
                            "conventional position feedback cannot be {}",
                            pos.kind_name()
                        )));
                    }
                    if matches!(vel, ConsensusOperator::DelayedRelative { .. }) {
                        return Err(ConfigError::Inadmissible(
                            "conventional velocity feedback cannot be delayed_relative".into(),
                        ));
                    }
                }
                ControllerKind::Compositional => unreachable!(),
            }
        }

        let integ = &self.integrator;
        let integrator = IntegratorConfig::new(integ.dt, integ.t_end, integ.record_every);
        let (x0, xdot0, offsets) = self.build_init(&graph)?;
        let disturbance = self.build_disturbance(n)?;

        let m = &self.metrics;
        if !(m.tolerance.is_finite() && m.tolerance > 0.0) {
            return Err(invalid("metrics.tolerance", "must be positive"));
        }
        if !(m.tail_fraction > 0.0 && m.tail_fraction <= 1.0) {
            return Err(invalid("metrics.tail_fraction", "must lie in (0, 1]"));
        }
        if !(m.regime_radius > 0.0 && m.regime_radius <= 1.0) {
            return Err(invalid("metrics.regime_radius", "must lie in (0, 1]"));
        }

        let setup = Setup {
            graph,
            laplacian: lap,
            stages,
            controller,
            velocity_stage: vs,
            position_stage: ps,
            x0,
            xdot0,
            offsets,
            disturbance,
            integrator,
        };
        setup
            .integrator
            .validate(setup.tau_min_positive())
            .map_err(|e| invalid("integrator", e.to_string()))?;
        Ok(setup)
    }

    /// Whether the graph has a directed spanning tree (reported, not required).
    pub fn has_spanning_tree(&self) -> bool {
        self.build_graph()
            .map(|g| spanning_tree_check(&g).has_spanning_tree)
            .unwrap_or(false)
    }
}
