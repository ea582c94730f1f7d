//! Built-in scenarios.
//!
//! | name                 | setup                                                        |
//! |----------------------|--------------------------------------------------------------|
//! | `serial_lti`         | path(10), order 2, linear stages, seeded x, ẋ in [-1, 1]     |
//! | `timevarying_fig1`   | path(20) platoon, sinusoidally gated weights on both stages  |
//! | `saturated_fig2`     | path(20) platoon, saturated stages                           |
//! | `gps_fig3`           | path(20) platoon, Poisson-delayed absolute velocity feedback |
//! | `counterexample_appD`| two agents, delayed relative feedback with a ramp delay      |
//!
//! The platoon presets start with the leader at 10 m/s and the followers at
//! rest. Frequencies, phases, horizons and step sizes are toolkit defaults.

use std::collections::BTreeMap;

use rand::Rng;

use crate::cli::scenario::{
    CascadeSection, ConfigError, ControllerKind, DisturbanceKind, DisturbanceSection, GraphSection,
    InitSection, IntegratorSection, MetricsSection, Scenario, StageKind, StageSection,
};
use crate::sim::delay::{stream_rng, DelaySpec};

/// RNG stream for preset parameters (gate frequencies and phases).
pub const PRESET_STREAM: u64 = 3 << 32;

pub const PRESET_NAMES: [&str; 5] = [
    "serial_lti",
    "timevarying_fig1",
    "saturated_fig2",
    "gps_fig3",
    "counterexample_appD",
];

pub const DEFAULT_SEED: u64 = 1;

fn stages(list: Vec<StageSection>) -> BTreeMap<String, StageSection> {
    list.into_iter()
        .enumerate()
        .map(|(k, s)| ((k + 1).to_string(), s))
        .collect()
}

fn path(n: usize) -> GraphSection {
    GraphSection {
        n,
        kind: Some("path".into()),
        edges: None,
    }
}

fn cascade(order: usize) -> CascadeSection {
    CascadeSection {
        order,
        controller: ControllerKind::Compositional,
        velocity_stage: 1,
        position_stage: 2,
    }
}

fn integrator(dt: f64, t_end: f64, record_every: usize) -> IntegratorSection {
    IntegratorSection {
        dt,
        t_end,
        record_every,
    }
}

fn platoon_init(n: usize, spacing_error: f64, seed: u64) -> InitSection {
    let mut rng = stream_rng(seed, PRESET_STREAM + 1);
    let x = (0..n)
        .map(|_| rng.random_range(-spacing_error..=spacing_error))
        .collect();
    InitSection {
        preset: Some("standstill_leader_v10".into()),
        x: Some(x),
        ..Default::default()
    }
}

pub fn preset(name: &str, seed: u64) -> Result<Scenario, ConfigError> {
    let sc = match name {
        "serial_lti" => Scenario {
            name: name.into(),
            seed,
            graph: path(10),
            cascade: cascade(2),
            stage: stages(vec![
                StageSection::of_kind(StageKind::Linear),
                StageSection::of_kind(StageKind::Linear),
            ]),
            init: InitSection {
                x_range: Some(1.0),
                xdot_range: Some(1.0),
                ..Default::default()
            },
            disturbance: DisturbanceSection::default(),
            integrator: integrator(1e-3, 60.0, 10),
            metrics: MetricsSection::default(),
        },
        "timevarying_fig1" => {
            let n = 20;
            let mut rng = stream_rng(seed, PRESET_STREAM);
            let omega: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..=1.5)).collect();
            let phi: Vec<f64> = (0..n)
                .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
                .collect();
            let stage = StageSection {
                omega: Some(omega),
                phi: Some(phi),
                ..StageSection::of_kind(StageKind::TimeVarying)
            };
            Scenario {
                name: name.into(),
                seed,
                graph: path(n),
                cascade: cascade(2),
                stage: stages(vec![stage.clone(), stage]),
                init: platoon_init(n, 1.0, seed),
                disturbance: DisturbanceSection::default(),
                integrator: integrator(1e-2, 300.0, 10),
                metrics: MetricsSection {
                    tolerance: 1e-3,
                    ..Default::default()
                },
            }
        }
        "saturated_fig2" => {
            let n = 20;
            Scenario {
                name: name.into(),
                seed,
                graph: path(n),
                cascade: cascade(2),
                stage: stages(vec![
                    StageSection::of_kind(StageKind::Saturated),
                    StageSection::of_kind(StageKind::Saturated),
                ]),
                init: platoon_init(n, 1.0, seed),
                disturbance: DisturbanceSection::default(),
                integrator: integrator(1e-2, 300.0, 10),
                metrics: MetricsSection {
                    tolerance: 1e-3,
                    ..Default::default()
                },
            }
        }
        "gps_fig3" => {
            let n = 20;
            let gps = StageSection {
                gains: Some(vec![1.0; n]),
                reference: Some(10.0),
                delay_process: Some(DelaySpec::PoissonSampled { mean: 1.0, seed }),
                ..StageSection::of_kind(StageKind::DelayedAbsoluteVelocity)
            };
            Scenario {
                name: name.into(),
                seed,
                graph: path(n),
                cascade: CascadeSection {
                    velocity_stage: 2,
                    position_stage: 1,
                    ..cascade(2)
                },
                stage: stages(vec![StageSection::of_kind(StageKind::Linear), gps]),
                init: platoon_init(n, 1.0, seed),
                disturbance: DisturbanceSection::default(),
                integrator: integrator(1e-2, 100.0, 10),
                metrics: MetricsSection {
                    tolerance: 1e-3,
                    ..Default::default()
                },
            }
        }
        "counterexample_appD" => Scenario {
            name: name.into(),
            seed,
            graph: path(2),
            cascade: cascade(1),
            stage: stages(vec![StageSection {
                delay_process: Some(DelaySpec::Ramp { cap: 5.0 }),
                ..StageSection::of_kind(StageKind::DelayedRelative)
            }]),
            init: InitSection {
                x: Some(vec![0.0, 0.0]),
                ..Default::default()
            },
            disturbance: DisturbanceSection {
                kind: DisturbanceKind::Constant,
                values: Some(vec![1.0, 1.0]),
                ..Default::default()
            },
            integrator: integrator(1e-3, 5.0, 1),
            metrics: MetricsSection::default(),
        },
        other => return Err(ConfigError::UnknownPreset(other.into())),
    };
    sc.validate()?;
    Ok(sc)
}
