//! Bounded, piecewise continuous delay functions and their seeded realizations.
//!
//! Arrival processes use ChaCha8 seeded from `seed`, with the per-agent stream
//! selected by `set_stream(agent)`. Inter-arrival times are drawn by inverse
//! CDF, `-mean * ln(1 - u)` with `u` uniform on `[0, 1)`.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Seeded generator for stream `stream` of `seed`. Streams are independent, so
/// adding agents never perturbs the draws of earlier ones.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Most recent sample times of a Poisson process on `[0, t_end]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalRealization {
    arrivals: Vec<f64>,
    tau_max: f64,
}

impl ArrivalRealization {
    pub fn from_arrivals(mut arrivals: Vec<f64>) -> Self {
        arrivals.sort_by(f64::total_cmp);
        let mut prev = 0.0;
        let mut tau_max: f64 = 0.0;
        for &a in &arrivals {
            tau_max = tau_max.max(a - prev);
            prev = a;
        }
        Self { arrivals, tau_max }
    }

    pub fn arrivals(&self) -> &[f64] {
        &self.arrivals
    }

    /// Time since the latest arrival at or before `t`; `t` itself before the first one.
    pub fn tau(&self, t: f64) -> f64 {
        let idx = self.arrivals.partition_point(|&a| a <= t);
        let tau = if idx == 0 { t } else { t - self.arrivals[idx - 1] };
        tau.clamp(0.0, self.tau_max)
    }

    pub fn tau_max(&self) -> f64 {
        self.tau_max
    }
}

/// Draws exponential inter-arrivals with the given mean until the horizon is
/// passed; the last arrival lies beyond `t_end` so every gap is bounded.
pub fn sample_poisson_delays(mean: f64, seed: u64, stream: u64, t_end: f64) -> ArrivalRealization {
    assert!(mean > 0.0, "mean inter-arrival must be positive");
    let mut rng = stream_rng(seed, stream);
    let mut t = 0.0;
    let mut arrivals = Vec::new();
    loop {
        let u: f64 = rng.random();
        t += -mean * (1.0 - u).ln();
        arrivals.push(t);
        if t > t_end {
            break;
        }
    }
    ArrivalRealization::from_arrivals(arrivals)
}

/// A realized delay `τ(t) ∈ [0, τ_max]`.
#[derive(Debug, Clone, PartialEq)]
pub enum DelayProcess {
    Constant(f64),
    /// `τ(t) = min(t, cap)`.
    Ramp { cap: f64 },
    Sampled(ArrivalRealization),
}

impl DelayProcess {
    pub fn tau(&self, t: f64) -> f64 {
        match self {
            DelayProcess::Constant(c) => *c,
            DelayProcess::Ramp { cap } => t.clamp(0.0, *cap),
            DelayProcess::Sampled(r) => r.tau(t),
        }
    }

    pub fn tau_max(&self) -> f64 {
        match self {
            DelayProcess::Constant(c) => *c,
            DelayProcess::Ramp { cap } => *cap,
            DelayProcess::Sampled(r) => r.tau_max(),
        }
    }

    /// Smallest positive delay the process can take, if bounded away from zero.
    pub fn tau_min_positive(&self) -> Option<f64> {
        match self {
            DelayProcess::Constant(c) if *c > 0.0 => Some(*c),
            _ => None,
        }
    }
}

/// Declarative delay description, realized once the horizon and agent are known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DelaySpec {
    Constant { value: f64 },
    Ramp { cap: f64 },
    PoissonSampled { mean: f64, seed: u64 },
}

impl DelaySpec {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            DelaySpec::Constant { value } if !(value.is_finite() && *value >= 0.0) => {
                Err(format!("constant delay {value} must be finite and nonnegative"))
            }
            DelaySpec::Ramp { cap } if !(cap.is_finite() && *cap > 0.0) => {
                Err(format!("ramp cap {cap} must be finite and positive"))
            }
            DelaySpec::PoissonSampled { mean, .. } if !(mean.is_finite() && *mean > 0.0) => {
                Err(format!("poisson mean {mean} must be finite and positive"))
            }
            _ => Ok(()),
        }
    }

    pub fn realize(&self, agent: usize, t_end: f64) -> DelayProcess {
        match self {
            DelaySpec::Constant { value } => DelayProcess::Constant(*value),
            DelaySpec::Ramp { cap } => DelayProcess::Ramp { cap: *cap },
            DelaySpec::PoissonSampled { mean, seed } => {
                DelayProcess::Sampled(sample_poisson_delays(*mean, *seed, agent as u64, t_end))
            }
        }
    }
}
