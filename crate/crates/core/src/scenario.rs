//! Built-in experiment scenarios.
//!
//! The default ("heterogeneous") system has two PU and two ED classes fed by
//! 500 sensors. The other scenarios are variations of it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::{EdClassSpec, PuClassSpec, SimConfig};
use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Heterogeneous,
    Homogeneous,
    /// Heterogeneous system with `δ` of ED1 chosen by grid search.
    OptDelta,
    PenaltyModerate,
    PenaltyExtreme,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::Heterogeneous,
        Scenario::Homogeneous,
        Scenario::OptDelta,
        Scenario::PenaltyModerate,
        Scenario::PenaltyExtreme,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::Heterogeneous => "heterogeneous",
            Scenario::Homogeneous => "homogeneous",
            Scenario::OptDelta => "opt_delta",
            Scenario::PenaltyModerate => "penalty_moderate",
            Scenario::PenaltyExtreme => "penalty_extreme",
        }
    }

    /// Whether the proposed policy's ED thresholds are optimized too.
    pub fn optimizes_delta(&self) -> bool {
        matches!(self, Scenario::OptDelta)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Scenario::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::UnknownScenario(s.to_string()))
    }
}

pub const DEFAULT_SEED: u64 = 20_160_401;
pub const DEFAULT_REPLICATIONS: u32 = 20;
/// `γ1` for the extreme-penalty scenario. Not a published value.
pub const DEFAULT_EXTREME_GAMMA: f64 = 1.5;
pub const SIM_HORIZON_MS: f64 = 40_000.0;
/// Sweep of the ED1 arrival rate, packets per ms.
pub const LAMBDA_ED1_RANGE: (f64, f64) = (0.10, 0.25);

fn pu(id: u32, sensors: u32, period_s: f64, deadline_ms: f64, gamma: f64) -> PuClassSpec {
    let mut spec = PuClassSpec {
        id,
        period_ms: period_s * 1000.0,
        sensor_count: sensors,
        deadline_ms,
        service_rate_per_ms: 1.0,
        gamma,
        beta: 1.0,
        threshold_ms: 0.0,
    };
    let w = crate::optimizer::pu_search_window(&spec);
    spec.threshold_ms = w.midpoint();
    spec
}

fn ed(id: u32, sensors: u32, rate: f64, a: f64, b: f64, delta: Option<f64>) -> EdClassSpec {
    EdClassSpec {
        id,
        arrival_rate_per_ms: rate,
        sensor_count: sensors,
        service_rate_per_ms: 1.0,
        a,
        b,
        beta: 1.0,
        threshold_ms: delta,
        priority_rank: None,
    }
}

/// The configuration of a built-in scenario at one ED1 arrival rate.
pub fn builtin_config(scenario: Scenario, lambda_ed1: f64) -> SimConfig {
    builtin_config_with(scenario, lambda_ed1, DEFAULT_EXTREME_GAMMA)
}

pub fn builtin_config_with(scenario: Scenario, lambda_ed1: f64, extreme_gamma: f64) -> SimConfig {
    let (g1, g2) = match scenario {
        Scenario::PenaltyModerate => (1.2, 1.2),
        Scenario::PenaltyExtreme => (extreme_gamma, 1.2),
        _ => (1.0, 1.0),
    };
    let (pu_classes, ed_classes) = match scenario {
        Scenario::Homogeneous => {
            let mut ed1 = ed(1, 150, lambda_ed1, 0.65, 19.0, Some(19.0 + 4.0 / 0.65));
            let mut ed2 = ed(2, 350, 0.1, 7.0, 20.0, None);
            // By (a desc) ED2 would outrank ED1; pin ED1 on top so that the
            // infinite threshold stays on ED2.
            ed1.priority_rank = Some(1);
            ed2.priority_rank = Some(2);
            (
                vec![pu(1, 300, 0.8, 7.8, g1), pu(2, 200, 0.8, 8.0, g2)],
                vec![ed1, ed2],
            )
        }
        _ => (
            vec![pu(1, 300, 1.8, 4.0, g1), pu(2, 200, 0.5, 8.0, g2)],
            vec![
                ed(1, 150, lambda_ed1, 1.0, 10.0, Some(10.0 + 4.0 / 1.0)),
                ed(2, 350, 0.1, 0.7, 20.0, None),
            ],
        ),
    };
    SimConfig {
        pu_classes,
        ed_classes,
        sim_horizon_ms: SIM_HORIZON_MS,
        rng_seed: DEFAULT_SEED,
        replications: DEFAULT_REPLICATIONS,
        drop_failed_pu: true,
        work_conserving: true,
        static_order: None,
        warmup_ms: 0.0,
    }
}
