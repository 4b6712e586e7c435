#![allow(dead_code)]

pub mod oracle;

use m2m_sched::config::{EdClassSpec, PuClassSpec, SimConfig};
use m2m_sched::traffic::{ClassTrace, Job, Traces};
use rand::Rng;

pub fn pu_spec(id: u32, deadline_ms: f64, threshold_ms: f64) -> PuClassSpec {
    PuClassSpec {
        id,
        period_ms: 1000.0,
        sensor_count: 1,
        deadline_ms,
        service_rate_per_ms: 1.0,
        gamma: 1.0,
        beta: 1.0,
        threshold_ms,
    }
}

pub fn ed_spec(id: u32, rate: f64, a: f64, b: f64, threshold_ms: Option<f64>) -> EdClassSpec {
    EdClassSpec {
        id,
        arrival_rate_per_ms: rate,
        sensor_count: 1,
        service_rate_per_ms: 1.0,
        a,
        b,
        beta: 1.0,
        threshold_ms,
        priority_rank: None,
    }
}

pub fn config(pu: Vec<PuClassSpec>, ed: Vec<EdClassSpec>, horizon_ms: f64) -> SimConfig {
    SimConfig {
        pu_classes: pu,
        ed_classes: ed,
        sim_horizon_ms: horizon_ms,
        rng_seed: 1,
        replications: 1,
        drop_failed_pu: true,
        work_conserving: true,
        static_order: None,
        warmup_ms: 0.0,
    }
}

/// Traces from explicit `(arrival, demand)` lists, one per configured class
/// in flat order.
pub fn traces(cfg: &SimConfig, jobs: &[Vec<(f64, f64)>]) -> Traces {
    assert_eq!(jobs.len(), cfg.class_count());
    Traces {
        classes: cfg
            .class_refs()
            .into_iter()
            .zip(jobs)
            .map(|(class, js)| ClassTrace {
                class,
                jobs: js
                    .iter()
                    .map(|&(arrival_ms, service_demand_ms)| Job {
                        arrival_ms,
                        service_demand_ms,
                    })
                    .collect(),
            })
            .collect(),
    }
}

/// A random valid config with 1–3 PU and 1–3 ED classes, loaded to roughly
/// `rho`, used for fuzzing.
pub fn random_config<R: Rng>(rng: &mut R, rho: f64, horizon_ms: f64) -> SimConfig {
    let n_pu = rng.random_range(1..=3usize);
    let n_ed = rng.random_range(1..=3usize);
    let share = rho / (n_pu + n_ed) as f64;
    let pu: Vec<PuClassSpec> = (0..n_pu)
        .map(|i| {
            let mu = [0.5, 1.0, 2.0][rng.random_range(0..3)];
            let deadline = rng.random_range(2.0..10.0);
            let sensors = rng.random_range(10..300u32);
            PuClassSpec {
                id: i as u32 + 1,
                // sensors / period = share * mu
                period_ms: sensors as f64 / (share * mu),
                sensor_count: sensors,
                deadline_ms: deadline,
                service_rate_per_ms: mu,
                gamma: [1.0, 1.2, 1.5][rng.random_range(0..3)],
                beta: 1.0,
                threshold_ms: rng.random_range(0.0..=deadline),
            }
        })
        .collect();
    let ed: Vec<EdClassSpec> = (0..n_ed)
        .map(|i| {
            let mu = [0.5, 1.0, 2.0][rng.random_range(0..3)];
            let b = rng.random_range(2.0..25.0);
            EdClassSpec {
                id: i as u32 + 1,
                arrival_rate_per_ms: share * mu,
                sensor_count: 100,
                service_rate_per_ms: mu,
                a: rng.random_range(0.2..5.0),
                b,
                beta: 1.0,
                threshold_ms: Some(rng.random_range(0.0..2.0 * b)),
                priority_rank: None,
            }
        })
        .collect();
    let mut cfg = config(pu, ed, horizon_ms);
    let lowest = *cfg.ed_priority_order().last().expect("at least one ED class");
    cfg.ed_classes[lowest].threshold_ms = None;
    cfg.drop_failed_pu = rng.random_bool(0.75);
    cfg.work_conserving = rng.random_bool(0.75);
    cfg.rng_seed = rng.random();
    assert!(cfg.validate().is_empty(), "{:?}", cfg.validate());
    cfg
}
