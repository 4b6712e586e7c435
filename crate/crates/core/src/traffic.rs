//! Seeded arrival and service-demand generation.
//!
//! Every `(class, purpose)` pair draws from its own ChaCha stream keyed by
//! `(rng_seed, replication)`. Traces are generated before any policy runs,
//! so all policies compared on one replication see identical traffic.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::config::{ClassKind, ClassRef, EdClassSpec, PuClassSpec, SimConfig, TimeMs};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Phase = 0,
    InterArrival = 1,
    Service = 2,
}

/// Factory for independent per-class random streams of one replication.
#[derive(Debug, Clone, Copy)]
pub struct RngStreamSet {
    key: [u8; 32],
}

impl RngStreamSet {
    pub fn new(rng_seed: u64, replication: u32) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&rng_seed.to_le_bytes());
        key[8..12].copy_from_slice(&replication.to_le_bytes());
        Self { key }
    }

    /// The stream is selected by class identity, not position, so adding a
    /// class leaves the other classes' streams untouched.
    pub fn stream(&self, class: ClassRef, purpose: Purpose) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        let kind = match class.kind {
            ClassKind::Pu => 1u64,
            ClassKind::Ed => 2u64,
        };
        rng.set_stream((kind << 48) | (u64::from(class.id) << 8) | purpose as u64);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub arrival_ms: TimeMs,
    pub service_demand_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassTrace {
    pub class: ClassRef,
    pub jobs: Vec<Job>,
}

/// Arrivals and service demands of every class for one replication, in the
/// flat class order of [`SimConfig::class_refs`].
#[derive(Debug, Clone, PartialEq)]
pub struct Traces {
    pub classes: Vec<ClassTrace>,
}

/// Merged periodic streams: `{phase + k * period : k >= 0} ∩ [0, horizon)`.
pub fn periodic_arrivals(period: TimeMs, phases: &[TimeMs], horizon: TimeMs) -> Vec<TimeMs> {
    let mut out = Vec::new();
    for &phase in phases {
        let mut k = 0u64;
        loop {
            let t = phase + k as f64 * period;
            if t >= horizon {
                break;
            }
            out.push(t);
            k += 1;
        }
    }
    out.sort_by(f64::total_cmp);
    out
}

/// Superposition of `sensor_count` periodic sensors with independent uniform
/// phases in `[0, period)`.
pub fn generate_pu_arrivals(spec: &PuClassSpec, horizon: TimeMs, streams: &RngStreamSet) -> Vec<TimeMs> {
    let mut rng = streams.stream(ClassRef::pu(spec.id), Purpose::Phase);
    let phases: Vec<f64> = (0..spec.sensor_count)
        .map(|_| rng.random_range(0.0..spec.period_ms))
        .collect();
    periodic_arrivals(spec.period_ms, &phases, horizon)
}

/// Homogeneous Poisson arrivals on `[0, horizon)`.
pub fn generate_ed_arrivals(spec: &EdClassSpec, horizon: TimeMs, streams: &RngStreamSet) -> Vec<TimeMs> {
    let mut rng = streams.stream(ClassRef::ed(spec.id), Purpose::InterArrival);
    poisson_arrivals(spec.arrival_rate_per_ms, horizon, &mut rng)
}

pub fn poisson_arrivals<R: Rng + ?Sized>(rate_per_ms: f64, horizon: TimeMs, rng: &mut R) -> Vec<TimeMs> {
    let gap = Exp::new(rate_per_ms).expect("arrival rate must be positive");
    let mut out = Vec::new();
    let mut t = gap.sample(rng);
    while t < horizon {
        out.push(t);
        t += gap.sample(rng);
    }
    out
}

/// One exponential service demand with mean `1 / rate_per_ms`; never zero.
pub fn sample_service_demand<R: Rng + ?Sized>(rate_per_ms: f64, rng: &mut R) -> f64 {
    let dist = Exp::new(rate_per_ms).expect("service rate must be positive");
    loop {
        let x = dist.sample(rng);
        if x > 0.0 {
            return x;
        }
    }
}

fn attach_service(class: ClassRef, arrivals: Vec<TimeMs>, rate: f64, streams: &RngStreamSet) -> ClassTrace {
    let mut rng = streams.stream(class, Purpose::Service);
    let jobs = arrivals
        .into_iter()
        .map(|arrival_ms| Job {
            arrival_ms,
            service_demand_ms: sample_service_demand(rate, &mut rng),
        })
        .collect();
    ClassTrace { class, jobs }
}

/// All traces for one replication of `cfg`.
pub fn generate_traces(cfg: &SimConfig, replication: u32) -> Traces {
    let streams = RngStreamSet::new(cfg.rng_seed, replication);
    let horizon = cfg.sim_horizon_ms;
    let mut classes = Vec::with_capacity(cfg.class_count());
    for pu in &cfg.pu_classes {
        let arrivals = generate_pu_arrivals(pu, horizon, &streams);
        classes.push(attach_service(ClassRef::pu(pu.id), arrivals, pu.service_rate_per_ms, &streams));
    }
    for ed in &cfg.ed_classes {
        let arrivals = generate_ed_arrivals(ed, horizon, &streams);
        classes.push(attach_service(ClassRef::ed(ed.id), arrivals, ed.service_rate_per_ms, &streams));
    }
    Traces { classes }
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceRow {
    class_kind: ClassKind,
    class_id: u32,
    arrival_ms: f64,
    service_demand_ms: f64,
}

impl Traces {
    pub fn total_jobs(&self) -> usize {
        self.classes.iter().map(|c| c.jobs.len()).sum()
    }

    /// CSV `class_kind,class_id,arrival_ms,service_demand_ms`, grouped by
    /// class in flat order. Floats are written in shortest round-trip form.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for c in &self.classes {
            for j in &c.jobs {
                out.serialize(TraceRow {
                    class_kind: c.class.kind,
                    class_id: c.class.id,
                    arrival_ms: j.arrival_ms,
                    service_demand_ms: j.service_demand_ms,
                })?;
            }
        }
        out.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }

    /// Reads a dumped trace back, assigning rows to the classes of `cfg`.
    pub fn read_csv<R: Read>(cfg: &SimConfig, r: R) -> Result<Self> {
        let mut classes: Vec<ClassTrace> = cfg
            .class_refs()
            .into_iter()
            .map(|class| ClassTrace { class, jobs: Vec::new() })
            .collect();
        let mut rdr = csv::Reader::from_reader(r);
        for row in rdr.deserialize() {
            let row: TraceRow = row?;
            let class = ClassRef {
                kind: row.class_kind,
                id: row.class_id,
            };
            let slot = classes
                .iter_mut()
                .find(|c| c.class == class)
                .ok_or_else(|| Error::invalid(format!("trace row for unknown class {class}")))?;
            slot.jobs.push(Job {
                arrival_ms: row.arrival_ms,
                service_demand_ms: row.service_demand_ms,
            });
        }
        for c in &mut classes {
            c.jobs.sort_by(|x, y| x.arrival_ms.total_cmp(&y.arrival_ms));
        }
        Ok(Self { classes })
    }
}
