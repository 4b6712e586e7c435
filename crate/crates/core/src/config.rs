//! Domain types and configuration shared by the simulator, the policies and
//! the experiment runner.
//!
//! All times are milliseconds stored as `f64`. Scenario periods quoted in
//! seconds are converted when the scenario is built.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Milliseconds. Finite and non-negative wherever it names an instant.
pub type TimeMs = f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassKind {
    Pu,
    Ed,
}

impl fmt::Display for ClassKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassKind::Pu => f.write_str("PU"),
            ClassKind::Ed => f.write_str("ED"),
        }
    }
}

/// A class named by kind and its configured id, e.g. `PU1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClassRef {
    pub kind: ClassKind,
    pub id: u32,
}

impl ClassRef {
    pub fn pu(id: u32) -> Self {
        Self { kind: ClassKind::Pu, id }
    }

    pub fn ed(id: u32) -> Self {
        Self { kind: ClassKind::Ed, id }
    }
}

impl fmt::Display for ClassRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.kind, self.id)
    }
}

/// Periodic-update traffic class: `sensor_count` sensors, each reporting once
/// per `period_ms`, with a firm deadline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PuClassSpec {
    pub id: u32,
    pub period_ms: TimeMs,
    pub sensor_count: u32,
    pub deadline_ms: TimeMs,
    pub service_rate_per_ms: f64,
    pub gamma: f64,
    pub beta: f64,
    /// Head-of-line delay after which this class preempts ED service.
    pub threshold_ms: TimeMs,
}

impl PuClassSpec {
    pub fn arrival_rate_per_ms(&self) -> f64 {
        f64::from(self.sensor_count) / self.period_ms
    }
}

/// Event-driven traffic class with aggregate Poisson arrivals and a sigmoid
/// latency utility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdClassSpec {
    pub id: u32,
    pub arrival_rate_per_ms: f64,
    /// Reporting only; arrivals come from the aggregate rate.
    pub sensor_count: u32,
    pub service_rate_per_ms: f64,
    /// Sigmoid roll-off, per ms.
    pub a: f64,
    /// Soft deadline, ms.
    pub b: TimeMs,
    pub beta: f64,
    /// Delay after which this class yields to lower-priority ED backlog.
    /// `None` (JSON `null`) means infinity.
    #[serde(default)]
    pub threshold_ms: Option<TimeMs>,
    /// Explicit rank (1 = most delay sensitive). When absent the rank is
    /// derived from `(a desc, b asc, id asc)`.
    #[serde(default)]
    pub priority_rank: Option<u32>,
}

impl EdClassSpec {
    pub fn threshold(&self) -> TimeMs {
        self.threshold_ms.unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub pu_classes: Vec<PuClassSpec>,
    pub ed_classes: Vec<EdClassSpec>,
    pub sim_horizon_ms: TimeMs,
    pub rng_seed: u64,
    pub replications: u32,
    pub drop_failed_pu: bool,
    pub work_conserving: bool,
    /// Class order for the fixed-priority baseline. Defaults to all PU
    /// classes then all ED classes, each in configured order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub static_order: Option<Vec<ClassRef>>,
    /// Packets arriving before this instant are excluded from statistics.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub warmup_ms: TimeMs,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

/// One failed invariant, located by a dotted path into the config.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn class_count(&self) -> usize {
        self.pu_classes.len() + self.ed_classes.len()
    }

    /// Flat class list: PU classes in configured order, then ED classes.
    /// Engine and policies index classes by position in this list.
    pub fn class_refs(&self) -> Vec<ClassRef> {
        self.pu_classes
            .iter()
            .map(|c| ClassRef::pu(c.id))
            .chain(self.ed_classes.iter().map(|c| ClassRef::ed(c.id)))
            .collect()
    }

    /// Offered load: sum over classes of arrival rate over service rate.
    pub fn offered_load(&self) -> f64 {
        let pu: f64 = self
            .pu_classes
            .iter()
            .map(|c| c.arrival_rate_per_ms() / c.service_rate_per_ms)
            .sum();
        let ed: f64 = self
            .ed_classes
            .iter()
            .map(|c| c.arrival_rate_per_ms / c.service_rate_per_ms)
            .sum();
        pu + ed
    }

    /// Positions into `ed_classes`, most delay-sensitive first.
    pub fn ed_priority_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.ed_classes.len()).collect();
        idx.sort_by(|&i, &j| {
            let (x, y) = (&self.ed_classes[i], &self.ed_classes[j]);
            x.priority_rank
                .unwrap_or(u32::MAX)
                .cmp(&y.priority_rank.unwrap_or(u32::MAX))
                .then(y.a.total_cmp(&x.a))
                .then(x.b.total_cmp(&y.b))
                .then(x.id.cmp(&y.id))
        });
        idx
    }

    /// Effective fixed-priority order (configured or default).
    pub fn effective_static_order(&self) -> Vec<ClassRef> {
        self.static_order.clone().unwrap_or_else(|| self.class_refs())
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate_config(self)
    }

    /// Fails with every violation joined when the config is invalid.
    pub fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }
}

struct Checker {
    out: Vec<Violation>,
}

impl Checker {
    fn check(&mut self, ok: bool, path: impl Into<String>, message: impl Into<String>) {
        if !ok {
            self.out.push(Violation {
                path: path.into(),
                message: message.into(),
            });
        }
    }
}

fn positive_finite(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

fn non_negative_finite(x: f64) -> bool {
    x.is_finite() && x >= 0.0
}

/// Collects every invariant violation; an empty list means the config is
/// usable. Never panics on structurally well-formed input.
pub fn validate_config(cfg: &SimConfig) -> Vec<Violation> {
    let mut c = Checker { out: Vec::new() };

    c.check(cfg.class_count() > 0, "", "at least one traffic class is required");
    c.check(
        positive_finite(cfg.sim_horizon_ms),
        "sim_horizon_ms",
        "must be finite and > 0",
    );
    c.check(cfg.replications >= 1, "replications", "must be >= 1");
    c.check(
        non_negative_finite(cfg.warmup_ms)
            && (cfg.warmup_ms < cfg.sim_horizon_ms || cfg.warmup_ms == 0.0),
        "warmup_ms",
        "must be finite, >= 0 and below sim_horizon_ms",
    );

    let mut seen = HashSet::new();
    for (i, pu) in cfg.pu_classes.iter().enumerate() {
        let p = |field: &str| format!("pu_classes[{i}].{field}");
        c.check(seen.insert(ClassRef::pu(pu.id)), p("id"), format!("duplicate PU id {}", pu.id));
        c.check(positive_finite(pu.period_ms), p("period_ms"), "must be finite and > 0");
        c.check(pu.sensor_count >= 1, p("sensor_count"), "must be >= 1");
        c.check(positive_finite(pu.deadline_ms), p("deadline_ms"), "must be finite and > 0");
        c.check(
            positive_finite(pu.service_rate_per_ms),
            p("service_rate_per_ms"),
            "must be finite and > 0",
        );
        c.check(pu.gamma.is_finite() && pu.gamma >= 1.0, p("gamma"), "gamma < 1");
        c.check(positive_finite(pu.beta), p("beta"), "must be finite and > 0");
        c.check(
            non_negative_finite(pu.threshold_ms) && pu.threshold_ms <= pu.deadline_ms,
            p("threshold_ms"),
            "must lie in [0, deadline_ms]",
        );
    }

    for (i, ed) in cfg.ed_classes.iter().enumerate() {
        let p = |field: &str| format!("ed_classes[{i}].{field}");
        c.check(seen.insert(ClassRef::ed(ed.id)), p("id"), format!("duplicate ED id {}", ed.id));
        c.check(
            positive_finite(ed.arrival_rate_per_ms),
            p("arrival_rate_per_ms"),
            "must be finite and > 0",
        );
        c.check(ed.sensor_count >= 1, p("sensor_count"), "must be >= 1");
        c.check(
            positive_finite(ed.service_rate_per_ms),
            p("service_rate_per_ms"),
            "must be finite and > 0",
        );
        c.check(positive_finite(ed.a), p("a"), "must be finite and > 0");
        c.check(non_negative_finite(ed.b), p("b"), "must be finite and >= 0");
        c.check(positive_finite(ed.beta), p("beta"), "must be finite and > 0");
        if let Some(t) = ed.threshold_ms {
            c.check(t >= 0.0 && !t.is_nan(), p("threshold_ms"), "must be >= 0 or null");
        }
    }

    if let Some(&lowest) = cfg.ed_priority_order().last() {
        let ed = &cfg.ed_classes[lowest];
        c.check(
            ed.threshold().is_infinite(),
            format!("ed_classes[{lowest}].threshold_ms"),
            "least-priority ED class must have an infinite threshold (null)",
        );
    }

    if let Some(order) = &cfg.static_order {
        let all: HashSet<ClassRef> = cfg.class_refs().into_iter().collect();
        let given: HashSet<ClassRef> = order.iter().copied().collect();
        c.check(
            given.len() == order.len(),
            "static_order",
            "contains duplicate classes",
        );
        c.check(
            given == all,
            "static_order",
            "must list every configured class exactly once",
        );
    }

    c.out
}
