//! Scheduling policies: the utility-driven threshold scheduler and the
//! FCFS, EDD and fixed-priority baselines.
//!
//! Policies are pure functions of [`SimState`]. Within a class service is
//! always FCFS, so a policy only ever picks a class; the engine serves that
//! class's oldest packet.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::{ClassKind, ClassRef, SimConfig};
use crate::engine::SimState;
use crate::error::{Error, Result};

/// Verdict at a decision epoch. Classes are positions in the flat class list
/// (PU classes first, then ED classes).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyDecision {
    ServeClass(usize),
    Continue,
    Idle,
}

pub trait SchedulerPolicy: Send + Sync {
    fn name(&self) -> &'static str;
    fn select(&self, state: &SimState) -> PolicyDecision;
}

/// `Continue` when the chosen class is already in service.
fn serve(state: &SimState, class: usize) -> PolicyDecision {
    if state.in_service_class() == Some(class) {
        PolicyDecision::Continue
    } else {
        PolicyDecision::ServeClass(class)
    }
}

fn nothing_to_do(state: &SimState) -> PolicyDecision {
    if state.server.is_some() {
        PolicyDecision::Continue
    } else {
        PolicyDecision::Idle
    }
}

/// Service priority among PU classes and among ED classes, as flat class
/// positions, highest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PriorityOrder {
    pub pu_order: Vec<usize>,
    pub ed_order: Vec<usize>,
}

impl PriorityOrder {
    /// PU: larger `gamma`, then smaller service rate, then smaller id.
    /// ED: configured rank, else larger `a`, then smaller `b`, then id.
    pub fn from_config(cfg: &SimConfig) -> Self {
        let mut pu_order: Vec<usize> = (0..cfg.pu_classes.len()).collect();
        pu_order.sort_by(|&i, &j| {
            let (x, y) = (&cfg.pu_classes[i], &cfg.pu_classes[j]);
            y.gamma
                .total_cmp(&x.gamma)
                .then(x.service_rate_per_ms.total_cmp(&y.service_rate_per_ms))
                .then(x.id.cmp(&y.id))
        });
        let offset = cfg.pu_classes.len();
        let ed_order = cfg.ed_priority_order().into_iter().map(|i| i + offset).collect();
        Self { pu_order, ed_order }
    }
}

/// The multiclass threshold heuristic.
///
/// 1. Some PU class's lead packet has waited past `l_t`: serve the highest
///    priority such PU class.
/// 2. No class is over its threshold: serve the highest priority backlogged
///    ED class. With no ED backlog, serve the highest priority PU class when
///    work conserving, otherwise idle.
/// 3. No PU class but some ED class is over `δ`: serve the highest priority
///    backlogged ED class that is *not* over its threshold. If every
///    backlogged ED class is over, serve the highest priority one.
#[derive(Debug, Clone)]
pub struct ProposedPolicy {
    order: PriorityOrder,
    work_conserving: bool,
}

impl ProposedPolicy {
    pub fn new(cfg: &SimConfig) -> Self {
        Self {
            order: PriorityOrder::from_config(cfg),
            work_conserving: cfg.work_conserving,
        }
    }

    pub fn order(&self) -> &PriorityOrder {
        &self.order
    }
}

impl SchedulerPolicy for ProposedPolicy {
    fn name(&self) -> &'static str {
        "proposed"
    }

    fn select(&self, state: &SimState) -> PolicyDecision {
        let over = |k: usize| state.lead_exceeds_threshold(k);

        if let Some(&k) = self.order.pu_order.iter().find(|&&k| over(k)) {
            return serve(state, k);
        }

        let mut first_ed = None;
        let mut first_ed_under = None;
        let mut any_ed_over = false;
        for &k in &self.order.ed_order {
            if !state.is_present(k) {
                continue;
            }
            first_ed.get_or_insert(k);
            if over(k) {
                any_ed_over = true;
            } else if first_ed_under.is_none() {
                first_ed_under = Some(k);
            }
        }

        match (first_ed, any_ed_over) {
            (Some(top), false) => serve(state, top),
            (Some(top), true) => serve(state, first_ed_under.unwrap_or(top)),
            (None, _) => {
                if self.work_conserving {
                    match self.order.pu_order.iter().find(|&&k| state.is_present(k)) {
                        Some(&k) => serve(state, k),
                        None => nothing_to_do(state),
                    }
                } else {
                    nothing_to_do(state)
                }
            }
        }
    }
}

fn kind_rank(state: &SimState, class: usize) -> (ClassKind, u32) {
    let c = state.classes[class].class;
    (c.kind, c.id)
}

/// Non-preemptive first-come first-served across all classes.
#[derive(Debug, Clone, Default)]
pub struct FcfsPolicy;

impl SchedulerPolicy for FcfsPolicy {
    fn name(&self) -> &'static str {
        "fcfs"
    }

    fn select(&self, state: &SimState) -> PolicyDecision {
        if state.server.is_some() {
            return PolicyDecision::Continue;
        }
        (0..state.classes.len())
            .filter_map(|k| state.classes[k].queue.front().map(|p| (k, p.arrival_ms)))
            .min_by(|(i, ti), (j, tj)| ti.total_cmp(tj).then(kind_rank(state, *i).cmp(&kind_rank(state, *j))))
            .map_or(PolicyDecision::Idle, |(k, _)| PolicyDecision::ServeClass(k))
    }
}

/// Preemptive earliest due date. PU due date is `arrival + l_d`; ED due
/// date is `arrival + b`.
#[derive(Debug, Clone)]
pub struct EddPolicy {
    relative_due: Vec<f64>,
}

impl EddPolicy {
    pub fn new(cfg: &SimConfig) -> Self {
        let relative_due = cfg
            .pu_classes
            .iter()
            .map(|c| c.deadline_ms)
            .chain(cfg.ed_classes.iter().map(|c| c.b))
            .collect();
        Self { relative_due }
    }
}

impl SchedulerPolicy for EddPolicy {
    fn name(&self) -> &'static str {
        "edd"
    }

    fn select(&self, state: &SimState) -> PolicyDecision {
        (0..state.classes.len())
            .filter_map(|k| state.lead(k).map(|p| (k, p.arrival_ms + self.relative_due[k])))
            .min_by(|(i, di), (j, dj)| di.total_cmp(dj).then(kind_rank(state, *i).cmp(&kind_rank(state, *j))))
            .map_or_else(|| nothing_to_do(state), |(k, _)| serve(state, k))
    }
}

/// Preemptive static priority over classes.
#[derive(Debug, Clone)]
pub struct FixedPriorityPolicy {
    order: Vec<usize>,
}

impl FixedPriorityPolicy {
    pub fn new(cfg: &SimConfig, static_order: &[ClassRef]) -> Result<Self> {
        let refs = cfg.class_refs();
        let mut order = Vec::with_capacity(refs.len());
        for c in static_order {
            let k = refs
                .iter()
                .position(|r| r == c)
                .ok_or_else(|| Error::invalid(format!("static order names unknown class {c}")))?;
            if order.contains(&k) {
                return Err(Error::invalid(format!("static order lists {c} twice")));
            }
            order.push(k);
        }
        if order.len() != refs.len() {
            return Err(Error::invalid("static order must cover every class"));
        }
        Ok(Self { order })
    }
}

impl SchedulerPolicy for FixedPriorityPolicy {
    fn name(&self) -> &'static str {
        "fixed_priority"
    }

    fn select(&self, state: &SimState) -> PolicyDecision {
        self.order
            .iter()
            .find(|&&k| state.is_present(k))
            .map_or_else(|| nothing_to_do(state), |&k| serve(state, k))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Proposed,
    Fcfs,
    Edd,
    FixedPriority,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::Proposed,
        PolicyKind::Fcfs,
        PolicyKind::Edd,
        PolicyKind::FixedPriority,
    ];

    pub const BASELINES: [PolicyKind; 3] = [PolicyKind::Fcfs, PolicyKind::Edd, PolicyKind::FixedPriority];

    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyKind::Proposed => "proposed",
            PolicyKind::Fcfs => "fcfs",
            PolicyKind::Edd => "edd",
            PolicyKind::FixedPriority => "fixed_priority",
        }
    }

    pub fn build(&self, cfg: &SimConfig) -> Result<Box<dyn SchedulerPolicy>> {
        Ok(match self {
            PolicyKind::Proposed => Box::new(ProposedPolicy::new(cfg)),
            PolicyKind::Fcfs => Box::new(FcfsPolicy),
            PolicyKind::Edd => Box::new(EddPolicy::new(cfg)),
            PolicyKind::FixedPriority => Box::new(FixedPriorityPolicy::new(cfg, &cfg.effective_static_order())?),
        })
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown policy `{s}` (expected proposed|fcfs|edd|fixed_priority)")))
    }
}
